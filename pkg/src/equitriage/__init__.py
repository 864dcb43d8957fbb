"""Equity-aware reinforcement learning for complaint triage."""
