import sys

from equitriage.cli import main

sys.exit(main())
