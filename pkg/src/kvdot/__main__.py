import sys

from kvdot.cli import main

sys.exit(main())
