import sys

from charvoc.cli import main

sys.exit(main())
