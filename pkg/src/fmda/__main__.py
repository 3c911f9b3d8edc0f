import sys

from fmda.cli import main

sys.exit(main())
