import sys

from nlipol.cli import main

sys.exit(main())
