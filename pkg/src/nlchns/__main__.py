import sys

from nlchns.cli import main

sys.exit(main())
