import sys

from ratein.cli import main

sys.exit(main())
