import sys

from slicesim.cli import main

sys.exit(main())
