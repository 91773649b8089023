import sys

from passpilot.cli import main

sys.exit(main())
