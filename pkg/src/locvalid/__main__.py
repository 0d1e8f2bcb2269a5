import sys

from locvalid.cli import main

sys.exit(main())
