import sys

from bbmlab.cli import main

sys.exit(main())
