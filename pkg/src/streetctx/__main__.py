import sys

from streetctx.cli import main

sys.exit(main())
