import sys

from vrident.cli import main

sys.exit(main())
