import sys

from quasitrace.cli import main

sys.exit(main())
