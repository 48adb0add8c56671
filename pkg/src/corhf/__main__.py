import sys

from corhf.cli import main

sys.exit(main())
