import sys

from latentconf.cli import main

sys.exit(main())
