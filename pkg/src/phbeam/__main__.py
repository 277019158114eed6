import sys

from phbeam.cli import main

sys.exit(main())
