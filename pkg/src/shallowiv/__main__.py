import sys

from shallowiv.cli import main

sys.exit(main())
