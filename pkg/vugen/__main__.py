import sys

from vugen.cli import main

sys.exit(main())
