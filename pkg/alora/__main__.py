import sys

from alora.cli import main

sys.exit(main())
