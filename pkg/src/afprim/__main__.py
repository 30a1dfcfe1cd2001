"""Allow `python3 -m afprim`."""

import sys

from .cli import main

sys.exit(main())
