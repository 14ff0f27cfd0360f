"""Module runner: ``python -m loopmech`` behaves like the console script."""

import sys

from .cli import main

sys.exit(main())
