"""Entry point for ``python -m invlab``."""

import sys

from .cli import main

sys.exit(main())
