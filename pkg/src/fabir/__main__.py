"""``python -m fabir`` runs the command-line interface."""

import sys

from fabir.cli import main

sys.exit(main())
