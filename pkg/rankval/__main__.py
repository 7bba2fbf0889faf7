"""Allow ``python -m rankval``."""

import sys

from rankval.cli import main

sys.exit(main())
