"""Allow ``python -m sdnmesh``."""
import sys

from .cli import main

sys.exit(main())
