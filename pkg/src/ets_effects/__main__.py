import sys

from ets_effects.cli import main

sys.exit(main())
