import sys

from mbdqn.harness.cli import main

sys.exit(main())
