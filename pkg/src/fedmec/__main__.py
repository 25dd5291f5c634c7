import sys

from fedmec.harness.cli import main

sys.exit(main())
