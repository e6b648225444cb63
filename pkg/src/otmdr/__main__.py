import sys

from otmdr.cli import main

sys.exit(main())
