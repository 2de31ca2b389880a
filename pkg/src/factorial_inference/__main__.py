import sys

from factorial_inference.cli import main

sys.exit(main())
