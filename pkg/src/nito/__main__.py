import sys

from nito.cli import main

sys.exit(main())
