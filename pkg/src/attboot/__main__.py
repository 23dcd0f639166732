import sys

from attboot.cli import main

sys.exit(main())
