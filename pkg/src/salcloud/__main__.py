import sys

from salcloud.cli import main

sys.exit(main())
