import sys

from rangewalk.cli import main

sys.exit(main())
