import sys

from gncformer.cli import main

sys.exit(main())
