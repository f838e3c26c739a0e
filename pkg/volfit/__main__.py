import sys

from volfit.main import main

sys.exit(main())
