import sys

from rover.runner import main

sys.exit(main())
