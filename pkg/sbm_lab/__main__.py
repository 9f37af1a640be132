"""
sbm-lab entry point.
"""
import sys
from sbm_lab.core.runner import main

if __name__ == "__main__":
    sys.exit(main())
