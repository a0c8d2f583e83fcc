#!/usr/bin/env python3
"""
Convenience script to run mupsim without installation.
Usage: python run_mupsim.py <command> [options]
"""

import sys
import os

# Add src directory to path so we can import without installing
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from mupsim.cli import main

if __name__ == '__main__':
    sys.exit(main())
