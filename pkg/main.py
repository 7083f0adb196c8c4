#!/usr/bin/env python3
"""
Main application entry point for NLS Decay Lab.

Equivalent to the installed ``nls-decay-lab`` command.
"""

import sys

from nls_decay_lab.cli import main


if __name__ == "__main__":
    sys.exit(main())
