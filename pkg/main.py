#!/usr/bin/env python3
"""Launcher for the powergame command-line interface."""
import sys

from powergame.cli import main

if __name__ == "__main__":
    sys.exit(main())
