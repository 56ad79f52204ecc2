#!/usr/bin/env python3
"""
Unscented chance-constrained UAV coverage planner
=================================================

Main entry point for the planner.

Usage:
    python main.py <command> [arguments]

For help:
    python main.py help
"""

import sys
from cli import CLIHandler


def main():
    """
    Main entry point for the planner.

    Delegates to CLI handler for command processing.
    """
    if len(sys.argv) < 2:
        print("Unscented chance-constrained UAV coverage planner")
        print("Usage: python main.py <command> [arguments]")
        print("Try: python main.py help")
        sys.exit(0)

    cli = CLIHandler()
    sys.exit(cli.run(sys.argv[1:]))


if __name__ == '__main__':
    main()
