"""This module is the main entry point for the frequnet command line."""
import sys

from frequnet.cli import run

if __name__ == '__main__':
    sys.exit(run(sys.argv[1:]))
