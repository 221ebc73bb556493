#!/usr/bin/env python3
"""
Ad hominem dynamics toolkit entry point
Usage: python run.py [--out DIR] <command> [options]
"""

import os
import sys
import logging
from pathlib import Path

# make the flat module layout importable from anywhere
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))


def setup_logging(level=None, log_file=None):
    """Configure the root logger once: diagnostics on stderr, stdout stays free for reports"""
    level = level or os.environ.get("ADHOM_LOG_LEVEL", "INFO")
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers
    )


def main(argv=None):
    setup_logging()
    from app import cli
    return cli.main(args=argv, prog_name="adhominem")


if __name__ == '__main__':
    main()
