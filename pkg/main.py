#!/usr/bin/env python3
"""
Ruin toolkit - command-line entry point
"""
import sys
import logging
import argparse
from typing import List, Optional

from config import CONFIG
from file_manager import FileManager
from handlers import CommandHandlers, build_handlers

logging.basicConfig(
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    level=getattr(logging, str(CONFIG["log_level"]).upper(), logging.INFO),
    handlers=[
        logging.StreamHandler()
    ]
)
logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Ruin probability with two-sided rational jumps and risky investment'
    )
    subparsers = parser.add_subparsers(dest='command')
    CommandHandlers.register_handlers(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = build_handlers(args)
    if handlers is None:
        parser.print_help()
        scenarios = FileManager.list_scenarios()
        if scenarios:
            logger.info(f"📁 Available scenarios: {', '.join(scenarios)}")
        else:
            logger.warning("⚠️ No scenarios found in the scenario directory")
        return 1

    try:
        logger.info(f"🔄 Running '{args.command}'")
        return handlers.dispatch()
    except Exception as e:
        logger.error(f"❌ '{args.command}' failed: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
