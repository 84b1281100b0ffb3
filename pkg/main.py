import logging
import sys
from typing import List, Optional

from pydantic import ValidationError
from pydantic_settings import CliApp, SettingsError

from app.models import SpectralSettings
from app.registry import ACCEPTANCE_SUITES

# Logging setup
logging.basicConfig(
    level=SpectralSettings().log_level,
    format="%(asctime)s [%(levelname)s] %(message)s",
)
logger = logging.getLogger(__name__)

COMMANDS = ",".join(suite_cls.command for suite_cls in ACCEPTANCE_SUITES)
USAGE = f"usage: main.py {{{COMMANDS}}} [flags]"


def main(argv: Optional[List[str]] = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    if not args:
        logger.error(f"No subcommand given; {USAGE}")
        return 2

    command, rest = args[0], args[1:]
    for suite_cls in ACCEPTANCE_SUITES:
        logger.debug(f"Checking suite: {suite_cls.__name__}")
        if suite_cls.can_handle(command):
            logger.info(f"Using suite: {suite_cls.__name__}")
            try:
                suite = CliApp.run(suite_cls, cli_args=rest)
            except (ValidationError, SettingsError) as e:
                logger.error(f"Invalid arguments for {command}: {e}", exc_info=True)
                return 2
            return suite.exit_code

    logger.error(f"Unknown subcommand {command!r}; {USAGE}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
