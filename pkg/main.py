import logging
import sys
from typing import List, Optional

import click

from app.api.routes import bench, fit, loop, mask, plan, render, score
from app.core.config import settings
from app.core.exceptions import CotDiffError

logger = logging.getLogger(__name__)

EXIT_USAGE = 64
EXIT_IO = 2


def setup_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """Log to stderr (stdout carries command results), plus an optional file."""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    log_file = log_file or settings.LOG_FILE
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
        force=True,
    )


cli = click.Group(
    name="cotdiff",
    help="Scene planning, depth and mask conditions, box fitting, refinement loop and spatial scoring.",
)

# Include routers
for router in (plan.router, render.router, mask.router, fit.router, loop.router, score.router, bench.router):
    cli.add_command(router)


def run_cli(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand and return its exit code: 0 on success, 1 on validation
    errors, 2 on I/O or planner/denoiser failures, 64 on usage errors.
    """
    setup_logging()
    try:
        result = cli.main(args=argv, prog_name="cotdiff", standalone_mode=False)
    except click.UsageError as e:
        click.echo(f"Error: {e.format_message()}", err=True)
        if e.ctx is not None:
            click.echo(e.ctx.get_help(), err=True)
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo("Aborted!", err=True)
        return 1
    except CotDiffError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO
    except ValueError as e:
        logger.error(f"Invalid input: {e}")
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(run_cli())
