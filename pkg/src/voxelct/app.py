from __future__ import annotations

import logging
from typing import Optional, Sequence

import numba

from .cli import dispatch, parse_args
from .config_store import load_config
from .errors import ExitCode, VoxelCTError

logger = logging.getLogger("voxelct")

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(format=LOG_FORMAT)
    logging.getLogger().setLevel(level)
    # numba's compiler logs are noise at DEBUG.
    logging.getLogger("numba").setLevel(logging.WARNING)


def configure_threads(requested: Optional[int]) -> int:
    """Apply a worker count; 0 or None keeps every core numba sees."""
    if requested is None or requested <= 0:
        threads = numba.config.NUMBA_NUM_THREADS
    else:
        threads = min(int(requested), numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(threads)
    return threads


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    config = load_config()
    threads = configure_threads(args.threads if args.threads is not None else config.get("threads", 0))
    logger.debug("running %s with %d threads", args.command, threads)

    try:
        return dispatch(args, config)
    except VoxelCTError as exc:
        logger.error("%s", exc)
        return int(exc.exit_code)
    except FileNotFoundError as exc:
        logger.error("%s", exc)
        return int(ExitCode.DATA)
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return int(ExitCode.DATA)
