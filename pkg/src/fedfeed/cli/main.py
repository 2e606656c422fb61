"""
fedfeed entry point: gen-data, run, sweep and estimate-noise subcommands.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""
import logging
import sys
from typing import List, Optional

import fire
from fire.core import FireExit

from fedfeed.cli import estimate_noise, gen_data, run, sweep
from fedfeed.datasets import DatasetParseError, PartitionError, SplitError
from fedfeed.utils.config import ConfigError

LOG = logging.getLogger("fedfeed.cli.main")

COMMANDS = {
    "gen-data": gen_data.do_cli,
    "run": run.do_cli,
    "sweep": sweep.do_cli,
    "estimate-noise": estimate_noise.do_cli,
}


def merge_overrides(argv: List[str]) -> List[str]:
    """
    Fold every `--override key=value` (or `--override=key=value`) into one
    comma separated `--override`; fire would otherwise keep only the last one.
    """
    values, rest = [], []
    idx = 0
    while idx < len(argv):
        arg = argv[idx]
        if arg == "--override" and idx + 1 < len(argv):
            values.append(argv[idx + 1])
            idx += 2
            continue
        if arg.startswith("--override="):
            values.append(arg.split("=", 1)[1])
        else:
            rest.append(arg)
        idx += 1
    if not values:
        return rest
    return rest[:1] + ["--override", ",".join(values)] + rest[1:]


def main(argv: Optional[List[str]] = None) -> int:
    argv = merge_overrides(sys.argv[1:] if argv is None else list(argv))
    try:
        fire.Fire(COMMANDS, command=argv, name="fedfeed")
    except FireExit as err:
        return err.code if isinstance(err.code, int) else 2
    except ConfigError as err:
        key = f" (key `{err.key}`)" if err.key else ""
        LOG.error(f"configuration error{key}: {err}")
        return 2
    except DatasetParseError as err:
        LOG.error(f"could not parse input: {err}")
        return 2
    except (SplitError, PartitionError) as err:
        LOG.error(f"configuration error: {err}")
        return 2
    except Exception:  # pylint: disable=broad-except
        LOG.exception("run failed")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
