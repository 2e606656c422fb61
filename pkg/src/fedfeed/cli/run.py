"""
CLI to run one experiment from a config file
"""
import logging
from pathlib import Path
from typing import Optional

import fire

from fedfeed.cli import load_cfg
from fedfeed.common.cli import RunCliArgs
from fedfeed.experiment import Report, run_experiment

LOG = logging.getLogger("fedfeed.cli.run")


def do_run(cfg) -> Report:
    report = run_experiment(cfg, cfg.output_dir)
    if cfg.output_dir:
        LOG.info(f"artifacts written to {Path(cfg.output_dir).resolve()}")
    print(report.summary_line())
    return report


def do_cli(
    config: Optional[Path] = None,
    override=None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    output_dir: Optional[str] = None,
    **kwargs,
):
    cli_args = RunCliArgs(seed=seed, workers=workers, output_dir=output_dir)
    parsed_cfg = load_cfg(config, override=override, cli_args=cli_args, **kwargs)
    do_run(parsed_cfg)


if __name__ == "__main__":
    fire.Fire(do_cli)
