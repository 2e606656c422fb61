"""
CLI to sweep an experiment over noise levels, user behaviors or training modes
"""
import logging
import sys
from pathlib import Path
from typing import Optional

import fire
import pandas as pd

from fedfeed.cli import load_cfg, parse_grid
from fedfeed.common.cli import ALL_BEHAVIORS, ALL_MODES, RunCliArgs, SweepCliArgs
from fedfeed.common.const import RESOLVED_CONFIG_FILE, SWEEP_FILE_TEMPLATE
from fedfeed.experiment import sweep_behaviors, sweep_modes, sweep_noise, write_json
from fedfeed.utils.data import ensure_parent
from fedfeed.utils.dict import DictDefault

LOG = logging.getLogger("fedfeed.cli.sweep")


def sweep_table(cfg: DictDefault, sweep_args: SweepCliArgs) -> pd.DataFrame:
    if sweep_args.axis == "mode":
        modes = parse_grid(sweep_args.modes, str, "modes")
        reports = sweep_modes(cfg, modes)
        rows = [(mode, report.mean, report.std) for mode, report in reports.items()]
        return pd.DataFrame(rows, columns=["mode", "mean_acc", "std_acc"])

    if sweep_args.axis == "behavior":
        behaviors = ALL_BEHAVIORS if sweep_args.behaviors is True else sweep_args.behaviors
        reports = sweep_behaviors(cfg, parse_grid(behaviors, str, "behaviors"))
        rows = [(name, report.mean, report.std) for name, report in reports.items()]
        return pd.DataFrame(rows, columns=["behavior", "mean_acc", "std_acc"])

    gammas = parse_grid(sweep_args.gammas, float, "gammas")
    deltas = parse_grid(sweep_args.deltas, float, "deltas")
    matrix = sweep_noise(cfg, gammas, deltas)
    rows = [
        (gamma, delta, report.mean, report.std)
        for gamma, row in zip(gammas, matrix)
        for delta, report in zip(deltas, row)
    ]
    return pd.DataFrame(rows, columns=["gamma", "delta", "mean_acc", "std_acc"])


def do_sweep(cfg: DictDefault, sweep_args: SweepCliArgs) -> pd.DataFrame:
    output_dir = Path(cfg.output_dir) if cfg.output_dir else None
    if output_dir is not None:
        output_dir.mkdir(parents=True, exist_ok=True)
        write_json(cfg.to_plain(), output_dir / RESOLVED_CONFIG_FILE)

    table = sweep_table(cfg, sweep_args)
    out = sweep_args.out
    if out is None and output_dir is not None:
        out = output_dir / SWEEP_FILE_TEMPLATE.format(axis=sweep_args.axis)
    if out is None:
        table.to_csv(sys.stdout, index=False, lineterminator="\n")
    else:
        table.to_csv(ensure_parent(out), index=False, lineterminator="\n")
        LOG.info(f"wrote {len(table)} sweep rows to {out}")
    return table


def do_cli(
    config: Optional[Path] = None,
    gammas=None,
    deltas=None,
    behaviors=None,
    modes=None,
    out: Optional[str] = None,
    override=None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    output_dir: Optional[str] = None,
    **kwargs,
):
    # pylint: disable=duplicate-code
    if modes is True:
        modes = ALL_MODES
    sweep_args = SweepCliArgs(gammas=gammas, deltas=deltas, behaviors=behaviors, modes=modes, out=out)
    cli_args = RunCliArgs(seed=seed, workers=workers, output_dir=output_dir)
    parsed_cfg = load_cfg(config, override=override, cli_args=cli_args, **kwargs)
    do_sweep(parsed_cfg, sweep_args)


if __name__ == "__main__":
    fire.Fire(do_cli)
