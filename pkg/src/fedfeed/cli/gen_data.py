"""
CLI to generate a synthetic Gaussian-cluster dataset as CSV
"""
import logging

import fire

from fedfeed.common.cli import GenDataCliArgs
from fedfeed.datasets import generate_synthetic, write_csv
from fedfeed.utils.config import ConfigError

LOG = logging.getLogger("fedfeed.cli.gen_data")


def do_gen_data(cli_args: GenDataCliArgs):
    for name in ("n", "dim", "classes", "seed"):
        if not isinstance(getattr(cli_args, name), int) or isinstance(getattr(cli_args, name), bool):
            raise ConfigError(f"`--{name}` must be an integer", name)
    dataset = generate_synthetic(
        cli_args.n, cli_args.dim, cli_args.classes, float(cli_args.sep), cli_args.seed
    )
    write_csv(dataset, cli_args.out)
    LOG.info(f"wrote {len(dataset)} examples to {cli_args.out}")
    return dataset


def do_cli(out: str, n: int = 20000, dim: int = 16, classes: int = 4, sep: float = 8.0, seed: int = 0):
    do_gen_data(GenDataCliArgs(out=str(out), n=n, dim=dim, classes=classes, sep=sep, seed=seed))


if __name__ == "__main__":
    fire.Fire(do_cli)
