"""
CLI to estimate user feedback noise (gamma, delta, alpha, beta) from a feedback log
"""
import json
import logging
from pathlib import Path
from typing import Optional

import fire

from fedfeed.feedback import estimate_by_client, read_feedback_log
from fedfeed.utils.data import ensure_parent

LOG = logging.getLogger("fedfeed.cli.estimate_noise")


def estimates_payload(log_path) -> dict:
    records = read_feedback_log(log_path)
    estimates = estimate_by_client(records)
    LOG.info(f"{len(records)} feedback records from {len(estimates['clients'])} clients")
    return {
        "pooled": estimates["pooled"].to_dict(),
        "clients": [
            {"client_id": client_id, **estimate.to_dict()}
            for client_id, estimate in estimates["clients"].items()
        ],
    }


def do_cli(log: Path, out: Optional[str] = None):
    payload = json.dumps(estimates_payload(log), indent=2, sort_keys=True)
    print(payload)
    if out:
        ensure_parent(out).write_text(payload + "\n", encoding="utf-8")


if __name__ == "__main__":
    fire.Fire(do_cli)
