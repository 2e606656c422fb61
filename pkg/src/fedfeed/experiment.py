"""
End-to-end experiments: seed training, pseudo labeling, feedback simulation,
federated training per mode, repeats, and sweeps over noise and behaviors.
"""

import json
import logging
from collections import OrderedDict
from copy import deepcopy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from fedfeed import feedback
from fedfeed.common.const import (
    BEHAVIORS,
    FEEDBACK_LOG_FILE,
    MODES,
    REPORT_FILE,
    RESOLVED_CONFIG_FILE,
    ROUND_LOG_FILE,
    SCHEDULER_P_GRID,
    SEED_MODEL_FILE,
)
from fedfeed.datasets import (
    ClientPartition,
    Dataset,
    SplitSpec,
    generate_synthetic,
    holdout_test,
    load_csv,
    partition_clients,
    split,
)
from fedfeed.federation import ClientState, FederationConfig, train_federated
from fedfeed.feedback import BehaviorSpec, FeedbackRecord, NoiseProfile
from fedfeed.losses import LossSpec, estimate_Q
from fedfeed.models import (
    Batch,
    ModelParams,
    accuracy,
    batch_loss,
    init_params,
    predict,
    save_params,
    train_local,
)
from fedfeed.utils.callbacks import LogMetricsCallback, RoundLogCallback
from fedfeed.utils.config import ConfigError
from fedfeed.utils.data import derive_seed
from fedfeed.utils.dict import DictDefault

LOG = logging.getLogger("fedfeed.experiment")

FEEDBACK_MODES = ("positive_only", "all_feedback")
# keys that change where or how fast a run executes, never what it computes
_RUNTIME_KEYS = ("output_dir", "workers")


@dataclass
class Report:
    mode: str
    accuracies: List[float]
    mean: float
    std: Optional[float]
    seed_accuracies: List[float] = field(default_factory=list)
    rounds: List[List[dict]] = field(default_factory=list)
    scheduler_p: List[Optional[float]] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @classmethod
    def from_repeats(cls, mode: str, runs: List["RepeatResult"], config: dict) -> "Report":
        accuracies = [run.accuracy for run in runs]
        values = np.asarray(accuracies, dtype=np.float64)
        # clip so rounding never pushes the mean outside the observed range
        mean = float(np.clip(values.mean(), values.min(), values.max()))
        std = float(values.std(ddof=1)) if len(values) >= 2 else None
        return cls(
            mode=mode,
            accuracies=accuracies,
            mean=mean,
            std=std,
            seed_accuracies=[run.seed_accuracy for run in runs],
            rounds=[[metrics.to_log_dict() for metrics in run.history] for run in runs],
            scheduler_p=[run.scheduler_p for run in runs],
            config=config,
        )

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "accuracies": self.accuracies,
            "mean": self.mean,
            "std": self.std,
            "seed_accuracies": self.seed_accuracies,
            "scheduler_p": self.scheduler_p,
            "rounds": self.rounds,
            "config": self.config,
        }

    def summary_line(self) -> str:
        std = 0.0 if self.std is None else self.std
        return f"mode={self.mode} acc={self.mean:.4f} ± {std:.4f}"


@dataclass
class RepeatResult:
    accuracy: float
    seed_accuracy: float
    history: list
    scheduler_p: Optional[float] = None
    seed_model: Optional[ModelParams] = None
    records: List[FeedbackRecord] = field(default_factory=list)


@dataclass
class PreparedSplits:
    seed: Dataset
    validation: Dataset
    unlabeled: Dataset
    test: Optional[Dataset]

    @property
    def evaluation(self) -> Dataset:
        return self.test if self.test is not None else self.validation


def config_snapshot(cfg: DictDefault) -> dict:
    plain = cfg.to_plain()
    for key in _RUNTIME_KEYS:
        plain.pop(key, None)
    return plain


def load_dataset(cfg: DictDefault) -> Dataset:
    if cfg.dataset_path:
        dataset = load_csv(cfg.dataset_path, num_classes=cfg.classes)
        LOG.info(f"loaded {len(dataset)} examples from {cfg.dataset_path}")
        return dataset
    return generate_synthetic(cfg.n, cfg.dim, cfg.classes, cfg.class_sep, cfg.data_seed)


def prepare_splits(dataset: Dataset, cfg: DictDefault, seed: int) -> PreparedSplits:
    train, test = holdout_test(dataset, cfg.test_fraction, derive_seed(seed, "holdout"))
    d_s, d_v, d_u = split(
        train, SplitSpec(cfg.k, cfg.v, cfg.stratified), derive_seed(seed, "split")
    )
    LOG.info(
        f"splits: seed={len(d_s)} validation={len(d_v)} unlabeled={len(d_u)} "
        f"test={0 if test is None else len(test)}"
    )
    return PreparedSplits(d_s, d_v, d_u, test)


def train_seed(d_s: Dataset, cfg: DictDefault, seed: int) -> ModelParams:
    """
    Centralised CCE training on the small labeled split. Runs up to
    `seed_epochs` epochs and stops once the training loss has not dropped by
    `seed_tol` for `seed_patience` epochs.
    """
    if d_s is None or len(d_s) == 0:
        raise ConfigError("the seed split is empty; increase `k` or `n`", "k")

    params = init_params(
        d_s.dim,
        d_s.num_classes,
        cfg.architecture,
        cfg.init,
        seed,
        sigma=cfg.init_sigma,
        hidden=cfg.hidden,
    )
    spec = LossSpec("cce")
    batch = Batch.positive(d_s.features, d_s.labels)
    rng = np.random.default_rng(derive_seed(seed, "seed-sgd"))
    best, stale = batch_loss(params, batch, spec), 0
    for epoch in range(cfg.seed_epochs):
        params = train_local(params, batch, 1, cfg.batch_size, cfg.lr, spec, rng)
        loss = batch_loss(params, batch, spec)
        if loss < best - cfg.seed_tol:
            best, stale = loss, 0
        else:
            stale += 1
        if cfg.seed_patience and stale >= cfg.seed_patience:
            LOG.debug(f"seed training converged after {epoch + 1} epochs (loss {loss:.4f})")
            break
    return params


def behavior_spec(cfg: DictDefault) -> BehaviorSpec:
    if cfg.behavior in (None, "fixed"):
        return BehaviorSpec.fixed(cfg.gamma, cfg.delta)
    if cfg.behavior == "empirical":
        if cfg.empirical_profiles:
            return BehaviorSpec.empirical(cfg.empirical_profiles)
        LOG.warning(
            f"no empirical profile file; using fixed gamma={cfg.empirical_gamma}, "
            f"delta={cfg.empirical_delta}"
        )
        return BehaviorSpec.fixed(cfg.empirical_gamma, cfg.empirical_delta)
    return BehaviorSpec.named(cfg.behavior, cfg.beta_high, cfg.beta_low)


def loss_spec_for(cfg: DictDefault, mode: str, Q=None, p: Optional[float] = None) -> LossSpec:
    weights = (cfg.nce_weight, cfg.rce_weight)
    common = {"A": cfg.rce_A, "weights": weights, "schedule_unit": cfg.schedule_unit}
    if p is not None:
        common["p"] = p
    if mode == "positive_only":
        return LossSpec("robust" if cfg.robust else "cce", **common)
    if mode == "all_feedback":
        return LossSpec("robust_scheduled" if cfg.robust else "scheduled", Q=Q, **common)
    return LossSpec("cce", **common)


def build_clients(
    mode: str,
    partitions: Sequence[ClientPartition],
    pseudo_labels: Sequence[np.ndarray],
    profiles: Optional[Sequence[NoiseProfile]],
    feedback_seed: int,
) -> Tuple[List[ClientState], List[FeedbackRecord]]:
    """Per-mode client datasets; only the feedback modes simulate users"""
    clients, records = [], []
    for idx, partition in enumerate(partitions):
        examples = partition.examples
        empty = examples.subset([])
        if mode == "full_supervision":
            clients.append(ClientState(partition.client_id, partition, examples, empty))
        elif mode == "self_training":
            clients.append(
                ClientState(partition.client_id, partition, examples.relabel(pseudo_labels[idx]), empty)
            )
        else:
            rng = np.random.default_rng(derive_seed(feedback_seed, partition.client_id))
            d_pos, d_neg, client_records = feedback.simulate_feedback(
                partition, pseudo_labels[idx], profiles[idx], rng
            )
            clients.append(ClientState(partition.client_id, partition, d_pos, d_neg, profiles[idx]))
            records.extend(client_records)
    return clients, records


def _federation_config(
    cfg: DictDefault, loss_spec: LossSpec, splits: PreparedSplits, seed: int, callbacks=None
) -> FederationConfig:
    return FederationConfig(
        loss_spec=loss_spec,
        validation=splits.validation,
        test=splits.test,
        local_epochs=cfg.local_epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        max_rounds=cfg.max_rounds,
        patience=cfg.patience,
        min_delta=cfg.min_delta,
        aggregation=cfg.aggregation,
        participation=cfg.participation,
        workers=cfg.workers,
        seed=derive_seed(seed, "federation"),
        callbacks=list(callbacks or []),
    )


def run_repeat(
    cfg: DictDefault,
    dataset: Dataset,
    seed: int,
    callbacks=None,
) -> RepeatResult:
    mode = cfg.mode
    splits = prepare_splits(dataset, cfg, seed)
    seed_model = train_seed(splits.seed, cfg, derive_seed(seed, "seed-model"))
    seed_accuracy = accuracy(seed_model, splits.evaluation)
    LOG.info(f"seed model accuracy: {seed_accuracy:.4f}")
    if mode == "initial_only":
        return RepeatResult(seed_accuracy, seed_accuracy, [], seed_model=seed_model)

    partitions = partition_clients(
        splits.unlabeled,
        cfg.clients,
        cfg.partition,
        derive_seed(seed, "partition"),
        beta=cfg.dirichlet_beta,
    )
    pseudo = [predict(seed_model, partition.examples.features) for partition in partitions]
    profiles = None
    if mode in FEEDBACK_MODES:
        rng = np.random.default_rng(derive_seed(seed, "profiles"))
        profiles = feedback.sample_profiles(behavior_spec(cfg), len(partitions), rng)
    clients, records = build_clients(
        mode, partitions, pseudo, profiles, derive_seed(seed, "feedback", 0)
    )

    before_round = None
    if cfg.refresh_pseudo_labels and mode in FEEDBACK_MODES + ("self_training",):

        def before_round(round_index, current, current_clients):
            if round_index == 1:
                return current_clients
            fresh = [predict(current, partition.examples.features) for partition in partitions]
            refreshed, _ = build_clients(
                mode, partitions, fresh, profiles, derive_seed(seed, "feedback", round_index - 1)
            )
            return refreshed

    Q = estimate_Q(seed_model, splits.validation) if mode == "all_feedback" else None
    candidates = [None]
    if mode == "all_feedback":
        candidates = list(SCHEDULER_P_GRID) if cfg.scheduler_p == "auto" else [cfg.scheduler_p]

    best = None
    for p in candidates:
        loss_spec = loss_spec_for(cfg, mode, Q, p)
        # the p search keeps its runs out of the round log
        run_callbacks = callbacks if len(candidates) == 1 else [LogMetricsCallback(f"p={p} ")]
        fed_config = _federation_config(cfg, loss_spec, splits, seed, run_callbacks)
        final, history = train_federated(seed_model, clients, fed_config, before_round)
        best_val = max(metrics.val_acc for metrics in history)
        if best is None or best_val > best[0]:
            best = (best_val, p, final, history)

    _, chosen_p, final, history = best
    if len(candidates) > 1:
        LOG.info(f"scheduler p={chosen_p} selected on validation accuracy {best[0]:.4f}")
        for callback in callbacks or []:
            if isinstance(callback, RoundLogCallback):
                for metrics in history:
                    callback.on_round_end(metrics)
    return RepeatResult(
        accuracy=accuracy(final, splits.evaluation),
        seed_accuracy=seed_accuracy,
        history=history,
        scheduler_p=chosen_p,
        seed_model=seed_model,
        records=records,
    )


def run_experiment(cfg: DictDefault, output_dir: Union[str, Path, None] = None) -> Report:
    """
    Run `repeats` independent repeats of the configured mode. When an output
    directory is given the resolved config is written first, followed by the
    seed model and feedback log of the first repeat, the round log and the report.
    """
    output_dir = Path(output_dir) if output_dir else (Path(cfg.output_dir) if cfg.output_dir else None)
    if output_dir is not None:
        output_dir.mkdir(parents=True, exist_ok=True)
        write_json(cfg.to_plain(), output_dir / RESOLVED_CONFIG_FILE)

    dataset = load_dataset(cfg)
    runs = []
    repeat_seeds = list(cfg.repeat_seeds)[: cfg.repeats]
    for repeat, seed in enumerate(tqdm(repeat_seeds, desc=f"{cfg.mode} repeats", disable=None, leave=False)):
        callbacks = [LogMetricsCallback(f"[repeat {repeat}] ")]
        if output_dir is not None:
            callbacks.append(RoundLogCallback(output_dir / ROUND_LOG_FILE, repeat=repeat))
        run = run_repeat(cfg, dataset, seed, callbacks)
        if output_dir is not None and repeat == 0:
            save_params(run.seed_model, output_dir / SEED_MODEL_FILE)
            if run.records:
                feedback.write_feedback_log(run.records, output_dir / FEEDBACK_LOG_FILE)
        runs.append(run)

    report = Report.from_repeats(cfg.mode, runs, config_snapshot(cfg))
    LOG.info(report.summary_line())
    if output_dir is not None:
        write_json(report.to_dict(), output_dir / REPORT_FILE)
    return report


def _variant(cfg: DictDefault, **overrides) -> DictDefault:
    variant = DictDefault(deepcopy(cfg.to_plain()))
    for key, value in overrides.items():
        variant[key] = value
    return variant


def sweep_noise(
    cfg: DictDefault, gamma_grid: Sequence[float], delta_grid: Sequence[float]
) -> List[List[Report]]:
    """Reports indexed [gamma][delta] with fixed per-client profiles"""
    if not gamma_grid or not delta_grid:
        raise ConfigError("noise sweep grids must be non-empty", "gammas")
    for value in list(gamma_grid) + list(delta_grid):
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"noise grid value {value} outside [0, 1]", "gammas")
    matrix = []
    for gamma in gamma_grid:
        row = []
        for delta in delta_grid:
            LOG.info(f"sweep cell gamma={gamma} delta={delta}")
            row.append(run_experiment(_variant(cfg, behavior="fixed", gamma=gamma, delta=delta, output_dir=None)))
        matrix.append(row)
    return matrix


def sweep_behaviors(cfg: DictDefault, behaviors: Sequence[str] = BEHAVIORS) -> Dict[str, Report]:
    if not behaviors:
        raise ConfigError("behavior sweep needs at least one behavior", "behaviors")
    if cfg.mode not in FEEDBACK_MODES:
        LOG.warning(f"mode `{cfg.mode}` ignores user behavior; every sweep row will match")
    reports = OrderedDict()
    for behavior in behaviors:
        if behavior not in BEHAVIORS:
            raise ConfigError(f"unknown behavior {behavior!r}", "behaviors")
        LOG.info(f"sweep behavior {behavior}")
        reports[behavior] = run_experiment(_variant(cfg, behavior=behavior, output_dir=None))
    return reports


def sweep_modes(cfg: DictDefault, modes: Sequence[str] = MODES) -> Dict[str, Report]:
    if not modes:
        raise ConfigError("mode sweep needs at least one mode", "modes")
    reports = OrderedDict()
    for mode in modes:
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}", "modes")
        LOG.info(f"sweep mode {mode}")
        reports[mode] = run_experiment(_variant(cfg, mode=mode, output_dir=None))
    return reports


def write_json(payload: dict, path: Union[str, Path]):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
