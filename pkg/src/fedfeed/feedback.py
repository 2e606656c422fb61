"""
Simulated user feedback on pseudo labels, and noise estimation from feedback logs.

A user shown a correct prediction gives positive feedback with probability
gamma; shown a wrong one, gives negative feedback with probability delta.
Whatever is not positive is negative: simulation never emits "idk". Logs from
real users may contain "idk", and the estimators account for it.
"""

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import gammaln, xlogy

from fedfeed.datasets import ClientPartition, Dataset, DatasetParseError
from fedfeed.utils.config import ConfigError
from fedfeed.utils.data import ensure_parent, read_csv_strings

LOG = logging.getLogger("fedfeed.feedback")

FEEDBACK_LOG_COLUMNS = ["example_id", "pseudo_label", "gold_label", "feedback"]
PROFILE_COLUMNS = ["client_id", "gamma", "delta"]


class FeedbackContractError(ValueError):
    """Inputs to the simulator are inconsistent, e.g. a pseudo label is missing"""


class Feedback(str, Enum):
    POS = "pos"
    NEG = "neg"
    IDK = "idk"


@dataclass(frozen=True)
class NoiseProfile:
    gamma: float
    delta: float

    def __post_init__(self):
        for name in ("gamma", "delta"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class BehaviorSpec:
    """
    How per-client noise profiles are drawn.

    `fixed` uses (gamma, delta) for everyone. The Beta kinds draw gamma from
    Beta(a_gamma, b_gamma) and delta from Beta(a_delta, b_delta). `empirical`
    reads `client_id,gamma,delta` rows from `path`.
    """

    kind: str = "fixed"
    gamma: float = 1.0
    delta: float = 1.0
    a_gamma: float = 1.0
    b_gamma: float = 1.0
    a_delta: float = 1.0
    b_delta: float = 1.0
    path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("fixed", "beta_sampled", "empirical"):
            raise ValueError(f"unknown behavior kind {self.kind!r}")
        if self.kind == "fixed":
            NoiseProfile(self.gamma, self.delta)
        if self.kind == "beta_sampled":
            for name in ("a_gamma", "b_gamma", "a_delta", "b_delta"):
                if getattr(self, name) <= 0:
                    raise ValueError(f"Beta shape `{name}` must be > 0")
        if self.kind == "empirical" and not self.path:
            raise ValueError("empirical behavior needs a profile file")

    @classmethod
    def fixed(cls, gamma: float, delta: float) -> "BehaviorSpec":
        return cls("fixed", gamma=gamma, delta=delta)

    @classmethod
    def beta_sampled(cls, a_gamma, b_gamma, a_delta, b_delta) -> "BehaviorSpec":
        return cls("beta_sampled", a_gamma=a_gamma, b_gamma=b_gamma, a_delta=a_delta, b_delta=b_delta)

    @classmethod
    def empirical(cls, path: Union[str, Path]) -> "BehaviorSpec":
        return cls("empirical", path=str(path))

    @classmethod
    def named(cls, name: str, high: float = 10.0, low: float = 1.0) -> "BehaviorSpec":
        """The four Beta-sampled user behaviors; Beta(high, low) means 'near 1'"""
        shapes = {
            "low_noise": (high, low, high, low),
            "adversarial": (low, high, low, high),
            "always_positive": (high, low, low, high),
            "always_negative": (low, high, high, low),
        }
        if name not in shapes:
            raise ValueError(f"unknown behavior {name!r}")
        return cls.beta_sampled(*shapes[name])


@dataclass(frozen=True)
class FeedbackRecord:
    example_id: int
    pseudo_label: int
    feedback: Feedback
    gold_label: int
    client_id: Optional[int] = None

    @property
    def correct(self) -> bool:
        return self.pseudo_label == self.gold_label


@dataclass(frozen=True)
class FeedbackCounts:
    """(pos|neg|idk) x (correct|incorrect) tallies"""

    n1: int = 0
    n2: int = 0
    n3: int = 0
    n4: int = 0
    n5: int = 0
    n6: int = 0

    def __post_init__(self):
        if any(value < 0 for value in self.as_tuple()):
            raise ValueError("feedback counts must be nonnegative")

    def as_tuple(self) -> Tuple[int, ...]:
        return (self.n1, self.n2, self.n3, self.n4, self.n5, self.n6)

    @property
    def total(self) -> int:
        return sum(self.as_tuple())

    @property
    def correct(self) -> int:
        return self.n1 + self.n3 + self.n5

    @property
    def incorrect(self) -> int:
        return self.n2 + self.n4 + self.n6

    def __add__(self, other: "FeedbackCounts") -> "FeedbackCounts":
        return FeedbackCounts(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))


@dataclass(frozen=True)
class NoiseEstimate:
    """Closed-form MLE; a component is None when its denominator is zero"""

    gamma: Optional[float]
    delta: Optional[float]
    alpha: Optional[float]
    beta: Optional[float]
    counts: FeedbackCounts

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "delta": self.delta,
            "alpha": self.alpha,
            "beta": self.beta,
            "counts": asdict(self.counts),
        }


def _aligned_pseudo_labels(partition: ClientPartition, pseudo_labels) -> np.ndarray:
    examples = partition.examples
    if isinstance(pseudo_labels, Mapping):
        missing = [int(i) for i in examples.ids if int(i) not in pseudo_labels]
        if missing:
            raise FeedbackContractError(f"no pseudo label for example {missing[0]}")
        values = [pseudo_labels[int(i)] for i in examples.ids]
    else:
        values = list(pseudo_labels)
        if len(values) != len(examples):
            raise FeedbackContractError(
                f"{len(values)} pseudo labels for {len(examples)} examples"
            )
    if any(value is None for value in values):
        raise FeedbackContractError("pseudo label missing")
    labels = np.asarray(values, dtype=np.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= examples.num_classes):
        raise FeedbackContractError("pseudo label out of class range")
    return labels


def simulate_feedback(
    partition: ClientPartition,
    pseudo_labels,
    profile: NoiseProfile,
    rng: np.random.Generator,
) -> Tuple[Dataset, Dataset, List[FeedbackRecord]]:
    """
    One uniform draw per example decides its feedback. D_pos carries pseudo
    labels; D_neg carries them as complementary labels.
    """
    examples = partition.examples
    pseudo = _aligned_pseudo_labels(partition, pseudo_labels)
    correct = pseudo == examples.labels
    draws = rng.random(len(examples))
    positive = np.where(correct, draws < profile.gamma, ~(draws < profile.delta))

    relabeled = examples.relabel(pseudo)
    d_pos = relabeled.subset(np.flatnonzero(positive))
    d_neg = relabeled.subset(np.flatnonzero(~positive))
    records = [
        FeedbackRecord(
            example_id=int(example_id),
            pseudo_label=int(label),
            feedback=Feedback.POS if is_pos else Feedback.NEG,
            gold_label=int(gold),
            client_id=partition.client_id,
        )
        for example_id, label, gold, is_pos in zip(examples.ids, pseudo, examples.labels, positive)
    ]
    return d_pos, d_neg, records


def sample_profiles(
    spec: BehaviorSpec, N: int, rng: Optional[np.random.Generator] = None
) -> List[NoiseProfile]:
    if N < 1:
        raise ConfigError(f"need at least one client, got {N}", "clients")
    if spec.kind == "fixed":
        # no draws, so downstream streams are unaffected
        return [NoiseProfile(spec.gamma, spec.delta) for _ in range(N)]
    if spec.kind == "empirical":
        profiles = [profile for _, profile in read_profiles(spec.path)]
        if len(profiles) < N:
            raise ConfigError(
                f"profile file {spec.path} has {len(profiles)} rows, need {N}",
                "empirical_profiles",
            )
        return profiles[:N]
    if rng is None:
        raise ValueError(f"behavior {spec.kind!r} draws profiles and needs an rng")
    gammas = rng.beta(spec.a_gamma, spec.b_gamma, size=N)
    deltas = rng.beta(spec.a_delta, spec.b_delta, size=N)
    return [NoiseProfile(float(g), float(d)) for g, d in zip(gammas, deltas)]


def count_feedback(
    records: Iterable[FeedbackRecord], gold: Optional[Mapping[int, int]] = None
) -> FeedbackCounts:
    """`gold` overrides the records' own gold labels, keyed by example id"""
    tally = [0] * 6
    for record in records:
        gold_label = gold[record.example_id] if gold is not None else record.gold_label
        offset = 0 if record.pseudo_label == gold_label else 1
        kind = Feedback(record.feedback)
        base = {Feedback.POS: 0, Feedback.NEG: 2, Feedback.IDK: 4}[kind]
        tally[base + offset] += 1
    return FeedbackCounts(*tally)


def _ratio(numer: int, denom: int) -> Optional[float]:
    return numer / denom if denom > 0 else None


def estimate_noise(counts: FeedbackCounts) -> NoiseEstimate:
    n1, n2, n3, n4, n5, n6 = counts.as_tuple()
    estimate = NoiseEstimate(
        gamma=_ratio(n1, counts.correct),
        delta=_ratio(n4, counts.incorrect),
        alpha=_ratio(n3, counts.correct),
        beta=_ratio(n2, counts.incorrect),
        counts=counts,
    )
    if estimate.gamma is None:
        LOG.debug("no feedback on correct predictions; gamma and alpha undefined")
    if estimate.delta is None:
        LOG.debug("no feedback on incorrect predictions; delta and beta undefined")
    return estimate


def log_likelihood(
    counts: FeedbackCounts,
    alpha: float,
    beta: float,
    gamma: float,
    delta: float,
    accuracy: Optional[float] = None,
) -> float:
    """
    Multinomial log-likelihood of the six counts, coefficient included.
    `accuracy` is the probability a prediction is correct and defaults to its
    MLE. Parameters outside the simplex give -inf.
    """
    n = counts.total
    if accuracy is None:
        accuracy = counts.correct / n if n else 0.5
    probs = np.array(
        [
            gamma * accuracy,
            beta * (1 - accuracy),
            alpha * accuracy,
            delta * (1 - accuracy),
            (1 - alpha - gamma) * accuracy,
            (1 - beta - delta) * (1 - accuracy),
        ]
    )
    if np.any(probs < -1e-12):
        return float("-inf")
    probs = np.clip(probs, 0.0, None)
    observed = np.array(counts.as_tuple(), dtype=np.float64)
    if np.any((probs == 0) & (observed > 0)):
        return float("-inf")
    coefficient = gammaln(n + 1) - gammaln(observed + 1).sum()
    return float(coefficient + xlogy(observed, probs).sum())


def estimate_from_simulation(
    profile: NoiseProfile, n_correct: int, n_incorrect: int, rng: np.random.Generator
) -> Tuple[Optional[float], Optional[float]]:
    """Simulate on a two-class stand-in partition and estimate (gamma, delta) back"""
    if n_correct < 0 or n_incorrect < 0 or n_correct + n_incorrect == 0:
        raise ValueError("need a positive number of simulated examples")
    total = n_correct + n_incorrect
    dataset = Dataset(
        ids=np.arange(total),
        features=np.zeros((total, 1)),
        labels=np.zeros(total, dtype=np.int64),
        num_classes=2,
    )
    pseudo = np.concatenate([np.zeros(n_correct), np.ones(n_incorrect)]).astype(np.int64)
    _, _, records = simulate_feedback(ClientPartition(0, dataset), pseudo, profile, rng)
    estimate = estimate_noise(count_feedback(records))
    return estimate.gamma, estimate.delta


def estimate_by_client(records: Iterable[FeedbackRecord]) -> Dict[str, object]:
    """Pooled estimate plus one per client_id, in order of first appearance"""
    by_client: "OrderedDict[int, List[FeedbackRecord]]" = OrderedDict()
    pooled = FeedbackCounts()
    for record in records:
        pooled = pooled + count_feedback([record])
        if record.client_id is not None:
            by_client.setdefault(record.client_id, []).append(record)
    return {
        "pooled": estimate_noise(pooled),
        "clients": OrderedDict(
            (client_id, estimate_noise(count_feedback(client_records)))
            for client_id, client_records in by_client.items()
        ),
    }


def _parse_int(value, column: str, line: int) -> int:
    try:
        return int(value)
    except (TypeError, ValueError) as err:
        raise DatasetParseError(f"bad {column} {value!r}", line) from err


def read_feedback_log(path: Union[str, Path]) -> List[FeedbackRecord]:
    frame = read_csv_strings(path)
    columns = list(frame.columns)
    has_client = columns[:1] == ["client_id"]
    expected = (["client_id"] if has_client else []) + FEEDBACK_LOG_COLUMNS
    if columns != expected:
        raise DatasetParseError(f"expected header {','.join(expected)}, got {','.join(columns)}", 1)

    records = []
    for offset, row in enumerate(frame.itertuples(index=False)):
        line = offset + 2
        values = dict(zip(columns, row))
        try:
            feedback = Feedback(str(values["feedback"]).strip().lower())
        except ValueError as err:
            raise DatasetParseError(f"bad feedback {values['feedback']!r}", line) from err
        records.append(
            FeedbackRecord(
                example_id=_parse_int(values["example_id"], "example_id", line),
                pseudo_label=_parse_int(values["pseudo_label"], "pseudo_label", line),
                feedback=feedback,
                gold_label=_parse_int(values["gold_label"], "gold_label", line),
                client_id=_parse_int(values["client_id"], "client_id", line) if has_client else None,
            )
        )
    return records


def write_feedback_log(records: Sequence[FeedbackRecord], path: Union[str, Path]):
    with_client = any(record.client_id is not None for record in records)
    columns = (["client_id"] if with_client else []) + FEEDBACK_LOG_COLUMNS
    rows = [
        ([record.client_id] if with_client else [])
        + [record.example_id, record.pseudo_label, record.gold_label, Feedback(record.feedback).value]
        for record in records
    ]
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(ensure_parent(path), index=False, lineterminator="\n")


def read_profiles(path: Union[str, Path]) -> List[Tuple[int, NoiseProfile]]:
    frame = read_csv_strings(path)
    if list(frame.columns) != PROFILE_COLUMNS:
        raise DatasetParseError(f"expected header {','.join(PROFILE_COLUMNS)}", 1)
    profiles = []
    for offset, (client_id, gamma, delta) in enumerate(frame.itertuples(index=False)):
        line = offset + 2
        try:
            profiles.append((int(client_id), NoiseProfile(float(gamma), float(delta))))
        except (TypeError, ValueError) as err:
            raise DatasetParseError(f"bad profile row: {err}", line) from err
    return profiles
