"""Module containing Dataset functionality: synthetic data, CSV ingest, splits and client partitions"""

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_flow
from scipy.stats import special_ortho_group

from fedfeed.utils.config import ConfigError
from fedfeed.utils.data import ensure_parent, read_csv_strings

LOG = logging.getLogger("fedfeed.datasets")


class SplitError(ValueError):
    """A split cannot satisfy its size or stratification constraints"""


class PartitionError(ValueError):
    """Client partitioning is impossible for the requested client count"""


class DatasetParseError(ValueError):
    """Malformed dataset file; `line` is the 1-based line number in the file"""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(frozen=True)
class Example:
    id: int
    features: np.ndarray
    gold_label: int


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


class Dataset:
    """
    Immutable labeled dataset stored column-wise.

    ids (n,), features (n, d) float64 and labels (n,) int64 are read-only arrays,
    so a Dataset can be shared between concurrently running clients.
    """

    def __init__(
        self,
        ids: Sequence[int],
        features: np.ndarray,
        labels: Sequence[int],
        num_classes: int,
        dim: Optional[int] = None,
    ):
        features = np.asarray(features, dtype=np.float64)
        if features.size == 0:
            features = features.reshape(0, dim if dim is not None else 0)
        if features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        dim = features.shape[1] if dim is None else dim
        if features.shape[1] != dim:
            raise ValueError(f"features have dimension {features.shape[1]}, expected {dim}")
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if not len(ids) == len(labels) == features.shape[0]:
            raise ValueError("ids, features and labels must have the same length")
        if num_classes < 1 or dim < 1:
            raise ValueError("num_classes and dim must be positive")
        if len(labels) and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError(f"labels must lie in [0, {num_classes})")
        if not np.all(np.isfinite(features)):
            raise ValueError("features must be finite")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("ids must be unique")

        self.ids = _frozen(ids)
        self.features = _frozen(features)
        self.labels = _frozen(labels)
        self.num_classes = int(num_classes)
        self.dim = int(dim)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.dim == other.dim
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.features, other.features)
        )

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, dim={self.dim}, num_classes={self.num_classes})"

    @property
    def examples(self) -> List[Example]:
        return [
            Example(int(i), x, int(y))
            for i, x, y in zip(self.ids, self.features, self.labels)
        ]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.ids[indices],
            self.features[indices],
            self.labels[indices],
            self.num_classes,
            self.dim,
        )

    def relabel(self, labels: Sequence[int]) -> "Dataset":
        """Same examples carrying different targets, e.g. pseudo labels"""
        return Dataset(self.ids, self.features, labels, self.num_classes, self.dim)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    @classmethod
    def empty(cls, num_classes: int, dim: int) -> "Dataset":
        return cls([], np.zeros((0, dim)), [], num_classes, dim)

    @classmethod
    def concat(cls, *datasets: "Dataset") -> "Dataset":
        if not datasets:
            raise ValueError("concat needs at least one dataset")
        first = datasets[0]
        return cls(
            np.concatenate([ds.ids for ds in datasets]),
            np.concatenate([ds.features for ds in datasets]),
            np.concatenate([ds.labels for ds in datasets]),
            first.num_classes,
            first.dim,
        )


@dataclass(frozen=True)
class SplitSpec:
    k: float = 0.01
    v: float = 0.2
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.k < 1.0 or not 0.0 < self.v < 1.0:
            raise ConfigError("split fractions k and v must lie in (0, 1)", "k")
        if self.k + self.v >= 1.0:
            raise ConfigError("split fractions must satisfy k + v < 1", "v")


@dataclass(frozen=True)
class ClientPartition:
    client_id: int
    examples: Dataset

    def __len__(self) -> int:
        return len(self.examples)


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def _simplex_centroids(C: int, d: int, class_sep: float, rng) -> np.ndarray:
    if d >= C - 1:
        # regular simplex: centred basis vectors, pairwise distance sqrt(2)
        vertices = np.eye(C) - 1.0 / C
        basis, _ = np.linalg.qr(vertices.T[:, : C - 1])
        coords = vertices @ basis[:, : C - 1]
        centroids = np.zeros((C, d))
        centroids[:, : C - 1] = coords * (class_sep / math.sqrt(2.0))
    else:
        # not enough room for a simplex: integer lattice, spacing class_sep
        side = int(math.ceil(C ** (1.0 / d)))
        grid = np.stack(np.unravel_index(np.arange(C), (side,) * d), axis=1)
        centroids = grid.astype(np.float64) * class_sep
        centroids -= centroids.mean(axis=0)
    if d >= 2:
        centroids = centroids @ special_ortho_group.rvs(d, random_state=rng).T
    return centroids


def generate_synthetic(
    n: int, d: int, C: int, class_sep: float, seed: int
) -> Dataset:
    """
    Draw `n` examples from `C` isotropic unit-variance Gaussians whose centroids are
    pairwise at least `class_sep` apart. Class counts differ by at most one.
    """
    if n < 0 or d < 1 or C < 2:
        raise ConfigError(f"invalid synthetic dimensions n={n}, d={d}, C={C}")
    if class_sep < 0:
        raise ConfigError("class_sep must be non-negative", "class_sep")

    rng = np.random.default_rng(seed)
    centroids = _simplex_centroids(C, d, class_sep, rng)
    labels = rng.permutation(np.arange(n) % C)
    features = centroids[labels] + rng.standard_normal((n, d))
    return Dataset(np.arange(n), features, labels, C, d)


def _allocate_table(counts: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    """
    Round the class x group table counts[c] * sizes[g] / total to integers so
    that every cell is the floor or ceiling of its exact share while row sums
    (class counts) and column sums (group sizes) are kept. The rounding is a
    bipartite flow from classes to groups over the fractional cells.
    """
    counts = np.asarray(counts, dtype=np.int64)
    sizes = np.asarray(sizes, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.zeros((len(counts), len(sizes)), dtype=np.int64)
    products = np.outer(counts, sizes)
    table = products // total
    fractional = (products % total) != 0

    num_classes, num_groups = table.shape
    source, sink = 0, num_classes + num_groups + 1
    capacity = np.zeros((sink + 1, sink + 1), dtype=np.int32)
    capacity[source, 1 : num_classes + 1] = counts - table.sum(axis=1)
    capacity[1 : num_classes + 1, num_classes + 1 : sink] = fractional
    capacity[num_classes + 1 : sink, sink] = sizes - table.sum(axis=0)
    flow = maximum_flow(csr_matrix(capacity), source, sink).flow.toarray()
    table += np.clip(flow[1 : num_classes + 1, num_classes + 1 : sink], 0, None)
    return table


def _class_indices(labels: np.ndarray, num_classes: int, rng) -> List[np.ndarray]:
    return [rng.permutation(np.flatnonzero(labels == cls)) for cls in range(num_classes)]


def _stratified_take(
    dataset: Dataset, sizes: Sequence[int], rng
) -> List[np.ndarray]:
    """Split indices into len(sizes)+1 groups, the last taking the remainder"""
    per_class = _class_indices(dataset.labels, dataset.num_classes, rng)
    sizes = list(sizes) + [len(dataset) - sum(sizes)]
    table = _allocate_table(dataset.class_counts(), sizes)
    bounds = np.concatenate([np.zeros((dataset.num_classes, 1), dtype=np.int64), np.cumsum(table, axis=1)], axis=1)
    groups = []
    for group in range(len(sizes)):
        take = [
            per_class[cls][bounds[cls, group] : bounds[cls, group + 1]]
            for cls in range(dataset.num_classes)
        ]
        groups.append(np.sort(np.concatenate(take)))
    return groups


def split(
    dataset: Dataset, spec: SplitSpec, seed: int
) -> Tuple[Dataset, Dataset, Dataset]:
    """
    Split D_t into the seed split D_s, validation split D_v and edge data D_u.

    |D_s| = round(k |D_t|) is fixed first, then |D_v| = round(v |D_t|); D_u takes
    the remainder.
    """
    total = len(dataset)
    if total == 0:
        raise SplitError("cannot split an empty dataset")
    n_seed = _round_half_up(spec.k * total)
    n_val = _round_half_up(spec.v * total)
    if n_seed + n_val > total:
        raise SplitError(f"split sizes {n_seed} + {n_val} exceed dataset size {total}")

    rng = np.random.default_rng(seed)
    if spec.stratified:
        if spec.k * total < dataset.num_classes:
            raise SplitError(
                f"stratified seed split needs k*|D_t| >= C ({spec.k * total:.2f} < {dataset.num_classes})"
            )
        seed_idx, val_idx, rest_idx = _stratified_take(dataset, [n_seed, n_val], rng)
    else:
        order = rng.permutation(total)
        seed_idx = np.sort(order[:n_seed])
        val_idx = np.sort(order[n_seed : n_seed + n_val])
        rest_idx = np.sort(order[n_seed + n_val :])

    LOG.debug(f"split sizes D_s={len(seed_idx)} D_v={len(val_idx)} D_u={len(rest_idx)}")
    return dataset.subset(seed_idx), dataset.subset(val_idx), dataset.subset(rest_idx)


def holdout_test(dataset: Dataset, fraction: float, seed: int) -> Tuple[Dataset, Optional[Dataset]]:
    """Carve a stratified test split off the full data before the D_s/D_v/D_u split"""
    if fraction <= 0.0:
        return dataset, None
    n_test = _round_half_up(fraction * len(dataset))
    if n_test == 0:
        return dataset, None
    test_idx, train_idx = _stratified_take(
        dataset, [n_test], np.random.default_rng(seed)
    )
    return dataset.subset(train_idx), dataset.subset(test_idx)


def partition_clients(
    D_u: Dataset,
    N: int,
    mode: str = "uniform_class",
    seed: int = 0,
    beta: float = 100.0,
) -> List[ClientPartition]:
    """
    Distribute D_u over N clients as pairwise-disjoint partitions covering D_u.

    uniform_class deals each class round-robin so every client's histogram is
    within one example per class of the global histogram divided by N.
    dirichlet draws each class's client proportions from Dirichlet(beta, ..., beta).
    """
    if N < 1:
        raise PartitionError(f"need at least one client, got {N}")
    if len(D_u) < N:
        raise PartitionError(f"cannot split {len(D_u)} examples over {N} clients")

    rng = np.random.default_rng(seed)
    per_class = _class_indices(D_u.labels, D_u.num_classes, rng)
    assignments: List[List[np.ndarray]] = [[] for _ in range(N)]

    if mode == "uniform_class":
        dealt = np.concatenate(per_class)
        for client_id in range(N):
            assignments[client_id].append(dealt[client_id::N])
    elif mode == "dirichlet":
        if beta <= 0:
            raise ConfigError("dirichlet concentration must be > 0", "dirichlet_beta")
        for indices in per_class:
            proportions = rng.dirichlet(np.repeat(beta, N))
            cuts = (np.cumsum(proportions) * len(indices)).astype(int)[:-1]
            for client_id, chunk in enumerate(np.split(indices, cuts)):
                assignments[client_id].append(chunk)
    else:
        raise ConfigError(f"unknown partition mode {mode!r}", "partition")

    partitions = []
    for client_id, chunks in enumerate(assignments):
        indices = np.sort(np.concatenate(chunks)) if chunks else np.array([], int)
        partitions.append(ClientPartition(client_id, D_u.subset(indices)))
    return partitions


_FIELDS_RE = re.compile(r"Expected (\d+) fields in line (\d+), saw (\d+)")


def load_csv(path: Union[str, Path], num_classes: Optional[int] = None) -> Dataset:
    """
    Load a dataset from `id,f0,...,f{d-1},label`. The class count is `num_classes`
    when given, else one more than the largest label.
    """
    try:
        frame = read_csv_strings(path)
    except pd.errors.EmptyDataError as err:
        raise DatasetParseError("file is empty", 1) from err
    except pd.errors.ParserError as err:
        match = _FIELDS_RE.search(str(err))
        if match:
            raise DatasetParseError(
                f"expected {match.group(1)} fields, saw {match.group(3)}",
                int(match.group(2)),
            ) from err
        raise DatasetParseError(str(err)) from err

    columns = list(frame.columns)
    dim = len(columns) - 2
    expected = ["id"] + [f"f{j}" for j in range(dim)] + ["label"]
    if dim < 1 or columns != expected:
        raise DatasetParseError(
            f"header must be id,f0,...,f{{d-1}},label; got {','.join(columns)}", 1
        )

    ids, rows, labels = [], [], []
    for offset, record in enumerate(frame.itertuples(index=False, name=None)):
        line = offset + 2
        if any(not isinstance(cell, str) or cell.strip() == "" for cell in record):
            raise DatasetParseError(
                f"inconsistent dimension, expected {len(expected)} fields", line
            )
        try:
            ids.append(int(record[0]))
            values = [float(cell) for cell in record[1:-1]]
            labels.append(int(record[-1]))
        except ValueError as err:
            raise DatasetParseError(f"malformed row ({err})", line) from err
        if not all(math.isfinite(value) for value in values):
            raise DatasetParseError("features must be finite", line)
        if labels[-1] < 0 or (num_classes is not None and labels[-1] >= num_classes):
            raise DatasetParseError(
                f"label {labels[-1]} out of range [0, {num_classes})", line
            )
        rows.append(values)

    if num_classes is None:
        num_classes = max(max(labels) + 1, 2) if labels else 2
    seen = set()
    for offset, example_id in enumerate(ids):
        if example_id in seen:
            raise DatasetParseError(f"duplicate id {example_id}", offset + 2)
        seen.add(example_id)

    return Dataset(ids, np.array(rows).reshape(len(rows), dim), labels, num_classes, dim)


def write_csv(dataset: Dataset, path: Union[str, Path]):
    """Write floats with repr precision so load_csv(write_csv(D)) == D"""
    path = ensure_parent(path)
    frame = pd.DataFrame(
        {
            "id": dataset.ids,
            **{f"f{j}": [repr(float(v)) for v in dataset.features[:, j]] for j in range(dataset.dim)},
            "label": dataset.labels,
        },
        columns=["id"] + [f"f{j}" for j in range(dataset.dim)] + ["label"],
    )
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
