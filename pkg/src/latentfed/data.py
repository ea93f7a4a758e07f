"""Synthetic multi-modal labeled data, non-IID partitioning, and CSV ingestion.

Each class owns one prototype vector per modality, drawn from a per-class
seeded stream so that both modalities carry information about the same label.
Samples are prototype + isotropic Gaussian noise. Per-client class mixtures
come from a Dirichlet draw, so small skew produces heavily imbalanced (and
possibly missing) classes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .errors import ConfigError, IngestionError
from .models import Modality


@dataclass
class SyntheticSpec:
    n_classes: int
    modalities: List[Modality]
    noise_std: float
    samples_per_class: int  # per client, before the Dirichlet reshuffle
    seed: int
    test_fraction: float = 0.2
    min_separation: float = 4.0  # x noise_std, floor on prototype spacing

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if not self.modalities:
            raise ConfigError("need at least one modality")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be >= 1")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must be in (0, 1)")

    def prototypes(self) -> Dict[str, np.ndarray]:
        """(n_classes, dim) prototypes per modality, rescaled up (never down)
        so every modality's min pairwise distance clears the separability floor."""
        protos = {m.name: np.zeros((self.n_classes, m.input_dim)) for m in self.modalities}
        for c in range(self.n_classes):
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, c]))
            for m in self.modalities:
                protos[m.name][c] = rng.normal(0.0, 1.0, size=m.input_dim)
        floor = self.min_separation * self.noise_std
        if floor > 0:
            min_dist = min(_min_pairwise(p) for p in protos.values())
            if min_dist <= 0:
                raise ConfigError("degenerate prototypes (coincident classes)")
            if min_dist <= floor:
                scale = 1.01 * floor / min_dist
                for name in protos:
                    protos[name] *= scale
        return protos


def _min_pairwise(points: np.ndarray) -> float:
    n = points.shape[0]
    best = np.inf
    for a in range(n):
        for b in range(a + 1, n):
            best = min(best, float(np.linalg.norm(points[a] - points[b])))
    return best


@dataclass
class ClientDataset:
    client_id: int
    modalities: List[Modality]  # S_i only
    features: Dict[str, np.ndarray]  # (n, dim) per modality name
    labels: np.ndarray  # (n,)
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        names = {m.name for m in self.modalities}
        if set(self.features) != names:
            raise ConfigError(
                f"features cover {sorted(self.features)}, client holds {sorted(names)}"
            )
        overlap = set(self.train_idx) & set(self.test_idx)
        if overlap:
            raise ConfigError(f"train/test overlap at indices {sorted(overlap)[:5]}")

    @property
    def n_samples(self) -> int:
        return int(self.labels.shape[0])

    def batch(self, idx: np.ndarray) -> tuple[Dict[str, np.ndarray], np.ndarray]:
        return {k: v[idx] for k, v in self.features.items()}, self.labels[idx]

    def test_batch(self) -> tuple[Dict[str, np.ndarray], np.ndarray]:
        return self.batch(self.test_idx)


def _class_counts(n_classes: int, total: int, skew: float, rng: np.random.Generator) -> np.ndarray:
    """Largest-remainder rounding of a Dirichlet(skew) mixture to integer counts."""
    props = rng.dirichlet(np.full(n_classes, skew))
    raw = props * total
    counts = np.floor(raw).astype(int)
    remainder = total - counts.sum()
    order = np.argsort(-(raw - counts))
    counts[order[:remainder]] += 1
    return counts


def _split_indices(labels: np.ndarray, test_fraction: float,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """80/20-style split, stratified per class where the class has >= 2 samples."""
    train, test = [], []
    for m in np.unique(labels):
        idx = np.flatnonzero(labels == m)
        idx = rng.permutation(idx)
        n_test = int(round(test_fraction * idx.size))
        n_test = min(n_test, idx.size - 1)  # keep at least one training sample
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def generate(
    spec: SyntheticSpec,
    assignment: Sequence[Sequence[str]],
    skew: float,
) -> List[ClientDataset]:
    """One dataset per client; client i holds only the modalities in assignment[i]."""
    if skew <= 0:
        raise ConfigError(f"skew must be > 0, got {skew}")
    by_name = {m.name: m for m in spec.modalities}
    for i, names in enumerate(assignment):
        unknown = set(names) - set(by_name)
        if not names or unknown:
            raise ConfigError(f"client {i} assignment {list(names)} invalid "
                              f"(unknown: {sorted(unknown)})")
    protos = spec.prototypes()
    total = spec.samples_per_class * spec.n_classes
    datasets = []
    for i, names in enumerate(assignment):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1 + i]))
        counts = _class_counts(spec.n_classes, total, skew, rng)
        labels = np.repeat(np.arange(spec.n_classes), counts)
        mods = [by_name[n] for n in names]
        features = {}
        for m in mods:
            base = protos[m.name][labels]
            noise = rng.normal(0.0, spec.noise_std, size=base.shape)
            features[m.name] = base + noise
        train_idx, test_idx = _split_indices(labels, spec.test_fraction, rng)
        datasets.append(ClientDataset(i, mods, features, labels, train_idx, test_idx))
    return datasets


@dataclass
class CsvSchema:
    modalities: List[Modality]
    n_classes: int

    def header(self) -> List[str]:
        cols = ["label"]
        for m in self.modalities:
            cols += [f"{m.name}_{k}" for k in range(m.input_dim)]
        return cols


def write_csv(path, features: Dict[str, np.ndarray], labels: np.ndarray,
              schema: CsvSchema) -> None:
    """Features are written at float32 precision (shortest round-trip repr)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(schema.header())
        for r in range(labels.shape[0]):
            row = [str(int(labels[r]))]
            for m in schema.modalities:
                # str() of a float32 is its shortest repr, so parsing the file
                # back recovers the exact float32 value
                row += [str(np.float32(x)) for x in features[m.name][r]]
            writer.writerow(row)


def load_csv(path, schema: CsvSchema) -> tuple[Dict[str, np.ndarray], np.ndarray]:
    """Parse a feature CSV back into per-modality arrays; errors cite the line."""
    expected = schema.header()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        if header != expected:
            raise IngestionError(f"{path}: header {header[:4]}... does not match schema")
        labels = []
        columns: List[List[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise IngestionError(
                    f"{path}:{line_no}: expected {len(expected)} columns, got {len(row)}"
                )
            try:
                label = int(row[0])
            except ValueError:
                raise IngestionError(f"{path}:{line_no}: bad label {row[0]!r}") from None
            if not 0 <= label < schema.n_classes:
                raise IngestionError(
                    f"{path}:{line_no}: unknown label {label} (n_classes={schema.n_classes})"
                )
            try:
                values = [float(x) for x in row[1:]]
            except ValueError:
                raise IngestionError(f"{path}:{line_no}: non-numeric feature") from None
            labels.append(label)
            columns.append(values)
    data = np.array(columns, dtype=np.float64) if columns else np.zeros((0, len(expected) - 1))
    features = {}
    offset = 0
    for m in schema.modalities:
        features[m.name] = data[:, offset:offset + m.input_dim]
        offset += m.input_dim
    return features, np.array(labels, dtype=np.int64)


def dataset_from_csv(path, schema: CsvSchema, client_id: int = 0,
                     test_fraction: float = 0.2, seed: int = 0) -> ClientDataset:
    features, labels = load_csv(path, schema)
    if labels.size == 0:
        raise IngestionError(f"{path}: no data rows")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = _split_indices(labels, test_fraction, rng)
    return ClientDataset(client_id, schema.modalities, features, labels, train_idx, test_idx)
