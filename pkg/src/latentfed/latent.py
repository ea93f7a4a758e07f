"""Shared latent space: projections, per-class statistics, and the wire format.

The only object that ever crosses the simulated network is a LatentPacket:
one d-dimensional vector per class present in the sender's minibatch. In
memory the math is float64; entries are quantized to float32 at packet
construction so consensus operates on exactly the values a receiver would
decode from the wire.
"""
from __future__ import annotations

import enum
import struct
import warnings
from dataclasses import dataclass
from typing import Dict, List, Mapping

import numpy as np

from .errors import ProtocolError, ShapeError

# sender u16 | round u32 | d u16 | present-class bitmask u64
_HEADER = struct.Struct("<HIHQ")
HEADER_BYTES = _HEADER.size  # 16
MAX_CLASSES = 64  # bitmask width
FLOAT_BYTES = 4  # float32 on the wire

L2_KINK = 1e-12  # below this distance the L2 subgradient is taken as 0


class DistanceKind(enum.Enum):
    SQUARED_L2 = "sq"
    L2 = "l2"


@dataclass
class Projection:
    """Per-client translator matrix mapping local features into R^d."""

    matrix: np.ndarray  # (shared_dim, local_dim)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ShapeError(f"projection must be 2-D, got shape {self.matrix.shape}")
        d, d_i = self.matrix.shape
        if d > d_i:
            raise ShapeError(f"shared dim {d} exceeds local dim {d_i}")
        if d >= d_i / 2:
            warnings.warn(
                f"projection {d}x{d_i} compresses by less than 2x",
                stacklevel=2,
            )

    @property
    def shared_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def local_dim(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def init(cls, shared_dim: int, local_dim: int, rng: np.random.Generator) -> "Projection":
        # N(0, 1/d_i) entries keep ||P v|| on the scale of ||v|| / sqrt(d_i)
        return cls(rng.normal(0.0, 1.0 / np.sqrt(local_dim), size=(shared_dim, local_dim)))


@dataclass(frozen=True)
class ClassStats:
    class_id: int
    mean_feature: np.ndarray  # (local_dim,)
    sample_count: int


def class_means(features: np.ndarray, labels: np.ndarray) -> List[ClassStats]:
    """Per-class mean rows of a (batch, d_i) feature matrix; absent classes omitted."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or labels.shape != (features.shape[0],):
        raise ShapeError(
            f"features {features.shape} and labels {labels.shape} do not align"
        )
    stats = []
    for m in np.unique(labels):
        rows = features[labels == m]
        stats.append(ClassStats(int(m), rows.mean(axis=0), rows.shape[0]))
    return stats


def project(proj: Projection, stats: List[ClassStats]) -> Dict[int, np.ndarray]:
    """Project each per-class mean into the shared latent space."""
    entries = {}
    for s in stats:
        if s.mean_feature.shape != (proj.local_dim,):
            raise ShapeError(
                f"class {s.class_id} mean has shape {s.mean_feature.shape}, "
                f"projection expects ({proj.local_dim},)"
            )
        entries[s.class_id] = proj.matrix @ s.mean_feature
    return entries


class LatentPacket:
    """One round's per-class projected means from one client.

    Entries are stored at wire precision (float32 values held in float64
    arrays, read-only), keyed by class id in ascending order.
    """

    __slots__ = ("sender", "round", "dim", "entries")

    def __init__(self, sender: int, round_index: int, dim: int,
                 entries: Mapping[int, np.ndarray]):
        self.sender = int(sender)
        self.round = int(round_index)
        self.dim = int(dim)
        quantized = {}
        for m in sorted(entries):
            if not 0 <= m < MAX_CLASSES:
                raise ProtocolError(f"class id {m} outside bitmask range [0, {MAX_CLASSES})")
            vec = np.asarray(entries[m], dtype=np.float64)
            if vec.shape != (dim,):
                raise ShapeError(f"entry for class {m} has shape {vec.shape}, expected ({dim},)")
            vec = vec.astype(np.float32).astype(np.float64)
            vec.flags.writeable = False
            quantized[int(m)] = vec
        self.entries = quantized

    def classes(self) -> List[int]:
        return list(self.entries)

    def wire_size(self) -> int:
        return HEADER_BYTES + FLOAT_BYTES * self.dim * len(self.entries)

    def serialize(self) -> bytes:
        mask = 0
        for m in self.entries:
            mask |= 1 << m
        blob = [_HEADER.pack(self.sender, self.round, self.dim, mask)]
        for m in sorted(self.entries):
            blob.append(self.entries[m].astype("<f4").tobytes())
        return b"".join(blob)

    @classmethod
    def deserialize(cls, data: bytes) -> "LatentPacket":
        if len(data) < HEADER_BYTES:
            raise ProtocolError(f"packet truncated at {len(data)} bytes")
        sender, round_index, dim, mask = _HEADER.unpack_from(data)
        present = [m for m in range(MAX_CLASSES) if mask >> m & 1]
        expected = HEADER_BYTES + FLOAT_BYTES * dim * len(present)
        if len(data) != expected:
            raise ProtocolError(f"packet is {len(data)} bytes, header implies {expected}")
        entries = {}
        offset = HEADER_BYTES
        for m in present:
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
            entries[m] = vec.astype(np.float64)
            offset += FLOAT_BYTES * dim
        return cls(sender, round_index, dim, entries)


def make_packet(sender: int, round_index: int, proj: Projection,
                stats: List[ClassStats]) -> LatentPacket:
    return LatentPacket(sender, round_index, proj.shared_dim, project(proj, stats))


def target_wire_size(dim: int, n_classes_present: int) -> int:
    """Broadcast consensus targets are priced with the packet wire format."""
    return HEADER_BYTES + FLOAT_BYTES * dim * n_classes_present


def phi(kind: DistanceKind, x: np.ndarray, y: np.ndarray) -> float:
    x, y = _aligned(x, y)
    diff = x - y
    if kind is DistanceKind.SQUARED_L2:
        return float(diff @ diff)
    return float(np.sqrt(diff @ diff))


def phi_grad_x(kind: DistanceKind, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of phi in its first argument; L2 uses the 0 subgradient at the kink."""
    x, y = _aligned(x, y)
    diff = x - y
    if kind is DistanceKind.SQUARED_L2:
        return 2.0 * diff
    norm = np.sqrt(diff @ diff)
    if norm <= L2_KINK:
        return np.zeros_like(diff)
    return diff / norm


def _aligned(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"vectors must share a 1-D shape, got {x.shape} and {y.shape}")
    return x, y


def regularizer_terms(
    proj: Projection,
    own_stats: List[ClassStats],
    targets: Mapping[int, np.ndarray],
    kind: DistanceKind,
) -> tuple[float, np.ndarray, Dict[int, np.ndarray]]:
    """Alignment penalty (1/K) * sum_m phi(P vbar_m, target_m) over the K classes
    present on both sides, with chain-rule gradients w.r.t. P and each vbar_m.

    No overlap (K = 0) contributes nothing: value 0, zero dP, empty dmeans.
    """
    overlap = [s for s in own_stats if s.class_id in targets]
    dP = np.zeros_like(proj.matrix)
    dmeans: Dict[int, np.ndarray] = {}
    if not overlap:
        return 0.0, dP, dmeans
    k = len(overlap)
    value = 0.0
    for s in overlap:
        u = proj.matrix @ s.mean_feature
        t = np.asarray(targets[s.class_id], dtype=np.float64)
        if t.shape != (proj.shared_dim,):
            raise ShapeError(
                f"target for class {s.class_id} has shape {t.shape}, "
                f"expected ({proj.shared_dim},)"
            )
        value += phi(kind, u, t)
        g = phi_grad_x(kind, u, t) / k
        dP += np.outer(g, s.mean_feature)
        dmeans[s.class_id] = proj.matrix.T @ g
    return value / k, dP, dmeans


def expand_mean_gradient(
    dmeans: Mapping[int, np.ndarray], labels: np.ndarray, dim: int
) -> np.ndarray:
    """Adjoint of class_means: spread each class's mean-gradient over its rows.

    Row r of class m receives dmeans[m] / n_m (exact chain rule through the
    per-class batch mean); rows of classes without a gradient stay zero.
    """
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], dim))
    for m, g in dmeans.items():
        rows = labels == m
        n = int(rows.sum())
        if n:
            out[rows] = g / n
    return out
