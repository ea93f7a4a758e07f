"""Per-class consensus targets: arithmetic mean or geometric median.

Squared-L2 pulls admit the arithmetic mean as the exact minimizer of the
summed distances; plain L2 pulls are minimized by the geometric median,
computed here with a Weiszfeld fixed-point iteration hardened against the
classical singularity at data points (when the iterate lands on a point,
the step blends the pull of the remaining points against the coincident
multiplicity; if the residual pull cannot overcome it, that point is the
minimizer and is returned).

Contributors are always aggregated in ascending sender order so that the
result is independent of delivery order; the parameter-server path and the
decentralized path over a complete graph are then identical bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence

import numpy as np

from .errors import ProtocolError
from .latent import DistanceKind, LatentPacket


@dataclass
class WeiszfeldConfig:
    max_iters: int = 100
    tolerance: float = 1e-9  # iterate displacement
    anchor_epsilon: float = 1e-12

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")


@dataclass
class ConsensusTarget:
    class_id: int
    vector: np.ndarray
    contributor_count: int


def mean_target(points: Sequence[np.ndarray]) -> np.ndarray:
    if len(points) == 0:
        raise ValueError("no contributors for mean target")
    return np.mean(np.stack(points), axis=0)


def l1_objective(x: np.ndarray, points: np.ndarray) -> float:
    return float(np.linalg.norm(points - x, axis=1).sum())


def geometric_median(points: Sequence[np.ndarray], cfg: WeiszfeldConfig) -> np.ndarray:
    median, _ = geometric_median_trace(points, cfg)
    return median


def geometric_median_trace(
    points: Sequence[np.ndarray], cfg: WeiszfeldConfig
) -> tuple[np.ndarray, List[float]]:
    """Weiszfeld iteration; also returns the objective value at each iterate."""
    if len(points) == 0:
        raise ValueError("no contributors for geometric median")
    pts = np.stack([np.asarray(p, dtype=np.float64) for p in points])
    n = pts.shape[0]
    if n == 1:
        return pts[0].copy(), [0.0]
    if n == 2:
        # every point of the segment minimizes; fix the symmetric choice
        mid = 0.5 * (pts[0] + pts[1])
        return mid, [l1_objective(mid, pts)]

    x = np.median(pts, axis=0)  # robust start
    trace = [l1_objective(x, pts)]
    for _ in range(cfg.max_iters):
        dists = np.linalg.norm(pts - x, axis=1)
        coincident = dists < cfg.anchor_epsilon
        if coincident.any():
            eta = float(coincident.sum())
            apart = ~coincident
            if not apart.any():
                break  # all points collapse onto the iterate
            inv = 1.0 / dists[apart]
            pull = ((pts[apart] - x) * inv[:, None]).sum(axis=0)
            pull_norm = float(np.linalg.norm(pull))
            if pull_norm <= eta:
                break  # the data point itself is optimal
            t_map = (pts[apart] * inv[:, None]).sum(axis=0) / inv.sum()
            blend = min(1.0, eta / pull_norm)
            x_new = (1.0 - blend) * t_map + blend * x
        else:
            inv = 1.0 / dists
            x_new = (pts * inv[:, None]).sum(axis=0) / inv.sum()
        trace.append(l1_objective(x_new, pts))
        assert trace[-1] <= trace[-2] + 1e-9 * max(1.0, trace[-2]), "objective increased"
        moved = float(np.linalg.norm(x_new - x))
        x = x_new
        if moved < cfg.tolerance:
            break
    return x, trace


def _aggregate(points: Sequence[np.ndarray], kind: DistanceKind, cfg: WeiszfeldConfig) -> np.ndarray:
    if kind is DistanceKind.SQUARED_L2:
        return mean_target(points)
    return geometric_median(points, cfg)


def _targets_from_packets(
    packets: List[LatentPacket], kind: DistanceKind, cfg: WeiszfeldConfig
) -> List[ConsensusTarget]:
    ordered = sorted(packets, key=lambda p: p.sender)
    classes = sorted({m for p in ordered for m in p.entries})
    targets = []
    for m in classes:
        contributors = [p.entries[m] for p in ordered if m in p.entries]
        targets.append(ConsensusTarget(m, _aggregate(contributors, kind, cfg), len(contributors)))
    return targets


def _check_round(packets: Iterable[LatentPacket]) -> None:
    rounds = {p.round for p in packets}
    if len(rounds) > 1:
        raise ProtocolError(f"packets from mixed rounds {sorted(rounds)}")
    dims = {p.dim for p in packets}
    if len(dims) > 1:
        raise ProtocolError(f"packets with mixed latent dims {sorted(dims)}")


def decentralized_targets(
    self_packet: LatentPacket,
    neighbor_packets: List[LatentPacket],
    kind: DistanceKind,
    cfg: WeiszfeldConfig,
) -> List[ConsensusTarget]:
    """Per-class targets over the client's own packet plus its inbox."""
    packets = [self_packet] + list(neighbor_packets)
    _check_round(packets)
    return _targets_from_packets(packets, kind, cfg)


def ps_global_targets(
    all_packets: List[LatentPacket], kind: DistanceKind, cfg: WeiszfeldConfig
) -> List[ConsensusTarget]:
    """Server-side targets over every client; the star acts as a complete graph."""
    senders = [p.sender for p in all_packets]
    if len(set(senders)) != len(senders):
        raise ProtocolError(f"duplicate sender in upload set: {sorted(senders)}")
    _check_round(all_packets)
    return _targets_from_packets(list(all_packets), kind, cfg)


def targets_as_map(targets: List[ConsensusTarget]) -> Dict[int, np.ndarray]:
    """Immutable class->vector view used by the update rules (stop-gradient)."""
    out = {}
    for t in targets:
        vec = np.array(t.vector, dtype=np.float64)
        vec.flags.writeable = False
        out[t.class_id] = vec
    return out
