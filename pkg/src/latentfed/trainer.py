"""Round loop: local weight step, latent statistics exchange, consensus
targets, and inner projection updates.

Per round (default ordering) each client takes one SGD step on its private
loss plus the alignment penalty against the *previous* round's targets
(received vectors are constants), forms per-class projected means from the
same forward pass, exchanges them, aggregates fresh targets, and then takes
``p_steps`` projection-only steps toward those targets with the batch
statistics held fixed. ``exchange_first`` flips to the alternative reading
where the weight step already sees the current round's targets.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional

import numpy as np

from .consensus import (
    ConsensusTarget,
    WeiszfeldConfig,
    decentralized_targets,
    ps_global_targets,
    targets_as_map,
)
from .data import ClientDataset
from .errors import ConfigError, NumericBlowupError
from .latent import (
    ClassStats,
    DistanceKind,
    Projection,
    class_means,
    expand_mean_gradient,
    make_packet,
    regularizer_terms,
    target_wire_size,
)
from .models import ClientModel
from .netsim import (
    GRAPH,
    PARAMETER_SERVER,
    AdversarySpec,
    CommLedger,
    Topology,
    exchange_round,
)
from .numcore import softmax_cross_entropy

METHOD_LATENT = "latent_consensus"
METHOD_LOCAL = "local_only"
METHOD_FEDAVG = "modality_fedavg"
WIRE_BYTES_PER_PARAM = 4  # parameters travel at float32 precision


@dataclass
class TrainConfig:
    rounds: int = 250
    eta_w: float = 1e-3
    eta_p: float = 1e-3
    lam: float = 0.4
    p_steps: int = 10
    batch_size: int = 32
    distance: DistanceKind = DistanceKind.SQUARED_L2
    consensus_mode: str = "decentralized"  # or "ps"
    eval_every: int = 10
    seed: int = 0
    local_steps: int = 1
    exchange_first: bool = False
    weiszfeld: WeiszfeldConfig = field(default_factory=WeiszfeldConfig)

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.eta_w <= 0 or self.eta_p <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.p_steps < 1:
            raise ConfigError("p_steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.local_steps < 1:
            raise ConfigError("local_steps must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.consensus_mode not in ("decentralized", "ps"):
            raise ConfigError(f"unknown consensus mode {self.consensus_mode!r}")


class Client:
    """One participant: model, projection, private data, private RNG streams."""

    def __init__(self, client_id: int, model: ClientModel, projection: Projection,
                 dataset: ClientDataset, batch_rng: np.random.Generator):
        if projection.local_dim != model.tap_dim:
            raise ConfigError(
                f"client {client_id}: projection expects {projection.local_dim} "
                f"features, model tap is {model.tap_dim}"
            )
        self.client_id = client_id
        self.model = model
        self.projection = projection
        self.dataset = dataset
        self.batch_rng = batch_rng
        self._perm = np.empty(0, dtype=int)
        self._pos = 0

    def next_batch(self, batch_size: int) -> np.ndarray:
        """Sample without replacement, reshuffling once an epoch is exhausted."""
        train = self.dataset.train_idx
        size = min(batch_size, train.size)
        if self._pos + size > self._perm.size:
            self._perm = self.batch_rng.permutation(train)
            self._pos = 0
        out = self._perm[self._pos:self._pos + size]
        self._pos += size
        return out


@dataclass
class StepResult:
    train_loss: float
    reg_loss: float
    stats: List[ClassStats]  # batch class means at the pre-update weights


def local_weight_step(
    client: Client,
    feats: Dict[str, np.ndarray],
    labels: np.ndarray,
    targets: Optional[Mapping[int, np.ndarray]],
    cfg: TrainConfig,
) -> StepResult:
    """One SGD step on task loss + lambda * alignment penalty (targets constant).

    The alignment gradient reaches the weights only through the tap, spread
    over the batch rows by the exact chain rule through the per-class means;
    head parameters see the task loss alone.
    """
    logits, tap = client.model.forward_full(feats)
    loss, dlogits = softmax_cross_entropy(logits, labels)
    stats = class_means(tap.features, labels)
    reg_value = 0.0
    dtap = np.zeros_like(tap.features)
    if cfg.lam > 0 and targets:
        reg_value, _, dmeans = regularizer_terms(
            client.projection, stats, targets, cfg.distance
        )
        dtap = cfg.lam * expand_mean_gradient(dmeans, labels, tap.features.shape[1])
    grads = client.model.backward_composite(tap.cache, dlogits, dtap)
    client.model.apply_gradients(grads, cfg.eta_w)
    return StepResult(loss, reg_value, stats)


def projection_step(
    client: Client,
    own_stats: List[ClassStats],
    targets: Optional[Mapping[int, np.ndarray]],
    cfg: TrainConfig,
) -> None:
    """p_steps inner updates of P toward fixed targets, stats held fixed."""
    if not targets or cfg.lam == 0:
        return
    for _ in range(cfg.p_steps):
        _, d_proj, _ = regularizer_terms(client.projection, own_stats, targets, cfg.distance)
        client.projection.matrix -= cfg.eta_p * cfg.lam * d_proj


@dataclass
class RoundRecord:
    round: int
    client_id: int
    train_loss: float
    reg_loss: float
    test_acc: Optional[float]
    cum_uplink_bytes: int

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "client_id": self.client_id,
            "train_loss": self.train_loss,
            "reg_loss": self.reg_loss,
            "test_acc": self.test_acc,
            "cum_uplink_bytes": self.cum_uplink_bytes,
        }


@dataclass
class RoundView:
    """Snapshot handed to an observer after each round's consensus step."""

    round: int
    packets: list
    targets: List[Optional[Dict[int, np.ndarray]]]
    clients: List[Client]


@dataclass
class RunResult:
    records: List[RoundRecord]
    ledger: CommLedger


def evaluate(client: Client) -> float:
    """Test accuracy; argmax breaks ties toward the lowest class index."""
    feats, labels = client.dataset.test_batch()
    if labels.size == 0:
        raise ConfigError(f"client {client.client_id} has an empty test split")
    logits, _ = client.model.forward_full(feats)
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def _validate_run(topology: Optional[Topology], clients: List[Client],
                  cfg: TrainConfig, method: str) -> None:
    if not clients:
        raise ConfigError("no clients")
    for i, c in enumerate(clients):
        if c.client_id != i:
            raise ConfigError(f"clients must be ordered by id, slot {i} holds {c.client_id}")
    dims = {c.projection.shared_dim for c in clients}
    if len(dims) != 1:
        raise ConfigError(f"clients disagree on the shared latent dim: {sorted(dims)}")
    n_classes = {c.model.n_classes for c in clients}
    if len(n_classes) != 1:
        raise ConfigError(f"clients disagree on the class count: {sorted(n_classes)}")
    if method == METHOD_LATENT:
        if topology is None:
            raise ConfigError("latent consensus requires a topology")
        if topology.n_clients != len(clients):
            raise ConfigError(
                f"topology has {topology.n_clients} clients, got {len(clients)}"
            )
        if cfg.consensus_mode == "ps" and topology.mode != PARAMETER_SERVER:
            raise ConfigError("consensus_mode 'ps' requires a star_ps topology")
        if cfg.consensus_mode == "decentralized" and topology.mode != GRAPH:
            raise ConfigError("decentralized consensus requires a graph topology")


def _check_finite(value: float, round_index: int, client_id: int) -> None:
    if not np.isfinite(value):
        raise NumericBlowupError(round_index, client_id)


def run(
    topology: Optional[Topology],
    clients: List[Client],
    cfg: TrainConfig,
    adversary: Optional[AdversarySpec] = None,
    method: str = METHOD_LATENT,
    observer: Optional[Callable[[RoundView], None]] = None,
) -> RunResult:
    """Execute cfg.rounds synchronous rounds; deterministic given seeds.

    method "local_only" runs the same loop with communication (and the
    alignment penalty) disabled entirely, so its ledger stays at zero bytes.
    """
    if method not in (METHOD_LATENT, METHOD_LOCAL):
        raise ConfigError(f"unknown method {method!r} (fedavg has its own entry point)")
    _validate_run(topology, clients, cfg, method)
    n = len(clients)
    ledger = CommLedger(n)
    records: List[RoundRecord] = []
    prev_targets: List[Optional[Dict[int, np.ndarray]]] = [None] * n

    for t in range(cfg.rounds):
        batches = []
        for c in clients:
            idx = c.next_batch(cfg.batch_size)
            batches.append(c.dataset.batch(idx))

        if cfg.exchange_first and method == METHOD_LATENT:
            # alternative ordering: this round's targets feed the weight step
            pre_stats = []
            for c, (feats, labels) in zip(clients, batches):
                _, tap = c.model.forward_full(feats)
                pre_stats.append(class_means(tap.features, labels))
            step_targets, packets = _exchange_and_aggregate(
                topology, clients, pre_stats, t, cfg, adversary, ledger
            )
        else:
            step_targets, packets = prev_targets, None

        round_stats: List[List[ClassStats]] = []
        losses: List[StepResult] = []
        for c, (feats, labels) in zip(clients, batches):
            result = local_weight_step(c, feats, labels, step_targets[c.client_id], cfg)
            _check_finite(result.train_loss, t, c.client_id)
            _check_finite(result.reg_loss, t, c.client_id)
            for _ in range(cfg.local_steps - 1):
                extra_idx = c.next_batch(cfg.batch_size)
                extra = c.dataset.batch(extra_idx)
                more = local_weight_step(c, extra[0], extra[1],
                                         step_targets[c.client_id], cfg)
                _check_finite(more.train_loss, t, c.client_id)
            round_stats.append(result.stats)
            losses.append(result)

        if method == METHOD_LATENT:
            if cfg.exchange_first:
                new_targets = step_targets
            else:
                new_targets, packets = _exchange_and_aggregate(
                    topology, clients, round_stats, t, cfg, adversary, ledger
                )
            for c, stats in zip(clients, round_stats):
                projection_step(c, stats, new_targets[c.client_id], cfg)
            prev_targets = new_targets
        else:
            new_targets = [None] * n

        if observer is not None:
            if packets is None:
                packets = [
                    make_packet(c.client_id, t, c.projection, stats)
                    for c, stats in zip(clients, round_stats)
                ]
            observer(RoundView(t, packets, new_targets, clients))

        eval_round = t % cfg.eval_every == 0 or t == cfg.rounds - 1
        for c, result in zip(clients, losses):
            acc = evaluate(c) if eval_round else None
            records.append(RoundRecord(
                round=t,
                client_id=c.client_id,
                train_loss=result.train_loss,
                reg_loss=result.reg_loss,
                test_acc=acc,
                cum_uplink_bytes=ledger.cumulative_uplink(c.client_id),
            ))
    return RunResult(records, ledger)


def _exchange_and_aggregate(
    topology: Topology,
    clients: List[Client],
    stats: List[List[ClassStats]],
    round_index: int,
    cfg: TrainConfig,
    adversary: Optional[AdversarySpec],
    ledger: CommLedger,
) -> tuple[List[Optional[Dict[int, np.ndarray]]], list]:
    """Form packets, deliver them, and aggregate per-client consensus targets."""
    packets = [
        make_packet(c.client_id, round_index, c.projection, s)
        for c, s in zip(clients, stats)
    ]
    delivery = exchange_round(topology, packets, adversary, ledger)
    targets: List[Optional[Dict[int, np.ndarray]]] = []
    if cfg.consensus_mode == "ps":
        global_targets = ps_global_targets(delivery.server_packets, cfg.distance, cfg.weiszfeld)
        tmap = targets_as_map(global_targets)
        nbytes = target_wire_size(packets[0].dim, len(global_targets))
        for i in range(len(clients)):
            ledger.charge_downlink(round_index, i, nbytes)
            targets.append(tmap)
    else:
        for i, c in enumerate(clients):
            local = decentralized_targets(
                packets[i], delivery.inboxes[i], cfg.distance, cfg.weiszfeld
            )
            targets.append(targets_as_map(local))
    return targets, packets


def _group_key(client: Client) -> frozenset:
    return frozenset(client.model.arch.modality_names)


def _arch_signature(client: Client):
    arch = client.model.arch
    return (
        tuple(sorted((m.name, m.input_dim) for m in arch.modalities)),
        tuple((name, tuple(arch.encoders[name])) for name in sorted(arch.encoders)),
        tuple(arch.trunk),
        tuple(arch.head),
    )


def run_modality_fedavg(clients: List[Client], cfg: TrainConfig) -> RunResult:
    """Parameter averaging restricted to clients with identical modality sets.

    Each round every client takes its local SGD step(s), then each group
    replaces its members' parameters by the group mean. The ledger charges
    4 bytes per parameter per client per round in both directions.
    """
    _validate_run(None, clients, cfg, METHOD_FEDAVG)
    groups: Dict[frozenset, List[Client]] = {}
    for c in clients:
        groups.setdefault(_group_key(c), []).append(c)
    for key, members in groups.items():
        signatures = {_arch_signature(c) for c in members}
        if len(signatures) != 1:
            raise ConfigError(
                f"modality group {sorted(key)} mixes architectures; averaging undefined"
            )
    ledger = CommLedger(len(clients))
    records: List[RoundRecord] = []
    for t in range(cfg.rounds):
        losses = []
        for c in clients:
            idx = c.next_batch(cfg.batch_size)
            feats, labels = c.dataset.batch(idx)
            result = local_weight_step(c, feats, labels, None, cfg)
            _check_finite(result.train_loss, t, c.client_id)
            for _ in range(cfg.local_steps - 1):
                extra_idx = c.next_batch(cfg.batch_size)
                extra = c.dataset.batch(extra_idx)
                local_weight_step(c, extra[0], extra[1], None, cfg)
            losses.append(result)
        for members in groups.values():
            stacks = [c.model.get_parameters() for c in members]
            mean = [np.mean(np.stack(arrs), axis=0) for arrs in zip(*stacks)]
            for c in members:
                c.model.set_parameters(mean)
        for c in clients:
            nbytes = WIRE_BYTES_PER_PARAM * c.model.param_count()
            ledger.charge_uplink(t, c.client_id, nbytes)
            ledger.charge_downlink(t, c.client_id, nbytes)
        eval_round = t % cfg.eval_every == 0 or t == cfg.rounds - 1
        for c, result in zip(clients, losses):
            acc = evaluate(c) if eval_round else None
            records.append(RoundRecord(
                round=t,
                client_id=c.client_id,
                train_loss=result.train_loss,
                reg_loss=0.0,
                test_acc=acc,
                cum_uplink_bytes=ledger.cumulative_uplink(c.client_id),
            ))
    return RunResult(records, ledger)


def run_baseline(kind: str, topology: Optional[Topology], clients: List[Client],
                 cfg: TrainConfig) -> RunResult:
    if kind == METHOD_LOCAL:
        return run(topology, clients, cfg, method=METHOD_LOCAL)
    if kind == METHOD_FEDAVG:
        return run_modality_fedavg(clients, cfg)
    raise ConfigError(f"unknown baseline {kind!r}")
