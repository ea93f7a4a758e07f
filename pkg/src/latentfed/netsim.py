"""Synchronous round-based message passing with byte-exact accounting.

Graph mode delivers every client's packet to its neighbors; parameter-server
mode collects all packets for a server-side aggregation (the inboxes stay
empty and the broadcast is charged separately). Byzantine senders have their
packet corrupted before delivery, so receivers (and the server) only ever see
the corrupted version; the sender itself keeps using its honest copy.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, ProtocolError
from .latent import LatentPacket

GRAPH = "graph"
PARAMETER_SERVER = "parameter_server"

ATTACK_GAUSSIAN = "gaussian_noise"
ATTACK_SIGN_FLIP = "sign_flip"
ATTACK_CONSTANT = "constant_vector"
ATTACKS = (ATTACK_GAUSSIAN, ATTACK_SIGN_FLIP, ATTACK_CONSTANT)


@dataclass
class Topology:
    mode: str
    n_clients: int
    neighbors: List[List[int]]  # sorted adjacency lists; unused in PS mode

    def __post_init__(self):
        if self.mode not in (GRAPH, PARAMETER_SERVER):
            raise ConfigError(f"unknown topology mode {self.mode!r}")
        if self.n_clients < 1:
            raise ConfigError("topology needs at least one client")
        if len(self.neighbors) != self.n_clients:
            raise ConfigError("adjacency length != client count")
        for i, ns in enumerate(self.neighbors):
            if i in ns:
                raise ConfigError(f"self-loop at client {i}")
            for j in ns:
                if not 0 <= j < self.n_clients:
                    raise ConfigError(f"neighbor {j} of client {i} out of range")
                if i not in self.neighbors[j]:
                    raise ConfigError(f"asymmetric edge ({i}, {j})")

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])


def make_topology(kind: str, n: int, seed: int = 0, p: float = 0.5) -> Topology:
    """ring | complete | erdos_renyi | star_ps; erdos_renyi resamples until connected."""
    if n < 2:
        raise ConfigError(f"need at least 2 clients, got {n}")
    if kind == "ring":
        neighbors = [sorted({(i - 1) % n, (i + 1) % n}) for i in range(n)]
        return Topology(GRAPH, n, neighbors)
    if kind == "complete":
        neighbors = [[j for j in range(n) if j != i] for i in range(n)]
        return Topology(GRAPH, n, neighbors)
    if kind == "star_ps":
        return Topology(PARAMETER_SERVER, n, [[] for _ in range(n)])
    if kind == "erdos_renyi":
        if not 0 < p <= 1:
            raise ConfigError(f"edge probability must be in (0, 1], got {p}")
        rng = np.random.default_rng(seed)
        for _ in range(100):
            neighbors: List[List[int]] = [[] for _ in range(n)]
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.random() < p:
                        neighbors[i].append(j)
                        neighbors[j].append(i)
            if _connected(neighbors):
                return Topology(GRAPH, n, [sorted(ns) for ns in neighbors])
        raise ConfigError(f"could not sample a connected graph with p={p} in 100 tries")
    raise ConfigError(f"unknown topology kind {kind!r}")


def _connected(neighbors: List[List[int]]) -> bool:
    n = len(neighbors)
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in neighbors[i]:
            if j not in seen:
                seen.add(j)
                frontier.append(j)
    return len(seen) == n


@dataclass
class AdversarySpec:
    byzantine_ids: frozenset
    attack: str = ATTACK_GAUSSIAN
    noise_std: Optional[float] = None  # None -> 10x the honest entries' std
    constant: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.byzantine_ids = frozenset(int(i) for i in self.byzantine_ids)
        if self.attack not in ATTACKS:
            raise ConfigError(f"unknown attack {self.attack!r}, choose from {ATTACKS}")

    def validate_against(self, n_clients: int) -> None:
        if any(not 0 <= i < n_clients for i in self.byzantine_ids):
            raise ConfigError("byzantine id out of range")
        if len(self.byzantine_ids) >= n_clients:
            raise ConfigError("all clients byzantine; gamma must be < N")

    def corrupt(self, packet: LatentPacket) -> LatentPacket:
        """Corrupted copy of a packet; deterministic in (seed, round, sender)."""
        if self.attack == ATTACK_SIGN_FLIP:
            entries = {m: -v for m, v in packet.entries.items()}
        elif self.attack == ATTACK_CONSTANT:
            entries = {m: np.full(packet.dim, self.constant) for m in packet.entries}
        else:
            rng = np.random.default_rng(
                np.random.SeedSequence([self.seed, packet.round, packet.sender])
            )
            if self.noise_std is not None:
                sigma = self.noise_std
            else:
                values = np.concatenate(list(packet.entries.values())) if packet.entries else np.zeros(1)
                spread = float(values.std())
                sigma = 10.0 * spread if spread > 0 else 10.0
            entries = {
                m: v + rng.normal(0.0, sigma, size=packet.dim)
                for m, v in packet.entries.items()
            }
        return LatentPacket(packet.sender, packet.round, packet.dim, entries)


class CommLedger:
    """Cumulative uplink/downlink byte counts, one row per (round, client)."""

    def __init__(self, n_clients: int):
        self.n_clients = n_clients
        self.uplink: Dict[int, List[int]] = {}
        self.downlink: Dict[int, List[int]] = {}

    def _row(self, table: Dict[int, List[int]], round_index: int) -> List[int]:
        if round_index not in table:
            table[round_index] = [0] * self.n_clients
        return table[round_index]

    def charge_uplink(self, round_index: int, client: int, nbytes: int) -> None:
        self._row(self.uplink, round_index)[client] += int(nbytes)

    def charge_downlink(self, round_index: int, client: int, nbytes: int) -> None:
        self._row(self.downlink, round_index)[client] += int(nbytes)

    def rounds(self) -> List[int]:
        return sorted(set(self.uplink) | set(self.downlink))

    def round_uplink(self, round_index: int, client: int) -> int:
        return self.uplink.get(round_index, [0] * self.n_clients)[client]

    def cumulative_uplink(self, client: int) -> int:
        return sum(row[client] for row in self.uplink.values())

    def cumulative_downlink(self, client: int) -> int:
        return sum(row[client] for row in self.downlink.values())

    def total_uplink(self) -> int:
        return sum(self.cumulative_uplink(i) for i in range(self.n_clients))

    def total_uplink_through(self, round_index: int) -> int:
        return sum(
            sum(row) for r, row in self.uplink.items() if r <= round_index
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("round,client_id,uplink_bytes,downlink_bytes,cumulative_uplink\n")
        running = [0] * self.n_clients
        for r in self.rounds():
            up = self.uplink.get(r, [0] * self.n_clients)
            down = self.downlink.get(r, [0] * self.n_clients)
            for i in range(self.n_clients):
                running[i] += up[i]
                buf.write(f"{r},{i},{up[i]},{down[i]},{running[i]}\n")
        return buf.getvalue()


def charge_uplink(ledger: CommLedger, round_index: int, client: int,
                  packet: LatentPacket) -> None:
    ledger.charge_uplink(round_index, client, packet.wire_size())


@dataclass
class Delivery:
    """Result of one exchange: per-client inboxes (graph) or the server inbox (PS)."""

    inboxes: List[List[LatentPacket]]
    server_packets: Optional[List[LatentPacket]] = None


def exchange_round(
    topology: Topology,
    packets: Sequence[LatentPacket],
    adversary: Optional[AdversarySpec] = None,
    ledger: Optional[CommLedger] = None,
) -> Delivery:
    """Deliver one synchronous round of packets, corrupting Byzantine senders first.

    Uplink is charged once per client at its serialized packet size; graph-mode
    downlink is the byte sum of each inbox. PS-mode downlink is charged by the
    caller once the broadcast target set is known.
    """
    if len(packets) != topology.n_clients:
        raise ProtocolError(
            f"need one packet per client ({topology.n_clients}), got {len(packets)}"
        )
    rounds = {p.round for p in packets}
    if len(rounds) != 1:
        raise ProtocolError(f"packets from mixed rounds {sorted(rounds)}")
    round_index = rounds.pop()
    for i, p in enumerate(packets):
        if p.sender != i:
            raise ProtocolError(f"packet at slot {i} claims sender {p.sender}")
    if adversary is not None:
        adversary.validate_against(topology.n_clients)
        outgoing = [
            adversary.corrupt(p) if p.sender in adversary.byzantine_ids else p
            for p in packets
        ]
    else:
        outgoing = list(packets)

    if ledger is not None:
        for i, p in enumerate(outgoing):
            ledger.charge_uplink(round_index, i, p.wire_size())

    if topology.mode == PARAMETER_SERVER:
        return Delivery([[] for _ in range(topology.n_clients)], outgoing)

    inboxes = []
    for i in range(topology.n_clients):
        inbox = [outgoing[j] for j in topology.neighbors[i]]
        if ledger is not None:
            ledger.charge_downlink(round_index, i, sum(p.wire_size() for p in inbox))
        inboxes.append(inbox)
    return Delivery(inboxes)
