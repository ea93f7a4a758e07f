"""Experiment configs, presets, Monte Carlo execution, and summaries.

A config is one YAML file. Parsing is strict: unknown keys are rejected so a
typo in a hyperparameter cannot silently change a comparison. Every artifact
written under the output directory (records.jsonl, ledger.csv, summary.json,
config.yaml) is a pure function of (config, seed) byte for byte.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml

from .consensus import WeiszfeldConfig
from .data import ClientDataset, SyntheticSpec, generate
from .errors import ConfigError
from .latent import DistanceKind, Projection
from .models import ClientModel, Modality, dense_architecture
from .netsim import ATTACKS, AdversarySpec, CommLedger, Topology, make_topology
from .trainer import (
    METHOD_FEDAVG,
    METHOD_LATENT,
    METHOD_LOCAL,
    Client,
    RoundRecord,
    RunResult,
    TrainConfig,
    run,
    run_modality_fedavg,
)

METHODS = (METHOD_LATENT, METHOD_LOCAL, METHOD_FEDAVG)

# per-client RNG stream tags; keeping them separate makes batch composition
# (hence packet sizes) invariant to model widths and to the latent dim
_STREAM_MODEL = 0
_STREAM_PROJECTION = 1
_STREAM_BATCH = 2
_STREAM_ADVERSARY = 9999


@dataclass
class DataConfig:
    n_classes: int
    noise_std: float
    samples_per_class: int
    skew: float
    seed: int
    modalities: List[Modality]
    test_fraction: float = 0.2


@dataclass
class ClientGroupConfig:
    count: int
    modalities: List[str]
    encoder_hidden: List[int]
    encoder_out: int
    trunk_hidden: List[int]
    tap_dim: int
    head_hidden: List[int] = field(default_factory=list)


@dataclass
class TopologyConfig:
    kind: str  # ring | complete | erdos_renyi | star_ps
    p: float = 0.5


@dataclass
class AdversaryConfig:
    gamma: int
    attack: str = "gaussian_noise"
    noise_std: Optional[float] = None
    constant: float = 0.0


@dataclass
class TrainSection:
    rounds: int = 250
    eta_w: float = 1e-3
    eta_p: float = 1e-3
    lam: float = 0.4
    p_steps: int = 10
    batch_size: int = 32
    distance: str = "sq"
    consensus_mode: str = "decentralized"
    eval_every: int = 10
    local_steps: int = 1
    exchange_first: bool = False


@dataclass
class ExperimentConfig:
    name: str
    method: str
    data: DataConfig
    clients: List[ClientGroupConfig]
    topology: TopologyConfig
    train: TrainSection
    shared_dim: int
    adversary: Optional[AdversaryConfig] = None
    runs: int = 5
    base_seed: int = 0
    thresholds: List[float] = field(default_factory=lambda: [0.4, 0.5, 0.58])
    sweep_dims: Optional[List[int]] = None

    @property
    def n_clients(self) -> int:
        return sum(g.count for g in self.clients)


# ---------------------------------------------------------------------------
# parsing / emission
# ---------------------------------------------------------------------------

def _require(section: dict, keys: Sequence[str], optional: Sequence[str], where: str) -> None:
    unknown = set(section) - set(keys) - set(optional)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    missing = [k for k in keys if k not in section]
    if missing:
        raise ConfigError(f"{where}: missing required key(s) {missing}")


def _parse_data(section: dict) -> DataConfig:
    _require(section, ["n_classes", "noise_std", "samples_per_class", "skew",
                       "seed", "modalities"], ["test_fraction"], "data")
    mods = []
    for m in section["modalities"]:
        _require(m, ["name", "dim"], [], "data.modalities")
        mods.append(Modality(str(m["name"]), int(m["dim"])))
    if len({m.name for m in mods}) != len(mods):
        raise ConfigError("data.modalities: duplicate names")
    cfg = DataConfig(
        n_classes=int(section["n_classes"]),
        noise_std=float(section["noise_std"]),
        samples_per_class=int(section["samples_per_class"]),
        skew=float(section["skew"]),
        seed=int(section["seed"]),
        modalities=mods,
        test_fraction=float(section.get("test_fraction", 0.2)),
    )
    if cfg.skew <= 0:
        raise ConfigError("data.skew must be > 0")
    return cfg


def _parse_group(section: dict, idx: int) -> ClientGroupConfig:
    where = f"clients[{idx}]"
    _require(section, ["count", "modalities", "encoder_hidden", "encoder_out",
                       "trunk_hidden", "tap_dim"], ["head_hidden"], where)
    group = ClientGroupConfig(
        count=int(section["count"]),
        modalities=[str(x) for x in section["modalities"]],
        encoder_hidden=[int(x) for x in section["encoder_hidden"]],
        encoder_out=int(section["encoder_out"]),
        trunk_hidden=[int(x) for x in section["trunk_hidden"]],
        tap_dim=int(section["tap_dim"]),
        head_hidden=[int(x) for x in section.get("head_hidden", [])],
    )
    if group.count < 1:
        raise ConfigError(f"{where}.count must be >= 1")
    if not group.modalities:
        raise ConfigError(f"{where}.modalities must be nonempty")
    return group


def _parse_train(section: dict) -> TrainSection:
    allowed = ["rounds", "eta_w", "eta_p", "lambda", "p_steps", "batch_size",
               "distance", "consensus_mode", "eval_every", "local_steps",
               "exchange_first"]
    _require(section, [], allowed, "train")
    out = TrainSection()
    if "rounds" in section:
        out.rounds = int(section["rounds"])
    if "eta_w" in section:
        out.eta_w = float(section["eta_w"])
    if "eta_p" in section:
        out.eta_p = float(section["eta_p"])
    if "lambda" in section:
        out.lam = float(section["lambda"])
    if "p_steps" in section:
        out.p_steps = int(section["p_steps"])
    if "batch_size" in section:
        out.batch_size = int(section["batch_size"])
    if "distance" in section:
        out.distance = str(section["distance"])
    if "consensus_mode" in section:
        out.consensus_mode = str(section["consensus_mode"])
    if "eval_every" in section:
        out.eval_every = int(section["eval_every"])
    if "local_steps" in section:
        out.local_steps = int(section["local_steps"])
    if "exchange_first" in section:
        out.exchange_first = bool(section["exchange_first"])
    if out.lam < 0:
        raise ConfigError("train.lambda must be >= 0")
    if out.distance not in ("sq", "l2"):
        raise ConfigError(f"train.distance must be 'sq' or 'l2', got {out.distance!r}")
    if out.consensus_mode not in ("decentralized", "ps"):
        raise ConfigError("train.consensus_mode must be 'decentralized' or 'ps'")
    return out


def parse_config_dict(raw: dict, where: str = "config") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping at the top level")
    _require(raw, ["name", "method", "data", "clients", "topology", "train",
                   "shared_dim"],
             ["adversary", "runs", "base_seed", "thresholds", "sweep_dims"], where)
    if raw["method"] not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {raw['method']!r}")
    data = _parse_data(raw["data"])
    groups = [_parse_group(g, i) for i, g in enumerate(raw["clients"])]
    known = {m.name for m in data.modalities}
    for i, g in enumerate(groups):
        unknown = set(g.modalities) - known
        if unknown:
            raise ConfigError(f"clients[{i}]: undeclared modalities {sorted(unknown)}")
    topo_raw = raw["topology"]
    _require(topo_raw, ["kind"], ["p"], "topology")
    topology = TopologyConfig(kind=str(topo_raw["kind"]), p=float(topo_raw.get("p", 0.5)))
    if topology.kind not in ("ring", "complete", "erdos_renyi", "star_ps"):
        raise ConfigError(f"topology.kind {topology.kind!r} unknown")
    train = _parse_train(raw["train"])
    adversary = None
    if raw.get("adversary") is not None:
        adv = raw["adversary"]
        _require(adv, ["gamma"], ["attack", "noise_std", "constant"], "adversary")
        adversary = AdversaryConfig(
            gamma=int(adv["gamma"]),
            attack=str(adv.get("attack", "gaussian_noise")),
            noise_std=None if adv.get("noise_std") is None else float(adv["noise_std"]),
            constant=float(adv.get("constant", 0.0)),
        )
        if adversary.attack not in ATTACKS:
            raise ConfigError(f"adversary.attack must be one of {ATTACKS}")
        if adversary.gamma < 0:
            raise ConfigError("adversary.gamma must be >= 0")
    cfg = ExperimentConfig(
        name=str(raw["name"]),
        method=str(raw["method"]),
        data=data,
        clients=groups,
        topology=topology,
        train=train,
        shared_dim=int(raw["shared_dim"]),
        adversary=adversary,
        runs=int(raw.get("runs", 5)),
        base_seed=int(raw.get("base_seed", 0)),
        thresholds=[float(x) for x in raw.get("thresholds", [0.4, 0.5, 0.58])],
        sweep_dims=(None if raw.get("sweep_dims") is None
                    else [int(x) for x in raw["sweep_dims"]]),
    )
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.n_clients < 1:
        raise ConfigError("no clients configured")
    if cfg.runs < 1:
        raise ConfigError("runs must be >= 1")
    if cfg.shared_dim < 1:
        raise ConfigError("shared_dim must be >= 1")
    for i, g in enumerate(cfg.clients):
        if cfg.shared_dim > g.tap_dim:
            raise ConfigError(
                f"clients[{i}]: shared_dim {cfg.shared_dim} exceeds tap_dim {g.tap_dim}"
            )
    if cfg.data.n_classes > 64:
        raise ConfigError("n_classes must be <= 64 (packet bitmask width)")
    if cfg.adversary is not None and cfg.adversary.gamma >= cfg.n_clients:
        raise ConfigError("adversary.gamma must be < the client count")
    if cfg.method == METHOD_LATENT:
        ps_topology = cfg.topology.kind == "star_ps"
        ps_mode = cfg.train.consensus_mode == "ps"
        if ps_topology != ps_mode:
            raise ConfigError(
                "topology.kind 'star_ps' and train.consensus_mode 'ps' go together"
            )
    if cfg.sweep_dims is not None:
        smallest_tap = min(g.tap_dim for g in cfg.clients)
        for d in cfg.sweep_dims:
            if d < 1 or d > smallest_tap:
                raise ConfigError(f"sweep dim {d} outside [1, {smallest_tap}]")


def parse_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return parse_config_dict(raw, where=str(path))


def apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Apply CLI/API overrides and re-validate; unknown keys are rejected."""
    known = {"seed", "rounds", "lambda", "distance", "topology", "gamma",
             "runs", "method"}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown override(s) {sorted(unknown)}")
    raw = config_to_dict(cfg)
    if overrides.get("seed") is not None:
        raw["base_seed"] = int(overrides["seed"])
    if overrides.get("rounds") is not None:
        raw["train"]["rounds"] = int(overrides["rounds"])
    if overrides.get("lambda") is not None:
        raw["train"]["lambda"] = float(overrides["lambda"])
    if overrides.get("distance") is not None:
        raw["train"]["distance"] = str(overrides["distance"])
    if overrides.get("topology") is not None:
        kind = str(overrides["topology"])
        raw["topology"]["kind"] = kind
        raw["train"]["consensus_mode"] = "ps" if kind == "star_ps" else "decentralized"
    if overrides.get("gamma") is not None:
        gamma = int(overrides["gamma"])
        if gamma == 0:
            raw["adversary"] = None
        elif raw["adversary"] is None:
            raw["adversary"] = {"gamma": gamma}
        else:
            raw["adversary"]["gamma"] = gamma
    if overrides.get("runs") is not None:
        raw["runs"] = int(overrides["runs"])
    if overrides.get("method") is not None:
        raw["method"] = str(overrides["method"])
    return parse_config_dict(raw, where="config(overridden)")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {
        "name": cfg.name,
        "method": cfg.method,
        "data": {
            "n_classes": cfg.data.n_classes,
            "noise_std": cfg.data.noise_std,
            "samples_per_class": cfg.data.samples_per_class,
            "skew": cfg.data.skew,
            "seed": cfg.data.seed,
            "test_fraction": cfg.data.test_fraction,
            "modalities": [{"name": m.name, "dim": m.input_dim} for m in cfg.data.modalities],
        },
        "clients": [
            {
                "count": g.count,
                "modalities": list(g.modalities),
                "encoder_hidden": list(g.encoder_hidden),
                "encoder_out": g.encoder_out,
                "trunk_hidden": list(g.trunk_hidden),
                "tap_dim": g.tap_dim,
                "head_hidden": list(g.head_hidden),
            }
            for g in cfg.clients
        ],
        "topology": {"kind": cfg.topology.kind, "p": cfg.topology.p},
        "train": {
            "rounds": cfg.train.rounds,
            "eta_w": cfg.train.eta_w,
            "eta_p": cfg.train.eta_p,
            "lambda": cfg.train.lam,
            "p_steps": cfg.train.p_steps,
            "batch_size": cfg.train.batch_size,
            "distance": cfg.train.distance,
            "consensus_mode": cfg.train.consensus_mode,
            "eval_every": cfg.train.eval_every,
            "local_steps": cfg.train.local_steps,
            "exchange_first": cfg.train.exchange_first,
        },
        "shared_dim": cfg.shared_dim,
        "adversary": None,
        "runs": cfg.runs,
        "base_seed": cfg.base_seed,
        "thresholds": list(cfg.thresholds),
        "sweep_dims": None if cfg.sweep_dims is None else list(cfg.sweep_dims),
    }
    if cfg.adversary is not None:
        out["adversary"] = {
            "gamma": cfg.adversary.gamma,
            "attack": cfg.adversary.attack,
            "noise_std": cfg.adversary.noise_std,
            "constant": cfg.adversary.constant,
        }
    return out


def emit_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


# ---------------------------------------------------------------------------
# runtime construction
# ---------------------------------------------------------------------------

def client_assignment(cfg: ExperimentConfig) -> List[List[str]]:
    out = []
    for g in cfg.clients:
        out.extend([list(g.modalities)] * g.count)
    return out


def group_labels(cfg: ExperimentConfig) -> List[str]:
    """Per-client modality-subset label, e.g. 'acc+gyr'."""
    out = []
    for g in cfg.clients:
        out.extend(["+".join(g.modalities)] * g.count)
    return out


def build_datasets(cfg: ExperimentConfig, run_index: int) -> List[ClientDataset]:
    spec = SyntheticSpec(
        n_classes=cfg.data.n_classes,
        modalities=cfg.data.modalities,
        noise_std=cfg.data.noise_std,
        samples_per_class=cfg.data.samples_per_class,
        seed=cfg.data.seed + run_index,
        test_fraction=cfg.data.test_fraction,
    )
    return generate(spec, client_assignment(cfg), cfg.data.skew)


def build_clients(cfg: ExperimentConfig, run_seed: int,
                  datasets: List[ClientDataset],
                  shared_dim: Optional[int] = None) -> List[Client]:
    d = cfg.shared_dim if shared_dim is None else shared_dim
    by_name = {m.name: m for m in cfg.data.modalities}
    clients = []
    cid = 0
    for g in cfg.clients:
        arch = dense_architecture(
            modalities=[by_name[n] for n in g.modalities],
            n_classes=cfg.data.n_classes,
            encoder_hidden=g.encoder_hidden,
            encoder_out=g.encoder_out,
            trunk_hidden=g.trunk_hidden,
            tap_dim=g.tap_dim,
            head_hidden=g.head_hidden,
        )
        for _ in range(g.count):
            model = ClientModel.build(
                arch, np.random.SeedSequence([run_seed, cid, _STREAM_MODEL])
            )
            proj_rng = np.random.default_rng(
                np.random.SeedSequence([run_seed, cid, _STREAM_PROJECTION])
            )
            projection = Projection.init(d, g.tap_dim, proj_rng)
            batch_rng = np.random.default_rng(
                np.random.SeedSequence([run_seed, cid, _STREAM_BATCH])
            )
            clients.append(Client(cid, model, projection, datasets[cid], batch_rng))
            cid += 1
    return clients


def build_topology(cfg: ExperimentConfig, run_seed: int) -> Topology:
    return make_topology(cfg.topology.kind, cfg.n_clients, seed=run_seed, p=cfg.topology.p)


def build_adversary(cfg: ExperimentConfig, run_seed: int) -> Optional[AdversarySpec]:
    if cfg.adversary is None or cfg.adversary.gamma == 0:
        return None
    rng = np.random.default_rng(np.random.SeedSequence([run_seed, _STREAM_ADVERSARY]))
    ids = rng.choice(cfg.n_clients, size=cfg.adversary.gamma, replace=False)
    return AdversarySpec(
        byzantine_ids=frozenset(int(i) for i in ids),
        attack=cfg.adversary.attack,
        noise_std=cfg.adversary.noise_std,
        constant=cfg.adversary.constant,
        seed=run_seed,
    )


def train_config(cfg: ExperimentConfig, run_seed: int) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        rounds=t.rounds,
        eta_w=t.eta_w,
        eta_p=t.eta_p,
        lam=t.lam,
        p_steps=t.p_steps,
        batch_size=t.batch_size,
        distance=DistanceKind(t.distance),
        consensus_mode=t.consensus_mode,
        eval_every=t.eval_every,
        seed=run_seed,
        local_steps=t.local_steps,
        exchange_first=t.exchange_first,
        weiszfeld=WeiszfeldConfig(),
    )


def run_single(cfg: ExperimentConfig, run_index: int, observer=None,
               shared_dim: Optional[int] = None) -> tuple[RunResult, Optional[AdversarySpec]]:
    """One Monte Carlo run: seed = base_seed + run_index."""
    run_seed = cfg.base_seed + run_index
    datasets = build_datasets(cfg, run_index)
    clients = build_clients(cfg, run_seed, datasets, shared_dim=shared_dim)
    tcfg = train_config(cfg, run_seed)
    if cfg.method == METHOD_FEDAVG:
        return run_modality_fedavg(clients, tcfg), None
    adversary = build_adversary(cfg, run_seed)
    topology = build_topology(cfg, run_seed) if cfg.method == METHOD_LATENT else None
    result = run(topology, clients, tcfg, adversary=adversary,
                 method=cfg.method, observer=observer)
    return result, adversary


# ---------------------------------------------------------------------------
# artifacts and summaries
# ---------------------------------------------------------------------------

def records_to_jsonl(records: List[RoundRecord]) -> str:
    return "".join(
        json.dumps(r.to_dict(), separators=(",", ":")) + "\n" for r in records
    )


def load_records(path) -> List[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def honest_accuracy_by_round(records: List[dict], honest_ids: set) -> Dict[int, float]:
    """Mean test accuracy of honest clients at each evaluated round."""
    by_round: Dict[int, List[float]] = {}
    for r in records:
        if r["test_acc"] is not None and r["client_id"] in honest_ids:
            by_round.setdefault(r["round"], []).append(r["test_acc"])
    return {t: float(np.mean(v)) for t, v in sorted(by_round.items())}


def network_uplink_by_round(records: List[dict]) -> Dict[int, int]:
    """Cumulative network uplink bytes at the end of each round."""
    by_round: Dict[int, int] = {}
    for r in records:
        by_round[r["round"]] = by_round.get(r["round"], 0) + r["cum_uplink_bytes"]
    return dict(sorted(by_round.items()))


def bytes_to_thresholds(records: List[dict], honest_ids: set,
                        thresholds: List[float]) -> Dict[str, Optional[int]]:
    """First-crossing cumulative uplink bytes per accuracy threshold (None = NA)."""
    acc = honest_accuracy_by_round(records, honest_ids)
    uplink = network_uplink_by_round(records)
    out: Dict[str, Optional[int]] = {}
    for th in thresholds:
        crossed = None
        for t, a in acc.items():
            if a >= th:
                crossed = uplink[t]
                break
        out[_threshold_key(th)] = crossed
    return out


def _threshold_key(th: float) -> str:
    return format(th, "g")


def _seed_dir(out_dir: Path, run_seed: int) -> Path:
    return out_dir / f"seed_{run_seed}"


def run_experiment(cfg: ExperimentConfig, out_dir) -> dict:
    """Execute all Monte Carlo runs (or a dimension sweep) and write artifacts.

    Layout: <out>/config.yaml, <out>/seed_<s>/{records.jsonl, ledger.csv},
    <out>/summary.json; sweeps nest one such tree per latent dim under
    <out>/d_<d>/ and collate <out>/summary.json.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(emit_config(cfg))
    if cfg.sweep_dims is not None:
        sweep = []
        for d in cfg.sweep_dims:
            sub_summary = _run_monte_carlo(cfg, out_dir / f"d_{d}", shared_dim=d)
            sweep.append({
                "shared_dim": d,
                "final_acc_mean": sub_summary["final_acc"]["mean"],
                "final_acc_std": sub_summary["final_acc"]["std"],
                "total_uplink_mean": sub_summary["total_uplink"]["mean"],
            })
        summary = {
            "name": cfg.name,
            "method": cfg.method,
            "sweep": sweep,
        }
        _write_json(out_dir / "summary.json", summary)
        return summary
    summary = _run_monte_carlo(cfg, out_dir)
    return summary


def _run_monte_carlo(cfg: ExperimentConfig, out_dir: Path,
                     shared_dim: Optional[int] = None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = group_labels(cfg)
    per_seed_acc: List[float] = []
    per_seed_bytes: List[Dict[str, Optional[int]]] = []
    per_seed_total_uplink: List[int] = []
    per_seed_byz: List[List[int]] = []
    group_acc: Dict[str, List[float]] = {}
    for k in range(cfg.runs):
        run_seed = cfg.base_seed + k
        result, adversary = run_single(cfg, k, shared_dim=shared_dim)
        byz = sorted(adversary.byzantine_ids) if adversary else []
        honest = set(range(cfg.n_clients)) - set(byz)
        seed_dir = _seed_dir(out_dir, run_seed)
        seed_dir.mkdir(parents=True, exist_ok=True)
        (seed_dir / "records.jsonl").write_text(records_to_jsonl(result.records))
        (seed_dir / "ledger.csv").write_text(result.ledger.to_csv())
        records = [r.to_dict() for r in result.records]
        acc_by_round = honest_accuracy_by_round(records, honest)
        final_round = max(acc_by_round)
        per_seed_acc.append(acc_by_round[final_round])
        per_seed_bytes.append(bytes_to_thresholds(records, honest, cfg.thresholds))
        per_seed_total_uplink.append(result.ledger.total_uplink())
        per_seed_byz.append([int(b) for b in byz])
        finals = {
            r["client_id"]: r["test_acc"] for r in records
            if r["round"] == final_round and r["test_acc"] is not None
        }
        for cid, acc in finals.items():
            if cid in honest:
                group_acc.setdefault(labels[cid], []).append(acc)
    thresholds_summary = {}
    for th in cfg.thresholds:
        key = _threshold_key(th)
        values = [b[key] for b in per_seed_bytes]
        attained = [v for v in values if v is not None]
        thresholds_summary[key] = {
            "per_seed": values,
            "attained": len(attained),
            "mean_bytes": float(np.mean(attained)) if attained else None,
        }
    summary = {
        "name": cfg.name,
        "method": cfg.method,
        "n_clients": cfg.n_clients,
        "shared_dim": cfg.shared_dim if shared_dim is None else shared_dim,
        "rounds": cfg.train.rounds,
        "runs": cfg.runs,
        "base_seed": cfg.base_seed,
        "thresholds": cfg.thresholds,
        "byzantine_ids_per_seed": per_seed_byz,
        "final_acc": {
            "mean": float(np.mean(per_seed_acc)),
            "std": float(np.std(per_seed_acc)),
            "per_seed": per_seed_acc,
        },
        "per_group_acc": {
            k: float(np.mean(v)) for k, v in sorted(group_acc.items())
        },
        "bytes_to_threshold": thresholds_summary,
        "total_uplink": {
            "mean": float(np.mean(per_seed_total_uplink)),
            "per_seed": per_seed_total_uplink,
        },
    }
    _write_json(out_dir / "summary.json", summary)
    return summary


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


def load_summary(run_dir) -> dict:
    path = Path(run_dir) / "summary.json"
    if not path.exists():
        raise ConfigError(f"{run_dir}: no summary.json (run the experiment first)")
    return json.loads(path.read_text())


def summarize(run_dirs: Sequence) -> dict:
    """Comparison table over completed run directories."""
    if not run_dirs:
        raise ConfigError("summarize needs at least one run directory")
    rows = []
    for d in run_dirs:
        s = load_summary(d)
        if "sweep" in s:
            rows.append({
                "dir": Path(d).name,
                "name": s["name"],
                "method": s["method"],
                "sweep": s["sweep"],
            })
            continue
        rows.append({
            "dir": Path(d).name,
            "name": s["name"],
            "method": s["method"],
            "final_acc_mean": s["final_acc"]["mean"],
            "final_acc_std": s["final_acc"]["std"],
            "bytes_to_threshold": {
                key: info["mean_bytes"] for key, info in s["bytes_to_threshold"].items()
            },
            "per_group_acc": s["per_group_acc"],
            "total_uplink_mean": s["total_uplink"]["mean"],
        })
    return {"runs": rows}


def format_summary_table(table: dict) -> str:
    """Human-readable rendering of a summarize() result."""
    lines = []
    for row in table["runs"]:
        if "sweep" in row:
            lines.append(f"{row['dir']} [{row['method']}] dimension sweep:")
            for entry in row["sweep"]:
                lines.append(
                    f"  d={entry['shared_dim']:>3}  acc={entry['final_acc_mean']:.4f}"
                    f" +/- {entry['final_acc_std']:.4f}"
                    f"  uplink={entry['total_uplink_mean']:.0f} B"
                )
            continue
        bytes_part = ", ".join(
            f"{k}: " + (f"{v:.0f} B" if v is not None else "NA")
            for k, v in row["bytes_to_threshold"].items()
        )
        group_part = ", ".join(f"{k}={v:.3f}" for k, v in row["per_group_acc"].items())
        lines.append(
            f"{row['dir']} [{row['method']}] acc={row['final_acc_mean']:.4f}"
            f" +/- {row['final_acc_std']:.4f} | bytes-to-acc {{{bytes_part}}}"
            f" | groups {{{group_part}}}"
        )
    return "\n".join(lines)
