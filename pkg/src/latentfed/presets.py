"""Named experiment presets reproducing the study shapes on synthetic data."""
from __future__ import annotations

from typing import Dict, List

from .errors import ConfigError
from .experiments import (
    AdversaryConfig,
    ClientGroupConfig,
    DataConfig,
    ExperimentConfig,
    TopologyConfig,
    TrainSection,
)
from .models import Modality


def _usc_groups() -> List[ClientGroupConfig]:
    # 3 clients on one sensor, 3 on the other, 8 on both; width 128 keeps the
    # parameter-level baseline two orders of magnitude above the packet size
    single = dict(encoder_hidden=[128], encoder_out=32, trunk_hidden=[], head_hidden=[])
    return [
        ClientGroupConfig(count=3, modalities=["acc"], tap_dim=32, **single),
        ClientGroupConfig(count=3, modalities=["gyr"], tap_dim=32, **single),
        ClientGroupConfig(count=8, modalities=["acc", "gyr"], tap_dim=48, **single),
    ]


def usc_shape() -> ExperimentConfig:
    return ExperimentConfig(
        name="usc_shape",
        method="latent_consensus",
        data=DataConfig(
            n_classes=6,
            noise_std=1.1,
            samples_per_class=10,
            skew=0.5,
            seed=11,
            modalities=[Modality("acc", 12), Modality("gyr", 12)],
        ),
        clients=_usc_groups(),
        topology=TopologyConfig(kind="complete"),
        train=TrainSection(
            rounds=250,
            eta_w=0.1,
            eta_p=0.05,
            lam=0.4,
            p_steps=10,
            batch_size=16,
            distance="sq",
            consensus_mode="decentralized",
            eval_every=10,
        ),
        shared_dim=8,
        runs=5,
        base_seed=0,
        thresholds=[0.4, 0.5, 0.58],
    )


def deepsense_shape() -> ExperimentConfig:
    single = dict(encoder_hidden=[96], encoder_out=24, trunk_hidden=[], head_hidden=[])
    return ExperimentConfig(
        name="deepsense_shape",
        method="latent_consensus",
        data=DataConfig(
            n_classes=4,
            noise_std=1.1,
            samples_per_class=12,
            skew=0.5,
            seed=23,
            modalities=[Modality("mmwave", 16), Modality("lidar", 16)],
        ),
        clients=[
            ClientGroupConfig(count=2, modalities=["mmwave"], tap_dim=24, **single),
            ClientGroupConfig(count=2, modalities=["lidar"], tap_dim=24, **single),
            ClientGroupConfig(count=2, modalities=["mmwave", "lidar"], tap_dim=32, **single),
        ],
        topology=TopologyConfig(kind="complete"),
        train=TrainSection(
            rounds=250,
            eta_w=0.1,
            eta_p=0.05,
            lam=0.4,
            p_steps=10,
            batch_size=16,
            distance="sq",
            consensus_mode="decentralized",
            eval_every=10,
        ),
        shared_dim=8,
        runs=5,
        base_seed=0,
        thresholds=[0.4, 0.5, 0.58],
    )


def dim_sweep() -> ExperimentConfig:
    cfg = usc_shape()
    cfg.name = "dim_sweep"
    cfg.sweep_dims = [4, 8, 16, 32]
    cfg.runs = 3
    return cfg


def tiny() -> ExperimentConfig:
    """Minimal 2-client preset for smoke tests and quick determinism checks."""
    return ExperimentConfig(
        name="tiny",
        method="latent_consensus",
        data=DataConfig(
            n_classes=3,
            noise_std=0.8,
            samples_per_class=8,
            skew=2.0,
            seed=5,
            modalities=[Modality("a", 6)],
        ),
        clients=[
            ClientGroupConfig(
                count=2, modalities=["a"], encoder_hidden=[16], encoder_out=12,
                trunk_hidden=[], tap_dim=12, head_hidden=[],
            ),
        ],
        topology=TopologyConfig(kind="complete"),
        train=TrainSection(
            rounds=8,
            eta_w=0.1,
            eta_p=0.05,
            lam=0.4,
            p_steps=5,
            batch_size=8,
            distance="sq",
            consensus_mode="decentralized",
            eval_every=2,
        ),
        shared_dim=4,
        runs=2,
        base_seed=0,
        thresholds=[0.4],
    )


PRESETS = {
    "tiny": tiny,
    "usc_shape": usc_shape,
    "deepsense_shape": deepsense_shape,
    "dim_sweep": dim_sweep,
}


def get_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return PRESETS[name]()


def preset_names() -> List[str]:
    return sorted(PRESETS)
