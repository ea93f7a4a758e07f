"""Small ready-made training worlds for trainer/service/acceptance tests."""
from __future__ import annotations

import numpy as np

from latentfed.data import SyntheticSpec, generate
from latentfed.latent import Projection
from latentfed.models import ClientModel, Modality, dense_architecture
from latentfed.trainer import Client

MODS = [Modality("acc", 6), Modality("gyr", 6)]


def small_arch(modalities, n_classes=3, tap_dim=10, hidden=12):
    return dense_architecture(
        modalities=modalities,
        n_classes=n_classes,
        encoder_hidden=[hidden],
        encoder_out=8,
        trunk_hidden=[],
        tap_dim=tap_dim,
    )


def make_clients(
    n=2,
    n_classes=3,
    shared_dim=4,
    seed=0,
    noise=0.6,
    per_class=8,
    skew=5.0,
    assignment=None,
    datasets=None,
    tap_dim=10,
):
    """n single-arch clients over both modalities with per-client RNG streams."""
    if assignment is None:
        assignment = [["acc", "gyr"]] * n
    if datasets is None:
        spec = SyntheticSpec(
            n_classes=n_classes, modalities=MODS, noise_std=noise,
            samples_per_class=per_class, seed=seed,
        )
        datasets = generate(spec, assignment, skew=skew)
    clients = []
    for i in range(n):
        mods = [m for m in MODS if m.name in assignment[i]]
        arch = small_arch(mods, n_classes=n_classes, tap_dim=tap_dim)
        model = ClientModel.build(arch, np.random.SeedSequence([seed, i, 0]))
        proj = Projection.init(
            shared_dim, tap_dim,
            np.random.default_rng(np.random.SeedSequence([seed, i, 1])),
        )
        batch_rng = np.random.default_rng(np.random.SeedSequence([seed, i, 2]))
        clients.append(Client(i, model, proj, datasets[i], batch_rng))
    return clients
