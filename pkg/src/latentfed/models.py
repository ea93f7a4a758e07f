"""Heterogeneous client models: per-modality encoders, concat fusion, a tap
layer whose activation is the client's local feature vector, and a classifier
head over the shared label set.

The tap is the last activation before the head; everything up to and
including it is the "prefix". Alignment gradients enter through the tap only,
so head parameters never receive a regularizer contribution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .errors import ModalityError, ShapeError
from .numcore import (
    AFFINE,
    ForwardCache,
    GradientBundle,
    LayerSpec,
    LayerStack,
    affine,
    relu,
)


@dataclass(frozen=True)
class Modality:
    name: str
    input_dim: int


@dataclass
class ClientArchitecture:
    """Layer plan for one client; modalities fix the encoder branch order."""

    modalities: List[Modality]
    encoders: Dict[str, List[LayerSpec]]  # one chain per modality name
    trunk: List[LayerSpec]  # post-fusion chain ending at the tap
    head: List[LayerSpec]  # tap_dim -> n_classes

    def __post_init__(self):
        if not self.modalities:
            raise ShapeError("client needs at least one modality")
        names = [m.name for m in self.modalities]
        if len(set(names)) != len(names):
            raise ShapeError(f"duplicate modality names {names}")
        if set(self.encoders) != set(names):
            raise ShapeError(
                f"encoders cover {sorted(self.encoders)} but modalities are {sorted(names)}"
            )
        for mod in self.modalities:
            enc = self.encoders[mod.name]
            if not enc or enc[0].in_dim != mod.input_dim:
                raise ShapeError(
                    f"encoder for {mod.name!r} must start at input dim {mod.input_dim}"
                )
        fused = sum(self.encoders[m.name][-1].out_dim for m in self.modalities)
        if not self.trunk or self.trunk[0].in_dim != fused:
            raise ShapeError(
                f"trunk must start at fused dim {fused}, got "
                f"{self.trunk[0].in_dim if self.trunk else 'empty'}"
            )
        if not self.head or self.head[0].in_dim != self.tap_dim:
            raise ShapeError(
                f"head must start at tap dim {self.tap_dim}, got "
                f"{self.head[0].in_dim if self.head else 'empty'}"
            )

    @property
    def tap_dim(self) -> int:
        return self.trunk[-1].out_dim

    @property
    def n_classes(self) -> int:
        return self.head[-1].out_dim

    @property
    def modality_names(self) -> List[str]:
        return [m.name for m in self.modalities]


def dense_architecture(
    modalities: List[Modality],
    n_classes: int,
    encoder_hidden: List[int],
    encoder_out: int,
    trunk_hidden: List[int],
    tap_dim: int,
    head_hidden: List[int] | None = None,
) -> ClientArchitecture:
    """Build the standard affine+ReLU plan from width lists."""

    def chain(in_dim: int, widths: List[int], out_dim: int, end_relu: bool) -> List[LayerSpec]:
        specs: List[LayerSpec] = []
        cur = in_dim
        for w in widths:
            specs += [affine(cur, w), relu(w)]
            cur = w
        specs.append(affine(cur, out_dim))
        if end_relu:
            specs.append(relu(out_dim))
        return specs

    encoders = {
        m.name: chain(m.input_dim, encoder_hidden, encoder_out, end_relu=True)
        for m in modalities
    }
    fused = encoder_out * len(modalities)
    trunk = chain(fused, trunk_hidden, tap_dim, end_relu=True)
    head = chain(tap_dim, head_hidden or [], n_classes, end_relu=False)
    return ClientArchitecture(modalities, encoders, trunk, head)


@dataclass
class TapOutput:
    features: np.ndarray  # (batch, tap_dim)
    cache: "CompositeCache"


@dataclass
class CompositeCache:
    encoder_caches: Dict[str, ForwardCache]
    trunk_cache: ForwardCache
    head_cache: ForwardCache
    encoder_widths: List[int]  # fused-concat split points, in modality order


@dataclass
class ModelGradients:
    encoders: Dict[str, GradientBundle]
    trunk: GradientBundle
    head: GradientBundle


class ClientModel:
    """One client's parameters; owned by a single worker."""

    def __init__(self, arch: ClientArchitecture, encoders: Dict[str, LayerStack],
                 trunk: LayerStack, head: LayerStack):
        self.arch = arch
        self.encoders = encoders
        self.trunk = trunk
        self.head = head

    @classmethod
    def build(cls, arch: ClientArchitecture, seed: int) -> "ClientModel":
        """Deterministic init: same (arch, seed) always yields the same parameters."""
        rng = np.random.default_rng(seed)
        encoders = {
            m.name: LayerStack.init(arch.encoders[m.name], rng) for m in arch.modalities
        }
        trunk = LayerStack.init(arch.trunk, rng)
        head = LayerStack.init(arch.head, rng)
        return cls(arch, encoders, trunk, head)

    @property
    def tap_dim(self) -> int:
        return self.arch.tap_dim

    @property
    def n_classes(self) -> int:
        return self.arch.n_classes

    def param_count(self) -> int:
        stacks = [self.trunk, self.head] + list(self.encoders.values())
        return sum(s.param_count() for s in stacks)

    def parameters(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for m in self.arch.modalities:
            out += self.encoders[m.name].parameters()
        out += self.trunk.parameters()
        out += self.head.parameters()
        return out

    def forward_full(self, batch: Dict[str, np.ndarray]) -> tuple[np.ndarray, TapOutput]:
        """Logits and tap features for a batch keyed by modality name."""
        expected = set(self.arch.modality_names)
        if set(batch) != expected:
            raise ModalityError(
                f"batch has modalities {sorted(batch)}, client expects {sorted(expected)}"
            )
        outs = []
        widths = []
        enc_caches = {}
        batch_sizes = {k: np.asarray(v).shape[0] for k, v in batch.items()}
        if len(set(batch_sizes.values())) > 1:
            raise ShapeError(f"inconsistent batch sizes per modality: {batch_sizes}")
        for m in self.arch.modalities:
            out, cache = self.encoders[m.name].forward(batch[m.name])
            outs.append(out)
            widths.append(out.shape[1])
            enc_caches[m.name] = cache
        fused = np.concatenate(outs, axis=1)
        tap, trunk_cache = self.trunk.forward(fused)
        logits, head_cache = self.head.forward(tap)
        cache = CompositeCache(enc_caches, trunk_cache, head_cache, widths)
        return logits, TapOutput(tap, cache)

    def backward_composite(
        self, cache: CompositeCache, dlogits: np.ndarray, dtap: np.ndarray
    ) -> ModelGradients:
        """Combine the task-loss path (dlogits, through the head) with the
        alignment path (dtap, entering at the tap). Head gradients come from
        dlogits alone; prefix gradients sum both paths."""
        head_grads = self.head.backward(cache.head_cache, dlogits)
        dtap = np.asarray(dtap, dtype=np.float64)
        if dtap.shape != head_grads.dinput.shape:
            raise ShapeError(
                f"dtap shape {dtap.shape} != tap shape {head_grads.dinput.shape}"
            )
        trunk_grads = self.trunk.backward(cache.trunk_cache, head_grads.dinput + dtap)
        enc_grads = {}
        offset = 0
        for m, width in zip(self.arch.modalities, cache.encoder_widths):
            dslice = trunk_grads.dinput[:, offset:offset + width]
            enc_grads[m.name] = self.encoders[m.name].backward(
                cache.encoder_caches[m.name], dslice
            )
            offset += width
        return ModelGradients(enc_grads, trunk_grads, head_grads)

    def apply_gradients(self, grads: ModelGradients, lr: float) -> None:
        for m in self.arch.modalities:
            self.encoders[m.name].apply_gradients(grads.encoders[m.name], lr)
        self.trunk.apply_gradients(grads.trunk, lr)
        self.head.apply_gradients(grads.head, lr)

    def get_parameters(self) -> List[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    def set_parameters(self, values: List[np.ndarray]) -> None:
        own = self.parameters()
        if len(own) != len(values):
            raise ShapeError(f"expected {len(own)} parameter arrays, got {len(values)}")
        for dst, src in zip(own, values):
            if dst.shape != src.shape:
                raise ShapeError(f"parameter shape {src.shape} != expected {dst.shape}")
            dst[...] = src
