"""Dense differentiable layers with hand-derived gradients.

Everything is float64, row-major, batch-first: a batch of n samples with
k features is an (n, k) array. Affine layers compute ``x @ W + b`` and
ReLU uses the subgradient 0 at the kink, so forward/backward are fully
deterministic functions of (parameters, input).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ContractError, DomainError, ShapeError

AFFINE = "affine"
RELU = "relu"


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.kind not in (AFFINE, RELU):
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ShapeError(f"non-positive layer dims in {self}")
        if self.kind == RELU and self.in_dim != self.out_dim:
            raise ShapeError(f"relu must preserve dimension, got {self}")


def affine(in_dim: int, out_dim: int) -> LayerSpec:
    return LayerSpec(AFFINE, in_dim, out_dim)


def relu(dim: int) -> LayerSpec:
    return LayerSpec(RELU, dim, dim)


@dataclass
class ForwardCache:
    """Activation record of one forward pass; consumed by backward."""

    stack: "LayerStack"
    inputs: List[np.ndarray]  # activation entering each layer
    output: np.ndarray


@dataclass
class GradientBundle:
    """Per-layer parameter gradients plus the gradient w.r.t. the input."""

    weights: List[Optional[np.ndarray]]
    biases: List[Optional[np.ndarray]]
    dinput: np.ndarray

    def add(self, other: "GradientBundle") -> "GradientBundle":
        ws = [
            None if w is None else w + o
            for w, o in zip(self.weights, other.weights)
        ]
        bs = [None if b is None else b + o for b, o in zip(self.biases, other.biases)]
        return GradientBundle(ws, bs, self.dinput + other.dinput)


class LayerStack:
    """A chain of affine/ReLU layers with explicit parameters."""

    def __init__(self, specs: List[LayerSpec], weights, biases):
        _check_chain(specs)
        self.specs = list(specs)
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(cls, specs: List[LayerSpec], rng: np.random.Generator) -> "LayerStack":
        """Scaled-uniform init: W ~ U(-a, a) with a = sqrt(6/(fan_in+fan_out)), b = 0."""
        weights: List[Optional[np.ndarray]] = []
        biases: List[Optional[np.ndarray]] = []
        for spec in specs:
            if spec.kind == AFFINE:
                a = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
                weights.append(rng.uniform(-a, a, size=(spec.in_dim, spec.out_dim)))
                biases.append(np.zeros(spec.out_dim))
            else:
                weights.append(None)
                biases.append(None)
        return cls(specs, weights, biases)

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases) if w is not None)

    def parameters(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            if w is not None:
                out.append(w)
                out.append(b)
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"input must be 2-D (batch, features), got shape {x.shape}")
        if x.shape[0] < 1:
            raise ShapeError("empty batch")
        inputs = []
        for idx, spec in enumerate(self.specs):
            if x.shape[1] != spec.in_dim:
                raise ShapeError(
                    f"layer {idx} ({spec.kind}) expects {spec.in_dim} features, got {x.shape[1]}"
                )
            inputs.append(x)
            if spec.kind == AFFINE:
                x = x @ self.weights[idx] + self.biases[idx]
            else:
                x = np.maximum(x, 0.0)
        return x, ForwardCache(self, inputs, x)

    def backward(self, cache: ForwardCache, dout: np.ndarray) -> GradientBundle:
        if cache.stack is not self:
            raise ContractError("cache was produced by a different stack")
        if len(cache.inputs) != len(self.specs):
            raise ContractError("cache does not match the current layer list")
        dout = np.asarray(dout, dtype=np.float64)
        if dout.shape != cache.output.shape:
            raise ShapeError(
                f"output gradient shape {dout.shape} != forward output {cache.output.shape}"
            )
        dws: List[Optional[np.ndarray]] = [None] * len(self.specs)
        dbs: List[Optional[np.ndarray]] = [None] * len(self.specs)
        for idx in range(len(self.specs) - 1, -1, -1):
            spec = self.specs[idx]
            x = cache.inputs[idx]
            if spec.kind == AFFINE:
                dws[idx] = x.T @ dout
                dbs[idx] = dout.sum(axis=0)
                dout = dout @ self.weights[idx].T
            else:
                dout = dout * (x > 0.0)
        return GradientBundle(dws, dbs, dout)

    def apply_gradients(self, grads: GradientBundle, lr: float) -> None:
        for idx, spec in enumerate(self.specs):
            if spec.kind == AFFINE:
                self.weights[idx] -= lr * grads.weights[idx]
                self.biases[idx] -= lr * grads.biases[idx]

    def clone(self) -> "LayerStack":
        ws = [None if w is None else w.copy() for w in self.weights]
        bs = [None if b is None else b.copy() for b in self.biases]
        return LayerStack(self.specs, ws, bs)


def _check_chain(specs: List[LayerSpec]) -> None:
    if not specs:
        raise ShapeError("empty layer list")
    for idx in range(1, len(specs)):
        if specs[idx].in_dim != specs[idx - 1].out_dim:
            raise ShapeError(
                f"layer {idx} in_dim {specs[idx].in_dim} != layer {idx - 1} "
                f"out_dim {specs[idx - 1].out_dim}"
            )


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    Log-sum-exp stabilized, so saturated logits (|z| ~ 1e3) stay finite.
    Returns (loss, (softmax - onehot) / batch).
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got shape {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} != batch size {logits.shape[0]}")
    n, k = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise DomainError(f"labels must lie in [0, {k}), got range "
                          f"[{labels.min()}, {labels.max()}]")
    zmax = logits.max(axis=1, keepdims=True)
    shifted = logits - zmax
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(lse - shifted[np.arange(n), labels]))
    probs = np.exp(shifted - lse[:, None])
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits
