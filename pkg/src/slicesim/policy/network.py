"""Numpy MLP with ReLU hidden layers and a two-way softmax head.

Output unit 0 is "accept", unit 1 is "reject".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

ACCEPT, REJECT = 0, 1
CHECKPOINT_MAGIC = "SLICE-POLICY v1"


class NetworkError(ValueError):
    pass


@dataclass
class PolicyNetwork:
    weights: list[np.ndarray]  # layer i maps dims[i] -> dims[i+1], shape (out, in)
    biases: list[np.ndarray]
    # bumped on every in-place parameter change so caches can detect staleness
    version: int = 0

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise NetworkError("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise NetworkError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise NetworkError(f"layer {i}: input {w.shape[1]} != previous output")
        if self.weights[-1].shape[0] != 2:
            raise NetworkError("output layer must have 2 units")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "PolicyNetwork":
        return PolicyNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_network(rng: np.random.Generator, dims: Sequence[int]) -> PolicyNetwork:
    """He initialisation: N(0, 2/fan_in) weights, zero biases."""
    dims = list(dims)
    if len(dims) < 2 or any(d < 1 for d in dims) or dims[-1] != 2:
        raise NetworkError(f"bad layer dimensions {dims}")
    weights = [rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in)) for n_in, n_out in zip(dims, dims[1:])]
    biases = [np.zeros(n_out) for n_out in dims[1:]]
    return PolicyNetwork(weights, biases)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(net: PolicyNetwork, x: np.ndarray) -> np.ndarray:
    """(p_accept, p_reject) for one input vector, or an (n, 2) array for a batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.input_dim:
        raise NetworkError(f"input width {x.shape[-1]} != network input {net.input_dim}")
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
    if not np.all(np.isfinite(h)):
        raise NetworkError("non-finite logits")
    return _softmax(h)


def log_prob_gradient(
    net: PolicyNetwork, x: np.ndarray, actions: np.ndarray, weights: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Gradient of ``sum_i weights[i] * log pi(actions[i] | x[i])``.

    Returns (weight grads, bias grads, probabilities).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise NetworkError(f"batch shape {x.shape} does not match input {net.input_dim}")
    acts = [x]
    pre = []
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        if i < last:
            acts.append(h)
    probs = _softmax(h)

    # d log softmax_a / dz = onehot(a) - p
    delta = -probs
    delta[np.arange(len(actions)), actions] += 1.0
    delta *= np.asarray(weights, dtype=np.float64)[:, None]

    gw: list[np.ndarray] = [None] * len(net.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(net.weights)  # type: ignore[list-item]
    for i in range(last, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ net.weights[i]) * (pre[i - 1] > 0)
    return gw, gb, probs


@dataclass
class Adam:
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def ascend(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """In-place gradient *ascent* step."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p += self.step_size * (m / c1) / (np.sqrt(v / c2) + self.eps)


def save_checkpoint(
    net: PolicyNetwork,
    path: str | Path,
    encoding_digest: str,
    trainer: Optional[dict[str, Any]] = None,
) -> None:
    lines = [CHECKPOINT_MAGIC, " ".join(str(d) for d in net.dims)]
    for w, b in zip(net.weights, net.biases):
        lines.append("W")
        lines.extend(" ".join(repr(float(x)) for x in row) for row in w)
        lines.append("b " + " ".join(repr(float(x)) for x in b))
    if trainer is not None:
        lines.append("trainer " + json.dumps(trainer, sort_keys=True))
    lines.append("encoding " + encoding_digest)
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path, expect_digest: Optional[str] = None) -> tuple[PolicyNetwork, str]:
    """Read a checkpoint; with ``expect_digest`` a mismatching encoding is rejected."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise NetworkError(f"{path}: not a policy checkpoint")
    dims = [int(x) for x in lines[1].split()]
    weights, biases = [], []
    pos = 2
    for n_in, n_out in zip(dims, dims[1:]):
        if lines[pos] != "W":
            raise NetworkError(f"{path}: expected W block at line {pos + 1}")
        rows = [np.array([float(x) for x in lines[pos + 1 + r].split()]) for r in range(n_out)]
        w = np.vstack(rows)
        if w.shape != (n_out, n_in):
            raise NetworkError(f"{path}: weight block has shape {w.shape}, expected {(n_out, n_in)}")
        pos += 1 + n_out
        if not lines[pos].startswith("b "):
            raise NetworkError(f"{path}: expected b line at line {pos + 1}")
        b = np.array([float(x) for x in lines[pos][2:].split()])
        pos += 1
        weights.append(w)
        biases.append(b)
    digest = ""
    for line in lines[pos:]:
        if line.startswith("encoding "):
            digest = line.split(" ", 1)[1]
    if expect_digest is not None and digest != expect_digest:
        raise NetworkError(f"{path}: checkpoint encoding {digest[:12]} does not match {expect_digest[:12]}")
    return PolicyNetwork(weights, biases), digest
