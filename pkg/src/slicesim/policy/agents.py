"""Admission policies: heuristics and the neural agent."""

from __future__ import annotations

import math

import numpy as np

from slicesim.encoding import EncodingSpec, encode_levels
from slicesim.policy.network import ACCEPT, NetworkError, PolicyNetwork
from slicesim.simulator import AdmissionContext, Decision

LOG_FLOOR = 1e-12


def sample_action(rng: np.random.Generator, probs) -> tuple[int, float]:
    """Draw accept (0) / reject (1); also return log of the drawn probability."""
    p_accept = float(probs[0])
    action = ACCEPT if rng.random() < p_accept else 1
    p = p_accept if action == ACCEPT else float(probs[1])
    return action, math.log(max(p, LOG_FLOOR))


class AcceptAll:
    name = "acpt"
    trainable = False

    def decide(self, ctx: AdmissionContext, rng: np.random.Generator) -> Decision:
        return Decision(True)


class RandomPolicy:
    name = "rnd"
    trainable = False

    def decide(self, ctx: AdmissionContext, rng: np.random.Generator) -> Decision:
        return Decision(bool(rng.random() < 0.5), math.log(0.5))


class FitPolicy:
    """Accept only if the immediate demand fits on the chosen route right now."""

    name = "fit"
    trainable = False

    def decide(self, ctx: AdmissionContext, rng: np.random.Generator) -> Decision:
        st, path = ctx.state, ctx.path
        d_co, d_link, d_rdc = ctx.request.demand
        fits = (
            st.free_co(path.co) >= d_co
            and st.free_rdc(path.rdc) >= d_rdc
            and (d_link == 0 or st.free_path(path.links) >= d_link)
        )
        return Decision(fits)


class NeuralPolicy:
    """Samples from the network's softmax (or takes the argmax when ``greedy``).

    Every input field is a thermometer code, so the first layer's product
    with the bit vector equals a sum of per-field prefix sums of weight
    columns. ``decide`` uses that table instead of expanding the bits.
    """

    trainable = True

    def __init__(self, net: PolicyNetwork, spec: EncodingSpec, greedy: bool = False, name: str = "prop"):
        if net.input_dim != spec.width:
            raise NetworkError(f"network input {net.input_dim} != encoding width {spec.width}")
        self.net = net
        self.spec = spec
        self.greedy = greedy
        self.name = name
        widths = np.asarray(spec.widths)
        # row offset of field f's "level 0" entry in the prefix table
        self._base = np.concatenate([[0], np.cumsum(widths + 1)[:-1]])
        self._table_version = -1
        self._table: np.ndarray = np.empty(0)

    def _prefix_table(self) -> np.ndarray:
        if self._table_version != self.net.version or self._table.size == 0:
            w1t = self.net.weights[0].T  # (input, hidden)
            blocks = []
            start = 0
            for width in self.spec.widths:
                block = np.zeros((width + 1, w1t.shape[1]))
                np.cumsum(w1t[start : start + width], axis=0, out=block[1:])
                blocks.append(block)
                start += width
            self._table = np.vstack(blocks)
            self._table_version = self.net.version
        return self._table

    def probabilities(self, levels: np.ndarray) -> tuple[float, float]:
        net = self.net
        h = self._prefix_table()[self._base + levels].sum(axis=0) + net.biases[0]
        np.maximum(h, 0.0, out=h)
        last = len(net.weights) - 1
        for i in range(1, last):
            h = net.weights[i] @ h + net.biases[i]
            np.maximum(h, 0.0, out=h)
        z = net.weights[last] @ h + net.biases[last]
        z0, z1 = float(z[0]), float(z[1])
        if not (math.isfinite(z0) and math.isfinite(z1)):
            raise NetworkError("non-finite logits")
        m = max(z0, z1)
        e0, e1 = math.exp(z0 - m), math.exp(z1 - m)
        return e0 / (e0 + e1), e1 / (e0 + e1)

    def decide(self, ctx: AdmissionContext, rng: np.random.Generator) -> Decision:
        levels = encode_levels(ctx.state, ctx.request, self.spec, ctx.path)
        probs = self.probabilities(levels)
        if self.greedy:
            action = ACCEPT if probs[0] >= probs[1] else 1
            logp = math.log(max(probs[action], LOG_FLOOR))
        else:
            action, logp = sample_action(rng, probs)
        return Decision(action == ACCEPT, logp, levels)


HEURISTICS = {"acpt": AcceptAll, "rnd": RandomPolicy, "fit": FitPolicy}
NEURAL = ("prop", "bl")
