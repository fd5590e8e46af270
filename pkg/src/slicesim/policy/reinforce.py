"""Batched episodic REINFORCE with an Adam optimiser."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from slicesim.encoding import EncodingSpec
from slicesim.policy.network import Adam, NetworkError, PolicyNetwork, log_prob_gradient
from slicesim.simulator import EpisodeResult

CREDIT_MODES = ("episode", "reward_to_go")


@dataclass
class TrainerConfig:
    iterations: int = 10_000
    episodes_per_iteration: int = 25
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    hidden: tuple[int, ...] = (40, 40, 40, 40)
    # "episode": one normalised return per episode shared by all its decisions
    credit: str = "episode"
    # reward_to_go only: per-hour discount on losses after a decision
    discount: float = 1.0

    def __post_init__(self) -> None:
        if self.iterations < 1 or self.episodes_per_iteration < 1:
            raise ValueError("iterations and episodes per iteration must be positive")
        if min(self.step_size, self.eps, self.clip_norm) <= 0:
            raise ValueError("step size, eps and clip norm must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("moment decay rates must lie in (0, 1)")
        if self.credit not in CREDIT_MODES:
            raise ValueError(f"credit must be one of {CREDIT_MODES}")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")
        self.hidden = tuple(int(h) for h in self.hidden)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainerConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown trainer keys {sorted(unknown)}")
        return cls(**dict(d))

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    def optimizer(self) -> Adam:
        return Adam(self.step_size, self.beta1, self.beta2, self.eps)


@dataclass
class Trajectory:
    """One episode's decisions: state bits (n, width), actions, per-step credit."""

    states: np.ndarray
    actions: np.ndarray
    ret: float
    advantages: Optional[np.ndarray] = field(default=None)

    def __post_init__(self) -> None:
        if len(self.states) != len(self.actions):
            raise ValueError("states and actions differ in length")


def trajectory_from_result(result: EpisodeResult, spec: EncodingSpec) -> Trajectory:
    recs = [d for d in result.decisions if d.features is not None]
    if not recs:
        return Trajectory(np.zeros((0, spec.width), dtype=np.uint8), np.zeros(0, dtype=np.int64), -result.total_loss)
    levels = np.vstack([d.features for d in recs])
    actions = np.array([0 if d.accept else 1 for d in recs], dtype=np.int64)
    return Trajectory(spec.expand(levels).astype(np.uint8), actions, -result.total_loss)


def baseline_advantage(returns: Sequence[float]) -> np.ndarray:
    """Batch-normalised returns; all zero for a single episode or zero spread."""
    r = np.asarray(returns, dtype=np.float64)
    if r.size <= 1:
        return np.zeros_like(r)
    std = r.std()
    if std < 1e-8:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def reward_to_go(result: EpisodeResult, discount: float = 1.0) -> np.ndarray:
    """Negated loss incurred from each decision's instant to the episode end.

    Losses ``dt`` hours after the decision are weighted by ``discount**dt``.
    """
    times = np.array([d.time for d in result.decisions if d.features is not None])
    if not len(times):
        return np.zeros(0)
    ev = np.array(result.loss_events, dtype=np.float64).reshape(-1, 2)
    if not len(ev):
        return np.zeros(len(times))
    ev_t, ev_l = ev[:, 0], ev[:, 1]
    if discount == 1.0:
        tail = np.concatenate([np.cumsum(ev_l[::-1])[::-1], [0.0]])
        return -tail[np.searchsorted(ev_t, times, side="left")]
    out = np.empty(len(times))
    for i, t in enumerate(times):
        k = np.searchsorted(ev_t, t, side="left")
        out[i] = -np.sum(ev_l[k:] * discount ** (ev_t[k:] - t))
    return out


def step_baseline_advantage(step_returns: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Per-decision advantages: subtract the batch mean at each decision index,
    then scale by the pooled standard deviation."""
    n = max((len(r) for r in step_returns), default=0)
    if n == 0 or len(step_returns) <= 1:
        return [np.zeros(len(r)) for r in step_returns]
    padded = np.full((len(step_returns), n), np.nan)
    for i, r in enumerate(step_returns):
        padded[i, : len(r)] = r
    base = np.nanmean(padded, axis=0)
    adv = [r - base[: len(r)] for r in step_returns]
    pooled = np.concatenate(adv)
    std = pooled.std()
    if std < 1e-8:
        return [np.zeros(len(r)) for r in step_returns]
    return [a / std for a in adv]


def reinforce_update(
    net: PolicyNetwork,
    trajectories: Sequence[Trajectory],
    cfg: TrainerConfig,
    opt: Adam,
) -> dict[str, float]:
    """One ascent step on ``sum_e sum_t A_{e,t} log pi(a_t | s_t)``.

    ``A_{e,t}`` is ``traj.advantages`` when present (a scalar broadcasts over
    the episode). The step is skipped when the gradient is exactly zero.
    """
    xs, acts, ws = [], [], []
    for tr in trajectories:
        if tr.advantages is None:
            raise ValueError("trajectory has no advantages attached")
        if len(tr.actions) == 0:
            continue
        if tr.states.shape[1] != net.input_dim:
            raise NetworkError(f"state width {tr.states.shape[1]} != network input {net.input_dim}")
        xs.append(tr.states)
        acts.append(tr.actions)
        ws.append(np.broadcast_to(np.asarray(tr.advantages, dtype=np.float64), tr.actions.shape))
    if not xs:
        return {"grad_norm": 0.0, "applied": 0.0}
    x = np.vstack(xs).astype(np.float64)
    a = np.concatenate(acts)
    w = np.concatenate(ws)
    if not np.any(w):
        return {"grad_norm": 0.0, "applied": 0.0}

    gw, gb, _ = log_prob_gradient(net, x, a, w)
    grads = [g for pair in zip(gw, gb) for g in pair]
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if not np.isfinite(norm):
        bad = [i for i, g in enumerate(grads) if not np.all(np.isfinite(g))]
        raise NetworkError(f"non-finite gradient in parameter tensors {bad}")
    if norm == 0.0:
        return {"grad_norm": 0.0, "applied": 0.0}
    if norm > cfg.clip_norm:
        scale = cfg.clip_norm / norm
        grads = [g * scale for g in grads]
    opt.ascend(net.params(), grads)
    net.version += 1
    return {"grad_norm": norm, "applied": 1.0}
