"""Experiment orchestration: configs, training, evaluation and reports.

Every episode draws from its own random streams, derived from
``(master seed, phase, iteration, episode)``. Training and evaluation use
different phase tags, so their streams never overlap, and every policy
evaluated under one master seed faces the same arrivals and demand noise.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from slicesim.encoding import EncodingSpec
from slicesim.policy.agents import HEURISTICS, NEURAL, NeuralPolicy
from slicesim.policy.network import (
    PolicyNetwork,
    init_network,
    load_checkpoint,
    save_checkpoint,
)
from slicesim.policy.reinforce import (
    TrainerConfig,
    baseline_advantage,
    reinforce_update,
    reward_to_go,
    step_baseline_advantage,
    trajectory_from_result,
)
from slicesim.simulator import EpisodeResult, SimConfig, run_episode
from slicesim.topology import Topology, load_topology
from slicesim.workload import WorkloadConfig, generate_arrivals

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
POLICIES = ("prop", "bl", "rnd", "fit", "acpt")
PHASE_TRAIN, PHASE_EVAL = 1, 2
CHECKPOINT_NAME = "policy.ckpt"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    topology_path: Path
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval_episodes: int = 25
    policy: str = "prop"
    seed: int = 0
    out: Path = Path("runs/default")
    workers: int = 1
    argmax: bool = False

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; choose from {', '.join(POLICIES)}")
        if not Path(self.topology_path).is_file():
            raise ConfigError(f"topology file {self.topology_path} does not exist")
        if self.eval_episodes < 1:
            raise ConfigError("evaluation needs at least one episode")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        self.topology_path = Path(self.topology_path)
        self.out = Path(self.out)

    def load_topology(self) -> Topology:
        return load_topology(self.topology_path)

    def encoding(self, topo: Topology, policy: Optional[str] = None) -> EncodingSpec:
        policy = policy or self.policy
        return EncodingSpec.from_topology(
            topo, self.workload.caps, len(self.workload.tenants), include_tenant=(policy == "prop")
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "topology": str(self.topology_path),
            "workload": self.workload.to_dict(),
            "sim": self.sim.to_dict(),
            "trainer": self.trainer.to_dict(),
            "evaluation": {"episodes": self.eval_episodes},
            "policy": self.policy,
            "seed": self.seed,
            "out": str(self.out),
            "argmax": self.argmax,
        }


def load_config(path: str | Path, **overrides: Any) -> ExperimentConfig:
    """Parse a JSON experiment config; relative paths resolve against its directory.

    Keyword overrides with value ``None`` are ignored.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version {version} unsupported (expected {SCHEMA_VERSION})")
    if "topology" not in doc:
        raise ConfigError(f"{path}: missing 'topology'")
    topo = Path(doc["topology"])
    if not topo.is_absolute():
        topo = path.parent / topo
    try:
        kw: dict[str, Any] = {
            "topology_path": topo,
            "workload": WorkloadConfig.from_dict(doc.get("workload", {})),
            "sim": SimConfig.from_dict(doc.get("sim", {})),
            "trainer": TrainerConfig.from_dict(doc.get("trainer", {})),
            "eval_episodes": int(doc.get("evaluation", {}).get("episodes", 25)),
            "policy": doc.get("policy", "prop"),
            "seed": int(doc.get("seed", 0)),
            "out": Path(doc.get("out", "runs/default")),
            "argmax": bool(doc.get("argmax", False)),
        }
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    kw["workers"] = int(os.environ.get("SLICESIM_WORKERS", doc.get("workers", 1)))
    for key, value in overrides.items():
        if value is not None:
            kw[key] = value
    return ExperimentConfig(**kw)


# -- seeding -------------------------------------------------------------------


def episode_streams(
    master: int, phase: int, iteration: int, episode: int
) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """(schedule, demand-noise, policy) generators for one episode."""
    ss = np.random.SeedSequence([master, phase, iteration, episode])
    return tuple(np.random.default_rng(s) for s in ss.spawn(3))  # type: ignore[return-value]


# -- rollouts ------------------------------------------------------------------


@dataclass
class _Job:
    topology: Mapping[str, Any]
    workload: WorkloadConfig
    sim: SimConfig
    policy: str
    net: Optional[PolicyNetwork]
    spec: Optional[EncodingSpec]
    greedy: bool
    streams: tuple[int, int, int, int]


def make_policy(name: str, net: Optional[PolicyNetwork] = None, spec: Optional[EncodingSpec] = None, greedy: bool = False):
    if name in HEURISTICS:
        return HEURISTICS[name]()
    if name in NEURAL:
        if net is None or spec is None:
            raise ConfigError(f"policy {name!r} needs a network")
        return NeuralPolicy(net, spec, greedy=greedy, name=name)
    raise ConfigError(f"unknown policy {name!r}")


def _play(topo: Topology, workload: WorkloadConfig, sim: SimConfig, policy, streams) -> EpisodeResult:
    sched_rng, noise_rng, policy_rng = episode_streams(*streams)
    schedule = generate_arrivals(sched_rng, workload, len(topo.cos))
    return run_episode(topo, schedule, policy, sim, noise_rng, policy_rng)


def _play_job(job: _Job) -> EpisodeResult:
    topo = load_topology(job.topology)
    policy = make_policy(job.policy, job.net, job.spec, job.greedy)
    return _play(topo, job.workload, job.sim, policy, job.streams)


def rollout(
    topo: Topology,
    cfg: ExperimentConfig,
    policy_name: str,
    policy,
    streams: Sequence[tuple[int, int, int, int]],
    pool: Optional[ProcessPoolExecutor] = None,
) -> list[EpisodeResult]:
    """Play one episode per stream tuple; results come back in stream order."""
    if pool is None:
        return [_play(topo, cfg.workload, cfg.sim, policy, s) for s in streams]
    net = getattr(policy, "net", None)
    spec = getattr(policy, "spec", None)
    greedy = getattr(policy, "greedy", False)
    jobs = [_Job(topo.to_dict(), cfg.workload, cfg.sim, policy_name, net, spec, greedy, s) for s in streams]
    return list(pool.map(_play_job, jobs))


def _pool(workers: int) -> Optional[ProcessPoolExecutor]:
    return ProcessPoolExecutor(max_workers=workers) if workers > 1 else None


# -- training ------------------------------------------------------------------


@dataclass
class TrainingOutcome:
    net: PolicyNetwork
    spec: EncodingSpec
    curve: list[tuple[int, float, float, float]]
    checkpoint: Path


def _attach_advantages(results: list[EpisodeResult], trajs, tcfg: TrainerConfig) -> None:
    if tcfg.credit == "episode":
        for tr, a in zip(trajs, baseline_advantage([tr.ret for tr in trajs])):
            tr.advantages = a
    else:
        per_step = step_baseline_advantage([reward_to_go(r, tcfg.discount) for r in results])
        for tr, a in zip(trajs, per_step):
            tr.advantages = a


def run_training(cfg: ExperimentConfig) -> TrainingOutcome:
    if cfg.policy not in NEURAL:
        raise ConfigError(f"policy not trainable: {cfg.policy!r}")
    topo = cfg.load_topology()
    spec = cfg.encoding(topo)
    tcfg = cfg.trainer
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0, 0, 0]))
    net = init_network(init_rng, [spec.width, *tcfg.hidden, 2])
    policy = NeuralPolicy(net, spec, name=cfg.policy)
    opt = tcfg.optimizer()
    curve: list[tuple[int, float, float, float]] = []
    pool = _pool(cfg.workers)
    try:
        for it in range(tcfg.iterations):
            streams = [(cfg.seed, PHASE_TRAIN, it, e) for e in range(tcfg.episodes_per_iteration)]
            results = rollout(topo, cfg, cfg.policy, policy, streams, pool)
            losses = np.array([(r.total_loss, r.rejection_loss, r.scaling_loss) for r in results])
            if not np.all(np.isfinite(losses)):
                raise RuntimeError(f"non-finite episode loss at iteration {it}")
            trajs = [trajectory_from_result(r, spec) for r in results]
            _attach_advantages(results, trajs, tcfg)
            reinforce_update(net, trajs, tcfg, opt)
            mean = losses.mean(axis=0)
            curve.append((it, float(mean[0]), float(mean[1]), float(mean[2])))
            if (it + 1) % 50 == 0:
                log.info("%s seed %d iteration %d: mean loss %.2f", cfg.policy, cfg.seed, it + 1, mean[0])
    finally:
        if pool is not None:
            pool.shutdown()

    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        cfg.out / "training_curve.csv",
        ["iteration", "total_loss", "rejection_loss", "scaling_loss"],
        [(i, _fmt(t), _fmt(r), _fmt(s)) for i, t, r, s in curve],
    )
    ckpt = cfg.out / CHECKPOINT_NAME
    save_checkpoint(net, ckpt, spec.digest(), {"policy": cfg.policy, "seed": cfg.seed, **tcfg.to_dict()})
    return TrainingOutcome(net, spec, curve, ckpt)


# -- evaluation ----------------------------------------------------------------


def episode_columns(n_tenants: int, n_priorities: int) -> list[str]:
    cols = ["episode", "policy", "total_loss", "rejection_loss", "scaling_loss", "accepted", "rejected"]
    for kind in ("accepted", "rejected"):
        cols += [f"{kind}_t{t}_p{p}" for t in range(n_tenants) for p in range(n_priorities)]
    cols.append("admission_shortfall")
    return cols


def episode_row(i: int, policy: str, r: EpisodeResult) -> list[Any]:
    row: list[Any] = [i, policy, _fmt(r.total_loss), _fmt(r.rejection_loss), _fmt(r.scaling_loss), r.n_accepted, r.n_rejected]
    row += [int(x) for x in r.accepted.ravel()]
    row += [int(x) for x in r.rejected.ravel()]
    row.append(r.admission_shortfall)
    return row


def run_evaluation(cfg: ExperimentConfig, checkpoint: Optional[str | Path] = None) -> list[EpisodeResult]:
    topo = cfg.load_topology()
    net = spec = None
    if cfg.policy in NEURAL:
        if checkpoint is None:
            raise ConfigError(f"policy {cfg.policy!r} needs --checkpoint")
        spec = cfg.encoding(topo)
        net, _ = load_checkpoint(checkpoint, expect_digest=spec.digest())
    policy = make_policy(cfg.policy, net, spec, cfg.argmax)
    streams = [(cfg.seed, PHASE_EVAL, 0, e) for e in range(cfg.eval_episodes)]
    pool = _pool(cfg.workers)
    try:
        results = rollout(topo, cfg, cfg.policy, policy, streams, pool)
    finally:
        if pool is not None:
            pool.shutdown()
    n_t = len(cfg.workload.tenants)
    n_p = results[0].accepted.shape[1]
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        cfg.out / "episodes.csv",
        episode_columns(n_t, n_p),
        [episode_row(i, cfg.policy, r) for i, r in enumerate(results)],
    )
    return results


# -- reports -------------------------------------------------------------------


@dataclass
class ReportTables:
    overall: list[dict[str, Any]]
    by_tenant: list[dict[str, Any]]
    by_priority: list[dict[str, Any]]
    by_tenant_priority: list[dict[str, Any]]


def _read_episodes(root: Path) -> dict[str, list[dict[str, str]]]:
    files = sorted(root.rglob("episodes.csv"))
    if not files:
        raise FileNotFoundError(f"no episodes.csv under {root}")
    rows: dict[str, list[dict[str, str]]] = {}
    for f in files:
        with open(f, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.setdefault(row["policy"], []).append(row)
    return rows


def _class_counts(row: Mapping[str, str]) -> dict[tuple[int, int], tuple[int, int]]:
    """(tenant, priority) -> (requests, rejected)."""
    out = {}
    for key, val in row.items():
        if key.startswith("rejected_t"):
            t, p = key[len("rejected_t"):].split("_p")
            acc = int(row[f"accepted_t{t}_p{p}"])
            rej = int(val)
            out[(int(t), int(p))] = (acc + rej, rej)
    return out


def _rate(rejected: int, requests: int) -> float:
    return rejected / requests if requests else 0.0


def generate_report(root: str | Path, out: Optional[str | Path] = None) -> ReportTables:
    """Aggregate every ``episodes.csv`` under ``root`` into the four report tables."""
    root = Path(root)
    out = Path(out) if out is not None else root
    episodes = _read_episodes(root)
    order = [p for p in POLICIES if p in episodes] + sorted(set(episodes) - set(POLICIES))

    overall, by_t, by_p, by_tp = [], [], [], []
    for pol in order:
        rows = episodes[pol]
        tot = np.array([[float(r["total_loss"]), float(r["rejection_loss"]), float(r["scaling_loss"])] for r in rows])
        overall.append({
            "policy": pol,
            "episodes": len(rows),
            "total_mean": tot[:, 0].mean(), "rejection_mean": tot[:, 1].mean(), "scaling_mean": tot[:, 2].mean(),
            "total_sum": tot[:, 0].sum(), "rejection_sum": tot[:, 1].sum(), "scaling_sum": tot[:, 2].sum(),
        })
        agg: dict[tuple[int, int], list[int]] = {}
        for r in rows:
            for k, (n, rej) in _class_counts(r).items():
                a = agg.setdefault(k, [0, 0])
                a[0] += n
                a[1] += rej
        tenants = sorted({t for t, _ in agg})
        prios = sorted({p for _, p in agg})
        for t in tenants:
            n = sum(agg[(t, p)][0] for p in prios)
            rej = sum(agg[(t, p)][1] for p in prios)
            by_t.append({"policy": pol, "tenant": t, "requests": n, "rejected": rej, "rejection_prob": _rate(rej, n)})
        for p in prios:
            n = sum(agg[(t, p)][0] for t in tenants)
            rej = sum(agg[(t, p)][1] for t in tenants)
            by_p.append({"policy": pol, "priority": p, "requests": n, "rejected": rej, "rejection_prob": _rate(rej, n)})
        for t in tenants:
            for p in prios:
                n, rej = agg[(t, p)]
                by_tp.append({"policy": pol, "tenant": t, "priority": p, "requests": n, "rejected": rej,
                              "rejection_prob": _rate(rej, n)})

    out.mkdir(parents=True, exist_ok=True)
    _write_dicts(out / "overall_loss.csv", overall)
    _write_dicts(out / "rejection_by_tenant.csv", by_t)
    _write_dicts(out / "rejection_by_priority.csv", by_p)
    _write_dicts(out / "rejection_by_tenant_priority.csv", by_tp)
    return ReportTables(overall, by_t, by_p, by_tp)


# -- full comparison -------------------------------------------------------------


def run_experiment(
    cfg: ExperimentConfig, seeds: Iterable[int], policies: Sequence[str] = POLICIES
) -> dict[int, dict[str, list[EpisodeResult]]]:
    """Train the neural policies and evaluate every policy, per master seed.

    Layout: ``<out>/seed<k>/<policy>/{episodes.csv, policy.ckpt, training_curve.csv}``.
    """
    results: dict[int, dict[str, list[EpisodeResult]]] = {}
    for seed in seeds:
        results[seed] = {}
        for pol in policies:
            run_cfg = replace(cfg, policy=pol, seed=seed, out=cfg.out / f"seed{seed}" / pol)
            ckpt = None
            if pol in NEURAL:
                ckpt = run_training(run_cfg).checkpoint
            results[seed][pol] = run_evaluation(run_cfg, ckpt)
    generate_report(cfg.out)
    return results


# -- csv helpers -----------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _write_dicts(path: Path, rows: list[dict[str, Any]]) -> None:
    if not rows:
        raise ValueError(f"nothing to write to {path}")
    header = list(rows[0])
    _write_csv(path, header, [[_fmt(r[k]) if isinstance(r[k], float) else r[k] for k in header] for r in rows])
