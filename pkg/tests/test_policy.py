import math

import numpy as np
import pytest

from conftest import line_topology
from oracles import forward_by_hand
from slicesim.encoding import EncodingSpec
from slicesim.policy.agents import AcceptAll, FitPolicy, NeuralPolicy, RandomPolicy, sample_action
from slicesim.policy.network import (
    Adam,
    NetworkError,
    PolicyNetwork,
    forward,
    init_network,
    load_checkpoint,
    log_prob_gradient,
    save_checkpoint,
)
from slicesim.policy.reinforce import (
    TrainerConfig,
    Trajectory,
    baseline_advantage,
    reinforce_update,
    reward_to_go,
    step_baseline_advantage,
)
from slicesim.simulator import AdmissionContext, EpisodeResult
from slicesim.topology import allocate, choose_route, load_topology
from slicesim.workload import LOW_PRIORITY, Caps, SliceRequest


def ctx_for(co_cap, rdc_cap, link_cap, demand, busy=(0, 0, 0)):
    topo = load_topology(line_topology(co_cap, rdc_cap, link_cap))
    state = topo.new_state()
    path = choose_route(topo, state, 0)
    if any(busy):
        allocate(state, path, busy)
    req = SliceRequest(0, 0.0, 0, LOW_PRIORITY, 0, demand, 5, 0)
    return AdmissionContext(topo, state, req, path, 0.0, 2)


class TestHeuristics:
    @pytest.mark.parametrize(
        "caps, busy, demand, expected",
        [
            ((50, 80, 50), (30, 0, 0), (20, 5, 5), True),
            ((50, 80, 50), (31, 0, 0), (20, 5, 5), False),
            ((50, 80, 50), (0, 46, 0), (20, 5, 5), False),
            ((50, 10, 50), (0, 0, 0), (20, 5, 11), False),
            ((50, 80, 0), (0, 0, 0), (20, 0, 5), True),
            ((0, 0, 0), (0, 0, 0), (0, 0, 0), True),
        ],
    )
    def test_fit(self, caps, busy, demand, expected):
        ctx = ctx_for(*caps, demand, busy)
        assert FitPolicy().decide(ctx, np.random.default_rng(0)).accept is expected

    def test_accept_all(self):
        ctx = ctx_for(0, 0, 0, (20, 5, 5))
        assert AcceptAll().decide(ctx, np.random.default_rng(0)).accept

    def test_random_rate(self):
        ctx = ctx_for(50, 80, 50, (1, 1, 1))
        rng = np.random.default_rng(9)
        n = sum(RandomPolicy().decide(ctx, rng).accept for _ in range(20000))
        assert abs(n / 20000 - 0.5) < 0.015


class TestNetwork:
    def test_zero_weights_uniform(self):
        net = init_network(np.random.default_rng(0), [7, 5, 2])
        for w in net.weights:
            w[:] = 0
        assert np.allclose(forward(net, np.ones(7)), [0.5, 0.5])

    def test_sums_to_one(self, rng):
        net = init_network(rng, [30, 40, 40, 40, 40, 2])
        x = (rng.random((200, 30)) < 0.5).astype(float)
        p = forward(net, x)
        assert p.shape == (200, 2)
        assert np.allclose(p.sum(axis=1), 1.0)
        assert np.all(p >= 0)

    def test_matches_hand_forward(self, rng):
        net = init_network(rng, [12, 6, 5, 2])
        for b in net.biases:
            b[:] = rng.normal(size=b.shape)
        for _ in range(10):
            x = (rng.random(12) < 0.5).astype(float)
            ref = forward_by_hand([w.tolist() for w in net.weights], [b.tolist() for b in net.biases], x)
            assert np.allclose(forward(net, x), ref, rtol=0, atol=1e-12)

    def test_large_logits_stable(self):
        net = init_network(np.random.default_rng(0), [3, 2])
        net.weights[0][:] = [[1e3, 1e3, 1e3], [0, 0, 0]]
        p = forward(net, np.ones(3))
        assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)

    def test_non_finite(self):
        net = init_network(np.random.default_rng(0), [3, 2])
        net.weights[0][0, 0] = np.nan
        with pytest.raises(NetworkError):
            forward(net, np.ones(3))

    def test_width_mismatch(self):
        net = init_network(np.random.default_rng(0), [3, 2])
        with pytest.raises(NetworkError):
            forward(net, np.ones(4))

    def test_he_init_std(self):
        net = init_network(np.random.default_rng(5), [1371, 40, 40, 40, 40, 2])
        for w in net.weights[1:4]:
            assert w.std() == pytest.approx(math.sqrt(2 / 40), rel=0.1)
        assert net.weights[0].std() == pytest.approx(math.sqrt(2 / 1371), rel=0.1)
        assert all(not b.any() for b in net.biases)

    @pytest.mark.parametrize("dims", [[5], [5, 3], [5, 0, 2]])
    def test_bad_dims(self, dims):
        with pytest.raises(NetworkError):
            init_network(np.random.default_rng(0), dims)

    def test_neural_policy_width_check(self, metro):
        spec = EncodingSpec.from_topology(metro, Caps(), 2)
        with pytest.raises(NetworkError):
            NeuralPolicy(init_network(np.random.default_rng(0), [10, 2]), spec)


def test_sample_action():
    rng = np.random.default_rng(0)
    assert sample_action(rng, (1.0, 0.0)) == (0, 0.0)
    a, lp = sample_action(rng, (0.0, 1.0))
    assert a == 1 and lp == 0.0
    draws = [sample_action(rng, (0.3, 0.7))[0] for _ in range(20000)]
    assert abs(draws.count(0) / 20000 - 0.3) < 0.015
    # log of a zero-probability action is floored, not -inf
    _, lp = sample_action(np.random.default_rng(1), (0.0, 1.0))
    assert math.isfinite(lp)


class TestAdvantages:
    def test_normalised(self):
        assert np.allclose(baseline_advantage([1.0, 2.0, 3.0]), [-1.2247449, 0.0, 1.2247449], atol=1e-6)

    @pytest.mark.parametrize("r", [[5.0], [], [2.0, 2.0, 2.0]])
    def test_degenerate(self, r):
        adv = baseline_advantage(r)
        assert len(adv) == len(r) and not np.any(adv)

    def test_reward_to_go(self):
        res = EpisodeResult(2, 2)
        res.decisions = [_rec(0.5), _rec(1.5), _rec(3.0)]
        res.loss_events = [(0.5, 1.0), (1.0, 2.0), (2.0, 4.0)]
        assert np.allclose(reward_to_go(res), [-7.0, -4.0, 0.0])
        assert np.allclose(reward_to_go(res, 0.5), [-(1 + 2 * 0.5**0.5 + 4 * 0.5**1.5), -4 * 0.5**0.5, 0.0])

    def test_step_baseline(self):
        adv = step_baseline_advantage([np.array([1.0, 2.0]), np.array([3.0])])
        # index 0 baseline 2, index 1 baseline 2; residuals (-1, 0), (1)
        std = np.std([-1.0, 0.0, 1.0])
        assert np.allclose(adv[0], [-1 / std, 0.0])
        assert np.allclose(adv[1], [1 / std])


def _rec(t):
    from slicesim.simulator import DecisionRecord

    return DecisionRecord(0, t, 0, 0, True, 0.0, np.zeros(1, dtype=np.int64))


def one_state_traj(adv, action=0, width=4):
    return Trajectory(np.ones((1, width), dtype=np.uint8), np.array([action]), 0.0, np.array([adv]))


class TestReinforce:
    def test_positive_advantage_raises_prob(self):
        net = init_network(np.random.default_rng(1), [4, 8, 2])
        x = np.ones(4)
        before = forward(net, x)[0]
        cfg = TrainerConfig(iterations=1, episodes_per_iteration=1)
        reinforce_update(net, [one_state_traj(1.0)], cfg, cfg.optimizer())
        assert forward(net, x)[0] > before
        assert net.version == 1

    def test_zero_advantage_no_change(self):
        net = init_network(np.random.default_rng(1), [4, 8, 2])
        snap = [p.copy() for p in net.params()]
        cfg = TrainerConfig(iterations=1, episodes_per_iteration=1)
        out = reinforce_update(net, [one_state_traj(0.0), one_state_traj(0.0, 1)], cfg, cfg.optimizer())
        assert out["applied"] == 0.0 and net.version == 0
        assert all(np.array_equal(a, b) for a, b in zip(snap, net.params()))

    def test_converges_to_accept(self):
        net = init_network(np.random.default_rng(2), [4, 40, 40, 40, 40, 2])
        cfg = TrainerConfig(iterations=500, episodes_per_iteration=1)
        opt = cfg.optimizer()
        for _ in range(500):
            reinforce_update(net, [one_state_traj(1.0)], cfg, opt)
        assert forward(net, np.ones(4))[0] > 0.99

    def test_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(7)
        net = init_network(rng, [8, 4, 4, 4, 4, 2])
        for b in net.biases:
            b[:] = rng.normal(0, 0.1, b.shape)
        x = (rng.random((6, 8)) < 0.5).astype(float)
        acts = rng.integers(0, 2, 6)
        w = rng.normal(size=6)

        def objective():
            p = forward(net, x)
            return float(np.sum(w * np.log(p[np.arange(6), acts])))

        gw, gb, _ = log_prob_gradient(net, x, acts, w)
        h = 1e-4
        for params, grads in ((net.weights, gw), (net.biases, gb)):
            for p, g in zip(params, grads):
                num = np.zeros_like(p)
                for idx in np.ndindex(p.shape):
                    old = p[idx]
                    p[idx] = old + h
                    up = objective()
                    p[idx] = old - h
                    down = objective()
                    p[idx] = old
                    num[idx] = (up - down) / (2 * h)
                err = np.linalg.norm(g - num) / max(np.linalg.norm(g) + np.linalg.norm(num), 1e-12)
                assert err <= 1e-4

    def test_clipping(self):
        net = init_network(np.random.default_rng(1), [4, 8, 2])
        cfg = TrainerConfig(iterations=1, episodes_per_iteration=1, clip_norm=1e-3)
        out = reinforce_update(net, [one_state_traj(1e6)], cfg, cfg.optimizer())
        assert out["grad_norm"] > 1e-3 and out["applied"] == 1.0

    def test_width_mismatch(self):
        net = init_network(np.random.default_rng(1), [5, 8, 2])
        cfg = TrainerConfig(iterations=1, episodes_per_iteration=1)
        with pytest.raises(NetworkError):
            reinforce_update(net, [one_state_traj(1.0)], cfg, cfg.optimizer())

    def test_adam_first_step_is_lr(self):
        p = [np.zeros(3)]
        Adam(1e-3).ascend(p, [np.array([5.0, -0.1, 0.0])])
        assert np.allclose(p[0], [1e-3, -1e-3, 0.0], atol=1e-9)

    @pytest.mark.parametrize(
        "kw", [{"step_size": 0}, {"beta1": 1.0}, {"credit": "td"}, {"discount": 0}, {"iterations": 0}]
    )
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            TrainerConfig(**kw)

    def test_config_unknown_key(self):
        with pytest.raises(ValueError):
            TrainerConfig.from_dict({"learning_rate": 0.1})


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        net = init_network(rng, [9, 5, 2])
        save_checkpoint(net, tmp_path / "c", "abc123", {"step_size": 1e-3})
        back, digest = load_checkpoint(tmp_path / "c", "abc123")
        assert digest == "abc123"
        for a, b in zip(net.params(), back.params()):
            assert np.array_equal(a, b)

    def test_digest_mismatch(self, tmp_path, rng):
        save_checkpoint(init_network(rng, [9, 5, 2]), tmp_path / "c", "abc123")
        with pytest.raises(NetworkError):
            load_checkpoint(tmp_path / "c", "other")

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "c").write_text("hello\n")
        with pytest.raises(NetworkError):
            load_checkpoint(tmp_path / "c")

    def test_bad_network_shapes(self):
        with pytest.raises(NetworkError):
            PolicyNetwork([np.zeros((3, 4))], [np.zeros(3)])
        with pytest.raises(NetworkError):
            PolicyNetwork([np.zeros((3, 4)), np.zeros((2, 2))], [np.zeros(3), np.zeros(2)])
