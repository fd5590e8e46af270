import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slicesim.encoding import EncodingSpec, encode_levels, encode_state, thermometer, to_bitstring
from slicesim.policy.agents import NeuralPolicy
from slicesim.policy.network import forward, init_network
from slicesim.topology import allocate, choose_route
from slicesim.workload import HIGH_PRIORITY, LOW_PRIORITY, Caps, SliceRequest


def make_req(co=0, demand=(20, 5, 5), duration=30, tenant=1, profile=HIGH_PRIORITY):
    return SliceRequest(0, 10.0, tenant, profile, co, demand, duration, profile.priority)


@pytest.fixture(scope="module")
def specs(metro):
    prop = EncodingSpec.from_topology(metro, Caps(), 2, include_tenant=True)
    return prop, prop.without_tenant()


def by_hand(topo, state, req, path, caps, n_tenants, include_tenant):
    """Bit vector built field by field with plain lists."""
    bits = []

    def therm(b, x):
        x = min(x, b)
        return [1] * x + [0] * (b - x)

    for i, cap in enumerate(topo.co_capacity):
        bits += therm(cap, state.busy_co[i]) + therm(caps.k_c, req.demand[0] if i == req.co else 0)
    for i, cap in enumerate(topo.rdc_capacity):
        bits += therm(cap, state.busy_rdc[i]) + therm(caps.k_s, req.demand[2] if i == path.rdc else 0)
    for i, cap in enumerate(topo.link_capacity):
        bits += therm(cap, state.busy_link[i]) + therm(caps.k_m, req.demand[1] if i in path.links else 0)
    bits += therm(caps.k_e, req.duration) + [req.priority]
    if include_tenant:
        bits += therm(n_tenants, req.tenant)
    return np.array(bits, dtype=np.uint8)


class TestThermometer:
    @pytest.mark.parametrize("b, x, expected", [(5, 3, "11100"), (5, 0, "00000"), (5, 5, "11111"), (5, 9, "11111"), (1, 1, "1")])
    def test_examples(self, b, x, expected):
        assert to_bitstring(thermometer(b, x)) == expected

    def test_exhaustive_popcount(self):
        for b in range(1, 17):
            for x in range(0, 2 * b + 1):
                v = thermometer(b, x)
                assert len(v) == b
                assert int(v.sum()) == min(x, b)
                # ones form a prefix
                assert not np.any(np.diff(v.astype(int)) > 0)

    @pytest.mark.parametrize("b, x", [(0, 0), (-1, 0), (3, -1)])
    def test_invalid(self, b, x):
        with pytest.raises(ValueError):
            thermometer(b, x)


class TestSpec:
    def test_widths(self, specs):
        prop, bl = specs
        # 6*(50+20) + 2*(80+10) + 12*(50+10) + 48 + 1 (+ 2 tenant bits)
        assert prop.width == 1371
        assert bl.width == 1369

    def test_field_count(self, specs):
        prop, bl = specs
        assert prop.n_fields == 2 * (6 + 2 + 12) + 3
        assert bl.n_fields == prop.n_fields - 1

    def test_digest(self, specs, metro):
        prop, bl = specs
        assert prop.digest() != bl.digest()
        assert prop.digest() == EncodingSpec.from_topology(metro, Caps(), 2).digest()
        assert prop.digest() != EncodingSpec.from_topology(metro, Caps(k_e=24), 2).digest()

    def test_zero_width_rejected(self, metro):
        with pytest.raises(ValueError):
            EncodingSpec.from_topology(metro, Caps(), 0, include_tenant=True)


class TestEncodeState:
    def test_idle_state_example(self, metro, specs):
        prop, _ = specs
        state = metro.new_state()
        req = make_req(co=0, demand=(20, 5, 5), duration=30, tenant=1)
        bits = encode_state(state, req, prop, metro)
        path = choose_route(metro, state, 0)
        assert np.array_equal(bits, by_hand(metro, state, req, path, Caps(), 2, True))
        # co1's request field, then 30 duration bits, the priority bit and tenant "10"
        assert to_bitstring(bits[50:70]) == "1" * 20
        tail = to_bitstring(bits[-51:])
        assert tail == "1" * 30 + "0" * 18 + "1" + "10"

    def test_all_zero(self, metro, specs):
        prop, bl = specs
        # a request never has zero duration in a run, but the encoder must not care
        req = SliceRequest(0, 0.0, 0, LOW_PRIORITY, 0, (0, 0, 0), 0, 0)
        assert encode_state(metro.new_state(), req, prop, metro).sum() == 0
        assert encode_state(metro.new_state(), req, bl, metro).sum() == 0

    def test_baseline_is_prefix(self, metro, specs, rng):
        prop, bl = specs
        for _ in range(20):
            state = random_state(metro, rng)
            req = make_req(co=int(rng.integers(6)), tenant=int(rng.integers(2)), duration=int(rng.integers(1, 80)))
            p = encode_state(state, req, prop, metro)
            b = encode_state(state, req, bl, metro)
            assert np.array_equal(p[: bl.width], b)
            assert p[bl.width:].sum() == req.tenant

    def test_random_states_match_hand_encoding(self, metro, specs, rng):
        prop, _ = specs
        for _ in range(50):
            state = random_state(metro, rng)
            co = int(rng.integers(6))
            req = make_req(co=co, demand=tuple(int(x) for x in rng.integers(0, 21, 3)), duration=int(rng.integers(1, 80)))
            path = choose_route(metro, state, co)
            assert np.array_equal(encode_state(state, req, prop, metro), by_hand(metro, state, req, path, Caps(), 2, True))

    def test_pure(self, metro, specs, rng):
        prop, _ = specs
        state = random_state(metro, rng)
        before = state.copy()
        req = make_req()
        a = encode_state(state, req, prop, metro)
        b = encode_state(state, req, prop, metro)
        assert np.array_equal(a, b)
        assert state == before

    def test_unknown_co(self, metro, specs):
        with pytest.raises(ValueError):
            encode_state(metro.new_state(), make_req(co=6), specs[0], metro)

    def test_needs_route(self, metro, specs):
        with pytest.raises(ValueError):
            encode_state(metro.new_state(), make_req(), specs[0])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 5), st.integers(0, 49), st.integers(1, 50))
    def test_more_busy_more_ones(self, metro, specs, co, busy, extra):
        prop, _ = specs
        s1 = metro.new_state()
        s1.busy_co[co] = busy
        s2 = s1.copy()
        s2.busy_co[co] = min(50, busy + extra)
        req = make_req()
        a = encode_state(s1, req, prop, metro).astype(int)
        b = encode_state(s2, req, prop, metro).astype(int)
        assert np.all(b >= a)
        assert b.sum() - a.sum() == s2.busy_co[co] - busy

    def test_levels_expand_to_bits(self, metro, specs, rng):
        prop, _ = specs
        rows = []
        for _ in range(5):
            state = random_state(metro, rng)
            req = make_req(co=int(rng.integers(6)))
            path = choose_route(metro, state, req.co)
            rows.append(encode_levels(state, req, prop, path))
        batch = prop.expand(np.vstack(rows))
        for row, lv in zip(batch, rows):
            assert np.array_equal(row, prop.expand(lv))


def random_state(topo, rng):
    state = topo.new_state()
    for _ in range(int(rng.integers(0, 12))):
        co = int(rng.integers(len(topo.cos)))
        path = choose_route(topo, state, co)
        allocate(state, path, tuple(int(x) for x in rng.integers(0, 25, 3)))
    return state


def test_fast_path_matches_forward(metro, specs, rng):
    prop, _ = specs
    net = init_network(np.random.default_rng(3), [prop.width, 40, 40, 40, 40, 2])
    agent = NeuralPolicy(net, prop)
    for _ in range(30):
        state = random_state(metro, rng)
        req = make_req(co=int(rng.integers(6)), tenant=int(rng.integers(2)))
        path = choose_route(metro, state, req.co)
        lv = encode_levels(state, req, prop, path)
        assert np.allclose(agent.probabilities(lv), forward(net, prop.expand(lv)), atol=1e-12)
    # the prefix table follows parameter changes
    net.weights[0] += 0.01
    net.version += 1
    assert np.allclose(agent.probabilities(lv), forward(net, prop.expand(lv)), atol=1e-12)
