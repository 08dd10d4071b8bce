import numpy as np
import pytest
from sklearn.base import clone

from cqqkey.counterexample import build_counterexample, default_grid
from cqqkey.exceptions import ResourceError, ValidationError
from cqqkey.linalg import random_state, state, trace_norm_distance
from cqqkey.regularity import (ChannelNet, CubeCover, channel_net, continuity_checks, covering_regularity,
                               cube_cover_decompose, hausdorff_distance, parse_grid, regularity_modulus,
                               tensor_power_hausdorff_check)
from cqqkey.source import CompoundSource, CqChannel, CqqState, product_channel

from conftest import P0, P1, random_qubit_source


def brute_hausdorff(a, b):
    ab = max(min(trace_norm_distance(x, y) for y in b) for x in a)
    ba = max(min(trace_norm_distance(x, y) for x in a) for y in b)
    return max(ab, ba)


class TestHausdorff:
    def test_examples(self, rng):
        a = [random_state(2, rng) for _ in range(3)]
        assert hausdorff_distance(a, a).distance == pytest.approx(0.0, abs=1e-12)
        r, s = random_state(2, rng), random_state(2, rng)
        assert hausdorff_distance([r], [s]).distance == pytest.approx(trace_norm_distance(r, s))
        rep = hausdorff_distance([r], [r, s])
        # the point set is a subset: one direction is 0, the other is ||r - s||_1
        assert rep.directed[0] == pytest.approx(0.0, abs=1e-12)
        assert rep.directed[1] == pytest.approx(trace_norm_distance(r, s))

    def test_brute_force(self, rng):
        for _ in range(20):
            a = [random_state(3, rng) for _ in range(rng.integers(1, 5))]
            b = [random_state(3, rng) for _ in range(rng.integers(1, 5))]
            rep = hausdorff_distance(a, b)
            assert rep.distance == pytest.approx(brute_hausdorff(a, b), abs=1e-10)
            i, j = rep.witness_pair
            assert trace_norm_distance(a[i], b[j]) == pytest.approx(rep.distance, abs=1e-10)

    def test_triangle(self, rng):
        for _ in range(30):
            a, b, c = ([random_state(2, rng) for _ in range(rng.integers(1, 4))] for _ in range(3))
            assert hausdorff_distance(a, c).distance <= (hausdorff_distance(a, b).distance
                                                         + hausdorff_distance(b, c).distance + 1e-12)

    def test_empty(self):
        with pytest.raises(ValidationError):
            hausdorff_distance([], [np.eye(2) / 2])


class TestModulus:
    def test_singleton(self, rng):
        rows = regularity_modulus(random_qubit_source(rng), [0.1, 1.0, 2.0])
        assert all(r["modulus"] == 0.0 for r in rows)

    def test_cartesian_source(self, rng):
        qs = [rng.dirichlet(np.ones(2)) for _ in range(4)]
        chans = [product_channel([random_state(2, rng).data for _ in range(2)],
                                 [random_state(2, rng).data for _ in range(2)]) for _ in range(3)]
        src = CompoundSource([CqqState(q, v) for q in qs for v in chans])
        grid = parse_grid("0.05:2:12")
        rows = regularity_modulus(src, grid)
        for r in rows:
            assert r["modulus"] <= 2 * r["delta"] + 1e-12
        mods = [r["modulus"] for r in rows]
        assert all(a <= b for a, b in zip(mods, mods[1:]))

    def test_counterexample_is_irregular(self):
        src = build_counterexample([(0.5, 0.5), (0.49, 0.51), (0.51, 0.49)])
        for r in regularity_modulus(src, [0.021, 0.05, 0.5]):
            assert r["modulus"] >= 1.0

    def test_parse_grid(self):
        assert parse_grid("0.05:0.5:10")[-1] == 0.5 and len(parse_grid("0.05:0.5:10")) == 10
        with pytest.raises(ValidationError):
            parse_grid("0.1:0.2")


class TestTensorPower:
    def test_examples(self, rng):
        a = [random_state(2, rng) for _ in range(2)]
        rep = tensor_power_hausdorff_check(a, a, 2)
        assert rep["power_distance"] == pytest.approx(0.0, abs=1e-12) and rep["holds"]
        r, s = random_state(2, rng), random_state(2, rng)
        rep = tensor_power_hausdorff_check([r], [s], 2)
        direct = np.abs(np.linalg.eigvalsh(np.kron(r.data, r.data) - np.kron(s.data, s.data))).sum()
        assert rep["power_distance"] == pytest.approx(direct, abs=1e-10)
        assert rep["holds"]

    def test_cap(self, rng):
        with pytest.raises(ResourceError):
            tensor_power_hausdorff_check([random_state(4, rng)], [random_state(4, rng)], 7)


class TestCubeCover:
    def test_large_delta_one_family(self, rng):
        cov = cube_cover_decompose(random_qubit_source(rng, members=4), 1e6)
        assert len(cov.subfamilies) == 1

    def test_far_states_split(self):
        src = CompoundSource([CqqState(np.array([0.5, 0.5]), product_channel([P0, P0], [P0, P0])),
                              CqqState(np.array([0.3, 0.7]), product_channel([P1, P1], [P1, P1]))])
        assert len(cube_cover_decompose(src, 0.01).subfamilies) == 2

    def test_counterexample_isolates_pi(self):
        cov = cube_cover_decompose(build_counterexample(default_grid(6)), 0.1)
        assert all(cov.assignment[i] != cov.assignment[0] for i in range(1, 6))

    def test_bounds_hold(self, rng):
        for _ in range(5):
            src = random_qubit_source(rng, members=6)
            for delta in (0.5, 2.0, 10.0):
                cov = cube_cover_decompose(src, delta)
                assert all(r["holds"] for r in covering_regularity(src, cov))

    def test_estimator(self, rng):
        src = random_qubit_source(rng, members=3)
        est = CubeCover(delta=1e6)
        assert clone(est).get_params()["delta"] == 1e6
        assert est.fit(src).predict().tolist() == [0, 0, 0]


class TestChannelNet:
    def channels(self, rng, k):
        return [CqChannel(np.stack([random_state(2, rng).data for _ in range(2)])) for _ in range(k)]

    def test_singleton(self, rng):
        rep = channel_net(self.channels(rng, 1), 0.1)
        assert rep["net"] == [0] and rep["holds"]

    def test_large_alpha(self, rng):
        v = [CqChannel(np.stack([np.eye(2) / 2, np.eye(2) / 2])),
             CqChannel(np.stack([0.55 * P0 + 0.45 * P1, np.eye(2) / 2]))]
        assert channel_net(v, 0.3)["size"] == 1

    def test_random_channels(self, rng):
        rep = channel_net(self.channels(rng, 10), 0.1, n_check=3)
        assert rep["word_ok"] and rep["chi_ok"] and rep["cardinality_ok"]

    def test_transformer(self, rng):
        v = self.channels(rng, 6)
        net = ChannelNet(alpha=0.3).fit(v)
        d = net.transform(v)
        assert d.shape == (6, 1) and np.all(d <= 0.3 + 1e-12)

    def test_alpha_range(self, rng):
        with pytest.raises(ValidationError):
            channel_net(self.channels(rng, 2), 0.5)


class TestContinuity:
    def test_small_sweep(self):
        rows = continuity_checks(samples=60, seed=4)
        assert {r["check"] for r in rows} == {"alicki_fannes", "holevo_bound_1", "holevo_bound_2", "fannes_cont_mut"}
        assert all(r["violations"] == 0 for r in rows)

    def test_unknown(self):
        with pytest.raises(ValidationError):
            continuity_checks(samples=1, checks=["nope"])
