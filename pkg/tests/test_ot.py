import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from otfwi.ot import (
    TimeGrid,
    cdf,
    displacement_interpolation,
    lp_oracle_cost,
    pseudo_inverse_compose,
    transport_cost,
    transport_gradient,
    w1_distance,
)

T3 = np.array([0.0, 1.0, 2.0])


def random_pair(rng, n, floor=0.05):
    p0 = rng.random(n) + floor
    p1 = rng.random(n) + floor
    return p0 / p0.sum(), p1 / p1.sum()


def fd_pairing(cost, p, h, eps_list=(1e-5, 1e-6, 1e-7)):
    # central differences; the best eps avoids straddling a kink
    return [(cost(p + e * h) - cost(p - e * h)) / (2 * e) for e in eps_list]


positive_masses = arrays(
    float, st.integers(2, 24), elements=st.floats(0.01, 1.0)
).map(lambda a: a / a.sum())


class TestCdf:
    def test_single_atom(self):
        np.testing.assert_array_equal(cdf([1.0, 0.0, 0.0]), [1.0, 1.0, 1.0])

    def test_running_sum(self):
        np.testing.assert_allclose(cdf([0.25, 0.25, 0.5]), [0.25, 0.5, 1.0])

    def test_uniform(self):
        n = 10
        np.testing.assert_allclose(cdf(np.full(n, 1 / n)), np.arange(1, n + 1) / n)

    @pytest.mark.parametrize("bad", [[0.5, -0.1, 0.6], [0.2, 0.2, 0.2], [np.nan, 0.5, 0.5]])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            cdf(bad)


class TestPseudoInverse:
    def test_identity(self):
        rng = np.random.default_rng(3)
        p = rng.random(12) + 0.1
        f = np.cumsum(p / p.sum())
        t = np.linspace(0, 1, 12)
        np.testing.assert_allclose(pseudo_inverse_compose(f, f, t), t, atol=1e-14)

    def test_all_mass_to_first_atom(self):
        phi = pseudo_inverse_compose(cdf([1, 0, 0]), cdf([0, 0, 1]), T3)
        np.testing.assert_array_equal(phi, [0.0, 0.0, 0.0])

    def test_flat_segment_takes_left_endpoint(self):
        # f0 is flat on [t1, t2]; level 0.5 must map to t1, never divide by zero
        f0 = cdf([0.0, 0.5, 0.0, 0.5])
        f1 = np.array([0.5, 0.5, 0.5, 1.0])
        phi = pseudo_inverse_compose(f0, f1, np.arange(4.0))
        assert np.all(np.isfinite(phi))
        assert phi[0] == 1.0

    def test_matches_bisection_inverse(self):
        # independent oracle: bisection on the piecewise-linear CDF through the nodes
        rng = np.random.default_rng(11)
        t = np.linspace(0.0, 0.6, 16)
        for _ in range(20):
            p0, p1 = random_pair(rng, 16)
            f0, f1 = np.cumsum(p0), np.cumsum(p1)
            phi = pseudo_inverse_compose(f0, f1, t)
            for k in range(16):
                level = min(f1[k], 1.0)
                if level <= f0[0]:
                    expected = t[0]
                else:
                    lo, hi = t[0], t[-1]
                    for _ in range(200):
                        mid = 0.5 * (lo + hi)
                        if np.interp(mid, t, f0) < level:
                            lo = mid
                        else:
                            hi = mid
                    expected = hi
                assert phi[k] == pytest.approx(expected, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(positive_masses, st.randoms(use_true_random=False))
    def test_map_is_monotone(self, p0, rnd):
        p1 = np.array([rnd.uniform(0.0, 1.0) for _ in p0])
        p1 = p1 / p1.sum() if p1.sum() > 0 else np.full(p0.size, 1 / p0.size)
        t = np.arange(p0.size, dtype=float)
        phi = pseudo_inverse_compose(np.cumsum(p0), np.cumsum(p1), t)
        assert np.all(np.diff(phi) >= 0)
        assert phi.min() >= t[0] and phi.max() <= t[-1]


class TestTransportCost:
    def test_identity(self):
        p = np.array([0.2, 0.3, 0.5])
        assert transport_cost(p, p, T3) == 0.0

    def test_single_atom(self):
        assert transport_cost([0, 0, 1], [1, 0, 0], T3) == pytest.approx(4.0)

    def test_split_half_masses(self):
        p0, p1 = [0, 0.5, 0.5], [0.5, 0.5, 0]
        oracle = lp_oracle_cost(p0, p1, T3, solver="linprog")
        assert oracle == pytest.approx(1.0, abs=1e-9)
        assert transport_cost(p0, p1, T3) == pytest.approx(oracle, abs=1e-12)

    @pytest.mark.parametrize("shift", [1, 3, 7])
    def test_atom_shift_is_quadratic(self, shift):
        grid = TimeGrid(nt=10, dt=0.004)
        p0 = np.zeros(10)
        p1 = np.zeros(10)
        p0[1] = 1.0
        p1[1 + shift] = 1.0
        assert transport_cost(p0, p1, grid) == pytest.approx((shift * 0.004) ** 2, rel=1e-12)

    def test_grid_mismatch(self):
        with pytest.raises(ValueError, match="grid mismatch"):
            transport_cost([0.5, 0.5], [0.5, 0.5], T3)

    def test_matches_both_oracles(self):
        rng = np.random.default_rng(0)
        t = np.linspace(0.0, 0.3, 8)
        for _ in range(30):
            p0, p1 = random_pair(rng, 8)
            cost = transport_cost(p0, p1, t)
            assert cost == pytest.approx(lp_oracle_cost(p0, p1, t), abs=1e-12)
            assert cost == pytest.approx(lp_oracle_cost(p0, p1, t, solver="linprog"), abs=1e-9)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        t = np.linspace(0, 1, 40)
        for _ in range(50):
            p0, p1 = random_pair(rng, 40)
            assert transport_cost(p0, p1, t) == pytest.approx(transport_cost(p1, p0, t), abs=1e-9)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(2)
        t = np.linspace(0, 1, 30)
        for _ in range(100):
            a, b = random_pair(rng, 30)
            c, _ = random_pair(rng, 30)
            ab = np.sqrt(transport_cost(a, b, t))
            bc = np.sqrt(transport_cost(b, c, t))
            ac = np.sqrt(transport_cost(a, c, t))
            assert ac <= ab + bc + 1e-9

    @settings(max_examples=60, deadline=None)
    @given(positive_masses)
    def test_nonnegative_and_identity(self, p):
        t = np.arange(p.size, dtype=float)
        q = np.roll(p, 1)
        assert transport_cost(p, q, t) >= 0
        assert transport_cost(p, p, t) == 0.0

    def test_interpolated_scheme_is_a_different_cost(self):
        rng = np.random.default_rng(5)
        t = np.arange(16.0)
        p0, p1 = random_pair(rng, 16)
        interp = transport_cost(p0, p1, t, scheme="interpolated")
        assert interp >= 0
        assert interp != pytest.approx(transport_cost(p0, p1, t), rel=1e-3)

    def test_frequency_decay(self):
        nt = 400
        grid = TimeGrid(nt=nt, dt=0.005)
        t = grid.nodes
        period = nt * grid.dt
        p0 = np.full(nt, 1.0 / nt)
        costs = []
        for k in range(1, 9):
            p = p0 * (1 + 0.5 * np.sin(2 * np.pi * k * t / period))
            costs.append(transport_cost(p0, p / p.sum(), grid))
        assert np.all(np.diff(costs) < 0)


class TestTransportGradient:
    def test_identity_gives_zero(self):
        rng = np.random.default_rng(4)
        p = rng.random(20) + 0.1
        p /= p.sum()
        np.testing.assert_allclose(transport_gradient(p, p, np.arange(20.0)), 0.0, atol=1e-15)

    @pytest.mark.parametrize("scheme", ["quantile", "interpolated"])
    def test_matches_central_differences(self, scheme):
        rng = np.random.default_rng(7)
        t = TimeGrid(nt=64, dt=0.004).nodes
        for _ in range(20):
            p0, p1 = random_pair(rng, 64)
            h = rng.standard_normal(64)
            h -= h.mean()
            g = transport_gradient(p0, p1, t, scheme=scheme)
            fds = fd_pairing(lambda q: transport_cost(p0, q, t, scheme=scheme), p1, h)
            err = min(abs(fd - g @ h) for fd in fds) / abs(g @ h)
            assert err < 1e-4

    def test_constant_shift_is_invisible(self):
        rng = np.random.default_rng(8)
        t = np.linspace(0, 1, 32)
        p0, p1 = random_pair(rng, 32)
        g = transport_gradient(p0, p1, t)
        h = rng.standard_normal(32)
        h -= h.mean()
        assert (g + 123.0) @ h == pytest.approx(g @ h, abs=1e-10)

    def test_schemes_agree_as_dt_shrinks(self):
        # all three discretize one continuous potential; compare modulo constants
        errors = []
        for nt in (128, 512, 2048):
            t = np.linspace(0, 1, nt)
            p0 = np.exp(-((t - 0.4) ** 2) / 0.02) + 0.2
            p1 = np.exp(-((t - 0.6) ** 2) / 0.03) + 0.2
            p0, p1 = p0 / p0.sum(), p1 / p1.sum()
            ref = transport_gradient(p0, p1, t)
            ref -= ref.mean()
            row = []
            for scheme in ("interpolated", "trapezoid"):
                g = transport_gradient(p0, p1, t, scheme=scheme)
                row.append(np.abs(g - g.mean() - ref).max() / np.abs(ref).max())
            errors.append(row)
        errors = np.array(errors)
        assert np.all(errors[-1] < 0.005)
        assert np.all(errors[1:] < errors[:-1] / 2.5)

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            transport_gradient([0.5, 0.5], [0.5, 0.5], [0.0, 1.0], scheme="simpson")


class TestW1:
    def test_identity(self):
        assert w1_distance([0.2, 0.8], [0.2, 0.8], [0.0, 1.0]) == 0.0

    def test_adjacent_atoms(self):
        assert w1_distance([1, 0, 0], [0, 1, 0], T3) == pytest.approx(1.0)

    def test_matches_lp(self):
        rng = np.random.default_rng(9)
        t = np.linspace(0, 2, 12)
        for _ in range(20):
            p0, p1 = random_pair(rng, 12)
            expected = lp_oracle_cost(p0, p1, t, exponent=1, solver="linprog")
            assert w1_distance(p0, p1, t) == pytest.approx(expected, abs=1e-9)


    def test_nonuniform_grid(self):
        t = np.array([0.0, 0.1, 0.5, 1.7])
        assert w1_distance([1, 0, 0, 0], [0, 0, 0, 1], t) == pytest.approx(1.7)
        rng = np.random.default_rng(10)
        p0, p1 = random_pair(rng, 4)
        assert w1_distance(p0, p1, t) == pytest.approx(lp_oracle_cost(p0, p1, t, 1, "linprog"), abs=1e-12)


class TestDisplacementInterpolation:
    def test_endpoints(self):
        rng = np.random.default_rng(10)
        t = np.linspace(0, 1, 50)
        p0, p1 = random_pair(rng, 50)
        assert np.abs(displacement_interpolation(p0, p1, t, 0.0) - p0).sum() < 1e-6
        assert np.abs(displacement_interpolation(p0, p1, t, 1.0) - p1).sum() < 1e-6

    def test_midpoint_of_atoms(self):
        mid = displacement_interpolation([1, 0, 0], [0, 0, 1], T3, 0.5)
        np.testing.assert_allclose(mid, [0.0, 1.0, 0.0], atol=1e-12)

    def test_output_is_a_mass_trace(self):
        rng = np.random.default_rng(12)
        t = np.linspace(0, 1, 30)
        p0, p1 = random_pair(rng, 30)
        for alpha in (0.1, 0.5, 0.9):
            q = displacement_interpolation(p0, p1, t, alpha)
            assert q.min() >= -1e-15
            assert q.sum() == pytest.approx(1.0, abs=1e-12)

    def test_geodesic_cost_splits(self):
        # along a geodesic W2(p0, p_a) is a fraction alpha of W2(p0, p1), up to re-binning
        t = np.linspace(0, 1, 400)
        p0 = np.exp(-((t - 0.3) ** 2) / 0.005) + 1e-3
        p1 = np.exp(-((t - 0.7) ** 2) / 0.005) + 1e-3
        p0, p1 = p0 / p0.sum(), p1 / p1.sum()
        mid = displacement_interpolation(p0, p1, t, 0.5)
        full = np.sqrt(transport_cost(p0, p1, t))
        assert np.sqrt(transport_cost(p0, mid, t)) == pytest.approx(0.5 * full, rel=0.02)

    def test_rejects_alpha(self):
        with pytest.raises(ValueError):
            displacement_interpolation([1, 0, 0], [0, 0, 1], T3, 1.5)


class TestLpOracle:
    def test_identity(self):
        assert lp_oracle_cost([0.3, 0.7], [0.3, 0.7], [0.0, 1.0]) == 0.0

    def test_atom_pair(self):
        assert lp_oracle_cost([0, 0, 1], [1, 0, 0], T3) == pytest.approx(4.0)
        assert lp_oracle_cost([0, 0, 1], [1, 0, 0], T3, solver="linprog") == pytest.approx(4.0)

    def test_size_cap(self):
        p = np.full(65, 1 / 65)
        with pytest.raises(ValueError, match="capped"):
            lp_oracle_cost(p, p, np.arange(65.0))
