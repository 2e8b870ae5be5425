import numpy as np
import pytest
from sklearn.base import clone

from otfwi.encoding import (
    EncodingConfig,
    SoftplusEncoder,
    add_constant_encode,
    encode_adjoint,
    positive_part,
    softplus,
    softplus_decode,
    softplus_encode,
)
from otfwi.ot import TimeGrid, displacement_interpolation, transport_cost
from otfwi.wave import ricker


@pytest.fixture
def ricker_trace():
    grid = TimeGrid(nt=500, dt=0.004)
    return ricker(10.0, grid, delay=1.0)


def test_zero_trace_is_uniform():
    enc = softplus_encode(np.zeros(4), beta=1.0)
    np.testing.assert_allclose(enc.pdf, 0.25)
    assert enc.mean_mass == pytest.approx(np.log(2.0))


def test_large_beta_approaches_positive_part():
    np.testing.assert_allclose(softplus([-1.0, 2.0], beta=100.0), [0.0, 2.0], atol=1e-4)


def test_no_overflow():
    assert softplus(np.array([1000.0]), beta=1.0)[0] == 1000.0
    enc = softplus_encode(np.array([1000.0, -1000.0, 0.0]), beta=10.0)
    assert np.all(np.isfinite(enc.pdf))
    # exp(-10000) underflows; the floor keeps masses strictly positive
    floored = softplus_encode(np.array([1000.0, -1000.0, 0.0]), beta=10.0, floor_ratio=1e-6)
    assert np.all(floored.pdf > 0)


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        softplus_encode([0.0, np.inf], beta=1.0)


def test_mass_invariants(ricker_trace):
    pdf = softplus_encode(ricker_trace, beta=2.0).pdf
    assert pdf.min() > 0
    assert pdf.sum() == pytest.approx(1.0, abs=1e-12)


def test_floor_ratio_enforced(ricker_trace):
    r = 0.2
    pdf = softplus_encode(50 * ricker_trace, beta=5.0, floor_ratio=r).pdf
    assert pdf.min() >= r / pdf.size - 1e-15
    assert pdf.sum() == pytest.approx(1.0, abs=1e-12)


class TestDecode:
    def test_round_trip_ricker(self, ricker_trace):
        enc = softplus_encode(ricker_trace, beta=2.0)
        back = softplus_decode(enc, beta=2.0)
        assert np.abs(back - ricker_trace).max() <= 1e-6

    def test_round_trip_relative(self):
        u = np.linspace(-3, 3, 61)
        back = softplus_decode(softplus_encode(u, beta=1.5), beta=1.5)
        np.testing.assert_allclose(back, u, rtol=1e-10, atol=1e-12)

    def test_round_trip_with_floor_and_negative_beta(self):
        u = np.sin(np.linspace(0, 6, 40))
        enc = softplus_encode(u, beta=-2.0, floor_ratio=0.1)
        np.testing.assert_allclose(softplus_decode(enc, beta=-2.0, floor_ratio=0.1), u, atol=1e-10)

    def test_log2_decodes_to_zero(self):
        assert softplus_decode((np.array([1.0]), np.array(np.log(2.0))), beta=1.0)[0] == pytest.approx(0.0, abs=1e-15)

    def test_zero_mass_rejected(self):
        with pytest.raises(ValueError):
            softplus_decode((np.array([0.0, 1.0]), np.array(0.5)), beta=1.0)


class TestAdjoint:
    def test_constants_annihilated(self):
        rng = np.random.default_rng(0)
        cfg = EncodingConfig(beta=2.0)
        u = rng.standard_normal(100)
        out = encode_adjoint(u, np.full(100, 1e3), cfg)
        assert np.abs(out).max() < 1e-12

    def test_closed_form_at_zero(self):
        rng = np.random.default_rng(1)
        nt = 16
        phi = rng.standard_normal(nt)
        out = encode_adjoint(np.zeros(nt), phi, EncodingConfig(beta=1.0))
        np.testing.assert_allclose(out, (phi - phi.mean()) * 0.5 / (nt * np.log(2)), atol=1e-15)

    @pytest.mark.parametrize(
        "cfg",
        [
            EncodingConfig(beta=2.0),
            EncodingConfig(beta=-0.7, floor_ratio=0.1),
            EncodingConfig(scheme="add_constant", constant=5.0),
        ],
        ids=["softplus", "negative-beta-floor", "add-constant"],
    )
    def test_duality_pairing(self, cfg):
        rng = np.random.default_rng(2)
        for _ in range(50):
            u = rng.standard_normal(40)
            h = rng.standard_normal(40)
            phi = rng.standard_normal(40)
            eps = 1e-5
            dpdf = (cfg.encode(u + eps * h).pdf - cfg.encode(u - eps * h).pdf) / (2 * eps)
            lhs = encode_adjoint(u, phi, cfg) @ h
            rhs = phi @ dpdf
            assert abs(lhs - rhs) <= 1e-6 * max(abs(rhs), 1e-12)

    def test_chain_with_transport_cost(self):
        from otfwi.ot import transport_gradient

        rng = np.random.default_rng(3)
        cfg = EncodingConfig(beta=3.0)
        t = np.linspace(0, 1, 64)
        target = cfg.encode(rng.standard_normal(64)).pdf
        u = rng.standard_normal(64)
        grad = encode_adjoint(u, transport_gradient(target, cfg.encode(u).pdf, t), cfg)
        h = rng.standard_normal(64)
        errs = []
        for eps in (1e-5, 1e-6, 1e-7):
            fp = transport_cost(target, cfg.encode(u + eps * h).pdf, t)
            fm = transport_cost(target, cfg.encode(u - eps * h).pdf, t)
            errs.append(abs((fp - fm) / (2 * eps) - grad @ h) / abs(grad @ h))
        assert min(errs) < 1e-4

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            encode_adjoint(np.zeros(4), np.zeros(5), EncodingConfig())


class TestAddConstant:
    def test_zero_gives_uniform(self):
        np.testing.assert_allclose(add_constant_encode(np.zeros(5), 1.0).pdf, 0.2)

    def test_positive_after_shift(self, ricker_trace):
        c = 1.1 * abs(ricker_trace.min())
        assert add_constant_encode(ricker_trace, c).pdf.min() > 0

    def test_rejects_insufficient_shift(self, ricker_trace):
        with pytest.raises(ValueError):
            add_constant_encode(ricker_trace, 0.1)


def test_positive_part():
    np.testing.assert_array_equal(positive_part([-1.0, 2.0]), [0.0, 2.0])
    np.testing.assert_array_equal(positive_part([-1.0, -3.0]), [0.0, 0.0])


def test_softplus_converges_uniformly_in_beta():
    u = np.sin(np.linspace(0, 20, 2000))
    gaps = [np.abs(softplus(u, b) - positive_part(u)).max() for b in 2.0 ** np.arange(11)]
    assert np.all(np.diff(gaps) <= 0)
    assert np.abs(softplus(u, 1e3) - positive_part(u)).max() < 1e-3


def test_pointwise_before_normalization():
    rng = np.random.default_rng(4)
    u = rng.standard_normal(50)
    window = slice(10, 30)
    np.testing.assert_allclose(softplus(u, 2.0)[window], softplus(u[window], 2.0))


def test_geodesic_midpoint_tracks_translation():
    grid = TimeGrid(nt=500, dt=0.004)
    t = grid.nodes
    p0 = ricker(5.0, grid, delay=0.5)
    p1 = ricker(5.0, grid, delay=1.1)
    cfg = EncodingConfig(beta=10.0)
    mid = displacement_interpolation(cfg.encode(p0).pdf, cfg.encode(p1).pdf, t, 0.5)
    assert abs(t[np.argmax(mid)] - 0.8) <= grid.dt


class TestSoftplusEncoder:
    def test_round_trip(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((6, 80))
        enc = SoftplusEncoder(beta=2.0, amplitude_scale="maxabs").fit(X)
        pdf = enc.transform(X)
        np.testing.assert_allclose(pdf.sum(axis=1), 1.0)
        np.testing.assert_allclose(enc.inverse_transform(pdf), X, atol=1e-9)

    def test_params_and_clone(self):
        enc = SoftplusEncoder(beta=4.0)
        assert enc.get_params() == {"beta": 4.0, "floor_ratio": 0.0, "amplitude_scale": "none"}
        assert clone(enc).set_params(beta=1.0).beta == 1.0

    def test_not_fitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            SoftplusEncoder().transform(np.zeros((2, 3)))

    def test_wrong_width(self):
        enc = SoftplusEncoder().fit(np.zeros((2, 5)))
        with pytest.raises(ValueError, match="samples per trace"):
            enc.transform(np.zeros((2, 6)))

    def test_zero_beta_rejected_at_fit(self):
        with pytest.raises(ValueError):
            SoftplusEncoder(beta=0.0).fit(np.zeros((2, 5)))
