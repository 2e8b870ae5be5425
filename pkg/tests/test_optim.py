import numpy as np
import pytest

from otfwi.optim import OptimizerConfig, minimize, relative_decrease
from otfwi.wave import SlownessModel

TARGET = np.array([0.3, -0.7, 1.5, 2.0])


def quadratic(x):
    return 0.5 * np.sum((x - TARGET) ** 2), x - TARGET


def rosenbrock(x):
    a, b = x
    value = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    return value, np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])


def test_quadratic_interior_minimum():
    res = minimize(np.zeros(4), quadratic, OptimizerConfig(lower=-5, upper=5))
    assert np.abs(res.x - TARGET).max() < 1e-8
    assert res.n_iters <= 30


def test_quadratic_box_projection():
    lo, hi = -0.5, 1.0
    res = minimize(np.zeros(4), quadratic, OptimizerConfig(lower=lo, upper=hi))
    np.testing.assert_allclose(res.x, np.clip(TARGET, lo, hi), atol=1e-8)


def test_per_variable_bounds():
    lo = np.array([0.5, -1, -1, -1])
    hi = np.array([1.0, 1, 1, 3])
    res = minimize(np.full(4, 0.5), quadratic, OptimizerConfig(lower=lo, upper=hi))
    np.testing.assert_allclose(res.x, np.clip(TARGET, lo, hi), atol=1e-8)


def test_rosenbrock():
    cfg = OptimizerConfig(lower=-2, upper=2, max_iters=200, stop_tol=1e-12)
    res = minimize(np.array([-1.2, 1.0]), rosenbrock, cfg)
    assert np.linalg.norm(res.x - 1.0) < 1e-5
    assert res.n_iters <= 200


def test_iterates_feasible_and_monotone():
    cfg = OptimizerConfig(lower=-0.8, upper=0.9, max_iters=200, stop_tol=1e-12)
    res = minimize(np.array([-0.5, 0.5]), rosenbrock, cfg)
    xs = np.array([r.x for r in res.history])
    values = [r.value for r in res.history]
    assert np.all(xs >= -0.8) and np.all(xs <= 0.9)
    assert np.all(np.diff(values) <= 0)


def test_stopping_rule_on_logged_values():
    res = minimize(np.array([-1.2, 1.0]), rosenbrock, OptimizerConfig(lower=-2, upper=2, max_iters=500))
    assert res.status == "converged"
    values = [r.value for r in res.history]
    decreases = [(a - b) / max(a, b, 1.0) for a, b in zip(values[:-1], values[1:])]
    assert all(d >= 1e-5 for d in decreases[:-1])
    assert decreases[-1] < 1e-5
    assert decreases == [relative_decrease(a, b) for a, b in zip(values[:-1], values[1:])]


def test_first_step_length():
    res = minimize(np.zeros(4), quadratic, OptimizerConfig(max_iters=1))
    g = -TARGET
    assert res.history[1].step == pytest.approx(1.0 / np.abs(g).max())


def test_model_objects_pass_through():
    model = SlownessModel(np.full((3, 2), 2.0), 1.0, 1.0)
    target = np.arange(6.0).reshape(3, 2) * 0.1 + 1.0

    def fun(mod):
        assert isinstance(mod, SlownessModel)
        r = mod.m - target
        return 0.5 * np.sum(r**2), r

    res = minimize(model, fun, OptimizerConfig(lower=0.5, upper=3.0))
    assert isinstance(res.x, SlownessModel)
    np.testing.assert_allclose(res.x.m, target, atol=1e-8)


def test_line_search_failure_reported():
    # gradient points the wrong way, so no trial step can decrease the value
    res = minimize(np.ones(2), lambda x: (np.sum(x**2), -x), OptimizerConfig(max_iters=5))
    assert res.status == "line_search"
    assert res.n_iters == 0


def test_non_finite_aborts():
    with pytest.raises(FloatingPointError, match="non-finite"):
        minimize(np.ones(2), lambda x: (1.0, np.array([np.nan, 0.0])))


def test_initial_point_outside_bounds():
    with pytest.raises(ValueError, match="outside"):
        minimize(np.full(2, 3.0), quadratic, OptimizerConfig(lower=0, upper=1))


@pytest.mark.parametrize(
    "kw", [{"lower": 1, "upper": 0}, {"stop_tol": 0}, {"memory": 0}, {"c1": 1.5}]
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        OptimizerConfig(**kw)
