import numpy as np
import pytest

from amv3d.errors import NonFiniteObjective
from amv3d.lbfgs import LbfgsOptions, minimize, multiscale_minimize


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def test_quadratic_two_iterations(rng):
    a = rng.standard_normal(20)
    res = minimize(lambda x: (0.5 * np.sum((x - a) ** 2), x - a), np.zeros(20))
    assert res.iterations <= 2
    assert np.linalg.norm(res.x - a) < 1e-8


def test_rosenbrock():
    opts = LbfgsOptions(max_iter=200, g_rtol=0.0, g_tol=1e-10)
    res = minimize(rosenbrock, np.array([-1.2, 1.0]), opts)
    assert res.f < 1e-8
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-4)
    for cert in res.certificates:
        assert cert.satisfied(opts.c1, opts.c2)
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


def test_huge_tolerance_returns_start():
    x0 = np.array([-1.2, 1.0])
    res = minimize(rosenbrock, x0, LbfgsOptions(g_tol=1e9))
    assert res.iterations == 0
    np.testing.assert_array_equal(res.x, x0)


def test_nonfinite_start_rejected():
    with pytest.raises(NonFiniteObjective):
        minimize(lambda x: (np.nan, x), np.ones(3))


def test_options_validated():
    with pytest.raises(ValueError):
        LbfgsOptions(c1=0.5, c2=0.4)
    with pytest.raises(ValueError):
        LbfgsOptions(memory=0)


def test_deterministic(rng):
    A = rng.standard_normal((15, 15))
    H = A @ A.T + np.eye(15)
    b = rng.standard_normal(15)

    def f(x):
        return 0.5 * x @ H @ x - b @ x + 0.1 * np.sum(x ** 4), H @ x - b + 0.4 * x ** 3

    r1 = minimize(f, np.zeros(15))
    r2 = minimize(f, np.zeros(15))
    np.testing.assert_array_equal(r1.x, r2.x)


def test_single_stage_equals_plain(rng):
    a = rng.standard_normal(10)

    def f(x):
        return 0.5 * np.sum((x - a) ** 2) + np.sum(x ** 4), x - a + 4 * x ** 3

    x0 = rng.standard_normal(10)
    plain = minimize(f, x0)
    staged = multiscale_minimize(f, x0, [np.ones(10, bool)])
    np.testing.assert_array_equal(plain.x, staged.x)


def test_coarse_target_solved_at_first_stage(rng):
    a = np.zeros(12)
    a[:3] = rng.standard_normal(3)
    masks = [np.arange(12) < 3, np.arange(12) < 6, np.ones(12, bool)]
    f = lambda x: (0.5 * np.sum((x - a) ** 2), x - a)  # noqa: E731
    res = multiscale_minimize(f, np.zeros(12), masks)
    np.testing.assert_allclose(res.x, a, atol=1e-10)
    # later stages start converged and do nothing
    assert res.iterations <= 2


def test_stagewise_values_do_not_increase(rng):
    A = rng.standard_normal((12, 12))
    H = A @ A.T + 0.1 * np.eye(12)
    b = rng.standard_normal(12)
    f = lambda x: (0.5 * x @ H @ x - b @ x, H @ x - b)  # noqa: E731
    masks = [np.arange(12) < k for k in (3, 6, 12)]
    x = np.zeros(12)
    last = f(x)[0]
    for k in range(1, 4):
        res = multiscale_minimize(f, np.zeros(12), masks[:k])
        assert res.f <= last + 1e-12
        last = res.f
