import math

import numpy as np
import pytest

from corhf.core import substream
from corhf.models import (
    ErrorModel,
    Lorenz63,
    Lorenz96,
    ObservationSpec,
    integrate,
    l63_rhs,
    l96_rhs,
    likelihood_pdf,
    observe,
    rk4_step,
    sample_error,
)


def test_l63_rhs_examples():
    p = Lorenz63().equilibrium
    np.testing.assert_allclose(l63_rhs(p), 0.0, atol=1e-12)
    np.testing.assert_array_equal(l63_rhs(np.zeros(3)), 0.0)
    np.testing.assert_allclose(l63_rhs([1.0, 1.0, 1.0]), [0.0, 26.0, 1 - 8 / 3], rtol=1e-15)


def test_l96_rhs_examples():
    np.testing.assert_array_equal(l96_rhs(np.full(40, 8.0)), 0.0)
    np.testing.assert_array_equal(l96_rhs(np.zeros(40)), 8.0)
    x = np.arange(40.0)
    i = 0  # (x1 - x_{-2}) * x_{-1} - x0 + F with wraparound
    assert l96_rhs(x)[i] == (x[1] - x[38]) * x[39] - x[0] + 8


def test_l96_cyclic_symmetry():
    x = substream(0, "l96").normal(size=40)
    for s in (1, 7, 39):
        np.testing.assert_array_equal(l96_rhs(np.roll(x, s)), np.roll(l96_rhs(x), s))


def test_rhs_broadcasts_over_members():
    x = substream(1, "b").normal(size=(3, 5))
    np.testing.assert_array_equal(l63_rhs(x)[:, 2], l63_rhs(x[:, 2]))


def test_integrate_identity_and_fixed_point():
    m = Lorenz63()
    x = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(integrate(m, x, 0.0), x)
    np.testing.assert_allclose(integrate(m, m.equilibrium, 1.0), m.equilibrium, atol=1e-10)
    with pytest.raises(ValueError):
        integrate(m, x, 0.015)


def test_rk4_fourth_order_convergence():
    m = Lorenz63()
    x0 = np.array([1.0, 1.0, 1.0])
    ref = integrate(m, x0, 0.5, dt=0.0005)
    e1 = np.linalg.norm(integrate(m, x0, 0.5, dt=0.01) - ref)
    e2 = np.linalg.norm(integrate(m, x0, 0.5, dt=0.005) - ref)
    assert 16 * 0.7 <= e1 / e2 <= 16 * 1.3


def test_rk4_exact_for_linear_decay():
    x = rk4_step(lambda v: -v, np.array([1.0]), 0.1)
    taylor = 1 - 0.1 + 0.1**2 / 2 - 0.1**3 / 6 + 0.1**4 / 24
    assert x[0] == pytest.approx(taylor, rel=1e-15)


def test_integration_is_reproducible():
    m = Lorenz96()
    x = substream(5, "r").normal(size=40) + 8
    assert np.array_equal(integrate(m, x, m.interval), integrate(m, x.copy(), m.interval))


def test_observe_examples():
    m = Lorenz63()
    spec = ObservationSpec("l63-distance", ErrorModel("half-gaussian", 1.0), model=m)
    p = m.equilibrium
    assert observe(spec, p)[0] == 0.0
    assert observe(spec, p + [1.0, 0, 0])[0] == pytest.approx(1.0, abs=1e-12)
    sq = ObservationSpec("l63-distance", ErrorModel("half-gaussian", 1.0), sqrt=True)
    assert observe(sq, p + [3.0, 4.0, 0])[0] == pytest.approx(5.0, abs=1e-12)
    spec96 = ObservationSpec("l96-abs-alternate", ErrorModel("half-cauchy", 0.1))
    x = np.array([(-1.0) ** (i + 1) * (i + 1) for i in range(40)])
    z = observe(spec96, x)
    assert z.shape == (20,) and spec96.n_obs(40) == 20
    np.testing.assert_array_equal(z[:3], [1, 3, 5])
    np.testing.assert_array_equal(spec96.positions(40)[:3], [0, 2, 4])
    with pytest.raises(ValueError):
        observe(spec, np.zeros(4))


def test_error_model_samples_and_pdfs():
    rng = substream(0, "err")
    hg = ErrorModel("half-gaussian", 2.0)
    e = sample_error(hg, rng, 100_000)
    assert np.all(e >= 0)
    assert e.mean() == pytest.approx(math.sqrt(2 * 2.0 / math.pi), rel=0.02)
    assert e.var() == pytest.approx(hg.variance(), rel=0.02)
    assert np.all(sample_error(ErrorModel("half-cauchy", 0.1), rng, 1000) >= 0)
    g = ErrorModel("gaussian", 2.0)
    assert likelihood_pdf(g, 0.0) == pytest.approx(1 / math.sqrt(4 * math.pi), rel=1e-14)
    c = ErrorModel("cauchy", 0.1)
    assert likelihood_pdf(c, 0.1) == pytest.approx(1 / (2 * math.pi * 0.1), rel=1e-14)
    assert hg.full() == g
    assert hg.pdf(-0.1) == 0.0
    assert hg.pdf(0.3) == pytest.approx(2 * g.pdf(0.3), rel=1e-14)
    assert c.variance() == math.inf
    for kind, scale in (("laplace", 1.0), ("gaussian", 0.0)):
        with pytest.raises(ValueError):
            ErrorModel(kind, scale)
