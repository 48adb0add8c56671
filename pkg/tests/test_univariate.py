import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize

from corhf.core import substream
from corhf.univariate import (
    DegenerateScalingError,
    PiecewiseDensity,
    SamplingMethod,
    TailPolicy,
    build_rank_histogram_prior,
    cdf,
    draw_quantiles,
    inverse_cdf,
    member_quantiles,
    scaled_posterior,
    scaling_segments,
    tail_length,
    univariate_inference,
)

QDET = SamplingMethod.QUANTILE_DETERMINISTIC


@pytest.fixture
def two_point():
    return build_rank_histogram_prior([1.0, 0.0], 0.5, 0.5)


def test_two_point_prior_densities(two_point):
    np.testing.assert_allclose(np.diff(two_point.edges), [0.5, 1.0, 0.5])
    np.testing.assert_allclose(two_point.pdf([-0.25, 0.5, 1.25]), [2 / 3, 1 / 3, 2 / 3])
    assert two_point.pdf(-0.6) == 0 and two_point.pdf(1.6) == 0


def test_two_point_cdf_and_inverse(two_point):
    np.testing.assert_allclose(cdf(two_point, [0.0, 1.0, 0.5]), [1 / 3, 2 / 3, 0.5], atol=1e-15)
    assert cdf(two_point, -3.0) == 0.0 and cdf(two_point, 9.0) == 1.0
    assert inverse_cdf(two_point, 0.5) == pytest.approx(0.5, abs=1e-15)
    for u in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            inverse_cdf(two_point, u)


def test_prior_validation():
    with pytest.raises(ValueError):
        build_rank_histogram_prior([1.0], 1, 1)
    with pytest.raises(ValueError):
        build_rank_histogram_prior([1.0, np.inf], 1, 1)
    with pytest.raises(ValueError):
        build_rank_histogram_prior([1.0, 2.0], 0.0, 1)


def test_ties_become_strictly_increasing():
    d = build_rank_histogram_prior([2.0, 2.0, 2.0, 1.0], 1, 1)
    assert np.all(np.diff(d.knots) > 0)
    assert d.knots[1] == 2.0 and d.knots[-1] - 2.0 < 1e-14


def test_scaling_segments_and_posterior(two_point):
    np.testing.assert_allclose(scaling_segments([1.0, 3.0]), [1.0, 2.0, 3.0])
    post = scaled_posterior(two_point, np.array([1.0, 3.0]))
    np.testing.assert_allclose(post.masses, [1 / 6, 1 / 3, 1 / 2], atol=1e-15)
    np.testing.assert_array_equal(post.knots, two_point.knots)
    for g in (np.ones(2), np.full(2, 2.0)):
        np.testing.assert_allclose(scaled_posterior(two_point, g).masses, two_point.masses, atol=1e-15)
    with pytest.raises(DegenerateScalingError):
        scaled_posterior(two_point, np.zeros(2))
    with pytest.raises(ValueError):
        scaling_segments([1.0, -1.0])


def test_half_weight_tail_variant(two_point):
    # literal averaged form: each tail gets half the boundary value
    np.testing.assert_allclose(scaling_segments([1.0, 3.0], 0.5), [0.5, 2.0, 1.5])
    post = scaled_posterior(two_point, np.array([1.0, 3.0]), tail_factor=0.5)
    np.testing.assert_allclose(post.masses, [1 / 8, 1 / 2, 3 / 8], atol=1e-15)
    out = univariate_inference([0.0, 1.0], [1.0, 3.0], (0.5, 0.5), QDET, tail_factor=0.5)
    np.testing.assert_allclose(out, [5 / 12, 1 + 0.5 / 9], atol=1e-14)
    # a constant scaling is not an identity under this variant
    flat = univariate_inference([0.0, 1.0], [1.0, 1.0], (0.5, 0.5), QDET, tail_factor=0.5)
    np.testing.assert_allclose(flat, [1 / 6, 5 / 6], atol=1e-14)


def test_two_point_inference_hand_values():
    out = univariate_inference([0.0, 1.0], [1.0, 3.0], (0.5, 0.5), QDET)
    # u = 1/3 halfway through the middle bin, u = 2/3 a third into the right tail
    np.testing.assert_allclose(out, [0.5, 1 + 0.5 / 3], atol=1e-14)


def _bisection_oracle(d, u):
    """Invert the numerically integrated density by bisection."""
    edges = d.edges

    def F(x):
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            if x <= a:
                break
            total += integrate.quad(d.pdf, a, min(x, b), epsabs=1e-14, epsrel=1e-14)[0]
        return total

    return optimize.brentq(lambda x: F(x) - u, edges[0], edges[-1], xtol=1e-13, rtol=1e-14)


def test_two_point_inference_matches_quadrature_oracle(two_point):
    post = scaled_posterior(two_point, np.array([1.0, 3.0]))
    out = univariate_inference([0.0, 1.0], [1.0, 3.0], (0.5, 0.5), QDET)
    oracle = [_bisection_oracle(post, u) for u in (1 / 3, 2 / 3)]
    np.testing.assert_allclose(out, oracle, atol=1e-9)


def test_inverse_cdf_brute_force_random_cases():
    rng = substream(11, "brute")
    for _ in range(25):
        n = int(rng.integers(2, 7))
        x = rng.normal(size=n) * 3
        d = build_rank_histogram_prior(x, *rng.uniform(0.1, 2, size=2))
        post = scaled_posterior(d, rng.uniform(0.05, 2.0, size=n))
        for u in rng.uniform(0.01, 0.99, size=3):
            assert inverse_cdf(post, u) == pytest.approx(_bisection_oracle(post, u), abs=1e-9)


def test_zero_mass_gap_maps_to_next_positive_bin():
    # middle bin carries no mass, so the CDF is flat at 0.5 on [0, 1]
    d = PiecewiseDensity(np.array([0.0, 1.0]), 1.0, 1.0, np.array([0.5, 0.0, 0.5]))
    assert inverse_cdf(d, 0.5) == 1.0
    assert inverse_cdf(d, 0.5 - 1e-12) < 0.0


def test_left_boundary_scaling_restricts_support():
    x = np.array([3.0, -1.0, 0.5, 2.0])
    g = np.where(x == x.min(), 1.0, 0.0)
    out = univariate_inference(x, g, (1.0, 1.0), QDET)
    # weight survives only on the left tail (2/3) and the first interior bin (1/3)
    assert np.all(out <= 0.5)
    assert np.all(out[:3] <= -1.0) and out[3] > -1.0


def test_draw_quantiles():
    np.testing.assert_array_equal(draw_quantiles(QDET, 3), [0.25, 0.5, 0.75])
    rng = substream(0, "dq")
    p = draw_quantiles(SamplingMethod.QUANTILE_STOCHASTIC, 3, rng)
    assert sorted(p.tolist()) == [0.25, 0.5, 0.75]
    r = draw_quantiles(SamplingMethod.QUANTILE_STOCHASTIC_REPLACE, 50, rng)
    assert set(np.round(r * 51).astype(int)) <= set(range(1, 51))
    s = draw_quantiles(SamplingMethod.STOCHASTIC, 100_000, rng)
    assert np.all((s > 0) & (s < 1))
    assert abs(s.mean() - 0.5) < 0.01
    with pytest.raises(ValueError):
        draw_quantiles(SamplingMethod.STOCHASTIC, 3)


def test_member_quantiles_follow_prior_ranks():
    v = np.array([0.3, -2.0, 5.0, 1.0])
    np.testing.assert_allclose(member_quantiles(QDET, v), [0.4, 0.2, 0.8, 0.6])


samples_st = st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=12, unique=True)


@given(samples_st, st.floats(0.01, 5), st.floats(0.01, 5))
def test_identity_scaling_returns_sorted_samples(x, lt, rt):
    out = univariate_inference(x, np.ones(len(x)), (lt, rt), QDET)
    np.testing.assert_allclose(out, np.sort(x), atol=1e-12 * (1 + np.max(np.abs(x))))


@given(samples_st, st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
@settings(max_examples=60)
def test_positive_homogeneity_and_order(x, seed, lam):
    g = substream(seed, "g").uniform(0.01, 1.0, size=len(x))
    a = univariate_inference(x, g, (1.0, 1.0), QDET)
    b = univariate_inference(x, lam * g, (1.0, 1.0), QDET)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    assert np.all(np.diff(a) >= 0)


@given(samples_st, st.integers(0, 2**32 - 1))
@settings(max_examples=60)
def test_cdf_monotone_and_masses_normalised(x, seed):
    rng = substream(seed, "m")
    d = build_rank_histogram_prior(x, 0.7, 1.3)
    post = scaled_posterior(d, rng.uniform(0, 1, size=len(x)) + 1e-3)
    assert abs(post.masses.sum() - 1) < 1e-14
    lo, hi = d.support
    grid = np.linspace(lo - 1, hi + 1, 200)
    assert np.all(np.diff(cdf(post, grid)) >= 0)
    u = np.sort(rng.uniform(1e-6, 1 - 1e-6, size=20))
    assert np.all(np.diff(inverse_cdf(post, u)) >= 0)
    inside = np.linspace(lo, hi, 41)[1:-1]
    np.testing.assert_allclose(cdf(post, inverse_cdf(post, cdf(post, inside))), cdf(post, inside),
                               atol=1e-12)


def test_batched_cdf_and_inverse(two_point):
    post = scaled_posterior(two_point, np.array([[1.0, 3.0], [1.0, 1.0]]))
    x = inverse_cdf(post, np.array([0.3, 0.3]))
    np.testing.assert_allclose(cdf(post, x), [0.3, 0.3], atol=1e-14)


def test_tail_lengths():
    x = np.array([0.0, 3.0])  # sample stddev 3/sqrt(2)
    sd = 3 / np.sqrt(2)
    assert tail_length(TailPolicy("fixed", 2.0), x) == pytest.approx((2 * sd, 2 * sd))
    y = np.array([0.0, np.sqrt(2.0)])  # sample stddev 1
    pol = TailPolicy("l63-adaptive")
    assert tail_length(pol, y, 0.5) == pytest.approx((2.0, 2.0))
    # 1.9 beyond the particles: already covered at l = 0
    assert tail_length(pol, y, y[-1] + 1.9) == pytest.approx((2.0, 2.0))
    # 2.5 beyond: l = 1 gives 2.4, l = 2 gives 2.88
    assert tail_length(pol, y, y[-1] + 2.5) == pytest.approx((2.0, 2 * 1.2**2))
    assert tail_length(pol, y, -2.5) == pytest.approx((2 * 1.2**2, 2.0))
    capped = TailPolicy("l63-adaptive", capped=True)
    assert tail_length(capped, y, y[-1] + 2.5) == pytest.approx((2.0, 2.0))
    with pytest.raises(ValueError):
        TailPolicy("gaussian")
