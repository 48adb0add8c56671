"""Rank histogram densities and univariate inference with a scaling function.

A rank histogram density over ``n`` sorted particles has ``n + 1`` bins: a
flat left tail, ``n - 1`` interior bins between consecutive particles and a
flat right tail. Every bin of the prior carries mass ``1 / (n + 1)``, so the
CDF at the ``e``-th particle is ``e / (n + 1)``.

Scaling a density by a function ``g`` known only at the particles uses the
averaged-segment reconstruction: the interior bin between particles ``e`` and
``e + 1`` is scaled by ``(g_e + g_{e+1}) / 2`` and each tail by the adjacent
particle value times ``tail_factor``. The default ``tail_factor = 1`` keeps a
constant ``g`` an exact identity; ``0.5`` gives the half-weight tails of the
literal averaged form. Only bin masses change; knots and tails are kept.

Most functions accept a batch of mass vectors (shape ``(m, n + 1)``) sharing
one set of bin edges, which is how the copula filter evaluates one posterior
per ensemble member.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class DegenerateScalingError(ArithmeticError):
    """The scaled density has zero total mass."""


class SamplingMethod(enum.Enum):
    """How uniform variates are drawn before the inverse-CDF transform."""

    STOCHASTIC = "stochastic"
    QUANTILE_STOCHASTIC = "quantile-stochastic"
    QUANTILE_STOCHASTIC_REPLACE = "quantile-stochastic-replace"
    QUANTILE_DETERMINISTIC = "quantile-deterministic"


def strictly_increasing(sorted_values):
    """Nudge ties in an ascending array up by one ulp at a time."""
    x = np.array(sorted_values, dtype=float)
    if x.size > 1 and np.any(np.diff(x) <= 0):
        for i in range(1, x.size):
            if x[i] <= x[i - 1]:
                x[i] = np.nextafter(x[i - 1], np.inf)
    return x


@dataclass(frozen=True)
class PiecewiseDensity:
    """Piecewise-constant density on ``[knots[0] - left_tail, knots[-1] + right_tail]``.

    ``masses`` has shape ``(n + 1,)`` or ``(m, n + 1)`` for a batch of
    densities over the same bins.
    """

    knots: np.ndarray
    left_tail: float
    right_tail: float
    masses: np.ndarray

    @property
    def n(self):
        return self.knots.size

    @property
    def edges(self):
        return np.concatenate(
            ([self.knots[0] - self.left_tail], self.knots, [self.knots[-1] + self.right_tail])
        )

    @property
    def support(self):
        return self.knots[0] - self.left_tail, self.knots[-1] + self.right_tail

    def pdf(self, x):
        edges = self.edges
        widths = np.diff(edges)
        x = np.asarray(x, dtype=float)
        b = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, self.n)
        inside = (x >= edges[0]) & (x <= edges[-1])
        dens = self.masses[..., b] / widths[b]
        return np.where(inside, dens, 0.0)

    def cdf(self, x):
        return cdf(self, x)

    def inverse_cdf(self, u):
        return inverse_cdf(self, u)


def build_rank_histogram_prior(samples, left_tail, right_tail):
    """Rank histogram prior with flat tails of the given lengths."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("rank histogram prior needs at least 2 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if not (left_tail > 0 and right_tail > 0):
        raise ValueError("tail lengths must be positive")
    knots = strictly_increasing(np.sort(x))
    masses = np.full(x.size + 1, 1.0 / (x.size + 1))
    return PiecewiseDensity(knots, float(left_tail), float(right_tail), masses)


def cdf(d, x):
    """Exact piecewise-linear CDF of ``d`` at ``x``.

    For a batched density ``x`` broadcasts against the leading batch axis.
    """
    edges = d.edges
    widths = np.diff(edges)
    masses = np.asarray(d.masses)
    x = np.asarray(x, dtype=float)
    starts = np.concatenate((np.zeros(masses.shape[:-1] + (1,)), np.cumsum(masses, axis=-1)[..., :-1]), axis=-1)
    b = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, d.n)
    if masses.ndim == 1:
        c = starts[b] + masses[b] * (x - edges[b]) / widths[b]
    else:
        rows = np.arange(masses.shape[0])
        c = starts[rows, b] + masses[rows, b] * (x - edges[b]) / widths[b]
    c = np.where(x <= edges[0], 0.0, c)
    c = np.where(x >= edges[-1], 1.0, c)
    return np.clip(c, 0.0, 1.0)


def inverse_cdf(d, u):
    """Exact inverse of the piecewise-linear CDF.

    A level ``u`` that coincides with a flat stretch of the CDF (a zero-mass
    bin) maps to the left end of the next bin with positive mass.
    """
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("quantile levels must lie in the open interval (0, 1)")
    masses = np.atleast_2d(np.asarray(d.masses, dtype=float))
    batched = np.ndim(d.masses) == 2
    uu = np.broadcast_to(u, masses.shape[:1]) if batched else np.atleast_1d(u)
    if not batched:
        masses = np.broadcast_to(masses, (uu.size, masses.shape[1]))
    x = _inverse_rows(d.edges, masses, uu)
    if not batched:
        return x.reshape(u.shape)
    return x


def _inverse_rows(edges, masses, u):
    # row r of masses is inverted at level u[r]; edges is shared (nb + 1,)
    # or per-row (m, nb + 1)
    m, nb = masses.shape
    starts = np.zeros((m, nb))
    np.cumsum(masses[:, :-1], axis=1, out=starts[:, 1:])
    ok = (masses > 0) & (starts <= u[:, None])
    # last admissible bin in each row
    b = nb - 1 - np.argmax(ok[:, ::-1], axis=1)
    rows = np.arange(m)
    mb = masses[rows, b]
    frac = np.clip((u - starts[rows, b]) / mb, 0.0, 1.0)
    if edges.ndim == 1:
        lo, hi = edges[b], edges[b + 1]
    else:
        lo, hi = edges[rows, b], edges[rows, b + 1]
    return lo + frac * (hi - lo)


def inverse_cdf_rows(edges, masses, u):
    """Invert many piecewise densities at once.

    ``edges`` is ``(n + 2,)`` or ``(m, n + 2)``, ``masses`` is ``(m, n + 1)``
    and ``u`` is ``(m,)``; row ``r`` is inverted at ``u[r]``.
    """
    return _inverse_rows(np.asarray(edges, dtype=float), np.asarray(masses, dtype=float),
                         np.asarray(u, dtype=float))


TAIL_FACTOR = 1.0


def scaling_segments(g_at_particles, tail_factor=TAIL_FACTOR):
    """Averaged-segment reconstruction of a scaling function.

    ``g_at_particles`` holds the scaling at the sorted particles (last axis);
    the result has one more entry along that axis: the value on each bin.
    Tail bins get ``tail_factor`` times the boundary particle's value.
    """
    g = np.asarray(g_at_particles, dtype=float)
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ValueError("scaling values must be finite and nonnegative")
    half = 0.5 * g
    left = tail_factor * g[..., :1]
    right = tail_factor * g[..., -1:]
    interior = half[..., :-1] + half[..., 1:]
    return np.concatenate((left, interior, right), axis=-1)


def scaled_posterior(d, g_at_particles, tail_factor=TAIL_FACTOR):
    """Multiply ``d`` by the reconstructed scaling and renormalise.

    ``g_at_particles`` is indexed like ``d.knots`` (sorted order). A 2-D
    ``g_at_particles`` of shape ``(m, n)`` yields a batch of ``m`` densities.
    """
    seg = scaling_segments(g_at_particles, tail_factor)
    w = np.asarray(d.masses) * seg
    total = w.sum(axis=-1, keepdims=True)
    if np.any(total <= 0) or not np.all(np.isfinite(total)):
        raise DegenerateScalingError("scaled density has zero or non-finite mass")
    return PiecewiseDensity(d.knots, d.left_tail, d.right_tail, w / total)


def draw_quantiles(method, n, rng=None):
    """Uniform levels in (0, 1) for inverse-CDF sampling of ``n`` values."""
    method = SamplingMethod(method)
    grid = np.arange(1, n + 1) / (n + 1.0)
    if method is SamplingMethod.QUANTILE_DETERMINISTIC:
        return grid
    if rng is None:
        raise ValueError(f"{method.value} sampling needs a random generator")
    if method is SamplingMethod.QUANTILE_STOCHASTIC:
        return rng.permutation(grid)
    if method is SamplingMethod.QUANTILE_STOCHASTIC_REPLACE:
        return grid[rng.integers(0, n, size=n)]
    u = rng.random(n)
    # Generator.random is on [0, 1)
    while np.any(u == 0.0):
        u[u == 0.0] = rng.random(int(np.sum(u == 0.0)))
    return u


def univariate_inference(samples, g_at_particles, tails, method, rng=None,
                         tail_factor=TAIL_FACTOR):
    """Sample the scaled rank histogram posterior of a scalar variable.

    Parameters
    ----------
    samples : array_like, shape (n,)
        Prior particles, any order.
    g_at_particles : array_like, shape (n,)
        Scaling function evaluated at each particle, aligned with ``samples``.
    tails : (float, float)
        Left and right flat-tail lengths.
    method : SamplingMethod
    rng : numpy.random.Generator, optional
        Required for the stochastic methods.
    tail_factor : float
        Weight of the boundary particle's scaling on its tail bin.

    Returns
    -------
    ndarray, shape (n,)
        Posterior samples in the order of the drawn quantile levels, which is
        ascending for ``QUANTILE_DETERMINISTIC``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    g = np.asarray(g_at_particles, dtype=float).ravel()
    if g.size != x.size:
        raise ValueError("samples and scaling values must align")
    order = np.argsort(x, kind="stable")
    prior = build_rank_histogram_prior(x, *tails)
    post = scaled_posterior(prior, g[order], tail_factor)
    u = draw_quantiles(method, x.size, rng)
    return inverse_cdf(post, u)


def member_quantiles(method, values, rng=None):
    """Per-member uniform levels matched to the members' prior ranks.

    The ``k``-th smallest prior member receives the ``k``-th drawn level, so
    deterministic quantile sampling reproduces the rank-preserving transport
    map and the quantile-stochastic variants hand out a random permutation.
    """
    values = np.asarray(values, dtype=float)
    u = draw_quantiles(method, values.size, rng)
    ranks = np.empty(values.size, dtype=int)
    ranks[np.argsort(values, kind="stable")] = np.arange(values.size)
    return u[ranks]


@dataclass(frozen=True)
class TailPolicy:
    """Length of the flat tails of a rank histogram prior.

    ``fixed``: both tails are ``multiple * stddev(samples)``.

    ``l63-adaptive``: the base length is ``2 * stddev``; on the side where the
    observation falls outside the particles the tail becomes
    ``2 * 1.2**l * stddev`` with ``l`` the smallest nonnegative integer that
    brings the observation inside the tail. With ``capped=True`` the result is
    additionally limited to ``2 * stddev`` (which makes the growth inert).

    Standard deviations use the sample convention.
    """

    kind: str = "fixed"
    multiple: float = 2.0
    capped: bool = False
    growth: float = 1.2

    def __post_init__(self):
        if self.kind not in ("fixed", "l63-adaptive"):
            raise ValueError(f"unknown tail policy {self.kind!r}")
        if not self.multiple > 0:
            raise ValueError("tail multiple must be positive")


def tail_length(policy, samples, obs=None):
    """Left and right tail lengths for ``samples`` under ``policy``."""
    x = np.asarray(samples, dtype=float)
    sd = float(np.std(x, ddof=1))
    # a collapsed ensemble still needs a proper density
    sd = max(sd, 1e-8 * (1.0 + float(np.max(np.abs(x)))))
    base = policy.multiple * sd
    if policy.kind == "fixed" or obs is None:
        return base, base
    lo, hi = float(np.min(x)), float(np.max(x))
    need_left = lo - obs
    need_right = obs - hi
    left = right = base
    if need_left > base or need_right > base:
        need = max(need_left, need_right)
        ell = max(0, int(np.ceil(np.log(need / base) / np.log(policy.growth))) - 1)
        while base * policy.growth**ell < need:
            ell += 1
        grown = base * policy.growth**ell
        if policy.capped:
            grown = min(base, grown)
        if need_left > base:
            left = grown
        else:
            right = grown
    return left, right
