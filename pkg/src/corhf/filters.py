"""Ensemble analysis steps: CoRHF and the RHF, QCEFF, EnKF and BPF baselines.

All analysis functions share the signature ``(x, z, y, lik, cfg, rng)``:

x : (n_st, n_ens) forecast states
z : (n_obs, n_ens) forecast observables, already inflated when the filter
    uses stochastic inflation
y : (n_obs,) observation
lik : ErrorModel whose ``logpdf(y - z)`` is the observation likelihood

and return an :class:`AnalysisResult`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, special

from corhf.copula import CopulaConfig, GridKernel, LocalizationSpec
from corhf.core import as_ensemble
from corhf.univariate import (
    SamplingMethod,
    TailPolicy,
    build_rank_histogram_prior,
    cdf,
    inverse_cdf_rows,
    member_quantiles,
    scaled_posterior,
    scaling_segments,
    tail_length,
)

logger = logging.getLogger(__name__)

FILTER_KINDS = ("corhf", "rhf", "qceff", "enkf", "bpf")

_DEFAULT_SAMPLING = {
    "corhf": SamplingMethod.QUANTILE_STOCHASTIC,
    "rhf": SamplingMethod.QUANTILE_DETERMINISTIC,
    "qceff": SamplingMethod.QUANTILE_DETERMINISTIC,
}

ENKF_JITTER = 1e-10


@dataclass(frozen=True)
class FilterConfig:
    """Settings of one filter in a comparison.

    ``obs_tail`` shapes the rank histogram priors of the observables and
    ``state_tail`` those of the states (and, for the regression filters, of
    later observables transformed through QCEFF's probit map).
    ``state_bounds`` optionally gives a ``(low, high)`` pair (or None) per
    state; prior tails of a bounded state stop at its bounds.
    ``localization`` tapers the regression (RHF, QCEFF) or covariance (EnKF)
    updates by grid distance; CoRHF localises through ``copula`` instead.
    """

    kind: str
    sampling: Optional[SamplingMethod] = None
    obs_tail: TailPolicy = field(default_factory=TailPolicy)
    state_tail: TailPolicy = field(default_factory=TailPolicy)
    copula: Optional[CopulaConfig] = None
    inflate: bool = True
    bpf_jitter: float = 0.0
    n_ens: Optional[int] = None
    state_bounds: Optional[tuple] = None
    localization: Optional[LocalizationSpec] = None

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter {self.kind!r}; expected one of {FILTER_KINDS}")
        if self.sampling is None and self.kind in _DEFAULT_SAMPLING:
            object.__setattr__(self, "sampling", _DEFAULT_SAMPLING[self.kind])
        elif self.sampling is not None:
            object.__setattr__(self, "sampling", SamplingMethod(self.sampling))
        if self.kind == "corhf" and self.copula is None:
            object.__setattr__(self, "copula", CopulaConfig())


@dataclass
class AnalysisResult:
    x: np.ndarray
    z: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def inflate_observables(z, err, rng):
    """Perturb every member's observables with an independent error draw."""
    z = np.asarray(z, dtype=float)
    return z + err.sample(rng, z.shape)


def _lik_weights(lik, y, z):
    # likelihood up to a constant, scaled so the largest value is 1
    lp = lik.logpdf(y - z)
    top = np.max(lp)
    if not np.isfinite(top):
        return np.ones_like(z), True
    return np.exp(lp - top), False


def _rank_update(values, g, tails, method, rng):
    """One rank-histogram inference of a scalar variable; members keep their rank order."""
    prior = build_rank_histogram_prior(values, *tails)
    order = np.argsort(values, kind="stable")
    post = scaled_posterior(prior, g[order])
    u = member_quantiles(method, values, rng)
    return inverse_cdf_rows(prior.edges, np.broadcast_to(post.masses, (values.size, values.size + 1)), u), prior


def _observable_step(zj, yj, lik, cfg, rng, diag):
    g, flat = _lik_weights(lik, yj, zj)
    if flat:
        diag["flat_likelihood"] += 1
    tails = tail_length(cfg.obs_tail, zj, yj)
    return _rank_update(zj, g, tails, cfg.sampling, rng)


def state_tails(cfg, i, vals):
    left, right = tail_length(cfg.state_tail, vals)
    if cfg.state_bounds is not None and cfg.state_bounds[i] is not None:
        lo, hi = cfg.state_bounds[i]
        tiny = 1e-12 * (1.0 + float(np.max(np.abs(vals))))
        if lo is not None:
            left = max(min(left, float(np.min(vals)) - lo), tiny)
        if hi is not None:
            right = max(min(right, hi - float(np.max(vals))), tiny)
    return left, right


def _positions(n, given):
    return np.arange(n) if given is None else np.asarray(given)


def _regression_taper(cfg, src, targets):
    """Taper of a regression from position ``src`` onto ``targets``; None if unlocalised."""
    loc = cfg.localization if cfg is not None else None
    if loc is None:
        return None
    return np.atleast_1d(loc.taper(src, targets)).astype(float)


def _new_diag():
    return {"degenerate_count": 0, "skipped_regressions": 0, "flat_likelihood": 0}


def rhf_analysis(x, z, y, lik, cfg, rng=None, state_positions=None, obs_positions=None):
    """Rank histogram filter with serial processing and linear regression.

    After observable ``j`` is updated, the increment is regressed onto every
    state and every not-yet-processed observable with covariances from the
    current ensemble, optionally tapered by ``cfg.localization``.
    """
    x = as_ensemble(x, "x").copy()
    z = as_ensemble(z, "z").copy()
    y = np.atleast_1d(np.asarray(y, dtype=float))
    diag = _new_diag()
    n = x.shape[1]
    spos = _positions(x.shape[0], state_positions)
    opos = _positions(z.shape[0], obs_positions)
    for j in range(z.shape[0]):
        zj = z[j].copy()
        za, _ = _observable_step(zj, y[j], lik, cfg, rng, diag)
        dz = za - zj
        dzj = zj - zj.mean()
        var = dzj @ dzj / (n - 1)
        z[j] = za
        if var <= 0:
            diag["skipped_regressions"] += 1
            continue
        rest = z[j + 1:]
        cx = (x - x.mean(axis=1, keepdims=True)) @ dzj / (n - 1) / var
        cr = (rest - rest.mean(axis=1, keepdims=True)) @ dzj / (n - 1) / var
        tx = _regression_taper(cfg, opos[j], spos)
        if tx is not None:
            cx = cx * tx
            cr = cr * _regression_taper(cfg, opos[j], opos[j + 1:])
        x += np.outer(cx, dz)
        if rest.size:
            rest += np.outer(cr, dz)
    return AnalysisResult(x, z, diag)


def _prior_rows(values, cfg, n_st):
    """Stacked bin edges of a rank histogram prior for every row of ``values``.

    Rows below ``n_st`` are states, the rest later observables.
    """
    sorted_vals = np.sort(values, axis=1)
    edges = np.empty((values.shape[0], values.shape[1] + 2))
    for r in range(values.shape[0]):
        if r < n_st:
            tails = state_tails(cfg, r, sorted_vals[r])
        else:
            tails = tail_length(cfg.state_tail, sorted_vals[r])
        edges[r] = build_rank_histogram_prior(sorted_vals[r], *tails).edges
    return edges


def _probit(u, delta):
    return special.ndtri(np.clip(u, delta, 1.0 - delta))


def qceff_analysis(x, z, y, lik, cfg, rng=None, state_positions=None, obs_positions=None):
    """Quantile-conserving filter: regression in probit space.

    Each regressed variable is mapped through its rank-histogram prior CDF and
    the standard-normal quantile function, updated linearly against the probit
    observable increment, then mapped back. CDF values are clamped to
    ``[δ, 1 - δ]`` with ``δ = 1 / (10 (n + 1))``. Regression coefficients are
    tapered by ``cfg.localization`` when set.
    """
    x = as_ensemble(x, "x").copy()
    z = as_ensemble(z, "z").copy()
    y = np.atleast_1d(np.asarray(y, dtype=float))
    diag = _new_diag()
    n_st, n = x.shape
    delta = 1.0 / (10.0 * (n + 1))
    spos = _positions(n_st, state_positions)
    opos = _positions(z.shape[0], obs_positions)
    ranks_u = lambda v: (np.argsort(np.argsort(v, axis=-1, kind="stable"), axis=-1) + 1.0) / (n + 1.0)
    for j in range(z.shape[0]):
        zj = z[j].copy()
        za, zprior = _observable_step(zj, y[j], lik, cfg, rng, diag)
        z[j] = za
        pz = _probit(ranks_u(zj), delta)
        pza = _probit(cdf(zprior, za), delta)
        dp = pza - pz
        targets = np.vstack((x, z[j + 1:]))
        pt = _probit(ranks_u(targets), delta)
        dpz = pz - pz.mean()
        var = dpz @ dpz / (n - 1)
        if var <= 0:
            diag["skipped_regressions"] += 1
            continue
        coef = (pt - pt.mean(axis=1, keepdims=True)) @ dpz / (n - 1) / var
        taper = _regression_taper(cfg, opos[j], np.concatenate((spos, opos[j + 1:])))
        if taper is not None:
            coef = coef * taper
        pta = pt + np.outer(coef, dp)
        ua = np.clip(special.ndtr(pta), 1e-15, 1 - 1e-15)
        edges = _prior_rows(targets, cfg, n_st)
        m = targets.shape[0]
        masses = np.full((m * n, n + 1), 1.0 / (n + 1))
        new = inverse_cdf_rows(np.repeat(edges, n, axis=0), masses, ua.ravel()).reshape(m, n)
        # zero increment must leave the variable untouched exactly
        new = np.where(dp[None, :] * coef[:, None] == 0.0, targets, new)
        x = new[:n_st]
        z[j + 1:] = new[n_st:]
    return AnalysisResult(x, z, diag)


def enkf_analysis(x, z, y, lik=None, cfg=None, rng=None, state_positions=None,
                  obs_positions=None):
    """Stochastic EnKF update from perturbed (inflated) observables.

    ``x_a = x + Cov(x, z) Cov(z, z)^{-1} (y - z)`` with empirical covariances
    of the inflated observable ensemble ``z``. With ``cfg.localization`` both
    covariances are multiplied elementwise by the distance taper.
    """
    x = as_ensemble(x, "x")
    z = as_ensemble(z, "z")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = x.shape[1]
    diag = _new_diag()
    ax = x - x.mean(axis=1, keepdims=True)
    az = z - z.mean(axis=1, keepdims=True)
    pxz = ax @ az.T / (n - 1)
    pzz = az @ az.T / (n - 1)
    if cfg is not None and cfg.localization is not None:
        spos = _positions(x.shape[0], state_positions)
        opos = _positions(z.shape[0], obs_positions)
        taper = cfg.localization.taper
        pxz = pxz * taper(spos[:, None], opos[None, :])
        pzz = pzz * taper(opos[:, None], opos[None, :])
    innov = y[:, None] - z
    try:
        c = linalg.cho_factor(pzz, lower=True)
        w = linalg.cho_solve(c, innov)
    except linalg.LinAlgError:
        diag["degenerate_count"] += 1
        reg = pzz + ENKF_JITTER * max(1.0, float(np.trace(pzz))) * np.eye(pzz.shape[0])
        w = linalg.solve(reg, innov, assume_a="sym")
    xa = x + pxz @ w
    za = z + pzz @ w
    return AnalysisResult(xa, za, diag)


def systematic_resample(weights, rng):
    """Indices drawn by systematic resampling of normalised ``weights``."""
    n = weights.size
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


def bpf_weights(z, y, lik):
    """Normalised importance weights ``∝ prod_i p(y_i | z_i)``; flags underflow."""
    logw = np.sum(lik.logpdf(np.atleast_1d(y)[:, None] - z), axis=0)
    top = np.max(logw)
    if not np.isfinite(top):
        return np.full(z.shape[1], 1.0 / z.shape[1]), True
    w = np.exp(logw - top)
    return w / w.sum(), False


def bpf_analysis(x, z, y, lik, rng, jitter=0.0):
    """Bootstrap particle filter analysis with systematic resampling.

    ``jitter > 0`` adds Gaussian noise with standard deviation
    ``jitter * stddev(x_i)`` to each component after resampling so a
    deterministic model does not collapse duplicated particles.
    """
    x = as_ensemble(x, "x")
    z = as_ensemble(z, "z")
    w, degenerate = bpf_weights(z, y, lik)
    idx = systematic_resample(w, rng)
    xa = x[:, idx]
    za = z[:, idx]
    if jitter > 0:
        sd = x.std(axis=1, ddof=1, keepdims=True)
        xa = xa + jitter * sd * rng.standard_normal(xa.shape)
    diag = _new_diag()
    diag["degenerate_count"] = int(degenerate)
    diag["weighted_mean"] = x @ w
    return AnalysisResult(xa, za, diag)


# -- CoRHF -----------------------------------------------------------------------


class _GridKernelCache:
    def __init__(self):
        self._cache = {}

    def get(self, cfg, n):
        key = (cfg.kernel, cfg.alpha, n)
        if key not in self._cache:
            self._cache[key] = GridKernel(cfg.kernel_spec(n), n)
        return self._cache[key]


_KERNELS = _GridKernelCache()


def _taper_matrix(cfg, positions):
    """Weights ``taper[j, i]`` of conditioning variable ``i`` for target ``j``."""
    loc = cfg.copula.localization
    v = len(positions)
    if loc is None:
        return None
    pos = np.asarray(positions)
    return loc.taper(pos[:, None], pos[None, :]).reshape(v, v)


def corhf_analysis(x, z, y, lik, cfg, rng=None, state_positions=None, obs_positions=None):
    """Copula rank histogram filter.

    Variables are processed in the order ``z_1..z_nobs, x_1..x_nst``. Each is
    updated member by member from a rank histogram prior scaled by the
    likelihood (observables only) and by the copula density conditioned on
    that member's earlier analyses. Conditioning quantiles of analysis values
    are their prior CDF values.

    ``state_positions``/``obs_positions`` are grid positions used by the
    localisation distance; they default to variable indices.
    """
    x = as_ensemble(x, "x")
    z = as_ensemble(z, "z")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n_st, n = x.shape
    n_obs = z.shape[0]
    diag = _new_diag()
    gk = _KERNELS.get(cfg.copula, n)
    method = cfg.sampling

    if state_positions is None:
        state_positions = np.arange(n_st)
    if obs_positions is None:
        obs_positions = np.arange(n_obs)
    positions = np.concatenate((np.asarray(obs_positions), np.asarray(state_positions)))
    taper = _taper_matrix(cfg, positions)

    values = np.vstack((z, x))
    n_var = values.shape[0]
    analysis = np.empty_like(values)
    log_k = np.empty((n_var, n, n))  # log k(u_a[e]; u[ε]) per finished variable
    running = np.zeros((n, n))
    eps = 0.5 / (n + 1.0) ** 2

    for v in range(n_var):
        vals = values[v]
        order = np.argsort(vals, kind="stable")
        rank = np.empty(n, dtype=int)
        rank[order] = np.arange(n)
        if v < n_obs:
            g_lik, flat = _lik_weights(lik, y[v], vals)
            if flat:
                diag["flat_likelihood"] += 1
            tails = tail_length(cfg.obs_tail, vals, y[v])
            g_base = g_lik[order]
        else:
            tails = state_tails(cfg, v - n_obs, vals)
            g_base = np.ones(n)
        prior = build_rank_histogram_prior(vals, *tails)

        if taper is None:
            logg = running if v > 0 else None
        else:
            w = taper[v, :v]
            active = w > 0
            logg = np.tensordot(w[active], log_k[:v][active], axes=1) if np.any(active) else None

        if logg is None:
            g = np.broadcast_to(g_base, (n, n))
        else:
            top = logg.max(axis=1, keepdims=True)
            bad = ~np.isfinite(top[:, 0])
            gamma = np.exp(logg - np.where(np.isfinite(top), top, 0.0))
            gamma[bad] = 1.0
            diag["degenerate_count"] += int(bad.sum())
            # table[k, rank[ε]]: kernel at the k-th sorted particle quantile
            cop = gamma @ gk.table[:, rank].T / n
            g = cop * g_base[None, :]

        seg = scaling_segments(g)
        masses = seg / (n + 1.0)
        total = masses.sum(axis=1, keepdims=True)
        zero = total[:, 0] <= 0
        if np.any(zero):
            diag["degenerate_count"] += int(zero.sum())
            masses[zero] = scaling_segments(g_base)[None, :] / (n + 1.0)
            total = masses.sum(axis=1, keepdims=True)
        masses = masses / total
        u = member_quantiles(method, vals, rng)
        av = inverse_cdf_rows(prior.edges, masses, u)
        analysis[v] = av

        if v < n_var - 1:
            ua = np.clip(cdf(prior, av), eps, 1.0 - eps)
            rows = gk.log_rows(ua)
            log_k[v] = rows[:, rank]
            if taper is None:
                running = running + log_k[v]

    return AnalysisResult(analysis[n_obs:], analysis[:n_obs], diag)


def run_analysis(cfg, x, z, y, lik, rng, state_positions=None, obs_positions=None):
    """Dispatch to the analysis routine selected by ``cfg.kind``."""
    if cfg.kind == "corhf":
        return corhf_analysis(x, z, y, lik, cfg, rng, state_positions, obs_positions)
    if cfg.kind == "rhf":
        return rhf_analysis(x, z, y, lik, cfg, rng, state_positions, obs_positions)
    if cfg.kind == "qceff":
        return qceff_analysis(x, z, y, lik, cfg, rng, state_positions, obs_positions)
    if cfg.kind == "enkf":
        return enkf_analysis(x, z, y, lik, cfg, rng, state_positions, obs_positions)
    return bpf_analysis(x, z, y, lik, rng, jitter=cfg.bpf_jitter)
