"""Empirical copula densities on bounded support.

The smoothed empirical copula density of ``n`` samples ``u[ε]`` in
``[0, 1]^d`` is

    c(u) = (1/n) * sum_ε prod_i k(u_i; u_i[ε])

with ``k`` a kernel on ``[0, 1]``. Conditioning on the first ``j - 1``
coordinates turns the product over those coordinates into per-sample weights
``γ[ε]``, and the (unnormalised) conditional density of coordinate ``j`` is a
weighted one-dimensional kernel sum. Weights are accumulated as sums of
log-kernels and may be tapered by a localisation function.

Kernel argument order follows ``k(u; u_e)``: the evaluation point ``u`` sets
the kernel's shape parameters and ``u_e`` is the sample location. For the beta
kernels ``k(u; ·)`` is a Beta density in its second argument.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

logger = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class KernelKind(enum.Enum):
    TRUNCATED_GAUSSIAN = "truncated-gaussian"
    BETA = "beta"
    BOUNDARY_CORRECTED_BETA = "boundary-corrected-beta"


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind = KernelKind.BOUNDARY_CORRECTED_BETA
    h: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if not self.h > 0:
            raise ValueError(f"bandwidth must be positive, got {self.h}")
        if self.kind is KernelKind.BOUNDARY_CORRECTED_BETA and not self.h < 0.25:
            raise ValueError(
                f"boundary-corrected beta kernel needs h < 1/4, got {self.h}"
            )


def _check_unit(*arrays):
    for a in arrays:
        a = np.asarray(a)
        if np.any((a < 0) | (a > 1)) or np.any(np.isnan(a)):
            raise ValueError("kernel arguments must lie in [0, 1]")


def _boundary_shape(u, h):
    # Chen (1999) modified shape parameter near the boundary; the radicand is
    # only nonnegative for u <= 2h, the other values are discarded by callers
    with np.errstate(invalid="ignore"):
        return 2 * h * h + 2.5 - np.sqrt(4 * h**4 + 6 * h * h + 2.25 - u * u - u / h)


def beta_parameters(kind, u, h):
    """Shape parameters ``(a, b)`` of the beta kernel centred at ``u``."""
    kind = KernelKind(kind)
    u = np.asarray(u, dtype=float)
    if kind is KernelKind.BETA:
        return u / h + 1.0, (1.0 - u) / h + 1.0
    if kind is KernelKind.BOUNDARY_CORRECTED_BETA:
        a = u / h
        b = (1.0 - u) / h
        a = np.where(u < 2 * h, _boundary_shape(u, h), a)
        b = np.where(u > 1 - 2 * h, _boundary_shape(1.0 - u, h), b)
        return a, b
    raise ValueError(f"{kind} is not a beta kernel")


def log_kernel_eval(k, u, u_e):
    """Natural log of the kernel ``k(u; u_e)``.

    Beta kernels use ``log B(a, b)`` from log-gamma functions, so large shape
    parameters (tiny bandwidths) stay finite. Returns ``-inf`` where the kernel
    vanishes (a sample location on the boundary with exponent above zero).
    Broadcasts over ``u`` and ``u_e``.
    """
    _check_unit(u, u_e)
    u = np.asarray(u, dtype=float)
    u_e = np.asarray(u_e, dtype=float)
    if k.kind is KernelKind.TRUNCATED_GAUSSIAN:
        z = (u - u_e) / k.h
        return -0.5 * z * z - math.log(k.h) - _LOG_SQRT_2PI
    a, b = beta_parameters(k.kind, u, k.h)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = special.xlogy(a - 1.0, u_e) + special.xlog1py(b - 1.0, -u_e) - special.betaln(a, b)
    return out


def kernel_eval(k, u, u_e):
    """Kernel value ``k(u; u_e)``, computed as ``exp(log_kernel_eval)``."""
    return np.exp(log_kernel_eval(k, u, u_e))


def bandwidth(alpha, n_ens):
    """Kernel bandwidth ``alpha * stddev(grid) * n_ens**(-2/5)``.

    ``grid`` is the rank-histogram quantile set ``{e / (n_ens + 1)}`` and the
    standard deviation uses the population convention.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if n_ens < 2:
        raise ValueError("bandwidth needs n_ens >= 2")
    grid = np.arange(1, n_ens + 1) / (n_ens + 1.0)
    return float(alpha * np.std(grid) * n_ens ** (-0.4))


def gaspari_cohn(zeta):
    """Gaspari-Cohn compactly supported fifth-order taper.

    Equals 1 at zero, vanishes for ``zeta >= 2`` and is continuous with
    ``gaspari_cohn(1) == 5/24``.
    """
    z = np.asarray(zeta, dtype=float)
    if np.any(z < 0) or np.any(np.isnan(z)):
        raise ValueError("Gaspari-Cohn argument must be nonnegative")
    inner = ((-0.25 * z + 0.5) * z + 0.625) * z**3 - (5.0 / 3.0) * z**2 + 1.0
    with np.errstate(divide="ignore"):
        outer = (
            ((((z / 12.0 - 0.5) * z + 0.625) * z + 5.0 / 3.0) * z - 5.0) * z
            + 4.0
            - 2.0 / (3.0 * z)
        )
    out = np.where(z < 1.0, inner, np.where(z < 2.0, outer, 0.0))
    # rounding leaves |values| ~1e-16 near zeta = 2
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def cyclic_distance(n):
    """Distance function ``d(a, b)`` on a periodic 1-D grid of ``n`` points."""

    def d(a, b):
        diff = np.abs(np.asarray(a) - np.asarray(b)) % n
        return np.minimum(diff, n - diff)

    return d


@dataclass(frozen=True)
class LocalizationSpec:
    """Distance-based taper of copula dependence.

    ``distance(j, i)`` returns the distance between the grid positions of
    variables ``j`` and ``i`` and the taper is ``gaspari_cohn(distance / radius)``.
    """

    distance: Callable
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("localization radius must be positive")

    def taper(self, j, i):
        return gaspari_cohn(np.asarray(self.distance(j, i), dtype=float) / self.radius)


@dataclass(frozen=True)
class CopulaConfig:
    kernel: KernelKind = KernelKind.BOUNDARY_CORRECTED_BETA
    alpha: float = 1.0
    localization: Optional[LocalizationSpec] = None

    def kernel_spec(self, n_ens):
        return KernelSpec(KernelKind(self.kernel), bandwidth(self.alpha, n_ens))


@dataclass
class ConditioningSet:
    """Conditioning data for one member and one target variable.

    Attributes
    ----------
    analysis_quantiles : ndarray, shape (n_cond,)
        The member's analysis quantiles of the conditioning variables.
    prior_quantiles : ndarray, shape (n_cond, n_ens)
        Prior quantiles of every particle for each conditioning variable.
    taper : ndarray, shape (n_cond,)
        Localisation weight of each conditioning variable; ones by default.
    """

    analysis_quantiles: np.ndarray
    prior_quantiles: np.ndarray
    taper: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.analysis_quantiles = np.atleast_1d(np.asarray(self.analysis_quantiles, dtype=float))
        self.prior_quantiles = np.atleast_2d(np.asarray(self.prior_quantiles, dtype=float))
        n_cond = self.analysis_quantiles.size
        if self.prior_quantiles.shape[0] != n_cond:
            raise ValueError("one row of prior quantiles per conditioning variable")
        self.taper = (
            np.ones(n_cond) if self.taper is None else np.asarray(self.taper, dtype=float).ravel()
        )
        if self.taper.size != n_cond:
            raise ValueError("one taper weight per conditioning variable")
        if np.any((self.taper < 0) | (self.taper > 1)):
            raise ValueError("taper weights must lie in [0, 1]")


def log_conditional_copula_weights(cs, k):
    """``log γ[ε] = sum_i taper_i * log k(u_i^a; u_i[ε])``.

    Terms with zero taper are dropped, so ``0 * log 0`` never appears.
    """
    n_ens = cs.prior_quantiles.shape[1]
    out = np.zeros(n_ens)
    for ua, uq, rho in zip(cs.analysis_quantiles, cs.prior_quantiles, cs.taper):
        if rho == 0.0:
            continue
        out += rho * log_kernel_eval(k, ua, uq)
    return out


def conditional_copula_weights(cs, k):
    """Weights ``γ[ε]`` from conditioning a copula density on one member.

    Returns ``(gamma, degenerate)``. When every weight underflows to zero the
    weights fall back to ones and ``degenerate`` is True.
    """
    g = np.exp(log_conditional_copula_weights(cs, k))
    if not np.any(g > 0):
        logger.debug("all copula weights underflowed; using uniform weights")
        return np.ones_like(g), True
    return g, False


def conditional_copula_at_particles(cs, k, target_quantiles, target_prior_quantiles=None):
    """Unnormalised conditional copula density of the target variable.

    Parameters
    ----------
    cs : ConditioningSet
    k : KernelSpec
    target_quantiles : array_like, shape (m,)
        Points in (0, 1) where the density is wanted, normally the particle
        quantiles ``e / (n_ens + 1)``.
    target_prior_quantiles : array_like, shape (n_ens,), optional
        Prior quantile of every particle for the target variable, aligned with
        the columns of ``cs.prior_quantiles``. Defaults to the sorted grid
        ``e / (n_ens + 1)``.

    Returns
    -------
    ndarray, shape (m,)
        ``(1/n_ens) * sum_ε k(q; u_j[ε]) * γ[ε]`` at each target ``q``.
    """
    gamma, _ = conditional_copula_weights(cs, k)
    q = np.asarray(target_quantiles, dtype=float)
    if target_prior_quantiles is None:
        n = gamma.size
        target_prior_quantiles = np.arange(1, n + 1) / (n + 1.0)
    uj = np.asarray(target_prior_quantiles, dtype=float)
    kern = kernel_eval(k, q[:, None], uj[None, :])
    return kern @ gamma / uj.size


class GridKernel:
    """Kernel tables for one ensemble size.

    All prior quantiles are on the grid ``g_b = (b + 1) / (n + 1)``, so the
    target-side kernel values only need evaluating once: ``table[a, b] =
    k(g_a; g_b)``. Analysis quantiles are arbitrary, giving ``log_rows``.
    """

    def __init__(self, k, n_ens):
        self.k = k
        self.n = n_ens
        self.grid = np.arange(1, n_ens + 1) / (n_ens + 1.0)
        self.table = kernel_eval(k, self.grid[:, None], self.grid[None, :])

    def log_rows(self, u):
        """``out[e, b] = log k(u[e]; g_b)`` for analysis quantiles ``u``."""
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        return log_kernel_eval(self.k, u[:, None], self.grid[None, :])
