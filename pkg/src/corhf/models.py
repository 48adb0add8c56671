"""Lorenz '63 / '96 dynamics, observation operators and observation errors.

States are arrays whose first axis is the state component; any trailing axes
(ensemble members) are carried along, so one call propagates a whole
ensemble.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Lorenz63:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    dt: float = 0.01
    interval: float = 0.5

    n_st = 3

    @property
    def equilibrium(self):
        r = math.sqrt(self.beta * (self.rho - 1.0))
        return np.array([r, r, self.rho - 1.0])

    def rhs(self, x):
        return l63_rhs(x, self.sigma, self.rho, self.beta)


@dataclass(frozen=True)
class Lorenz96:
    n_st: int = 40
    forcing: float = 8.0
    dt: float = 0.01
    interval: float = 0.2

    def rhs(self, x):
        return l96_rhs(x, self.forcing)


def l63_rhs(x, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    x = np.asarray(x, dtype=float)
    a, b, c = x[0], x[1], x[2]
    return np.stack((sigma * (b - a), a * (rho - c) - b, a * b - beta * c))


def l96_rhs(x, forcing=8.0):
    """Lorenz '96 tendencies with periodic indexing along axis 0."""
    x = np.asarray(x, dtype=float)
    return (np.roll(x, -1, axis=0) - np.roll(x, 2, axis=0)) * np.roll(x, 1, axis=0) - x + forcing


def _n_steps(duration, dt):
    k = round(duration / dt)
    if k < 0 or abs(k * dt - duration) > 1e-9 * max(1.0, abs(duration)):
        raise ValueError(f"duration {duration} is not a multiple of the step {dt}")
    return int(k)


def rk4_step(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(model, state, duration, dt=None):
    """Fixed-step classical Runge-Kutta integration over ``duration``."""
    dt = model.dt if dt is None else dt
    x = np.array(state, dtype=float)
    for _ in range(_n_steps(duration, dt)):
        x = rk4_step(model.rhs, x, dt)
    return x


# -- observation errors --------------------------------------------------------


@dataclass(frozen=True)
class ErrorModel:
    """Scalar error density applied independently to every observation.

    ``kind`` is one of ``gaussian``, ``cauchy``, ``half-gaussian`` or
    ``half-cauchy``. For the Gaussian kinds ``scale`` is the variance ``R``;
    for the Cauchy kinds it is the scale ``γ``.
    """

    kind: str
    scale: float

    def __post_init__(self):
        if self.kind not in ("gaussian", "cauchy", "half-gaussian", "half-cauchy"):
            raise ValueError(f"unknown error kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("error scale must be positive")

    @property
    def one_sided(self):
        return self.kind.startswith("half-")

    def full(self):
        """The symmetric density whose absolute value gives this one."""
        return ErrorModel(self.kind.replace("half-", ""), self.scale)

    def sample(self, rng, size):
        if self.kind.endswith("gaussian"):
            e = rng.standard_normal(size) * math.sqrt(self.scale)
        else:
            e = rng.standard_cauchy(size) * self.scale
        return np.abs(e) if self.one_sided else e

    def logpdf(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind.endswith("gaussian"):
            out = -0.5 * r * r / self.scale - 0.5 * math.log(2 * math.pi * self.scale)
        else:
            g = self.scale
            out = -np.log(math.pi * g * (1.0 + (r / g) ** 2))
        if self.one_sided:
            out = np.where(r >= 0, out + math.log(2.0), -np.inf)
        return out

    def pdf(self, r):
        return np.exp(self.logpdf(r))

    def variance(self):
        if self.kind == "gaussian":
            return self.scale
        if self.kind == "half-gaussian":
            return self.scale * (1.0 - 2.0 / math.pi)
        return math.inf


def sample_error(err, rng, size):
    return err.sample(rng, size)


def likelihood_pdf(err, residual):
    """Observation likelihood ``p(y | z)`` as a function of ``y - z``."""
    return err.pdf(residual)


# -- observation operators -----------------------------------------------------


@dataclass(frozen=True)
class ObservationSpec:
    """Observation operator plus error model.

    operator:
      ``l63-distance``   squared distance to the L63 equilibrium (``sqrt=True``
                         for the plain distance),
      ``l96-abs-alternate``  ``|x_1|, |x_3|, ...`` (1-based odd components),
      ``identity``       every component.
    """

    operator: str
    error: ErrorModel
    sqrt: bool = False
    model: object = None

    def __post_init__(self):
        if self.operator not in ("l63-distance", "l96-abs-alternate", "identity"):
            raise ValueError(f"unknown observation operator {self.operator!r}")

    def n_obs(self, n_st):
        if self.operator == "l63-distance":
            return 1
        if self.operator == "l96-abs-alternate":
            return (n_st + 1) // 2
        return n_st

    def positions(self, n_st):
        """Grid position (state index) of each observable, for localisation."""
        if self.operator == "l96-abs-alternate":
            return np.arange(0, n_st, 2)
        if self.operator == "identity":
            return np.arange(n_st)
        return np.zeros(1, dtype=int)


def observe(spec, state):
    """Apply the observation operator column-wise."""
    x = np.asarray(state, dtype=float)
    if spec.operator == "l63-distance":
        if x.shape[0] != 3:
            raise ValueError("L63 observation needs a 3-component state")
        p = (spec.model or Lorenz63()).equilibrium
        d = x - p.reshape((3,) + (1,) * (x.ndim - 1))
        out = np.sum(d * d, axis=0, keepdims=True)
        return np.sqrt(out) if spec.sqrt else out
    if spec.operator == "l96-abs-alternate":
        return np.abs(x[0::2])
    return x.copy()
