"""Twin experiments and small demonstration scenarios.

A trial integrates one truth trajectory, draws one observation sequence from
it and then cycles every configured filter (and ensemble size) through the
same observations. Random streams are keyed by ``(seed, trial, purpose)`` so
adding filters, ensemble sizes or trials never changes what the others see.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from corhf.copula import CopulaConfig, LocalizationSpec, cyclic_distance
from corhf.core import substream
from corhf.filters import FilterConfig, inflate_observables, run_analysis
from corhf.models import ErrorModel, Lorenz63, Lorenz96, ObservationSpec, integrate, observe
from corhf.univariate import SamplingMethod, TailPolicy, tail_length  # noqa: F401

logger = logging.getLogger(__name__)


def rmse(truths, estimates):
    """Spatiotemporal RMSE ``sqrt(sum_k ||truth_k - est_k||^2 / (n_k n_st))``.

    Both arguments are sequences of state vectors (shape ``(n_k, n_st)``).
    """
    t = np.atleast_2d(np.asarray(truths, dtype=float))
    e = np.atleast_2d(np.asarray(estimates, dtype=float))
    if t.shape != e.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {e.shape}")
    return math.sqrt(math.fsum(((t - e) ** 2).ravel()) / t.size)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one twin experiment."""

    model: object
    observation: ObservationSpec
    filters: tuple
    n_ens: tuple = (40,)
    n_steps: int = 1000
    n_spinup: int = 100
    n_trials: int = 1
    seed: int = 0
    init_spread: float = 1.0
    truth_spinup_time: float = 10.0
    bpf_n_ens: int = 10_000

    def __post_init__(self):
        if not 0 <= self.n_spinup < self.n_steps:
            raise ValueError("need 0 <= n_spinup < n_steps")
        if self.n_trials < 1:
            raise ValueError("need n_trials >= 1")

    def ensemble_sizes(self, fc):
        if fc.kind == "bpf":
            return (fc.n_ens or self.bpf_n_ens,)
        return (fc.n_ens,) if fc.n_ens else tuple(self.n_ens)


def filter_label(fc):
    return fc.kind


def l63_config(n_steps=5500, n_spinup=500, n_trials=36, n_ens=(40,), alpha=1.0,
               filters=("enkf", "rhf", "qceff", "corhf", "bpf"), seed=0, capped_tail=False,
               bpf_jitter=0.02, sqrt_distance=False, **kw):
    """Lorenz '63 setup: squared distance to equilibrium, half-Gaussian error R = 1.

    ``sqrt_distance=True`` observes the plain Euclidean distance instead.
    """
    model = Lorenz63()
    obs = ObservationSpec("l63-distance", ErrorModel("half-gaussian", 1.0), model=model,
                          sqrt=sqrt_distance)
    obs_tail = TailPolicy("l63-adaptive", 2.0, capped=capped_tail)
    state_tail = TailPolicy("fixed", 2.0)
    fcs = []
    for name in filters:
        fcs.append(FilterConfig(
            name, obs_tail=obs_tail, state_tail=state_tail,
            copula=CopulaConfig(alpha=alpha) if name == "corhf" else None,
            inflate=name != "bpf", bpf_jitter=bpf_jitter if name == "bpf" else 0.0,
        ))
    return ExperimentConfig(model, obs, tuple(fcs), tuple(n_ens), n_steps, n_spinup,
                            n_trials, seed, **kw)


def l96_config(n_steps=2200, n_spinup=200, n_trials=36, n_ens=(40,), alpha=1.0, r_loc=2.0,
               filters=("enkf", "rhf", "qceff", "corhf"), seed=0, bpf_jitter=0.02,
               localize_baselines=True, **kw):
    """Lorenz '96 setup: ``|x|`` of odd components, half-Cauchy error γ = 0.1.

    The same cyclic Gaspari-Cohn taper localises CoRHF's copula and, unless
    ``localize_baselines`` is False, the baselines' regressions.
    """
    model = Lorenz96()
    obs = ObservationSpec("l96-abs-alternate", ErrorModel("half-cauchy", 0.1))
    tail = TailPolicy("fixed", 2.0)
    loc = LocalizationSpec(cyclic_distance(model.n_st), r_loc) if r_loc else None
    fcs = []
    for name in filters:
        fcs.append(FilterConfig(
            name, obs_tail=tail, state_tail=tail,
            copula=CopulaConfig(alpha=alpha, localization=loc) if name == "corhf" else None,
            localization=loc if localize_baselines and name != "corhf" else None,
            inflate=name != "bpf", bpf_jitter=bpf_jitter if name == "bpf" else 0.0,
        ))
    return ExperimentConfig(model, obs, tuple(fcs), tuple(n_ens), n_steps, n_spinup,
                            n_trials, seed, **kw)


@dataclass
class FilterRun:
    """Per-step record of one filter at one ensemble size."""

    filter: str
    n_ens: int
    sq_forecast: list = field(default_factory=list)  # ||truth - mean||^2 per step
    sq_analysis: list = field(default_factory=list)
    degenerate: list = field(default_factory=list)
    failed: Optional[str] = None
    wall_time: float = 0.0

    def aggregate(self, n_spinup, n_st):
        """Forecast and analysis RMSE over the post-spinup steps."""
        f = self.sq_forecast[n_spinup:]
        a = self.sq_analysis[n_spinup:]
        if not a:
            return math.nan, math.nan
        return (math.sqrt(math.fsum(f) / (len(f) * n_st)),
                math.sqrt(math.fsum(a) / (len(a) * n_st)))


@dataclass
class TrialResult:
    trial: int
    n_spinup: int
    n_st: int
    observations: np.ndarray
    truth: np.ndarray
    runs: list

    @property
    def failed(self):
        return any(r.failed for r in self.runs)

    def summary(self):
        """``{(filter, n_ens): (rmse_forecast, rmse_analysis)}``."""
        return {(r.filter, r.n_ens): r.aggregate(self.n_spinup, self.n_st) for r in self.runs}

    def rows(self):
        """Per-step result rows; steps are 1-based, spinup steps included."""
        out = []
        for r in self.runs:
            for k, (f, a, d) in enumerate(zip(r.sq_forecast, r.sq_analysis, r.degenerate)):
                out.append((self.trial, k + 1, r.filter, r.n_ens,
                            math.sqrt(f / self.n_st), math.sqrt(a / self.n_st), d))
        return out


def truth_and_observations(cfg, trial):
    """Truth trajectory (``n_steps + 1`` states) and observations (``n_steps``)."""
    model = cfg.model
    rng = substream(cfg.seed, trial, "truth")
    if isinstance(model, Lorenz63):
        x0 = np.array([1.0, 1.0, 1.0]) + rng.standard_normal(3)
    else:
        x0 = model.forcing + rng.standard_normal(model.n_st)
    x0 = integrate(model, x0, round(cfg.truth_spinup_time / model.dt) * model.dt)
    truth = [x0]
    for _ in range(cfg.n_steps):
        truth.append(integrate(model, truth[-1], model.interval))
    truth = np.array(truth)
    orng = substream(cfg.seed, trial, "observations")
    err = cfg.observation.error
    obs = np.array([observe(cfg.observation, t) + err.sample(orng, cfg.observation.n_obs(t.size))
                    for t in truth[1:]])
    return truth, obs


def initial_ensemble(cfg, trial, n_ens, x0):
    rng = substream(cfg.seed, trial, "init", n_ens)
    return x0[:, None] + cfg.init_spread * rng.standard_normal((x0.size, n_ens))


def run_filter(cfg, fc, n_ens, truth, obs, trial):
    """Cycle one filter through the observation sequence."""
    model = cfg.model
    spec = cfg.observation
    lik = spec.error if fc.kind == "bpf" else spec.error.full()
    rng = substream(cfg.seed, trial, "filter", fc.kind, n_ens)
    n_st = truth.shape[1]
    state_pos = np.arange(n_st)
    obs_pos = spec.positions(n_st)
    run = FilterRun(filter_label(fc), n_ens)
    x = initial_ensemble(cfg, trial, n_ens, truth[0])
    t0 = time.perf_counter()
    try:
        for k in range(cfg.n_steps):
            x = integrate(model, x, model.interval)
            tr = truth[k + 1]
            run.sq_forecast.append(float(np.sum((tr - x.mean(axis=1)) ** 2)))
            z = observe(spec, x)
            if fc.inflate:
                z = inflate_observables(z, spec.error, rng)
            res = run_analysis(fc, x, z, obs[k], lik, rng, state_pos, obs_pos)
            x = res.x
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite analysis at step {k + 1}")
            run.sq_analysis.append(float(np.sum((tr - x.mean(axis=1)) ** 2)))
            run.degenerate.append(int(res.diagnostics.get("degenerate_count", 0)))
    except Exception as exc:  # recorded; other filters keep running
        logger.warning("filter %s (n_ens=%d) failed in trial %d: %s", fc.kind, n_ens, trial, exc)
        run.failed = f"{type(exc).__name__}: {exc}"
    run.wall_time = time.perf_counter() - t0
    return run


def run_trial(cfg, trial_index):
    """Run every configured filter and ensemble size on one truth trajectory."""
    truth, obs = truth_and_observations(cfg, trial_index)
    runs = []
    for fc in cfg.filters:
        for n_ens in cfg.ensemble_sizes(fc):
            runs.append(run_filter(cfg, fc, n_ens, truth, obs, trial_index))
    return TrialResult(trial_index, cfg.n_spinup, truth.shape[1], obs, truth, runs)


# -- demonstration scenarios -------------------------------------------------------


@dataclass(frozen=True)
class NormalBeta:
    """``x2 = scale * Beta(a, b)``, ``x1 | x2 ~ Normal(x2, sd)``; ``x1`` observed."""

    a: float = 2.0
    b: float = 3.0
    scale: float = 4.0
    sd: float = 1.0
    obs_var: float = 1.0
    y: float = -1.0

    def sample_prior(self, rng, n):
        x2 = self.scale * rng.beta(self.a, self.b, n)
        x1 = x2 + self.sd * rng.standard_normal(n)
        return np.vstack((x1, x2))

    @property
    def support(self):
        return 0.0, self.scale


@dataclass(frozen=True)
class ScalarAbsSin:
    """Scalar state with a symmetric prior observed through ``|x|`` and ``sin x``."""

    prior_mean: float = 0.0
    prior_sd: float = 2.0
    y: tuple = (1.5, 0.99)
    obs_var: float = 0.1
    observe_sin: bool = True

    def sample_prior(self, rng, n):
        return (self.prior_mean + self.prior_sd * rng.standard_normal(n))[None, :]

    def observe(self, x):
        z = [np.abs(x[0])]
        if self.observe_sin:
            z.append(np.sin(x[0]))
        return np.vstack(z)


SCENARIOS = {"normal-beta": NormalBeta, "scalar": ScalarAbsSin}


def run_demo_2d(scenario, filter_kind, n_ens, rng, tail=None, alpha=1.0):
    """Prior and analysis samples for a demonstration scenario.

    Returns a dict with ``prior`` and ``analysis`` arrays of shape
    ``(n_st, n_ens)``, the prior observables ``z``, the observation ``y``
    and the scenario object.
    """
    if isinstance(scenario, str):
        try:
            scenario = SCENARIOS[scenario]()
        except KeyError:
            raise ValueError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    tail = tail or TailPolicy("fixed", 2.0)
    bounds = (None, scenario.support) if isinstance(scenario, NormalBeta) else None
    fc = FilterConfig(filter_kind, obs_tail=tail, state_tail=tail, state_bounds=bounds,
                      copula=CopulaConfig(alpha=alpha) if filter_kind == "corhf" else None)
    prior = scenario.sample_prior(rng, n_ens)
    if isinstance(scenario, NormalBeta):
        z = prior[:1].copy()
        y = np.array([scenario.y])
    else:
        z = scenario.observe(prior)
        y = np.asarray(scenario.y[: z.shape[0]], dtype=float)
    lik = ErrorModel("gaussian", scenario.obs_var)
    if filter_kind == "enkf":
        z = inflate_observables(z, lik, rng)
    res = run_analysis(fc, prior, z, y, lik, rng)
    return {"prior": prior, "analysis": res.x, "z": z, "z_analysis": res.z, "y": y,
            "scenario": scenario}
