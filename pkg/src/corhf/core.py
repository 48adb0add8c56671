"""Ensemble containers, ensemble statistics and seeded random streams.

Ensembles are plain ``numpy`` arrays of shape ``(n_var, n_ens)``: one row per
state (or observable) component, one column per member.

Two standard-deviation conventions are in use across the package:

* population (divide by ``n``) for the copula kernel bandwidth, so that the
  spread of the uniform quantile grid tends to ``12**-0.5``;
* sample (divide by ``n - 1``) for regression covariances and tail lengths.
"""

from __future__ import annotations

import hashlib

import numpy as np


class DegenerateInputError(ValueError):
    """Input too small or too degenerate for the requested statistic."""


def as_ensemble(states, name="ensemble"):
    """Validate and return a 2-D float ensemble array of shape (n_var, n_ens)."""
    arr = np.asarray(states, dtype=float)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (n_var, n_ens), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 2:
        raise DegenerateInputError(
            f"{name} needs n_var >= 1 and n_ens >= 2, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def ensemble_mean(ens):
    """Member mean of each component; returns a vector of length n_var."""
    return np.mean(as_ensemble(ens), axis=1)


def ensemble_stddev(values, ddof=0):
    """Standard deviation of a set of scalar samples.

    Parameters
    ----------
    values : array_like, 1-d
        At least two samples.
    ddof : int
        0 for the population convention (bandwidth rule), 1 for the sample
        convention (regression, tail lengths).
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 2:
        raise DegenerateInputError("stddev needs at least 2 values")
    return float(np.std(v, ddof=ddof))


def ensemble_cov(a, b, ddof=1):
    """Empirical covariance of two equally long sample vectors.

    Uses the same normalisation as :func:`ensemble_stddev` with the same
    ``ddof``, so ``ensemble_cov(a, a, d) == ensemble_stddev(a, d) ** 2``.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise DegenerateInputError("cov needs at least 2 values")
    da = a - a.mean()
    db = b - b.mean()
    return float(np.dot(da, db) / (a.size - ddof))


def anomalies(ens):
    """Deviations from the member mean, same shape as ``ens``."""
    ens = np.asarray(ens, dtype=float)
    return ens - ens.mean(axis=-1, keepdims=True)


def _tag_key(tag):
    # stable across processes, unlike hash()
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed, *keys):
    """Deterministic random stream for ``(seed, *keys)``.

    The generator is numpy's counter-based Philox. Keys may be integers
    (trial indices) or strings (purpose tags such as ``"truth"`` or
    ``"filter:corhf"``); strings are folded in through SHA-256 so the
    mapping does not depend on interpreter hash randomisation.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        if isinstance(k, (int, np.integer)):
            entropy.append(int(k) & 0xFFFFFFFFFFFFFFFF)
        else:
            entropy.append(_tag_key(k))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
