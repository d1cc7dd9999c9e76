"""Numerically stable scoring kernels for next-token logit vectors.

Two routes exist for every score:

* a readable reference route built on :class:`ProbView` (``probabilities`` /
  ``entropy`` / ``margin`` / ``peak_probability``), always pure numpy;
* a fused single-pass route (``step_scores`` / ``step_scores_batch``) used on
  the hot replay path, compiled with numba when available.

The fused backend is selected once at import time from the ``LEASH_KERNELS``
environment variable: ``auto`` (default; numba if importable), ``numba``
(require it), or ``numpy`` (force the fallback).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MalformedTraceError

_ENV_VAR = "LEASH_KERNELS"


def _select_backend() -> str:
    mode = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if mode not in ("auto", "numba", "numpy"):
        raise ConfigError(f"{_ENV_VAR} must be auto, numba, or numpy; got {mode!r}")
    if mode == "numpy":
        return "numpy"
    try:
        from . import _accel  # noqa: F401
    except ImportError:
        if mode == "numba":
            raise
        return "numpy"
    return "numba"


_BACKEND = _select_backend()
if _BACKEND == "numba":
    from . import _accel


def kernel_backend() -> str:
    """Name of the active fused-kernel backend: ``"numba"`` or ``"numpy"``."""
    return _BACKEND


@dataclass(frozen=True, eq=False)
class ProbView:
    """Paired probability / log-probability views of one sanitized logit row."""

    probs: np.ndarray
    logprobs: np.ndarray


def sanitize(raw, band: float) -> np.ndarray:
    """Replace non-finite entries with zero, then clip to ``[-band, band]``.

    Accepts any real sequence of length >= 2; returns a fresh float64 vector.
    """
    if band <= 0 or not math.isfinite(band):
        raise ConfigError(f"clip band must be a positive finite real, got {band!r}")
    z = np.asarray(raw, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise MalformedTraceError(
            f"logit vector must be 1-d with at least 2 entries, got shape {z.shape}"
        )
    out = z.copy()
    out[~np.isfinite(out)] = 0.0
    np.clip(out, -band, band, out=out)
    return out


def sanitize_batch(raw, band: float) -> np.ndarray:
    """Batch form of :func:`sanitize` over a ``(steps, vocab)`` matrix."""
    if band <= 0 or not math.isfinite(band):
        raise ConfigError(f"clip band must be a positive finite real, got {band!r}")
    z = np.ascontiguousarray(raw, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] < 2:
        raise MalformedTraceError(
            f"logit batch must be 2-d with vocab >= 2, got shape {z.shape}"
        )
    if _BACKEND == "numba":
        return _accel.sanitize_batch(z, float(band))
    out = z.copy()
    out[~np.isfinite(out)] = 0.0
    np.clip(out, -band, band, out=out)
    return out


def probabilities(z) -> ProbView:
    """Softmax and log-softmax of a sanitized logit vector, max-stabilized."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max()
    exps = np.exp(shifted)
    total = exps.sum()
    logprobs = shifted - math.log(total)
    return ProbView(probs=exps / total, logprobs=logprobs)


def entropy(view: ProbView) -> float:
    """Shannon entropy in nats, with the 0*log(0) = 0 convention."""
    p = view.probs
    terms = np.where(p > 0.0, p * view.logprobs, 0.0)
    h = -float(terms.sum())
    return min(max(h, 0.0), math.log(p.shape[0]))


def margin(view: ProbView) -> float:
    """Gap between the two largest log-probabilities (nonnegative)."""
    lp = view.logprobs
    top2 = np.partition(lp, lp.shape[0] - 2)[-2:]
    return max(0.0, float(top2[1] - top2[0]))


def peak_probability(view: ProbView) -> float:
    """Largest softmax probability."""
    return float(view.probs.max())


def _step_scores_batch_np(z: np.ndarray):
    m1 = z.max(axis=1, keepdims=True)
    exps = np.exp(z - m1)
    total = exps.sum(axis=1)
    lse = m1[:, 0] + np.log(total)
    weighted = (exps * z).sum(axis=1)
    h = lse - weighted / total
    np.clip(h, 0.0, math.log(z.shape[1]), out=h)
    top2 = np.partition(z, z.shape[1] - 2, axis=1)[:, -2:]
    m = np.maximum(0.0, (top2[:, 1] - lse) - (top2[:, 0] - lse))
    return h, m, 1.0 / total


def step_scores_batch(z):
    """Fused (entropy, margin, peak probability) per row of sanitized logits.

    Returns three float64 arrays of length ``steps``. Rows must be sanitized;
    this is the hot kernel behind full-logit replay and signal extraction.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] < 2:
        raise MalformedTraceError(
            f"logit batch must be 2-d with vocab >= 2, got shape {z.shape}"
        )
    if _BACKEND == "numba":
        return _accel.step_scores_batch(z)
    return _step_scores_batch_np(z)


def step_scores(z) -> tuple[float, float, float]:
    """Single-row convenience wrapper around :func:`step_scores_batch`."""
    z = np.asarray(z, dtype=np.float64)
    h, m, p = step_scores_batch(z.reshape(1, -1))
    return float(h[0]), float(m[0]), float(p[0])
