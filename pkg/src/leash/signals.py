"""Per-step signal records derived from raw logits or precomputed values."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from . import numerics
from .errors import ProtocolError, SignalBoundsError

_BOUND_SLACK = 1e-6


@dataclass(frozen=True)
class StepSignals:
    """Everything the stopper needs to know about one decoding step.

    ``saturated`` marks near-deterministic steps (peak probability at or above
    the configured threshold); such steps are excluded from plateau voting
    downstream but still carry entropy and margin values.
    """

    t: int
    H: float
    M: float
    p_max: float
    saturated: bool
    token_id: Optional[int] = None
    dt: Optional[float] = None


def extract(raw, t: int, cfg) -> StepSignals:
    """Score one raw logit vector: sanitize, then entropy/margin/peak.

    Deterministic: identical raw bytes and config produce bit-identical
    records.
    """
    if t < 1:
        raise ProtocolError(f"step index must be >= 1, got {t}")
    z = numerics.sanitize(raw, cfg.B)
    h, m, p = numerics.step_scores(z)
    return StepSignals(t=t, H=h, M=m, p_max=p, saturated=p >= cfg.tau_p)


def validate(signals: StepSignals, vocab_size: int, cfg) -> StepSignals:
    """Bounds-check a record that arrived precomputed (e.g. a signal trace).

    The ``saturated`` flag is recomputed from ``p_max`` and the active config
    rather than trusted. Raises :class:`SignalBoundsError` on violations.
    """
    log_v = math.log(vocab_size)
    if not (-_BOUND_SLACK <= signals.H <= log_v + _BOUND_SLACK):
        raise SignalBoundsError(
            f"step {signals.t}: entropy {signals.H} outside [0, log {vocab_size}]"
        )
    if signals.M < 0 or not math.isfinite(signals.M):
        raise SignalBoundsError(f"step {signals.t}: margin {signals.M} is negative")
    if not (0.0 < signals.p_max <= 1.0):
        raise SignalBoundsError(
            f"step {signals.t}: peak probability {signals.p_max} outside (0, 1]"
        )
    return replace(signals, saturated=signals.p_max >= cfg.tau_p)
