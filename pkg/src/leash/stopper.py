"""Streaming plateau-detection state machine that decides when to halt.

One :class:`Stopper` instance tracks a single generation stream. Each decoded
step's signals are pushed through :meth:`Stopper.feed`, which maintains
constant-size ring buffers of recent entropy and margin values, casts plateau
votes for non-saturated steps, and emits a halt decision once a majority of
the recent votes agree and the entropy has dropped measurably below its
reference level — or unconditionally at the maximum rationale length.

:func:`oracle_stop` restates the same rule as a batch scan over a complete
trace. It shares no state machinery with the streaming path and exists as an
independent reference for testing.
"""

from __future__ import annotations

import math
import statistics
from collections import deque
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Optional, Sequence

from .errors import ConfigError, ProtocolError
from .signals import StepSignals


class HaltReason(str, Enum):
    PLATEAU_VOTE = "plateau_vote"
    MAX_LENGTH_CAP = "max_length_cap"


@dataclass(frozen=True)
class Decision:
    """Outcome of feeding one step: keep generating, or halt at ``tau``."""

    kind: str  # "continue" | "halt"
    tau: Optional[int] = None
    reason: Optional[HaltReason] = None

    @property
    def is_halt(self) -> bool:
        return self.kind == "halt"

    @staticmethod
    def proceed() -> "Decision":
        return Decision(kind="continue")

    @staticmethod
    def halt(tau: int, reason: HaltReason) -> "Decision":
        return Decision(kind="halt", tau=tau, reason=reason)


@dataclass(frozen=True)
class StopConfig:
    """All hyperparameters of the stopping rule plus the sanitization band.

    ``vanilla=True`` disables plateau voting entirely, so every stream runs to
    the maximum length cap (the fixed-length baseline behavior).
    """

    k: int = 8          # trend window
    L: int = 5          # vote span
    eps_H: float = 0.005    # entropy-slope slack
    delta_M: float = 0.05   # margin-improvement slack
    m: int = 64         # minimum rationale length
    M: int = 320        # maximum rationale length
    w: int = 8          # warmup steps on top of the minimum length
    tau_p: float = 0.99     # saturation threshold on peak probability
    gamma: float = 0.1      # required entropy drop below reference, in nats
    B: float = 80.0     # logit clip band
    vanilla: bool = False

    def __post_init__(self):
        checks = [
            (self.k >= 1, "k must be >= 1"),
            (self.L >= 1, "L must be >= 1"),
            (self.eps_H > 0, "eps_H must be > 0"),
            (self.delta_M > 0, "delta_M must be > 0"),
            (self.m >= 0, "m must be >= 0"),
            (self.M >= 1, "M must be >= 1"),
            (self.w >= 0, "w must be >= 0"),
            (0.0 < self.tau_p <= 1.0, "tau_p must be in (0, 1]"),
            (self.gamma >= 0, "gamma must be >= 0"),
            (self.B > 0 and math.isfinite(self.B), "B must be positive and finite"),
            (self.m + self.w <= self.M, "m + w must not exceed M"),
            (self.k + self.L <= self.M, "k + L must not exceed M"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def t_min(self) -> int:
        """Earliest step at which a plateau halt may fire."""
        return max(self.m + self.w, self.k + self.L)

    @property
    def vote_quorum(self) -> int:
        """Majority threshold over a full vote span."""
        return (self.L + 1) // 2

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, values: dict) -> "StopConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)


@dataclass
class Stopper:
    """Single-stream stopping state. Not shareable mid-stream across threads.

    Memory is constant in the number of steps: two ring buffers of the last
    ``k+1`` signal values and a vote ledger capped at ``L`` entries.
    """

    cfg: StopConfig
    t: int = 0
    decision: Decision = field(default_factory=Decision.proceed)
    H_ref: Optional[float] = None
    _H: deque = field(init=False, repr=False)
    _M: deque = field(init=False, repr=False)
    _votes: deque = field(init=False, repr=False)  # (step, passed) pairs
    _last: Optional[StepSignals] = field(default=None, repr=False)

    def __post_init__(self):
        cap = self.cfg.k + 1
        self._H = deque(maxlen=cap)
        self._M = deque(maxlen=cap)
        self._votes = deque(maxlen=self.cfg.L)

    def entropy_slope(self) -> float:
        """Mean per-step entropy change over the last ``k`` steps."""
        if len(self._H) <= self.cfg.k:
            raise ProtocolError(
                f"entropy slope undefined before step {self.cfg.k + 1}"
            )
        return (self._H[-1] - self._H[0]) / self.cfg.k

    def margin_improvement(self) -> float:
        """Margin change over the last ``k`` steps."""
        if len(self._M) <= self.cfg.k:
            raise ProtocolError(
                f"margin improvement undefined before step {self.cfg.k + 1}"
            )
        return self._M[-1] - self._M[0]

    def plateau_test(self) -> bool:
        """Plateau vote for the most recent step.

        True when the entropy slope has flattened, the margin improvement has
        stalled, and the step is not saturated.
        """
        if self._last is None:
            raise ProtocolError("no step fed yet")
        if self._last.saturated:
            return False
        return (
            self.entropy_slope() >= -self.cfg.eps_H
            and self.margin_improvement() <= self.cfg.delta_M
        )

    def feed(self, signals: StepSignals) -> Decision:
        """Ingest the next step's signals and return the current decision.

        Steps must arrive strictly sequentially starting at 1; feeding after a
        halt is a protocol error.
        """
        if self.decision.is_halt:
            raise ProtocolError(f"feed after halt at step {self.decision.tau}")
        if signals.t != self.t + 1:
            raise ProtocolError(
                f"out-of-order step: expected {self.t + 1}, got {signals.t}"
            )
        cfg = self.cfg
        self.t = signals.t
        self._last = signals
        self._H.append(signals.H)
        self._M.append(signals.M)
        if self.t == cfg.k:
            self.H_ref = statistics.median(self._H)

        if not cfg.vanilla:
            if self.t > cfg.k and not signals.saturated:
                self._votes.append((self.t, self.plateau_test()))
            if (
                self.t >= cfg.t_min
                and len(self._votes) == cfg.L
                and sum(passed for _, passed in self._votes) >= cfg.vote_quorum
                and self.H_ref - signals.H >= cfg.gamma
            ):
                self.decision = Decision.halt(self.t, HaltReason.PLATEAU_VOTE)
                return self.decision

        if self.t >= cfg.M:
            self.decision = Decision.halt(cfg.M, HaltReason.MAX_LENGTH_CAP)
        return self.decision

    def state_cells(self) -> int:
        """Number of retained history entries; constant once warmed up."""
        return len(self._H) + len(self._M) + len(self._votes)


def oracle_stop(trace: Sequence[StepSignals], cfg: StopConfig) -> Decision:
    """Batch restatement of the stopping rule, for cross-checking the stream.

    Recomputes reference entropy, trends, and votes from scratch with plain
    scans over the full trace. Returns the same decision the feed loop
    produces on the same steps, including a ``continue`` decision when the
    trace ends before any halt condition is met.
    """
    H = [s.H for s in trace]
    Mv = [s.M for s in trace]
    sat = [s.p_max >= cfg.tau_p for s in trace]
    n = len(trace)
    t_min = max(cfg.m + cfg.w, cfg.k + cfg.L)
    h_ref = statistics.median(H[: cfg.k]) if n >= cfg.k else None

    def vote(j: int) -> bool:  # j is 1-based
        slope = (H[j - 1] - H[j - 1 - cfg.k]) / cfg.k
        improve = Mv[j - 1] - Mv[j - 1 - cfg.k]
        return slope >= -cfg.eps_H and improve <= cfg.delta_M

    for t in range(1, n + 1):
        if not cfg.vanilla and t >= t_min:
            ledger = [
                j for j in range(t, cfg.k, -1) if not sat[j - 1]
            ][: cfg.L]
            if (
                len(ledger) == cfg.L
                and sum(vote(j) for j in ledger) >= math.ceil(cfg.L / 2)
                and h_ref - H[t - 1] >= cfg.gamma
            ):
                return Decision.halt(t, HaltReason.PLATEAU_VOTE)
        if t >= cfg.M:
            return Decision.halt(cfg.M, HaltReason.MAX_LENGTH_CAP)
    return Decision.proceed()
