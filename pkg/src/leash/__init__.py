"""Adaptive stopping for chain-of-thought decoding.

Scores each decoding step's next-token logits (entropy, top-two margin, peak
probability), tracks windowed trends in constant memory, and halts rationale
generation once the trends plateau and entropy has dropped measurably — or at
a fixed maximum length. Ships with bit-exact trace formats, a synthetic trace
generator, and a replay/metrics harness.

Embeddable interface: build a :class:`StopConfig`, create a :class:`Stopper`
per generation stream, call :func:`extract` on each step's raw logits, feed
the record to :meth:`Stopper.feed`, and stop generating when the returned
:class:`Decision` says halt.
"""

from .errors import (
    BadMagicError,
    ConfigError,
    LeashError,
    MalformedTraceError,
    NonContiguousStepsError,
    ProtocolError,
    SignalBoundsError,
    TruncatedTraceError,
    VocabMismatchError,
)
from .harness import analyze, load_config, replay, replay_trace, run_stopper
from .numerics import (
    ProbView,
    entropy,
    kernel_backend,
    margin,
    peak_probability,
    probabilities,
    sanitize,
    sanitize_batch,
    step_scores,
    step_scores_batch,
)
from .signals import StepSignals, extract, validate
from .stopper import Decision, HaltReason, StopConfig, Stopper, oracle_stop
from .trace import (
    SignalStep,
    SynthSpec,
    Trace,
    TraceMeta,
    read_trace,
    synthesize,
    synthesize_logits,
    write_trace,
)

__version__ = "0.1.0"

__all__ = [
    "BadMagicError",
    "ConfigError",
    "Decision",
    "HaltReason",
    "LeashError",
    "MalformedTraceError",
    "NonContiguousStepsError",
    "ProbView",
    "ProtocolError",
    "SignalBoundsError",
    "SignalStep",
    "StepSignals",
    "StopConfig",
    "Stopper",
    "SynthSpec",
    "Trace",
    "TraceMeta",
    "TruncatedTraceError",
    "VocabMismatchError",
    "analyze",
    "entropy",
    "extract",
    "kernel_backend",
    "load_config",
    "margin",
    "oracle_stop",
    "peak_probability",
    "probabilities",
    "read_trace",
    "replay",
    "replay_trace",
    "run_stopper",
    "sanitize",
    "sanitize_batch",
    "step_scores",
    "step_scores_batch",
    "synthesize",
    "synthesize_logits",
    "validate",
    "write_trace",
]
