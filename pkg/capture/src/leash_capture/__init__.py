"""Trace capture for adaptive-stopping evaluation.

Runs prompts through a model in two phases — a sampled rationale stream
whose per-step signals feed the stopper, then a greedy answer decode — and
writes replayable trace files plus a scoring manifest.
"""

from .backends import HFBackend, ModelBackend, TinyDemoBackend, get_backend
from .errors import CaptureError, UnsupportedModelError
from .jobs import (
    CaptureJob,
    Prompt,
    RationaleResult,
    load_prompts,
    run_answer,
    run_job,
    run_rationale,
    sample_token,
)
from .scoring import answers_match, normalize_answer, score

__version__ = "0.1.0"

__all__ = [
    "CaptureError",
    "CaptureJob",
    "HFBackend",
    "ModelBackend",
    "Prompt",
    "RationaleResult",
    "TinyDemoBackend",
    "UnsupportedModelError",
    "answers_match",
    "get_backend",
    "load_prompts",
    "normalize_answer",
    "run_answer",
    "run_job",
    "run_rationale",
    "sample_token",
    "score",
]
