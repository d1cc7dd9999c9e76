"""Replay traces through the stopper and aggregate efficiency metrics.

Per-trace token reduction compares the adaptive stopping point against the
fixed-length baseline that always decodes to the maximum rationale length.
Latency numbers are counterfactual prefix sums over recorded step durations
of the same trace (no paired baseline run exists at replay time) and are
labeled as approximations in the report.
"""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

from . import numerics
from .errors import ConfigError, LeashError
from .signals import StepSignals
from .stopper import Decision, StopConfig, Stopper
from .trace import KIND_SIGNAL, Trace, read_trace

REPORT_VERSION = 1
_CHUNK = 64  # full-logit rows scored per kernel call

_INT_FIELDS = {"k", "L", "m", "M", "w"}
_FLOAT_FIELDS = {"eps_H", "delta_M", "tau_p", "gamma", "B"}
_BOOL_FIELDS = {"vanilla"}


def parse_config_text(text: str) -> dict:
    """Parse the flat ``key = value`` config format into a field dict."""
    values: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        try:
            if key in _INT_FIELDS:
                values[key] = int(raw)
            elif key in _FLOAT_FIELDS:
                values[key] = float(raw)
            elif key in _BOOL_FIELDS:
                if raw.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(raw)
                values[key] = raw.lower() in ("true", "1")
            else:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        except ValueError:
            raise ConfigError(
                f"config line {lineno}: bad value {raw!r} for {key!r}"
            ) from None
    return values


def load_config(path: Optional[Union[str, Path]] = None, **overrides) -> StopConfig:
    """Build a StopConfig from an optional file plus keyword overrides."""
    values: dict = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    values.update(overrides)
    return StopConfig.from_dict(values)


def run_stopper(trace: Trace, cfg: StopConfig) -> tuple[Decision, int]:
    """Feed one trace through a fresh stopper; returns (decision, steps fed)."""
    stopper = Stopper(cfg)
    vocab = trace.meta.vocab_size
    if trace.meta.kind == KIND_SIGNAL:
        for step in trace.steps:
            decision = stopper.feed(step.to_signals(vocab, cfg))
            if decision.is_halt:
                return decision, step.t
        return stopper.decision, trace.n_steps
    logits = trace.logits
    n = trace.n_steps
    for start in range(0, n, _CHUNK):
        block = numerics.sanitize_batch(logits[start : start + _CHUNK], cfg.B)
        ent, mar, peak = numerics.step_scores_batch(block)
        for i in range(block.shape[0]):
            t = start + i + 1
            sig = StepSignals(
                t=t, H=float(ent[i]), M=float(mar[i]), p_max=float(peak[i]),
                saturated=bool(peak[i] >= cfg.tau_p),
            )
            decision = stopper.feed(sig)
            if decision.is_halt:
                return decision, t
    return stopper.decision, n


@dataclass
class TraceRow:
    """One trace's replay outcome, JSON-ready."""

    trace_id: str
    error: Optional[str] = None
    decision: Optional[str] = None
    tau: Optional[int] = None
    reason: Optional[str] = None
    steps_consumed: Optional[int] = None
    vocab_size: Optional[int] = None
    baseline_tokens: Optional[int] = None
    leash_tokens: Optional[int] = None
    token_reduction_pct: Optional[float] = None
    latency_leash_s: Optional[float] = None
    latency_baseline_s: Optional[float] = None
    latency_reduction_pct: Optional[float] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _metrics_row(
    trace_id: str,
    tau: int,
    reason: Optional[str],
    max_len: int,
    answer_tokens: int,
    dts: Optional[list],
    vocab_size: Optional[int],
    steps_consumed: Optional[int] = None,
) -> TraceRow:
    row = TraceRow(trace_id=trace_id, decision="halt", tau=tau, reason=reason,
                   steps_consumed=steps_consumed, vocab_size=vocab_size)
    row.baseline_tokens = max_len + answer_tokens
    row.leash_tokens = tau + answer_tokens
    row.token_reduction_pct = 100.0 * (1.0 - row.leash_tokens / row.baseline_tokens)
    if dts is not None and len(dts) >= tau:
        row.latency_leash_s = float(sum(dts[:tau]))
        if len(dts) >= max_len:
            row.latency_baseline_s = float(sum(dts[:max_len]))
            if row.latency_baseline_s > 0:
                row.latency_reduction_pct = 100.0 * (
                    1.0 - row.latency_leash_s / row.latency_baseline_s
                )
    return row


def _answer_tokens(trace: Trace) -> int:
    value = trace.meta.extra.get("answer_tokens", 0)
    if not isinstance(value, int) or value < 0:
        raise LeashError(f"metadata answer_tokens must be a nonneg integer, got {value!r}")
    return value


def replay_trace(path: Union[str, Path], cfg: StopConfig) -> TraceRow:
    """Replay a single trace file; failures become per-trace error rows."""
    trace_id = str(path)
    try:
        trace = read_trace(path)
        decision, consumed = run_stopper(trace, cfg)
        if not decision.is_halt:
            raise LeashError(
                f"trace ended after {trace.n_steps} steps with no stopping "
                f"decision (cap M={cfg.M} not reached)"
            )
        return _metrics_row(
            trace_id=trace_id,
            tau=decision.tau,
            reason=decision.reason.value,
            max_len=cfg.M,
            answer_tokens=_answer_tokens(trace),
            dts=trace.dt_list(),
            vocab_size=trace.meta.vocab_size,
            steps_consumed=consumed,
        )
    except (LeashError, OSError) as e:
        return TraceRow(trace_id=trace_id, error=str(e))


def _aggregate(rows: Sequence[TraceRow]) -> dict:
    ok = [r for r in rows if r.error is None]
    token = [r.token_reduction_pct for r in ok if r.token_reduction_pct is not None]
    latency = [r.latency_reduction_pct for r in ok if r.latency_reduction_pct is not None]
    reasons = Counter(r.reason for r in ok if r.reason is not None)
    return {
        "n_traces": len(rows),
        "n_failed": len(rows) - len(ok),
        "mean_token_reduction_pct": sum(token) / len(token) if token else None,
        "mean_latency_reduction_pct": sum(latency) / len(latency) if latency else None,
        "halt_reasons": dict(sorted(reasons.items())),
        "latency_note": "latency figures are counterfactual prefix sums over "
                        "recorded step durations, not paired baseline runs",
    }


def build_report(rows: Sequence[TraceRow], cfg: Optional[StopConfig] = None,
                 warnings: Optional[list] = None) -> dict:
    ordered = sorted(rows, key=lambda r: r.trace_id)
    report = {
        "report_version": REPORT_VERSION,
        "config": cfg.as_dict() if cfg is not None else None,
        "traces": [r.to_dict() for r in ordered],
        "aggregate": _aggregate(ordered),
    }
    if warnings:
        report["warnings"] = list(warnings)
    return report


def replay(paths: Sequence[Union[str, Path]], cfg: StopConfig,
           workers: int = 1) -> dict:
    """Replay a corpus, in parallel when asked, and assemble the report."""
    if not paths:
        raise ConfigError("no trace paths given")
    if workers > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda p: replay_trace(p, cfg), paths))
    else:
        rows = [replay_trace(p, cfg) for p in paths]
    return build_report(rows, cfg)


def _rows_from_report(obj: dict) -> list:
    rows = []
    for rec in obj.get("traces", []):
        known = {f: rec.get(f) for f in TraceRow.__dataclass_fields__}
        rows.append(TraceRow(**known))
    return rows


def _row_from_recorded_trace(path: Union[str, Path], baseline_m: Optional[int]) -> TraceRow:
    trace = read_trace(path)
    tau = trace.meta.extra.get("tau")
    if tau is None:
        raise LeashError("trace metadata records no stopping step (tau)")
    snapshot = trace.meta.config_snapshot or {}
    max_len = baseline_m if baseline_m is not None else snapshot.get("M")
    if max_len is None:
        raise LeashError("no baseline length: pass one or record it in the config snapshot")
    return _metrics_row(
        trace_id=str(path),
        tau=int(tau),
        reason=trace.meta.extra.get("halt_reason"),
        max_len=int(max_len),
        answer_tokens=_answer_tokens(trace),
        dts=trace.dt_list(),
        vocab_size=trace.meta.vocab_size,
    )


def analyze(inputs: Sequence[Union[str, Path]],
            baseline_m: Optional[int] = None) -> dict:
    """Aggregate replay reports and/or captured traces into one corpus report.

    Report files contribute their per-trace rows unchanged; trace files must
    carry a recorded stopping step in metadata.
    """
    if not inputs:
        raise ConfigError("no inputs given")
    rows: list = []
    vocabs: set = set()
    for path in inputs:
        data = Path(path).read_bytes()
        obj = None
        try:
            obj = json.loads(data)
        except (json.JSONDecodeError, UnicodeDecodeError):
            obj = None
        if isinstance(obj, dict) and "report_version" in obj:
            report_rows = _rows_from_report(obj)
            rows.extend(report_rows)
            vocabs.update(r.vocab_size for r in report_rows if r.vocab_size)
            continue
        try:
            row = _row_from_recorded_trace(path, baseline_m)
        except (LeashError, OSError) as e:
            row = TraceRow(trace_id=str(path), error=str(e))
        if row.vocab_size:
            vocabs.add(row.vocab_size)
        rows.append(row)
    warnings = []
    if len(vocabs) > 1:
        warnings.append(f"mixed vocabulary sizes in corpus: {sorted(vocabs)}")
    return build_report(rows, cfg=None, warnings=warnings)


def write_report(report: dict, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
