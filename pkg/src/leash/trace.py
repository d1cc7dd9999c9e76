"""Trace serialization and synthetic trace generation.

Two on-disk formats exist, dispatched by content when reading:

* full-logit (``.lsh``): magic ``LSH1``, a fixed little-endian header
  (format_version u16, vocab u32, step count u32, metadata length u32),
  UTF-8 JSON metadata, then ``steps x vocab`` little-endian float32 logits
  stored pre-sanitization;
* signal (``.sig.jsonl``): one JSON object per line, a metadata header line
  followed by step records with keys ``t``, ``H``, ``M``, ``p_max`` and
  optional ``token_id`` / ``dt_seconds``.

Full-logit traces at realistic vocabulary sizes are large; signal traces are
a few KB and carry everything the stopper needs. Optional per-step wall-clock
deltas and token ids ride in the metadata for the binary format.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import signals as signals_mod
from .errors import (
    BadMagicError,
    ConfigError,
    MalformedTraceError,
    NonContiguousStepsError,
    SignalBoundsError,
    TruncatedTraceError,
    VocabMismatchError,
)
from .signals import StepSignals
from .stopper import StopConfig

MAGIC = b"LSH1"
FORMAT_VERSION = 1
KIND_LOGITS = "full-logit"
KIND_SIGNAL = "signal"

_HEADER = struct.Struct("<HIII")  # format_version, vocab, steps, metadata bytes
_META_CORE = ("format_version", "kind", "vocab_size", "model_id", "prompt_id", "config_snapshot")
_STEP_KEYS = {"t", "H", "M", "p_max", "token_id", "dt_seconds"}
_STEP_REQUIRED = ("t", "H", "M", "p_max")


@dataclass
class TraceMeta:
    vocab_size: int
    model_id: str = ""
    prompt_id: str = ""
    config_snapshot: Optional[dict] = None
    kind: str = KIND_SIGNAL
    format_version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.vocab_size < 2:
            raise MalformedTraceError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.kind not in (KIND_LOGITS, KIND_SIGNAL):
            raise MalformedTraceError(f"unknown trace kind {self.kind!r}")
        clash = set(self.extra) & set(_META_CORE)
        if clash:
            raise MalformedTraceError(f"extra metadata shadows core keys: {sorted(clash)}")

    def to_json_dict(self) -> dict:
        out = {
            "format_version": self.format_version,
            "kind": self.kind,
            "vocab_size": self.vocab_size,
            "model_id": self.model_id,
            "prompt_id": self.prompt_id,
            "config_snapshot": self.config_snapshot,
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_json_dict(cls, obj: dict) -> "TraceMeta":
        missing = [k for k in _META_CORE[:-1] if k not in obj]
        if missing:
            raise MalformedTraceError(f"metadata missing keys: {missing}")
        extra = {k: v for k, v in obj.items() if k not in _META_CORE}
        return cls(
            vocab_size=obj["vocab_size"],
            model_id=obj["model_id"],
            prompt_id=obj["prompt_id"],
            config_snapshot=obj.get("config_snapshot"),
            kind=obj["kind"],
            format_version=obj["format_version"],
            extra=extra,
        )


@dataclass(frozen=True)
class SignalStep:
    """One serialized step of a signal trace (saturation is replay-time)."""

    t: int
    H: float
    M: float
    p_max: float
    token_id: Optional[int] = None
    dt_seconds: Optional[float] = None

    def to_signals(self, vocab_size: int, cfg: StopConfig) -> StepSignals:
        raw = StepSignals(
            t=self.t, H=self.H, M=self.M, p_max=self.p_max,
            saturated=False, token_id=self.token_id, dt=self.dt_seconds,
        )
        return signals_mod.validate(raw, vocab_size, cfg)


@dataclass
class Trace:
    """In-memory trace: metadata plus signal steps or a raw logit matrix."""

    meta: TraceMeta
    steps: Optional[list] = None       # list[SignalStep] for signal kind
    logits: Optional[np.ndarray] = None  # (steps, vocab) float32, pre-sanitization

    def __post_init__(self):
        if self.meta.kind == KIND_SIGNAL:
            if self.steps is None or self.logits is not None:
                raise MalformedTraceError("signal trace must carry steps only")
            for i, step in enumerate(self.steps, start=1):
                if step.t != i:
                    raise NonContiguousStepsError(
                        f"step records must run 1..n; position {i} has t={step.t}"
                    )
        else:
            if self.logits is None or self.steps is not None:
                raise MalformedTraceError("full-logit trace must carry logits only")
            z = np.asarray(self.logits)
            if z.ndim != 2 or z.shape[1] != self.meta.vocab_size:
                raise VocabMismatchError(
                    f"logit matrix shape {z.shape} does not match vocab "
                    f"{self.meta.vocab_size}"
                )
            self.logits = np.ascontiguousarray(z, dtype=np.float32)

    @property
    def n_steps(self) -> int:
        if self.meta.kind == KIND_SIGNAL:
            return len(self.steps)
        return int(self.logits.shape[0])

    def dt_list(self) -> Optional[list]:
        """Per-step durations when every step carries one, else None."""
        if self.meta.kind == KIND_SIGNAL:
            dts = [s.dt_seconds for s in self.steps]
        else:
            dts = self.meta.extra.get("dt_seconds")
            if dts is None:
                return None
            if len(dts) != self.n_steps:
                raise MalformedTraceError(
                    f"metadata dt_seconds has {len(dts)} entries for "
                    f"{self.n_steps} steps"
                )
        if any(d is None for d in dts):
            return None
        return list(dts)


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"))


def write_trace(trace: Trace, destination: Union[str, Path]) -> int:
    """Serialize a trace to its on-disk format; returns bytes written."""
    path = Path(destination)
    if trace.meta.kind == KIND_SIGNAL:
        lines = [_dumps(trace.meta.to_json_dict())]
        for step in trace.steps:
            rec = {"t": step.t, "H": step.H, "M": step.M, "p_max": step.p_max}
            if step.token_id is not None:
                rec["token_id"] = step.token_id
            if step.dt_seconds is not None:
                rec["dt_seconds"] = step.dt_seconds
            lines.append(_dumps(rec))
        data = ("\n".join(lines) + "\n").encode("utf-8")
    else:
        meta_bytes = _dumps(trace.meta.to_json_dict()).encode("utf-8")
        n = trace.n_steps
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(_HEADER.pack(trace.meta.format_version, trace.meta.vocab_size,
                               n, len(meta_bytes)))
        buf.write(meta_bytes)
        buf.write(np.ascontiguousarray(trace.logits, dtype="<f4").tobytes())
        data = buf.getvalue()
    path.write_bytes(data)
    return len(data)


def _read_binary(data: bytes) -> Trace:
    fixed = len(MAGIC) + _HEADER.size
    if len(data) < fixed:
        raise TruncatedTraceError(
            f"header needs {fixed} bytes, file has {len(data)}"
        )
    version, vocab, n_steps, meta_len = _HEADER.unpack_from(data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise MalformedTraceError(f"unsupported format version {version}")
    body = data[fixed:]
    if len(body) < meta_len:
        raise TruncatedTraceError(
            f"metadata needs {meta_len} bytes, only {len(body)} remain"
        )
    try:
        meta_obj = json.loads(body[:meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedTraceError(f"metadata is not valid JSON: {e}") from e
    meta = TraceMeta.from_json_dict(meta_obj)
    if meta.kind != KIND_LOGITS:
        raise MalformedTraceError(f"binary container holds kind {meta.kind!r}")
    if meta.vocab_size != vocab:
        raise VocabMismatchError(
            f"header vocab {vocab} != metadata vocab_size {meta.vocab_size}"
        )
    payload = body[meta_len:]
    expected = n_steps * vocab * 4
    if len(payload) != expected:
        raise TruncatedTraceError(
            f"payload should be {expected} bytes ({n_steps} steps x {vocab} "
            f"floats), found {len(payload)}"
        )
    logits = np.frombuffer(payload, dtype="<f4").reshape(n_steps, vocab).copy()
    return Trace(meta=meta, logits=logits)


def _read_signal(data: bytes) -> Trace:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise MalformedTraceError(f"signal trace is not UTF-8: {e}") from e
    lines = text.splitlines()
    if not lines:
        raise TruncatedTraceError("empty signal trace")
    try:
        meta_obj = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise MalformedTraceError(f"line 1: metadata is not valid JSON: {e}") from e
    meta = TraceMeta.from_json_dict(meta_obj)
    if meta.kind != KIND_SIGNAL:
        raise MalformedTraceError(f"JSONL container holds kind {meta.kind!r}")
    default_cfg = StopConfig()
    steps = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedTraceError(f"line {lineno}: not valid JSON: {e}") from e
        unknown = set(rec) - _STEP_KEYS
        if unknown:
            raise MalformedTraceError(
                f"line {lineno}: unknown step keys {sorted(unknown)}"
            )
        missing = [k for k in _STEP_REQUIRED if k not in rec]
        if missing:
            raise MalformedTraceError(f"line {lineno}: missing keys {missing}")
        step = SignalStep(
            t=rec["t"], H=rec["H"], M=rec["M"], p_max=rec["p_max"],
            token_id=rec.get("token_id"), dt_seconds=rec.get("dt_seconds"),
        )
        if step.t != len(steps) + 1:
            raise NonContiguousStepsError(
                f"line {lineno}: expected t={len(steps) + 1}, got t={step.t}"
            )
        try:
            step.to_signals(meta.vocab_size, default_cfg)
        except SignalBoundsError as e:
            raise SignalBoundsError(f"line {lineno}: {e}") from e
        steps.append(step)
    return Trace(meta=meta, steps=steps)


def read_trace(source: Union[str, Path, bytes]) -> Trace:
    """Parse either trace format, validating structure and signal bounds."""
    data = source if isinstance(source, bytes) else Path(source).read_bytes()
    if data.startswith(MAGIC):
        return _read_binary(data)
    if data[:1] == b"{":
        return _read_signal(data)
    raise BadMagicError(
        f"not a trace: expected magic {MAGIC!r} or a JSON metadata line, "
        f"got {data[:4]!r}"
    )


_KINDS = ("converging", "plateau", "noisy", "saturating")
_DEFAULT_NOISE = {"converging": 0.003, "plateau": 0.001, "noisy": 0.02, "saturating": 0.003}


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a seeded synthetic signal trace in one convergence regime.

    ``converging`` decays entropy toward a floor while the margin rises and
    flattens (plateau halt territory); ``plateau`` is flat from step one, so
    the entropy-drop gate keeps the stream running to the cap; ``noisy`` is a
    plateau with Gaussian jitter sized against the vote slacks; ``saturating``
    interleaves near-deterministic high-peak runs into a converging base.
    """

    kind: str
    steps: int
    vocab: int = 32000
    seed: int = 0
    initial_entropy: float = 2.5
    entropy_floor: float = 0.8
    decay_rate: float = 0.02
    noise_scale: Optional[float] = None
    margin_cap: float = 2.0
    sat_run_length: int = 6
    sat_gap: int = 24
    dt_per_step: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.vocab < 2:
            raise ConfigError(f"vocab must be >= 2, got {self.vocab}")
        rates = {
            "initial_entropy": self.initial_entropy,
            "entropy_floor": self.entropy_floor,
            "decay_rate": self.decay_rate,
            "margin_cap": self.margin_cap,
        }
        for name, value in rates.items():
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")
        if self.entropy_floor > self.initial_entropy:
            raise ConfigError("entropy_floor must not exceed initial_entropy")
        if self.initial_entropy > math.log(self.vocab):
            raise ConfigError(
                f"initial_entropy {self.initial_entropy} exceeds log vocab "
                f"{math.log(self.vocab):.4f}"
            )
        if self.noise_scale is not None and (
            not math.isfinite(self.noise_scale) or self.noise_scale < 0
        ):
            raise ConfigError(f"noise_scale must be finite and >= 0")
        if self.sat_run_length < 1 or self.sat_gap <= self.sat_run_length:
            raise ConfigError("need sat_gap > sat_run_length >= 1")
        if self.dt_per_step is not None and not (
            math.isfinite(self.dt_per_step) and self.dt_per_step > 0
        ):
            raise ConfigError("dt_per_step must be positive and finite")

    @property
    def noise(self) -> float:
        return _DEFAULT_NOISE[self.kind] if self.noise_scale is None else self.noise_scale


def _saturated_mask(spec: SynthSpec, t: np.ndarray) -> np.ndarray:
    offset = t - spec.sat_gap - 1
    return (t > spec.sat_gap) & (offset % spec.sat_gap < spec.sat_run_length)


def synthesize(spec: SynthSpec) -> Trace:
    """Generate a deterministic signal trace for the spec's regime."""
    rng = np.random.default_rng(spec.seed)
    t = np.arange(1, spec.steps + 1, dtype=np.float64)
    log_v = math.log(spec.vocab)
    sigma = spec.noise

    if spec.kind in ("converging", "saturating"):
        decay = np.exp(-spec.decay_rate * t)
        h = spec.entropy_floor + (spec.initial_entropy - spec.entropy_floor) * decay
        m = spec.margin_cap * (1.0 - decay)
        p = 0.3 + 0.6 * (1.0 - decay)
    else:  # plateau, noisy
        h = np.full(spec.steps, spec.initial_entropy)
        m = np.full(spec.steps, 0.25 * spec.margin_cap)
        p = np.full(spec.steps, 0.5)

    h = h + rng.normal(0.0, sigma, spec.steps)
    m = m + rng.normal(0.0, sigma, spec.steps)
    p = p + rng.normal(0.0, 0.5 * sigma, spec.steps)
    p = np.clip(p, 1e-6, 0.95)

    if spec.kind == "saturating":
        run = _saturated_mask(spec, np.arange(1, spec.steps + 1))
        h[run] = 0.05 + np.abs(rng.normal(0.0, sigma, int(run.sum())))
        m[run] = 6.0 + rng.normal(0.0, sigma, int(run.sum()))
        p[run] = 0.997

    h = np.clip(h, 0.0, log_v)
    m = np.maximum(m, 0.0)

    steps = [
        SignalStep(
            t=i + 1,
            H=float(h[i]),
            M=float(m[i]),
            p_max=float(p[i]),
            dt_seconds=spec.dt_per_step,
        )
        for i in range(spec.steps)
    ]
    extra = {"synth": asdict(spec)}
    if spec.dt_per_step is not None:
        extra["dt_fabricated"] = True
    meta = TraceMeta(
        vocab_size=spec.vocab,
        model_id="synthetic",
        prompt_id=f"{spec.kind}-seed{spec.seed}",
        config_snapshot=None,
        kind=KIND_SIGNAL,
        extra=extra,
    )
    return Trace(meta=meta, steps=steps)


def synthesize_logits(spec: SynthSpec, inject_nonfinite: bool = False) -> Trace:
    """Generate a full-logit trace whose signal trajectory mirrors the regime.

    A fixed random direction is scaled by a per-step sharpness schedule, so
    entropy falls and the margin grows as sharpness rises. Fixture generator
    for cross-format tests and kernel benchmarks; logits are pre-sanitization
    float32 and may carry non-finite entries when requested.
    """
    rng = np.random.default_rng(spec.seed)
    direction = rng.normal(0.0, 1.0, spec.vocab)
    t = np.arange(1, spec.steps + 1, dtype=np.float64)
    decay = np.exp(-spec.decay_rate * t)
    if spec.kind in ("converging", "saturating"):
        beta = 0.5 + 2.5 * (1.0 - decay)
    else:
        beta = np.full(spec.steps, 0.8)
    z = beta[:, None] * direction[None, :]
    z += rng.normal(0.0, 10.0 * spec.noise, z.shape)
    if spec.kind == "saturating":
        run = _saturated_mask(spec, np.arange(1, spec.steps + 1))
        z[run, int(np.argmax(direction))] += 30.0
    if inject_nonfinite:
        marks = np.arange(0, spec.steps, 37)
        z[marks, 0] = np.inf
        z[marks, 1] = -np.inf
        z[marks, 2 % spec.vocab] = np.nan
    meta = TraceMeta(
        vocab_size=spec.vocab,
        model_id="synthetic",
        prompt_id=f"{spec.kind}-logits-seed{spec.seed}",
        config_snapshot=None,
        kind=KIND_LOGITS,
        extra={"synth": asdict(spec)},
    )
    return Trace(meta=meta, logits=z.astype(np.float32))
