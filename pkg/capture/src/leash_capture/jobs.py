"""Two-phase capture: sampled rationale with adaptive stopping, then a
greedy answer, with per-step traces written in the replay formats.

Phase one streams tokens from the model while feeding each step's signals to
the stopper; EOS is suppressed in the sampler only, so recorded logits stay
exactly as the model produced them. Phase two issues a second prompt
carrying the rationale and decodes the answer greedily with EOS enabled.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from leash import (
    ConfigError,
    LeashError,
    SignalStep,
    StopConfig,
    Stopper,
    Trace,
    TraceMeta,
    extract,
    write_trace,
)

from .backends import ModelBackend, get_backend
from .errors import CaptureError
from .scoring import answers_match, score

TRACE_KINDS = ("signal", "full-logit")

DEFAULT_RATIONALE_TEMPLATE = (
    "Question: {question}\nThink step by step.\nReasoning:"
)
DEFAULT_ANSWER_TEMPLATE = (
    "Question: {question}\nReasoning: {rationale}\nThe final answer is:"
)


@dataclass(frozen=True)
class Prompt:
    id: str
    question: str
    gold: str = ""


@dataclass
class CaptureJob:
    """One batch of prompts captured under a single model and stop config.

    The answer phase is greedy by contract: ``temperature_answer`` exists in
    the manifest for the record but must be 0.
    """

    model_id: str
    prompts: list
    stop_config: StopConfig
    out_dir: Union[str, Path]
    trace_kind: str = "signal"
    top_p: float = 0.95
    temperature_rationale: float = 0.7
    temperature_answer: float = 0.0
    seed: int = 0
    answer_max_tokens: int = 24
    rationale_template: str = DEFAULT_RATIONALE_TEMPLATE
    answer_template: str = DEFAULT_ANSWER_TEMPLATE

    def __post_init__(self):
        if self.trace_kind not in TRACE_KINDS:
            raise ConfigError(
                f"trace_kind must be one of {TRACE_KINDS}, got {self.trace_kind!r}"
            )
        if self.temperature_answer != 0.0:
            raise ConfigError("the answer phase is greedy: temperature_answer must be 0")
        if not (0.0 < self.top_p <= 1.0):
            raise ConfigError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.temperature_rationale <= 0:
            raise ConfigError("temperature_rationale must be > 0")
        if self.answer_max_tokens < 1:
            raise ConfigError("answer_max_tokens must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if not self.prompts:
            raise ConfigError("prompt set is empty")
        ids = [p.id for p in self.prompts]
        if len(set(ids)) != len(ids):
            raise ConfigError("prompt ids must be unique")
        self.out_dir = Path(self.out_dir)


def sample_token(
    rng: np.random.Generator,
    logits: np.ndarray,
    temperature: float,
    top_p: float,
    suppress: Optional[int] = None,
) -> int:
    """Nucleus sampling; temperature 0 means argmax. ``suppress`` masks one
    token id (the rationale phase's EOS) inside the sampler only."""
    z = np.array(logits, dtype=np.float64, copy=True)
    if suppress is not None:
        z[suppress] = -np.inf
    if temperature == 0.0:
        return int(np.argmax(z))
    z /= temperature
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    order = np.argsort(p)[::-1]
    cutoff = int(np.searchsorted(np.cumsum(p[order]), top_p)) + 1
    keep = order[:cutoff]
    weights = p[keep] / p[keep].sum()
    return int(rng.choice(keep, p=weights))


@dataclass
class RationaleResult:
    trace_path: Path
    text: str
    tau: int
    reason: str
    n_tokens: int


def run_rationale(
    job: CaptureJob,
    backend: ModelBackend,
    prompt: Prompt,
    rng: np.random.Generator,
) -> RationaleResult:
    """Stream the rationale under the stopper; write the step trace.

    Records raw pre-sanitization logits (full-logit kind) or extracted
    signals (signal kind) with token ids and wall-clock step durations. The
    stopper is consulted after every step and generation stops at its halt.
    """
    cfg = job.stop_config
    state = backend.start(
        backend.encode(job.rationale_template.format(question=prompt.question))
    )
    stopper = Stopper(cfg)
    sig_steps: list = []
    logit_rows: list = []
    token_ids: list = []
    dts: list = []
    prev = time.perf_counter()
    t = 0
    while True:
        t += 1
        raw = np.asarray(backend.next_logits(state), dtype=np.float64)
        if raw.ndim != 1 or raw.shape[0] != backend.vocab_size:
            raise CaptureError(
                f"{backend.model_id!r} returned logits of shape {raw.shape}, "
                f"expected ({backend.vocab_size},)"
            )
        token = sample_token(rng, raw, job.temperature_rationale, job.top_p,
                             suppress=backend.eos_token_id)
        backend.append(state, token)
        now = time.perf_counter()
        dts.append(now - prev)
        prev = now
        token_ids.append(token)
        signals = extract(raw, t, cfg)
        if job.trace_kind == "signal":
            sig_steps.append(SignalStep(
                t=t, H=signals.H, M=signals.M, p_max=signals.p_max,
                token_id=token, dt_seconds=dts[-1],
            ))
        else:
            logit_rows.append(raw.astype(np.float32))
        decision = stopper.feed(signals)
        if decision.is_halt:
            break

    extra = {"tau": decision.tau, "halt_reason": decision.reason.value}
    if job.trace_kind == "signal":
        trace = Trace(
            meta=TraceMeta(
                vocab_size=backend.vocab_size, model_id=backend.model_id,
                prompt_id=prompt.id, config_snapshot=cfg.as_dict(),
                kind="signal", extra=extra,
            ),
            steps=sig_steps,
        )
        path = job.out_dir / f"{prompt.id}.sig.jsonl"
    else:
        extra["token_ids"] = token_ids
        extra["dt_seconds"] = dts
        trace = Trace(
            meta=TraceMeta(
                vocab_size=backend.vocab_size, model_id=backend.model_id,
                prompt_id=prompt.id, config_snapshot=cfg.as_dict(),
                kind="full-logit", extra=extra,
            ),
            logits=np.stack(logit_rows),
        )
        path = job.out_dir / f"{prompt.id}.lsh"
    write_trace(trace, path)
    return RationaleResult(
        trace_path=path,
        text=backend.decode(token_ids),
        tau=decision.tau,
        reason=decision.reason.value,
        n_tokens=len(token_ids),
    )


def run_answer(
    job: CaptureJob,
    backend: ModelBackend,
    prompt: Prompt,
    rationale: str,
) -> str:
    """Greedy answer decode conditioned on the rationale, EOS enabled."""
    state = backend.start(backend.encode(
        job.answer_template.format(question=prompt.question, rationale=rationale)
    ))
    out: list = []
    for _ in range(job.answer_max_tokens):
        raw = np.asarray(backend.next_logits(state), dtype=np.float64)
        token = int(np.argmax(raw))
        if backend.eos_token_id is not None and token == backend.eos_token_id:
            break
        backend.append(state, token)
        out.append(token)
    return backend.decode(out).strip()


def run_job(job: CaptureJob, backend: Optional[ModelBackend] = None) -> dict:
    """Capture every prompt; per-prompt failures become manifest entries."""
    if backend is None:
        backend = get_backend(job.model_id, job.seed)
    job.out_dir.mkdir(parents=True, exist_ok=True)
    entries: list = []
    answers: list = []
    golds: list = []
    for idx, prompt in enumerate(job.prompts):
        rng = np.random.default_rng(np.random.SeedSequence([job.seed, idx]))
        try:
            rationale = run_rationale(job, backend, prompt, rng)
            answer = run_answer(job, backend, prompt, rationale.text)
        except (CaptureError, LeashError, MemoryError, RuntimeError, OSError) as e:
            entries.append({"prompt_id": prompt.id, "error": str(e)})
            continue
        entry = {
            "prompt_id": prompt.id,
            "trace": rationale.trace_path.name,
            "tau": rationale.tau,
            "halt_reason": rationale.reason,
            "rationale_tokens": rationale.n_tokens,
            "answer": answer,
        }
        if prompt.gold:
            entry["gold"] = prompt.gold
            entry["match"] = answers_match(answer, prompt.gold)
            answers.append(answer)
            golds.append(prompt.gold)
        entries.append(entry)

    n_failed = sum(1 for e in entries if "error" in e)
    manifest = {
        "model_id": backend.model_id,
        "trace_kind": job.trace_kind,
        "seed": job.seed,
        "sampling": {
            "top_p": job.top_p,
            "temperature_rationale": job.temperature_rationale,
            "temperature_answer": job.temperature_answer,
        },
        "config": job.stop_config.as_dict(),
        "n_prompts": len(job.prompts),
        "n_failed": n_failed,
        "accuracy_pct": score(answers, golds) if golds else None,
        "prompts": entries,
    }
    manifest_path = job.out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n",
                             encoding="utf-8")
    return manifest


def load_prompts(path: Union[str, Path]) -> list:
    """Read a JSONL prompt set: one {id, question, gold?} object per line."""
    prompts: list = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ConfigError(f"prompt line {lineno}: not valid JSON: {e}") from e
        unknown = set(obj) - {"id", "question", "gold"}
        if unknown:
            raise ConfigError(
                f"prompt line {lineno}: unknown keys {sorted(unknown)}"
            )
        if "id" not in obj or "question" not in obj:
            raise ConfigError(f"prompt line {lineno}: need id and question")
        prompts.append(Prompt(id=str(obj["id"]), question=obj["question"],
                              gold=str(obj.get("gold", ""))))
    return prompts
