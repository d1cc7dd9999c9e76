"""Model backends that expose per-step next-token logits.

The capture loop only needs five things from a model: encode, decode, start
a stream from prompt ids, read the raw logits for the next position, and
append a chosen token. Anything that can do that plugs in via
:class:`ModelBackend`.

Two implementations ship here:

* :class:`TinyDemoBackend` — a dependency-free deterministic toy model whose
  logits come from a hashed context and sharpen as generation proceeds, so
  entropy decays and margins grow the way a converging rationale does;
* :class:`HFBackend` — a transformers causal LM. The default instantiates a
  small randomly initialized GPT-2 over a byte vocabulary, which exercises
  the full tensor path without needing downloaded weights.
"""

from __future__ import annotations

import zlib
from typing import Any, Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import UnsupportedModelError


@runtime_checkable
class ModelBackend(Protocol):
    model_id: str
    vocab_size: int
    eos_token_id: Optional[int]

    def encode(self, text: str) -> list: ...

    def decode(self, ids: Sequence[int]) -> str: ...

    def start(self, prompt_ids: Sequence[int]) -> Any: ...

    def next_logits(self, state: Any) -> np.ndarray: ...

    def append(self, state: Any, token_id: int) -> None: ...


class TinyDemoBackend:
    """Seeded toy model over the byte vocabulary plus one EOS id.

    Logits for each position are a fixed function of (seed, recent context):
    a hashed-context Gaussian direction scaled by a sharpness that grows with
    the number of generated tokens. The EOS logit drifts upward with stream
    length (capped), so greedy answer decoding terminates on its own.
    """

    vocab_size = 257
    eos_token_id = 256

    def __init__(self, seed: int = 0, model_id: str = "demo"):
        self.seed = int(seed)
        self.model_id = model_id

    def encode(self, text: str) -> list:
        return list(text.encode("utf-8"))

    def decode(self, ids: Sequence[int]) -> str:
        return bytes(i for i in ids if 0 <= i < 256).decode("utf-8", "replace")

    def start(self, prompt_ids: Sequence[int]) -> dict:
        return {"ids": list(prompt_ids), "n_gen": 0}

    def next_logits(self, state: dict) -> np.ndarray:
        ctx = state["ids"][-8:]
        key = zlib.crc32(
            self.seed.to_bytes(4, "little", signed=True)
            + np.asarray(ctx, dtype=np.uint16).tobytes()
        )
        rng = np.random.default_rng(key)
        base = rng.normal(0.0, 1.0, self.vocab_size)
        sharp = 0.6 + 0.08 * state["n_gen"]
        z = base * sharp
        z[self.eos_token_id] = base[self.eos_token_id] + min(
            0.6 * state["n_gen"] - 3.0, 2.5
        )
        return z

    def append(self, state: dict, token_id: int) -> None:
        state["ids"].append(int(token_id))
        state["n_gen"] += 1


class HFBackend:
    """transformers causal LM backend (per-step logits, no KV cache).

    ``tiny-random-gpt2`` builds a 2-layer byte-vocabulary GPT-2 with randomly
    initialized weights from a fixed torch seed: a real tensor path that runs
    offline. Other model ids are refused here since this environment cannot
    fetch pretrained weights.
    """

    def __init__(self, model_id: str = "tiny-random-gpt2", seed: int = 0):
        try:
            import torch
            from transformers import GPT2Config, GPT2LMHeadModel
        except ImportError as e:
            raise UnsupportedModelError(
                f"transformers backend unavailable: {e}"
            ) from e
        if model_id != "tiny-random-gpt2":
            raise UnsupportedModelError(
                f"cannot load {model_id!r}: no pretrained weights are "
                "available in this environment (offline); use "
                "'tiny-random-gpt2' or 'demo'"
            )
        self._torch = torch
        self.model_id = model_id
        self.vocab_size = 256
        self.eos_token_id = 0  # byte 0 never occurs in UTF-8 text
        config = GPT2Config(
            vocab_size=self.vocab_size,
            n_positions=1024,
            n_embd=64,
            n_layer=2,
            n_head=2,
            bos_token_id=self.eos_token_id,
            eos_token_id=self.eos_token_id,
        )
        torch.manual_seed(seed)
        self._model = GPT2LMHeadModel(config).eval()

    def encode(self, text: str) -> list:
        return list(text.encode("utf-8"))

    def decode(self, ids: Sequence[int]) -> str:
        return bytes(i for i in ids if 0 < i < 256).decode("utf-8", "replace")

    def start(self, prompt_ids: Sequence[int]) -> dict:
        return {"ids": list(prompt_ids)}

    def next_logits(self, state: dict) -> np.ndarray:
        torch = self._torch
        ids = torch.tensor([state["ids"]], dtype=torch.long)
        with torch.no_grad():
            out = self._model(input_ids=ids)
        if not hasattr(out, "logits"):
            raise UnsupportedModelError(
                f"{self.model_id!r} exposes no per-step logits"
            )
        return out.logits[0, -1].to(torch.float64).cpu().numpy()

    def append(self, state: dict, token_id: int) -> None:
        state["ids"].append(int(token_id))


def get_backend(model_id: str, seed: int = 0) -> ModelBackend:
    """Resolve a model id to a backend instance."""
    if model_id == "demo" or model_id.startswith("demo:"):
        return TinyDemoBackend(seed=seed, model_id=model_id)
    if model_id == "tiny-random-gpt2":
        return HFBackend(model_id=model_id, seed=seed)
    raise UnsupportedModelError(
        f"unknown model {model_id!r}; available: demo, tiny-random-gpt2"
    )
