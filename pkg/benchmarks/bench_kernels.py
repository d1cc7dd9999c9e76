"""Compare the compiled and pure-numpy scoring kernels on one workload.

Each backend runs in a child process because the kernel backend is fixed at
import time by the LEASH_KERNELS environment variable. The workload is the
hot replay path: sanitize a block of raw logits, then compute per-step
entropy / margin / peak probability.

Usage:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --steps 4096 --vocab 50000 --repeats 7
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def build_workload(steps: int, vocab: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    raw = rng.normal(0.0, 12.0, size=(steps, vocab))
    # sprinkle the junk values sanitization exists for
    raw[rng.random(raw.shape) < 0.001] = np.inf
    raw[rng.random(raw.shape) < 0.001] = np.nan
    return raw


def run_worker(args) -> None:
    from leash import kernel_backend, sanitize_batch, step_scores_batch

    raw = build_workload(args.steps, args.vocab, args.seed)

    def once() -> float:
        start = time.perf_counter()
        z = sanitize_batch(raw, band=80.0)
        step_scores_batch(z)
        return time.perf_counter() - start

    once()  # warmup; includes JIT compilation on the compiled backend
    times = [once() for _ in range(args.repeats)]
    best = min(times)
    print(json.dumps({
        "backend": kernel_backend(),
        "best_s": best,
        "mean_s": sum(times) / len(times),
        "steps_per_s": args.steps / best,
    }))


def run_backend(backend: str, args) -> dict:
    env = dict(os.environ, LEASH_KERNELS=backend)
    cmd = [
        sys.executable, os.path.abspath(__file__), "--worker",
        "--steps", str(args.steps), "--vocab", str(args.vocab),
        "--repeats", str(args.repeats), "--seed", str(args.seed),
    ]
    proc = subprocess.run(cmd, env=env, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"{backend} worker failed:\n{proc.stderr}")
    return json.loads(proc.stdout.splitlines()[-1])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=2048)
    parser.add_argument("--vocab", type=int, default=32000)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--backends", default="numba,numpy",
                        help="comma-separated backends to time")
    parser.add_argument("--worker", action="store_true",
                        help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    if args.worker:
        run_worker(args)
        return 0

    print(f"workload: {args.steps} steps x {args.vocab} vocab, "
          f"best of {args.repeats}")
    results = []
    for backend in args.backends.split(","):
        backend = backend.strip()
        res = run_backend(backend, args)
        results.append(res)
        print(f"  {res['backend']:>6}: best {res['best_s'] * 1e3:8.1f} ms   "
              f"mean {res['mean_s'] * 1e3:8.1f} ms   "
              f"{res['steps_per_s']:10.0f} steps/s")
    if len(results) == 2:
        ratio = max(r["best_s"] for r in results) / min(r["best_s"] for r in results)
        fastest = min(results, key=lambda r: r["best_s"])["backend"]
        print(f"  {fastest} is {ratio:.2f}x faster")
    return 0


if __name__ == "__main__":
    sys.exit(main())
