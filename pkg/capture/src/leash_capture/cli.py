"""Command-line capture runner.

Exit codes match the replay harness contract: 0 every prompt captured,
1 partial failure (some prompts errored), 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import sys

from leash import ConfigError, LeashError, load_config

from .errors import CaptureError, UnsupportedModelError
from .jobs import TRACE_KINDS, CaptureJob, load_prompts, run_job


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capture",
        description="capture per-step decoding traces under adaptive stopping",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="capture a prompt set end to end")
    p.add_argument("--model", default="demo",
                   help="model id (default: the built-in demo model)")
    p.add_argument("--dataset", required=True,
                   help="JSONL prompt set: one {id, question, gold?} per line")
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--vanilla", action="store_true",
                   help="disable plateau voting (fixed-length baseline)")
    p.add_argument("--trace-kind", choices=list(TRACE_KINDS), default="signal",
                   help="per-step record to write (default: signal)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config, **({"vanilla": True} if args.vanilla else {}))
    job = CaptureJob(
        model_id=args.model,
        prompts=load_prompts(args.dataset),
        stop_config=cfg,
        out_dir=args.out,
        trace_kind=args.trace_kind,
        seed=args.seed,
    )
    manifest = run_job(job)
    for entry in manifest["prompts"]:
        if "error" in entry:
            print(f"{entry['prompt_id']}: ERROR {entry['error']}")
        else:
            line = (f"{entry['prompt_id']}: {entry['halt_reason']} "
                    f"tau={entry['tau']} answer={entry['answer']!r}")
            if "match" in entry:
                line += f" match={entry['match']}"
            print(line)
    acc = manifest["accuracy_pct"]
    print(f"prompts: {manifest['n_prompts']}  failed: {manifest['n_failed']}")
    print(f"accuracy: {'n/a' if acc is None else f'{acc:.2f}%'}")
    print(f"manifest written to {job.out_dir / 'manifest.json'}")
    return 1 if manifest["n_failed"] else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _cmd_run(args)
    except (ConfigError, UnsupportedModelError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (LeashError, CaptureError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
