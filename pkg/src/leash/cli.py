"""Command-line front end: replay, synth, and analyze subcommands.

Exit codes are a stable CI contract: 0 all succeeded, 1 partial failure
(some traces errored), 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import harness, trace
from .errors import ConfigError, LeashError


def _add_replay(sub):
    p = sub.add_parser("replay", help="replay trace files through the stopper")
    p.add_argument("traces", nargs="+", help="trace files (.lsh or .sig.jsonl)")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--vanilla", action="store_true",
                   help="disable plateau voting (fixed-length baseline)")
    p.add_argument("--workers", type=int, default=min(8, os.cpu_count() or 1),
                   help="parallel replay workers (default: up to 8)")
    p.add_argument("--out", required=True, help="report JSON destination")


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a synthetic signal trace")
    p.add_argument("--kind", required=True,
                   choices=["converging", "plateau", "noisy", "saturating"])
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--vocab", type=int, default=32000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--initial-entropy", type=float, default=2.5)
    p.add_argument("--entropy-floor", type=float, default=0.8)
    p.add_argument("--decay-rate", type=float, default=0.02)
    p.add_argument("--noise-scale", type=float, default=None)
    p.add_argument("--margin-cap", type=float, default=2.0)
    p.add_argument("--sat-run", type=int, default=6, dest="sat_run_length")
    p.add_argument("--sat-gap", type=int, default=24)
    p.add_argument("--dt-per-step", type=float, default=None,
                   help="fabricate a constant per-step duration (seconds)")
    p.add_argument("--out", required=True, help="trace destination (.sig.jsonl)")


def _add_analyze(sub):
    p = sub.add_parser("analyze", help="aggregate reports and recorded traces")
    p.add_argument("inputs", nargs="+",
                   help="replay report JSON files or captured trace files")
    p.add_argument("--baseline-m", type=int, default=None,
                   help="baseline rationale length when traces do not record one")
    p.add_argument("--out", required=True, help="aggregate report destination")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leash",
        description="adaptive stopping replay, synthesis, and metrics harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_replay(sub)
    _add_synth(sub)
    _add_analyze(sub)
    return parser


def _print_aggregate(agg: dict) -> None:
    token = agg["mean_token_reduction_pct"]
    latency = agg["mean_latency_reduction_pct"]
    print(f"traces: {agg['n_traces']}  failed: {agg['n_failed']}")
    print(f"mean token reduction: "
          f"{'n/a' if token is None else f'{token:.2f}%'}")
    print(f"mean latency reduction (counterfactual): "
          f"{'n/a' if latency is None else f'{latency:.2f}%'}")
    if agg["halt_reasons"]:
        pairs = ", ".join(f"{k}={v}" for k, v in agg["halt_reasons"].items())
        print(f"halt reasons: {pairs}")


def _cmd_replay(args) -> int:
    cfg = harness.load_config(args.config, **({"vanilla": True} if args.vanilla else {}))
    report = harness.replay(args.traces, cfg, workers=max(1, args.workers))
    harness.write_report(report, args.out)
    for row in report["traces"]:
        if row["error"]:
            print(f"{row['trace_id']}: ERROR {row['error']}")
        else:
            print(f"{row['trace_id']}: {row['reason']} tau={row['tau']} "
                  f"token_reduction={row['token_reduction_pct']:.2f}%")
    _print_aggregate(report["aggregate"])
    print(f"report written to {args.out}")
    return 1 if report["aggregate"]["n_failed"] else 0


def _cmd_synth(args) -> int:
    spec = trace.SynthSpec(
        kind=args.kind,
        steps=args.steps,
        vocab=args.vocab,
        seed=args.seed,
        initial_entropy=args.initial_entropy,
        entropy_floor=args.entropy_floor,
        decay_rate=args.decay_rate,
        noise_scale=args.noise_scale,
        margin_cap=args.margin_cap,
        sat_run_length=args.sat_run_length,
        sat_gap=args.sat_gap,
        dt_per_step=args.dt_per_step,
    )
    generated = trace.synthesize(spec)
    n_bytes = trace.write_trace(generated, args.out)
    print(f"{args.kind} trace: {generated.n_steps} steps, vocab {args.vocab}, "
          f"seed {args.seed} -> {args.out} ({n_bytes} bytes)")
    return 0


def _cmd_analyze(args) -> int:
    report = harness.analyze(args.inputs, baseline_m=args.baseline_m)
    harness.write_report(report, args.out)
    for warning in report.get("warnings", []):
        print(f"warning: {warning}", file=sys.stderr)
    _print_aggregate(report["aggregate"])
    print(f"report written to {args.out}")
    return 1 if report["aggregate"]["n_failed"] else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"replay": _cmd_replay, "synth": _cmd_synth, "analyze": _cmd_analyze}
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except LeashError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
