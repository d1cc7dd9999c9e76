"""Replay harness: config files, metrics, aggregation, and the CLI.

Metric fixtures are handcrafted flat-signal traces whose halt step is forced
by the minimum-length bound, so token reduction percentages are exact by
construction (e.g. halting at 208 of 320 gives 35%).
"""

import json
import subprocess
import sys

import pytest

from leash import (
    ConfigError,
    HaltReason,
    SignalStep,
    StopConfig,
    SynthSpec,
    Trace,
    TraceMeta,
    analyze,
    extract,
    load_config,
    read_trace,
    replay,
    replay_trace,
    run_stopper,
    synthesize,
    synthesize_logits,
    write_trace,
)
from leash.cli import main as cli_main
from leash.harness import parse_config_text, write_report

VOCAB = 100


def flat_trace(n=320, H=1.0, dt=None, extra=None, vocab=VOCAB):
    steps = [
        SignalStep(t=t, H=H, M=0.5, p_max=0.5, dt_seconds=dt)
        for t in range(1, n + 1)
    ]
    meta = TraceMeta(vocab_size=vocab, model_id="fixture", prompt_id=f"flat{n}",
                     extra=dict(extra or {}))
    return Trace(meta=meta, steps=steps)


def forced_halt_cfg(at, M=320):
    # flat signals pass every vote; zero gamma disarms the entropy gate, so
    # the halt lands exactly on the minimum-length bound
    return StopConfig(k=4, L=3, m=at, w=0, M=M, gamma=0.0)


class TestConfigParsing:
    def test_typed_values_and_comments(self):
        text = """
        # tuning block
        k = 4
        L = 3          # vote span
        eps_H = 0.01
        vanilla = true
        """
        values = parse_config_text(text)
        assert values == {"k": 4, "L": 3, "eps_H": 0.01, "vanilla": True}

    @pytest.mark.parametrize("raw,expected", [
        ("true", True), ("True", True), ("1", True),
        ("false", False), ("FALSE", False), ("0", False),
    ])
    def test_bool_spellings(self, raw, expected):
        assert parse_config_text(f"vanilla = {raw}")["vanilla"] is expected

    def test_unknown_key_names_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("k = 4\nwindow = 9\n")

    def test_bad_value_names_line(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("k = four")
        with pytest.raises(ConfigError):
            parse_config_text("vanilla = yes")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("k 4")

    def test_load_defaults_when_no_file(self):
        assert load_config(None) == StopConfig()

    def test_overrides_beat_file(self, tmp_path):
        path = tmp_path / "cfg"
        path.write_text("vanilla = false\nM = 100\n")
        cfg = load_config(path, vanilla=True)
        assert cfg.vanilla is True and cfg.M == 100

    def test_file_values_applied(self, tmp_path):
        path = tmp_path / "cfg"
        path.write_text("k = 4\nL = 3\ngamma = 0.0\nm = 10\nw = 0\nM = 50\n")
        cfg = load_config(path)
        assert (cfg.k, cfg.L, cfg.gamma, cfg.m, cfg.M) == (4, 3, 0.0, 10, 50)


class TestRunStopper:
    def test_signal_trace_consumes_up_to_halt(self):
        tr = synthesize(SynthSpec(kind="converging", steps=320, vocab=32000, seed=7))
        decision, consumed = run_stopper(tr, StopConfig())
        assert decision.tau == 104 and consumed == 104

    def test_exhausted_trace_returns_continue(self):
        tr = synthesize(SynthSpec(kind="converging", steps=50, vocab=32000, seed=7))
        decision, consumed = run_stopper(tr, StopConfig())
        assert not decision.is_halt and consumed == 50

    @pytest.mark.parametrize("cap", [64, 65, 127])
    def test_full_logit_halt_at_chunk_boundaries(self, cap):
        # the logit path scores in blocks of 64; halting must not overfeed
        spec = SynthSpec(kind="plateau", steps=200, vocab=32, seed=2,
                         initial_entropy=1.5)
        tr = synthesize_logits(spec)
        cfg = StopConfig(k=4, L=3, m=0, w=0, M=cap, vanilla=True)
        decision, consumed = run_stopper(tr, cfg)
        assert decision.tau == cap and consumed == cap

    def test_logit_and_signal_forms_agree(self, tmp_path):
        cfg = StopConfig(k=4, L=3, m=16, w=4, M=160, gamma=0.05)
        spec = SynthSpec(kind="converging", steps=160, vocab=64, seed=11)
        full = synthesize_logits(spec)
        sigs = [
            extract(full.logits[i], i + 1, cfg)
            for i in range(full.n_steps)
        ]
        derived = Trace(
            meta=TraceMeta(vocab_size=64, model_id="fixture", prompt_id="mirror"),
            steps=[SignalStep(t=s.t, H=s.H, M=s.M, p_max=s.p_max) for s in sigs],
        )
        pf, ps = tmp_path / "full.lsh", tmp_path / "mirror.sig.jsonl"
        write_trace(full, pf)
        write_trace(derived, ps)
        df, _ = run_stopper(read_trace(pf), cfg)
        ds, _ = run_stopper(read_trace(ps), cfg)
        assert df == ds and df.is_halt


class TestMetrics:
    def test_forced_208_of_320_is_35_percent(self, tmp_path):
        path = tmp_path / "a.sig.jsonl"
        write_trace(flat_trace(), path)
        row = replay_trace(path, forced_halt_cfg(208))
        assert row.error is None
        assert row.tau == 208 and row.reason == "plateau_vote"
        assert row.baseline_tokens == 320 and row.leash_tokens == 208
        assert row.token_reduction_pct == pytest.approx(35.0)

    def test_vanilla_reduction_is_zero(self, tmp_path):
        path = tmp_path / "a.sig.jsonl"
        write_trace(flat_trace(), path)
        row = replay_trace(path, StopConfig(vanilla=True))
        assert row.tau == 320
        assert row.token_reduction_pct == pytest.approx(0.0)

    def test_answer_tokens_enter_both_sides(self, tmp_path):
        path = tmp_path / "a.sig.jsonl"
        write_trace(flat_trace(extra={"answer_tokens": 10}), path)
        row = replay_trace(path, forced_halt_cfg(208))
        assert row.baseline_tokens == 330 and row.leash_tokens == 218
        assert row.token_reduction_pct == pytest.approx(100 * (1 - 218 / 330))

    def test_bad_answer_tokens_becomes_error_row(self, tmp_path):
        path = tmp_path / "a.sig.jsonl"
        write_trace(flat_trace(extra={"answer_tokens": -3}), path)
        row = replay_trace(path, forced_halt_cfg(208))
        assert row.error is not None and "answer_tokens" in row.error

    def test_uniform_dt_latency_matches_token_reduction(self, tmp_path):
        path = tmp_path / "a.sig.jsonl"
        write_trace(flat_trace(dt=0.05), path)
        row = replay_trace(path, forced_halt_cfg(224))
        assert row.token_reduction_pct == pytest.approx(30.0)
        assert row.latency_leash_s == pytest.approx(224 * 0.05)
        assert row.latency_baseline_s == pytest.approx(320 * 0.05)
        assert row.latency_reduction_pct == pytest.approx(30.0, rel=1e-9)

    def test_no_dt_means_no_latency_fields(self, tmp_path):
        path = tmp_path / "a.sig.jsonl"
        write_trace(flat_trace(), path)
        row = replay_trace(path, forced_halt_cfg(224))
        assert row.latency_leash_s is None
        assert row.latency_reduction_pct is None

    def test_missing_file_is_error_row(self):
        row = replay_trace("no/such/trace.sig.jsonl", StopConfig())
        assert row.error is not None and row.tau is None

    def test_unhalted_trace_is_error_row(self, tmp_path):
        path = tmp_path / "short.sig.jsonl"
        write_trace(flat_trace(n=50), path)
        row = replay_trace(path, StopConfig())
        assert row.error is not None and "no stopping decision" in row.error


class TestReplayReport:
    def _corpus(self, tmp_path):
        paths = []
        for name, at in (("a", 224), ("b", 192)):
            path = tmp_path / f"{name}.sig.jsonl"
            write_trace(flat_trace(), path)
            paths.append(str(path))
        return paths

    def test_mean_is_average_of_per_trace_ratios(self, tmp_path):
        p1 = tmp_path / "a.sig.jsonl"
        p2 = tmp_path / "b.sig.jsonl"
        write_trace(flat_trace(), p1)
        write_trace(flat_trace(), p2)
        # same corpus under two bounds: 30% and 40% traces average to 35%
        r1 = replay([str(p1)], forced_halt_cfg(224))
        r2 = replay([str(p2)], forced_halt_cfg(192))
        rows = r1["traces"] + r2["traces"]
        vals = [r["token_reduction_pct"] for r in rows]
        assert sum(vals) / len(vals) == pytest.approx(35.0)

    def test_report_shape_and_ordering(self, tmp_path):
        paths = self._corpus(tmp_path)
        report = replay(list(reversed(paths)), forced_halt_cfg(208))
        assert report["report_version"] == 1
        assert report["config"]["m"] == 208
        ids = [r["trace_id"] for r in report["traces"]]
        assert ids == sorted(ids)
        agg = report["aggregate"]
        assert agg["n_traces"] == 2 and agg["n_failed"] == 0
        assert agg["halt_reasons"] == {"plateau_vote": 2}
        assert "counterfactual" in agg["latency_note"]

    def test_parallel_equals_serial(self, tmp_path):
        paths = []
        for i in range(6):
            spec = SynthSpec(kind="converging", steps=320, vocab=2000, seed=i)
            path = tmp_path / f"t{i}.sig.jsonl"
            write_trace(synthesize(spec), path)
            paths.append(str(path))
        cfg = StopConfig()
        assert replay(paths, cfg, workers=1) == replay(paths, cfg, workers=4)

    def test_failures_counted_not_fatal(self, tmp_path):
        good = tmp_path / "good.sig.jsonl"
        write_trace(flat_trace(), good)
        report = replay([str(good), str(tmp_path / "missing.lsh")],
                        forced_halt_cfg(208))
        agg = report["aggregate"]
        assert agg["n_traces"] == 2 and agg["n_failed"] == 1
        assert agg["mean_token_reduction_pct"] == pytest.approx(35.0)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ConfigError):
            replay([], StopConfig())


class TestAnalyze:
    def _report_file(self, tmp_path, at, name):
        path = tmp_path / f"{name}.sig.jsonl"
        write_trace(flat_trace(), path)
        report = replay([str(path)], forced_halt_cfg(at))
        out = tmp_path / f"{name}.report.json"
        write_report(report, out)
        return str(out)

    def test_merges_reports(self, tmp_path):
        r1 = self._report_file(tmp_path, 224, "a")  # 30%
        r2 = self._report_file(tmp_path, 192, "b")  # 40%
        merged = analyze([r1, r2])
        agg = merged["aggregate"]
        assert agg["n_traces"] == 2
        assert agg["mean_token_reduction_pct"] == pytest.approx(35.0)

    def test_recorded_trace_with_tau_metadata(self, tmp_path):
        tr = flat_trace(extra={"tau": 208, "halt_reason": "plateau_vote"})
        tr.meta.config_snapshot = StopConfig().as_dict()
        path = tmp_path / "rec.sig.jsonl"
        write_trace(tr, path)
        report = analyze([str(path)])
        row = report["traces"][0]
        assert row["error"] is None
        assert row["token_reduction_pct"] == pytest.approx(35.0)
        assert report["aggregate"]["halt_reasons"] == {"plateau_vote": 1}

    def test_baseline_override_used_without_snapshot(self, tmp_path):
        path = tmp_path / "rec.sig.jsonl"
        write_trace(flat_trace(extra={"tau": 160}), path)
        report = analyze([str(path)], baseline_m=320)
        assert report["traces"][0]["token_reduction_pct"] == pytest.approx(50.0)

    def test_trace_without_tau_is_error_row(self, tmp_path):
        path = tmp_path / "plain.sig.jsonl"
        write_trace(flat_trace(), path)
        report = analyze([str(path)], baseline_m=320)
        assert report["traces"][0]["error"] is not None
        assert report["aggregate"]["n_failed"] == 1

    def test_missing_baseline_is_error_row(self, tmp_path):
        path = tmp_path / "rec.sig.jsonl"
        write_trace(flat_trace(extra={"tau": 160}), path)
        report = analyze([str(path)])
        assert "baseline" in report["traces"][0]["error"]

    def test_mixed_vocab_warning(self, tmp_path):
        p1 = tmp_path / "v100.sig.jsonl"
        p2 = tmp_path / "v200.sig.jsonl"
        write_trace(flat_trace(extra={"tau": 100}, vocab=100), p1)
        write_trace(flat_trace(extra={"tau": 100}, vocab=200), p2)
        report = analyze([str(p1), str(p2)], baseline_m=320)
        assert any("vocab" in w for w in report["warnings"])

    def test_empty_inputs_rejected(self):
        with pytest.raises(ConfigError):
            analyze([])


class TestCli:
    def _synth(self, tmp_path, name, **kw):
        args = ["synth", "--kind", kw.pop("kind", "converging"),
                "--steps", str(kw.pop("steps", 320)),
                "--seed", str(kw.pop("seed", 7)),
                "--out", str(tmp_path / name)]
        for key, value in kw.items():
            args += [f"--{key.replace('_', '-')}", str(value)]
        assert cli_main(args) == 0
        return str(tmp_path / name)

    def test_synth_writes_header_plus_step_lines(self, tmp_path):
        path = self._synth(tmp_path, "c.sig.jsonl", steps=320)
        lines = open(path).read().splitlines()
        assert len(lines) == 321
        assert json.loads(lines[0])["vocab_size"] == 32000

    def test_synth_reruns_byte_identical(self, tmp_path):
        p1 = self._synth(tmp_path, "a.sig.jsonl", kind="noisy", steps=64)
        p2 = self._synth(tmp_path, "b.sig.jsonl", kind="noisy", steps=64)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_synth_bad_steps_is_usage_error(self, tmp_path, capsys):
        rc = cli_main(["synth", "--kind", "plateau", "--steps", "0",
                       "--out", str(tmp_path / "x")])
        assert rc == 2
        assert "steps" in capsys.readouterr().err

    def test_replay_end_to_end(self, tmp_path, capsys):
        trace_path = self._synth(tmp_path, "c.sig.jsonl")
        out = tmp_path / "report.json"
        rc = cli_main(["replay", trace_path, "--out", str(out)])
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "plateau_vote tau=104" in stdout
        assert "token_reduction=67.50%" in stdout
        report = json.loads(out.read_text())
        assert report["traces"][0]["tau"] == 104

    def test_replay_vanilla_flag(self, tmp_path, capsys):
        trace_path = self._synth(tmp_path, "c.sig.jsonl")
        out = tmp_path / "report.json"
        assert cli_main(["replay", trace_path, "--vanilla", "--out", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["traces"][0]["tau"] == 320
        assert report["traces"][0]["token_reduction_pct"] == pytest.approx(0.0)

    def test_replay_config_file(self, tmp_path, capsys):
        trace_path = self._synth(tmp_path, "c.sig.jsonl")
        cfg_path = tmp_path / "leash.cfg"
        cfg_path.write_text("vanilla = true\nM = 100\n")
        out = tmp_path / "report.json"
        assert cli_main(["replay", trace_path, "--config", str(cfg_path),
                         "--out", str(out)]) == 0
        assert json.loads(out.read_text())["traces"][0]["tau"] == 100

    def test_replay_bad_config_is_usage_error(self, tmp_path, capsys):
        trace_path = self._synth(tmp_path, "c.sig.jsonl")
        cfg_path = tmp_path / "leash.cfg"
        cfg_path.write_text("k = 4\nwindow = 9\n")
        rc = cli_main(["replay", trace_path, "--config", str(cfg_path),
                       "--out", str(tmp_path / "r.json")])
        assert rc == 2
        assert "line 2" in capsys.readouterr().err

    def test_replay_partial_failure_exit_code(self, tmp_path, capsys):
        trace_path = self._synth(tmp_path, "c.sig.jsonl")
        out = tmp_path / "report.json"
        rc = cli_main(["replay", trace_path, str(tmp_path / "ghost.lsh"),
                       "--out", str(out)])
        assert rc == 1
        report = json.loads(out.read_text())
        assert report["aggregate"]["n_failed"] == 1

    def test_analyze_subcommand(self, tmp_path, capsys):
        trace_path = self._synth(tmp_path, "c.sig.jsonl")
        report_path = tmp_path / "report.json"
        cli_main(["replay", trace_path, "--out", str(report_path)])
        capsys.readouterr()
        out = tmp_path / "agg.json"
        assert cli_main(["analyze", str(report_path), "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "mean token reduction: 67.50%" in stdout
        assert json.loads(out.read_text())["aggregate"]["n_traces"] == 1

    def test_console_script_installed(self, tmp_path):
        trace_path = self._synth(tmp_path, "c.sig.jsonl", steps=100, kind="plateau")
        proc = subprocess.run(
            [sys.executable, "-m", "leash.cli", "replay", trace_path,
             "--vanilla", "--out", str(tmp_path / "r.json")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 1  # 100-step trace cannot reach the 320 cap
        assert "no stopping decision" in proc.stdout
