import json
import subprocess
import sys

import pytest

from polarqkd import cli, experiments
from polarqkd.experiments import CSV_COLUMNS, RunConfig, parse_csv


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def kv(text):
    return dict(line.split(": ", 1) for line in text.strip().splitlines())


class TestAnalyze:
    def test_one_link(self, capsys):
        code, out, _ = run(["analyze", "--x", "0.1", "--links", "1"], capsys)
        assert code == 0
        vals = kv(out)
        assert float(vals["exact"]) == pytest.approx(0.0033267, abs=5e-8)
        assert abs(float(vals["quadrature_minus_exact"])) <= 1e-9

    def test_two_links_series(self, capsys):
        _, out, _ = run(["analyze", "--x", "0.1", "--links", "2"], capsys)
        assert float(kv(out)["series"]) == pytest.approx(0.0066667, abs=5e-8)

    def test_zero(self, capsys):
        code, out, _ = run(["analyze", "--x", "0"], capsys)
        vals = kv(out)
        assert code == 0
        assert float(vals["exact"]) == float(vals["series"]) == float(vals["quadrature"]) == 0.0

    @pytest.mark.parametrize("argv", [["analyze", "--x", "abc"], ["analyze", "--links", "0"], ["analyze", "--x", "-1"], ["bogus"]])
    def test_bad_flags_exit_2(self, argv, capsys):
        try:
            code = cli.main(argv)
        except SystemExit as exc:
            code = exc.code
        assert code == 2


@pytest.fixture(scope="module")
def curves(tmp_path_factory):
    d = tmp_path_factory.mktemp("fig")
    out = {}
    for fig in (4, 6):
        path = d / f"fig{fig}.csv"
        assert cli.main(["figure", str(fig), "--trials", "20000", "--seed", "3", "--out", str(path), "--strict"]) == 0
        out[fig] = path.read_text()
    return out


class TestFigure:

    def test_header(self, curves):
        assert curves[4].splitlines()[0] == ",".join(CSV_COLUMNS)

    def test_row_at_point_one(self, curves):
        last = parse_csv(curves[4])[-1]
        assert last.x == pytest.approx(0.1)
        assert last.analytic_exact == pytest.approx(0.0033267, abs=5e-8)

    def test_two_link_ratio(self, curves):
        for p4, p6 in zip(parse_csv(curves[4]), parse_csv(curves[6])):
            assert 1.98 <= p6.analytic_exact / p4.analytic_exact <= 2.0

    def test_monotone(self, curves):
        vals = [p.analytic_exact for p in parse_csv(curves[6])]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_ten_significant_digits(self, curves):
        row = curves[4].splitlines()[1].split(",")
        assert row[1] == f"{float(row[1]):.10g}"

    def test_invalid_range(self, capsys):
        assert run(["figure", "4", "--x-min", "0.2", "--x-max", "0.1"], capsys)[0] == 2
        assert run(["figure", "6", "--x-max", "0.7"], capsys)[0] == 2

    def test_strict_failure_exit_3(self, monkeypatch, capsys):
        monkeypatch.setattr(experiments, "monte_carlo_flip_rate", lambda *a, **k: 0.4)
        assert run(["figure", "4", "--trials", "100", "--strict"], capsys)[0] == 3
        assert run(["figure", "4", "--trials", "100"], capsys)[0] == 0


def write_config(path, **kw):
    cfg = RunConfig(**kw)
    path.write_text(cfg.dumps())
    return path


class TestSimulate:
    def test_config_round_trip(self, tmp_path):
        cfg = RunConfig(protocol="three-stage", x=[0.05, 0.1, 0.02], eve_kind="siphon", eve_stages=[0, 2])
        path = tmp_path / "c.json"
        path.write_text(cfg.dumps())
        assert RunConfig.load(path) == cfg

    def test_bad_config_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{ not json")
        assert run(["simulate", "--config", str(bad), "--out", str(tmp_path)], capsys)[0] == 2
        bad.write_text(json.dumps({"protocol": "four-stage"}))
        assert run(["simulate", "--config", str(bad), "--out", str(tmp_path)], capsys)[0] == 2
        bad.write_text(json.dumps({"schema_version": 99}))
        assert run(["simulate", "--config", str(bad), "--out", str(tmp_path)], capsys)[0] == 2
        bad.write_text(json.dumps({"colour": "blue"}))
        assert run(["simulate", "--config", str(bad), "--out", str(tmp_path)], capsys)[0] == 2

    def test_outputs_and_flag_override(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", protocol="bb84", rounds=5000, x=0.1)
        out = tmp_path / "run"
        code, stdout, _ = run(["simulate", "--config", str(cfg), "--protocol", "two-stage", "--out", str(out)], capsys)
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["protocol"] == "two-stage"
        assert (out / "transcript.tsv").read_text().splitlines()[2].split("\t")[1] == "two-stage"
        assert "trial 0: two-stage" in stdout

    def test_byte_identical(self, tmp_path, monkeypatch, capsys):
        cfg = write_config(tmp_path / "c.json", protocol="three-stage", rounds=150_000, x=0.1, seed=42, reconcile=True)
        outs = []
        for i, threads in enumerate(("1", "3")):
            monkeypatch.setenv("POLARQKD_THREADS", threads)
            d = tmp_path / f"o{i}"
            assert run(["simulate", "--config", str(cfg), "--out", str(d)], capsys)[0] == 0
            outs.append(((d / "transcript.tsv").read_bytes(), (d / "report.json").read_bytes()))
        assert outs[0] == outs[1]

    def test_intercept_resend(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", protocol="bb84", rounds=100_000, x=0.0, eve_kind="intercept_resend")
        run(["simulate", "--config", str(cfg), "--out", str(tmp_path)], capsys)
        q = json.loads((tmp_path / "report.json").read_text())["runs"][0]["summary"]["qber"]
        assert abs(q - 0.25) < 0.01

    def test_end_to_end_reconciliation(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", protocol="bb84", rounds=200_000, x=0.1, reconcile=True, trials=2)
        assert run(["simulate", "--config", str(cfg), "--out", str(tmp_path), "--strict"], capsys)[0] == 0
        report = json.loads((tmp_path / "report.json").read_text())
        for r in report["runs"]:
            assert r["reconciliation"]["hash_match"]
            assert r["noise_check_pass"]
        assert (tmp_path / "transcript_1.tsv").exists()

    def test_siphon_intensity_report(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", protocol="three-stage", rounds=50_000, x=0.0, eve_kind="siphon")
        run(["simulate", "--config", str(cfg), "--out", str(tmp_path)], capsys)
        inten = json.loads((tmp_path / "report.json").read_text())["runs"][0]["intensity"]
        assert inten["alarms"] == inten["windows"] == 5
        assert inten["relative_intensity"] == pytest.approx(0.512, abs=0.01)


class TestReconcileDemo:
    def test_many_runs(self, capsys):
        code, out, _ = run(["reconcile-demo", "--qber", "0.01", "--key-bits", "1024", "--runs", "100", "--strict"], capsys)
        assert code == 0
        summary = kv(out.split("[summary]")[1])
        assert int(summary["hash_matches"]) >= 95

    def test_clean_channel(self, capsys):
        code, out, _ = run(["reconcile-demo", "--qber", "0", "--key-bits", "512"], capsys)
        vals = kv(out.split("[summary]")[0].split("[run 0]")[1])
        assert code == 0
        assert vals["errors_corrected"] == "0"
        assert vals["bits_deleted"] == vals["parities_compared"]

    @pytest.mark.parametrize("q", ["0.5", "-0.1", "x"])
    def test_invalid_rate(self, q, capsys):
        try:
            code = cli.main(["reconcile-demo", "--qber", q])
        except SystemExit as exc:
            code = exc.code
        assert code == 2

    def test_config_supplies_defaults(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"qber": 0.05, "key_bits": 300, "seed": 9}))
        _, a, _ = run(["reconcile-demo", "--config", str(path)], capsys)
        _, b, _ = run(["reconcile-demo", "--qber", "0.05", "--key-bits", "300", "--seed", "9"], capsys)
        assert a == b


def test_self_test_passes(capsys):
    code, out, _ = run(["self-test"], capsys)
    assert code == 0
    assert "FAIL" not in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "polarqkd", "analyze", "--x", "0.05"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("x: 0.05\n")


def test_three_stage_simulate_seed_42():
    report = experiments.simulate(RunConfig(protocol="three-stage", x=0.1, rounds=10**6, seed=42))
    assert 0.00935 <= report["runs"][0]["summary"]["qber"] <= 0.01048
