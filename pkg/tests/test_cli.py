import io
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from seqks.cli import main

BOUND_CFG = "configs/threshold_bound.yaml"


@pytest.fixture
def spectrum(tmp_path):
    p = tmp_path / "bg.csv"
    p.write_text("bin,weight\n1,0.25\n2,0.25\n3,0.25\n4,0.25\n", encoding="utf-8")
    return p


def _stream(rows):
    return "".join(f"{t},{','.join(map(str, x))}\n" for t, x in rows)


def _monitor(monkeypatch, capsys, spectrum, text, *extra):
    monkeypatch.setattr(sys, "stdin", io.StringIO(text))
    code = main(["monitor", "--spectrum", str(spectrum), "--window", "5", *extra])
    out, err = capsys.readouterr()
    return code, [json.loads(line) for line in out.splitlines()], err


def test_module_entry_point_usage_error():
    r = subprocess.run([sys.executable, "-m", "seqks", "frobnicate"], capture_output=True)
    assert r.returncode == 1


def test_missing_subcommand(capsys):
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 1


@pytest.mark.parametrize("seed", ["-1", str(2**64), "abc"])
def test_bad_seed(seed, capsys):
    with pytest.raises(SystemExit) as info:
        main(["calibrate", "--config", BOUND_CFG, "--seed", seed])
    assert info.value.code == 1


class TestCalibrate:
    def test_reports_bound(self, capsys, tmp_path):
        out = tmp_path / "t.json"
        assert main(["calibrate", "--config", BOUND_CFG, "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert "2.399263" in text and "conservative (KS*)" in text
        report = json.loads(out.read_text())
        values = {t["detector_id"]: t["threshold"] for t in report["scenarios"][0]["thresholds"]}
        assert values["KS*"] == pytest.approx(2.39926, abs=1e-4)

    def test_deterministic_bytes(self, tmp_path, capsys):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        cfg = yaml.safe_load(open("configs/no_change.yaml"))
        cfg["calibration"] = {"method": "monte-carlo", "horizon": 60, "target": 1.0, "reps": 5}
        cfg["scenarios"][0]["bins"] = 32
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump(cfg))
        for out in (a, b):
            assert main(["calibrate", "--config", str(p), "--seed", "5", "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_single_rep_warns(self, tmp_path, capsys):
        cfg = yaml.safe_load(open("configs/no_change.yaml"))
        cfg["calibration"] = {"method": "monte-carlo", "horizon": 40, "target": 1.0, "reps": 1}
        cfg["scenarios"][0]["bins"] = 16
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump(cfg))
        assert main(["calibrate", "--config", str(p)]) == 0
        assert "single replicate" in capsys.readouterr().err

    def test_config_error_exit_1(self, tmp_path, capsys):
        p = tmp_path / "c.yaml"
        p.write_text("seed: 1\ndetectors: []\n")
        assert main(["calibrate", "--config", str(p)]) == 1
        assert "config.detectors" in capsys.readouterr().err

    def test_missing_config_exit_1(self, tmp_path, capsys):
        assert main(["calibrate", "--config", str(tmp_path / "nope.yaml")]) == 1


def test_benchmark_writes_csv(tmp_path, capsys):
    cfg = yaml.safe_load(open("configs/no_change.yaml"))
    cfg.update(replicates=3, calibration={"method": "bound", "horizon": 50, "target": 1.0})
    cfg["scenarios"][0].update(bins=16, horizon=50)
    cfg["detectors"] = [{"id": "KS*", "type": "ks", "window": 5}]
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(cfg))
    out = tmp_path / "r.csv"
    assert main(["benchmark", "--config", str(p), "--out", str(out)]) == 0
    assert "KS*" in capsys.readouterr().out
    assert out.read_text().startswith("scenario_id,detector_id")


class TestMonitor:
    def test_json_lines(self, monkeypatch, capsys, spectrum):
        rows = [(t, [25, 25, 25, 25]) for t in range(1, 4)]
        code, recs, _ = _monitor(monkeypatch, capsys, spectrum, _stream(rows), "--threshold", "3")
        assert code == 0
        assert [r["t"] for r in recs] == [1, 2, 3]
        assert all(set(r) == {"t", "w_stat", "alarm", "argmax_start"} for r in recs)
        assert all(r["w_stat"] == 0.0 and not r["alarm"] for r in recs)

    def test_matches_detector(self, monkeypatch, capsys, spectrum):
        from seqks import SpectrumCdf, WindowedKSDetector

        X = np.random.default_rng(0).multinomial(40, [0.1, 0.2, 0.3, 0.4], size=30)
        _, recs, _ = _monitor(monkeypatch, capsys, spectrum,
                              _stream(enumerate(X.tolist(), 1)), "--threshold", "3")
        det = WindowedKSDetector(SpectrumCdf.from_weights([1, 1, 1, 1]), window=5,
                                 threshold=3.0).fit()
        np.testing.assert_array_equal([r["w_stat"] for r in recs], det.statistic_path(X))

    def test_malformed_row_skipped(self, monkeypatch, capsys, spectrum):
        text = "1,1,1,1,1\n2,1,x,1,1\n3,1,1,1,1\n"
        code, recs, err = _monitor(monkeypatch, capsys, spectrum, text, "--threshold", "3")
        assert code == 0
        assert [r["t"] for r in recs] == [1, 3]
        assert json.loads(err.strip())["line"] == 2

    def test_empty_input(self, monkeypatch, capsys, spectrum):
        code, recs, _ = _monitor(monkeypatch, capsys, spectrum, "")
        assert code == 0 and recs == []

    def test_halt_on_alarm_exit_3(self, monkeypatch, capsys, spectrum):
        rows = [(1, [10, 10, 10, 10]), (2, [400, 0, 0, 0]), (3, [10, 10, 10, 10])]
        code, recs, _ = _monitor(monkeypatch, capsys, spectrum, _stream(rows),
                                 "--threshold", "2.4", "--halt-on-alarm")
        assert code == 3
        assert recs[-1]["t"] == 2 and recs[-1]["alarm"]

    def test_continue_mode_keeps_going(self, monkeypatch, capsys, spectrum):
        rows = [(1, [400, 0, 0, 0]), (2, [10, 10, 10, 10])]
        code, recs, _ = _monitor(monkeypatch, capsys, spectrum, _stream(rows), "--threshold", "2.4")
        assert code == 0 and len(recs) == 2 and recs[0]["alarm"]

    def test_bin_mismatch_exit_2(self, monkeypatch, capsys, spectrum):
        code, _, err = _monitor(monkeypatch, capsys, spectrum, "1,1,1,1\n")
        assert code == 2 and "expected 4 bins" in err

    def test_default_threshold_is_bound(self, monkeypatch, capsys, spectrum):
        # with the bound at T=1000, L=5, a mild deviation does not alarm
        code, recs, _ = _monitor(monkeypatch, capsys, spectrum, "1,30,20,25,25\n")
        assert code == 0 and not recs[0]["alarm"]

    def test_bad_threshold(self, spectrum, capsys):
        assert main(["monitor", "--spectrum", str(spectrum), "--threshold", "-1"]) == 1

    def test_winsorize(self, monkeypatch, capsys, spectrum):
        code, recs, _ = _monitor(monkeypatch, capsys, spectrum, "1,5,5,10\n", "--winsorize-at", "3",
                                 "--threshold", "3")
        assert code == 0 and recs[0]["w_stat"] == 0.0

    def test_file_io(self, tmp_path, spectrum, capsys):
        src, dst = tmp_path / "in.csv", tmp_path / "out.jsonl"
        src.write_text("1,1,1,1,1\n2,2,2,2,2\n")
        assert main(["monitor", "--spectrum", str(spectrum), "--input", str(src),
                     "--out", str(dst), "--threshold", "3"]) == 0
        assert len(dst.read_text().splitlines()) == 2


class TestIngestCheck:
    def test_ok(self, spectrum, capsys):
        assert main(["ingest-check", str(spectrum)]) == 0
        out = capsys.readouterr().out
        assert "bins: 4" in out and "cdf[last]: 1.0" in out

    def test_bad_file_exit_1(self, tmp_path, capsys):
        p = tmp_path / "bad.csv"
        p.write_text("bin,weight\n1,1\n2,oops\n")
        assert main(["ingest-check", str(p)]) == 1
        assert "line 3" in capsys.readouterr().err

    def test_winsorize_and_write(self, tmp_path, capsys):
        p = tmp_path / "s.csv"
        p.write_text("bin,count\n" + "".join(f"{j},{j}\n" for j in range(1, 9)))
        out = tmp_path / "o.csv"
        assert main(["ingest-check", str(p), "--winsorize-at", "4", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "bin,weight" and len(lines) == 5
        assert float(lines[-1].split(",")[1]) == pytest.approx(30 / 36)


def test_monitor_quiet_on_background_then_alarms_on_anomaly(monkeypatch, capsys, spectrum):
    rng = np.random.default_rng(2024)
    X = rng.multinomial(100, [0.25] * 4, size=1000)
    code, recs, _ = _monitor(monkeypatch, capsys, spectrum, _stream(enumerate(X.tolist(), 1)))
    assert code == 0 and len(recs) == 1000
    assert not any(r["alarm"] for r in recs)

    anomaly = rng.multinomial(100, [0.0, 0.0, 0.0, 1.0], size=5)
    rows = list(enumerate(X[:20].tolist(), 1)) + list(enumerate(anomaly.tolist(), 21))
    code, recs, _ = _monitor(monkeypatch, capsys, spectrum, _stream(rows), "--halt-on-alarm")
    assert code == 3
    assert recs[-1]["t"] - 20 <= 3
