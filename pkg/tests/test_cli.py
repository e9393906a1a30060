import json

import numpy as np
import pytest

from cvqkd.channel import simulate_frames
from cvqkd.cli import (
    ConfigError,
    DataError,
    analyze_records,
    main,
    make_config,
    read_pulses,
    run_bounds,
    write_pulses,
)


class TestMakeConfig:
    def test_defaults(self):
        cfg = make_config({})
        assert cfg.preset == "custom"
        assert cfg.n_frames == 1000
        assert cfg.seed == 0

    def test_preset_sets_transmission(self):
        cfg = make_config({"preset": "fiber_2km"})
        assert cfg.channel.eta_channel == 0.64
        assert cfg.channel.eta_detector == 0.70

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            make_config({"alhpa": 0.3})

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigError):
            make_config({"preset": "fiber_200km"})

    def test_preset_conflict_rejected(self):
        with pytest.raises(ConfigError, match="fixes eta_channel"):
            make_config({"preset": "back_to_back", "eta_channel": 0.5})

    def test_preset_consistent_value_allowed(self):
        cfg = make_config({"preset": "back_to_back", "eta_channel": 1.0})
        assert cfg.channel.eta_channel == 1.0

    def test_invalid_parameter_becomes_config_error(self):
        with pytest.raises(ConfigError):
            make_config({"alpha": -0.5})

    def test_bad_run_values(self):
        with pytest.raises(ConfigError):
            make_config({"n_frames": 0})
        with pytest.raises(ConfigError):
            make_config({"seed": -1})


class TestDatasetRoundTrip:
    def test_csv_round_trip(self, tmp_path):
        cfg = make_config({"preset": "fiber_2km", "n_frames": 20, "seed": 7})
        rec = simulate_frames(cfg.protocol, cfg.channel, cfg.n_frames, cfg.seed)
        path = tmp_path / "pulses.csv"
        write_pulses(str(path), rec)
        back = read_pulses(str(path))
        assert len(back) == len(rec)
        for name in ("frame", "slot", "kind", "bit"):
            np.testing.assert_array_equal(back[name], rec[name])
        for name in ("s2", "s3", "lo_monitor"):
            np.testing.assert_allclose(back[name], rec[name], rtol=1e-8)

    def test_rewrite_byte_identical(self, tmp_path):
        cfg = make_config({"n_frames": 10, "seed": 3})
        rec = simulate_frames(cfg.protocol, cfg.channel, cfg.n_frames, cfg.seed)
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        write_pulses(str(p1), rec)
        write_pulses(str(p2), read_pulses(str(p1)))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("frame,slot\n")
        with pytest.raises(DataError, match="row 1"):
            read_pulses(str(path))

    def test_bad_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("frame,slot,kind,bit,s2,s3,lo_monitor\n"
                        "0,0,cal,0,0.1,0.2,1e8\n"
                        "0,1,cal,0,zzz,0.2,1e8\n")
        with pytest.raises(DataError, match="row 3"):
            read_pulses(str(path))

    def test_unknown_kind(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("frame,slot,kind,bit,s2,s3,lo_monitor\n"
                        "0,0,ref,0,0.1,0.2,1e8\n")
        with pytest.raises(DataError, match="row 2"):
            read_pulses(str(path))

    def test_empty_dataset(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("frame,slot,kind,bit,s2,s3,lo_monitor\n")
        with pytest.raises(DataError, match="no pulse rows"):
            read_pulses(str(path))

    def test_missing_file(self):
        with pytest.raises(DataError):
            read_pulses("/nonexistent/pulses.csv")


class TestMain:
    def test_simulate_deterministic(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        args = ["simulate", "--preset", "fiber_2km", "--frames", "25",
                "--seed", "11"]
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"preset": "no_such_preset"}))
        assert main(["simulate", "--config", str(cfg)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_config_json(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        assert main(["simulate", "--config", str(cfg)]) == 2

    def test_data_error_exit_code(self, capsys):
        assert main(["analyze", "/nonexistent/pulses.csv"]) == 3
        assert "data error" in capsys.readouterr().err

    def test_bounds_stdout(self, capsys):
        rc = main(["bounds", "--alphas", "0.3", "--etas", "0.7"])
        out = capsys.readouterr().out
        assert rc == 0
        assert out.startswith("alpha,eta,threshold_variance")
        val = float(out.strip().splitlines()[1].split(",")[2])
        assert val == pytest.approx(1.3322, abs=2e-3)

    def test_bounds_bad_list(self, capsys):
        assert main(["bounds", "--alphas", "0.3,oops"]) == 2

    def test_witness_end_to_end(self, tmp_path, capsys):
        out = tmp_path / "report.json"
        data = tmp_path / "pulses.csv"
        rc = main(["witness", "--preset", "back_to_back", "--alpha", "0.5",
                   "--frames", "3000", "--seed", "1",
                   "--out", str(out), "--dataset-out", str(data)])
        assert rc == 0
        assert "entangled=True" in capsys.readouterr().out
        report = json.loads(out.read_text())
        assert report["entangled"] is True
        assert report["eta_hat"] == pytest.approx(0.70, abs=0.03)
        assert data.exists()

    def test_analyze_matches_witness(self, tmp_path):
        # simulate then analyze reproduces the one-shot witness verdict
        data = tmp_path / "pulses.csv"
        report1 = tmp_path / "r1.json"
        report2 = tmp_path / "r2.json"
        base = ["--preset", "fiber_2km", "--alpha", "0.4",
                "--frames", "2000", "--seed", "5"]
        assert main(["witness", *base, "--dataset-out", str(data),
                     "--out", str(report1)]) == 0
        assert main(["analyze", str(data), *base, "--out", str(report2)]) == 0
        r1 = json.loads(report1.read_text())
        r2 = json.loads(report2.read_text())
        assert r1["entangled"] == r2["entangled"]
        assert r1["measured_variance"] == pytest.approx(
            r2["measured_variance"], abs=1e-6)


class TestBoundsApi:
    def test_rows_and_file(self, tmp_path):
        out = tmp_path / "bounds.csv"
        rows = run_bounds([0.3], [0.7], 1e8, str(out))
        assert len(rows) == 1
        alpha, eta, thr = rows[0]
        assert (alpha, eta) == (0.3, 0.7)
        assert thr == pytest.approx(1.3322, abs=2e-3)
        text = out.read_text().splitlines()
        assert text[0] == "alpha,eta,threshold_variance"


def test_analyze_records_report_keys():
    cfg = make_config({"preset": "back_to_back", "alpha": 0.5,
                       "n_frames": 1500, "seed": 2})
    rec = simulate_frames(cfg.protocol, cfg.channel, cfg.n_frames, cfg.seed)
    report = analyze_records(rec, cfg)
    for key in ("eta_hat", "excess_hat", "measured_variance",
                "bound_variance", "entangled", "states", "gain_s2"):
        assert key in report
    assert len(report["states"]) == 2
