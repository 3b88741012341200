import csv
import json

import numpy as np
import pytest

from creditquote.cli import (ConfigError, checkpoints_for, main,
                             read_summary_csv, run_seed, validate_config)


def write_cfg(tmp_path, payload, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload), encoding="utf-8")
    return str(p)


SMALL = {"M": 2, "d": 3, "T": 32, "seeds": [0, 1], "delta_max": 0.1,
         "policies": ["tsmt", "pooling"]}


class TestConfigValidation:
    def test_defaults(self):
        cfg = validate_config({})
        assert cfg["M"] == 2 and cfg["d"] == 4 and cfg["T"] == 64
        assert cfg["noise"]["kind"] == "truncated_normal"
        assert cfg["lambda_mode"] == "experiment"
        assert cfg["lambda_scale"] == 10.0
        assert cfg["policies"] == ["tsmt", "pooling", "individual"]
        assert cfg["seeds"] == [0]

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            validate_config({"episodes": 5})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(ConfigError, match="noise"):
            validate_config({"noise": {"skew": 1.0}})

    def test_bad_types(self):
        with pytest.raises(ConfigError):
            validate_config({"M": "two"})
        with pytest.raises(ConfigError):
            validate_config({"T": 2.5})
        with pytest.raises(ConfigError):
            validate_config({"seeds": [0, -1]})

    def test_bad_policy_list(self):
        with pytest.raises(ConfigError):
            validate_config({"policies": ["tsmt", "tsmt"]})
        with pytest.raises(ConfigError):
            validate_config({"policies": ["oracle"]})

    def test_bad_lambda_mode(self):
        with pytest.raises(ConfigError, match="lambda_mode"):
            validate_config({"lambda_mode": "theory"})

    def test_normal_noise_rejects_bounds(self):
        with pytest.raises(ConfigError):
            validate_config({"noise": {"kind": "normal", "lo": 0.0}})

    def test_weights_require_weights_kind(self):
        with pytest.raises(ConfigError):
            validate_config({"arrival": {"kind": "uniform", "weights": [1.0, 1.0]}})

    def test_weights_normalization_notice(self, capsys):
        validate_config({"M": 2, "arrival": {"kind": "weights",
                                             "weights": [3.0, 1.0]}})
        assert "normalizing" in capsys.readouterr().err

    def test_checkpoints(self):
        assert checkpoints_for(64) == [1, 2, 4, 8, 16, 32, 64]
        assert checkpoints_for(100) == [1, 2, 4, 8, 16, 32, 64, 100]


class TestMainExitCodes:
    def test_invalid_config_exits_2(self, tmp_path, capsys):
        path = write_cfg(tmp_path, {"bogus": 1})
        assert main(["simulate", "--config", path]) == 2
        assert "config error" in capsys.readouterr().err

    def test_unreadable_config_exits_2(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == 2

    def test_bad_json_reports_line(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{\n  broken\n}")
        assert main(["simulate", "--config", str(p)]) == 2
        assert "invalid JSON" in capsys.readouterr().err

    def test_replay_needs_paths(self, tmp_path):
        path = write_cfg(tmp_path, {})
        assert main(["replay", "--config", path]) == 2

    def test_bad_seed_override(self, tmp_path):
        path = write_cfg(tmp_path, SMALL)
        assert main(["simulate", "--config", path, "--seeds", "a,b"]) == 2


class TestSimulateCommand:
    def test_artifacts_and_determinism(self, tmp_path):
        path = write_cfg(tmp_path, SMALL)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["simulate", "--config", path, "--out", str(out1)]) == 0
        assert main(["simulate", "--config", path, "--out", str(out2)]) == 0
        for out in (out1, out2):
            assert (out / "rounds_seed0.csv").exists()
            assert (out / "rounds_seed1.csv").exists()
            assert (out / "summary.csv").exists()
        for name in ("rounds_seed0.csv", "rounds_seed1.csv", "summary.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_round_rows_per_policy(self, tmp_path):
        path = write_cfg(tmp_path, SMALL)
        out = tmp_path / "o"
        assert main(["simulate", "--config", path, "--out", str(out),
                     "--seeds", "0"]) == 0
        with open(out / "rounds_seed0.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        # tsmt + pooling + auto-added oracle benchmark
        assert len(rows) == SMALL["T"] * 3
        assert {r["policy"] for r in rows} == {"tsmt", "pooling", "oracle"}

    def test_summary_recomputable_from_rounds(self, tmp_path):
        path = write_cfg(tmp_path, SMALL)
        out = tmp_path / "o"
        assert main(["simulate", "--config", path, "--out", str(out)]) == 0
        per_seed = {}
        for seed in SMALL["seeds"]:
            with open(out / f"rounds_seed{seed}.csv", newline="") as fh:
                for row in csv.DictReader(fh):
                    key = (row["policy"], seed)
                    per_seed.setdefault(key, []).append(float(row["realized_regret"]))
        for row in read_summary_csv(out / "summary.csv"):
            cp = row["checkpoint"]
            vals = [sum(per_seed[(row["policy"], s)][:cp]) for s in SMALL["seeds"]]
            assert row["mean_cum_realized"] == pytest.approx(np.mean(vals), abs=1e-9)
            assert row["sd_cum_realized"] == pytest.approx(np.std(vals), abs=1e-9)

    def test_svg_deterministic(self, tmp_path):
        cfg = dict(SMALL, format="csv+svg", seeds=[0])
        path = write_cfg(tmp_path, cfg)
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        assert main(["simulate", "--config", path, "--out", str(out1)]) == 0
        assert main(["simulate", "--config", path, "--out", str(out2)]) == 0
        svg = (out1 / "summary.svg").read_text()
        assert svg.startswith("<svg")
        assert svg == (out2 / "summary.svg").read_text()


class TestSweepCommand:
    def test_grid_artifacts(self, tmp_path):
        cfg = dict(SMALL, seeds=[0], T=16, format="csv+svg",
                   sweep={"M": [2, 3], "delta_max": [0.1, 0.5]})
        path = write_cfg(tmp_path, cfg)
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", path, "--out", str(out)]) == 0
        for m in (2, 3):
            for dm in ("0.1", "0.5"):
                assert (out / f"summary_M{m}_dmax{dm}.csv").exists()
        assert (out / "sweep.svg").exists()

    def test_alpha_sweep(self, tmp_path):
        cfg = dict(SMALL, seeds=[0], T=16, sweep={"alpha": [0, 2]})
        path = write_cfg(tmp_path, cfg)
        out = tmp_path / "alpha"
        assert main(["sweep", "--config", path, "--out", str(out)]) == 0
        assert (out / "summary_M2_dmax0.1_a0.csv").exists()
        assert (out / "summary_M2_dmax0.1_a2.csv").exists()


class TestReplayAndDiagnoseCommands:
    def test_replay_command(self, tmp_path):
        from creditquote.replay import log_from_market, write_rfq_log
        cfg = dict(SMALL, seeds=[0], T=64, fixed_primitives=True)
        res = run_seed(validate_config(cfg), 0, collect_records=False)
        lp, pp = tmp_path / "log.csv", tmp_path / "prims.csv"
        write_rfq_log(log_from_market(res.market, res.primitives_by_bond), lp, pp)
        rp_cfg = dict(SMALL, replay={"log": str(lp), "primitives": str(pp)})
        path = write_cfg(tmp_path, rp_cfg)
        out = tmp_path / "replay"
        assert main(["replay", "--config", path, "--out", str(out)]) == 0
        assert (out / "replay_summary.csv").exists()
        report = json.loads((out / "ridge_fit.json").read_text())
        assert "r_squared" in report

    def test_diagnose_command(self, tmp_path):
        cfg = dict(SMALL, diagnose={"n_primitives": 20, "event_ks": [3, 4],
                                    "event_seeds": 3})
        path = write_cfg(tmp_path, cfg)
        out = tmp_path / "diag"
        assert main(["diagnose", "--config", path, "--out", str(out)]) == 0
        payload = json.loads((out / "diagnostics.json").read_text())
        for key in ("curvature", "noise_sigma", "constants",
                    "pooled_event_failure_rates"):
            assert key in payload
        assert payload["curvature"]["n_primitives"] == 20
