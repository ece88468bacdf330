"""End-to-end tests of the command line driving every subcommand."""

import json

import pytest

from lorascale.cli import (
    DEFAULT_SEED,
    EXIT_DOMAIN,
    EXIT_IO,
    EXIT_OK,
    EXIT_USAGE,
    SEED_ENV_VAR,
    main,
)
from lorascale.reporting import (
    FIT_COLUMNS,
    LEMMA_COLUMNS,
    SCAN_COLUMNS,
    SWEEP_COLUMNS,
    emit_csv,
    read_csv,
)


@pytest.fixture(autouse=True)
def _no_ambient_seed(monkeypatch):
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)


def manifest_of(path):
    with open(str(path) + ".manifest.json", encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def sweep_outputs(tmp_path_factory):
    """One tiny sweep run (with figure) shared by the sweep/report tests."""
    out_dir = tmp_path_factory.mktemp("sweep")
    csv_path = str(out_dir / "sweep.csv")
    svg_path = str(out_dir / "sweep.svg")
    code = main([
        "sweep-lr", "--scheme", "initB", "--gamma", "0", "--n", "64",
        "--ranks", "4", "--log2-eta-min", "-8", "--log2-eta-max", "-6",
        "--steps", "10", "--n-seeds", "2", "--include-fft",
        "--out", csv_path, "--svg", svg_path,
    ])
    assert code == EXIT_OK
    return csv_path, svg_path


class TestPrescribeCommand:
    def test_width_transfer_prints_exact_eta(self, capsys):
        code = main([
            "prescribe", "--scheme", "initB", "--gamma", "0",
            "--eta-ref", "0.001", "--n-ref", "256", "--r-ref", "4",
            "--n", "1024", "--r", "8",
        ])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "prescribed eta for n=1024, r=8: 0.00025" in out
        assert "rule: mua:initB:gamma=0" in out
        assert "(a_n, a_r) = (-1, +0)" in out

    def test_to_fft_same_width_is_identity(self, capsys):
        code = main([
            "prescribe", "--scheme", "initB", "--gamma", "0",
            "--eta-ref", "0.00025", "--n-ref", "256", "--r-ref", "4",
            "--n", "256", "--to-fft",
        ])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "full finetuning at n=256: 0.00025" in out
        assert "rule: mua:fft" in out

    def test_gamma_one_reports_regime(self, capsys):
        code = main([
            "prescribe", "--scheme", "initB", "--gamma", "1",
            "--eta-ref", "0.000244140625", "--n-ref", "1024", "--r-ref", "4",
            "--n", "1024", "--r", "8",
        ])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "regime: r_small" in out
        assert "rule: mua:initB:gamma=1:r_small" in out

    def test_missing_target_rank_is_usage_error(self, capsys):
        code = main([
            "prescribe", "--scheme", "initB", "--gamma", "0",
            "--eta-ref", "0.001", "--n-ref", "256", "--r-ref", "4",
            "--n", "1024",
        ])
        err = capsys.readouterr().err
        assert code == EXIT_USAGE
        assert "usage error" in err and "--r" in err

    def test_unsupported_gamma_is_domain_error(self, capsys):
        code = main([
            "prescribe", "--scheme", "initB", "--gamma", "1.5",
            "--eta-ref", "0.001", "--n-ref", "256", "--r-ref", "4",
            "--n", "1024", "--r", "8",
        ])
        assert code == EXIT_DOMAIN
        assert "error:" in capsys.readouterr().err

    def test_bad_scheme_choice_is_usage_error(self, capsys):
        code = main([
            "prescribe", "--scheme", "lokr", "--eta-ref", "0.001",
            "--n-ref", "256", "--r-ref", "4", "--n", "1024", "--r", "8",
        ])
        assert code == EXIT_USAGE

    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_no_subcommand_is_usage_error(self, capsys):
        assert main([]) == EXIT_USAGE


class TestSeedResolution:
    SCAN = [
        "scan", "--scheme", "initB", "--n", "32", "--r", "4",
        "--steps", "1", "--n-seeds", "1",
    ]

    def run_scan(self, tmp_path, extra=()):
        out = tmp_path / "scan.csv"
        code = main(self.SCAN + ["--out", str(out)] + list(extra))
        assert code == EXIT_OK
        return manifest_of(out)

    def test_default_seed(self, tmp_path):
        payload = self.run_scan(tmp_path)
        assert payload["seed"] == DEFAULT_SEED
        assert payload["parameters"]["seed_source"] == "default"

    def test_env_seed(self, tmp_path, monkeypatch):
        monkeypatch.setenv(SEED_ENV_VAR, "123")
        payload = self.run_scan(tmp_path)
        assert payload["seed"] == 123
        assert payload["parameters"]["seed_source"] == "env"

    def test_flag_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(SEED_ENV_VAR, "123")
        payload = self.run_scan(tmp_path, ["--seed", "0x10"])
        assert payload["seed"] == 16
        assert payload["parameters"]["seed_source"] == "flag"

    def test_bad_env_seed_is_usage_error(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv(SEED_ENV_VAR, "not-a-seed")
        code = main(self.SCAN + ["--out", str(tmp_path / "s.csv")])
        assert code == EXIT_USAGE
        assert SEED_ENV_VAR in capsys.readouterr().err

    def test_bad_seed_flag_is_usage_error(self, tmp_path, capsys):
        code = main(self.SCAN + ["--out", str(tmp_path / "s.csv"),
                                 "--seed", "not-a-seed"])
        assert code == EXIT_USAGE

    def test_manifest_records_resolved_parameters(self, tmp_path):
        payload = self.run_scan(tmp_path)
        params = payload["parameters"]
        assert params["scheme"] == "initB"
        assert params["n"] == [32]
        assert params["r"] == [4]
        assert params["steps"] == 1
        assert "config_id" in payload
        assert payload["tool_version"]
        assert payload["started_at"] <= payload["finished_at"]


class TestScanAndFit:
    def scan_csv(self, tmp_path, eta_rule="mua"):
        out = str(tmp_path / "scan.csv")
        code = main([
            "scan", "--scheme", "initB", "--gamma", "0",
            "--eta-rule", eta_rule, "--eta-const", "1" if eta_rule == "mua" else "0.001",
            "--n", "256,512,1024", "--r", "4", "--steps", "2", "--n-seeds", "2",
            "--out", out,
        ])
        assert code == EXIT_OK
        return out

    def test_scan_writes_schema_and_all_quantities(self, tmp_path, capsys):
        out = self.scan_csv(tmp_path)
        header, rows = read_csv(out)
        assert header == list(SCAN_COLUMNS)
        # 3 cells x (2 trace quantities x 3 steps + 4 increment quantities x 2 steps)
        assert len(rows) == 3 * (2 * 3 + 4 * 2)
        assert {r["quantity"] for r in rows} == {
            "z_a", "z_b", "delta_zb", "delta1", "delta2", "delta3",
        }
        assert {r["n"] for r in rows} == {"256", "512", "1024"}
        row = rows[0]
        assert row["eta_rule"] == "mua:1"
        assert float(row["eta"]) == 1.0 / 256.0
        assert "wrote" in capsys.readouterr().out

    def test_fit_against_theory(self, tmp_path, capsys):
        scan = self.scan_csv(tmp_path)
        fit = str(tmp_path / "fit.csv")
        code = main(["fit", "--input", scan, "--out", fit])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "slope=" in out and "predicted=" in out
        header, rows = read_csv(fit)
        assert header == list(FIT_COLUMNS)
        assert len(rows) == 6
        by_q = {r["quantity"]: r for r in rows}
        assert all(r["axis"] == "n" for r in rows)
        # width-invariance of the per-step update is the headline prediction
        assert float(by_q["delta_zb"]["predicted_slope"]) == 0.0
        assert by_q["delta_zb"]["pass"] in ("true", "false")
        assert manifest_of(fit)["command"] == "fit"

    def test_fixed_eta_fit_has_no_predictions(self, tmp_path):
        scan = self.scan_csv(tmp_path, eta_rule="fixed")
        fit = str(tmp_path / "fit.csv")
        assert main(["fit", "--input", scan, "--out", fit]) == EXIT_OK
        _, rows = read_csv(fit)
        assert {r["predicted_slope"] for r in rows} == {""}
        assert {r["pass"] for r in rows} == {""}

    def test_fit_needs_three_points_on_one_axis(self, tmp_path, capsys):
        out = str(tmp_path / "scan.csv")
        code = main([
            "scan", "--scheme", "initB", "--n", "256,512", "--r", "4",
            "--steps", "1", "--n-seeds", "1", "--out", out,
        ])
        assert code == EXIT_OK
        assert main(["fit", "--input", out]) == EXIT_DOMAIN
        assert "3 values" in capsys.readouterr().err

    def test_fit_missing_input_is_io_error(self, tmp_path):
        assert main(["fit", "--input", str(tmp_path / "absent.csv")]) == EXIT_IO

    def test_fit_rejects_mixed_config_csv(self, tmp_path):
        rows = []
        for scheme, n in (("initA", 256), ("initB", 512), ("initB", 1024)):
            rows.append({
                "config_id": "c", "scheme": scheme, "gamma": 0.0,
                "eta_rule": "mua:1", "n": n, "r": 4, "eta": 0.001,
                "step": 1, "quantity": "delta1", "rms": 0.1,
                "n_seeds": 1, "seed": 1,
            })
        path = str(tmp_path / "mixed.csv")
        emit_csv(rows, path, SCAN_COLUMNS)
        assert main(["fit", "--input", path]) == EXIT_DOMAIN

    def test_fit_rejects_mixed_gamma_one_regimes(self, tmp_path, capsys):
        rows = []
        for r in (4, 16, 64):  # r=64 crosses sqrt(1024)
            rows.append({
                "config_id": "c", "scheme": "initB", "gamma": 1.0,
                "eta_rule": "mua:1", "n": 1024, "r": r, "eta": 0.001,
                "step": 1, "quantity": "delta1", "rms": 0.1,
                "n_seeds": 1, "seed": 1,
            })
        path = str(tmp_path / "regimes.csv")
        emit_csv(rows, path, SCAN_COLUMNS)
        assert main(["fit", "--input", path]) == EXIT_DOMAIN
        assert "regime" in capsys.readouterr().err

    def test_scan_missing_out_is_usage_error(self):
        assert main(["scan", "--scheme", "initB", "--n", "32", "--r", "4"]) == EXIT_USAGE

    def test_scan_rank_above_width_is_domain_error(self, tmp_path):
        code = main([
            "scan", "--scheme", "initB", "--n", "32", "--r", "64",
            "--steps", "1", "--n-seeds", "1", "--out", str(tmp_path / "s.csv"),
        ])
        assert code == EXIT_DOMAIN

    def test_scan_unwritable_out_is_io_error(self, tmp_path):
        code = main([
            "scan", "--scheme", "initB", "--n", "32", "--r", "4",
            "--steps", "1", "--n-seeds", "1",
            "--out", str(tmp_path / "no" / "dir" / "s.csv"),
        ])
        assert code == EXIT_IO


class TestSweepLrCommand:
    def test_writes_csv_figure_and_manifests(self, sweep_outputs, capsys):
        csv_path, svg_path = sweep_outputs
        header, rows = read_csv(csv_path)
        assert header == list(SWEEP_COLUMNS)
        # (1 rank + fft) x 3 rates x 2 seed groups
        assert len(rows) == 12
        assert {r["rank_or_fft"] for r in rows} == {"4", "fft"}
        assert {r["seed_group"] for r in rows} == {"0", "1"}
        assert all(r["diverged"] in ("true", "false") for r in rows)
        with open(svg_path, encoding="utf-8") as fh:
            assert "<svg" in fh.read()
        assert manifest_of(csv_path)["command"] == "sweep-lr"
        assert manifest_of(svg_path)["parameters"]["include_fft"] is True

    def test_missing_ranks_is_usage_error(self, tmp_path, capsys):
        code = main([
            "sweep-lr", "--scheme", "initB", "--n", "64",
            "--log2-eta-min", "-8", "--log2-eta-max", "-6",
            "--out", str(tmp_path / "s.csv"),
        ])
        assert code == EXIT_USAGE
        assert "--ranks" in capsys.readouterr().err

    def test_inverted_eta_range_is_domain_error(self, tmp_path):
        code = main([
            "sweep-lr", "--scheme", "initB", "--n", "64", "--ranks", "4",
            "--log2-eta-min", "-6", "--log2-eta-max", "-8",
            "--steps", "5", "--n-seeds", "1", "--out", str(tmp_path / "s.csv"),
        ])
        assert code == EXIT_DOMAIN

    def test_non_integer_ranks_is_usage_error(self, tmp_path):
        code = main([
            "sweep-lr", "--scheme", "initB", "--n", "64", "--ranks", "4,x",
            "--log2-eta-min", "-8", "--log2-eta-max", "-6",
            "--out", str(tmp_path / "s.csv"),
        ])
        assert code == EXIT_USAGE


class TestReportCommand:
    def test_rebuilds_figure_from_csv(self, sweep_outputs, tmp_path, capsys):
        csv_path, _ = sweep_outputs
        svg = str(tmp_path / "rebuilt.svg")
        code = main(["report", "--input", csv_path, "--svg", svg, "--title", "rebuilt"])
        assert code == EXIT_OK
        text = open(svg, encoding="utf-8").read()
        assert "<svg" in text and "rebuilt" in text
        assert manifest_of(svg)["command"] == "report"

    def test_header_only_csv_is_domain_error(self, tmp_path):
        path = str(tmp_path / "empty.csv")
        emit_csv([], path, SWEEP_COLUMNS)
        assert main(["report", "--input", path, "--svg", str(tmp_path / "f.svg")]) == EXIT_DOMAIN

    def test_missing_input_is_io_error(self, tmp_path):
        code = main(["report", "--input", str(tmp_path / "absent.csv"),
                     "--svg", str(tmp_path / "f.svg")])
        assert code == EXIT_IO


class TestVerifyLemmasCommand:
    def test_reduced_sample_run_passes_and_writes_csv(self, tmp_path, capsys):
        out = str(tmp_path / "lemmas.csv")
        code = main([
            "verify-lemmas", "--stein-samples", "20000",
            "--rho-sq-samples", "20000", "--delta1-samples", "2000",
            "--out", out,
        ])
        stdout = capsys.readouterr().out
        assert code == EXIT_OK
        assert stdout.count("PASS") == 12
        assert "FAIL" not in stdout
        header, rows = read_csv(out)
        assert header == list(LEMMA_COLUMNS)
        assert len(rows) == 12
        assert {r["pass"] for r in rows} == {"true"}
        assert {r["lemma"] for r in rows} == {
            "sign_gaussian_product", "sign_gaussian_product_scaled",
            "alignment_coefficient_sq", "alignment_coefficient_sym",
            "delta1_second_moment",
        }
        assert manifest_of(out)["command"] == "verify-lemmas"


class TestConfigFile:
    PRESCRIBE_CFG = (
        "# transfer a tuned rate up in width\n"
        "scheme = initB\n"
        "gamma = 0\n"
        "eta-ref = 0.001\n"
        "n-ref = 256\n"
        "r-ref = 4\n"
        "n = 1024\n"
        "r = 8\n"
    )

    def write_cfg(self, tmp_path, text):
        path = tmp_path / "run.cfg"
        path.write_text(text)
        return str(path)

    def test_config_file_supplies_all_parameters(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path, self.PRESCRIBE_CFG)
        assert main(["prescribe", "--config", cfg]) == EXIT_OK
        assert "n=1024, r=8: 0.00025" in capsys.readouterr().out

    def test_flag_overrides_config_value(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path, self.PRESCRIBE_CFG)
        assert main(["prescribe", "--config", cfg, "--n", "512"]) == EXIT_OK
        assert "n=512, r=8: 0.0005" in capsys.readouterr().out

    def test_boolean_config_key(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path, self.PRESCRIBE_CFG + "to-fft = true\n")
        assert main(["prescribe", "--config", cfg]) == EXIT_OK
        assert "full finetuning" in capsys.readouterr().out

    def test_non_boolean_value_for_flag_key(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path, self.PRESCRIBE_CFG + "to-fft = yes\n")
        assert main(["prescribe", "--config", cfg]) == EXIT_USAGE
        assert "true or false" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path, self.PRESCRIBE_CFG + "widht = 9\n")
        assert main(["prescribe", "--config", cfg]) == EXIT_USAGE
        assert "unknown config key" in capsys.readouterr().err

    def test_malformed_line_rejected(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path, "scheme initB\n")
        assert main(["prescribe", "--config", cfg]) == EXIT_USAGE
        assert "key=value" in capsys.readouterr().err

    def test_duplicate_key_rejected(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path, "n = 32\nn = 64\n")
        assert main(["prescribe", "--config", cfg]) == EXIT_USAGE
        assert "duplicate" in capsys.readouterr().err

    def test_bad_typed_value_rejected(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path, self.PRESCRIBE_CFG.replace("n = 1024", "n = many"))
        assert main(["prescribe", "--config", cfg]) == EXIT_USAGE

    def test_bad_choice_value_rejected(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path, self.PRESCRIBE_CFG.replace("initB", "lokr"))
        assert main(["prescribe", "--config", cfg]) == EXIT_USAGE
        assert "one of" in capsys.readouterr().err

    def test_missing_config_file_is_io_error(self, tmp_path):
        assert main(["prescribe", "--config", str(tmp_path / "nope.cfg")]) == EXIT_IO

    def test_config_seed_recorded_in_manifest(self, tmp_path):
        cfg = self.write_cfg(
            tmp_path,
            "scheme = initB\nn = 32\nr = 4\nsteps = 1\nn-seeds = 1\nseed = 0x2A\n",
        )
        out = tmp_path / "scan.csv"
        assert main(["scan", "--config", cfg, "--out", str(out)]) == EXIT_OK
        assert manifest_of(out)["seed"] == 42
