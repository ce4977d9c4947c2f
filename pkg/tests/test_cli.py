"""Command-line interface: file outputs, reproducibility, exit codes."""

import csv
import json

import numpy as np
import pytest

from klsda.cli import main, parse_grid_spec, resolve_threads


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    code = run("synth", "--targets", 30, "--nontargets", 90,
               "--channels", 4, "--times", 32, "--fs", 256,
               "--amplitude", 1.2, "--center", "0.06", "--width", "0.015",
               "--active-channels", "1,2", "--seed", 7, "--out", out,
               "--quiet")
    assert code == 0
    return out


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


class TestGridSpec:
    def test_expands_log_spaced(self):
        grid = parse_grid_spec("1e-8:1e-1:8")
        assert len(grid) == 8
        assert grid[0] == pytest.approx(1e-8)
        assert grid[-1] == pytest.approx(1e-1)

    def test_single_point(self):
        assert parse_grid_spec("0.5:1:1") == (0.5,)

    @pytest.mark.parametrize("spec", ["1:2", "0:1:4", "1e-3:1e-1:0", "a:b:c"])
    def test_rejects_malformed(self, spec):
        with pytest.raises(ValueError):
            parse_grid_spec(spec)


class TestThreads:
    def test_explicit(self):
        assert resolve_threads(3) == 3

    def test_env_mirror(self, monkeypatch):
        monkeypatch.setenv("KLSDA_THREADS", "2")
        assert resolve_threads(None) == 2

    def test_auto_is_positive(self, monkeypatch):
        monkeypatch.delenv("KLSDA_THREADS", raising=False)
        assert resolve_threads(0) >= 1

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            resolve_threads(-1)


class TestSynth:
    def test_writes_expected_shapes(self, data_dir):
        meta = json.loads((data_dir / "meta.json").read_text())
        assert meta["n"] == 120 and meta["p"] == 128
        raw = np.fromfile(data_dir / "epochs.f64", dtype="<f8")
        assert raw.size == 120 * 128
        labels = (data_dir / "labels.txt").read_text().split()
        assert labels.count("1") == 30 and labels.count("2") == 90
        assert (data_dir / "run.json").exists()

    def test_byte_identical_reruns(self, tmp_path):
        args = ("synth", "--targets", 10, "--nontargets", 20, "--channels", 4,
                "--times", 32, "--amplitude", 1.0, "--center", "0.06",
                "--width", "0.012", "--active-channels", "1", "--seed", 5,
                "--quiet", "--out", tmp_path / "a")
        names = ("epochs.f64", "labels.txt", "meta.json", "run.json")
        assert run(*args) == 0
        first = {n: (tmp_path / "a" / n).read_bytes() for n in names}
        assert run(*args) == 0
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == first[n]

    def test_zero_amplitude_accepted(self, tmp_path):
        code = run("synth", "--targets", 5, "--nontargets", 5, "--channels", 4,
                   "--times", 32, "--amplitude", 0, "--active-channels", "1",
                   "--center", "0.06", "--width", "0.012",
                   "--seed", 1, "--out", tmp_path / "z", "--quiet")
        assert code == 0

    def test_bad_geometry_is_data_error(self, tmp_path):
        code = run("synth", "--targets", 5, "--nontargets", 5, "--channels", 4,
                   "--times", 8, "--center", "0.9", "--active-channels", "1",
                   "--seed", 1, "--out", tmp_path / "bad", "--quiet")
        assert code == 2


class TestKlmap:
    def test_csv_has_one_row_per_feature(self, data_dir, tmp_path):
        out = tmp_path / "map"
        assert run("klmap", "--data", data_dir, "--bins", 10,
                   "--out", out, "--quiet") == 0
        rows = read_csv(out / "jmap.csv")
        assert rows[0] == ["channel", "time_index", "time_s", "j_value"]
        assert len(rows) == 1 + 128
        assert all(float(r[3]) >= 0 for r in rows[1:])

    def test_svg_on_request(self, data_dir, tmp_path):
        out = tmp_path / "map"
        assert run("klmap", "--data", data_dir, "--svg", "--out", out,
                   "--quiet") == 0
        head = (out / "jmap.svg").read_text()[:200]
        assert "<svg" in head

    def test_bins_sweep_keeps_shape(self, data_dir, tmp_path):
        for bins in (10, 40):
            out = tmp_path / f"map{bins}"
            assert run("klmap", "--data", data_dir, "--bins", bins,
                       "--out", out, "--quiet") == 0
            assert len(read_csv(out / "jmap.csv")) == 129


class TestFit:
    def test_model_json_fields(self, data_dir, tmp_path):
        out = tmp_path / "fit"
        code = run("fit", "--data", data_dir, "--config", "klsda3",
                   "--lambda2-grid", "1e-8:1e-1:4", "--t-max", 10,
                   "--out", out, "--seed", 3, "--quiet")
        assert code == 0
        payload = json.loads((out / "model.json").read_text())
        assert payload["config_id"] == "KLSDA3"
        assert payload["t_max"] == 10.0
        assert len(payload["lambda2_selected"]) == 1
        assert payload["seed"] == 3
        assert payload["beta"][0]["indices"]
        run_echo = json.loads((out / "run.json").read_text())
        assert run_echo["command"] == "fit"
        assert run_echo["lambda2_grid"] == "1e-8:1e-1:4"

    def test_flda_dense_model(self, data_dir, tmp_path):
        out = tmp_path / "flda"
        assert run("fit", "--data", data_dir, "--config", "flda",
                   "--t-max", 10, "--out", out, "--quiet") == 0
        payload = json.loads((out / "model.json").read_text())
        assert payload["config_id"] == "FLDA"
        assert len(payload["beta"][0]["indices"]) > 100

    def test_missing_meta_names_file(self, data_dir, tmp_path, caplog):
        import shutil
        broken = tmp_path / "broken"
        shutil.copytree(data_dir, broken)
        (broken / "meta.json").unlink()
        code = run("fit", "--data", broken, "--config", "klsda0",
                   "--t-max", 10, "--out", tmp_path / "f", "--quiet")
        assert code == 2
        assert "meta.json" in caplog.text

    def test_unknown_config_rejected(self, data_dir, tmp_path):
        code = run("fit", "--data", data_dir, "--config", "slda",
                   "--t-max", 10, "--out", tmp_path / "f", "--quiet")
        assert code == 2


class TestEval:
    def test_summary_and_reports(self, data_dir, tmp_path):
        out = tmp_path / "ev"
        code = run("eval", "--data", data_dir,
                   "--configs", "klsda0,klsda3,flda", "--folds", 3,
                   "--seed", 11, "--lambda2-grid", "1e-8:1e-1:3",
                   "--t-max", 10, "--out", out, "--quiet")
        assert code == 0
        rows = read_csv(out / "summary.csv")
        assert rows[0] == ["config", "mean_auc", "std_auc", "mean_sparsity"]
        assert [r[0] for r in rows[1:]] == ["klsda0", "klsda3", "flda"]
        hashes = set()
        for config in ("klsda0", "klsda3", "flda"):
            payload = json.loads((out / f"report_{config}.json").read_text())
            assert len(payload["fold_auc"]) == 3
            hashes.add(payload["fold_hash"])
        assert len(hashes) == 1  # same seed, same folds

    def test_unknown_config_in_list(self, data_dir, tmp_path):
        code = run("eval", "--data", data_dir, "--configs", "klsda0,nope",
                   "--folds", 3, "--t-max", 10, "--out", tmp_path / "e",
                   "--quiet")
        assert code == 2


class TestBetaplot:
    def test_roundtrip_reconstructs_beta(self, data_dir, tmp_path):
        fit_out = tmp_path / "fit"
        run("fit", "--data", data_dir, "--config", "klsda1",
            "--lambda2-grid", "1e-8:1e-1:3", "--t-max", 10,
            "--out", fit_out, "--quiet")
        payload = json.loads((fit_out / "model.json").read_text())
        out = tmp_path / "bp"
        assert run("betaplot", "--model", fit_out / "model.json", "--svg",
                   "--out", out, "--quiet") == 0
        rows = read_csv(out / "beta.csv")
        assert rows[0] == ["index", "channel", "time_index", "value"]
        rebuilt = {int(r[0]): float(r[3]) for r in rows[1:]}
        expected = dict(zip(payload["beta"][0]["indices"],
                            payload["beta"][0]["values"]))
        assert rebuilt == expected
        T = payload["n_times"]
        for r in rows[1:]:
            assert int(r[1]) == int(r[0]) // T
            assert int(r[2]) == int(r[0]) % T
        svg = (out / "beta.svg").read_text()
        assert f"({len(expected)})" in svg

    def test_zero_model_gives_header_only(self, tmp_path):
        model = {
            "config_id": "KLSDA0", "q": 1, "beta": [{"indices": [], "values": []}],
            "n_channels": 2, "n_times": 4,
        }
        path = tmp_path / "model.json"
        path.write_text(json.dumps(model))
        out = tmp_path / "bp"
        assert run("betaplot", "--model", path, "--out", out, "--quiet") == 0
        assert read_csv(out / "beta.csv") == [["index", "channel", "time_index", "value"]]

    def test_missing_model_is_data_error(self, tmp_path):
        assert run("betaplot", "--model", tmp_path / "none.json",
                   "--out", tmp_path / "o", "--quiet") == 2


class TestLockAndUsage:
    def test_locked_output_dir(self, data_dir, tmp_path):
        out = tmp_path / "locked"
        out.mkdir()
        (out / ".klsda.lock").touch()
        code = run("klmap", "--data", data_dir, "--out", out, "--quiet")
        assert code == 2

    def test_lock_released_after_run(self, data_dir, tmp_path):
        out = tmp_path / "m"
        assert run("klmap", "--data", data_dir, "--out", out, "--quiet") == 0
        assert not (out / ".klsda.lock").exists()
        assert run("klmap", "--data", data_dir, "--out", out, "--quiet") == 0

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as exc:
            main(["fit", "--data"])
        assert exc.value.code == 1

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["transmogrify"])
        assert exc.value.code == 1


class TestBench:
    def test_writes_all_configs(self, data_dir, tmp_path):
        out = tmp_path / "bench"
        code = run("bench", "--data", data_dir, "--folds", 3, "--seed", 11,
                   "--lambda2-grid", "1e-8:1e-1:3", "--t-max", 10,
                   "--out", out, "--quiet")
        assert code == 0
        rows = read_csv(out / "summary.csv")
        assert [r[0] for r in rows[1:]] == ["klsda0", "klsda1", "klsda2",
                                            "klsda3", "flda"]
