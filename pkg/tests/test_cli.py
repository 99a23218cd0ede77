import json

import numpy as np
import pytest
import yaml

from pcmor.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_WARNINGS,
    OUTPUT_ROOT_ENV,
    ConfigError,
    RunConfig,
    _parse_r_arg,
    bundled_configs,
    load_config,
    main,
    run_pipeline,
)


def small_config(method="galerkin", **extra):
    """Degree-1 scrapie run: m = 6, N = 18, 32 nodes, a few seconds end to end."""
    data = {
        "name": f"small-{method}",
        "method": method,
        "model": {"name": "scrapie"},
        "uq": {"degree": 1},
        "quadrature": {"kind": "tensor", "per_axis": 2},
        "integrator": {"snapshot_tolerances": [1e-4, 1e-6], "tolerances": [1e-3, 1e-6], "grid_points": 50},
        "mor": {"r": [2, 4], "snapshot_points": 60},
        "outputs": {"directory": f"small-{method}", "plots": False},
    }
    data.update(extra)
    return data


def write_config(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


class TestConfig:
    def test_roundtrip(self, tmp_path):
        cfg = RunConfig.from_dict(small_config())
        again = load_config(write_config(tmp_path, yaml.safe_load(cfg.to_yaml())))
        assert again == cfg
        assert again.hash() == cfg.hash()

    def test_defaults(self):
        cfg = RunConfig.from_dict({})
        assert cfg.method == "galerkin" and cfg.mor.r == list(range(2, 31, 2))

    @pytest.mark.parametrize(
        "data",
        [
            {"colour": "red"},
            {"uq": {"degree": 2, "order": 3}},
            {"mor": {"r": {"start": 2, "stop": 6, "stride": 2}}},
            {"method": "spectral"},
            {"uq": {"degree": -1}},
            {"quadrature": {"kind": "sparse", "growth": "cubic"}},
            {"integrator": {"tolerances": [1e-3]}},
            {"mor": {"reuse_multiplier": 0.5}},
            {"uq": [1, 2]},
        ],
    )
    def test_rejected(self, data):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(data)

    def test_r_forms(self):
        assert RunConfig.from_dict({"mor": {"r": {"start": 2, "stop": 8, "step": 3}}}).mor.r == [2, 5, 8]
        assert RunConfig.from_dict({"mor": {"r": 7}}).mor.r == [7]
        assert RunConfig.from_dict({"mor": {"r": [3, 9]}}).mor.r == [3, 9]

    def test_bundled_configs_valid(self):
        configs = bundled_configs()
        assert {"scrapie-galerkin", "amplifier-galerkin", "amplifier-collocation"} <= set(configs)
        for name in configs:
            load_config(name)

    def test_unknown_source(self):
        with pytest.raises(ConfigError):
            load_config("no-such-config")

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("uq: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(path)


@pytest.mark.parametrize(
    "text, want",
    [("2:30:2", list(range(2, 31, 2))), ("5,10,25", [5, 10, 25]), ("4:6", [4, 5, 6]), ("7", [7])],
)
def test_parse_r_arg(text, want):
    assert _parse_r_arg(text) == want


class TestCommands:
    def test_list_configs(self, capsys):
        assert main(["list-configs"]) == EXIT_OK
        assert "scrapie-galerkin" in capsys.readouterr().out

    def test_validate_config(self, tmp_path, capsys):
        assert main(["validate-config", str(write_config(tmp_path, small_config()))]) == EXIT_OK
        out = yaml.safe_load(capsys.readouterr().out)
        assert out["uq"]["degree"] == 1 and out["mor"]["r"] == [2, 4]

    def test_validate_config_error(self, tmp_path, capsys):
        path = write_config(tmp_path, small_config(method="spectral"))
        assert main(["validate-config", str(path)]) == EXIT_CONFIG
        assert "configuration error" in capsys.readouterr().err

    def test_run_config_error(self, tmp_path):
        path = write_config(tmp_path, small_config(model={"name": "no_such_model"}))
        assert main(["--output-root", str(tmp_path), "run", str(path)]) == EXIT_CONFIG


@pytest.fixture(scope="module")
def galerkin_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    manifest = run_pipeline(RunConfig.from_dict(small_config()), output_root=root)
    return root, manifest


class TestPipeline:
    def test_artifacts(self, galerkin_run):
        root, manifest = galerkin_run
        out = root / "small-galerkin"
        assert manifest["directory"] == str(out)
        for name in ("manifest.json", "config.yaml", "summary.json", "quadrature.csv", "singular_values.csv",
                     "statistics.csv", "snapshots.npz", "bounds.csv", "error_table_x1.csv"):
            assert (out / name).exists(), name
        assert all(stage["status"] == "ok" for stage in manifest["stages"])
        summary = json.loads((out / "summary.json").read_text())
        assert summary["N"] == 18 and summary["m"] == 6 and summary["k"] == 32

    def test_error_table(self, galerkin_run):
        root, _ = galerkin_run
        lines = (root / "small-galerkin" / "error_table_x1.csv").read_text().splitlines()
        assert [line.split(",")[:2] for line in lines[1:]] == [["2", "ok"], ["4", "ok"]]
        errs = np.array([[float(v) for v in line.split(",")[2:4]] for line in lines[1:]])
        assert np.all(np.isfinite(errs)) and np.all(errs[:, 1] <= errs[:, 0] + 1e-12)

    def test_manifest_on_disk(self, galerkin_run):
        root, manifest = galerkin_run
        disk = json.loads((root / "small-galerkin" / "manifest.json").read_text())
        assert disk["config_hash"] == manifest["config_hash"]
        assert disk["numeric_hash"] == manifest["numeric_hash"]
        assert set(disk["versions"]) >= {"pcmor", "numpy", "scipy"}

    def test_reproducible(self, galerkin_run, tmp_path):
        _, manifest = galerkin_run
        again = run_pipeline(RunConfig.from_dict(small_config()), output_root=tmp_path)
        assert again["numeric_hash"] == manifest["numeric_hash"]

    def test_plot_verb(self, galerkin_run, capsys):
        pytest.importorskip("matplotlib")
        root, _ = galerkin_run
        assert main(["plot", str(root / "small-galerkin")]) == EXIT_OK
        made = capsys.readouterr().out.split()
        assert "singular_values.png" in made and "statistics.png" in made
        assert (root / "small-galerkin" / "plots" / "error_curve_x1.png").exists()


class TestVerbs:
    def test_sweep_warns_on_large_r(self, tmp_path, capsys):
        path = write_config(tmp_path, small_config())
        code = main(["--output-root", str(tmp_path), "sweep", str(path), "--r", "3,500"])
        assert code == EXIT_WARNINGS
        assert "r=500" in capsys.readouterr().err
        lines = (tmp_path / "small-galerkin" / "error_table_x2.csv").read_text().splitlines()
        assert [line.split(",")[0] for line in lines[1:]] == ["3"]

    def test_reuse(self, tmp_path):
        path = write_config(tmp_path, small_config())
        assert main(["--output-root", str(tmp_path), "reuse", str(path), "--multiplier", "2", "--r", "4"]) == EXIT_OK
        t = np.loadtxt(tmp_path / "small-galerkin" / "statistics.csv", delimiter=",", skiprows=1)[:, 0]
        assert t[-1] == pytest.approx(1000.0)

    def test_env_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
        path = write_config(tmp_path, small_config("collocation"))
        assert main(["run", str(path)]) == EXIT_OK
        summary = json.loads((tmp_path / "small-collocation" / "summary.json").read_text())
        assert summary["k"] == 32 and summary["N"] == 96
