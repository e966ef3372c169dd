import filecmp
import json
import subprocess
import sys
import threading
from pathlib import Path

import numpy as np
import pytest

from csp_explain.cli import main
from csp_explain.data import GridShape
from csp_explain.errors import ConfigInvalid
from csp_explain.external import serve, synthetic_handler
from csp_explain.forecaster import SyntheticModelParams
from csp_explain.pipeline import PipelineConfig
from csp_explain.synthgen import PlantedRegimeSpec, generate_archive

PARAMS = SyntheticModelParams(n0=0.4, precipitation=(-0.002, 0.02), temperature=(0.0, 0.003))
VARS = ("r", "p", "t_avg", "t_min", "t_max")


@pytest.fixture(scope="module")
def archive(tmp_path_factory):
    path = tmp_path_factory.mktemp("arch") / "archive"
    spec = PlantedRegimeSpec(noise_sd=0.0, samples_per_regime=4, grid=GridShape(30, 4, 3, 3))
    generate_archive(spec, 0, path)
    return path


def write_config(path, archive, **extra):
    cfg = {"archive": str(archive), "k_min": 2, "k_max": 3, "synthetic": PARAMS.to_dict(), **extra}
    path.write_text(json.dumps(cfg))
    return path


def tree(root):
    return sorted(str(p.relative_to(root)) for p in Path(root).rglob("*") if p.is_file())


def same_tree(a, b):
    files = tree(a)
    assert files == tree(b)
    _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
    return not mismatch and not errors


class TestConfig:
    def test_precedence(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", "x", gamma=0.5, seed=3)
        c = PipelineConfig.load(cfg, {"seed": 7, "gamma": None})
        assert (c.seed, c.gamma, c.k_max, c.jobs) == (7, 0.5, 3, 1)

    def test_lambda_key(self):
        assert PipelineConfig.from_mapping({"lambda": 0.25}).lam == 0.25

    def test_unknown_key(self):
        with pytest.raises(ConfigInvalid):
            PipelineConfig.from_mapping({"gama": 1.0})

    @pytest.mark.parametrize("bad", [{"k_min": 1}, {"k_min": 5, "k_max": 4}, {"gamma": 0}, {"model": "x"},
                                     {"model": "external"}, {"jobs": 0}])
    def test_invalid(self, bad):
        with pytest.raises(ConfigInvalid):
            PipelineConfig.from_mapping(bad)

    def test_exit_code_for_bad_config(self, tmp_path, archive):
        assert main(["cluster", "--archive", str(archive), "--out", str(tmp_path), "--k-min", "1"]) == 2


class TestStages:
    def test_cluster_outputs(self, tmp_path, archive):
        cfg = write_config(tmp_path / "c.json", archive)
        assert main(["cluster", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
        out = tmp_path / "out"
        for sub in ("models", "scores", "centroids"):
            assert sorted(p.stem for p in (out / sub).iterdir()) == sorted(VARS)
        for v in VARS:
            assert json.loads((out / "models" / f"{v}.json").read_text())["k"] == 2
            rows = (out / "scores" / f"{v}.csv").read_text().splitlines()
            assert len(rows) == 3

    def test_missing_prerequisites(self, tmp_path, archive):
        args = ["--archive", str(archive), "--out", str(tmp_path)]
        assert main(["segregate", *args]) == 3
        assert main(["sensitivity", *args]) == 3
        assert main(["correlation", *args]) == 3

    def test_missing_manifest(self, tmp_path):
        assert main(["cluster", "--archive", str(tmp_path), "--out", str(tmp_path / "o")]) == 3

    def test_stagewise_equals_all(self, tmp_path, archive):
        cfg = write_config(tmp_path / "c.json", archive)
        for verb in ("cluster", "segregate", "sensitivity", "correlation"):
            assert main([verb, "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert main(["all", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
        assert same_tree(tmp_path / "a", tmp_path / "b")

    def test_all_twice_identical_and_stage_rerun(self, tmp_path, archive):
        cfg = write_config(tmp_path / "c.json", archive)
        for out in ("a", "b"):
            assert main(["all", "--config", str(cfg), "--out", str(tmp_path / out)]) == 0
        assert same_tree(tmp_path / "a", tmp_path / "b")
        names = tree(tmp_path / "a")
        for want in ("segments.json", "segments.csv", "ndvi_curves.csv", "sensitivity.csv",
                     "sensitivity_global.csv", "correlation_points.csv", "correlation_fits.csv",
                     "correlation_curves.csv", "config.json"):
            assert want in names
        # delete the analysis outputs and regenerate them from the cached segments alone
        for f in ("sensitivity.csv", "sensitivity_global.csv", "ndvi_curves.csv"):
            (tmp_path / "a" / f).unlink()
        assert main(["sensitivity", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert same_tree(tmp_path / "a", tmp_path / "b")

    def test_cache_reused_across_grid_change(self, tmp_path, archive):
        cfg = write_config(tmp_path / "c.json", archive)
        out = tmp_path / "o"
        assert main(["all", "--config", str(cfg), "--out", str(out)]) == 0
        (entry,) = (out / ".cache" / "cluster").iterdir()
        stamp = (entry / "models" / "r.json").stat().st_mtime_ns
        cfg2 = write_config(tmp_path / "c2.json", archive, perturbation_grid={"precipitation": [-1, 0, 1, 2]})
        assert main(["all", "--config", str(cfg2), "--out", str(out)]) == 0
        assert [p.name for p in (out / ".cache" / "cluster").iterdir()] == [entry.name]
        assert (entry / "models" / "r.json").stat().st_mtime_ns == stamp
        rows = [r for r in (out / "correlation_points.csv").read_text().splitlines() if ",precipitation," in r]
        assert len(rows) == 4 * len(json.loads((out / "segments.json").read_text()))

    def test_config_json_has_no_out(self, tmp_path, archive):
        cfg = write_config(tmp_path / "c.json", archive)
        main(["all", "--config", str(cfg), "--out", str(tmp_path / "o")])
        written = json.loads((tmp_path / "o" / "config.json").read_text())
        assert "out" not in written and written["k_max"] == 3


def test_synth_gen_verb(tmp_path):
    args = ["synth-gen", "--seed", "2", "--noise-sd", "0", "--samples-per-regime", "3", "--height", "2",
            "--width", "2"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")
    labels = json.loads((tmp_path / "a" / "labels.json").read_text())
    assert len(labels["sample_ids"]) == 6 and labels["spec"]["grid"]["h"] == 2


def test_console_module(tmp_path):
    res = subprocess.run([sys.executable, "-m", "csp_explain", "plot", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 3 and "MissingArtifact" in res.stderr


def test_external_model_matches_synthetic(tmp_path, archive):
    cfg = write_config(tmp_path / "c.json", archive)
    assert main(["all", "--config", str(cfg), "--out", str(tmp_path / "syn")]) == 0
    ex = tmp_path / "ex"
    workers = [threading.Thread(target=serve, args=(ex, synthetic_handler(PARAMS)),
                                kwargs={"idle_timeout_s": 2.0}) for _ in range(2)]
    for w in workers:
        w.start()
    try:
        rc = main(["all", "--config", str(cfg), "--out", str(tmp_path / "ext"), "--model", "external",
                   "--exchange-dir", str(ex), "--jobs", "2", "--timeout-s", "30"])
    finally:
        for w in workers:
            w.join(10)
    assert rc == 0
    # the worker ships float32 bands, so compare the curves loosely
    a = np.genfromtxt(tmp_path / "syn" / "ndvi_curves.csv", delimiter=",", skip_header=1, usecols=4)
    b = np.genfromtxt(tmp_path / "ext" / "ndvi_curves.csv", delimiter=",", skip_header=1, usecols=4)
    assert a.shape == b.shape and np.max(np.abs(a - b)) < 1e-6
