"""Stage orchestration: cluster, segregate, sensitivity, correlation.

Artifacts are written under ``config.out``. Clustering and segregation are
cached under ``out/.cache`` keyed by a hash of the relevant config and the
archive manifest, so reruns with a different perturbation grid reuse them.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import queue
import shutil
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import analysis
from .clustering import DEFAULT_LAMBDA, KMeansModel, sweep_k, write_centroids_csv, write_scores_csv
from .data import MANIFEST, Dataset, GridShape, Quantity, downsample_dataset, load_archive
from .errors import ConfigInvalid, ManifestMissing, MissingPrerequisite
from .external import DEFAULT_TIMEOUT_S, ExternalForecaster
from .forecaster import SyntheticForecaster, SyntheticModelParams
from .perturbation import PerturbationGrid
from .segmentation import KEY_ORDER, read_segments, segregate, write_segments

log = logging.getLogger("csp_explain")

STAGES = ("cluster", "segregate", "sensitivity", "correlation", "all")
MODELS = ("synthetic", "external")


@dataclass
class PipelineConfig:
    archive: str | None = None
    out: str = "out"
    seed: int = 0
    k_min: int = 2
    k_max: int = 15
    gamma: float = 1.0
    lam: float = DEFAULT_LAMBDA
    jobs: int = 1
    max_iter: int = 50
    tol: float = 1e-4
    model: str = "synthetic"
    synthetic: SyntheticModelParams = field(default_factory=SyntheticModelParams)
    exchange_dir: str | None = None
    timeout_s: float = DEFAULT_TIMEOUT_S
    perturbation_grid: PerturbationGrid = field(default_factory=PerturbationGrid)
    grid_shape: GridShape | None = None

    # JSON key -> attribute
    KEYS = {
        "archive": "archive", "out": "out", "seed": "seed", "k_min": "k_min", "k_max": "k_max",
        "gamma": "gamma", "lambda": "lam", "jobs": "jobs", "max_iter": "max_iter", "tol": "tol",
        "model": "model", "synthetic": "synthetic", "exchange_dir": "exchange_dir",
        "timeout_s": "timeout_s", "perturbation_grid": "perturbation_grid", "grid_shape": "grid_shape",
    }

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            ("k_min", self.k_min >= 2, "must be >= 2"),
            ("k_max", self.k_max >= self.k_min, "must be >= k_min"),
            ("gamma", self.gamma > 0 and np.isfinite(self.gamma), "must be positive"),
            ("lambda", np.isfinite(self.lam), "must be finite"),
            ("jobs", self.jobs >= 1, "must be >= 1"),
            ("max_iter", self.max_iter >= 1, "must be >= 1"),
            ("tol", self.tol >= 0, "must be >= 0"),
            ("timeout_s", self.timeout_s > 0, "must be positive"),
            ("model", self.model in MODELS, f"must be one of {MODELS}"),
        ]
        for name, ok, detail in checks:
            if not ok:
                raise ConfigInvalid(name, detail)
        if self.model == "external" and not self.exchange_dir:
            raise ConfigInvalid("exchange_dir", "required for the external model")

    @property
    def k_range(self) -> range:
        return range(self.k_min, self.k_max + 1)

    @classmethod
    def from_mapping(cls, d: Mapping[str, Any]) -> "PipelineConfig":
        unknown = sorted(set(d) - set(cls.KEYS))
        if unknown:
            raise ConfigInvalid(unknown[0], "unknown key")
        kw = {cls.KEYS[k]: v for k, v in d.items() if v is not None}
        try:
            if isinstance(kw.get("synthetic"), Mapping):
                kw["synthetic"] = SyntheticModelParams.from_dict(kw["synthetic"])
            if isinstance(kw.get("perturbation_grid"), Mapping):
                kw["perturbation_grid"] = PerturbationGrid.from_dict(kw["perturbation_grid"])
            if isinstance(kw.get("grid_shape"), Mapping):
                kw["grid_shape"] = GridShape.from_dict(kw["grid_shape"])
            for name in ("seed", "k_min", "k_max", "jobs", "max_iter"):
                if name in kw:
                    kw[name] = int(kw[name])
            for name in ("gamma", "lam", "tol", "timeout_s"):
                if name in kw:
                    kw[name] = float(kw[name])
        except ConfigInvalid:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigInvalid("config", str(exc)) from exc
        return cls(**kw)

    @classmethod
    def load(cls, path=None, overrides: Mapping[str, Any] | None = None) -> "PipelineConfig":
        """Merge defaults < JSON file < ``overrides`` (``None`` values are ignored)."""
        merged: dict[str, Any] = {}
        if path is not None:
            try:
                merged.update(json.loads(Path(path).read_text()))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigInvalid("config", f"cannot read {path}: {exc}") from exc
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(merged)

    def to_dict(self) -> dict:
        return {
            "archive": self.archive, "out": self.out, "seed": self.seed,
            "k_min": self.k_min, "k_max": self.k_max, "gamma": self.gamma, "lambda": self.lam,
            "jobs": self.jobs, "max_iter": self.max_iter, "tol": self.tol, "model": self.model,
            "synthetic": self.synthetic.to_dict(), "exchange_dir": self.exchange_dir,
            "timeout_s": self.timeout_s, "perturbation_grid": self.perturbation_grid.to_dict(),
            "grid_shape": self.grid_shape.to_dict() if self.grid_shape else None,
        }


# helpers

def _archive(config: PipelineConfig) -> Dataset:
    if not config.archive:
        raise ConfigInvalid("archive", "no archive given")
    ds = load_archive(config.archive, jobs=config.jobs)
    if config.grid_shape is not None and config.grid_shape != ds.grid:
        raise ConfigInvalid("grid_shape", f"{config.grid_shape} does not match the archive grid {ds.grid}")
    return ds


def _hash(payload: dict, archive) -> str:
    if not archive:
        raise ConfigInvalid("archive", "no archive given")
    manifest = Path(archive) / MANIFEST
    if not manifest.is_file():
        raise ManifestMissing(f"{manifest} does not exist")
    h = hashlib.sha256(json.dumps(payload, sort_keys=True).encode())
    h.update(manifest.read_bytes())
    return h.hexdigest()[:16]


def cluster_key(config: PipelineConfig) -> str:
    return _hash(
        {"stage": "cluster", "k": [config.k_min, config.k_max], "gamma": config.gamma, "lambda": config.lam,
         "seed": config.seed, "max_iter": config.max_iter, "tol": config.tol},
        config.archive,
    )


def _copy_tree(src: Path, dst: Path, names) -> None:
    for name in names:
        s, d = src / name, dst / name
        if s.is_dir():
            if d.exists():
                shutil.rmtree(d)
            shutil.copytree(s, d)
        else:
            shutil.copyfile(s, d)


@contextmanager
def _staging(final: Path):
    """Build a cache entry in a temporary directory, then move it into place."""
    tmp = final.with_name(final.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    yield tmp
    if final.exists():
        shutil.rmtree(final)
    tmp.rename(final)


def _cache_dir(config: PipelineConfig, stage: str, key: str) -> Path:
    return Path(config.out) / ".cache" / stage / key


# stages

def run_cluster(config: PipelineConfig, dataset: Dataset | None = None) -> dict[str, KMeansModel]:
    """Sweep K for every weather variable; writes models/, scores/, centroids/."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    cache = _cache_dir(config, "cluster", cluster_key(config))
    if not cache.is_dir():
        dataset = dataset or _archive(config)
        k_max = min(config.k_max, len(dataset))
        if k_max < config.k_max:
            log.warning("k_max lowered to %d, the number of samples", k_max)
        with _staging(cache) as tmp:
            for sub in ("models", "scores", "centroids"):
                (tmp / sub).mkdir()
            for var in KEY_ORDER:
                log.info("clustering %s over K=%d..%d", var, config.k_min, k_max)
                model, scores = sweep_k(
                    downsample_dataset(dataset, var), range(config.k_min, k_max + 1),
                    gamma=config.gamma, seed=config.seed, lam=config.lam, jobs=config.jobs,
                    variable=var, max_iter=config.max_iter, tol=config.tol,
                )
                model.save(tmp / "models" / f"{var}.json")
                write_scores_csv(scores, tmp / "scores" / f"{var}.csv")
                write_centroids_csv(model, tmp / "centroids" / f"{var}.csv")
    else:
        log.info("cluster stage: using cache %s", cache.name)
    _copy_tree(cache, out, ("models", "scores", "centroids"))
    return load_models(out)


def load_models(out) -> dict[str, KMeansModel]:
    d = Path(out) / "models"
    missing = [v for v in KEY_ORDER if not (d / f"{v}.json").is_file()]
    if missing:
        raise MissingPrerequisite("segregate", f"no cluster model for {missing}; run `cluster` first")
    return {v: KMeansModel.load(d / f"{v}.json") for v in KEY_ORDER}


def run_segregate(config: PipelineConfig, dataset: Dataset | None = None):
    """Assign every sample its segment key; writes segments.json and segments.csv."""
    out = Path(config.out)
    models = load_models(out)
    digest = hashlib.sha256(b"".join((out / "models" / f"{v}.json").read_bytes() for v in KEY_ORDER))
    key = _hash({"stage": "segregate", "models": digest.hexdigest()}, config.archive)
    cache = _cache_dir(config, "segregate", key)
    if not cache.is_dir():
        dataset = dataset or _archive(config)
        with _staging(cache) as tmp:
            write_segments(segregate(dataset, models), tmp)
    _copy_tree(cache, out, ("segments.json", "segments.csv"))
    return read_segments(out)


def _segments(config: PipelineConfig, stage: str):
    if not (Path(config.out) / "segments.json").is_file():
        raise MissingPrerequisite(stage, "segments.json missing; run `segregate` first")
    return read_segments(config.out)


class _HandlePool:
    """Hands out forecaster handles so each is used by one work item at a time."""

    def __init__(self, handles):
        self._q: queue.Queue = queue.Queue()
        for h in handles:
            self._q.put(h)

    @contextmanager
    def take(self):
        h = self._q.get()
        try:
            yield h
        finally:
            self._q.put(h)


def make_forecasters(config: PipelineConfig, grid: GridShape) -> list:
    if config.model == "synthetic":
        return [SyntheticForecaster(config.synthetic, grid)]
    return [ExternalForecaster(Path(config.exchange_dir), grid, timeout_s=config.timeout_s)
            for _ in range(config.jobs)]


def compute_curves(config: PipelineConfig, dataset: Dataset, segments, forecasters=None):
    """Curves for every (segment, variable), keyed in segment then variable order."""
    grid = config.perturbation_grid
    pool = _HandlePool(forecasters or make_forecasters(config, dataset.grid))
    items = [(seg, q) for seg in segments for q in Quantity]

    def work(item):
        seg, q = item
        with pool.take() as fc:
            return analysis.segment_curves(seg, dataset, fc, q, grid)

    if config.jobs > 1:
        with ThreadPoolExecutor(config.jobs) as ex:
            results = list(ex.map(work, items))
    else:
        results = [work(it) for it in items]
    return {(seg.key, q): curves for (seg, q), curves in zip(items, results)}


def _write_curves_csv(curves, segments, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_key", "variable", "offset", "timestep", "ndvi"])
        for seg in segments:
            for q in Quantity:
                for c in curves[(seg.key, q)]:
                    for t, v in enumerate(c.curve):
                        w.writerow([seg.label, q.value, repr(c.offset), t, repr(float(v))])


def run_sensitivity(config: PipelineConfig, dataset=None, segments=None, curves=None) -> dict:
    """Writes ndvi_curves.csv, sensitivity.csv and sensitivity_global.csv."""
    out = Path(config.out)
    segments = segments if segments is not None else _segments(config, "sensitivity")
    dataset = dataset or _archive(config)
    curves = curves or compute_curves(config, dataset, segments)
    _write_curves_csv(curves, segments, out / "ndvi_curves.csv")
    rows, glob = [], {}
    for q in Quantity:
        vals = [analysis.sensitivity_from_curves(curves[(s.key, q)]) for s in segments]
        rows += [(s.label, q, v, s.cardinality) for s, v in zip(segments, vals)]
        glob[q] = analysis.global_sensitivity(vals, [s.cardinality for s in segments])
    analysis.write_sensitivity_csv(rows, out / "sensitivity.csv")
    analysis.write_global_sensitivity_csv([(q, *glob[q]) for q in Quantity], out / "sensitivity_global.csv")
    return glob


def run_correlation(config: PipelineConfig, dataset=None, segments=None, curves=None) -> list:
    """Writes correlation_points.csv, correlation_fits.csv and correlation_curves.csv."""
    out = Path(config.out)
    segments = segments if segments is not None else _segments(config, "correlation")
    dataset = dataset or _archive(config)
    curves = curves or compute_curves(config, dataset, segments)
    fits = []
    with open(out / "correlation_points.csv", "w", newline="") as pf, \
            open(out / "correlation_curves.csv", "w", newline="") as cf:
        pw = csv.writer(pf, lineterminator="\n")
        cw = csv.writer(cf, lineterminator="\n")
        pw.writerow(["segment_key", "variable", "offset", "x", "y"])
        cw.writerow(["segment_key", "variable", "family", "x", "y"])
        for seg in segments:
            for q in Quantity:
                cs = curves[(seg.key, q)]
                pts = analysis.points_from_curves(cs, analysis.segment_mean_value(seg, dataset, q))
                for c, x, y in zip(cs, pts.x, pts.y):
                    pw.writerow([seg.label, q.value, repr(c.offset), repr(float(x)), repr(float(y))])
                report = analysis.fit_curves(pts)
                fits.append((seg.label, q, report))
                for x, y in zip(*analysis.standardize_curve(report.best, q)):
                    cw.writerow([seg.label, q.value, report.best.family, repr(float(x)), repr(float(y))])
    analysis.write_fits_csv(fits, out / "correlation_fits.csv")
    return fits


def run_stage(stage: str, config: PipelineConfig) -> None:
    """Run one stage (or ``all``) and write its artifacts under ``config.out``."""
    if stage not in STAGES:
        raise ConfigInvalid("stage", f"unknown stage {stage!r}")
    Path(config.out).mkdir(parents=True, exist_ok=True)
    if stage == "cluster":
        run_cluster(config)
    elif stage == "segregate":
        run_segregate(config)
    elif stage == "sensitivity":
        run_sensitivity(config)
    elif stage == "correlation":
        run_correlation(config)
    else:
        dataset = _archive(config)
        run_cluster(config, dataset)
        segments = run_segregate(config, dataset)
        curves = compute_curves(config, dataset, segments)
        run_sensitivity(config, dataset, segments, curves)
        run_correlation(config, dataset, segments, curves)
    # effective config for provenance; the output path itself is left out
    cfg = {k: v for k, v in config.to_dict().items() if k != "out"}
    (Path(config.out) / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
