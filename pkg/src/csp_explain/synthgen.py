"""Synthetic archives with planted weather regimes.

Every sample's weather channels are spatially constant fields that follow a
(noisy) copy of one base temporal pattern per channel. Regime labels are
written next to the archive as ``labels.json`` so clustering and
segregation can be checked against ground truth.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import WEATHER_CHANNELS, Dataset, GridShape, Sample, write_archive
from .errors import SpecInvalid
from .metrics import dtw

PATTERN_KINDS = ("sinusoid", "ramp", "step", "constant")
SEGMENT_ORDER = ("r", "p", "t_avg", "t_min", "t_max")


@dataclass(frozen=True)
class Pattern:
    """A base temporal pattern in normalized units.

    ``kind`` is one of ``sinusoid`` (mean, amplitude, periods, phase),
    ``ramp`` (start, stop), ``step`` (low, high, at) or ``constant`` (value).
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise SpecInvalid(f"unknown pattern kind {self.kind!r}")

    def values(self, length: int) -> np.ndarray:
        """Pattern sampled at ``length`` steps, rounded to float32 precision."""
        p = self.params
        u = np.arange(length) / max(length - 1, 1)
        if self.kind == "sinusoid":
            v = p.get("mean", 0.5) + p.get("amplitude", 0.2) * np.sin(
                2 * np.pi * p.get("periods", 1.0) * u + p.get("phase", 0.0)
            )
        elif self.kind == "ramp":
            v = p.get("start", 0.3) + (p.get("stop", 0.7) - p.get("start", 0.3)) * u
        elif self.kind == "step":
            v = np.where(u < p.get("at", 0.5), p.get("low", 0.3), p.get("high", 0.7))
        else:
            v = np.full(length, p.get("value", 0.5))
        return v.astype(np.float32).astype(np.float64)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **{k: float(v) for k, v in sorted(self.params.items())}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Pattern":
        d = dict(d)
        return cls(d.pop("kind"), {k: float(v) for k, v in d.items()})


def sinusoid(mean=0.5, amplitude=0.2, periods=1.0, phase=0.0) -> Pattern:
    return Pattern("sinusoid", {"mean": mean, "amplitude": amplitude, "periods": periods, "phase": phase})


def ramp(start=0.3, stop=0.7) -> Pattern:
    return Pattern("ramp", {"start": start, "stop": stop})


def step(low=0.3, high=0.7, at=0.5) -> Pattern:
    return Pattern("step", {"low": low, "high": high, "at": at})


def constant(value=0.5) -> Pattern:
    return Pattern("constant", {"value": value})


def default_patterns() -> dict[str, list[Pattern]]:
    """Two plausible regimes per channel, in normalized units.

    Temperatures sit near 0.7 (20 degC), pressure near 0.6 (1020 hPa) and
    precipitation near 0.03 (1.5 mm).
    """
    return {
        "t_avg": [constant(0.7), sinusoid(0.7, 0.25)],
        "t_min": [ramp(0.4, 0.8), constant(0.5)],
        "t_max": [sinusoid(0.8, 0.2, phase=np.pi / 2), ramp(0.95, 0.65)],
        "p": [constant(0.6), step(0.45, 0.75)],
        "r": [constant(0.03), step(0.02, 0.35, at=0.4)],
    }


@dataclass(frozen=True)
class PlantedRegimeSpec:
    patterns: Mapping[str, Sequence[Pattern]] = field(default_factory=default_patterns)
    noise_sd: float = 0.05
    samples_per_regime: int = 40
    grid: GridShape = field(default_factory=lambda: GridShape(30, 20, 8, 8))
    mixed: bool = True
    lam: float = 0.4

    def validate(self) -> None:
        """Raise :class:`SpecInvalid` unless every channel has >= 2 distinguishable patterns."""
        if self.noise_sd < 0 or self.samples_per_regime < 1:
            raise SpecInvalid("noise_sd must be >= 0 and samples_per_regime >= 1")
        for ch in WEATHER_CHANNELS:
            pats = list(self.patterns.get(ch, ()))
            if len(pats) < 2:
                raise SpecInvalid(f"channel {ch!r} needs at least two patterns")
            base = [p.values(self.grid.t_in) for p in pats]
            for i, j in itertools.combinations(range(len(base)), 2):
                d = dtw(base[i], base[j])
                if not d > self.lam:
                    raise SpecInvalid(
                        f"patterns {i} and {j} of {ch!r} are too close (DTW {d:.4g} <= {self.lam})"
                    )

    @property
    def n_samples(self) -> int:
        return self.samples_per_regime * max(len(self.patterns[ch]) for ch in WEATHER_CHANNELS)

    def to_dict(self) -> dict:
        return {
            "patterns": {ch: [p.to_dict() for p in self.patterns[ch]] for ch in WEATHER_CHANNELS},
            "noise_sd": self.noise_sd,
            "samples_per_regime": self.samples_per_regime,
            "grid": self.grid.to_dict(),
            "mixed": self.mixed,
            "lambda": self.lam,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PlantedRegimeSpec":
        kw = {}
        if "patterns" in d:
            kw["patterns"] = {ch: [Pattern.from_dict(p) for p in ps] for ch, ps in d["patterns"].items()}
        if "grid" in d:
            kw["grid"] = GridShape.from_dict(d["grid"])
        for key, attr in (("noise_sd", "noise_sd"), ("samples_per_regime", "samples_per_regime"),
                          ("mixed", "mixed"), ("lambda", "lam")):
            if key in d:
                kw[attr] = d[key]
        return cls(**kw)


def planted_series(patterns: Sequence[Pattern], n_per: int, noise_sd: float, length: int = 30, seed: int = 0):
    """Noisy copies of each pattern, ``n_per`` apiece, with their pattern labels."""
    rng = np.random.default_rng(seed)
    base = np.stack([p.values(length) for p in patterns])
    labels = np.repeat(np.arange(len(patterns)), n_per)
    X = base[labels] + noise_sd * rng.standard_normal((labels.size, length))
    return X, labels


def generate_dataset(spec: PlantedRegimeSpec, seed: int = 0) -> tuple[Dataset, dict]:
    """Build the dataset and ground truth in memory; see :func:`generate_archive`."""
    spec.validate()
    rng = np.random.default_rng(seed)
    g = spec.grid
    n = spec.n_samples
    labels = {}
    for ch in WEATHER_CHANNELS:
        base = np.arange(n) % len(spec.patterns[ch])
        labels[ch] = rng.permutation(base) if spec.mixed else base
    base_values = {ch: np.stack([p.values(g.t_in) for p in spec.patterns[ch]]) for ch in WEATHER_CHANNELS}
    samples = []
    for i in range(n):
        weather = {}
        for ch in WEATHER_CHANNELS:
            series = base_values[ch][labels[ch][i]]
            if spec.noise_sd > 0:
                series = series + spec.noise_sd * rng.standard_normal(g.t_in)
            weather[ch] = np.broadcast_to(series.astype(np.float32)[:, None, None], g.weather_shape).copy()
        dem = rng.uniform(0.0, 1.0, size=(1, g.h, g.w)).astype(np.float32)
        samples.append(Sample(id=f"s{i:05d}", **weather, static_channels={"dem": dem}))
    ids = [s.id for s in samples]
    truth = {
        "sample_ids": ids,
        "regimes": {ch: [int(v) for v in labels[ch]] for ch in WEATHER_CHANNELS},
        "segment_order": list(SEGMENT_ORDER),
        "segments": {sid: [int(labels[ch][i]) for ch in SEGMENT_ORDER] for i, sid in enumerate(ids)},
        "spec": spec.to_dict(),
        "seed": int(seed),
    }
    return Dataset(grid=g, samples=samples, name="synthetic"), truth


def generate_archive(spec: PlantedRegimeSpec, seed: int, path) -> tuple[Dataset, dict]:
    """Write a synthetic archive plus ``labels.json`` to ``path``.

    Deterministic: the same spec and seed give byte-identical files.
    """
    dataset, truth = generate_dataset(spec, seed)
    root = write_archive(dataset, path)
    (root / "labels.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    return dataset, truth


def load_labels(path) -> dict:
    return json.loads((Path(path) / "labels.json").read_text())
