"""Forecaster contract, the synthetic planted-law forecaster, and NDVI."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Mapping, Protocol

import numpy as np

from .data import GridShape, Quantity, Sample, downsample_channel, normalized_to_physical
from .errors import ConfigInvalid, ShapeMismatch

NDVI_EPS = 1e-8
BANDS = ("r", "g", "b", "nir")

# physical ranges the synthetic law must keep NDVI inside (-1, 1) over:
# the standard plotting ranges widened by the default perturbation grids
DEFAULT_VALID_RANGES = {
    Quantity.TEMPERATURE: (-10.0, 55.0),
    Quantity.PRESSURE: (960.0, 1070.0),
    Quantity.PRECIPITATION: (-4.0, 22.0),
}


@dataclass(frozen=True)
class Forecast:
    r: np.ndarray
    g: np.ndarray
    b: np.ndarray
    nir: np.ndarray

    def __post_init__(self):
        shapes = {band: np.shape(getattr(self, band)) for band in BANDS}
        if len(set(shapes.values())) != 1 or len(shapes["r"]) != 3:
            raise ShapeMismatch("<forecast>", f"band shapes differ: {shapes}")

    @property
    def shape(self):
        return np.shape(self.r)


class Forecaster(Protocol):
    grid: GridShape

    def forecast(self, sample: Sample) -> Forecast: ...


def forecast(model: Forecaster, sample: Sample) -> Forecast:
    """Run ``model`` on ``sample`` after checking the sample against the model grid."""
    if sample.shape != model.grid.weather_shape:
        raise ShapeMismatch(sample.id, f"weather shape {sample.shape} != {model.grid.weather_shape}")
    out = model.forecast(sample)
    if out.shape != model.grid.forecast_shape:
        raise ShapeMismatch(sample.id, f"forecast shape {out.shape} != {model.grid.forecast_shape}")
    return out


def ndvi(fc: Forecast, eps: float = NDVI_EPS) -> np.ndarray:
    """Elementwise ``(nir - r) / (nir + r)``; 0 where ``|nir + r| < eps``."""
    nir = np.asarray(fc.nir, dtype=np.float64)
    red = np.asarray(fc.r, dtype=np.float64)
    den = nir + red
    small = np.abs(den) < eps
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (nir - red) / np.where(small, 1.0, den)
    return np.where(small, 0.0, out)


def _quadratic_extrema(a: float, b: float, lo: float, hi: float) -> tuple[float, float]:
    xs = [lo, hi]
    if a != 0.0 and lo < -b / (2 * a) < hi:
        xs.append(-b / (2 * a))
    vals = [a * x * x + b * x for x in xs]
    return min(vals), max(vals)


@dataclass(frozen=True)
class SyntheticModelParams:
    """Planted NDVI law ``n0 + sum_v a_v x_v**2 + b_v x_v``.

    ``x_v`` is the sample's mean temperature (degC, from ``t_avg``),
    pressure (hPa) or precipitation (mm). Each quantity maps to ``(a, b)``.
    ``lag`` ramps the response in linearly over the first forecast steps;
    ``noise_sd`` adds per-pixel Gaussian noise seeded by ``seed`` and the
    sample id.
    """

    n0: float = 0.5
    temperature: tuple[float, float] = (0.0, 0.0)
    pressure: tuple[float, float] = (0.0, 0.0)
    precipitation: tuple[float, float] = (0.0, 0.0)
    lag: int = 0
    noise_sd: float = 0.0
    seed: int = 0
    valid_ranges: Mapping[Quantity, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_VALID_RANGES)
    )

    def __post_init__(self):
        for q in Quantity:
            object.__setattr__(self, q.value, tuple(float(c) for c in getattr(self, q.value)))
        object.__setattr__(
            self, "valid_ranges", {Quantity(k): tuple(map(float, v)) for k, v in self.valid_ranges.items()}
        )
        if self.lag < 0 or self.noise_sd < 0:
            raise ConfigInvalid("synthetic", "lag and noise_sd must be non-negative")
        lo, hi = self.n0, self.n0
        for q in Quantity:
            a, b = self.coefficients(q)
            if q not in self.valid_ranges:
                # quantities without a stated range are left unchecked
                continue
            mn, mx = _quadratic_extrema(a, b, *self.valid_ranges[q])
            lo, hi = lo + mn, hi + mx
        if self.lag > 0:
            # a lagged curve passes through n0 on its way to the planted level
            lo, hi = min(lo, self.n0), max(hi, self.n0)
        if not (-1.0 < lo and hi < 1.0):
            raise ConfigInvalid(
                "synthetic", f"planted NDVI spans [{lo:.4g}, {hi:.4g}] over the valid ranges, outside (-1, 1)"
            )

    def coefficients(self, quantity) -> tuple[float, float]:
        return getattr(self, Quantity(quantity).value)

    def law(self, means: Mapping) -> float:
        """Planted NDVI for physical means keyed by quantity."""
        total = self.n0
        for q in Quantity:
            a, b = self.coefficients(q)
            x = float(means[Quantity(q)] if Quantity(q) in means else means[q.value])
            total += a * x * x + b * x
        return total

    def to_dict(self) -> dict:
        return {
            "n0": self.n0,
            **{q.value: list(self.coefficients(q)) for q in Quantity},
            "lag": self.lag,
            "noise_sd": self.noise_sd,
            "seed": self.seed,
            "valid_ranges": {q.value: list(r) for q, r in self.valid_ranges.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticModelParams":
        kw = {k: d[k] for k in ("n0", "lag", "noise_sd", "seed") if k in d}
        for q in Quantity:
            if q.value in d:
                kw[q.value] = tuple(d[q.value])
        if "valid_ranges" in d:
            ranges = dict(DEFAULT_VALID_RANGES)
            ranges.update({Quantity(k): tuple(v) for k, v in d["valid_ranges"].items()})
            kw["valid_ranges"] = ranges
        return cls(**kw)


def sample_means(sample: Sample) -> dict[Quantity, float]:
    """Mean physical temperature (t_avg), pressure and precipitation of a sample."""
    return {
        Quantity.TEMPERATURE: float(normalized_to_physical(downsample_channel(sample.t_avg).mean(), Quantity.TEMPERATURE)),
        Quantity.PRESSURE: float(normalized_to_physical(downsample_channel(sample.p).mean(), Quantity.PRESSURE)),
        Quantity.PRECIPITATION: float(normalized_to_physical(downsample_channel(sample.r).mean(), Quantity.PRECIPITATION)),
    }


def synthetic_forecast(params: SyntheticModelParams, sample: Sample, grid: GridShape) -> Forecast:
    """Forecast whose NDVI realizes the planted law for this sample's mean weather."""
    level = params.law(sample_means(sample))
    t = np.arange(grid.t_out)
    weight = np.minimum(1.0, (t + 1) / (params.lag + 1))
    curve = params.n0 + weight * (level - params.n0)
    field_ = np.broadcast_to(curve[:, None, None], grid.forecast_shape).astype(np.float64)
    if params.noise_sd > 0:
        rng = np.random.default_rng([params.seed, zlib.crc32(sample.id.encode())])
        field_ = field_ + params.noise_sd * rng.standard_normal(grid.forecast_shape)
    quarter = np.full(grid.forecast_shape, 0.25)
    return Forecast(r=(1.0 - field_) / 2.0, g=quarter, b=quarter.copy(), nir=(1.0 + field_) / 2.0)


@dataclass
class SyntheticForecaster:
    params: SyntheticModelParams
    grid: GridShape

    def forecast(self, sample: Sample) -> Forecast:
        return synthetic_forecast(self.params, sample, self.grid)
