"""Segment NDVI curves, marginal sensitivity and correlation curve fitting."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from .data import Dataset, Quantity, downsample_channel, normalized_to_physical
from .errors import AllFitsFailed, EmptySegment, TooFewPoints
from .forecaster import Forecaster, forecast, ndvi
from .perturbation import PerturbationGrid, PerturbationSpec, perturb
from .segmentation import WeatherSegment

FAMILIES = ("poly2", "exponential", "logarithmic", "sinusoidal", "gaussian")
COEFF_NAMES = ("a", "b", "c", "d")
STANDARD_RANGES = {
    Quantity.TEMPERATURE: (0.0, 35.0),
    Quantity.PRESSURE: (990.0, 1040.0),
    Quantity.PRECIPITATION: (-2.0, 12.0),
}
# channel whose mean stands for each quantity
QUANTITY_CHANNEL = {Quantity.TEMPERATURE: "t_avg", Quantity.PRESSURE: "p", Quantity.PRECIPITATION: "r"}
LM_MAX_ITER = 200
LM_XTOL = 1e-10


@dataclass(frozen=True)
class SegmentNdviCurve:
    key: tuple
    variable: Quantity
    offset: float
    curve: np.ndarray
    n_samples: int


def _members(segment: WeatherSegment, dataset: Dataset):
    if not segment.member_ids:
        raise EmptySegment(f"segment {segment.label} has no members")
    return [dataset.get(sid) for sid in sorted(segment.member_ids)]


def segment_ndvi_curve(segment, dataset, forecaster: Forecaster, variable, offset,
                       grid: PerturbationGrid | None = None) -> SegmentNdviCurve:
    """Mean over members of the per-timestep spatial-mean NDVI at one offset.

    Only ``variable`` is perturbed; members are visited in id order.
    """
    q = Quantity(variable)
    spec = PerturbationSpec(q, offset)
    rows = []
    for s in _members(segment, dataset):
        field_ = ndvi(forecast(forecaster, perturb(s, spec, grid)))
        rows.append(field_.mean(axis=(1, 2)))
    curve = np.mean(np.stack(rows), axis=0)
    return SegmentNdviCurve(segment.key, q, float(offset), curve, len(rows))


def segment_curves(segment, dataset, forecaster, variable, grid: PerturbationGrid) -> list[SegmentNdviCurve]:
    """One curve per offset of ``grid`` for ``variable``, in grid order."""
    return [segment_ndvi_curve(segment, dataset, forecaster, variable, off, grid)
            for off in grid.offsets(variable)]


def sensitivity_from_curves(curves: Sequence[SegmentNdviCurve]) -> float:
    """Mean over unordered offset pairs of ``mean|c_a - c_b| / |a - b|``."""
    if len(curves) < 2:
        raise ValueError("need curves at two or more offsets")
    quotients = [
        float(np.mean(np.abs(ca.curve - cb.curve))) / abs(ca.offset - cb.offset)
        for ca, cb in itertools.combinations(curves, 2)
    ]
    return float(np.mean(quotients))


def local_sensitivity(segment, dataset, forecaster, variable, grid: PerturbationGrid) -> float:
    """Marginal NDVI sensitivity of one segment, in NDVI per physical unit."""
    return sensitivity_from_curves(segment_curves(segment, dataset, forecaster, variable, grid))


def global_sensitivity(values, cardinalities) -> tuple[float, float]:
    """Cardinality-weighted mean and weighted (population) standard deviation."""
    s = np.asarray(values, dtype=np.float64)
    w = np.asarray(cardinalities, dtype=np.float64)
    if s.size == 0 or s.shape != w.shape:
        raise ValueError("need one cardinality per sensitivity and at least one segment")
    mean = float(np.sum(s * w) / np.sum(w))
    sd = float(np.sqrt(np.sum(w * (s - mean) ** 2) / np.sum(w)))
    # the weighted mean of identical values must not drift outside them
    return min(max(mean, float(s.min())), float(s.max())), sd


def segment_mean_value(segment, dataset, variable) -> float:
    """Member mean of the variable in physical units (temperature from t_avg)."""
    q = Quantity(variable)
    ch = QUANTITY_CHANNEL[q]
    means = [downsample_channel(s.channel(ch)).mean() for s in _members(segment, dataset)]
    return float(normalized_to_physical(float(np.mean(means)), q))


@dataclass(frozen=True)
class CorrelationPoints:
    x: np.ndarray
    y: np.ndarray


def points_from_curves(curves: Sequence[SegmentNdviCurve], base: float) -> CorrelationPoints:
    x = np.array([base + c.offset for c in curves])
    y = np.array([float(np.median(c.curve)) for c in curves])
    return CorrelationPoints(x, y)


def correlation_points(segment, dataset, forecaster, variable, grid: PerturbationGrid) -> CorrelationPoints:
    """Points ``(mean value + b, median of the curve at offset b)`` per grid offset."""
    curves = segment_curves(segment, dataset, forecaster, variable, grid)
    return points_from_curves(curves, segment_mean_value(segment, dataset, variable))


# curve fitting

@dataclass(frozen=True)
class FitResult:
    """One fitted family.

    Forms, with coefficient names ``a, b, c, d``:

    * ``poly2``: ``a x^2 + b x + c``
    * ``exponential``: ``a exp(b (x - d)) + c`` (``d`` fixed at the mean of x)
    * ``logarithmic``: ``a ln(x - d) + c`` (``b`` unused)
    * ``sinusoidal``: ``a sin(b x + d) + c``
    * ``gaussian``: ``a exp(-(x - b)^2 / (2 d^2)) + c``
    """

    family: str
    coefficients: Mapping[str, float]
    rss: float
    n_points: int
    converged: bool = True
    message: str = ""

    def __call__(self, x) -> np.ndarray:
        return evaluate(self.family, self.coefficients, x)


@dataclass(frozen=True)
class FitReport:
    best: FitResult
    fits: tuple[FitResult, ...] = field(default_factory=tuple)


def evaluate(family: str, coeffs: Mapping[str, float], x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    a, b, c, d = (coeffs.get(k, 0.0) for k in COEFF_NAMES)
    if family == "poly2":
        return (a * x + b) * x + c
    if family == "exponential":
        return a * np.exp(b * (x - d)) + c
    if family == "logarithmic":
        with np.errstate(invalid="ignore", divide="ignore"):
            return a * np.log(x - d) + c
    if family == "sinusoidal":
        return a * np.sin(b * x + d) + c
    if family == "gaussian":
        return a * np.exp(-((x - b) ** 2) / (2 * d * d)) + c
    raise ValueError(f"unknown family {family!r}")


def fit_poly2(x, y) -> FitResult:
    """Least squares parabola via an orthogonal factorization on standardized x."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = x.mean()
    s = x.std() or 1.0
    u = (x - m) / s
    try:
        coef, *_ = np.linalg.lstsq(np.column_stack([u * u, u, np.ones_like(u)]), y, rcond=None)
    except np.linalg.LinAlgError as exc:
        return FitResult("poly2", {k: float("nan") for k in "abc"}, float("inf"), x.size, False, str(exc))
    al, be, ga = coef
    a = al / (s * s)
    b = be / s - 2.0 * al * m / (s * s)
    c = ga - be * m / s + al * m * m / (s * s)
    coeffs = {"a": float(a), "b": float(b), "c": float(c)}
    r = y - evaluate("poly2", coeffs, x)
    rss = float(r @ r)
    if not (math.isfinite(rss) and all(math.isfinite(v) for v in coeffs.values())):
        return FitResult("poly2", coeffs, float("inf"), x.size, False, "non-finite solution")
    return FitResult("poly2", coeffs, rss, x.size)


class _Family:
    """Residual model for a nonlinear family: unpacks free parameters into coefficients."""

    def __init__(self, name, x, y):
        self.name, self.x, self.y = name, x, y
        self.xm = float(x.mean())
        self.span = float(np.ptp(x)) or 1.0

    def coeffs(self, p) -> dict:
        if self.name == "exponential":
            return {"a": p[0], "b": p[1], "c": p[2], "d": self.xm}
        if self.name == "logarithmic":
            return {"a": p[0], "c": p[1], "d": float(self.x.min()) - math.exp(p[2])}
        return dict(zip(("a", "b", "c", "d"), p))

    def residual(self, p):
        return evaluate(self.name, self.coeffs(p), self.x) - self.y

    def jacobian(self, p):
        x = self.x
        if self.name == "exponential":
            e = np.exp(p[1] * (x - self.xm))
            return np.column_stack([e, p[0] * (x - self.xm) * e, np.ones_like(x)])
        if self.name == "logarithmic":
            d = float(x.min()) - math.exp(p[2])
            return np.column_stack([np.log(x - d), np.ones_like(x), p[0] * math.exp(p[2]) / (x - d)])
        if self.name == "sinusoidal":
            a, b, _, d = p
            arg = b * x + d
            return np.column_stack([np.sin(arg), a * x * np.cos(arg), np.ones_like(x), a * np.cos(arg)])
        a, b, _, d = p
        g = np.exp(-((x - b) ** 2) / (2 * d * d))
        return np.column_stack([g, a * g * (x - b) / (d * d), np.ones_like(x), a * g * (x - b) ** 2 / d ** 3])

    def initial(self) -> np.ndarray:
        x, y = self.x, self.y
        yr = float(np.ptp(y)) or 1.0
        if self.name == "exponential":
            slope = np.polyfit(x - self.xm, y, 1)[0] if x.size > 1 else 0.0
            b = math.copysign(1.0 / self.span, slope if slope else 1.0)
            a = slope / b if slope else yr
            return np.array([a, b, float(y.mean()) - a])
        if self.name == "logarithmic":
            u = math.log(self.span)
            lx = np.log(x - (x.min() - self.span))
            a, c = np.polyfit(lx, y, 1)
            return np.array([a, c, u])
        if self.name == "sinusoidal":
            return np.array([yr / 2, np.pi / self.span, float(y.mean()), 0.0])
        med = float(np.median(y))
        i = int(np.argmax(np.abs(y - med)))
        return np.array([y[i] - med, x[i], med, self.span / 4])


def fit_family(family: str, x, y) -> FitResult:
    """Fit one family; failures come back with ``converged=False``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if family == "poly2":
        return fit_poly2(x, y)
    model = _Family(family, x, y)
    nan = {k: float("nan") for k in COEFF_NAMES}
    try:
        with np.errstate(all="ignore"):
            sol = least_squares(model.residual, model.initial(), jac=model.jacobian, method="lm",
                                xtol=LM_XTOL, max_nfev=LM_MAX_ITER)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return FitResult(family, nan, float("inf"), x.size, False, str(exc))
    coeffs = {k: float(v) for k, v in model.coeffs(sol.x).items()}
    r = model.residual(sol.x)
    rss = float(r @ r)
    ok = sol.status > 0 and np.all(np.isfinite(sol.x)) and math.isfinite(rss)
    return FitResult(family, coeffs, rss if ok else float("inf"), x.size, bool(ok), sol.message)


TIE_RTOL = 1e-12


def fit_curves(x, y=None, families: Sequence[str] = FAMILIES) -> FitReport:
    """Fit every family to the points and pick the lowest-RSS converged one.

    ``x`` may be a :class:`CorrelationPoints`. RSS values that differ by no
    more than ``TIE_RTOL`` times the total sum of squares count as ties,
    which go to the earlier family in ``families``; otherwise round-off
    decides between fits that are exact up to rounding.
    """
    if isinstance(x, CorrelationPoints):
        x, y = x.x, x.y
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 4 or x.shape != y.shape:
        raise TooFewPoints(f"need at least 4 matching points, got {x.size}")
    fits = tuple(fit_family(f, x, y) for f in families)
    ok = [f for f in fits if f.converged]
    if not ok:
        raise AllFitsFailed("no curve family converged")
    floor = min(f.rss for f in ok) + TIE_RTOL * float(y @ y)
    best = next(f for f in ok if f.rss <= floor)
    return FitReport(best, fits)


def standardize_curve(fit: FitResult, variable, n: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate ``fit`` on ``n`` evenly spaced points over the variable's standard range."""
    lo, hi = STANDARD_RANGES[Quantity(variable)]
    xs = np.linspace(lo, hi, n)
    return xs, fit(xs)


# reports

def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def write_sensitivity_csv(rows, path) -> None:
    """``rows``: iterable of ``(segment_key, variable, sensitivity, cardinality)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_key", "variable", "sensitivity", "cardinality"])
        for key, var, s, n in rows:
            w.writerow([key, Quantity(var).value, _fmt(s), int(n)])


def write_global_sensitivity_csv(rows, path) -> None:
    """``rows``: iterable of ``(variable, mean, sd)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", "sensitivity", "sd", "unit"])
        for var, mean, sd in rows:
            q = Quantity(var)
            w.writerow([q.value, _fmt(mean), _fmt(sd), f"per {q.unit}"])


def write_fits_csv(rows, path) -> None:
    """``rows``: iterable of ``(segment_key, variable, FitReport)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_key", "variable", "family", *COEFF_NAMES, "rss", "n_points", "status", "best"])
        for key, var, report in rows:
            for f in report.fits:
                w.writerow([
                    key, Quantity(var).value, f.family,
                    *(_fmt(f.coefficients.get(k)) for k in COEFF_NAMES),
                    _fmt(f.rss) if f.converged else "",
                    f.n_points,
                    "ok" if f.converged else "failed",
                    int(f is report.best),
                ])
