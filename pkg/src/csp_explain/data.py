"""Sample data model, unit conversions, downsampling and the on-disk archive.

An archive is a directory holding ``manifest.json`` and one little-endian
float32 blob per sample and channel at ``<sample_id>/<channel>.f32``, laid
out row-major as ``(t, h, w)``.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import ManifestMissing, MissingSample, NonFinite, ShapeMismatch

logger = logging.getLogger(__name__)

WEATHER_CHANNELS = ("t_avg", "t_min", "t_max", "p", "r")
BLOB_DTYPE = np.dtype("<f4")
MANIFEST = "manifest.json"


class Quantity(str, enum.Enum):
    TEMPERATURE = "temperature"
    PRESSURE = "pressure"
    PRECIPITATION = "precipitation"

    @property
    def unit(self) -> str:
        return _UNITS[self]

    @property
    def channels(self) -> tuple[str, ...]:
        """Weather channels carrying this quantity."""
        return _CHANNELS[self]


_UNITS = {
    Quantity.TEMPERATURE: "degC",
    Quantity.PRESSURE: "hPa",
    Quantity.PRECIPITATION: "mm",
}
_CHANNELS = {
    Quantity.TEMPERATURE: ("t_avg", "t_min", "t_max"),
    Quantity.PRESSURE: ("p",),
    Quantity.PRECIPITATION: ("r",),
}
# physical units per normalized unit, used for additive offsets
_SCALE = {
    Quantity.TEMPERATURE: 100.0,
    Quantity.PRESSURE: 200.0,
    Quantity.PRECIPITATION: 50.0,
}

CHANNEL_QUANTITY = {ch: q for q in Quantity for ch in q.channels}


def _as_float(value):
    return np.asarray(value, dtype=np.float64) if np.ndim(value) else float(value)


def normalized_to_physical(value, quantity):
    """Convert normalized channel values to physical units.

    Precipitation ``50 v`` mm, pressure ``200 v + 900`` hPa and temperature
    ``50 (2 v - 1)`` degC. Works elementwise on arrays.
    """
    q = Quantity(quantity)
    v = _as_float(value)
    if q is Quantity.PRECIPITATION:
        return 50.0 * v
    if q is Quantity.PRESSURE:
        return 200.0 * v + 900.0
    return 50.0 * (2.0 * v - 1.0)


def physical_to_normalized(value, quantity):
    """Inverse of :func:`normalized_to_physical`."""
    q = Quantity(quantity)
    x = _as_float(value)
    if q is Quantity.PRECIPITATION:
        return x / 50.0
    if q is Quantity.PRESSURE:
        return (x - 900.0) / 200.0
    return (x / 50.0 + 1.0) / 2.0


def delta_to_normalized(delta, quantity) -> float:
    """Normalized size of an additive physical offset (1/50 mm, 1/200 hPa, 1/100 degC)."""
    return float(delta) / _SCALE[Quantity(quantity)]


@dataclass(frozen=True)
class GridShape:
    t_in: int = 30
    t_out: int = 20
    h: int = 128
    w: int = 128

    def __post_init__(self):
        for name in ("t_in", "t_out", "h", "w"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"GridShape.{name} must be a positive integer, got {v!r}")

    @property
    def weather_shape(self) -> tuple[int, int, int]:
        return (self.t_in, self.h, self.w)

    @property
    def forecast_shape(self) -> tuple[int, int, int]:
        return (self.t_out, self.h, self.w)

    def to_dict(self) -> dict:
        return {"t_in": self.t_in, "t_out": self.t_out, "h": self.h, "w": self.w}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GridShape":
        return cls(int(d["t_in"]), int(d["t_out"]), int(d["h"]), int(d["w"]))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.flags.writeable:
        a = a.view()
        a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Sample:
    """One spatiotemporal instance.

    Weather tensors are ``(t_in, h, w)`` in normalized units. ``offsets``
    records the physical offsets (per :class:`Quantity`) already applied on
    top of ``origin``; it is empty for samples read from an archive.
    """

    id: str
    t_avg: np.ndarray
    t_min: np.ndarray
    t_max: np.ndarray
    p: np.ndarray
    r: np.ndarray
    static_channels: Mapping[str, np.ndarray] = field(default_factory=dict)
    offsets: Mapping[str, float] = field(default_factory=dict)
    origin: "Sample | None" = None

    def __post_init__(self):
        shapes = {ch: np.shape(getattr(self, ch)) for ch in WEATHER_CHANNELS}
        first = shapes["t_avg"]
        if len(first) != 3 or any(s != first for s in shapes.values()):
            raise ShapeMismatch(self.id, f"weather channel shapes differ: {shapes}")
        for ch in WEATHER_CHANNELS:
            object.__setattr__(self, ch, _readonly(getattr(self, ch)))
        object.__setattr__(
            self, "static_channels", {k: _readonly(v) for k, v in self.static_channels.items()}
        )

    @property
    def weather(self) -> dict[str, np.ndarray]:
        return {ch: getattr(self, ch) for ch in WEATHER_CHANNELS}

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.t_avg.shape)

    @property
    def source(self) -> "Sample":
        """The unperturbed sample this one derives from."""
        return self if self.origin is None else self.origin

    def channel(self, name: str) -> np.ndarray:
        if name in WEATHER_CHANNELS:
            return getattr(self, name)
        return self.static_channels[name]

    def check_finite(self):
        for name, arr in {**self.weather, **self.static_channels}.items():
            if not np.all(np.isfinite(arr)):
                raise NonFinite(f"sample {self.id!r} channel {name!r}")


@dataclass
class Dataset:
    grid: GridShape
    samples: list[Sample]
    name: str = "dataset"

    def __post_init__(self):
        self._index = {s.id: s for s in self.samples}
        if len(self._index) != len(self.samples):
            raise ValueError("duplicate sample ids")

    def __len__(self):
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def get(self, sample_id: str) -> Sample:
        try:
            return self._index[sample_id]
        except KeyError:
            raise MissingSample(sample_id) from None

    def __contains__(self, sample_id) -> bool:
        return sample_id in self._index


def downsample_channel(channel) -> np.ndarray:
    """Average each timestep image down to one value.

    Parameters
    ----------
    channel : array-like, shape=(t, h, w)

    Returns
    -------
    numpy.ndarray, shape=(t,)
        Float64 per-timestep spatial means.
    """
    arr = np.asarray(channel, dtype=np.float64)
    if arr.ndim != 3 or arr.size == 0:
        raise ValueError(f"expected non-empty (t, h, w) tensor, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite("channel")
    first = arr[:, 0, 0]
    # constant frames return their value exactly; summation would round
    constant = (arr == first[:, None, None]).all(axis=(1, 2))
    return np.where(constant, first, arr.mean(axis=(1, 2)))


def downsample_dataset(dataset: Iterable[Sample], channel: str) -> np.ndarray:
    """Stack the downsampled ``channel`` of every sample into an ``(n, t)`` array."""
    return np.stack([downsample_channel(s.channel(channel)) for s in dataset])


def write_series_csv(series, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestep", "value"])
        for k, v in enumerate(np.asarray(series, dtype=np.float64)):
            w.writerow([k, repr(float(v))])


def _check_id(sample_id: str):
    if not sample_id or sample_id in (".", "..") or any(c in sample_id for c in "/\\\0"):
        raise ValueError(f"sample id {sample_id!r} is not a valid path component")


def write_archive(dataset: Dataset, path) -> Path:
    """Write ``dataset`` as an archive directory (created if needed)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in dataset.samples:
        _check_id(s.id)
        sdir = root / s.id
        sdir.mkdir(exist_ok=True)
        channels = {}
        for name, arr in {**s.weather, **dict(sorted(s.static_channels.items()))}.items():
            data = np.ascontiguousarray(arr, dtype=BLOB_DTYPE)
            (sdir / f"{name}.f32").write_bytes(data.tobytes(order="C"))
            channels[name] = list(data.shape)
        entries.append({"id": s.id, "channels": channels})
    manifest = {
        "name": dataset.name,
        "dtype": "f32le",
        "grid": dataset.grid.to_dict(),
        "weather_channels": list(WEATHER_CHANNELS),
        "samples": entries,
    }
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def read_manifest(path) -> dict:
    mpath = Path(path) / MANIFEST
    if not mpath.is_file():
        raise ManifestMissing(f"no {MANIFEST} in {path}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("dtype", "f32le") != "f32le":
        raise ShapeMismatch("<manifest>", f"unsupported dtype {manifest['dtype']!r}")
    return manifest


def _read_blob(path: Path, shape, sample_id: str) -> np.ndarray:
    expected = int(np.prod(shape)) * BLOB_DTYPE.itemsize
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ShapeMismatch(sample_id, f"missing blob {path.name}") from None
    if len(raw) != expected:
        raise ShapeMismatch(sample_id, f"{path.name} holds {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=BLOB_DTYPE).reshape(shape)


def _load_sample(root: Path, entry: Mapping, grid: GridShape) -> Sample:
    sid = entry["id"]
    channels = entry["channels"]
    arrays = {}
    for name, shape in channels.items():
        shape = tuple(int(d) for d in shape)
        if name in WEATHER_CHANNELS:
            if shape != grid.weather_shape:
                raise ShapeMismatch(sid, f"{name} declared {shape}, grid is {grid.weather_shape}")
        elif len(shape) < 2 or shape[-2:] != (grid.h, grid.w):
            raise ShapeMismatch(sid, f"static channel {name} has shape {shape}")
        arrays[name] = _read_blob(root / sid / f"{name}.f32", shape, sid)
    missing = [ch for ch in WEATHER_CHANNELS if ch not in arrays]
    if missing:
        raise ShapeMismatch(sid, f"missing weather channels {missing}")
    sample = Sample(
        id=sid,
        **{ch: arrays.pop(ch) for ch in WEATHER_CHANNELS},
        static_channels=arrays,
    )
    sample.check_finite()
    return sample


def load_archive(path, jobs: int = 1) -> Dataset:
    """Load and shape-check every sample of an archive directory."""
    root = Path(path)
    manifest = read_manifest(root)
    grid = GridShape.from_dict(manifest["grid"])
    entries = manifest["samples"]
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            samples = list(ex.map(lambda e: _load_sample(root, e, grid), entries))
    else:
        samples = [_load_sample(root, e, grid) for e in entries]
    logger.info("loaded %d samples from %s", len(samples), os.fspath(root))
    return Dataset(grid=grid, samples=samples, name=manifest.get("name", root.name))
