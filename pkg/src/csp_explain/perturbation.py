"""Additive physical-unit perturbations of one meteorological quantity at a time."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .data import CHANNEL_QUANTITY, WEATHER_CHANNELS, Dataset, Quantity, Sample, delta_to_normalized
from .errors import ConfigInvalid, OffsetOutOfRange
from .segmentation import WeatherSegment

DEFAULT_OFFSETS = {
    Quantity.TEMPERATURE: (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0),
    Quantity.PRESSURE: (-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0),
    Quantity.PRECIPITATION: (-2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0),
}


@dataclass(frozen=True)
class PerturbationGrid:
    """Offsets in degC, hPa and mm; each strictly increasing and containing 0."""

    temperature: tuple[float, ...] = DEFAULT_OFFSETS[Quantity.TEMPERATURE]
    pressure: tuple[float, ...] = DEFAULT_OFFSETS[Quantity.PRESSURE]
    precipitation: tuple[float, ...] = DEFAULT_OFFSETS[Quantity.PRECIPITATION]

    def __post_init__(self):
        for q in Quantity:
            offs = tuple(float(v) for v in getattr(self, q.value))
            object.__setattr__(self, q.value, offs)
            if 0.0 not in offs:
                raise ConfigInvalid(f"grid.{q.value}", "must contain 0")
            if any(b <= a for a, b in zip(offs, offs[1:])):
                raise ConfigInvalid(f"grid.{q.value}", "must be strictly increasing")
            if len(offs) < 2:
                raise ConfigInvalid(f"grid.{q.value}", "needs at least two offsets")

    def offsets(self, quantity) -> tuple[float, ...]:
        return getattr(self, Quantity(quantity).value)

    def bounds(self, quantity) -> tuple[float, float]:
        offs = self.offsets(quantity)
        return offs[0], offs[-1]

    def to_dict(self) -> dict:
        return {q.value: list(self.offsets(q)) for q in Quantity}

    @classmethod
    def from_dict(cls, d) -> "PerturbationGrid":
        return cls(**{q.value: tuple(d[q.value]) for q in Quantity if q.value in d})


@dataclass(frozen=True)
class PerturbationSpec:
    quantity: Quantity
    offset: float

    def __post_init__(self):
        object.__setattr__(self, "quantity", Quantity(self.quantity))
        object.__setattr__(self, "offset", float(self.offset))


def perturb(sample: Sample, spec: PerturbationSpec, grid: PerturbationGrid | None = None) -> Sample:
    """Shift the channels of one quantity by a physical offset.

    Offsets accumulate in physical units and are converted to normalized
    units once, on top of the unperturbed source sample, so chained
    perturbations equal a single perturbation by their sum. Channels of other
    quantities are passed through untouched. Values are never clamped.
    """
    q = spec.quantity
    lo, hi = (grid or PerturbationGrid()).bounds(q)
    if not lo <= spec.offset <= hi:
        raise OffsetOutOfRange(f"{q.value} offset {spec.offset} outside [{lo}, {hi}]")
    src = sample.source
    total = sample.offsets.get(q.value, 0.0) + spec.offset
    offsets = {k: v for k, v in sample.offsets.items() if k != q.value}
    if total != 0.0:
        offsets[q.value] = total
    channels = {}
    for ch in WEATHER_CHANNELS:
        if CHANNEL_QUANTITY[ch] is not q:
            channels[ch] = sample.channel(ch)
        elif total == 0.0:
            channels[ch] = src.channel(ch)
        else:
            channels[ch] = np.asarray(src.channel(ch), dtype=np.float64) + delta_to_normalized(total, q)
    return Sample(
        id=sample.id,
        **channels,
        static_channels=sample.static_channels,
        offsets=offsets,
        origin=src if offsets else None,
    )


def perturbation_batch(
    segment: WeatherSegment,
    dataset: Dataset,
    grid: PerturbationGrid,
    quantity,
) -> Iterator[tuple[float, Sample]]:
    """Lazily yield ``(offset, perturbed sample)`` for every grid offset and member.

    Offset-major, then members sorted by id. Missing members are reported
    before anything is yielded.
    """
    q = Quantity(quantity)
    members = [dataset.get(sid) for sid in sorted(segment.member_ids)]
    offsets: Sequence[float] = grid.offsets(q)

    def emit():
        for off in offsets:
            spec = PerturbationSpec(q, off)
            for s in members:
                yield off, perturb(s, spec, grid)

    return emit()
