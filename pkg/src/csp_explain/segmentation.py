"""Partition samples into weather segments by their five cluster indices."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .clustering import KMeansModel, predict_clusters
from .data import Dataset, Sample, downsample_channel, downsample_dataset
from .errors import ConfigInvalid

# order of indices inside a segment key
KEY_ORDER = ("r", "p", "t_avg", "t_min", "t_max")

SegmentKey = tuple


def key_to_str(key: SegmentKey) -> str:
    return "-".join(str(int(i)) for i in key)


def key_from_str(text: str) -> SegmentKey:
    return tuple(int(p) for p in text.split("-"))


@dataclass(frozen=True)
class WeatherSegment:
    key: SegmentKey
    member_ids: tuple[str, ...]

    @property
    def cardinality(self) -> int:
        return len(self.member_ids)

    @property
    def label(self) -> str:
        return key_to_str(self.key)

    def to_dict(self) -> dict:
        return {"key": list(self.key), "member_ids": list(self.member_ids), "cardinality": self.cardinality}

    @classmethod
    def from_dict(cls, d: Mapping) -> "WeatherSegment":
        return cls(tuple(int(i) for i in d["key"]), tuple(d["member_ids"]))


def _check_models(models: Mapping[str, KMeansModel]):
    missing = [v for v in KEY_ORDER if v not in models]
    if missing:
        raise ConfigInvalid("models", f"no k-means model for {missing}")


def assign_segment(sample: Sample, models: Mapping[str, KMeansModel]) -> SegmentKey:
    """Cluster-index tuple ``(r, p, t_avg, t_min, t_max)`` of one sample."""
    _check_models(models)
    return tuple(
        int(predict_clusters(models[v], downsample_channel(sample.channel(v))[None, :])[0])
        for v in KEY_ORDER
    )


def assign_segments(samples: Iterable[Sample], models: Mapping[str, KMeansModel]) -> list[SegmentKey]:
    """Batch form of :func:`assign_segment`, one prediction call per variable."""
    _check_models(models)
    samples = list(samples)
    if not samples:
        return []
    columns = [predict_clusters(models[v], downsample_dataset(samples, v)) for v in KEY_ORDER]
    return [tuple(int(c) for c in row) for row in np.stack(columns, axis=1)]


def segregate(dataset: Dataset, models: Mapping[str, KMeansModel]) -> list[WeatherSegment]:
    """Group the dataset by segment key.

    Segments come back sorted by key; members keep dataset order. Only
    non-empty segments exist.
    """
    if len(dataset) == 0:
        raise ValueError("cannot segregate an empty dataset")
    groups: dict[SegmentKey, list[str]] = {}
    for sample, key in zip(dataset, assign_segments(dataset, models)):
        groups.setdefault(key, []).append(sample.id)
    return [WeatherSegment(k, tuple(groups[k])) for k in sorted(groups)]


def write_segments(segments, directory) -> None:
    """Write ``segments.json`` and the ``segments.csv`` summary."""
    d = Path(directory)
    (d / "segments.json").write_text(json.dumps([s.to_dict() for s in segments], indent=2) + "\n")
    with open(d / "segments.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "cardinality"])
        for s in segments:
            w.writerow([s.label, s.cardinality])


def read_segments(directory) -> list[WeatherSegment]:
    return [WeatherSegment.from_dict(d) for d in json.loads((Path(directory) / "segments.json").read_text())]
