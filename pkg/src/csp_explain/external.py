"""File-exchange adapter for forecasters that run in a separate process.

Protocol, per request, inside the exchange directory::

    <request_id>/input/           one-sample archive (manifest + f32 blobs)
    <request_id>/request.json     grid, channel list, sample id (written last)
    <request_id>/output/{r,g,b,nir}.f32   written by the worker
    <request_id>/done.marker      written by the worker once outputs are complete

The worker side is available as :func:`serve`; ``python -m
csp_explain.worker`` runs a worker that either echoes fixed tensors or
evaluates the synthetic forecaster.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import BLOB_DTYPE, WEATHER_CHANNELS, Dataset, GridShape, Sample, load_archive, write_archive
from .errors import BackendFailure, ManifestMissing
from .forecaster import BANDS, Forecast, SyntheticModelParams, synthetic_forecast

REQUEST_FILE = "request.json"
DONE_MARKER = "done.marker"
CLAIM_MARKER = "claimed.marker"
log = logging.getLogger("csp_explain")

DEFAULT_TIMEOUT_S = 300.0


def _write_json_atomic(path: Path, payload: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def write_bands(fc: Forecast, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for band in BANDS:
        np.ascontiguousarray(getattr(fc, band), dtype=BLOB_DTYPE).tofile(d / f"{band}.f32")


def read_bands(directory, shape) -> Forecast:
    """Read ``{r,g,b,nir}.f32`` from ``directory``; raise BackendFailure on bad files."""
    d = Path(directory)
    bands = {}
    n = int(np.prod(shape))
    for band in BANDS:
        path = d / f"{band}.f32"
        if not path.is_file():
            raise BackendFailure(f"worker output {path} is missing")
        arr = np.fromfile(path, dtype=BLOB_DTYPE)
        if arr.size != n:
            raise BackendFailure(f"worker output {path} holds {arr.size} values, expected {n}")
        bands[band] = arr.reshape(shape)
    return Forecast(**bands)


@dataclass
class ExternalForecaster:
    """Forecaster handle backed by an external worker process.

    One request is in flight per handle at a time. ``forecast`` blocks until
    the worker writes ``done.marker`` or ``timeout_s`` elapses.
    """

    exchange_dir: Path
    grid: GridShape
    timeout_s: float = DEFAULT_TIMEOUT_S
    poll_interval_s: float = 0.01
    keep_requests: bool = False
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)
    _token: str = field(default_factory=lambda: uuid.uuid4().hex[:12], init=False, repr=False)
    _counter: int = field(default=0, init=False, repr=False)

    def __post_init__(self):
        self.exchange_dir = Path(self.exchange_dir)
        if not self.timeout_s > 0:
            raise ValueError("timeout_s must be positive")

    def _next_id(self) -> str:
        self._counter += 1
        return f"{self._token}-{self._counter:06d}"

    def submit(self, sample: Sample) -> Path:
        """Write a request and return its directory."""
        rdir = self.exchange_dir / self._next_id()
        rdir.mkdir(parents=True)
        write_archive(Dataset(self.grid, [sample], name="request"), rdir / "input")
        _write_json_atomic(
            rdir / REQUEST_FILE,
            {
                "request_id": rdir.name,
                "sample_id": sample.id,
                "grid": self.grid.to_dict(),
                "channels": list(WEATHER_CHANNELS) + sorted(sample.static_channels),
                "outputs": list(BANDS),
            },
        )
        return rdir

    def collect(self, rdir: Path) -> Forecast:
        deadline = time.monotonic() + self.timeout_s
        marker = rdir / DONE_MARKER
        while not marker.exists():
            if time.monotonic() >= deadline:
                raise BackendFailure(f"no response for request {rdir.name} within {self.timeout_s} s")
            time.sleep(self.poll_interval_s)
        fc = read_bands(rdir / "output", self.grid.forecast_shape)
        if not self.keep_requests:
            shutil.rmtree(rdir, ignore_errors=True)
        return fc

    def forecast(self, sample: Sample) -> Forecast:
        with self._lock:
            return self.collect(self.submit(sample))


Handler = Callable[[Sample, GridShape], Forecast]


def _claim(rdir: Path) -> bool:
    try:
        fd = os.open(rdir / CLAIM_MARKER, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except (FileExistsError, FileNotFoundError):
        # claimed by another worker, or already answered and removed
        return False
    os.close(fd)
    return True


def serve_once(exchange_dir, handler: Handler) -> int:
    """Answer every pending request once; returns the number answered."""
    root = Path(exchange_dir)
    if not root.is_dir():
        return 0
    served = 0
    for rdir in sorted(p for p in root.iterdir() if p.is_dir()):
        req = rdir / REQUEST_FILE
        if not req.is_file() or (rdir / DONE_MARKER).exists() or not _claim(rdir):
            continue
        try:
            info = json.loads(req.read_text())
            grid = GridShape.from_dict(info["grid"])
            ds = load_archive(rdir / "input")
            write_bands(handler(ds.samples[0], grid), rdir / "output")
            (rdir / DONE_MARKER).write_text("")
        except (FileNotFoundError, ManifestMissing):
            # the adapter gave up on this request and removed it
            log.warning("request %s vanished while being served", rdir.name)
            continue
        served += 1
    return served


def serve(exchange_dir, handler: Handler, poll_interval_s: float = 0.01,
          max_requests: int | None = None, idle_timeout_s: float | None = None) -> int:
    """Worker loop: poll ``exchange_dir`` and answer requests with ``handler``.

    Stops after ``max_requests`` answers or ``idle_timeout_s`` without work.
    """
    total = 0
    last = time.monotonic()
    while max_requests is None or total < max_requests:
        n = serve_once(exchange_dir, handler)
        total += n
        if n:
            last = time.monotonic()
        elif idle_timeout_s is not None and time.monotonic() - last > idle_timeout_s:
            break
        else:
            time.sleep(poll_interval_s)
    return total


def echo_handler(directory) -> Handler:
    """Handler returning the tensors stored in ``directory`` verbatim."""
    def handle(sample: Sample, grid: GridShape) -> Forecast:
        return read_bands(directory, grid.forecast_shape)
    return handle


def synthetic_handler(params: SyntheticModelParams) -> Handler:
    def handle(sample: Sample, grid: GridShape) -> Forecast:
        return synthetic_forecast(params, sample, grid)
    return handle


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m csp_explain.worker", description="external forecaster worker")
    ap.add_argument("--exchange-dir", required=True)
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--echo-dir", help="directory holding r/g/b/nir.f32 to return for every request")
    src.add_argument("--synthetic", help="JSON file with synthetic model parameters")
    ap.add_argument("--max-requests", type=int)
    ap.add_argument("--idle-timeout-s", type=float)
    args = ap.parse_args(argv)
    if args.echo_dir:
        handler = echo_handler(args.echo_dir)
    else:
        handler = synthetic_handler(SyntheticModelParams.from_dict(json.loads(Path(args.synthetic).read_text())))
    serve(args.exchange_dir, handler, max_requests=args.max_requests, idle_timeout_s=args.idle_timeout_s)
    return 0
