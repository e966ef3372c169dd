"""Driving an out-of-process forecaster through the exchange directory.

A worker process watches the exchange directory, answers each request with
the synthetic model and writes float32 band files back. The adapter on this
side looks like any other forecaster.

Run: python demos/04_external_worker.py
"""
import json
import subprocess
import sys
import tempfile
import time
from pathlib import Path

from csp_explain.data import GridShape
from csp_explain.external import ExternalForecaster
from csp_explain.forecaster import SyntheticModelParams, forecast, ndvi
from csp_explain.synthgen import PlantedRegimeSpec, generate_dataset

grid = GridShape(30, 20, 8, 8)
params = SyntheticModelParams(n0=0.4, precipitation=(-0.002, 0.02))
dataset, _ = generate_dataset(PlantedRegimeSpec(samples_per_regime=2, grid=grid), seed=0)

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    (tmp / "params.json").write_text(json.dumps(params.to_dict()))
    worker = subprocess.Popen([sys.executable, "-m", "csp_explain.worker", "--exchange-dir", str(tmp / "ex"),
                               "--synthetic", str(tmp / "params.json"), "--max-requests", str(len(dataset))])
    adapter = ExternalForecaster(tmp / "ex", grid, timeout_s=60)
    t0 = time.perf_counter()
    for sample in dataset:
        level = ndvi(forecast(adapter, sample)).mean()
        print(f"{sample.id}: mean NDVI {level:.4f}")
    print(f"{len(dataset)} requests in {time.perf_counter() - t0:.2f} s; worker exit code {worker.wait(30)}")

    # nobody is listening now, so the next request times out
    try:
        ExternalForecaster(tmp / "ex", grid, timeout_s=0.5).forecast(dataset.samples[0])
    except Exception as exc:
        print(f"without a worker: {type(exc).__name__}: {exc}")
