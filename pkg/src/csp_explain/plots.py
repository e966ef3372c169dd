"""SVG figures rendered purely from the CSV artifacts.

Output is byte-stable: fixed SVG hash salt and no date metadata.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .data import Quantity  # noqa: E402
from .errors import MissingArtifact  # noqa: E402
from .segmentation import KEY_ORDER  # noqa: E402

_RC = {"svg.hashsalt": "csp-explain", "svg.fonttype": "path", "font.size": 8}


def _rows(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(f"{path} does not exist")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise MissingArtifact(f"{path} has no data rows")
    return rows


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_centroids(csv_path, svg_path, title: str = "") -> Path:
    """One panel per cluster from a ``cluster,count,timestep,value`` CSV."""
    series = defaultdict(list)
    counts = {}
    for r in _rows(csv_path):
        c = int(r["cluster"])
        series[c].append((int(r["timestep"]), float(r["value"])))
        counts[c] = int(r["count"])
    k = len(series)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, k, figsize=(2.2 * k, 2.0), sharey=True, squeeze=False)
        for ax, c in zip(axes[0], sorted(series)):
            t, v = zip(*sorted(series[c]))
            ax.plot(t, v, color="tab:blue", lw=1.2)
            ax.set_title(f"cluster {c} (n={counts[c]})")
            ax.set_xlabel("timestep")
        axes[0][0].set_ylabel("normalized value")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, svg_path)


def plot_perturbation_curves(csv_path, svg_dir) -> list[Path]:
    """Per variable: NDVI curve per offset, averaged over segments."""
    acc = defaultdict(lambda: defaultdict(list))
    for r in _rows(csv_path):
        acc[r["variable"]][(float(r["offset"]), int(r["timestep"]))].append(float(r["ndvi"]))
    out = []
    for var in sorted(acc):
        by_offset = defaultdict(list)
        for (off, t), vals in sorted(acc[var].items()):
            by_offset[off].append((t, sum(vals) / len(vals)))
        with plt.rc_context(_RC):
            fig, ax = plt.subplots(figsize=(4.5, 3.0))
            cmap = plt.get_cmap("viridis", len(by_offset))
            for i, off in enumerate(sorted(by_offset)):
                t, v = zip(*by_offset[off])
                ax.plot(t, v, color=cmap(i), lw=1.2, label=f"{off:+g} {Quantity(var).unit}")
            ax.set_xlabel("forecast timestep")
            ax.set_ylabel("mean NDVI")
            ax.set_title(f"{var} perturbations")
            ax.legend(fontsize=6, ncol=2)
            fig.tight_layout()
            out.append(_save(fig, Path(svg_dir) / f"perturbation_{var}.svg"))
    return out


def plot_correlation_curves(csv_path, svg_dir) -> list[Path]:
    """Per variable: overlay of every segment's best-fit standardized curve."""
    acc = defaultdict(lambda: defaultdict(list))
    for r in _rows(csv_path):
        acc[r["variable"]][r["segment_key"]].append((float(r["x"]), float(r["y"])))
    out = []
    for var in sorted(acc):
        with plt.rc_context(_RC):
            fig, ax = plt.subplots(figsize=(4.5, 3.0))
            for key in sorted(acc[var]):
                x, y = zip(*acc[var][key])
                ax.plot(x, y, lw=0.8, alpha=0.7)
            ax.set_xlabel(f"{var} ({Quantity(var).unit})")
            ax.set_ylabel("NDVI")
            ax.set_title(f"{var} correlation curves ({len(acc[var])} segments)")
            fig.tight_layout()
            out.append(_save(fig, Path(svg_dir) / f"correlation_{var}.svg"))
    return out


def emit_plots(out_dir) -> list[Path]:
    """Render every figure family from the artifacts under ``out_dir`` into ``out_dir/plots``."""
    out_dir = Path(out_dir)
    plots = out_dir / "plots"
    paths = [
        plot_centroids(out_dir / "centroids" / f"{v}.csv", plots / f"centroids_{v}.svg", title=v)
        for v in KEY_ORDER
    ]
    paths += plot_perturbation_curves(out_dir / "ndvi_curves.csv", plots)
    paths += plot_correlation_curves(out_dir / "correlation_curves.csv", plots)
    return paths
