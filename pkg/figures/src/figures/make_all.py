"""Emit every applicable figure for a completed run directory.

    make_all <run-dir> <out-dir>

A run directory is the output of the batch pipeline (band_data.csv,
observations.csv, qoi_samples.csv, metrics.json).  When the run directory
contains subdirectories with their own metrics.json (a sweep), a
convergence curve is emitted across them; a single metrics.json yields a
single-marker plot.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

from .plots import plot_band, plot_convergence, plot_kde


def discover_dims(band_csv: Path) -> list[int]:
    import csv

    with open(band_csv, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        idx = header.index("dim")
        dims = sorted({int(float(row[idx])) for row in reader if row})
    return dims


def make_all(run_dir: Path, out_dir: Path) -> list[Path]:
    run_dir = Path(run_dir)
    out_dir = Path(out_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory {run_dir} does not exist")
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    band = run_dir / "band_data.csv"
    obs = run_dir / "observations.csv"
    if band.exists():
        for dim in discover_dims(band):
            suffix = "" if dim == 0 else f"_dim{dim}"
            target = out_dir / f"band{suffix}.png"
            plot_band(band, obs if obs.exists() else None, target,
                      dim=dim, title=f"mean and 95% credible band (component {dim})")
            written.append(target)

    samples = run_dir / "qoi_samples.csv"
    if samples.exists():
        target = out_dir / "kde.png"
        plot_kde(samples, target, title="prior vs posterior at the QoI node")
        written.append(target)

    metrics_files = sorted(run_dir.glob("*/metrics.json"))
    if not metrics_files and (run_dir / "metrics.json").exists():
        metrics_files = [run_dir / "metrics.json"]
    if metrics_files:
        with open(metrics_files[0]) as fh:
            first = json.load(fh)
        y_key = "err" if first.get("err") is not None else "rmsd"
        target = out_dir / f"convergence_{y_key}.png"
        plot_convergence(metrics_files, target, x_key="n_r", y_key=y_key,
                         title=f"{y_key} vs n_r")
        written.append(target)

    if not written:
        raise FileNotFoundError(f"{run_dir} contains no plottable artifacts")
    return written


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    try:
        written = make_all(Path(argv[0]), Path(argv[1]))
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
