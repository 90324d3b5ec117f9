"""Figure primitives over the batch-run CSV/JSON formats.

Every plot is a pure transform of its input files: the only numbers
computed here are the 95% band multiplier (1.959964) and the Gaussian
kernel density estimate with Silverman's rule-of-thumb bandwidth.  Each
function returns the arrays it drew so tests can assert on the data
rather than on pixels.
"""
from __future__ import annotations

import csv
import json
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

CI_FACTOR = 1.959964


def read_csv_columns(path) -> dict[str, np.ndarray]:
    """Named columns of a chaosfem CSV as float arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    data = np.array([[float(v) for v in row] for row in rows])
    if data.size == 0:
        raise ValueError(f"{path} has no data rows")
    return {name: data[:, i] for i, name in enumerate(header)}


def read_band_csv(path, dim: int = 0) -> dict[str, np.ndarray]:
    cols = read_csv_columns(path)
    for key in ("prior_mean", "prior_std", "post_mean", "post_std"):
        if key not in cols:
            raise ValueError(f"{path} is not a band_data file (missing {key})")
    mask = cols["dim"].astype(int) == dim
    return {k: v[mask] for k, v in cols.items()}


def read_observation_means(path, dim: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sensor positions (first axis) and per-sensor reading means."""
    cols = read_csv_columns(path)
    mask = cols["dim"].astype(int) == dim
    x = cols["x"][mask]
    readings = np.column_stack([v for k, v in cols.items() if k.startswith("r")])
    return x, readings[mask].mean(axis=1)


def plot_band(band_csv, observations_csv, out_path, dim: int = 0, title=None) -> dict:
    """Prior and posterior mean lines with 95% credible bands, data dots.

    Returns the plotted arrays: positions, means, and band edges.
    """
    band = read_band_csv(band_csv, dim)
    x = band["x"] if "x" in band else band["node_id"]
    arrays = {
        "x": x,
        "prior_mean": band["prior_mean"],
        "prior_lo": band["prior_mean"] - CI_FACTOR * band["prior_std"],
        "prior_hi": band["prior_mean"] + CI_FACTOR * band["prior_std"],
        "post_mean": band["post_mean"],
        "post_lo": band["post_mean"] - CI_FACTOR * band["post_std"],
        "post_hi": band["post_mean"] + CI_FACTOR * band["post_std"],
    }
    order = np.argsort(x)
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    ax.fill_between(x[order], arrays["prior_lo"][order], arrays["prior_hi"][order],
                    alpha=0.25, color="tab:blue", label="prior 95% CI")
    ax.plot(x[order], arrays["prior_mean"][order], color="tab:blue", label="prior mean")
    ax.fill_between(x[order], arrays["post_lo"][order], arrays["post_hi"][order],
                    alpha=0.35, color="tab:red", label="posterior 95% CI")
    ax.plot(x[order], arrays["post_mean"][order], color="tab:red", label="posterior mean")
    if observations_csv is not None:
        sx, sy = read_observation_means(observations_csv, dim)
        ax.plot(sx, sy, "k.", markersize=7, label="observation mean")
    ax.set_xlabel("position")
    ax.set_ylabel("displacement")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return arrays


def silverman_bandwidth(samples: np.ndarray) -> float:
    """0.9 min(std, IQR/1.34) n^(-1/5); degenerate spread is an error."""
    n = samples.size
    std = float(np.std(samples, ddof=1))
    q75, q25 = np.percentile(samples, [75.0, 25.0])
    iqr = float(q75 - q25)
    scale = min(std, iqr / 1.34) if iqr > 0 else std
    if scale <= 0:
        raise ValueError("degenerate bandwidth: samples have no spread")
    return 0.9 * scale * n ** (-0.2)


def gaussian_kde(samples: np.ndarray, grid: np.ndarray) -> np.ndarray:
    h = silverman_bandwidth(samples)
    z = (grid[:, None] - samples[None, :]) / h
    return np.exp(-0.5 * z**2).sum(axis=1) / (samples.size * h * np.sqrt(2.0 * np.pi))


def plot_kde(samples_csv, out_path, n_grid: int = 512, title=None) -> dict:
    """Kernel density estimates of the prior/posterior sample columns.

    Needs at least 100 samples per column.
    """
    cols = read_csv_columns(samples_csv)
    series = {k: v for k, v in cols.items() if k != "sample_id"}
    if not series:
        raise ValueError(f"{samples_csv} has no sample columns")
    arrays = {}
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for color, (name, samples) in zip(("tab:blue", "tab:red", "tab:green"), series.items()):
        if samples.size < 100:
            raise ValueError(f"column {name} has {samples.size} samples; need at least 100")
        lo, hi = samples.min(), samples.max()
        pad = 0.15 * (hi - lo if hi > lo else 1.0)
        grid = np.linspace(lo - pad, hi + pad, n_grid)
        density = gaussian_kde(samples, grid)
        arrays[name] = {"grid": grid, "density": density}
        ax.plot(grid, density, color=color, label=name)
    ax.set_xlabel("displacement")
    ax.set_ylabel("density")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return arrays


def plot_convergence(metrics_files, out_path, x_key: str = "n_r", y_key: str = "err",
                     title=None) -> dict:
    """Log-x convergence curve of a metric over several runs."""
    points = []
    for path in metrics_files:
        with open(path) as fh:
            metrics = json.load(fh)
        if x_key not in metrics or y_key not in metrics:
            raise ValueError(f"{path} lacks {x_key!r}/{y_key!r}")
        points.append((float(metrics[x_key]), float(metrics[y_key])))
    if not points:
        raise ValueError("no metrics files given")
    points.sort()
    x = np.array([p[0] for p in points])
    y = np.array([p[1] for p in points])
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ax.semilogx(x, y, "o-" if x.size > 1 else "o")
    ax.set_xlabel(x_key)
    ax.set_ylabel(y_key)
    ax.grid(True, which="both", alpha=0.3)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return {"x": x, "y": y}
