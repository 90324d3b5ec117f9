"""End-to-end driver over a synthetic run directory."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from figures.make_all import make_all

SHIM = Path(__file__).resolve().parent.parent / "make_all"


def synthetic_run_dir(root: Path) -> Path:
    run = root / "run"
    run.mkdir()
    rng = np.random.default_rng(6)
    x = np.linspace(0.0, 100.0, 21)
    with open(run / "band_data.csv", "w") as fh:
        fh.write("node_id,dim,x,prior_mean,prior_std,post_mean,post_std\n")
        for i, xi in enumerate(x):
            fh.write(f"{i},0,{xi},{0.2*xi},{0.05*xi+0.1},{0.21*xi},{0.02*xi+0.05}\n")
    with open(run / "observations.csv", "w") as fh:
        fh.write("sensor_id,dim,x,r0,r1,r2\n")
        for k, xs in enumerate(np.linspace(10.0, 90.0, 9)):
            vals = 0.21 * xs + 0.1 * rng.standard_normal(3)
            fh.write(f"{k},0,{xs}," + ",".join(str(v) for v in vals) + "\n")
    with open(run / "qoi_samples.csv", "w") as fh:
        fh.write("sample_id,prior,posterior\n")
        for i in range(600):
            fh.write(f"{i},{20 + 2*rng.standard_normal()},{21 + 0.8*rng.standard_normal()}\n")
    with open(run / "metrics.json", "w") as fh:
        json.dump({"n_r": 3, "err": 0.4, "rmsd": 0.2}, fh)
    return run


def test_make_all_emits_every_figure(tmp_path):
    run = synthetic_run_dir(tmp_path)
    out = tmp_path / "figs"
    written = make_all(run, out)
    names = {p.name for p in written}
    assert names == {"band.png", "kde.png", "convergence_err.png"}
    for p in written:
        assert p.exists() and p.stat().st_size > 0


def test_make_all_sweep_convergence(tmp_path):
    run = tmp_path / "sweep"
    run.mkdir()
    for n_r in (1, 10, 100):
        sub = run / f"nr{n_r}"
        sub.mkdir()
        with open(sub / "metrics.json", "w") as fh:
            json.dump({"n_r": n_r, "err": 1.0 / n_r, "rmsd": 0.5 / n_r}, fh)
    written = make_all(run, tmp_path / "figs")
    assert {p.name for p in written} == {"convergence_err.png"}


def test_make_all_empty_dir_fails(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError):
        make_all(tmp_path / "empty", tmp_path / "figs")


def test_shim_runs_as_subprocess(tmp_path):
    run = synthetic_run_dir(tmp_path)
    out = tmp_path / "figs"
    proc = subprocess.run([sys.executable, str(SHIM), str(run), str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (out / "band.png").exists()


def test_shim_usage_error(tmp_path):
    proc = subprocess.run([sys.executable, str(SHIM)], capture_output=True, text=True)
    assert proc.returncode == 2
