"""Batch pipeline stages behind the command-line interface.

Each stage is a pure function of a validated configuration dictionary (and
the artifacts earlier stages wrote into the run directory): build the PC
prior, generate synthetic observations, identify hyperparameters, update,
and report.  All floating-point output is printed with 17 significant
digits so files round-trip exactly and reruns are byte-identical.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datagen, fem, hyperopt, statfem
from .pce import PCBasis, PCField, build_basis, pc_moments, project
from .quadrature import SparseGrid, smolyak, tensor_grid
from .randomfield import KernelSpec, KLExpansion, kl_decompose, lognormal_link
from .statfem import observation_matrix

SCHEMA_VERSION = 1
PROBLEMS = ("bar-homogeneous", "bar-inhomogeneous", "plate-hole")


class ConfigError(ValueError):
    """Configuration rejected before any computation."""


def fmt(x: float) -> str:
    """17 significant digits: exact float round-trip."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    validate_config(cfg)
    cfg["_config_dir"] = str(Path(path).resolve().parent)
    return cfg


def _kernel_from(cfg: dict, where: str) -> KernelSpec:
    try:
        return KernelSpec(cfg["family"], tuple(float(v) for v in cfg["lengths"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: bad kernel spec ({exc})") from exc


def validate_config(cfg: dict) -> None:
    problems = []
    if cfg.get("schema_version") != SCHEMA_VERSION:
        problems.append(f"schema_version must be {SCHEMA_VERSION}")
    if cfg.get("problem") not in PROBLEMS:
        problems.append(f"problem must be one of {PROBLEMS}")
    for section in ("field", "pce", "geometry", "sensors", "mismatch", "noise", "data"):
        if not isinstance(cfg.get(section), dict):
            problems.append(f"missing section {section!r}")
    if problems:
        raise ConfigError("; ".join(problems))

    field = cfg["field"]
    for key in ("kernel", "mu_E", "sigma_E", "epsilon"):
        if key not in field:
            problems.append(f"field.{key} is required")
    if float(field.get("mu_E", 0)) <= 0:
        problems.append("field.mu_E must be positive")
    if not 0.0 < float(field.get("epsilon", 0)) < 1.0:
        problems.append("field.epsilon must lie in (0, 1)")

    pce = cfg["pce"]
    if int(pce.get("order", -1)) < 0:
        problems.append("pce.order must be >= 0")
    if int(pce.get("level", -1)) < 0:
        problems.append("pce.level must be >= 0")
    if pce.get("quadrature", "smolyak") not in ("smolyak", "tensor"):
        problems.append("pce.quadrature must be smolyak or tensor")

    data = cfg["data"]
    if int(data.get("n_r", 0)) < 1:
        problems.append("data.n_r must be >= 1")
    if "seed" not in data:
        problems.append("data.seed is required")
    if float(cfg["noise"].get("sigma_e", -1.0)) < 0:
        problems.append("noise.sigma_e must be nonnegative")

    mism = cfg["mismatch"]
    if "kernel" not in mism:
        problems.append("mismatch.kernel is required")
    m_d = mism.get("M_d", "auto")
    if m_d != "auto" and int(m_d) < 0:
        problems.append("mismatch.M_d must be 'auto' or a nonnegative integer")

    if cfg["problem"].startswith("bar"):
        geom = cfg["geometry"]
        for key in ("length", "area", "tip_load", "n_elements"):
            if float(geom.get(key, 0)) <= 0:
                problems.append(f"geometry.{key} must be positive")
        if int(cfg["sensors"].get("n_sen", 0)) < 1:
            problems.append("sensors.n_sen must be >= 1")
    else:
        geom = cfg["geometry"]
        for key in ("thickness", "traction"):
            if key not in geom:
                problems.append(f"geometry.{key} is required")
        if not 0.0 <= float(geom.get("nu", 0.5)) <= 0.5:
            problems.append("geometry.nu must lie in [0, 0.5]")
        sensors = cfg["sensors"]
        if "preset" not in sensors and "file" not in sensors:
            problems.append("sensors needs a 'preset' count or a 'file' path")

    gain_form = cfg.get("gain_form", "paper")
    if gain_form not in ("paper", "symmetric"):
        problems.append("gain_form must be paper or symmetric")
    if cfg.get("mismatch_scaling", "replicated") not in ("replicated", "fixed"):
        problems.append("mismatch_scaling must be replicated or fixed")
    if problems:
        raise ConfigError("; ".join(problems))


def output_dir(cfg: dict, override=None) -> Path:
    """--out overrides resolve against the working directory; the config's
    own output field resolves against the config file location."""
    if override:
        out = Path(override)
    else:
        out = Path(cfg.get("output", "run"))
        if not out.is_absolute() and "_config_dir" in cfg:
            out = Path(cfg["_config_dir"]) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def thread_count(cli_value=None) -> int:
    if cli_value:
        return max(1, int(cli_value))
    env = os.environ.get("CHAOSFEM_THREADS", "")
    return max(1, int(env)) if env.isdigit() else 1


# ---------------------------------------------------------------------------
# problem assembly
# ---------------------------------------------------------------------------

@dataclass
class ProblemSetup:
    """Mesh, field expansion, sensors, and solver hooks for one problem."""

    mesh: fem.Mesh
    n_dims: int
    link: object
    kl: KLExpansion
    sensor_coords: np.ndarray
    H: np.ndarray
    solve: object            # xi -> list of nodal component vectors
    layers: np.ndarray | None = None

    @property
    def n_sen(self) -> int:
        return self.sensor_coords.shape[0]


def plate_sensor_layout(mesh: fem.Mesh, layers: np.ndarray, count: int,
                        n_theta: int = 40, n_radial: int = 8) -> np.ndarray:
    """Mesh-node sensor layouts: boundary-weighted rings of 11/32/112."""
    def node(spoke, layer):
        return (spoke % n_theta) * (n_radial + 1) + layer

    if count == 11:
        picks = [node(4 * k, n_radial) for k in range(10)] + [node(0, n_radial // 2)]
    elif count == 32:
        picks = [node(2 * k, n_radial) for k in range(20)]
        picks += [node(4 * k, n_radial // 2) for k in range(10)]
        picks += [node(0, 2), node(n_theta // 2, 2)]
    elif count == 112:
        picks = [node(k, n_radial) for k in range(40)]
        picks += [node(k, n_radial // 2) for k in range(40)]
        picks += [node(k, 2) for k in range(40) if k % 5 != 0]
    else:
        raise ConfigError(f"no plate sensor preset for count {count}")
    picks = sorted(set(picks))
    if len(picks) != count:
        raise ConfigError(f"sensor preset produced {len(picks)} nodes, expected {count}")
    return mesh.nodes[picks]


def read_sensor_csv(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        header = fh.readline()
        if not header.lower().lstrip().startswith("sensor_id"):
            raise ConfigError(f"{path}: expected header starting with sensor_id")
        for line in fh:
            if line.strip():
                rows.append([float(v) for v in line.split(",")[1:]])
    arr = np.array(rows)
    return arr[:, 0] if arr.shape[1] == 1 else arr


def write_sensor_csv(coords: np.ndarray, path) -> None:
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    axes = "x" if coords.shape[1] == 1 else "x,y"
    with open(path, "w", newline="\n") as fh:
        fh.write(f"sensor_id,{axes}\n")
        for i, row in enumerate(coords):
            fh.write(f"{i}," + ",".join(fmt(v) for v in row) + "\n")


def build_setup(cfg: dict) -> ProblemSetup:
    """Construct the mesh, KL expansion, sensors, and solver for a config."""
    field = cfg["field"]
    link = lognormal_link(float(field["mu_E"]), float(field["sigma_E"]))
    kernel = _kernel_from(field["kernel"], "field")
    n_modes = field.get("M_kappa")
    problem = cfg["problem"]

    if problem.startswith("bar"):
        geom = cfg["geometry"]
        mesh = fem.bar_mesh(float(geom["length"]), int(geom["n_elements"]))
        kl = kl_decompose(kernel, mesh.centroids, float(field["epsilon"]),
                          weights=mesh.measures, n_modes=n_modes)
        sensors = datagen.equidistant_sensors(float(geom["length"]), int(cfg["sensors"]["n_sen"]))
        h = observation_matrix(mesh, sensors)
        area, tip = float(geom["area"]), float(geom["tip_load"])

        def solve(youngs):
            u = fem.solve_bar(fem.BarProblem(mesh=mesh, area=area, tip_load=tip, youngs=youngs))
            return [u]

        return ProblemSetup(mesh=mesh, n_dims=1, link=link, kl=kl,
                            sensor_coords=sensors[:, None], H=h, solve=solve)

    geom = cfg["geometry"]
    if "mesh_file" in geom:
        mesh = fem.read_mesh(Path(cfg["_config_dir"]) / geom["mesh_file"] if "_config_dir" in cfg else geom["mesh_file"])
        layers = None
    else:
        mesh, layers = fem.plate_hole_mesh(
            width=float(geom.get("width", 0.32)),
            hole_radius=float(geom.get("hole_radius", 0.02)),
            n_theta=int(geom.get("n_theta", 40)),
            n_radial=int(geom.get("n_radial", 8)),
        )
    kl = kl_decompose(kernel, mesh.centroids, float(field["epsilon"]),
                      weights=mesh.measures, n_modes=n_modes)
    sensors_cfg = cfg["sensors"]
    if "file" in sensors_cfg:
        path = Path(sensors_cfg["file"])
        if not path.is_absolute() and "_config_dir" in cfg:
            path = Path(cfg["_config_dir"]) / path
        sensor_coords = read_sensor_csv(path)
    else:
        if layers is None:
            raise ConfigError("sensor presets need the generated plate mesh")
        sensor_coords = plate_sensor_layout(mesh, layers, int(sensors_cfg["preset"]),
                                            n_theta=int(geom.get("n_theta", 40)),
                                            n_radial=int(geom.get("n_radial", 8)))
    h = observation_matrix(mesh, sensor_coords)
    thickness, nu = float(geom["thickness"]), float(geom.get("nu", 0.5))
    traction = float(geom["traction"])
    loads = fem.edge_traction_loads(mesh, fem.right_edge_nodes(mesh), traction, thickness)
    fixed = fem.clamp_nodes(fem.left_edge_nodes(mesh))
    unit_ke = fem.quad_unit_stiffness(mesh, nu, thickness)

    def solve(youngs):
        prob = fem.PlaneStressProblem(mesh=mesh, thickness=thickness, nu=nu, youngs=youngs,
                                      fixed_dofs=fixed, loads=loads)
        u = fem.solve_plane_stress_le(prob, unit_ke=unit_ke)
        return [u[0::2], u[1::2]]

    return ProblemSetup(mesh=mesh, n_dims=2, link=link, kl=kl,
                        sensor_coords=sensor_coords, H=h, solve=solve, layers=layers)


def build_grid(dim: int, cfg_pce: dict) -> SparseGrid:
    if cfg_pce.get("quadrature", "smolyak") == "tensor":
        return tensor_grid(dim, int(cfg_pce["level"]) + 1)
    return smolyak(dim, int(cfg_pce["level"]))


def nlml_grid(dim: int, cfg: dict) -> SparseGrid:
    """Quadrature for the marginal likelihood: tensor rule for few germs,
    otherwise Smolyak at the configured (or projection) level."""
    opt = cfg.get("optimizer", {})
    kind = opt.get("quadrature", "auto")
    level = int(opt.get("level") or cfg["pce"]["level"])
    if kind == "auto":
        kind = "tensor" if dim <= 6 else "smolyak"
    if kind == "tensor":
        return tensor_grid(dim, level + 1)
    return smolyak(dim, level)


def solve_at_nodes(setup: ProblemSetup, grid: SparseGrid, workers: int = 1) -> list[np.ndarray]:
    """FEM responses at every grid node; one (n_nodes_grid, n_mesh) matrix
    per spatial component, rows in grid order."""
    from .randomfield import field_realize

    def run(n):
        _, youngs = field_realize(setup.kl, setup.link, grid.nodes[n])
        return setup.solve(youngs)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(len(grid))))
    else:
        results = [run(n) for n in range(len(grid))]
    return [np.array([res[v] for res in results]) for v in range(setup.n_dims)]


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_prior(cfg: dict, out: Path, workers: int = 1) -> dict:
    setup = build_setup(cfg)
    basis = build_basis(setup.kl.M, int(cfg["pce"]["order"]))
    grid = build_grid(setup.kl.M, cfg["pce"])
    evals = solve_at_nodes(setup, grid, workers)
    priors = [project(evals[v], grid, basis) for v in range(setup.n_dims)]
    moments = [pc_moments(p) for p in priors]

    write_kl_spectrum(setup.kl, out / "kl_spectrum.csv")
    write_pc_coefficients(priors, out / "pc_coefficients.csv")
    write_moments([(m, c) for m, c in moments], out / "prior_moments.csv")
    return {"setup": setup, "basis": basis, "grid": grid, "evals": evals,
            "priors": priors, "moments": moments}


def stage_generate(cfg: dict, out: Path, seed=None) -> datagen.ObservationSet:
    obs = generate_observations(cfg, seed=seed)
    write_observations(obs, out / "observations.csv", out / "observations.json")
    return obs


def generate_observations(cfg: dict, seed=None, n_rep=None, setup: ProblemSetup | None = None) -> datagen.ObservationSet:
    data = cfg["data"]
    seed = int(data["seed"]) if seed is None else int(seed)
    n_rep = int(data["n_r"]) if n_rep is None else int(n_rep)
    noise = float(cfg["noise"]["sigma_e"])
    physics = data.get("physics", {})
    problem = cfg["problem"]
    geom = cfg["geometry"]

    if problem == "bar-homogeneous":
        return datagen.gen_bar_homogeneous(
            int(cfg["sensors"]["n_sen"]), n_rep,
            float(physics.get("rho", 1.0)),
            np.asarray(physics.get("sigma_d", []), dtype=float),
            _kernel_from(cfg["mismatch"]["kernel"], "mismatch"),
            noise, seed,
            length=float(geom["length"]), area=float(geom["area"]),
            tip_load=float(geom["tip_load"]), mean_modulus=float(cfg["field"]["mu_E"]),
        )
    if problem == "bar-inhomogeneous":
        return datagen.gen_bar_inhomogeneous(
            int(cfg["sensors"]["n_sen"]), n_rep,
            float(physics.get("rho", 1.0)), noise, seed,
            amplitude=float(physics.get("amplitude", 0.75)),
            length=float(geom["length"]), area=float(geom["area"]),
            tip_load=float(geom["tip_load"]), mean_modulus=float(cfg["field"]["mu_E"]),
            n_elements=int(geom["n_elements"]),
        )
    # plate-hole
    if setup is None:
        setup = build_setup(cfg)
    return datagen.gen_plate_nh(
        setup.sensor_coords, n_rep, noise, seed,
        ring_factors=tuple(physics.get("ring_factors", (0.5, 0.6, 0.7, 0.8, 0.9))),
        mean_modulus=float(cfg["field"]["mu_E"]),
        traction=float(geom["traction"]), thickness=float(geom["thickness"]),
        nu=float(geom.get("nu", 0.5)),
        mesh=setup.mesh, layers=setup.layers,
        physics=physics.get("solver", "neo-hookean"),
    )


def with_sensors(prior_ctx: dict, cfg: dict) -> dict:
    """Rebind a prior context to the sensor layout of another config.

    The prior itself (KL expansion, grid, node solves, PC coefficients) is
    sensor-independent; only the observation matrix changes.
    """
    old = prior_ctx["setup"]
    fresh = build_setup(cfg)
    setup = ProblemSetup(mesh=old.mesh, n_dims=old.n_dims, link=old.link, kl=old.kl,
                         sensor_coords=fresh.sensor_coords,
                         H=observation_matrix(old.mesh, fresh.sensor_coords),
                         solve=old.solve, layers=old.layers)
    ctx = dict(prior_ctx)
    ctx["setup"] = setup
    return ctx


def true_nodal_field(cfg: dict, setup: ProblemSetup) -> np.ndarray | None:
    """Deterministic data-generating displacement at the mesh nodes,
    stacked per component; None when the generator has no nodal field."""
    physics = cfg["data"].get("physics", {})
    geom = cfg["geometry"]
    if cfg["problem"] == "plate-hole":
        youngs = datagen.damaged_youngs(
            setup.layers, float(cfg["field"]["mu_E"]),
            tuple(physics.get("ring_factors", (0.5, 0.6, 0.7, 0.8, 0.9))))
        loads = fem.edge_traction_loads(setup.mesh, fem.right_edge_nodes(setup.mesh),
                                        float(geom["traction"]), float(geom["thickness"]))
        prob = fem.PlaneStressProblem(mesh=setup.mesh, thickness=float(geom["thickness"]),
                                      nu=float(geom.get("nu", 0.5)), youngs=youngs,
                                      fixed_dofs=fem.clamp_nodes(fem.left_edge_nodes(setup.mesh)),
                                      loads=loads)
        if physics.get("solver", "neo-hookean") == "neo-hookean":
            u = fem.solve_plane_stress_nh(prob, fem.neo_hookean_from_youngs(youngs))
        else:
            u = fem.solve_plane_stress_le(prob)
        return np.concatenate([u[0::2], u[1::2]])
    if cfg["problem"] == "bar-inhomogeneous":
        mesh = setup.mesh
        youngs = datagen.sine_modulus(mesh.centroids, float(cfg["field"]["mu_E"]),
                                      float(physics.get("amplitude", 0.75)))
        u = fem.solve_bar(fem.BarProblem(mesh=mesh, area=float(geom["area"]),
                                         tip_load=float(geom["tip_load"]), youngs=youngs))
        return u
    if cfg["problem"] == "bar-homogeneous":
        return float(geom["tip_load"]) * setup.mesh.nodes / (float(geom["area"]) * float(cfg["field"]["mu_E"]))
    return None


def mismatch_mode_count(cfg: dict, sensor_coords: np.ndarray) -> int:
    mism = cfg["mismatch"]
    if mism.get("M_d", "auto") != "auto":
        return int(mism["M_d"])
    kernel = _kernel_from(mism["kernel"], "mismatch")
    eps = float(mism.get("epsilon", 0.001))
    kl = kl_decompose(kernel, sensor_coords, eps)
    return min(kl.M, sensor_coords.shape[0])


def stage_identify(cfg: dict, out: Path, obs: datagen.ObservationSet,
                   prior_ctx: dict | None = None, workers: int = 1) -> dict:
    setup = prior_ctx["setup"] if prior_ctx else build_setup(cfg)
    m_d = mismatch_mode_count(cfg, setup.sensor_coords)
    kernel = _kernel_from(cfg["mismatch"]["kernel"], "mismatch")
    klm = kl_decompose(kernel, setup.sensor_coords, 1e-15, n_modes=m_d) if m_d else None

    grid = nlml_grid(setup.kl.M, cfg)
    proj_grid = prior_ctx["grid"] if prior_ctx else None
    if prior_ctx and proj_grid is not None and len(proj_grid) == len(grid) \
            and np.array_equal(proj_grid.nodes, grid.nodes):
        evals = prior_ctx["evals"]
    else:
        evals = solve_at_nodes(setup, grid, workers)

    noise_cov = float(cfg["noise"]["sigma_e"]) ** 2 * np.eye(setup.n_sen)
    opt = cfg.get("optimizer", {})
    id_cfg = hyperopt.IdentifyConfig(
        n_starts=int(opt.get("n_starts", 8)),
        max_iterations=int(opt.get("max_iterations", 2000)),
        tolerance=float(opt.get("tolerance", 1e-8)),
    )

    results = []
    for v in range(setup.n_dims):
        hu = evals[v] @ setup.H.T
        ctx = hyperopt.NLMLContext(
            hu=hu, weights=grid.weights, Y=obs.component(v), cov_noise=noise_cov,
            lam=klm.eigenvalues if klm else np.zeros(0),
            phi=klm.eigenvectors if klm else np.zeros((setup.n_sen, 0)),
        )
        hp, report = hyperopt.identify(ctx, id_cfg)
        results.append({"hp": hp, "report": report})

    payload = {
        "schema_version": SCHEMA_VERSION,
        "problem": cfg["problem"],
        "M_d": m_d,
        "components": [
            {
                "dim": v,
                "rho": r["hp"].rho,
                "sigma_d": [float(s) for s in r["hp"].sigma_d],
                "theta": _json_float(r["report"].theta),
                "iterations": r["report"].iterations,
                "n_evaluations": r["report"].n_evaluations,
                "lse_failures": r["report"].lse_failures,
                "starts": r["report"].starts,
                "trace": [_json_float(t) for t in r["report"].trace],
            }
            for v, r in enumerate(results)
        ],
    }
    write_json(payload, out / "hyperparameters.json")
    return {"setup": setup, "m_d": m_d, "klm": klm, "results": results, "payload": payload}


def _json_float(x):
    x = float(x)
    return x if np.isfinite(x) else None


def load_prior_artifacts(cfg: dict, run_dir: Path) -> dict:
    """Reload the prior stage from its files (they round-trip exactly)."""
    path = run_dir / "pc_coefficients.csv"
    if not path.exists():
        raise ConfigError(f"prior files missing in {run_dir}; run the prior stage first")
    setup = build_setup(cfg)
    basis = build_basis(setup.kl.M, int(cfg["pce"]["order"]))
    priors = read_pc_coefficients(path, basis, setup.n_dims)
    moments = [pc_moments(p) for p in priors]
    return {"setup": setup, "basis": basis, "grid": None, "evals": None,
            "priors": priors, "moments": moments}


def stage_assimilate(cfg: dict, out: Path, obs: datagen.ObservationSet,
                     hyper: dict, prior_ctx: dict | None = None, workers: int = 1) -> dict:
    if prior_ctx is None:
        prior_ctx = load_prior_artifacts(cfg, out)
    setup = prior_ctx["setup"]
    priors = prior_ctx["priors"]
    kernel = _kernel_from(cfg["mismatch"]["kernel"], "mismatch")
    noise_sigma = float(cfg["noise"]["sigma_e"])
    sigma_e = noise_sigma * np.eye(setup.n_sen)
    gain_form = cfg.get("gain_form", "paper")
    scaling = cfg.get("mismatch_scaling", "replicated")
    n_rep = obs.n_rep

    components = hyper["components"] if "components" in hyper else hyper["payload"]["components"]
    posteriors = []
    for v in range(setup.n_dims):
        comp = components[v]
        sigma_modes = np.asarray(comp["sigma_d"], dtype=float)
        if sigma_modes.size:
            factors, _ = statfem.mismatch_factors(setup.sensor_coords, kernel, sigma_modes)
        else:
            factors = np.zeros((setup.n_sen, 0))
        model = statfem.GeneratingModel(H=setup.H, rho=float(comp["rho"]),
                                        sigma_d=factors, sigma_e=sigma_e)
        _, cov_u = prior_ctx["moments"][v]
        gain = statfem.kalman_gain(cov_u, model.H, model.rho, model.cov_mismatch,
                                   model.cov_noise, n_rep, form=gain_form)
        ext = statfem.assemble_extended(priors[v], model.sigma_d, model.sigma_e, obs.component(v))
        res = statfem.gmkf_update(ext, gain, model.rho, model.H, n_rep, mismatch_scaling=scaling)
        mu_z, cov_z = statfem.true_response(res, model.H, model.cov_mismatch, rho=model.rho)
        posteriors.append({"rho": model.rho, "res": res, "cov_d": model.cov_mismatch,
                           "mu_z": mu_z, "cov_z": cov_z})

    post_moments = [statfem.posterior_moments(p["res"]) for p in posteriors]
    write_moments(post_moments, out / "posterior_moments.csv")
    if cfg.get("debug_dumps"):
        for v, post in enumerate(posteriors):
            write_dense_csv(post["res"].gain, out / f"gain_dim{v}.csv")
            write_dense_csv(post_moments[v][1], out / f"posterior_cov_dim{v}.csv")
    write_true_response(posteriors, out / "true_response.csv")
    metrics = compute_metrics(cfg, setup, prior_ctx, posteriors, obs, components)
    write_json(metrics, out / "metrics.json")
    write_qoi_samples(cfg, setup, prior_ctx, posteriors, out / "qoi_samples.csv")
    return {"posteriors": posteriors, "post_moments": post_moments, "metrics": metrics}


def compute_metrics(cfg, setup, prior_ctx, posteriors, obs, components) -> dict:
    metrics_cfg = cfg.get("metrics", {})
    n_samples = int(metrics_cfg.get("n_samples", 1000))
    seed = int(metrics_cfg.get("seed", 90210))
    ref_n_r = int(metrics_cfg.get("reference_n_r", 1000))

    # reference data: same generator and seed, more replications (the
    # configured set is its prefix)
    seed0 = obs.metadata.get("seed", cfg["data"]["seed"])
    if ref_n_r > obs.n_rep:
        ref = generate_observations(cfg, seed=seed0, n_rep=ref_n_r, setup=setup)
    else:
        ref = obs

    err_components = []
    rmsd_components = []
    for v, post in enumerate(posteriors):
        err_components.append(statfem.err_metric(post["mu_z"], ref.component(v)))
        rng = datagen.replication_rng(seed, v)
        res = post["res"]
        xi = rng.standard_normal((n_samples, res.ext.basis.dim))
        chi = rng.standard_normal((n_samples, res.ext.m_d))
        zeta = rng.standard_normal((n_samples, res.ext.n_sen))
        samples = post["rho"] * (statfem.posterior_samples(res, xi, chi, zeta) @ setup.H.T)
        rmsd_components.append(statfem.rmsd(samples, obs.component(v)))

    mu_z_all = np.concatenate([p["mu_z"] for p in posteriors])
    err_total = statfem.err_metric(mu_z_all, ref.Y)
    # distances to the mean of the assimilated set: prior predictive
    # (rho-scaled prior mean at the sensors) against the posterior true
    # response
    obs_mean = obs.Y.mean(axis=1)
    prior_scaled = np.concatenate([
        components[v]["rho"] * (setup.H @ prior_ctx["moments"][v][0]) for v in range(setup.n_dims)
    ])
    # nodal agreement with the data-generating displacement field
    truth = true_nodal_field(cfg, setup)
    if truth is not None:
        post_field = np.concatenate([statfem.posterior_moments(p["res"])[0] for p in posteriors])
        prior_field = np.concatenate([prior_ctx["moments"][v][0] for v in range(setup.n_dims)])
        truth_rms = float(np.linalg.norm(post_field - truth) / np.sqrt(truth.size))
        prior_truth_rms = float(np.linalg.norm(prior_field - truth) / np.sqrt(truth.size))
    else:
        truth_rms = prior_truth_rms = None
    return {
        "schema_version": SCHEMA_VERSION,
        "problem": cfg["problem"],
        "n_sen": setup.n_sen,
        "n_r": obs.n_rep,
        "M_kappa": setup.kl.M,
        "M_d": len(components[0]["sigma_d"]),
        "n_pc_terms": len(prior_ctx["basis"]),
        "theta": [comp["theta"] for comp in components],
        "err": err_total,
        "err_components": err_components,
        "rmsd": float(np.sqrt(np.mean(np.square(rmsd_components)))),
        "rmsd_components": rmsd_components,
        "prior_mean_distance": float(np.linalg.norm(prior_scaled - obs_mean)),
        "posterior_mean_distance": float(np.linalg.norm(mu_z_all - obs_mean)),
        "truth_field_rms": truth_rms,
        "prior_truth_field_rms": prior_truth_rms,
    }


def write_qoi_samples(cfg, setup, prior_ctx, posteriors, path, n_samples=None, seed=None) -> None:
    """Prior and posterior draws of the quantity of interest (the node with
    the largest prior mean magnitude, component 0 unless configured)."""
    metrics_cfg = cfg.get("metrics", {})
    n_samples = int(metrics_cfg.get("n_samples", 1000)) if n_samples is None else n_samples
    seed = int(metrics_cfg.get("seed", 90210)) if seed is None else seed
    v = int(metrics_cfg.get("qoi_dim", 0))
    mean_prior = prior_ctx["moments"][v][0]
    node = int(metrics_cfg.get("qoi_node", int(np.argmax(np.abs(mean_prior)))))

    rng = datagen.replication_rng(seed, 1000 + v)
    res = posteriors[v]["res"]
    xi = rng.standard_normal((n_samples, res.ext.basis.dim))
    chi = rng.standard_normal((n_samples, res.ext.m_d))
    zeta = rng.standard_normal((n_samples, res.ext.n_sen))
    from .pce import pc_sample

    prior_draws = pc_sample(prior_ctx["priors"][v], xi)[:, node]
    post_draws = statfem.posterior_samples(res, xi, chi, zeta)[:, node]
    with open(path, "w", newline="\n") as fh:
        fh.write("sample_id,prior,posterior\n")
        for i in range(n_samples):
            fh.write(f"{i},{fmt(prior_draws[i])},{fmt(post_draws[i])}\n")


def stage_report(run_dir: Path, out: Path | None = None, cfg: dict | None = None) -> dict:
    out = run_dir if out is None else out
    required = ["kl_spectrum.csv", "pc_coefficients.csv", "prior_moments.csv",
                "observations.csv", "observations.json", "hyperparameters.json",
                "posterior_moments.csv", "true_response.csv", "metrics.json"]
    missing = [name for name in required if not (run_dir / name).exists()]
    if missing:
        raise ConfigError(f"run directory {run_dir} is incomplete; missing: {', '.join(missing)}")

    with open(run_dir / "metrics.json") as fh:
        metrics = json.load(fh)
    with open(run_dir / "hyperparameters.json") as fh:
        hyper = json.load(fh)
    with open(run_dir / "observations.json") as fh:
        obs_meta = json.load(fh)

    summary = {
        "schema_version": SCHEMA_VERSION,
        "problem": metrics["problem"],
        "n_sen": metrics["n_sen"],
        "n_r": metrics["n_r"],
        "M_kappa": metrics["M_kappa"],
        "M_d": metrics["M_d"],
        "n_pc_terms": metrics["n_pc_terms"],
        "theta_star": metrics["theta"],
        "err": metrics["err"],
        "rmsd": metrics["rmsd"],
        "rho": [c["rho"] for c in hyper["components"]],
        "sigma_d": [c["sigma_d"] for c in hyper["components"]],
        "data_seed": obs_meta["seed"],
    }
    write_json(summary, out / "summary.json")
    coords = None
    if cfg is not None:
        coords = np.atleast_2d(build_setup(cfg).mesh.nodes.T).T
    write_band_data(run_dir, out / "band_data.csv", coords)
    return summary


# ---------------------------------------------------------------------------
# writers / readers
# ---------------------------------------------------------------------------

def write_dense_csv(matrix: np.ndarray, path) -> None:
    """Plain dense matrix dump (debug artifacts)."""
    with open(path, "w", newline="\n") as fh:
        for row in np.atleast_2d(matrix):
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_json(payload: dict, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def write_kl_spectrum(kl: KLExpansion, path) -> None:
    total = kl.eigenvalues.sum()
    running = np.cumsum(kl.eigenvalues)
    with open(path, "w", newline="\n") as fh:
        fh.write("mode,eigenvalue,cumulative_share\n")
        for i, lam in enumerate(kl.eigenvalues):
            fh.write(f"{i + 1},{fmt(lam)},{fmt(running[i] / total)}\n")


def write_pc_coefficients(priors: list[PCField], path) -> None:
    n_terms = len(priors[0].basis)
    header = "point_id,dim," + ",".join(f"j{j}" for j in range(n_terms))
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for v, field in enumerate(priors):
            for i in range(field.n_points):
                row = ",".join(fmt(c) for c in field.coefficients[i])
                fh.write(f"{i},{v},{row}\n")


def read_pc_coefficients(path, basis: PCBasis, n_dims: int) -> list[PCField]:
    raw = np.loadtxt(path, delimiter=",", skiprows=1)
    fields = []
    for v in range(n_dims):
        rows = raw[raw[:, 1] == v]
        rows = rows[np.argsort(rows[:, 0])]
        fields.append(PCField(basis=basis, coefficients=rows[:, 2:]))
    return fields


def write_moments(moments, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("node_id,dim,mean,std\n")
        for v, (mean, cov) in enumerate(moments):
            std = np.sqrt(np.clip(np.diag(cov), 0.0, None))
            for i in range(mean.size):
                fh.write(f"{i},{v},{fmt(mean[i])},{fmt(std[i])}\n")


def write_true_response(posteriors, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("sensor_id,dim,mean,std\n")
        for v, post in enumerate(posteriors):
            std = np.sqrt(np.clip(np.diag(post["cov_z"]), 0.0, None))
            for k in range(post["mu_z"].size):
                fh.write(f"{k},{v},{fmt(post['mu_z'][k])},{fmt(std[k])}\n")


def write_observations(obs: datagen.ObservationSet, csv_path, json_path) -> None:
    coords = np.atleast_2d(obs.sensor_coords)
    n_axes = coords.shape[1]
    axis_names = ["x", "y"][:n_axes]
    n_dims = obs.Y.shape[0] // obs.n_sen
    header = "sensor_id,dim," + ",".join(axis_names) + "," + ",".join(f"r{r}" for r in range(obs.n_rep))
    with open(csv_path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for v in range(n_dims):
            block = obs.component(v)
            for k in range(obs.n_sen):
                coord = ",".join(fmt(c) for c in coords[k])
                vals = ",".join(fmt(x) for x in block[k])
                fh.write(f"{k},{v},{coord},{vals}\n")
    write_json({"schema_version": SCHEMA_VERSION, **obs.metadata}, json_path)


def read_observations(csv_path, json_path=None) -> datagen.ObservationSet:
    with open(csv_path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    n_axes = sum(1 for name in header if name in ("x", "y"))
    data = np.array([[float(v) for v in row] for row in rows])
    dims = data[:, 1].astype(int)
    n_dims = dims.max() + 1
    coords = data[dims == 0][:, 2 : 2 + n_axes]
    blocks = [data[dims == v][:, 2 + n_axes :] for v in range(n_dims)]
    y = np.vstack(blocks)
    meta = {}
    if json_path is not None and Path(json_path).exists():
        with open(json_path) as fh:
            meta = json.load(fh)
    return datagen.ObservationSet(sensor_coords=coords, Y=y, metadata=meta)


def write_band_data(run_dir: Path, path, coords: np.ndarray | None = None) -> None:
    """Consolidated prior/posterior moments for the plotting component,
    with node coordinates when the mesh is available."""
    prior = np.loadtxt(run_dir / "prior_moments.csv", delimiter=",", skiprows=1)
    post = np.loadtxt(run_dir / "posterior_moments.csv", delimiter=",", skiprows=1)
    axes = ""
    if coords is not None:
        axes = ",".join(["x", "y"][: coords.shape[1]]) + ","
    with open(path, "w", newline="\n") as fh:
        fh.write(f"node_id,dim,{axes}prior_mean,prior_std,post_mean,post_std\n")
        for rp, ra in zip(prior, post):
            pos = ""
            if coords is not None:
                pos = ",".join(fmt(c) for c in coords[int(rp[0])]) + ","
            fh.write(f"{int(rp[0])},{int(rp[1])},{pos}{fmt(rp[2])},{fmt(rp[3])},{fmt(ra[2])},{fmt(ra[3])}\n")
