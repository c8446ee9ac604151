"""Training runs, initialization grids and the synthetic fast-front dataset."""

from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import gpr
from .diffusion import (
    LossReport,
    SensorError,
    diffusion_loss,
    select_top_diagonals,
    sensor_true_md,
)
from .kernels import Hyperparams, KernelSpec, pack_log, pack_raw, param_names, unpack_log, unpack_raw
from .mesh import StructuredMesh, build_staggered_mesh, load_mesh_csv, normalize_mesh
from .optimize import (
    OK_STATUSES,
    ConvergenceHistory,
    OptimizerConfig,
    minimize_dfo,
    minimize_quasi_newton,
)

log = logging.getLogger(__name__)

LML = "LML"
DIFFUSION = "DIFFUSION"
METHODS = (LML, DIFFUSION)

DEFAULT_LENGTHSCALE_INITS = (0.01, 0.1, 0.5, 1.0, 5.0, 10.0)
LITERAL_LENGTHSCALE_INITS = (0.01, 0.01, 0.5, 1.0, 5.0, 10.0)
DEFAULT_ALPHA_INITS = (0.005, 0.05, 0.5, 5.0, 10.0, 50.0)


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Stand-in for a measured operating envelope on a ``19 x 15 x 5`` grid.

    The field is smooth and positive.  It rises through a sigmoidal front along
    axis 1, bends sharply across a ridge that combines axes 1 and 2 near the
    high corner, thickens with axis 3 and flattens near the top of axis 1.
    """

    shape: tuple[int, ...] = (19, 15, 5)
    seed: int = 0
    front1_width: float = 0.06
    ridge_width: float = 0.012
    # raw coordinate ranges per axis
    ranges: tuple[tuple[float, float], ...] = ((1000.0, 10000.0), (0.0, 140.0), (0.3, 0.7))

    def __post_init__(self):
        if len(self.shape) != 3:
            raise ValueError("the synthetic generator is 3-d")
        if any(n < 2 for n in self.shape):
            raise ValueError(f"every axis needs at least 2 points, got {self.shape}")

    def check_sensor_ready(self):
        if any(n < 3 for n in self.shape):
            raise ValueError(f"axis requires >= 3 points for sensors, got {self.shape}")


def _unit_coords(spec: SyntheticSpec):
    return [np.linspace(0.0, 1.0, n) for n in spec.shape]


def synthetic_parameters(spec: SyntheticSpec) -> dict:
    """Seed-dependent shape parameters of the ground-truth function."""
    rng = np.random.default_rng(spec.seed)
    return {
        "front1_center": 0.55 + 0.05 * rng.uniform(-1, 1),
        "ridge_offset": 1.35 + 0.03 * rng.uniform(-1, 1),
        "ridge_tilt": 1.0 + 0.1 * rng.uniform(-1, 1),
        "thickness": 0.2 + 0.05 * rng.uniform(-1, 1),
    }


def synthetic_truth(spec: SyntheticSpec, u) -> np.ndarray:
    """Ground-truth value (before scaling to (0, 1]) at unit-cube points ``u``."""
    u = np.asarray(u, dtype=float)
    u1, u2, u3 = u[..., 0], u[..., 1], u[..., 2]
    p = synthetic_parameters(spec)
    front = 1.0 / (1.0 + np.exp(-(u1 - p["front1_center"]) / spec.front1_width))
    z = (u1 + p["ridge_tilt"] * u2 - p["ridge_offset"]) / spec.ridge_width
    ridge = spec.ridge_width * np.logaddexp(0.0, z)
    top = np.maximum(u1 - 0.85, 0.0) ** 2 / 0.15
    return (
        0.2
        + 0.1 * u1
        + 0.1 * u2
        + 0.25 * front * (0.2 + 0.8 * u2)
        + 0.8 * ridge * (1.0 + p["thickness"] * u3)
        - 0.3 * top * (1.0 - 0.5 * u3)
        + 0.04 * u3 * (1.0 - u1)
    )


def _truth_bounds(spec: SyntheticSpec):
    vals = synthetic_truth(spec, np.stack(np.meshgrid(*_unit_coords(spec), indexing="ij"), -1))
    return float(vals.min()), float(vals.max())


def synthetic_value(spec: SyntheticSpec, u) -> np.ndarray:
    """Ground truth mapped into ``(0, 1]`` exactly as the generated mesh values."""
    lo, hi = _truth_bounds(spec)
    return 0.05 + 0.95 * (synthetic_truth(spec, u) - lo) / (hi - lo)


def generate_synthetic_dataset(shape=(19, 15, 5), seed: int = 0, force: bool = False, **kw) -> StructuredMesh:
    """Mesh of the synthetic field; ``force`` allows axes too short for the sensors."""
    spec = SyntheticSpec(tuple(shape), seed, **kw)
    if not force:
        spec.check_sensor_ready()
    unit = _unit_coords(spec)
    grid = np.stack(np.meshgrid(*unit, indexing="ij"), -1)
    values = synthetic_value(spec, grid)
    axes = tuple(a + (b - a) * c for (a, b), c in zip(spec.ranges, unit))
    return StructuredMesh(axes, values, ("param1", "param2", "param3"))


def ground_truth_record(spec: SyntheticSpec) -> dict:
    """Everything needed to re-evaluate the generating function off the mesh."""
    lo, hi = _truth_bounds(spec)
    return {
        "generator": "meshdiff.experiment.synthetic_value",
        "shape": list(spec.shape),
        "seed": spec.seed,
        "front1_width": spec.front1_width,
        "ridge_width": spec.ridge_width,
        "ranges": [list(r) for r in spec.ranges],
        "parameters": synthetic_parameters(spec),
        "truth_min": lo,
        "truth_max": hi,
        "value_map": "0.05 + 0.95 * (truth - truth_min) / (truth_max - truth_min)",
    }


def spec_from_ground_truth(record: dict) -> SyntheticSpec:
    return SyntheticSpec(tuple(record["shape"]), int(record["seed"]), float(record["front1_width"]),
                         float(record["ridge_width"]), tuple(tuple(r) for r in record["ranges"]))


def ground_truth_at(record: dict, raw_points) -> np.ndarray:
    """Generated value at arbitrary raw-coordinate points, off-mesh included."""
    spec = spec_from_ground_truth(record)
    x = np.asarray(raw_points, dtype=float)
    lo = np.array([r[0] for r in spec.ranges])
    hi = np.array([r[1] for r in spec.ranges])
    return synthetic_value(spec, (x - lo) / (hi - lo))


# --------------------------------------------------------------------------
# objectives


class LMLObjective:
    """Negative LML and its gradient over log-packed hyperparameters."""

    def __init__(self, mesh: StructuredMesh, template: KernelSpec, noise: float = gpr.NOISELESS_JITTER):
        self.mesh = mesh
        self.template = template
        self.noise = noise
        self.points = mesh.points
        self.values = mesh.values.ravel()

    def model(self, spec: KernelSpec) -> gpr.GPModel:
        return gpr.fit_with_jitter(self.points, self.values, spec, self.noise)

    def __call__(self, x):
        spec = unpack_log(self.template, x)
        try:
            m = self.model(spec)
        except np.linalg.LinAlgError:
            return math.nan, np.full(len(x), math.nan), {}
        return -gpr.log_marginal_likelihood(m), -gpr.lml_gradient(m), {"noise": m.noise}


class DiffusionObjective:
    """Training-plus-diffusion loss over raw (positive) hyperparameters."""

    def __init__(self, mesh: StructuredMesh, template: KernelSpec, noise: float = gpr.NOISELESS_JITTER,
                 beta1: float = 1.0, beta2: float = 1.0, appendix_scaling: bool = False,
                 top_diagonals: int | None = None):
        self.mesh = mesh
        self.template = template
        self.noise = noise
        self.beta1, self.beta2 = beta1, beta2
        self.appendix_scaling = appendix_scaling
        self.stag = build_staggered_mesh(mesh)
        label = sensor_true_md(mesh, appendix_scaling=appendix_scaling)
        if top_diagonals is not None:
            label = label.restrict(select_top_diagonals(label, top_diagonals))
        self.true_label = label
        self.points = mesh.points
        self.values = mesh.values.ravel()

    def model(self, spec: KernelSpec) -> gpr.GPModel:
        return gpr.fit_with_jitter(self.points, self.values, spec, self.noise)

    def report(self, spec: KernelSpec) -> LossReport:
        m = self.model(spec)
        return diffusion_loss(m, self.mesh, self.stag, self.true_label, self.beta1, self.beta2,
                              appendix_scaling=self.appendix_scaling)

    def __call__(self, x):
        spec = unpack_raw(self.template, x)
        try:
            rep = self.report(spec)
        except (np.linalg.LinAlgError, SensorError):
            return math.nan, {}
        return rep.total, {"rmse_training": rep.rmse_training, "rmse_diffusion": rep.rmse_diffusion}


# --------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str | None = None
    synthetic: SyntheticSpec | None = field(default_factory=SyntheticSpec)
    kernels: tuple[str, ...] = ("SE", "RQ")
    lengthscale_inits: tuple[float, ...] = DEFAULT_LENGTHSCALE_INITS
    alpha_inits: tuple[float, ...] = DEFAULT_ALPHA_INITS
    sigma: float = 0.15
    noise: float = gpr.NOISELESS_JITTER
    methods: tuple[str, ...] = METHODS
    beta1: float = 1.0
    beta2: float = 1.0
    value_floor: float = 0.05
    appendix_scaling: bool = False
    top_diagonals: int | None = None
    tied_lengthscales: bool = False
    lml_optimizer: OptimizerConfig = field(default_factory=OptimizerConfig.quasi_newton)
    dfo_optimizer: OptimizerConfig = field(default_factory=OptimizerConfig.dfo)
    dfo_lower_bound: float = 1e-6
    output_dir: str = "results"
    jobs: int = 1
    slice_fixed: dict | None = None
    slice_dense_factor: int = 10
    train_sigma: bool = False
    # kind -> overrides of sigma, train_sigma, lengthscale_inits, alpha_inits
    per_kernel: dict | None = None

    def kernel_setting(self, kind: str, name: str):
        over = (self.per_kernel or {}).get(kind, {})
        return over.get(name, getattr(self, name))

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        for kind in self.kernels:
            if not self.kernel_setting(kind, "sigma") > 0:
                raise ValueError(f"sigma for {kind} must be positive")
            if not self.kernel_setting(kind, "lengthscale_inits"):
                raise ValueError(f"{kind} needs at least one lengthscale init")
            if kind == "RQ" and not self.kernel_setting(kind, "alpha_inits"):
                raise ValueError("RQ kernels need at least one alpha init")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        for k in self.kernels:
            if k not in ("SE", "RQ"):
                raise ValueError(f"unknown kernel kind {k!r}")


@dataclass(frozen=True)
class RunSpec:
    method: str
    kind: str
    lengthscale: float
    alpha: float | None = None
    # earlier occurrences of the same init in the grid; keeps run ids unique
    repeat: int = 0

    @property
    def run_id(self) -> str:
        rid = f"{self.method.lower()}-{self.kind}-ls{self.lengthscale:g}"
        rid += f"-a{self.alpha:g}" if self.alpha is not None else ""
        return rid + (f"-rep{self.repeat}" if self.repeat else "")


@dataclass
class RunResult:
    run_id: str
    method: str
    kernel: str
    initial_params: dict
    final_params: dict
    final_lml: float
    final_loss: LossReport | None
    history: ConvergenceHistory
    wall_time: float
    status: str
    message: str = ""
    noise: float = gpr.NOISELESS_JITTER
    param_names: list = field(default_factory=list)

    @property
    def n_evals(self) -> int:
        return len(self.history)

    @property
    def ok(self) -> bool:
        return self.status in OK_STATUSES and self.final_loss is not None

    def final_spec(self, template: KernelSpec) -> KernelSpec:
        return template.with_params(
            sigma=self.final_params["sigma"],
            lengthscales=tuple(self.final_params["lengthscales"]),
            alpha=self.final_params.get("alpha"),
        )


def _params_dict(spec: KernelSpec) -> dict:
    d = {"sigma": spec.params.sigma, "lengthscales": list(spec.params.lengthscales)}
    if spec.kind == "RQ":
        d["alpha"] = spec.params.alpha
    return d


def grid_runs(config: ExperimentConfig) -> list[RunSpec]:
    """Cartesian product kernel x init x method, in a fixed order."""
    runs, seen = [], {}
    for kind in config.kernels:
        alphas = config.kernel_setting(kind, "alpha_inits") if kind == "RQ" else (None,)
        for ls, a in itertools.product(config.kernel_setting(kind, "lengthscale_inits"), alphas):
            for method in config.methods:
                run = RunSpec(method, kind, float(ls), None if a is None else float(a))
                n = seen.get(run, 0)
                seen[run] = n + 1
                runs.append(replace(run, repeat=n))
    return runs


def initial_spec(config: ExperimentConfig, run: RunSpec, dims: int) -> KernelSpec:
    return KernelSpec(
        run.kind,
        Hyperparams(config.kernel_setting(run.kind, "sigma"), (run.lengthscale,) * dims, run.alpha),
        train_sigma=config.kernel_setting(run.kind, "train_sigma"),
        tied_lengthscales=config.tied_lengthscales,
    )


def prepare_mesh(config: ExperimentConfig):
    """Load or generate the dataset and normalize it; returns ``(raw, normalized, record)``."""
    if config.dataset:
        raw = load_mesh_csv(config.dataset)
    elif config.synthetic is not None:
        s = config.synthetic
        raw = generate_synthetic_dataset(s.shape, s.seed, front1_width=s.front1_width,
                                         ridge_width=s.ridge_width, ranges=s.ranges)
    else:
        raise ValueError("config needs a dataset path or a synthetic spec")
    norm, rec = normalize_mesh(raw, config.value_floor)
    return raw, norm, rec


def _diffusion_objective(mesh, template, config):
    return DiffusionObjective(mesh, template, config.noise, config.beta1, config.beta2,
                              config.appendix_scaling, config.top_diagonals)


def run_lml_training(mesh: StructuredMesh, spec: KernelSpec, config: ExperimentConfig,
                     run_id: str | None = None, diff_obj: DiffusionObjective | None = None) -> RunResult:
    """Maximize the LML from ``spec`` with L-BFGS-B in log-parameter space."""
    t0 = time.perf_counter()
    obj = LMLObjective(mesh, spec, config.noise)
    diff_obj = diff_obj or _diffusion_objective(mesh, spec, config)

    def objective(x):
        val, grad, comps = obj(x)
        return val, grad, comps

    res = minimize_quasi_newton(objective, pack_log(spec), config.lml_optimizer)
    final = unpack_log(spec, res.x)
    lml, loss, noise, status = math.nan, None, config.noise, res.status
    try:
        model = obj.model(final)
        lml = gpr.log_marginal_likelihood(model)
        noise = model.noise
        loss = diffusion_loss(model, diff_obj.mesh, diff_obj.stag, diff_obj.true_label,
                              config.beta1, config.beta2, appendix_scaling=config.appendix_scaling)
    except (np.linalg.LinAlgError, SensorError) as err:
        status = "failed"
        log.warning("final evaluation failed for %s: %s", run_id, err)
    return RunResult(
        run_id or f"lml-{spec.kind}", LML, spec.kind, _params_dict(spec), _params_dict(final), lml, loss,
        res.history, time.perf_counter() - t0, status, res.message, noise, param_names(spec),
    )


def run_diffusion_training(mesh: StructuredMesh, spec: KernelSpec, config: ExperimentConfig,
                           run_id: str | None = None, diff_obj: DiffusionObjective | None = None) -> RunResult:
    """Minimize the diffusion loss from ``spec`` with the derivative-free optimizer."""
    t0 = time.perf_counter()
    obj = diff_obj if diff_obj is not None else _diffusion_objective(mesh, spec, config)
    if obj.template != spec:
        obj = _diffusion_objective(mesh, spec, config)
    x0 = pack_raw(spec)
    n = len(x0)
    ocfg = config.dfo_optimizer
    if ocfg.lower_bounds is None:
        ocfg = replace(ocfg, lower_bounds=(config.dfo_lower_bound,) * n)
    res = minimize_dfo(obj, x0, ocfg)
    final = unpack_raw(spec, res.x)
    lml, loss, noise, status = math.nan, None, config.noise, res.status
    try:
        model = obj.model(final)
        noise = model.noise
        lml = gpr.log_marginal_likelihood(model)
        loss = obj.report(final)
    except (np.linalg.LinAlgError, SensorError) as err:
        status = "failed"
        log.warning("final evaluation failed for %s: %s", run_id, err)
    return RunResult(
        run_id or f"diffusion-{spec.kind}", DIFFUSION, spec.kind, _params_dict(spec), _params_dict(final),
        lml, loss, res.history, time.perf_counter() - t0, status, res.message, noise, param_names(spec),
    )


def execute_run(mesh: StructuredMesh, config: ExperimentConfig, run: RunSpec) -> RunResult:
    spec = initial_spec(config, run, mesh.dims)
    fn = run_lml_training if run.method == LML else run_diffusion_training
    try:
        return fn(mesh, spec, config, run.run_id)
    except Exception as err:  # isolate one run's failure from the grid
        log.exception("run %s failed", run.run_id)
        return RunResult(run.run_id, run.method, run.kind, _params_dict(spec), _params_dict(spec),
                         math.nan, None, ConvergenceHistory(), 0.0, "failed", repr(err))


def _execute_star(args):
    return execute_run(*args)


def run_grid(config: ExperimentConfig, mesh: StructuredMesh | None = None, on_result=None,
             jobs: int | None = None) -> list[RunResult]:
    """Run every grid cell; results come back in grid order.

    ``on_result`` is called in the parent process as each run finishes, so
    writing stays serialized however many workers execute runs.
    """
    if mesh is None:
        _, mesh, _ = prepare_mesh(config)
    runs = grid_runs(config)
    if not runs:
        return []
    jobs = config.jobs if jobs is None else jobs
    results: dict[str, RunResult] = {}
    if jobs <= 1:
        for run in runs:
            r = execute_run(mesh, config, run)
            results[run.run_id] = r
            if on_result:
                on_result(r)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for r in pool.map(_execute_star, [(mesh, config, run) for run in runs]):
                results[r.run_id] = r
                if on_result:
                    on_result(r)
    return [results[r.run_id] for r in runs]


# --------------------------------------------------------------------------
# slices


def slice_predictions(model: gpr.GPModel, mesh: StructuredMesh, fixed: dict, dense_factor: int = 10) -> dict:
    """Dense 1-d sweep of the posterior along the single axis not in ``fixed``.

    ``fixed`` maps axis index to a coordinate in the model's (normalized) units.
    Returns columns ``coord``, ``mean``, ``var`` and ``train`` (the training
    value where the sweep passes through a node, NaN elsewhere).
    """
    d = mesh.dims
    fixed = {int(k): float(v) for k, v in fixed.items()}
    free = [k for k in range(d) if k not in fixed]
    if len(free) != 1 or any(k < 0 or k >= d for k in fixed):
        raise ValueError("fixed coordinates must leave exactly one free axis")
    if dense_factor < 1:
        raise ValueError("dense_factor must be at least 1")
    for k, v in fixed.items():
        c = mesh.axis_coords[k]
        if v < c[0] - 1e-12 or v > c[-1] + 1e-12:
            raise ValueError(f"fixed coordinate {v} outside axis {k} range [{c[0]}, {c[-1]}]")
    ax = free[0]
    c = mesh.axis_coords[ax]
    dense = np.concatenate(
        [np.linspace(c[i], c[i + 1], dense_factor, endpoint=False) for i in range(len(c) - 1)] + [c[-1:]]
    )
    pts = np.zeros((len(dense), d))
    for k, v in fixed.items():
        pts[:, k] = v
    pts[:, ax] = dense

    train = np.full(len(dense), np.nan)
    node_idx = {}
    for k, v in fixed.items():
        hit = np.flatnonzero(np.abs(mesh.axis_coords[k] - v) <= 1e-9)
        if len(hit) == 0:
            break
        node_idx[k] = int(hit[0])
    else:
        for j, x in enumerate(dense):
            hit = np.flatnonzero(np.abs(c - x) <= 1e-9)
            if len(hit):
                idx = [0] * d
                for k, i in node_idx.items():
                    idx[k] = i
                idx[ax] = int(hit[0])
                train[j] = mesh.values[tuple(idx)]
    return {
        "coord": dense,
        "mean": gpr.predict_mean(model, pts),
        "var": gpr.predict_var(model, pts),
        "train": train,
    }


def wiggle_count(values) -> int:
    """Sign changes in the discrete second difference along a line."""
    d2 = np.diff(np.asarray(values, dtype=float), 2)
    s = np.sign(d2[np.abs(d2) > 1e-12 * max(1.0, float(np.max(np.abs(values))))])
    return int(np.sum(s[1:] != s[:-1]))


# --------------------------------------------------------------------------
# summary statistics used by the comparisons


def lengthscale_cv(results: list[RunResult]) -> float:
    """Mean over axes of the coefficient of variation of the final lengthscales."""
    ls = np.array([r.final_params["lengthscales"] for r in results], dtype=float)
    if len(ls) < 2:
        return 0.0
    return float(np.mean(np.std(ls, axis=0) / np.mean(ls, axis=0)))
