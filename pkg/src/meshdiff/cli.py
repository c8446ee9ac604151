"""``meshdiff`` command line.

Exit codes: 0 success, 1 invalid input (validated before any computation),
2 runtime failure (including a grid in which some run did not finish OK).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gpr
from .config import ConfigError, load_config
from .diffusion import SensorError, sensor_true_md
from .experiment import (
    DIFFUSION,
    LML,
    ExperimentConfig,
    RunSpec,
    SyntheticSpec,
    execute_run,
    initial_spec,
    generate_synthetic_dataset,
    ground_truth_record,
    prepare_mesh,
    slice_predictions,
)
from .kernels import Hyperparams, KernelSpec
from .mesh import MeshError, load_mesh_csv, normalize_mesh, write_mesh_csv
from .plotting import PLOT_KINDS, PlotError, plot_results
from .results import (
    ResultWriter,
    run_and_write_grid,
    sensor_summary,
    true_label,
    write_json,
    write_sensor_csv,
    write_slice_csv,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("meshdiff")


class UsageError(Exception):
    """Bad command-line input, reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_shape(text: str) -> tuple[int, ...]:
    try:
        shape = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"shape must look like 19x15x5, got {text!r}") from None
    if any(n < 1 for n in shape):
        raise UsageError(f"shape entries must be positive, got {text!r}")
    return shape


def parse_fixed(items, names) -> dict[int, float]:
    fixed = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--fixed expects AXIS=VALUE, got {item!r}")
        key = key.strip()
        if key.isdigit():
            k = int(key)
        elif key in names:
            k = names.index(key)
        else:
            raise UsageError(f"unknown axis {key!r}; use an index or one of {', '.join(names)}")
        try:
            fixed[k] = float(val)
        except ValueError:
            raise UsageError(f"--fixed value for {key!r} is not a number") from None
    return fixed


def _raw_to_index(rec, k, v):
    if rec.raw_axes and rec.raw_axes[k] is not None:
        raw = np.asarray(rec.raw_axes[k])
        return float(np.interp(v, raw, np.arange(len(raw))))
    return v * rec.coord_scale[k] + rec.coord_shift[k]


def _sidecar_path(out: Path) -> Path:
    return out.with_name(out.stem + ".truth.json")


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    shape = parse_shape(args.shape)
    if len(shape) != 3:
        raise UsageError("the synthetic generator takes a 3-axis shape")
    if any(n < 3 for n in shape) and not args.force:
        raise UsageError(f"axis requires >= 3 points for sensors (shape {args.shape}); pass --force to write anyway")
    if any(n < 3 for n in shape):
        log.warning("axis requires >= 3 points for sensors; writing anyway because of --force")
    try:
        spec = SyntheticSpec(shape, args.seed)
    except ValueError as err:
        raise UsageError(str(err)) from None
    out = Path(args.out)
    mesh = generate_synthetic_dataset(shape, args.seed, force=True)
    write_mesh_csv(mesh, out)
    write_json(_sidecar_path(out), ground_truth_record(spec))
    print(f"wrote {mesh.n} rows to {out}")
    return EXIT_OK


def cmd_sensors(args) -> int:
    mesh = load_mesh_csv(args.data)
    norm, _ = normalize_mesh(mesh, args.value_floor)
    if any(n < 3 for n in norm.shape):
        raise UsageError(f"axis requires >= 3 points for sensors, got shape {norm.shape}")
    field = sensor_true_md(norm, appendix_scaling=args.appendix_scaling)
    out = Path(args.out)
    write_sensor_csv(out, field)
    summary = sensor_summary(field)
    write_json(out.with_name(out.stem + ".summary.json"), summary)
    print(json.dumps(summary["total"], sort_keys=True))
    return EXIT_OK


def _fit_config(args) -> ExperimentConfig:
    synth = None if args.data else SyntheticSpec(parse_shape(args.shape), args.seed)
    return ExperimentConfig(
        dataset=args.data, synthetic=synth, kernels=(args.kernel,), lengthscale_inits=(args.lengthscale,),
        alpha_inits=(args.alpha,) if args.alpha else (), sigma=args.sigma, noise=args.noise,
        methods=(args.method,), beta1=args.beta1, beta2=args.beta2, output_dir=args.out,
    )


def cmd_fit(args) -> int:
    if args.kernel == "RQ" and args.alpha is None:
        raise UsageError("--alpha is required for the RQ kernel")
    if args.kernel == "SE" and args.alpha is not None:
        raise UsageError("--alpha only applies to the RQ kernel")
    for name in ("lengthscale", "alpha", "sigma"):
        v = getattr(args, name)
        if v is not None and not v > 0:
            raise UsageError(f"--{name} must be positive")
    if not args.noise >= 0:
        raise UsageError("--noise must be non-negative")
    try:
        config = _fit_config(args)
    except ValueError as err:
        raise UsageError(str(err)) from None
    raw, mesh, rec = prepare_mesh(config)
    fixed = parse_fixed(args.fixed, list(mesh.names))
    if fixed:
        _check_fixed(mesh, fixed)
    run = RunSpec(args.method, args.kernel, args.lengthscale, args.alpha)
    if fixed:
        config = replace(config, slice_fixed=fixed, slice_dense_factor=args.dense_factor)
    result = execute_run(mesh, config, run)
    writer = ResultWriter(args.out, config, mesh, rec, true_label(mesh, config))
    writer.record(result, initial_spec(config, run, mesh.dims))
    writer.write_summary()
    print(f"{result.run_id}: status {result.status}, lengthscales "
          + " ".join(f"{v:.6g}" for v in result.final_params["lengthscales"]))
    return EXIT_OK if result.ok else EXIT_RUNTIME


def _check_fixed(mesh, fixed):
    free = [k for k in range(mesh.dims) if k not in fixed]
    if len(free) != 1 or any(not 0 <= k < mesh.dims for k in fixed):
        raise UsageError("--fixed must leave exactly one free axis")
    for k, v in fixed.items():
        c = mesh.axis_coords[k]
        if not c[0] <= v <= c[-1]:
            raise UsageError(f"--fixed value {v} outside axis {k} range [{c[0]:g}, {c[-1]:g}]")


def cmd_grid(args) -> int:
    config = load_config(args.config)
    out = args.out or config.output_dir
    results = run_and_write_grid(config, out, jobs=args.jobs)
    bad = [r.run_id for r in results if not r.ok]
    print(f"{len(results)} runs written to {out}; {len(bad)} not OK")
    for rid in bad:
        print(f"  not OK: {rid}")
    return EXIT_OK if not bad else EXIT_RUNTIME


def cmd_slice(args) -> int:
    run_dir = Path(args.run_dir)
    result_path = run_dir / "result.json"
    info_path = run_dir.parent / "dataset.json"
    for p in (result_path, info_path):
        if not p.exists():
            raise UsageError(f"missing input {p}")
    result = json.loads(result_path.read_text(encoding="utf-8"))
    info = json.loads(info_path.read_text(encoding="utf-8"))
    if info.get("dataset"):
        config = ExperimentConfig(dataset=info["dataset"], synthetic=None)
    else:
        s = info["synthetic"]
        config = ExperimentConfig(synthetic=SyntheticSpec(tuple(s["shape"]), int(s["seed"])))
    _, mesh, rec = prepare_mesh(config)
    fixed = parse_fixed(args.fixed, list(mesh.names))
    if args.raw_units:
        fixed = {k: _raw_to_index(rec, k, v) for k, v in fixed.items()}
    p = result["final_params"]
    spec = KernelSpec(result["kernel"], Hyperparams(p["sigma"], tuple(p["lengthscales"]), p.get("alpha")))
    model = gpr.fit_with_jitter(mesh.points, mesh.values.ravel(), spec, result.get("noise", gpr.NOISELESS_JITTER))
    try:
        table = slice_predictions(model, mesh, fixed, args.dense_factor)
    except ValueError as err:
        raise UsageError(str(err)) from None
    write_slice_csv(args.out, table)
    print(f"wrote {len(table['coord'])} slice rows to {args.out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    if not Path(args.results).is_dir():
        raise UsageError(f"results directory {args.results} does not exist")
    try:
        out = plot_results(args.results, args.kind, args.out, args.run)
    except PlotError as err:
        raise UsageError(str(err)) from None
    print(f"wrote {out}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="meshdiff", description="Diffusion-regularized Gaussian-process training on structured meshes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write the synthetic dataset and its ground-truth sidecar")
    s.add_argument("--shape", default="19x15x5")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true", help="allow axes shorter than the sensor stencil")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("sensors", help="true-label diffusion sensor of a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--value-floor", type=float, default=0.05)
    s.add_argument("--appendix-scaling", action="store_true")
    s.set_defaults(func=cmd_sensors)

    s = sub.add_parser("fit", help="train one model and write its run directory")
    s.add_argument("--data", help="dataset CSV (default: synthetic)")
    s.add_argument("--shape", default="19x15x5")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--kernel", choices=("SE", "RQ"), default="SE")
    s.add_argument("--method", choices=(LML, DIFFUSION), default=DIFFUSION)
    s.add_argument("--lengthscale", type=float, default=1.0)
    s.add_argument("--alpha", type=float)
    s.add_argument("--sigma", type=float, default=0.15)
    s.add_argument("--noise", type=float, default=gpr.NOISELESS_JITTER)
    s.add_argument("--beta1", type=float, default=1.0)
    s.add_argument("--beta2", type=float, default=1.0)
    s.add_argument("--fixed", action="append", help="AXIS=VALUE in index units; writes a slice")
    s.add_argument("--dense-factor", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("grid", help="run an initialization grid from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="results directory (overrides the config)")
    s.add_argument("--jobs", type=int, help="concurrent runs")
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("slice", help="dense 1-d posterior sweep of a finished run")
    s.add_argument("--run-dir", required=True, help="results/<run-id>")
    s.add_argument("--fixed", action="append", required=True, help="AXIS=VALUE, axis by index or name")
    s.add_argument("--raw-units", action="store_true", help="fixed values are in dataset units")
    s.add_argument("--dense-factor", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_slice)

    s = sub.add_parser("plot", help="SVG chart of a results directory")
    s.add_argument("--results", required=True)
    s.add_argument("--kind", choices=PLOT_KINDS, required=True)
    s.add_argument("--run", help="run id for convergence and slice charts")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        print(f"meshdiff: error: {err}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        print("meshdiff: error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (UsageError, ConfigError, MeshError, SensorError) as err:
        print(f"meshdiff: error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as err:
        print(f"meshdiff: error: {err.filename or err}: file not found", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, np.linalg.LinAlgError, RuntimeError) as err:
        print(f"meshdiff: runtime failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
