"""Writers and readers for the results directory.

Layout::

    <out>/summary.csv
    <out>/timings.csv
    <out>/dataset.json              normalization record, dataset description
    <out>/sensors_true.csv
    <out>/<run-id>/result.json
    <out>/<run-id>/history.csv
    <out>/<run-id>/sensors_pred.csv
    <out>/<run-id>/slice_<axis>.csv

``summary.csv`` holds only deterministic quantities so repeated runs are
byte-identical; wall times go to ``timings.csv`` and the per-run JSON.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .diffusion import SensorError, SensorField, predicted_sensor, select_top_diagonals, sensor_true_md
from .experiment import (
    DiffusionObjective,
    ExperimentConfig,
    RunResult,
    initial_spec,
    grid_runs,
    prepare_mesh,
    run_grid,
    slice_predictions,
)
from .mesh import NormalizationRecord, StructuredMesh

SPEC_VERSION = 1

DFO_NOTE = (
    "diffusion runs use a derivative-free trust-region method with quadratic "
    "interpolation models modelled on COBYQA; it is not the COBYQA library"
)


def fmt(v) -> str:
    """Shortest round-tripping text for a number; empty for missing values."""
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n",
                          encoding="utf-8")


def sensor_rows(field: SensorField):
    d = field.total.ndim
    header = [f"i{k + 1}" for k in range(d)] + [f"diag_{dg}" for dg in field.diagonals] + ["total"]
    rows = []
    for idx in np.ndindex(field.total.shape):
        # interior node multi-index in mesh numbering
        rows.append([str(i + 1) for i in idx]
                    + [fmt(a[idx]) for a in field.per_diagonal] + [fmt(field.total[idx])])
    return header, rows


def write_sensor_csv(path, field: SensorField) -> None:
    header, rows = sensor_rows(field)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def sensor_summary(field: SensorField) -> dict:
    out = {}
    for dg, a in zip(field.diagonals, field.per_diagonal):
        out[str(dg)] = {"min": float(a.min()), "max": float(a.max()), "mean": float(a.mean())}
    t = field.total
    arg = np.unravel_index(int(np.argmax(t)), t.shape)
    out["total"] = {
        "min": float(t.min()), "max": float(t.max()), "mean": float(t.mean()),
        "argmax": [int(i) + 1 for i in arg],
    }
    return out


def history_header(result: RunResult) -> list[str]:
    return ["eval", *result.param_names, "objective", "rmse_training", "rmse_diffusion"]


def write_history_csv(path, result: RunResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(history_header(result))
        for rec in result.history.records:
            w.writerow([rec.index, *[fmt(p) for p in rec.params], fmt(rec.value),
                        fmt(rec.components.get("rmse_training")),
                        fmt(rec.components.get("rmse_diffusion"))])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def write_slice_csv(path, table: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["coord", "mean", "var", "train"]
        w.writerow(cols)
        for row in zip(*(table[c] for c in cols)):
            w.writerow([fmt(v) if not (isinstance(v, float) and math.isnan(v)) else "" for v in row])


SUMMARY_COLUMNS = [
    "run_id", "method", "kernel", "init_lengthscale", "init_alpha",
    "final_lengthscales", "final_alpha", "final_lml",
    "rmse_training", "rmse_diffusion", "loss_total", "n_evals", "status",
]


def summary_row(r: RunResult) -> list[str]:
    loss = r.final_loss
    return [
        r.run_id, r.method, r.kernel,
        fmt(r.initial_params["lengthscales"][0]), fmt(r.initial_params.get("alpha")),
        " ".join(fmt(v) for v in r.final_params["lengthscales"]), fmt(r.final_params.get("alpha")),
        fmt(r.final_lml),
        fmt(loss.rmse_training if loss else None), fmt(loss.rmse_diffusion if loss else None),
        fmt(loss.total if loss else None), str(r.n_evals), r.status,
    ]


def result_dict(r: RunResult, config: ExperimentConfig) -> dict:
    opt = config.lml_optimizer if r.method == "LML" else config.dfo_optimizer
    return {
        "spec_version": SPEC_VERSION,
        "run_id": r.run_id,
        "method": r.method,
        "kernel": r.kernel,
        "initial_params": r.initial_params,
        "final_params": r.final_params,
        "final_lml": r.final_lml,
        "final_loss": r.final_loss.to_dict() if r.final_loss else None,
        "noise": r.noise,
        "n_evals": r.n_evals,
        "wall_time": r.wall_time,
        "status": r.status,
        "message": r.message,
        "optimizer": opt.to_dict(),
        "notes": DFO_NOTE if r.method == "DIFFUSION" else "L-BFGS-B on log hyperparameters",
    }


class ResultWriter:
    """Serializes everything a grid produces; call from a single process."""

    def __init__(self, out_dir, config: ExperimentConfig, mesh: StructuredMesh,
                 record: NormalizationRecord | None = None, true_label: SensorField | None = None):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.mesh = mesh
        self.results: list[RunResult] = []
        self._objectives = {}
        info = {
            "spec_version": SPEC_VERSION,
            "shape": list(mesh.shape),
            "names": list(mesh.names),
            "dataset": config.dataset,
            "synthetic": None if config.synthetic is None or config.dataset else {
                "shape": list(config.synthetic.shape), "seed": config.synthetic.seed,
            },
            "normalization": record.to_dict() if record else None,
        }
        write_json(self.out / "dataset.json", info)
        if true_label is not None:
            write_sensor_csv(self.out / "sensors_true.csv", true_label)

    def write_run(self, r: RunResult, model=None, pred_sensor: SensorField | None = None) -> Path:
        d = self.out / r.run_id
        d.mkdir(parents=True, exist_ok=True)
        write_json(d / "result.json", result_dict(r, self.config))
        write_history_csv(d / "history.csv", r)
        if pred_sensor is not None:
            write_sensor_csv(d / "sensors_pred.csv", pred_sensor)
        if model is not None and self.config.slice_fixed:
            fixed = {int(k): v for k, v in self.config.slice_fixed.items()}
            table = slice_predictions(model, self.mesh, fixed, self.config.slice_dense_factor)
            free = [k for k in range(self.mesh.dims) if k not in fixed][0]
            write_slice_csv(d / f"slice_{self.mesh.names[free]}.csv", table)
        self.results.append(r)
        return d

    def record(self, r: RunResult, template) -> Path:
        """Write ``r`` together with its refit model's sensor field and slice."""
        model = pred = None
        if r.final_loss is not None:
            key = (template.kind, template.tied_lengthscales)
            if key not in self._objectives:
                c = self.config
                self._objectives[key] = DiffusionObjective(self.mesh, template, c.noise, c.beta1, c.beta2,
                                                           c.appendix_scaling, c.top_diagonals)
            obj = self._objectives[key]
            try:
                model = obj.model(r.final_spec(template))
                pred = predicted_sensor(model, self.mesh, obj.stag, obj.true_label.diagonals,
                                        appendix_scaling=self.config.appendix_scaling)
            except (np.linalg.LinAlgError, SensorError):
                model = pred = None
        return self.write_run(r, model, pred)

    def write_summary(self, ordered: list[RunResult] | None = None) -> Path:
        ordered = self.results if ordered is None else ordered
        path = self.out / "summary.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_COLUMNS)
            for r in ordered:
                w.writerow(summary_row(r))
        with open(self.out / "timings.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["run_id", "wall_time"])
            for r in ordered:
                w.writerow([r.run_id, f"{r.wall_time:.3f}"])
        return path


def load_results(out_dir) -> list[dict]:
    """Every ``result.json`` under ``out_dir``, sorted by run id."""
    out = Path(out_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"results directory {out} does not exist")
    found = sorted(out.glob("*/result.json"))
    return [json.loads(p.read_text(encoding="utf-8")) for p in found]


def true_label(mesh: StructuredMesh, config: ExperimentConfig) -> SensorField:
    label = sensor_true_md(mesh, appendix_scaling=config.appendix_scaling)
    if config.top_diagonals is not None:
        label = label.restrict(select_top_diagonals(label, config.top_diagonals))
    return label


def run_and_write_grid(config: ExperimentConfig, out_dir=None, jobs: int | None = None) -> list[RunResult]:
    """Run the full grid and write every artifact as runs finish.

    Writing happens only in the calling process, so concurrent workers never
    touch the results directory.
    """
    _, mesh, rec = prepare_mesh(config)
    out_dir = config.output_dir if out_dir is None else out_dir
    runs = {r.run_id: r for r in grid_runs(config)}
    writer = ResultWriter(out_dir, config, mesh, rec, true_label(mesh, config))
    results = run_grid(config, mesh, jobs=jobs,
                       on_result=lambda r: writer.record(r, initial_spec(config, runs[r.run_id], mesh.dims)))
    writer.write_summary(results)
    return results
