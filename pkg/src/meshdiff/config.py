"""JSON experiment configuration: schema validation and conversion to dataclasses."""

from __future__ import annotations

import json
import os
from importlib import resources
from pathlib import Path

import jsonschema

from .experiment import (
    DEFAULT_ALPHA_INITS,
    DEFAULT_LENGTHSCALE_INITS,
    ExperimentConfig,
    SyntheticSpec,
)
from .optimize import OptimizerConfig

SPEC_VERSION = 1
OUTPUT_DIR_ENV = "MESHDIFF_OUTPUT_DIR"


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` holds ``(json_pointer, message)`` pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p or '/'}: {m}" for p, m in self.errors))


def load_schema() -> dict:
    text = resources.files("meshdiff").joinpath("schemas/experiment-config.schema.json").read_text("utf-8")
    return json.loads(text)


def json_pointer(path) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in path)


def validate(data: dict) -> None:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        raise ConfigError((json_pointer(e.absolute_path), e.message) for e in errors)


def config_from_dict(data: dict, base_dir=None) -> ExperimentConfig:
    """Validate ``data`` and build an :class:`ExperimentConfig`.

    A relative ``dataset`` path resolves against ``base_dir``.  The output
    directory environment override wins over the file.
    """
    validate(data)
    dataset = data.get("dataset")
    if dataset and base_dir is not None and not os.path.isabs(dataset):
        dataset = str(Path(base_dir) / dataset)
    synth = None
    if not dataset:
        s = data.get("synthetic", {})
        synth = SyntheticSpec(tuple(s.get("shape", (19, 15, 5))), int(s.get("seed", 0)),
                              float(s.get("front1_width", 0.06)), float(s.get("ridge_width", 0.012)))
    sl = data.get("slice")
    kinds, per_kernel = [], {}
    for item in data.get("kernels", ("SE", "RQ")):
        if isinstance(item, str):
            kind = item
        else:
            kind = item["kind"]
            over = {}
            for src, dst in (("sigma", "sigma"), ("train_sigma", "train_sigma"),
                             ("lengthscales", "lengthscale_inits"), ("alpha", "alpha_inits")):
                if src in item:
                    over[dst] = tuple(item[src]) if isinstance(item[src], list) else item[src]
            per_kernel[kind] = over
        if kind in kinds:
            raise ConfigError([(f"/kernels/{len(kinds)}", f"kernel {kind} listed twice")])
        kinds.append(kind)
    kw = dict(
        dataset=dataset,
        synthetic=synth,
        kernels=tuple(kinds),
        per_kernel=per_kernel or None,
        lengthscale_inits=tuple(data.get("lengthscale_inits", DEFAULT_LENGTHSCALE_INITS)),
        alpha_inits=tuple(data.get("alpha_inits", DEFAULT_ALPHA_INITS)),
        methods=tuple(data.get("methods", ("LML", "DIFFUSION"))),
        lml_optimizer=OptimizerConfig.quasi_newton(**data.get("lml_optimizer", {})),
        dfo_optimizer=OptimizerConfig.dfo(**data.get("dfo_optimizer", {})),
        output_dir=os.environ.get(OUTPUT_DIR_ENV) or data.get("output_dir", "results"),
        slice_fixed={int(k): float(v) for k, v in sl["fixed"].items()} if sl else None,
        slice_dense_factor=int(sl.get("dense_factor", 10)) if sl else 10,
    )
    for key in ("sigma", "train_sigma", "noise", "beta1", "beta2", "value_floor", "appendix_scaling",
                "top_diagonals", "tied_lengthscales", "dfo_lower_bound", "jobs"):
        if key in data:
            kw[key] = data[key]
    try:
        return ExperimentConfig(**kw)
    except ValueError as err:
        raise ConfigError([("", str(err))]) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError([("", f"{path}: invalid JSON ({err.msg} at line {err.lineno})")]) from None
    if not isinstance(data, dict):
        raise ConfigError([("", "top-level value must be an object")])
    return config_from_dict(data, base_dir=path.parent)


def _kernel_item(config: ExperimentConfig, kind: str):
    over = (config.per_kernel or {}).get(kind)
    if not over:
        return kind
    item = {"kind": kind}
    for src, dst in (("sigma", "sigma"), ("train_sigma", "train_sigma"),
                     ("lengthscale_inits", "lengthscales"), ("alpha_inits", "alpha")):
        if src in over:
            item[dst] = list(over[src]) if isinstance(over[src], tuple) else over[src]
    return item


def config_to_dict(config: ExperimentConfig) -> dict:
    """Inverse of :func:`config_from_dict` for the fields the schema covers."""

    def opt(o: OptimizerConfig) -> dict:
        return {k: getattr(o, k) for k in ("max_evals", "initial_radius", "tol_obj", "tol_step", "seed")}

    d = {
        "spec_version": SPEC_VERSION,
        "dataset": config.dataset,
        "kernels": [_kernel_item(config, k) for k in config.kernels],
        "lengthscale_inits": list(config.lengthscale_inits),
        "alpha_inits": list(config.alpha_inits),
        "sigma": config.sigma,
        "train_sigma": config.train_sigma,
        "noise": config.noise,
        "methods": list(config.methods),
        "beta1": config.beta1,
        "beta2": config.beta2,
        "value_floor": config.value_floor,
        "appendix_scaling": config.appendix_scaling,
        "top_diagonals": config.top_diagonals,
        "tied_lengthscales": config.tied_lengthscales,
        "lml_optimizer": opt(config.lml_optimizer),
        "dfo_optimizer": opt(config.dfo_optimizer),
        "dfo_lower_bound": config.dfo_lower_bound,
        "output_dir": config.output_dir,
        "jobs": config.jobs,
    }
    if config.synthetic is not None and not config.dataset:
        s = config.synthetic
        d["synthetic"] = {"shape": list(s.shape), "seed": s.seed,
                          "front1_width": s.front1_width, "ridge_width": s.ridge_width}
    if config.slice_fixed:
        d["slice"] = {"fixed": {str(k): v for k, v in config.slice_fixed.items()},
                      "dense_factor": config.slice_dense_factor}
    return d
