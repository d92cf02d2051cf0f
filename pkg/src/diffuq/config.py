"""Experiment configuration: YAML loading with strict validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .gmm import ToyPriorSpec
from .solvers import SOLVER_NAMES, SolverSpec, resolve_solver

__all__ = ["ExperimentConfig", "load_config", "config_to_dict", "config_from_dict"]

_EXPERIMENTS = ("exp1_identity", "exp2_binary", "sweep")

_TOP_KEYS = {
    "experiment", "master_seed", "sigma_y", "n_cases", "k_samples",
    "prior", "operator", "schedule", "solvers", "sweep_axis",
}
# Both sample-count naming conventions are accepted.
_ALIASES = {"k_measurements": "n_cases", "n_samples": "k_samples"}

_SCHEDULE_DEFAULTS = {"sigma_min": 0.01, "sigma_max": 10.0, "steps": 100,
                      "spacing": "geometric"}
_OPERATOR_DEFAULTS = {
    "exp1_identity": {"kind": "identity"},
    "exp2_binary": {"kind": "binary_svd", "obs_count": 8,
                    "basis_mode": "random_orthogonal", "seed": 0},
    "sweep": {"kind": "identity"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    master_seed: int
    sigma_y: float
    solvers: tuple  # SolverSpec tuple, fully resolved
    n_cases: int = 20
    k_samples: int = 100
    prior: ToyPriorSpec = field(default_factory=ToyPriorSpec)
    operator: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=lambda: dict(_SCHEDULE_DEFAULTS))
    sweep_axis: dict | None = None  # {"solver": name, "name": hp, "values": [...]}

    def __post_init__(self):
        if self.experiment not in _EXPERIMENTS:
            raise ValueError(
                f"experiment must be one of {_EXPERIMENTS}, got {self.experiment!r}"
            )
        if self.n_cases < 1:
            raise ValueError("n_cases must be >= 1")
        if self.k_samples < 2:
            raise ValueError("k_samples must be >= 2")
        if not self.solvers:
            raise ValueError("at least one solver is required")
        if self.experiment == "exp1_identity" and self.operator.get("kind") != "identity":
            raise ValueError("exp1_identity forces the identity operator")
        if self.sweep_axis is not None:
            missing = {"solver", "name", "values"} - set(self.sweep_axis)
            if missing:
                raise ValueError(f"sweep_axis missing keys: {sorted(missing)}")
            resolve_solver(self.sweep_axis["solver"], {self.sweep_axis["name"]:
                                                      self.sweep_axis["values"][0]})


def _parse_solvers(raw) -> tuple:
    specs = []
    for entry in raw:
        if isinstance(entry, str):
            specs.append(resolve_solver(entry))
        elif isinstance(entry, dict):
            extra = set(entry) - {"name", "hyperparameters"}
            if extra:
                raise ValueError(f"unknown solver entry keys: {sorted(extra)}")
            if "name" not in entry:
                raise ValueError("solver entry missing required field 'name'")
            specs.append(resolve_solver(entry["name"], entry.get("hyperparameters")))
        else:
            raise ValueError(f"solver entry must be a name or mapping, got {entry!r}")
    return tuple(specs)


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ValueError("config root must be a mapping")
    data = {_ALIASES.get(k, k): v for k, v in data.items()}
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for req in ("experiment", "master_seed", "sigma_y", "solvers"):
        if req not in data:
            raise ValueError(f"config missing required field {req!r}")

    experiment = data["experiment"]
    prior_args = data.get("prior") or {}
    bad = set(prior_args) - {f.name for f in dataclasses.fields(ToyPriorSpec)}
    if bad:
        raise ValueError(f"unknown prior keys: {sorted(bad)}")
    schedule = dict(_SCHEDULE_DEFAULTS)
    sched_args = data.get("schedule") or {}
    bad = set(sched_args) - {"sigma_min", "sigma_max", "steps", "spacing", "exponent"}
    if bad:
        raise ValueError(f"unknown schedule keys: {sorted(bad)}")
    schedule.update(sched_args)
    operator = dict(_OPERATOR_DEFAULTS.get(experiment, {}))
    operator.update(data.get("operator") or {})

    return ExperimentConfig(
        experiment=experiment,
        master_seed=int(data["master_seed"]),
        sigma_y=float(data["sigma_y"]),
        solvers=_parse_solvers(data["solvers"]),
        n_cases=int(data.get("n_cases", 20)),
        k_samples=int(data.get("k_samples", 100)),
        prior=ToyPriorSpec(**prior_args),
        operator=operator,
        schedule=schedule,
        sweep_axis=data.get("sweep_axis"),
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully resolved, round-trippable dict form."""
    return {
        "experiment": cfg.experiment,
        "master_seed": cfg.master_seed,
        "sigma_y": cfg.sigma_y,
        "n_cases": cfg.n_cases,
        "k_samples": cfg.k_samples,
        "prior": dataclasses.asdict(cfg.prior),
        "operator": dict(cfg.operator),
        "schedule": dict(cfg.schedule),
        "solvers": [
            {"name": s.name, "hyperparameters": dict(s.hyperparameters)}
            for s in cfg.solvers
        ],
        "sweep_axis": cfg.sweep_axis,
    }


def load_config(path) -> ExperimentConfig:
    """Parse and validate a YAML config file; all defaults made explicit."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return config_from_dict(data)
