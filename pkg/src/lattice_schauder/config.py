"""Experiment configuration: YAML files or plain dicts, validated against a schema.

Schema (all keys optional except ``experiment``)::

    experiment: sweep-first | sweep-second | energy | kernel | norms | solve
    seed: 0
    n: 1
    N: [16, 32, 64]
    K: [32, 64, 128, 256]
    T: 0.5
    t_floor: null            # default 0.01 * T
    samples: 200             # sample times per run (plus a geometric grid above t_floor)
    data: [rough, smooth]    # initial-data families: rough | smooth | c2 | csv
    nonlinearity:
      phi: cubic             # preset name or coefficient list (ascending powers)
      f: allen-cahn
      envelope: [-1.2, 1.2]
    initial:
      amplitude: 0.5         # smooth and c2 families
      modes: [[1, 1.0]]      # (frequency, weight) pairs, at most 3 per axis
      rough: block           # block: i.i.d. per coarse cell; site: i.i.d. per site
      blocks: 8              # coarse cells per axis
      path: null             # lattice-field CSV for the csv family
    tolerances:
      uniformity: 1.25
      spread: 2.0
    energy:   {centers: 5, radii: [...], t1: null, alpha: 0.5}
    kernel:   {N: 8, span: 0.05, s: 0.0, nodes: [17, 33, 65], k_max: 4,
               amplitude: 0.3, source: bump, tol: 1.0e-3}
    norms:    {alpha: 0.5, m: 4, max_pairs: 200000}
    xi_check: smallest       # smallest | all | none  (second sweep)
    out: null
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

EXPERIMENTS = ("sweep-first", "sweep-second", "energy", "kernel", "norms", "solve")

_DEFAULTS = {
    "seed": 0,
    "n": 1,
    "N": [16, 32, 64],
    "K": [32, 64, 128, 256],
    "T": 0.5,
    "t_floor": None,
    "samples": 200,
    "data": ["rough", "smooth"],
    "nonlinearity": {"phi": "cubic", "f": "allen-cahn", "envelope": [-1.2, 1.2]},
    "initial": {"amplitude": 0.5, "modes": [[1, 1.0]], "rough": "block", "blocks": 8, "path": None},
    "tolerances": {"uniformity": 1.25, "spread": 2.0},
    "energy": {"centers": 5, "radii": None, "t1": None, "alpha": 0.5},
    "kernel": {"N": 8, "span": 0.05, "s": 0.0, "nodes": [17, 33, 65], "k_max": 4,
               "amplitude": 0.3, "source": "bump", "tol": 1.0e-3},
    "norms": {"alpha": 0.5, "m": 4, "max_pairs": 200_000},
    "xi_check": "smallest",
    "out": None,
}

# per-experiment overrides of the defaults
_PRESETS = {
    "sweep-second": {"data": ["rough", "c2", "smooth"], "tolerances": {"uniformity": 1.3}},
    "energy": {"N": [16, 32], "K": [1.0], "T": 0.2, "data": ["smooth"],
               "initial": {"modes": [[1, 1.0], [2, 0.3]]}},
    "kernel": {"N": [8], "K": [1.0], "T": 0.1, "data": ["smooth"]},
    "norms": {"N": [16], "K": [1.0], "T": 0.1, "data": ["smooth"]},
    "solve": {"N": [32], "K": [1.0], "T": 0.1, "data": ["smooth"]},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and base[k] and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    n: int
    N: list
    K: list
    T: float
    t_floor: float
    samples: int
    data: list
    nonlinearity: dict
    initial: dict
    tolerances: dict
    energy: dict
    kernel: dict
    norms: dict
    xi_check: str
    out: str | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data or {})
        exp = data.pop("experiment", None)
        if exp not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")
        base = _merge(_DEFAULTS, _PRESETS.get(exp, {}))
        merged = _merge(base, data)
        merged["N"] = [int(v) for v in _listify(merged["N"])]
        merged["K"] = [float(v) for v in _listify(merged["K"])]
        merged["T"] = float(merged["T"])
        if merged["t_floor"] is None:
            merged["t_floor"] = 0.01 * merged["T"]
        merged["t_floor"] = float(merged["t_floor"])
        merged["seed"] = int(merged["seed"])
        merged["n"] = int(merged["n"])
        cfg = cls(experiment=exp, raw=copy.deepcopy(merged), **merged)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(data)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        d = copy.deepcopy(self.raw)
        d.update({k: v for k, v in kw.items() if v is not None})
        d["experiment"] = self.experiment
        return ExperimentConfig.from_dict(d)

    def validate(self) -> None:
        if self.n not in (1, 2):
            raise ConfigError("n must be 1 or 2")
        if not self.N or min(self.N) < 4:
            raise ConfigError("N-list must be nonempty with N >= 4")
        if not self.K or min(self.K) < 0:
            raise ConfigError("K-list must be nonempty and nonnegative")
        if not (0 < self.t_floor < self.T):
            raise ConfigError("need 0 < t_floor < T")
        self.data = list(_listify(self.data))
        for fam in self.data:
            if fam not in ("rough", "smooth", "c2", "csv"):
                raise ConfigError(f"unknown data family {fam!r}")
        if "csv" in self.data and not self.initial.get("path"):
            raise ConfigError("the csv data family needs initial.path")
        if self.initial.get("rough") not in ("block", "site"):
            raise ConfigError("initial.rough must be block or site")
        modes = self.initial.get("modes") or []
        if len(modes) > 3:
            raise ConfigError("smooth presets use at most 3 modes per axis")
        if self.xi_check not in ("smallest", "all", "none"):
            raise ConfigError("xi_check must be smallest, all or none")
        if self.experiment == "kernel":
            from .solvers import DENSE_GUARD

            if int(self.kernel["N"]) ** self.n > DENSE_GUARD:
                raise ConfigError("kernel lattice exceeds the dense guard")
            if min(self.kernel["nodes"]) < 4:
                raise ConfigError("kernel quadrature needs at least 4 nodes")

    def to_yaml(self) -> str:
        d = {"experiment": self.experiment, **self.raw}
        return yaml.safe_dump(d, sort_keys=True)


def _listify(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def load_config(source) -> ExperimentConfig:
    if isinstance(source, ExperimentConfig):
        return source
    if isinstance(source, dict):
        return ExperimentConfig.from_dict(source)
    return ExperimentConfig.load(Path(source))
