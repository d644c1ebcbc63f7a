"""Experiment configuration: a versioned YAML schema mapped onto dataclasses.

Kept free of numpy so that the CLI can set thread limits before any
numerical library is imported.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Optional, Union

import yaml

SCHEMA_VERSION = 1

EXPERIMENTS = {
    "assumptions": "structural probes of the stored-energy density",
    "linear": "beta over sampled kernel rotations with a Betti cross-check",
    "korn": "discrete Korn constant under the average-curl constraint with a refinement study",
    "hsweep": "constrained nonlinear solves along decreasing h against the linear target",
    "branches": "constrained solves in several rotation gauges at one h",
    "disc-gap": "radial disc example: oracles and the beta(R*) < beta(I) certificate",
}


class ConfigError(ValueError):
    def __init__(self, diagnostics):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = list(diagnostics)


@dataclass
class MeshConfig:
    domain: str = "cylinder"
    n_r: int = 8
    n_theta: int = 6
    n_z: int = 2
    grading: float = 2.0
    height: float = 1.0
    box_cells: list = field(default_factory=lambda: [4, 4, 4])


@dataclass
class ModelConfig:
    variant: str = "yeoh"
    c1: float = 2.0
    c2: float = 1.0
    c3: float = 1.0
    c_vol: float = 2.0 / 3.0
    # Ogden terms
    c: list = field(default_factory=lambda: [1.0])
    gamma: list = field(default_factory=lambda: [2.0])
    d: list = field(default_factory=lambda: [1.0])
    delta: list = field(default_factory=lambda: [4.0])


@dataclass
class LoadConfig:
    builtin: str = "sec5"
    vector: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    scale: float = 1.0


@dataclass
class SolverConfig:
    tol: float = 1e-10
    h_list: Optional[list] = None
    M: Union[str, float] = "auto"
    C_Omega: float = 10.0
    det_floor: float = 1e-6
    max_iter: int = 50
    n_dirs: int = 20
    eps_grid: list = field(default_factory=lambda: [1e-4, 1e-3, 1e-2, 1e-1])
    seed: int = 0
    h_branch: float = 0.05
    n_rotations: int = 10
    korn_scales: list = field(default_factory=lambda: [1.0, 1.5, 2.0])
    basis_size: int = 16
    m_max: int = 4
    refine_check: bool = True


@dataclass
class OutputConfig:
    dir: str = "runs"
    run_id: Optional[str] = None


@dataclass
class ExperimentConfig:
    experiment: str
    schema_version: int = SCHEMA_VERSION
    mesh: MeshConfig = field(default_factory=MeshConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    load: LoadConfig = field(default_factory=LoadConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        d = self.as_dict()
        d["output"] = None
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha1(blob).hexdigest()[:10]

    @property
    def run_id(self) -> str:
        return self.output.run_id or f"{self.experiment}-{self.fingerprint()}"


_SECTIONS = {"mesh": MeshConfig, "model": ModelConfig, "load": LoadConfig, "solver": SolverConfig,
             "output": OutputConfig}


def _field_names(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def validate(raw: Any) -> list:
    """Diagnostics for a raw config mapping; empty when valid.  Never mutates ``raw``."""
    diags = []
    if not isinstance(raw, dict):
        return ["config must be a mapping"]
    allowed = {"experiment", "schema_version"} | set(_SECTIONS)
    for k in raw:
        if k not in allowed:
            diags.append(f"unknown key {k!r}")
    if raw.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        diags.append(f"schema_version must be {SCHEMA_VERSION}")
    exp = raw.get("experiment")
    if exp is None:
        diags.append("missing key 'experiment'")
    elif exp not in EXPERIMENTS:
        diags.append(f"unknown experiment {exp!r}")
    for name, cls in _SECTIONS.items():
        sec = raw.get(name, {})
        if sec is None:
            continue
        if not isinstance(sec, dict):
            diags.append(f"section {name!r} must be a mapping")
            continue
        for k in sec:
            if k not in _field_names(cls):
                diags.append(f"unknown key {name}.{k}")

    mesh = raw.get("mesh") or {}
    if mesh.get("domain", "cylinder") not in ("cylinder", "box"):
        diags.append("mesh.domain must be 'cylinder' or 'box'")
    for k in ("n_r", "n_theta", "n_z"):
        if k in mesh and (not isinstance(mesh[k], int) or mesh[k] < 2):
            diags.append(f"mesh.{k} must be an integer >= 2")
    model = raw.get("model") or {}
    if model.get("variant", "yeoh") not in ("yeoh", "ogden"):
        diags.append("model.variant must be 'yeoh' or 'ogden'")
    load = raw.get("load") or {}
    if load.get("builtin", "sec5") not in ("sec5", "zero", "custom-constant"):
        diags.append("load.builtin must be one of sec5, zero, custom-constant")
    vec = load.get("vector", [0, 0, 0])
    if not (isinstance(vec, list) and len(vec) == 3 and all(_is_num(v) for v in vec)):
        diags.append("load.vector must be three numbers")

    solver = raw.get("solver") or {}
    h_list = solver.get("h_list")
    if exp == "hsweep" and h_list is None:
        diags.append("solver.h_list is required for experiment 'hsweep'")
    if h_list is not None:
        if not (isinstance(h_list, list) and h_list and all(_is_num(h) for h in h_list)):
            diags.append("solver.h_list must be a non-empty list of numbers")
        else:
            if any(not 0 < h < 1 for h in h_list):
                diags.append("solver.h_list entries must lie in (0, 1)")
            if any(b >= a for a, b in zip(h_list, h_list[1:])):
                diags.append("solver.h_list must be strictly decreasing (no duplicates)")
    M = solver.get("M", "auto")
    if not (M == "auto" or (_is_num(M) and M >= 1)):
        diags.append("solver.M must be 'auto' or a number >= 1")
    if "C_Omega" in solver and not (_is_num(solver["C_Omega"]) and solver["C_Omega"] > 0):
        diags.append("solver.C_Omega must be positive")
    if "h_branch" in solver and not (_is_num(solver["h_branch"]) and 0 < solver["h_branch"] < 1):
        diags.append("solver.h_branch must lie in (0, 1)")
    return diags


def from_dict(raw: dict) -> ExperimentConfig:
    diags = validate(raw)
    if diags:
        raise ConfigError(diags)
    kw = {k: cls(**(raw.get(k) or {})) for k, cls in _SECTIONS.items()}
    return ExperimentConfig(experiment=raw["experiment"], schema_version=raw.get("schema_version", 1), **kw)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return from_dict(raw)


def list_experiments() -> list:
    return [dict(name=k, description=v) for k, v in EXPERIMENTS.items()]
