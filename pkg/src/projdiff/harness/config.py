"""Flat key/value experiment configuration.

A config file is a YAML mapping of scalar or list values. Keys not listed in
:data:`SCHEMA` are rejected. Defaults depend on the experiment, see
:data:`EXPERIMENT_DEFAULTS`.

Example
-------
::

    experiment: gmm_theory
    seed: 0
    out: runs/gmm
    M: 100
    variants: [unconstrained, post_proc, pgdm_alg1]
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Optional

import yaml

from ..core import ConfigurationError
from ..sampler import VARIANTS

EXPERIMENTS = ("gmm_theory", "physics_motion", "trajectories", "materials")
MODELS = ("analytic", "empirical", "mlp")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int = 0
    out: str = "runs/out"
    # schedule
    T: int = 10
    sigma_min: float = 0.01
    sigma_max: float = 1.0
    # sampler
    M: int = 100
    variants: tuple = ("unconstrained", "post_proc", "pgdm_alg1")
    projection_start_t: Optional[int] = None
    snr_r: float = 0.16
    n_samples: int = 100
    # model
    model: str = "empirical"
    bandwidth: float = 1e-4
    mlp_widths: tuple = (64, 64)
    mlp_epochs: int = 200
    # metrics
    n_projections: int = 100
    tolerances: tuple = (0.0, 0.01, 0.1, 0.5, 1.0, 2.0)
    # sweeps: one sampler parameter varied over a list of values
    sweep_param: Optional[str] = None
    sweep_values: tuple = ()
    # gmm_theory
    gmm_separation: float = 2.0
    gmm_variance: float = 0.25
    constraint_offset: float = 0.0
    theorem_trials: int = 100_000
    theorem_gammas: tuple = (0.05, 0.1, 0.3, 0.5)
    theorem_cs: tuple = (0.5, 1.0, 2.0)
    corollary_c: float = 4.0
    corollary_T: int = 50
    corollary_M: int = 100
    corollary_sigma_min: float = 0.05
    corollary_sigma_max: float = 1.0
    corollary_chains: int = 100
    xi: float = 1e-3
    # physics_motion
    frame_size: int = 16
    n_frames: int = 6
    n_data: int = 1000
    gravity: Optional[float] = None
    object_radius: Optional[float] = None
    # trajectories
    map_id: int = 1
    n_train: int = 100
    # materials
    patch_size: int = 16
    correlation_length: float = 1.5
    porosity_targets: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"experiment must be one of {EXPERIMENTS}")
        for name in ("variants", "mlp_widths", "tolerances", "sweep_values", "theorem_gammas",
                     "theorem_cs", "porosity_targets"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad or not self.variants:
            raise ConfigurationError(f"unknown variants {bad}; choose from {VARIANTS}")
        if self.model not in MODELS:
            raise ConfigurationError(f"model must be one of {MODELS}")
        if self.model == "analytic" and self.experiment != "gmm_theory":
            raise ConfigurationError("the analytic model exists only for gmm_theory")
        for name in ("T", "M", "n_samples", "n_projections", "corollary_T", "corollary_M",
                     "corollary_chains", "n_frames", "n_data", "n_train", "mlp_epochs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.sweep_param is not None and self.sweep_param not in SWEEPABLE:
            raise ConfigurationError(f"sweep_param must be one of {SWEEPABLE}")
        if self.sweep_param is not None and not self.sweep_values:
            raise ConfigurationError("sweep_values must be nonempty when sweep_param is set")
        if self.map_id not in (1, 2):
            raise ConfigurationError("map_id must be 1 or 2")

    def to_dict(self) -> Dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, ignoring the output directory."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        d = asdict(self)
        d.update(changes)
        return ExperimentConfig(**d)


SWEEPABLE = ("M", "projection_start_t", "T", "snr_r")
SCHEMA = tuple(f.name for f in fields(ExperimentConfig))

EXPERIMENT_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "gmm_theory": dict(model="analytic", T=10, sigma_min=0.01, sigma_max=2.0, M=100,
                       n_samples=2000, tolerances=(0.0, 0.01, 0.1, 0.5, 1.0, 2.0)),
    "physics_motion": dict(T=10, sigma_min=0.01, sigma_max=1.0, M=20, n_samples=100,
                           bandwidth=1e-2, tolerances=(0.0, 1.0, 2.0, 4.0, 8.0, 16.0)),
    "trajectories": dict(T=10, sigma_min=0.01, sigma_max=1.0, M=5, n_samples=50,
                         variants=("post_proc", "pgdm_alg1"),
                         tolerances=(0.0, 1e-6, 0.01, 0.05, 0.1, 0.2)),
    "materials": dict(T=10, sigma_min=0.01, sigma_max=1.0, M=20, n_samples=20, n_data=200,
                      bandwidth=1e-2, tolerances=(0.0, 0.1, 0.5, 1.0, 2.0, 4.0)),
}


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate a flat mapping and fill experiment-specific defaults."""
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a mapping")
    unknown = sorted(set(data) - set(SCHEMA))
    if unknown:
        raise ConfigurationError(f"unknown config keys: {unknown}")
    if "experiment" not in data:
        raise ConfigurationError("config needs an 'experiment' key")
    for k, v in data.items():
        if isinstance(v, dict):
            raise ConfigurationError(f"config is flat; key {k!r} holds a mapping")
    merged = dict(EXPERIMENT_DEFAULTS.get(data["experiment"], {}))
    merged.update(data)
    try:
        return ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: config must be a mapping")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data)
