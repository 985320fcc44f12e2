"""Built-in problem instances, stored as YAML run configs inside the package."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np
import yaml

from .domain import Domain, domain_from_dict
from .errors import ConfigError
from .feynman_kac import BoundaryData, boundary_data
from .measures import measure_from_dict
from .sde import Coefficients

INSTANCE_NAMES = ["harmonic-ball", "poisson-ball", "drift-exp", "killing-ball", "singular-graph-drift",
                  "smooth-box", "small-ball-drift"]


@dataclass
class Problem:
    name: str
    domain: Domain
    coeffs: Coefficients
    phi: BoundaryData
    probes: list
    exact: Optional[float] = None
    description: str = ""
    sim: dict = field(default_factory=dict)
    spec: dict = field(default_factory=dict)

    @property
    def x0(self):
        return np.asarray(self.probes[0], float)


def instance_text(name: str) -> str:
    if name not in INSTANCE_NAMES:
        raise ConfigError(f"unknown instance '{name}'; known: {INSTANCE_NAMES}")
    return resources.files("mcdirichlet").joinpath("configs", f"{name}.yaml").read_text()


def load_instance_dict(name: str) -> dict:
    return yaml.safe_load(instance_text(name))


def problem_from_dict(d: dict) -> Problem:
    try:
        D = domain_from_dict(d["domain"])
    except (KeyError, TypeError) as e:
        raise ConfigError(f"bad domain block ({e})") from None
    co = d.get("coefficients") or {}
    mu = co.get("mu")
    mu = None if mu is None else [measure_from_dict(m, D.dim) for m in mu]
    nu = measure_from_dict(co["nu"], D.dim) if co.get("nu") else None
    rho = measure_from_dict(co["rho"], D.dim) if co.get("rho") else None
    b = d.get("boundary") or {"name": "zero"}
    phi = boundary_data(b["name"], b.get("params"))
    probes = d.get("probes") or [list(0.5 * (np.asarray(D.bbox[0]) + np.asarray(D.bbox[1])))]
    spec = {k: copy.deepcopy(d[k]) for k in ("domain", "coefficients", "boundary", "probes") if k in d}
    return Problem(name=d.get("name", "custom"), domain=D, coeffs=Coefficients(mu=mu, nu=nu, rho=rho, dim=D.dim),
                   phi=phi, probes=[[float(v) for v in p] for p in probes], exact=d.get("exact"),
                   description=d.get("description", ""), sim=dict(d.get("sim") or {}), spec=spec)


def load_instance(name: str) -> Problem:
    return problem_from_dict(load_instance_dict(name))
