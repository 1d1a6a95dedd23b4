"""Run configuration shared by the command line and config files."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError

__all__ = ["RunConfig", "load_config", "SUBCOMMANDS"]

SUBCOMMANDS = ("gc-eval", "boundary", "solve", "phase-diagram", "equivalence", "marginal",
               "simulate", "tail-rate", "figures")


@dataclass
class RunConfig:
    """Everything a subcommand needs; unset fields fall back to documented defaults."""

    subcommand: str
    weight: str = "evans-hanney"
    params: dict = field(default_factory=dict)
    # numerics
    tol: float = 1e-10
    grad_tol: float = 1e-8
    eps_phase: float = 1e-6
    # points
    mu: Optional[list] = None
    psi: Optional[list] = None
    rho: Optional[list] = None
    # grids
    box: Optional[list] = None
    res: int = 32
    tmin: float = -4.0
    tmax: float = 4.0
    npoints: int = 161
    # canonical
    L: Optional[list] = None
    N: Optional[list] = None
    # simulation
    p1: str = "sym"
    p2: str = "sym"
    seed: int = 0
    events: int = 1_000_000
    burn_in: float = 0.2
    replicas: int = 1
    # tail rates
    direction: Optional[list] = None
    radii: Optional[list] = None
    # output
    out: Optional[str] = None
    series: Optional[str] = None
    outdir: Optional[str] = None

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.subcommand!r}")
        if not isinstance(self.params, dict):
            raise ConfigError("params must be a mapping")
        if not 0 < self.tol < 1 or not self.grad_tol > 0 or not 0 < self.eps_phase < 1:
            raise ConfigError("tolerances must be positive (and below 1 where relative)")
        if self.res < 2:
            raise ConfigError("res must be at least 2")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def load_config(path) -> dict:
    """Raw mapping from a JSON or YAML config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping")
    return data
