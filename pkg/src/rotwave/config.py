"""Run configuration: one JSON document with defaults, plus dotted overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .continuation import NewtonSettings, alpha_grid
from .lattice import DomainError, SiteIndex, wedge_contains
from .model import PolynomialModel, model_from_json
from .phase import PhaseSolveSettings


class ConfigError(DomainError):
    """Invalid or inconsistent run configuration."""


DEFAULTS: dict = {
    "model": {"family": "polynomial", "a": 1.0, "sign": 1, "beta": 1.0, "eps_prime": 1.0},
    "N": 20,
    "phase": {"tol": 1e-10, "max_iters": 50, "damping": 1.0, "gauge": None},
    "newton": {"tol": 1e-10, "max_iters": 10, "weighted": False},
    "alpha_grid": {"start": 0.0, "stop": 0.1, "step": 1e-3, "values": None},
    "simulation": {
        "alpha": 0.05,
        "dt": 1e-3,
        "periods": 1.0,
        "stride": 50,
        "collar": 2,
        "threshold": 1e-6,
        "period": "bulk",
        "random_state": False,
    },
    "diagnostics": {"n_max": 10, "psi_samples": 100, "mu_samples": 1000, "norm_samples": 100},
    "seed": 0,
    "out": "rotwave-out",
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


def set_dotted(data: dict, key: str, value) -> dict:
    parts = key.split(".")
    node = {}
    cur = node
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = value
    return _merge(data, node)


@dataclass(frozen=True)
class RunConfig:
    data: dict

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict | None = None) -> "RunConfig":
        data = copy.deepcopy(DEFAULTS)
        if path is not None:
            try:
                user = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(user, dict):
                raise ConfigError("config must be a JSON object")
            data = _merge(data, user)
        for k, v in (overrides or {}).items():
            data = set_dotted(data, k, v)
        cfg = cls(data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        d = self.data
        if not isinstance(d["N"], int) or isinstance(d["N"], bool) or d["N"] < 1:
            raise ConfigError(f"N must be a positive integer, got {d['N']!r}")
        for sect in ("phase", "newton"):
            if not d[sect]["tol"] > 0:
                raise ConfigError(f"{sect}.tol must be positive")
        sim = d["simulation"]
        for k in ("dt", "periods", "threshold"):
            if not sim[k] > 0:
                raise ConfigError(f"simulation.{k} must be positive")
        if sim["period"] not in ("bulk", "wave"):
            raise ConfigError("simulation.period must be 'bulk' or 'wave'")
        g = self.gauge()
        if not (wedge_contains(g) and g.i <= self.N):
            raise ConfigError(f"gauge site {tuple(g)} is not in the wedge with N={self.N}")
        if not isinstance(d["seed"], int):
            raise ConfigError("seed must be an integer")
        try:
            self.model()
            grid = self.grid()
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        if grid[0] != 0.0:
            raise ConfigError("alpha grid must start at 0")
        if np.any(np.diff(grid) <= 0):
            raise ConfigError("alpha grid must be strictly increasing")

    @property
    def N(self) -> int:
        return int(self.data["N"])

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def out(self) -> Path:
        return Path(self.data["out"])

    @property
    def sim(self) -> dict:
        return self.data["simulation"]

    @property
    def diag(self) -> dict:
        return self.data["diagnostics"]

    def model(self) -> PolynomialModel:
        return model_from_json(self.data["model"])

    def grid(self) -> np.ndarray:
        g = self.data["alpha_grid"]
        if g["values"] is not None:
            return np.asarray(g["values"], dtype=float)
        if g["start"] != 0:
            raise ConfigError("alpha grid must start at 0")
        return alpha_grid(g["stop"], g["step"], g["start"])

    def gauge(self) -> SiteIndex:
        g = self.data["phase"]["gauge"]
        return SiteIndex(self.N, 1) if g is None else SiteIndex(*g)

    def phase_settings(self) -> PhaseSolveSettings:
        p = self.data["phase"]
        return PhaseSolveSettings(
            max_iters=int(p["max_iters"]), tol=float(p["tol"]), gauge=self.gauge(), damping=float(p["damping"])
        )

    def newton_settings(self) -> NewtonSettings:
        n = self.data["newton"]
        return NewtonSettings(
            tol=float(n["tol"]), max_iters=int(n["max_iters"]), gauge=self.gauge(), weighted=bool(n["weighted"])
        )

    def canonical(self) -> str:
        """Config as compact sorted JSON, without the output location."""
        body = {k: v for k, v in self.data.items() if k != "out"}
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]
