"""Lambda-Omega reaction terms.

A model supplies ``lambda(R)`` and ``omega(R, alpha)`` together with the split
``omega(R, alpha) - omega(a, alpha) = alpha * omega1(R, alpha)``, and the
analytic derivatives the Newton solvers need.  The builtin polynomial family is

    lambda(R) = sign * (a^2 - R^2)
    omega(R, alpha) = beta + alpha * eps_prime * R^2
    omega1(R, alpha) = 2 eps_prime a (R - a) + eps_prime (R - a)^2
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lattice import DomainError

ALPHA_SAMPLES = np.round(np.arange(0, 51) * 0.01, 10)


def _check_radius(R):
    R = np.asarray(R, dtype=float)
    if np.any(R < 0):
        raise DomainError("radius must be nonnegative")
    return R


class LambdaOmegaModel:
    """Interface for reaction terms; subclasses provide the evaluation methods.

    Every method accepts scalars or numpy arrays in ``R``.
    """

    a: float
    family: str = "custom"

    def lam(self, R):
        raise NotImplementedError

    def dlam(self, R):
        raise NotImplementedError

    def omega(self, R, alpha):
        raise NotImplementedError

    def omega1(self, R, alpha):
        raise NotImplementedError

    def domega1_dR(self, R, alpha):
        raise NotImplementedError

    def domega1_dalpha(self, R, alpha):
        return np.zeros_like(np.asarray(R, dtype=float))

    def frequency(self, alpha: float) -> float:
        """Bulk rotation frequency ``omega(a, alpha)``."""
        return float(self.omega(self.a, alpha))

    def constants(self) -> "ModelConstants":
        return ModelConstants(
            a=self.a,
            lambda_prime_at_a=float(self.dlam(self.a)),
            K=float(self.domega1_dR(self.a, 0.0)),
            omega_fn=self.frequency,
        )

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class PolynomialModel(LambdaOmegaModel):
    a: float = 1.0
    sign: int = 1
    beta: float = 1.0
    eps_prime: float = 1.0
    family: str = field(default="polynomial", init=False)

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError(f"amplitude a must be positive, got {self.a}")
        if self.sign not in (1, -1):
            raise DomainError(f"sign must be +1 or -1, got {self.sign}")

    def lam(self, R):
        R = _check_radius(R)
        # factored so that lam(a) is exactly zero
        return self.sign * (self.a - R) * (self.a + R)

    def dlam(self, R):
        R = _check_radius(R)
        return -2.0 * self.sign * R

    def omega(self, R, alpha):
        R = _check_radius(R)
        return self.beta + alpha * self.eps_prime * R**2

    def omega1(self, R, alpha):
        R = _check_radius(R)
        d = R - self.a
        return 2.0 * self.eps_prime * self.a * d + self.eps_prime * d**2

    def domega1_dR(self, R, alpha):
        R = _check_radius(R)
        return 2.0 * self.eps_prime * self.a + 2.0 * self.eps_prime * (R - self.a)

    def to_json(self) -> dict:
        return {
            "family": "polynomial",
            "a": self.a,
            "sign": self.sign,
            "beta": self.beta,
            "eps_prime": self.eps_prime,
        }


@dataclass(frozen=True)
class CallableModel(LambdaOmegaModel):
    """User-supplied reaction terms with analytic derivatives.

    The callables take ``(R)`` for the lambda terms and ``(R, alpha)`` for the
    omega terms.  Consistency of ``omega1`` with ``omega`` is not enforced here;
    run :func:`validate_hypothesis` on the result.
    """

    a: float
    lam_fn: Callable
    dlam_fn: Callable
    omega_fn: Callable
    omega1_fn: Callable
    domega1_dR_fn: Callable
    domega1_dalpha_fn: Callable | None = None
    family: str = "custom"

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError(f"amplitude a must be positive, got {self.a}")

    def lam(self, R):
        return np.asarray(self.lam_fn(_check_radius(R)), dtype=float)

    def dlam(self, R):
        return np.asarray(self.dlam_fn(_check_radius(R)), dtype=float)

    def omega(self, R, alpha):
        return np.asarray(self.omega_fn(_check_radius(R), alpha), dtype=float)

    def omega1(self, R, alpha):
        return np.asarray(self.omega1_fn(_check_radius(R), alpha), dtype=float)

    def domega1_dR(self, R, alpha):
        return np.asarray(self.domega1_dR_fn(_check_radius(R), alpha), dtype=float)

    def domega1_dalpha(self, R, alpha):
        if self.domega1_dalpha_fn is None:
            return super().domega1_dalpha(R, alpha)
        return np.asarray(self.domega1_dalpha_fn(_check_radius(R), alpha), dtype=float)

    def to_json(self) -> dict:
        return {"family": self.family, "a": self.a}


@dataclass(frozen=True)
class ModelConstants:
    a: float
    lambda_prime_at_a: float
    K: float
    omega_fn: Callable[[float], float] = field(repr=False)

    def Omega(self, alpha: float) -> float:
        return self.omega_fn(alpha)


def model_from_json(data: dict) -> PolynomialModel:
    family = data.get("family", "polynomial")
    if family != "polynomial":
        raise DomainError(f"only the polynomial family can be read from a config, got {family!r}")
    return PolynomialModel(
        a=float(data.get("a", 1.0)),
        sign=int(data.get("sign", 1)),
        beta=float(data.get("beta", 1.0)),
        eps_prime=float(data.get("eps_prime", 1.0)),
    )


@dataclass
class Condition:
    name: str
    passed: bool
    residual: float
    detail: str = ""


@dataclass
class HypothesisReport:
    conditions: list[Condition]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def failed(self) -> list[str]:
        return [c.name for c in self.conditions if not c.passed]

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "conditions": [
                {"name": c.name, "passed": c.passed, "residual": c.residual, "detail": c.detail}
                for c in self.conditions
            ],
        }


def validate_hypothesis(model: LambdaOmegaModel, tol: float = 1e-14) -> HypothesisReport:
    """Check the amplitude and frequency conditions numerically.

    Failures are reported, never raised.  ``omega1(a, alpha) = 0`` and the
    frequency split are sampled on ``alpha = 0, 0.01, ..., 0.5``.
    """
    a = model.a
    conds = []

    lam_a = float(model.lam(a))
    conds.append(Condition("lambda_vanishes_at_a", abs(lam_a) <= tol, abs(lam_a), f"lambda(a) = {lam_a:.3e}"))

    dlam_a = float(model.dlam(a))
    conds.append(Condition("lambda_prime_nonzero", abs(dlam_a) > tol, abs(dlam_a), f"lambda'(a) = {dlam_a:.6g}"))

    w1 = np.array([float(model.omega1(a, al)) for al in ALPHA_SAMPLES])
    bad = ALPHA_SAMPLES[np.abs(w1) > tol]
    conds.append(
        Condition(
            "omega1_vanishes_at_a",
            bad.size == 0,
            float(np.max(np.abs(w1))),
            f"fails at {bad.size} of {ALPHA_SAMPLES.size} sampled alpha",
        )
    )

    R = np.linspace(0.0, 2.0 * a, 41)
    worst = 0.0
    for al in ALPHA_SAMPLES:
        gap = model.omega(R, al) - model.omega(a, al) - al * model.omega1(R, al)
        worst = max(worst, float(np.max(np.abs(gap))))
    conds.append(Condition("omega_split", worst <= 1e-10 * max(1.0, a * a), worst))
    return HypothesisReport(conds)
