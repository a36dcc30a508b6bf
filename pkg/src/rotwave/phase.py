"""Phase pattern of the uncoupled limit.

At zero coupling the amplitudes sit at ``a`` and the phases must satisfy

    0 = sum over neighbours of sin(theta' - theta)

on the truncated wedge, where out-of-wedge neighbours are the rotated copies
``theta[p] + k*pi/2``.  The system is invariant under a global phase shift, so
one site is pinned and the remaining equations are solved by damped Newton.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import Direction, DomainError, NeighborKind, SiteIndex, WedgeTruncation

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when an iterative solve fails; ``best`` holds the best iterate."""

    def __init__(self, message: str, best=None, diagnostics: dict | None = None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class PhaseField:
    wedge: WedgeTruncation
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.wedge.size,):
            raise DomainError(f"expected {self.wedge.size} phases, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise DomainError("phase field contains non-finite entries")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def __getitem__(self, s) -> float:
        return float(self.theta[self.wedge.site_index(s)])

    def shifted(self, c: float) -> "PhaseField":
        return PhaseField(self.wedge, self.theta + c)


@dataclass(frozen=True)
class PhaseSolveSettings:
    max_iters: int = 50
    tol: float = 1e-10
    gauge: SiteIndex | None = None  # defaults to (N, 1)
    gauge_value: float | None = None  # defaults to the initial guess there
    damping: float = 1.0
    polish: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise DomainError("tol must be positive")
        if not 0 < self.damping <= 1:
            raise DomainError("damping must lie in (0, 1]")
        if self.max_iters < 0:
            raise DomainError("max_iters must be nonnegative")


@dataclass
class PhaseSolveInfo:
    iterations: int
    residual: float
    gradient_steps: int
    history: list[float] = field(default_factory=list)


def link_differences(w: WedgeTruncation, theta: np.ndarray) -> np.ndarray:
    """Ghost-resolved phase difference ``theta'[link] - theta[src]`` per link."""
    return theta[w.link_dst] + w.link_offsets - theta[w.link_src]


def phase_residual(field_: PhaseField) -> np.ndarray:
    w = field_.wedge
    return np.bincount(w.link_src, np.sin(link_differences(w, field_.theta)), minlength=w.size)


def phase_jacobian(w: WedgeTruncation, theta: np.ndarray) -> sp.csr_matrix:
    """Jacobian of :func:`phase_residual`: the cos-weighted graph Laplacian."""
    c = np.cos(link_differences(w, theta))
    n = w.size
    rows = np.concatenate([w.link_src, w.link_src])
    cols = np.concatenate([w.link_dst, w.link_src])
    vals = np.concatenate([c, -c])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass(frozen=True)
class ResidualTerm:
    direction: Direction
    kind: NeighborKind
    target: SiteIndex
    quarter_turns: int

    def render(self, s: SiteIndex) -> str:
        off = {0: "", 1: " + pi/2", 2: " + pi", 3: " + 3pi/2"}[self.quarter_turns]
        return f"sin(theta[{self.target.i},{self.target.j}]{off} - theta[{s.i},{s.j}])"


def residual_terms(w: WedgeTruncation, s) -> list[ResidualTerm]:
    """The non-truncated terms of the phase equation at ``s``, in direction order."""
    s = SiteIndex(*s)
    recs = w.neighbors[w.site_index(s)]
    return [
        ResidualTerm(d, rec.kind, rec.target, rec.quarter_turns)
        for d, rec in zip(Direction, recs)
        if rec.kind is not NeighborKind.TRUNCATED
    ]


def residual_expression(w: WedgeTruncation, s) -> str:
    """Human-readable phase equation at ``s``, e.g. for auditing the ghost rule."""
    s = SiteIndex(*s)
    terms = residual_terms(w, s)
    return "0 = " + (" + ".join(t.render(s) for t in terms) if terms else "0")


def initial_guess_spiral(w: WedgeTruncation) -> PhaseField:
    """One-armed winding about the cell corner ``(1/2, 1/2)``.

    The phase increases clockwise, matching ``theta[L(s)] = theta[s] + pi/2``,
    so it decreases with ``j`` along a column of the wedge.
    """
    i = np.array([s.i for s in w.sites], dtype=float)
    j = np.array([s.j for s in w.sites], dtype=float)
    return PhaseField(w, np.arctan2(0.5 - j, i - 0.5))


def solve_phase(
    w: WedgeTruncation,
    settings: PhaseSolveSettings | None = None,
    guess: PhaseField | None = None,
    info: PhaseSolveInfo | None = None,
) -> PhaseField:
    settings = settings or PhaseSolveSettings()
    guess = guess or initial_guess_spiral(w)
    gauge = SiteIndex(*(settings.gauge or (w.N, 1)))
    pin = w.site_index(gauge)

    theta = guess.theta.copy()
    if settings.gauge_value is not None:
        theta += settings.gauge_value - theta[pin]
    pin_value = theta[pin]
    free = np.flatnonzero(np.arange(w.size) != pin)

    def resid(th):
        return np.bincount(w.link_src, np.sin(link_differences(w, th)), minlength=w.size)

    F = resid(theta)
    res = float(np.max(np.abs(F), initial=0.0))
    history = [res]
    grad_steps = 0
    it = 0
    while res > settings.tol and it < settings.max_iters:
        it += 1
        J = phase_jacobian(w, theta)[free][:, free].tocsc()
        try:
            step = spla.spsolve(J, -F[free])
            ok = np.all(np.isfinite(step))
        except RuntimeError:
            ok = False
        accepted = False
        if ok:
            h = settings.damping
            for _ in range(8):
                trial = theta.copy()
                trial[free] += h * step
                Ft = resid(trial)
                rt = float(np.max(np.abs(Ft)))
                if rt < res:
                    theta, F, res, accepted = trial, Ft, rt, True
                    break
                h *= 0.5
        if not accepted:
            # Newton stalled: relax along the gradient of -sum(cos), i.e. theta += h*F
            grad_steps += 1
            theta = theta + 0.2 * F
            theta[pin] = pin_value
            F = resid(theta)
            res = float(np.max(np.abs(F)))
        history.append(res)
        log.debug("phase newton it=%d residual=%.3e", it, res)

    if res > settings.tol:
        best = PhaseField(w, theta)
        raise SolverError(
            f"phase solve did not reach tol={settings.tol:g} in {settings.max_iters} iterations "
            f"(residual {res:.3e})",
            best=best,
            diagnostics={"residual": res, "history": history},
        )

    if settings.polish and free.size and res > 0:
        J = phase_jacobian(w, theta)[free][:, free].tocsc()
        trial = theta.copy()
        trial[free] += spla.spsolve(J, -F[free])
        rt = float(np.max(np.abs(resid(trial))))
        if rt < res:
            theta, res = trial, rt

    if info is not None:
        info.iterations, info.residual, info.gradient_steps, info.history = it, res, grad_steps, history
    return PhaseField(w, theta)


@dataclass
class WeightReport:
    links: list[dict]
    min_cos: float
    negative: list[dict]
    exceptional: list[dict]

    @property
    def passed(self) -> bool:
        return not self.negative

    def to_json(self) -> dict:
        return {
            "min_cos": self.min_cos,
            "negative_count": len(self.negative),
            "exceptional": self.exceptional,
            "passed": self.passed,
        }


def wrap_angle(x):
    """Map angles to ``[-pi, pi)``."""
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


def check_weights(field_: PhaseField, neg_tol: float = 1e-8, right_angle_tol: float = 1e-6) -> WeightReport:
    """Report every coupling weight ``cos(delta)`` of a phase pattern.

    Links are listed once per unordered pair (a link and its reverse carry the
    same weight); self-links at ``(1, 1)`` appear once each.  ``exceptional``
    collects the links at a right angle, ``negative`` those with
    ``cos < -neg_tol``.
    """
    w = field_.wedge
    delta = link_differences(w, field_.theta)
    seen = set()
    links = []
    for a, b, k, d in zip(w.link_src, w.link_dst, w.link_turns, delta):
        key = (a, b, k) if a == b else min((a, b, k), (b, a, (4 - k) % 4))
        if key in seen:
            continue
        seen.add(key)
        dw = float(wrap_angle(d))
        links.append(
            {
                "site": list(w.sites[a]),
                "neighbor": list(w.sites[b]),
                "quarter_turns": int(k),
                "delta": dw,
                "cos": float(np.cos(d)),
            }
        )
    cosines = np.array([l["cos"] for l in links]) if links else np.zeros(0)
    negative = [l for l in links if l["cos"] < -neg_tol]
    exceptional = [l for l in links if abs(abs(l["delta"]) - np.pi / 2) <= right_angle_tol]
    return WeightReport(
        links=links,
        min_cos=float(cosines.min()) if cosines.size else 1.0,
        negative=negative,
        exceptional=exceptional,
    )
