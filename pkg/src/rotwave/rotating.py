"""Full-lattice states, time integration and the rotating-wave check.

The full truncated lattice is the square ``{1-L..L}^2`` stored as a complex
``(2L, 2L)`` array with ``z[i - (1 - L), j - (1 - L)]`` the value at ``(i, j)``.
Neighbours missing at the square edge are dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline

from .continuation import PolarField
from .lattice import DomainError, WedgeTruncation, wedge_preimage
from .model import LambdaOmegaModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FullLatticeState:
    L: int
    z: np.ndarray = field(repr=False)

    def __post_init__(self):
        z = np.array(self.z, dtype=complex)
        if z.shape != (2 * self.L, 2 * self.L):
            raise DomainError(f"expected a {2 * self.L}x{2 * self.L} array, got {z.shape}")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def offset(self) -> int:
        return 1 - self.L

    @property
    def r(self) -> np.ndarray:
        return np.abs(self.z)

    @property
    def theta(self) -> np.ndarray:
        return np.angle(self.z)

    def value(self, s) -> complex:
        i, j = s
        o = self.offset
        if not (o <= i <= self.L and o <= j <= self.L):
            raise DomainError(f"site {tuple(s)} outside the square of half-width {self.L}")
        return complex(self.z[i - o, j - o])

    def interior_mask(self, collar: int = 1) -> np.ndarray:
        """Sites at distance ``>= collar`` from the square edge."""
        m = np.zeros(self.z.shape, dtype=bool)
        n = self.z.shape[0]
        if 2 * collar < n:
            m[collar : n - collar, collar : n - collar] = True
        return m


@lru_cache(maxsize=16)
def _tiling(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Wedge site index and quarter-turn class for every cell of the ``2N`` square."""
    from .lattice import build_wedge

    w = build_wedge(N)
    size = 2 * N
    src = np.empty((size, size), dtype=np.intp)
    turns = np.empty((size, size), dtype=np.intp)
    for a in range(size):
        for b in range(size):
            p, k = wedge_preimage((a + 1 - N, b + 1 - N))
            src[a, b] = w.site_index(p)
            turns[a, b] = k
    src.setflags(write=False)
    turns.setflags(write=False)
    return src, turns


def tiling_audit(N: int) -> dict:
    """Count how often each square site is produced by the four rotated wedge copies."""
    from .lattice import build_wedge, rotate_index

    w = build_wedge(N)
    hits: dict[tuple[int, int], int] = {}
    for k in range(4):
        for s in w.sites:
            t = tuple(rotate_index(s, k))
            hits[t] = hits.get(t, 0) + 1
    square = {(i, j) for i in range(1 - N, N + 1) for j in range(1 - N, N + 1)}
    return {
        "N": N,
        "square_sites": len(square),
        "covered": len(hits),
        "missing": sorted(square - hits.keys()),
        "outside": sorted(hits.keys() - square),
        "multiple": sorted(s for s, c in hits.items() if c != 1),
    }


def extend_to_full(x: PolarField, L: int | None = None) -> FullLatticeState:
    """Place ``r e^{i theta}`` on the wedge and its rotated copies.

    The copy in class ``k`` is multiplied by ``1j`` exactly ``k`` times, so the
    quarter-turn relation ``z[L(s)] = 1j * z[s]`` holds without rounding.
    """
    N = x.wedge.N
    if L is not None and L != N:
        raise DomainError(f"the rotated wedge copies tile the square of half-width {N}, not {L}")
    src, turns = _tiling(N)
    base = x.r * np.exp(1j * x.theta)
    z = base[src]
    for k in (1, 2, 3):
        mask = turns >= k
        z[mask] = z[mask] * 1j
    return FullLatticeState(N, z)


def restrict_to_wedge(state: FullLatticeState, wedge: WedgeTruncation) -> PolarField:
    if state.L != wedge.N:
        raise DomainError("state and wedge sizes differ")
    o = state.offset
    vals = np.array([state.z[s.i - o, s.j - o] for s in wedge.sites])
    return PolarField(wedge, np.abs(vals), np.angle(vals))


def rotate_state(state: FullLatticeState) -> np.ndarray:
    """``[R z]_s = z_{L(s)}`` on the square; ``L(i, j) = (j, 1 - i)``."""
    # array index (a, b) is site (a + o, b + o); L sends it to index (b, 2L - 1 - a)
    return state.z[:, ::-1].T


def quarter_turn_defect(state: FullLatticeState, collar: int = 0) -> float:
    """``max |z[L(s)] - 1j z[s]|`` over sites at distance ``>= collar`` from the edge."""
    d = np.abs(rotate_state(state) - 1j * state.z)
    return float(np.max(d[state.interior_mask(collar)], initial=0.0))


def _coupling(z: np.ndarray) -> np.ndarray:
    """Sum over existing neighbours of ``z' - z`` with free edges."""
    out = np.zeros_like(z)
    out[1:, :] += z[:-1, :] - z[1:, :]
    out[:-1, :] += z[1:, :] - z[:-1, :]
    out[:, 1:] += z[:, :-1] - z[:, 1:]
    out[:, :-1] += z[:, 1:] - z[:, :-1]
    return out


def _neighbor_polar_sums(r: np.ndarray, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per site: sum r' cos(d), sum r' sin(d), and the neighbour count."""
    c = np.zeros_like(r)
    s = np.zeros_like(r)
    deg = np.zeros_like(r)
    for sl_dst, sl_src in (
        ((slice(1, None), slice(None)), (slice(None, -1), slice(None))),
        ((slice(None, -1), slice(None)), (slice(1, None), slice(None))),
        ((slice(None), slice(1, None)), (slice(None), slice(None, -1))),
        ((slice(None), slice(None, -1)), (slice(None), slice(1, None))),
    ):
        d = theta[sl_src] - theta[sl_dst]
        c[sl_dst] += r[sl_src] * np.cos(d)
        s[sl_dst] += r[sl_src] * np.sin(d)
        deg[sl_dst] += 1
    return c, s, deg


@dataclass(frozen=True)
class CorotatingResidual:
    dr: np.ndarray
    dtheta: np.ndarray

    @property
    def per_site(self) -> np.ndarray:
        return np.maximum(np.abs(self.dr), np.abs(self.dtheta))

    def max_over(self, mask: np.ndarray) -> float:
        return float(np.max(self.per_site[mask], initial=0.0))


def corotating_residual(
    state: FullLatticeState,
    alpha: float,
    model: LambdaOmegaModel,
    Omega: float | None = None,
) -> CorotatingResidual:
    """Right-hand sides of the polar equations in a frame rotating at ``Omega``.

    ``Omega`` defaults to ``omega(a, alpha)``.  Uses the actual square-lattice
    neighbours.
    """
    r = state.r
    if np.any(r <= 0):
        raise DomainError("radius must be positive at every site")
    theta = state.theta
    Omega = model.frequency(alpha) if Omega is None else Omega
    c, s, deg = _neighbor_polar_sums(r, theta)
    dr = alpha * (c - deg * r) + r * model.lam(r)
    dtheta = alpha * s / r + (model.omega(r, alpha) - Omega)
    return CorotatingResidual(dr, dtheta)


@dataclass(frozen=True)
class SimulationTrace:
    L: int
    times: np.ndarray
    states: np.ndarray  # (stored, 2L, 2L) complex
    dt: float
    method: str
    defects: np.ndarray
    alpha: float
    completed: bool = True

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def state(self, k: int) -> FullLatticeState:
        return FullLatticeState(self.L, self.states[k])


def _rhs(alpha: float, model: LambdaOmegaModel):
    def f(z):
        R = np.abs(z)
        return alpha * _coupling(z) + z * (model.lam(R) + 1j * model.omega(R, alpha))

    return f


def simulate(
    z0: FullLatticeState,
    alpha: float,
    model: LambdaOmegaModel,
    t_end: float,
    dt: float,
    stride: int = 1,
) -> SimulationTrace:
    """Classical RK4 with a fixed step.

    The step count is ``round(t_end / dt)`` and the step is adjusted to land on
    ``t_end`` exactly; the adjusted value is stored in the trace.
    """
    if not dt > 0:
        raise DomainError("dt must be positive")
    if not t_end >= dt * (1 - 1e-12):
        raise DomainError("t_end must be at least dt")
    if stride < 1:
        raise DomainError("stride must be a positive integer")
    steps = max(1, int(round(t_end / dt)))
    h = t_end / steps
    f = _rhs(alpha, model)
    z = np.array(z0.z, dtype=complex)
    times = [0.0]
    states = [z.copy()]
    completed = True
    for n in range(1, steps + 1):
        k1 = f(z)
        k2 = f(z + 0.5 * h * k1)
        k3 = f(z + 0.5 * h * k2)
        k4 = f(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(z)):
            log.warning("non-finite state at step %d; trace truncated", n)
            completed = False
            break
        if n % stride == 0 or n == steps:
            times.append(n * h)
            states.append(z.copy())
    states = np.array(states)
    defects = np.array([quarter_turn_defect(FullLatticeState(z0.L, s)) for s in states])
    return SimulationTrace(z0.L, np.array(times), states, h, "rk4", defects, float(alpha), completed)


@dataclass
class DefectReport:
    period: float
    collar: int
    max_defect: float
    samples: int
    threshold: float
    defects: np.ndarray = field(repr=False)

    @property
    def is_rotating_wave(self) -> bool:
        return bool(self.max_defect < self.threshold)

    def to_json(self) -> dict:
        return {
            "period": self.period,
            "collar": self.collar,
            "max_defect": self.max_defect,
            "samples": self.samples,
            "threshold": self.threshold,
            "is_rotating_wave": self.is_rotating_wave,
        }


def verify_rotating_wave(
    trace: SimulationTrace,
    T: float,
    collar: int = 2,
    threshold: float = 1e-6,
) -> DefectReport:
    """Compare ``z_{L(s)}(t)`` with ``z_s(t + T/4)`` over the stored times.

    States at ``t + T/4`` come from a cubic spline through the stored states.
    """
    if not T > 0:
        raise DomainError("period must be positive")
    if trace.t_end < T * (1 - 1e-12):
        raise DomainError(f"trace ends at t={trace.t_end:g}, before one period T={T:g}")
    if trace.times.size < 4:
        raise DomainError("need at least four stored states for cubic interpolation")
    flat = trace.states.reshape(trace.states.shape[0], -1)
    spline = CubicSpline(trace.times, np.concatenate([flat.real, flat.imag], axis=1), axis=0)
    shift = T / 4
    ts = trace.times[trace.times + shift <= trace.t_end + 1e-12]
    later = spline(np.minimum(ts + shift, trace.t_end))
    m = later.shape[1] // 2
    later = (later[:, :m] + 1j * later[:, m:]).reshape(ts.size, *trace.states.shape[1:])
    mask = FullLatticeState(trace.L, trace.states[0]).interior_mask(collar)
    defects = np.empty(ts.size)
    for k in range(ts.size):
        now = FullLatticeState(trace.L, trace.states[k])
        defects[k] = np.max(np.abs(rotate_state(now) - later[k])[mask], initial=0.0)
    return DefectReport(float(T), collar, float(defects.max(initial=0.0)), int(ts.size), threshold, defects)


def corotating_drift(trace: SimulationTrace, Omega: float, collar: int = 1) -> float:
    """``max |z(t) e^{-i Omega t} - z(0)|`` over stored times and interior sites."""
    mask = FullLatticeState(trace.L, trace.states[0]).interior_mask(collar)
    frame = trace.states * np.exp(-1j * Omega * trace.times)[:, None, None]
    return float(np.max(np.abs(frame - trace.states[0])[:, mask]))


def random_state(L: int, seed: int, a: float = 1.0) -> FullLatticeState:
    rng = np.random.default_rng(seed)
    r = a * rng.uniform(0.5, 1.5, (2 * L, 2 * L))
    th = rng.uniform(0, 2 * np.pi, (2 * L, 2 * L))
    return FullLatticeState(L, r * np.exp(1j * th))


def stability_probe(
    x: PolarField,
    alpha: float,
    model: LambdaOmegaModel,
    amplitude: float = 1e-4,
    seed: int = 0,
    t_end: float | None = None,
    dt: float = 1e-2,
    stride: int = 10,
) -> dict:
    """Perturb an extended steady state and record how the perturbation evolves.

    Purely descriptive: the size of the deviation from the unperturbed
    rotating profile is tabulated against time, with no verdict attached.
    """
    base = extend_to_full(x)
    Omega = x.frequency(model, alpha)
    t_end = t_end if t_end is not None else 2 * np.pi / Omega
    rng = np.random.default_rng(seed)
    noise = amplitude * (rng.standard_normal(base.z.shape) + 1j * rng.standard_normal(base.z.shape))
    trace = simulate(FullLatticeState(base.L, base.z + noise), alpha, model, t_end, dt, stride)
    ref = base.z[None] * np.exp(1j * Omega * trace.times)[:, None, None]
    dev = np.max(np.abs(trace.states - ref), axis=(1, 2))
    return {
        "alpha": alpha,
        "amplitude": amplitude,
        "seed": seed,
        "frequency": Omega,
        "times": trace.times.tolist(),
        "deviation": dev.tolist(),
        "growth_ratio": float(dev[-1] / dev[0]) if dev[0] > 0 else float("nan"),
    }
