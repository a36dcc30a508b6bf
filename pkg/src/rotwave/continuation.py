"""Steady states of the co-rotating polar system on the wedge, continued in alpha.

For coupling ``alpha`` the unknowns are radii ``r`` and phases ``theta`` per
wedge site, and the residuals are

    F1 = alpha * sum(r' cos(d) - r) + r lambda(r)
    F2 = sum((r'/r) sin(d)) + omega1(r, alpha) - nu

with ``d`` the ghost-resolved phase difference.  The weighted variant divides
``F2`` by the column index ``i``.

``nu`` is a frequency correction: the wave rotates at
``omega(a, alpha) + alpha * nu``.  It is needed on a finite truncation because
summing ``r^2 * F2`` over the wedge cancels every coupling term, so any steady
state obeys ``sum(r^2 omega1(r)) = nu * sum(r^2)``.  With ``nu`` fixed at zero
that constraint generally has no solution when ``omega1`` is not identically
zero.  Adding ``nu`` as an unknown, with the phase of one site pinned, gives a
square nonsingular Newton system.  When ``omega1 == 0`` the solve returns
``nu = 0`` to rounding.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import DomainError, SiteIndex, WedgeTruncation, wedge_preimage
from .model import LambdaOmegaModel
from .phase import (
    PhaseField,
    PhaseSolveSettings,
    SolverError,
    link_differences,
    solve_phase,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PolarField:
    wedge: WedgeTruncation
    r: np.ndarray
    theta: np.ndarray
    freq_shift: float = 0.0

    def __post_init__(self):
        n = self.wedge.size
        r = np.array(self.r, dtype=float)
        theta = np.array(self.theta, dtype=float)
        if r.shape != (n,) or theta.shape != (n,):
            raise DomainError(f"expected {n} radii and phases")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(theta))):
            raise DomainError("polar field contains non-finite entries")
        r.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "freq_shift", float(self.freq_shift))

    @classmethod
    def base(cls, theta_bar: PhaseField, a: float) -> "PolarField":
        return cls(theta_bar.wedge, np.full(theta_bar.wedge.size, a), theta_bar.theta)

    def frequency(self, model: LambdaOmegaModel, alpha: float) -> float:
        """Rotation frequency of the wave in the lab frame."""
        return model.frequency(alpha) + alpha * self.freq_shift

    def period(self, model: LambdaOmegaModel, alpha: float) -> float:
        return 2 * np.pi / self.frequency(model, alpha)


@dataclass(frozen=True)
class ResidualOptions:
    weighted: bool = False
    arms: int = 1

    def __post_init__(self):
        if int(self.arms) != self.arms or self.arms < 1:
            raise DomainError(f"arms must be a positive integer, got {self.arms}")


def _check_state(x: PolarField):
    if np.any(x.r <= 0):
        raise DomainError("radius must be positive at every site")


def residual_F(
    alpha: float,
    x: PolarField,
    model: LambdaOmegaModel,
    opts: ResidualOptions = ResidualOptions(),
) -> tuple[np.ndarray, np.ndarray]:
    _check_state(x)
    w = x.wedge
    src, dst = w.link_src, w.link_dst
    r = x.r
    d = opts.arms * link_differences(w, x.theta)
    rp = r[dst]
    F1 = alpha * np.bincount(src, rp * np.cos(d) - r[src], minlength=w.size) + r * model.lam(r)
    F2 = np.bincount(src, rp / r[src] * np.sin(d), minlength=w.size) + model.omega1(r, alpha) - x.freq_shift
    if opts.weighted:
        F2 = F2 / w.columns
    return F1, F2


def residual_multiarm(m: int, alpha: float, x: PolarField, model: LambdaOmegaModel, weighted: bool = False):
    """Residual with sin/cos of ``m`` times the ghost-resolved differences.

    Ghost phases are offset by ``k*pi/2`` before the factor ``m`` is applied.
    """
    return residual_F(alpha, x, model, ResidualOptions(weighted=weighted, arms=m))


def residual_norm(F1: np.ndarray, F2: np.ndarray) -> float:
    return float(max(np.max(np.abs(F1), initial=0.0), np.max(np.abs(F2), initial=0.0)))


def jacobian(
    alpha: float,
    x: PolarField,
    model: LambdaOmegaModel,
    opts: ResidualOptions = ResidualOptions(),
) -> sp.csr_matrix:
    """Analytic Jacobian of ``(F1, F2)``.

    Rows are ``F1`` then ``F2`` in site order; columns are ``alpha``, then
    every ``r``, then every ``theta``, giving shape ``(2n, 2n + 1)``.
    """
    _check_state(x)
    w = x.wedge
    n = w.size
    m = opts.arms
    src, dst = w.link_src, w.link_dst
    r = x.r
    d = m * link_differences(w, x.theta)
    c, s = np.cos(d), np.sin(d)
    rp, rs = r[dst], r[src]
    R0, T0 = 1, 1 + n  # column offsets
    site = np.arange(n)
    ones = np.ones(n)

    rows, cols, vals = [], [], []

    def add(rr, cc, vv):
        rows.append(np.asarray(rr))
        cols.append(np.asarray(cc))
        vals.append(np.asarray(vv, dtype=float))

    # F1
    add(site, np.zeros(n, int), np.bincount(src, rp * c - rs, minlength=n))
    add(src, R0 + dst, alpha * c)
    add(src, R0 + src, -alpha * np.ones_like(c))
    add(site, R0 + site, model.lam(r) + r * model.dlam(r))
    add(src, T0 + dst, -alpha * m * rp * s)
    add(src, T0 + src, alpha * m * rp * s)
    # F2
    scale = 1.0 / w.columns if opts.weighted else ones
    ls = scale[src]
    add(n + site, np.zeros(n, int), scale * model.domega1_dalpha(r, alpha))
    add(n + src, R0 + dst, ls * s / rs)
    add(n + src, R0 + src, -ls * rp * s / rs**2)
    add(n + site, R0 + site, scale * model.domega1_dR(r, alpha))
    add(n + src, T0 + dst, ls * m * rp / rs * c)
    add(n + src, T0 + src, -ls * m * rp / rs * c)

    J = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * n, 2 * n + 1),
    )
    return J.tocsr()


@dataclass(frozen=True)
class NewtonSettings:
    tol: float = 1e-10
    max_iters: int = 10
    gauge: SiteIndex | None = None  # defaults to (N, 1)
    weighted: bool = False
    arms: int = 1
    solve_freq_shift: bool = True
    max_growth: float = 1e6

    def __post_init__(self):
        if not self.tol > 0:
            raise DomainError("tol must be positive")
        if self.max_iters < 0:
            raise DomainError("max_iters must be nonnegative")


@dataclass
class NewtonInfo:
    iterations: int = 0
    residual: float = np.inf
    history: list[float] = field(default_factory=list)


def _in_ball(x: PolarField, a: float) -> bool:
    return bool(np.max(np.abs(x.r - a)) < a / 2)


def newton_solve(
    alpha: float,
    init: PolarField,
    model: LambdaOmegaModel,
    settings: NewtonSettings = NewtonSettings(),
    info: NewtonInfo | None = None,
) -> PolarField:
    """Newton iteration for a steady state at fixed ``alpha``.

    The phase at the gauge site is held at its initial value, because the
    residual depends only on phase differences for every ``alpha``.  The
    frequency correction ``nu`` takes the freed column unless
    ``settings.solve_freq_shift`` is off, in which case the system is solved
    in the least-squares sense.
    """
    if alpha < 0:
        raise DomainError("alpha must be nonnegative")
    a = model.a
    if not _in_ball(init, a):
        raise DomainError("initial state lies outside the ball |r - a| < a/2")
    w = init.wedge
    n = w.size
    pin = w.site_index(settings.gauge or (w.N, 1))
    opts = ResidualOptions(weighted=settings.weighted, arms=settings.arms)
    theta_cols = 1 + n + np.flatnonzero(np.arange(n) != pin)
    keep = np.concatenate([1 + np.arange(n), theta_cols])

    x = init
    F1, F2 = residual_F(alpha, x, model, opts)
    res = residual_norm(F1, F2)
    history = [res]
    start = res
    it = 0
    while res > settings.tol and it < settings.max_iters:
        it += 1
        J = jacobian(alpha, x, model, opts)[:, keep]
        rhs = -np.concatenate([F1, F2])
        if settings.solve_freq_shift:
            nu_col = np.concatenate([np.zeros(n), -1.0 / w.columns if opts.weighted else -np.ones(n)])
            A = sp.hstack([J, sp.csr_matrix(nu_col[:, None])]).tocsc()
            step = spla.spsolve(A, rhs)
        else:
            step = np.linalg.lstsq(J.toarray(), rhs, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            raise SolverError("singular Newton system", best=x, diagnostics={"alpha": alpha, "iteration": it})
        theta = x.theta.copy()
        theta[theta_cols - 1 - n] += step[n : 2 * n - 1]
        nu = x.freq_shift + (step[-1] if settings.solve_freq_shift else 0.0)
        r_new = x.r + step[:n]
        if np.any(r_new <= 0) or not np.max(np.abs(r_new - a)) < a / 2:
            raise SolverError(
                f"Newton iterate left the ball |r - a| < a/2 at alpha={alpha:g}",
                best=x,
                diagnostics={"alpha": alpha, "iteration": it, "history": history},
            )
        x = PolarField(w, r_new, theta, nu)
        F1, F2 = residual_F(alpha, x, model, opts)
        res = residual_norm(F1, F2)
        history.append(res)
        log.debug("newton alpha=%g it=%d residual=%.3e", alpha, it, res)
        if not np.isfinite(res) or res > settings.max_growth * max(start, settings.tol):
            raise SolverError(
                f"Newton diverged at alpha={alpha:g}",
                best=x,
                diagnostics={"alpha": alpha, "iteration": it, "history": history},
            )
    if info is not None:
        info.iterations, info.residual, info.history = it, res, history
    if res > settings.tol:
        raise SolverError(
            f"Newton did not reach tol={settings.tol:g} at alpha={alpha:g} in {settings.max_iters} iterations",
            best=x,
            diagnostics={"alpha": alpha, "residual": res, "history": history},
        )
    return x


@dataclass
class StepStats:
    alpha: float
    iterations: int
    residual: float
    dev_r: float
    dev_theta: float
    freq_shift: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ContinuationRun:
    alpha_grid: np.ndarray
    theta_bar: PhaseField
    model: LambdaOmegaModel
    settings: NewtonSettings
    solutions: list[PolarField] = field(default_factory=list)
    stats: list[StepStats] = field(default_factory=list)
    failure: dict | None = None

    @property
    def alphas(self) -> np.ndarray:
        return np.array([s.alpha for s in self.stats])

    @property
    def completed(self) -> bool:
        return self.failure is None and len(self.stats) == len(self.alpha_grid)

    @property
    def max_alpha(self) -> float:
        return float(self.stats[-1].alpha) if self.stats else float("nan")

    def solution_at(self, alpha: float, atol: float = 1e-12) -> PolarField:
        for st, sol in zip(self.stats, self.solutions):
            if abs(st.alpha - alpha) <= atol:
                return sol
        raise KeyError(f"no solution at alpha={alpha}")


def alpha_grid(stop: float, step: float, start: float = 0.0) -> np.ndarray:
    """Evenly spaced grid ``start, start+step, ..., stop`` free of drift."""
    count = int(round((stop - start) / step))
    if count < 0 or not np.isclose(start + count * step, stop, rtol=0, atol=1e-9 * max(1.0, abs(stop))):
        raise DomainError(f"stop={stop} is not reachable from {start} in steps of {step}")
    return np.round(start + step * np.arange(count + 1), 12)


def _validate_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise DomainError("alpha grid must be a non-empty 1-d sequence")
    if grid[0] != 0.0:
        raise DomainError("alpha grid must start at 0")
    if np.any(np.diff(grid) <= 0):
        raise DomainError("alpha grid must be strictly increasing")
    return grid


def _stats(alpha, x, theta_bar, a, info) -> StepStats:
    return StepStats(
        alpha=float(alpha),
        iterations=info.iterations,
        residual=info.residual,
        dev_r=float(np.max(np.abs(x.r - a))),
        dev_theta=float(np.max(np.abs(x.theta - theta_bar.theta))),
        freq_shift=x.freq_shift,
    )


def continue_in_alpha(
    grid,
    model: LambdaOmegaModel,
    wedge: WedgeTruncation,
    settings: NewtonSettings = NewtonSettings(),
    theta_bar: PhaseField | None = None,
    phase_settings: PhaseSolveSettings | None = None,
    resume: ContinuationRun | None = None,
) -> ContinuationRun:
    """Natural continuation from the uncoupled pattern along ``grid``.

    Each step starts Newton from the previous solution.  A failed step stops
    the run; the partial run is returned with ``failure`` filled in.  Passing
    ``resume`` continues a saved run over the grid points beyond its last
    completed alpha.
    """
    grid = _validate_grid(grid)
    if resume is not None:
        run = resume
        run.alpha_grid = np.union1d(run.alpha_grid, grid)
        run.failure = None
        todo = grid[grid > run.max_alpha + 1e-15]
    else:
        if theta_bar is None:
            gauge = settings.gauge or (wedge.N, 1)
            theta_bar = solve_phase(wedge, replace(phase_settings or PhaseSolveSettings(), gauge=SiteIndex(*gauge)))
        run = ContinuationRun(alpha_grid=grid, theta_bar=theta_bar, model=model, settings=settings)
        base = PolarField.base(theta_bar, model.a)
        info = NewtonInfo()
        base = newton_solve(0.0, base, model, settings, info)
        run.solutions.append(base)
        run.stats.append(_stats(0.0, base, theta_bar, model.a, info))
        todo = grid[1:]

    for alpha in todo:
        info = NewtonInfo()
        try:
            x = newton_solve(float(alpha), run.solutions[-1], model, settings, info)
        except (SolverError, DomainError) as exc:
            run.failure = {"alpha": float(alpha), "last_good_alpha": run.max_alpha, "error": str(exc)}
            log.warning("continuation stopped at alpha=%g: %s", alpha, exc)
            break
        run.solutions.append(x)
        run.stats.append(_stats(alpha, x, run.theta_bar, model.a, info))
    return run


@dataclass
class SlopeFit:
    C: float  # smallest constant with dev <= C * alpha on the grid
    least_squares: float  # least-squares slope through the origin
    ratios: np.ndarray

    @property
    def linear(self) -> bool:
        return bool(np.isfinite(self.C) and self.C <= 1.1 * self.least_squares)


def deviation_slope(alphas, devs) -> SlopeFit:
    """Fit ``dev ~ C * alpha`` over the positive grid points."""
    alphas = np.asarray(alphas, dtype=float)
    devs = np.asarray(devs, dtype=float)
    pos = alphas > 0
    ratios = devs[pos] / alphas[pos]
    ls = float(np.dot(alphas[pos], devs[pos]) / np.dot(alphas[pos], alphas[pos]))
    return SlopeFit(C=float(ratios.max()), least_squares=ls, ratios=ratios)


def odd_symmetry_defect(x: PolarField, reference: PhaseField) -> float:
    """Antisymmetry defect of ``theta - reference`` under the reflection ``(i, j) -> (i, 1 - j)``.

    The reflection fixes the rotation centre; it is applied on the full
    lattice and mapped back to the wedge, where the ghost offsets cancel in
    the difference.  Returns ``max |d(s) + d(sigma s) - c|`` with ``c`` the
    mean of ``d(s) + d(sigma s)``, which is zero for an exactly odd pattern.
    """
    w = x.wedge
    d = x.theta - reference.theta
    partner = np.array([w.site_index(wedge_preimage((s.i, 1 - s.j))[0]) for s in w.sites])
    pair_sum = d + d[partner]
    return float(np.max(np.abs(pair_sum - pair_sum.mean())))


def explore_multiarm(
    m: int,
    half_width: int = 3,
    max_iters: int = 100,
    tol: float = 1e-10,
) -> dict:
    """Try to solve ``sum sin(m * (theta' - theta)) = 0`` on a full square.

    The square ``{1-L..L}^2`` with free edges is used instead of the wedge,
    since arm counts other than 1 (mod 4) are not compatible with the
    quarter-turn ghost rule.  The result is reported whether or not the
    damped Newton iteration converges.
    """
    L = half_width
    idx = np.arange(1 - L, L + 1)
    I, Jg = np.meshgrid(idx, idx, indexing="ij")
    theta = m * np.arctan2(0.5 - Jg, I - 0.5).astype(float)
    shape = theta.shape
    pairs = []
    for di, dj in ((1, 0), (0, 1)):
        a = np.arange(theta.size).reshape(shape)
        pairs.append((a[: shape[0] - di, : shape[1] - dj].ravel(), a[di:, dj:].ravel()))
    u = np.concatenate([p[0] for p in pairs])
    v = np.concatenate([p[1] for p in pairs])
    src = np.concatenate([u, v])
    dst = np.concatenate([v, u])
    nsites = theta.size
    pin = 0

    def resid(th):
        return np.bincount(src, np.sin(m * (th[dst] - th[src])), minlength=nsites)

    th = theta.ravel().copy()
    F = resid(th)
    res = float(np.max(np.abs(F)))
    free = np.arange(1, nsites)
    it = 0
    while res > tol and it < max_iters:
        it += 1
        c = m * np.cos(m * (th[dst] - th[src]))
        Jm = sp.coo_matrix(
            (np.concatenate([c, -c]), (np.concatenate([src, src]), np.concatenate([dst, src]))),
            shape=(nsites, nsites),
        ).tocsr()[free][:, free]
        try:
            step = np.linalg.lstsq(Jm.toarray(), -F[free], rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        h = 1.0
        while h > 1e-3:
            trial = th.copy()
            trial[free] += h * step
            if np.max(np.abs(resid(trial))) < res:
                break
            h *= 0.5
        th = trial
        F = resid(th)
        res = float(np.max(np.abs(F)))
    c = np.cos(m * (th[dst] - th[src]))
    return {
        "arms": m,
        "square": [2 * L, 2 * L],
        "converged": bool(res <= tol),
        "iterations": it,
        "residual": res,
        "min_cos": float(c.min()),
        "theta": th.reshape(shape).tolist(),
        "pinned_site": [int(idx[0]), int(idx[0])],
        "pin_index": pin,
    }
