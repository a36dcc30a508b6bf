"""Linearisation of the weighted steady-state map at the uncoupled solution.

With unknowns ``x = (alpha, s, psi)`` (coupling, radius perturbation, phase
perturbation) the derivative at ``(0, a, theta_bar)`` is the block matrix

    M = [[1,   0,   0  ],
         [M21, M22, 0  ],
         [0,   M32, M33]]

on ``X = R x l_inf x c_0``, normed by the max of the three sup norms.  The
finite truncation makes every block a matrix; the diagnostics here check the
algebraic facts the existence argument relies on (sign of the quadratic form,
kernel of ``T``) and tabulate the growth constants ``C(n)`` and ``Gamma(n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .lattice import DomainError, WedgeTruncation
from .model import LambdaOmegaModel
from .phase import PhaseField, link_differences

DENSE_LIMIT = 30


@dataclass(frozen=True)
class BlockOperator:
    wedge: WedgeTruncation
    theta_bar: PhaseField = field(repr=False)
    a: float
    M21: np.ndarray = field(repr=False)
    M22: np.ndarray = field(repr=False)
    M32: sp.csr_matrix = field(repr=False)
    M33: sp.csr_matrix = field(repr=False)
    T: sp.csr_matrix = field(repr=False)

    @property
    def size(self) -> int:
        return 1 + 2 * self.wedge.size

    def dense(self) -> np.ndarray:
        """The full matrix ``M``; rows and columns ordered ``alpha, s, psi``."""
        n = self.wedge.size
        M = np.zeros((self.size, self.size))
        M[0, 0] = 1.0
        M[1 : n + 1, 0] = self.M21
        M[1 : n + 1, 1 : n + 1] = np.diag(self.M22)
        M[n + 1 :, 1 : n + 1] = self.M32.toarray()
        M[n + 1 :, n + 1 :] = self.M33.toarray()
        return M

    def apply(self, x: np.ndarray) -> np.ndarray:
        n = self.wedge.size
        alpha, s, psi = x[0], x[1 : n + 1], x[n + 1 :]
        return np.concatenate([[alpha], self.M21 * alpha + self.M22 * s, self.M32 @ s + self.M33 @ psi])

    def norm(self) -> float:
        """Induced infinity norm of ``M`` (max absolute row sum)."""
        row1 = np.abs(self.M21) + np.abs(self.M22)
        row2 = np.asarray(abs(self.M32).sum(axis=1)).ravel() + np.asarray(abs(self.M33).sum(axis=1)).ravel()
        return float(max(1.0, row1.max(), row2.max()))

    def to_json(self) -> dict:
        T = self.T.toarray()
        return {
            "N": self.wedge.N,
            "a": self.a,
            "M22_diagonal": sorted(set(np.round(self.M22, 15).tolist())),
            "M21_norm": float(np.max(np.abs(self.M21))),
            "M_norm": self.norm(),
            "T_asymmetry": float(np.max(np.abs(T - T.T))),
        }


def assemble_M(theta_bar: PhaseField, model: LambdaOmegaModel) -> BlockOperator:
    w = theta_bar.wedge
    n = w.size
    a = float(model.a)
    c = model.constants()
    src, dst = w.link_src, w.link_dst
    d = link_differences(w, theta_bar.theta)
    cos_d, sin_d = np.cos(d), np.sin(d)
    inv_i = 1.0 / w.columns

    M21 = a * np.bincount(src, cos_d - 1.0, minlength=n)
    M22 = np.full(n, a * c.lambda_prime_at_a)

    T = sp.coo_matrix(
        (np.concatenate([cos_d, -cos_d]), (np.concatenate([src, src]), np.concatenate([dst, src]))),
        shape=(n, n),
    ).tocsr()
    T.sum_duplicates()
    M33 = (sp.diags(inv_i) @ T).tocsr()

    S = sp.coo_matrix((sin_d / a, (src, dst)), shape=(n, n)).tocsr()
    M32 = (sp.diags(inv_i) @ (S + c.K * sp.identity(n, format="csr"))).tocsr()
    return BlockOperator(w, theta_bar, a, M21, M22, M32, M33, T)


@dataclass(frozen=True)
class QuadraticFormResult:
    direct: float
    identity: float

    @property
    def difference(self) -> float:
        return abs(self.direct - self.identity)

    @property
    def nonpositive(self) -> bool:
        return self.direct <= 1e-12


def quadratic_form_check(op: BlockOperator, psi: np.ndarray) -> QuadraticFormResult:
    """Evaluate ``psi^T T psi`` and ``-1/2 sum cos(d)(psi' - psi)^2`` separately.

    The second sum runs over every directed link, so each neighbouring pair
    appears twice.
    """
    w = op.wedge
    psi = np.asarray(psi, dtype=float)
    direct = float(psi @ (op.T @ psi))
    c = np.cos(link_differences(w, op.theta_bar.theta))
    dpsi = psi[w.link_dst] - psi[w.link_src]
    identity = float(-0.5 * np.sum(c * dpsi**2))
    return QuadraticFormResult(direct, identity)


@dataclass(frozen=True)
class SpectralReport:
    eigenvalues: np.ndarray
    kernel_dimension: int
    kernel_vector: np.ndarray | None
    kernel_constant_deviation: float
    spectral_gap: float
    kernel_tol: float

    @property
    def rest_negative(self) -> bool:
        rest = self.eigenvalues[np.abs(self.eigenvalues) > self.kernel_tol]
        return bool(np.all(rest < 0))

    def to_json(self) -> dict:
        return {
            "size": int(self.eigenvalues.size),
            "kernel_dimension": self.kernel_dimension,
            "kernel_tol": self.kernel_tol,
            "kernel_constant_deviation": self.kernel_constant_deviation,
            "spectral_gap": self.spectral_gap,
            "largest_eigenvalues": self.eigenvalues[::-1][:5].tolist(),
            "smallest_eigenvalue": float(self.eigenvalues[0]),
            "others_negative": self.rest_negative,
        }


def spectrum_T(T, kernel_tol: float = 1e-8) -> SpectralReport:
    n = T.shape[0]
    if n > DENSE_LIMIT**2:
        raise DomainError(f"dense eigensolve limited to N <= {DENSE_LIMIT} (got {n} sites)")
    A = T.toarray() if sp.issparse(T) else np.asarray(T, dtype=float)
    A = 0.5 * (A + A.T)
    vals, vecs = sla.eigh(A)
    in_kernel = np.flatnonzero(np.abs(vals) <= kernel_tol)
    vec = None
    dev = np.inf
    if in_kernel.size == 1:
        v = vecs[:, in_kernel[0]]
        v = v / v[np.argmax(np.abs(v))]
        vec = v
        dev = float(np.max(np.abs(v - 1.0)))
    gap = float(vals[-2]) if n > 1 else float("nan")
    return SpectralReport(vals, int(in_kernel.size), vec, dev, gap, kernel_tol)


def _restricted(op: BlockOperator, n: int) -> np.ndarray:
    """Image of the psi basis vectors with column <= n, as columns of the X block."""
    w = op.wedge
    if not 1 <= n <= w.N:
        raise DomainError(f"n must lie in 1..{w.N}, got {n}")
    cols = np.flatnonzero(w.columns <= n)
    return op.M33[:, cols].toarray()


def compute_Cn(op: BlockOperator, n: int) -> float:
    """``1 / sigma_min`` of ``M`` restricted to ``E_n``; infinite when singular.

    ``M`` maps ``E_n`` into the ``psi`` block only, so the restricted map is
    the column slice of ``M33``.  At ``n = N`` that slice contains the
    constants, which lie in its kernel.
    """
    A = _restricted(op, n)
    sv = sla.svdvals(A)
    smin = sv[-1]
    if smin <= 1e-12 * sv[0]:
        return float("inf")
    return float(1.0 / smin)


def projection_norm(op: BlockOperator, n: int) -> float:
    """Infinity norm of the projection onto ``M(E_n)`` built from least-squares functionals.

    The functionals are the rows of the pseudo-inverse of the restricted map,
    which gives ``phi_v(v') = delta`` on the spanning set; the projection is
    then the orthogonal one onto the column space.
    """
    A = _restricted(op, n)
    Q, R = np.linalg.qr(A)
    rank = int(np.sum(np.abs(np.diag(R)) > 1e-12 * np.abs(R[0, 0])))
    Q = Q[:, :rank]
    P = Q @ Q.T
    return float(np.max(np.abs(P).sum(axis=1)))


def compute_Gamma(op: BlockOperator, n: int, Cn: float | None = None) -> float:
    Cn = compute_Cn(op, n) if Cn is None else Cn
    inv22 = float(np.max(1.0 / np.abs(op.M22)))
    norm21 = float(np.max(np.abs(op.M21)))
    return 2.0 * max(1.0, inv22 * (1.0 + norm21), Cn * projection_norm(op, n), 1.0 / op.norm())


@dataclass(frozen=True)
class StaircaseTable:
    n: np.ndarray
    C: np.ndarray
    Gamma: np.ndarray
    mu: np.ndarray  # mu[d-1] is the lower end of the interval where n(mu) = d
    k0: float
    gamma: float = 0.5

    def n_of_mu(self, mu):
        """Staircase level ``d`` with ``mu_d < mu <= mu_{d-1}`` (``mu_0 = (k0/Gamma(1))^2``)."""
        mu = np.asarray(mu, dtype=float)
        upper = (self.k0 / self.Gamma[0]) ** (1 / self.gamma)
        if np.any(mu > upper) or np.any(mu <= self.mu[-1]):
            raise DomainError(f"mu must lie in ({self.mu[-1]:.3e}, {upper:.3e}]")
        # mu is decreasing, so count how many thresholds lie at or above each sample
        return 1 + np.sum(self.mu[None, :] >= mu.reshape(-1)[:, None], axis=1).reshape(mu.shape)

    def bound_holds(self, mu) -> np.ndarray:
        d = self.n_of_mu(mu)
        return self.Gamma[d - 1] <= self.k0 * np.asarray(mu) ** (-self.gamma) * (1 + 1e-12)

    def rows(self) -> list[dict]:
        return [
            {"n": int(n), "C": float(c), "Gamma": float(g), "mu": float(m)}
            for n, c, g, m in zip(self.n, self.C, self.Gamma, self.mu)
        ]


def gadget_table(op: BlockOperator, n_max: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ns = np.arange(1, n_max + 1)
    C = np.array([compute_Cn(op, int(k)) for k in ns])
    G = np.array([compute_Gamma(op, int(k), c) for k, c in zip(ns, C)])
    return ns, C, G


def staircase_n_of_mu(ns, C, Gamma, k0: float | None = None, gamma: float = 0.5) -> StaircaseTable:
    """Build ``mu_d = (k0 / Gamma(d+1))^(1/gamma)`` for ``d = 1..len - 1``."""
    ns = np.asarray(ns)
    C = np.asarray(C, dtype=float)
    Gamma = np.asarray(Gamma, dtype=float)
    if np.any(np.diff(Gamma) < 0):
        raise DomainError("Gamma must be nondecreasing in n")
    k0 = float(Gamma[0]) if k0 is None else float(k0)
    if k0 < Gamma[0]:
        raise DomainError("k0 must be at least Gamma(1)")
    mu = (k0 / Gamma[1:]) ** (1 / gamma)
    return StaircaseTable(ns[:-1], C[:-1], Gamma[:-1], mu, k0, gamma)


def project_Pn(op: BlockOperator, x: np.ndarray, n: int) -> np.ndarray:
    """Zero the ``psi`` entries at columns beyond ``n``; ``alpha`` and ``s`` are kept."""
    w = op.wedge
    if n < 1:
        raise DomainError("n must be at least 1")
    x = np.array(x, dtype=float)
    m = w.size
    x[1 + m :][w.columns > n] = 0.0
    return x


def norm_X(x: np.ndarray) -> float:
    return float(np.max(np.abs(x)))


def norm_n(op: BlockOperator, x: np.ndarray, n: int) -> float:
    x = np.asarray(x, dtype=float)
    return max(
        abs(x[0]),
        float(np.max(np.abs(x[1 : 1 + op.wedge.size]))),
        norm_X(project_Pn(op, x, n)),
        norm_X(op.apply(x)) / op.norm(),
    )
