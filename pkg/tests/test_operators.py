import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rotwave.continuation import PolarField, ResidualOptions, jacobian
from rotwave.lattice import DomainError, build_wedge
from rotwave.model import PolynomialModel
from rotwave.operators import (
    assemble_M,
    compute_Cn,
    compute_Gamma,
    gadget_table,
    norm_n,
    norm_X,
    project_Pn,
    projection_norm,
    quadratic_form_check,
    spectrum_T,
    staircase_n_of_mu,
)
from rotwave.phase import solve_phase

from . import oracles


@pytest.fixture(scope="module")
def op20(theta20, model):
    return assemble_M(theta20, model)


@pytest.fixture(scope="module")
def op_small(model):
    return assemble_M(solve_phase(build_wedge(6)), model)


def test_blocks_against_displayed_formulas(op20, theta20):
    w = theta20.wedge
    th = oracles.to_dict(w, theta20.theta)
    M32 = op20.M32.toarray()
    M33 = op20.M33.toarray()
    for s in [(1, 1), (2, 0), (4, -1), (9, 9), (20, 1)]:
        row = w.site_index(s)
        i = s[0]
        e32 = np.zeros(w.size)
        e33 = np.zeros(w.size)
        m21 = 0.0
        for p, k in oracles.neighbours(s, w.N):
            d = th[p] + k * np.pi / 2 - th[s]
            e32[w.site_index(p)] += np.sin(d) / i
            e33[w.site_index(p)] += np.cos(d) / i
            e33[row] -= np.cos(d) / i
            m21 += np.cos(d) - 1
        e32[row] += 2.0 / i
        np.testing.assert_allclose(M32[row], e32, atol=1e-14)
        np.testing.assert_allclose(M33[row], e33, atol=1e-14)
        assert op20.M21[row] == pytest.approx(m21, abs=1e-14)


def test_block_invariants(op20):
    assert np.all(op20.M22 == -2.0)
    T = op20.T.toarray()
    assert np.max(np.abs(T - T.T)) < 1e-12
    assert np.array_equal(op20.M33.toarray() != 0, T != 0)
    M = op20.dense()
    n = op20.wedge.size
    assert np.all(M[1 : n + 1, n + 1 :] == 0)
    assert np.all(M[n + 1 :, 0] == 0)
    assert M[0].tolist() == [1.0] + [0.0] * (2 * n)


def test_matches_weighted_jacobian(op20, theta20, model):
    J = jacobian(0.0, PolarField.base(theta20, 1.0), model, ResidualOptions(weighted=True)).toarray()
    assert np.max(np.abs(J - op20.dense()[1:])) < 1e-12


def test_apply_matches_dense(op_small, rng):
    x = rng.standard_normal(op_small.size)
    np.testing.assert_allclose(op_small.apply(x), op_small.dense() @ x, atol=1e-13)
    assert op_small.norm() == pytest.approx(np.max(np.abs(op_small.dense()).sum(axis=1)))


def test_quadratic_form(op20, rng):
    one = quadratic_form_check(op20, np.ones(op20.wedge.size))
    assert abs(one.direct) < 1e-12 and one.identity == 0.0
    for _ in range(100):
        q = quadratic_form_check(op20, rng.standard_normal(op20.wedge.size))
        assert q.difference < 1e-10 * max(1.0, abs(q.direct))
        assert q.direct <= 1e-12


@pytest.mark.parametrize("N", [5, 10, 20])
def test_kernel_is_constants(N, model):
    rep = spectrum_T(assemble_M(solve_phase(build_wedge(N)), model).T)
    assert rep.kernel_dimension == 1
    assert rep.kernel_constant_deviation < 1e-6
    assert rep.rest_negative


def test_single_site_operator(model):
    op = assemble_M(solve_phase(build_wedge(1)), model)
    assert abs(op.T.toarray()[0, 0]) < 1e-15
    assert spectrum_T(op.T).kernel_dimension == 1


def test_dense_limit():
    import scipy.sparse as sp

    with pytest.raises(DomainError):
        spectrum_T(sp.identity(31 * 31, format="csr"))


def test_C_and_Gamma_monotone(op20):
    ns, C, G = gadget_table(op20, 10)
    assert np.all(np.diff(C) > 0) and np.all(np.diff(G) > 0)
    assert np.all(G >= 2)
    # recorded values for the default model at N=20
    np.testing.assert_allclose(C[:4], [0.51643548, 1.82668342, 4.25690934, 8.17141493], rtol=1e-6)
    np.testing.assert_allclose(G[:4], [3.17439141, 5.7514609, 14.66670048, 29.63482502], rtol=1e-6)
    assert compute_Cn(op20, 20) == np.inf
    with pytest.raises(DomainError):
        compute_Cn(op20, 21)


def test_C_is_inverse_smallest_singular_value(op_small):
    # independent route: eigenvalues of the Gram matrix of the restricted map
    w = op_small.wedge
    A = op_small.M33.toarray()[:, w.columns <= 3]
    assert compute_Cn(op_small, 3) == pytest.approx(1 / np.sqrt(np.linalg.eigvalsh(A.T @ A)[0]), rel=1e-8)


def test_projection_is_projection(op_small):
    w = op_small.wedge
    A = op_small.M33.toarray()[:, w.columns <= 2]
    P = A @ np.linalg.pinv(A)
    np.testing.assert_allclose(P @ P, P, atol=1e-12)
    np.testing.assert_allclose(P @ A, A, atol=1e-12)
    assert projection_norm(op_small, 2) == pytest.approx(np.max(np.abs(P).sum(axis=1)), rel=1e-10)
    assert compute_Gamma(op_small, 2) >= 2


def test_staircase(op20, rng):
    ns, C, G = gadget_table(op20, 11)
    table = staircase_n_of_mu(ns, C, G)
    assert table.k0 == G[0]
    np.testing.assert_allclose(table.mu, (table.k0 / G[1:]) ** 2)
    assert np.all(np.diff(table.mu) < 0)
    mus = rng.uniform(table.mu[-1], 1.0, 1000)
    mus = mus[mus > table.mu[-1]]
    assert np.all(table.bound_holds(mus))
    order = np.argsort(mus)
    assert np.all(np.diff(table.n_of_mu(mus[order])) <= 0)
    with pytest.raises(DomainError):
        staircase_n_of_mu(ns, C, G[::-1])
    with pytest.raises(DomainError):
        staircase_n_of_mu(ns, C, G, k0=1.0)


def test_projection_Pn(op_small, rng):
    x = rng.standard_normal(op_small.size)
    p = project_Pn(op_small, x, 3)
    assert np.array_equal(project_Pn(op_small, p, 3), p)
    assert np.array_equal(p[: 1 + op_small.wedge.size], x[: 1 + op_small.wedge.size])


def test_norm_family(op20, rng):
    w = op20.wedge
    for _ in range(100):
        x = rng.standard_normal(op20.size)
        vals = [norm_n(op20, x, n) for n in range(1, 21)]
        assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))
        assert vals[-1] <= norm_X(x) + 1e-15
    x = np.zeros(op20.size)
    x[1 + w.size :][w.columns == 3] = rng.standard_normal(5) * 10
    for n in range(3, 21):
        assert norm_n(op20, x, n) == norm_X(x)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31))
def test_norm_monotone_property(n, seed):
    model = PolynomialModel()
    op = _small_op(model)
    x = np.random.default_rng(seed).standard_normal(op.size)
    assert norm_n(op, x, n) <= norm_n(op, x, n + 1) + 1e-15 <= norm_X(x) + 2e-15


_CACHE = {}


def _small_op(model):
    if "op" not in _CACHE:
        _CACHE["op"] = assemble_M(solve_phase(build_wedge(6)), model)
    return _CACHE["op"]
