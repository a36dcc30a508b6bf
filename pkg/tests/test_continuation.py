import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rotwave.continuation import (
    NewtonInfo,
    NewtonSettings,
    PolarField,
    ResidualOptions,
    alpha_grid,
    continue_in_alpha,
    deviation_slope,
    explore_multiarm,
    jacobian,
    newton_solve,
    odd_symmetry_defect,
    residual_F,
    residual_multiarm,
)
from rotwave.lattice import DomainError, build_wedge
from rotwave.model import PolynomialModel
from rotwave.phase import SolverError

from . import oracles

# Recorded from continue_in_alpha on the default grid (N=20, a=beta=eps'=1);
# the frequency shifts are cross-checked against the sum rule below.
FROZEN = {
    0.01: dict(nu=-1.7010323702e-04, dev_r=1.0855283535e-02, dev_theta=6.892698413e-02),
    0.05: dict(nu=-8.325802804e-04, dev_r=5.393588441e-02, dev_theta=3.300165202e-01),
    0.1: dict(nu=-1.6456330092e-03, dev_r=1.0692358179e-01, dev_theta=6.304651694e-01),
}


def random_field(w, rng, spread=0.4, nu=0.0):
    return PolarField(w, 1 + rng.uniform(-spread, spread, w.size), rng.uniform(-3, 3, w.size), nu)


@pytest.mark.parametrize("opts", [ResidualOptions(), ResidualOptions(arms=2), ResidualOptions(arms=3)])
def test_residual_matches_loop_oracle(rng, opts, model):
    N = 4
    w = build_wedge(N)
    x = random_field(w, rng, nu=0.03)
    F1, F2 = residual_F(0.07, x, model, opts)
    r1, r2 = oracles.polar_residual(
        0.07,
        oracles.to_dict(w, x.r),
        oracles.to_dict(w, x.theta),
        N,
        model.lam,
        model.omega1,
        nu=0.03,
        arms=opts.arms,
    )
    np.testing.assert_allclose(F1, [r1[tuple(s)] for s in w.sites], atol=1e-13)
    np.testing.assert_allclose(F2, [r2[tuple(s)] for s in w.sites], atol=1e-13)


def test_uncoupled_radial_residual_vanishes(rng, model):
    w = build_wedge(5)
    x = PolarField(w, np.ones(w.size), rng.uniform(-3, 3, w.size))
    F1, _ = residual_F(0.0, x, model)
    assert np.all(F1 == 0.0)


def test_base_point_and_weighting(theta20, model):
    x = PolarField.base(theta20, 1.0)
    _, F2 = residual_F(0.0, x, model)
    assert np.max(np.abs(F2)) < 1e-10
    _, G2 = residual_F(0.0, x, model, ResidualOptions(weighted=True))
    assert np.array_equal(G2, F2 / theta20.wedge.columns)


def test_nonpositive_radius_rejected(model):
    w = build_wedge(2)
    with pytest.raises(DomainError):
        residual_F(0.1, PolarField(w, [1, 1, 0, 1], np.zeros(4)), model)
    with pytest.raises(DomainError):
        ResidualOptions(arms=0)


@pytest.mark.parametrize("weighted", [False, True])
def test_jacobian_matches_differences(rng, weighted):
    model = PolynomialModel(eps_prime=1.3)
    w = build_wedge(5)
    n = w.size
    opts = ResidualOptions(weighted=weighted)
    worst = 0.0
    for _ in range(20):
        x = random_field(w, rng, spread=0.45)
        alpha = rng.uniform(0, 0.5)

        def f(v):
            F1, F2 = residual_F(v[0], PolarField(w, v[1 : n + 1], v[n + 1 :]), model, opts)
            return np.concatenate([F1, F2])

        J = jacobian(alpha, x, model, opts).toarray()
        fd = oracles.central_difference(f, np.concatenate([[alpha], x.r, x.theta]))
        worst = max(worst, np.max(np.abs(J - fd)) / np.max(np.abs(J)))
    assert worst < 1e-6


def test_jacobian_base_point_entries(theta20, model):
    w = theta20.wedge
    n = w.size
    J = jacobian(0.0, PolarField.base(theta20, 1.0), model).toarray()
    np.testing.assert_array_equal(np.diag(J[:n, 1 : n + 1]), np.full(n, -2.0))
    # d F1 / d alpha from an explicit loop over the ghost-resolved neighbours
    th = oracles.to_dict(w, theta20.theta)
    expect = []
    for s in oracles.wedge_sites(w.N):
        expect.append(sum(np.cos(th[p] + k * np.pi / 2 - th[s]) - 1 for p, k in oracles.neighbours(s, w.N)))
    np.testing.assert_allclose(J[:n, 0], expect, atol=1e-12)


def test_newton_at_root_is_identity(theta20, model):
    x = PolarField.base(theta20, 1.0)
    info = NewtonInfo()
    y = newton_solve(0.0, x, model, info=info)
    assert info.iterations == 0
    assert np.array_equal(y.r, x.r) and np.array_equal(y.theta, x.theta)


def test_newton_small_alpha(theta20, model):
    w = theta20.wedge
    info = NewtonInfo()
    x = newton_solve(0.01, PolarField.base(theta20, 1.0), model, info=info)
    assert info.iterations <= 10 and info.residual < 1e-10
    r1, r2 = oracles.polar_residual(
        0.01, oracles.to_dict(w, x.r), oracles.to_dict(w, x.theta), w.N, model.lam, model.omega1, nu=x.freq_shift
    )
    assert max(max(map(abs, r1.values())), max(map(abs, r2.values()))) < 1e-10
    # sum rule: coupling terms cancel in sum r^2 F2, leaving nu = sum r^2 omega1 / sum r^2
    nu = np.sum(x.r**2 * model.omega1(x.r, 0.01)) / np.sum(x.r**2)
    assert x.freq_shift == pytest.approx(nu, rel=1e-8)
    assert x.theta[w.site_index((20, 1))] == theta20[(20, 1)]


def test_constant_frequency_keeps_symmetry(theta20):
    m0 = PolynomialModel(eps_prime=0.0)
    x = newton_solve(0.01, PolarField.base(theta20, 1.0), m0)
    assert abs(x.freq_shift) < 1e-14
    assert odd_symmetry_defect(x, theta20) < 1e-8
    x1 = newton_solve(0.01, PolarField.base(theta20, 1.0), PolynomialModel())
    assert odd_symmetry_defect(x1, theta20) > 1e-2


def test_ball_guard(model):
    w = build_wedge(3)
    with pytest.raises(DomainError):
        newton_solve(0.0, PolarField(w, np.full(9, 1.6), np.zeros(9)), model)
    with pytest.raises(DomainError):
        newton_solve(-0.1, PolarField(w, np.ones(9), np.zeros(9)), model)


def test_strong_coupling_fails_cleanly(theta20, model):
    with pytest.raises(SolverError) as exc:
        newton_solve(50.0, PolarField.base(theta20, 1.0), model)
    assert isinstance(exc.value.best, PolarField)


def test_grid_with_only_zero(model):
    w = build_wedge(4)
    run = continue_in_alpha([0.0], model, w)
    assert len(run.solutions) == 1 and run.completed
    assert np.all(run.solutions[0].r == 1.0)
    assert np.array_equal(run.solutions[0].theta, run.theta_bar.theta)


@pytest.mark.parametrize("grid", [[0.1, 0.2], [0.0, 0.2, 0.1], []])
def test_bad_grids(model, grid):
    with pytest.raises(DomainError):
        continue_in_alpha(grid, model, build_wedge(3))


def test_alpha_grid_helper():
    g = alpha_grid(0.1, 1e-3)
    assert g.size == 101 and g[0] == 0.0 and g[-1] == 0.1 and g[37] == 0.037
    with pytest.raises(DomainError):
        alpha_grid(0.1, 0.03)


def test_run_statistics(run20):
    assert run20.completed
    assert max(s.iterations for s in run20.stats) <= 10
    for alpha, ref in FROZEN.items():
        st = run20.stats[int(round(alpha * 1000))]
        assert st.alpha == pytest.approx(alpha)
        assert st.freq_shift == pytest.approx(ref["nu"], rel=1e-6)
        assert st.dev_r == pytest.approx(ref["dev_r"], rel=1e-6)
        assert st.dev_theta == pytest.approx(ref["dev_theta"], rel=1e-6)
    dev_r = np.array([s.dev_r for s in run20.stats])
    assert dev_r[0] < 1e-12 and np.all(np.diff(dev_r) > 0)
    fit = deviation_slope(run20.alphas, dev_r)
    assert fit.linear
    assert np.all(dev_r[1:] <= fit.C * run20.alphas[1:] + 1e-15)


def test_halving_grid_continuity(model):
    w = build_wedge(8)
    steps = []
    for h in (4e-3, 2e-3, 1e-3):
        run = continue_in_alpha(alpha_grid(0.02, h), model, w)
        jumps = [
            max(np.max(np.abs(b.r - a.r)), np.max(np.abs(b.theta - a.theta)))
            for a, b in zip(run.solutions, run.solutions[1:])
        ]
        steps.append(max(jumps))
    assert steps[0] > steps[1] > steps[2]
    assert steps[1] / steps[2] == pytest.approx(2.0, rel=0.1)


def test_failed_step_returns_partial_run(model):
    w = build_wedge(5)
    run = continue_in_alpha(alpha_grid(0.01, 1e-3), model, w, NewtonSettings(tol=1e-15, max_iters=1))
    assert not run.completed
    assert run.failure["alpha"] == pytest.approx(1e-3)
    assert run.failure["last_good_alpha"] == 0.0
    assert len(run.solutions) == 1


def test_resume_matches_single_run(model):
    w = build_wedge(6)
    full = continue_in_alpha(alpha_grid(0.01, 1e-3), model, w)
    part = continue_in_alpha(alpha_grid(0.005, 1e-3), model, w)
    resumed = continue_in_alpha(alpha_grid(0.01, 1e-3), model, w, resume=part)
    assert resumed.completed and len(resumed.solutions) == 11
    for a, b in zip(full.solutions, resumed.solutions):
        assert np.array_equal(a.r, b.r) and np.array_equal(a.theta, b.theta)


def test_multiarm_consistency(rng, theta20, model):
    x = random_field(theta20.wedge, rng)
    assert all(np.array_equal(a, b) for a, b in zip(residual_multiarm(1, 0.05, x, model), residual_F(0.05, x, model)))
    w = theta20.wedge
    base = PolarField(w, np.ones(w.size), x.theta)
    _, F2 = residual_multiarm(2, 0.0, base, model)
    th = oracles.to_dict(w, x.theta)
    for s in [(1, 1), (3, -1), (7, 4)]:
        ref = sum(np.sin(2 * (th[p] + k * np.pi / 2 - th[s])) for p, k in oracles.neighbours(s, w.N))
        assert F2[w.site_index(s)] == pytest.approx(ref, abs=1e-12)


def test_multiarm_exploration_reports():
    rep = explore_multiarm(2)
    assert rep["square"] == [6, 6]
    assert np.isfinite(rep["residual"]) and isinstance(rep["converged"], bool)
    assert explore_multiarm(1)["converged"]


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 0.3))
def test_residual_gauge_invariance(c, alpha):
    model = PolynomialModel()
    w = build_wedge(4)
    x = PolarField(w, np.linspace(0.8, 1.2, w.size), np.linspace(-2, 2, w.size) ** 3)
    y = PolarField(w, x.r, x.theta + c)
    for a, b in zip(residual_F(alpha, x, model), residual_F(alpha, y, model)):
        assert np.max(np.abs(a - b)) < 1e-12
