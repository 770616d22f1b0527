import itertools

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from chaining_lab.emp_process import (BallSpec, LinearProcess, LossProcess, ProcessEstimate, bernstein_check,
                                      bernstein_envelope_tail, conditional_mean_En, contraction_check,
                                      dual_norm_sup, eigen_ratio, fixed_m_threshold, linear_sups, make_process,
                                      massart_check, massart_threshold, multivariate_contraction_check,
                                      peeling_check, peeling_constants, peeling_threshold, project_l1_ball,
                                      regime_bound, shell_radii, subgaussian_tau, symmetrization_check,
                                      symmetrized_sup_once, uniform_l1_ball)
from chaining_lab.experiments import huber_setup, linear_setup, mixture_setup
from chaining_lab.losses import huber_model, quadratic_model
from chaining_lab.samples import GaussianRegression, SampleSet, gaussian_design


# -- dual norm -----------------------------------------------------------------------------


def test_dual_norm_examples():
    val, vert = dual_norm_sup([1.0, -3.0, 2.0], 1.0)
    assert val == 3.0
    np.testing.assert_array_equal(vert, [0.0, -1.0, 0.0])
    assert dual_norm_sup(np.zeros(4), 5.0)[0] == 0.0
    assert dual_norm_sup([0.5, 0.5], 2.0)[0] == 1.0
    with pytest.raises(ValueError):
        dual_norm_sup([1.0], -1.0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-100, 100)), st.floats(0, 50))
def test_dual_norm_vertex_attains_and_dominates_ball_points(v, M):
    val, vert = dual_norm_sup(v, M)
    assert abs(vert @ v) == pytest.approx(val, rel=1e-12, abs=1e-12)
    assert np.abs(vert).sum() == pytest.approx(M)
    pts = uniform_l1_ball(np.random.default_rng(0), 50, v.size, M) if M > 0 else np.zeros((1, v.size))
    assert np.all(np.abs(pts @ v) <= val * (1 + 1e-12) + 1e-12)


def test_symmetrized_linear_examples():
    proc = LinearProcess(np.array([[1.0], [1.0]]))
    assert symmetrized_sup_once(proc, BallSpec([0.0], 7.0), np.array([1.0, -1.0])).value == 0.0
    assert symmetrized_sup_once(proc, BallSpec([0.0], 3.0), np.array([1.0, 1.0])).value == 3.0
    with pytest.raises(ValueError):
        symmetrized_sup_once(proc, BallSpec([0.0], 3.0), np.ones(3))


def test_project_l1_ball_against_cvxpy():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(0)
    for _ in range(5):
        v = rng.normal(size=7) * 3
        x = cp.Variable(7)
        cp.Problem(cp.Minimize(cp.sum_squares(x - v)), [cp.norm1(x) <= 1.5]).solve(solver=cp.CLARABEL)
        np.testing.assert_allclose(project_l1_ball(v, 1.5)[0], x.value, atol=1e-6)
    inside = np.array([0.1, -0.2])
    np.testing.assert_array_equal(project_l1_ball(inside, 1.0)[0], inside)


def test_ball_spec_validation():
    with pytest.raises(ValueError):
        BallSpec([0.0], 0.0)
    with pytest.raises(ValueError):
        BallSpec([0.0, 0.0], 1.0, free=[True])
    with pytest.raises(ValueError):
        BallSpec([0.0], 1.0, restriction="box")


# -- loss-process search ---------------------------------------------------------------------


def _grid_sup(proc, ball, eps):
    """Dense grid over the 3-d l1 ball, refined at 1e-3 around the best coarse points."""
    M = ball.radius
    w = eps / proc.n
    base = proc.model.values(ball.center, proc.sample.y, proc.sample.z)[0] @ w

    def f(pts):
        return np.abs(proc.model.values(ball.center + pts, proc.sample.y, proc.sample.z) @ w - base)

    ax = np.arange(-M, M + 1e-12, 0.02)
    pts = np.array(list(itertools.product(ax, ax, ax)))
    pts = pts[np.abs(pts).sum(axis=1) <= M]
    vals = f(pts)
    best = float(vals.max())
    fine = np.arange(-0.02, 0.02 + 1e-12, 1e-3)
    local = np.array(list(itertools.product(fine, fine, fine)))
    for c in pts[np.argsort(vals)[-10:]]:
        cand = project_l1_ball(c + local, M)
        best = max(best, float(f(cand).max()))
    return best


def test_huber_search_agrees_with_dense_grid():
    rng = np.random.default_rng(11)
    z = gaussian_design(8, 3, rng)
    s = SampleSet(z @ np.array([0.5, 0.0, -0.5]) + rng.standard_normal(8), z)
    proc = LossProcess(huber_model(3, 0.5), s)
    ball = BallSpec(np.zeros(3), 1.0)
    for k in range(3):
        eps = rng.choice([-1.0, 1.0], size=8)
        found = symmetrized_sup_once(proc, ball, eps, np.random.default_rng(k))
        grid = _grid_sup(proc, ball, eps)
        assert found.lower_estimate
        assert found.value == pytest.approx(grid, abs=1e-3)
        assert np.abs(found.theta).sum() <= 1.0 + 1e-12


def test_search_on_linear_functional_returns_vertex_value():
    # the uncentered quadratic loss with y = 0 restricted to one direction is linear in the sign of theta'z
    rng = np.random.default_rng(3)
    z = gaussian_design(10, 4, rng)
    s = SampleSet(np.zeros(10), z)
    proc = LossProcess(huber_model(4, 1e6), s)
    eps = rng.choice([-1.0, 1.0], size=10)
    found = symmetrized_sup_once(proc, BallSpec(np.zeros(4), 0.5), eps, rng).value
    # sup of a convex quadratic form over the ball sits at a vertex
    G = (z * (eps / 20)[:, None]).T @ z
    vertices = np.vstack([0.5 * np.eye(4), -0.5 * np.eye(4)])
    assert found >= np.abs(np.einsum("ij,jk,ik->i", vertices, G, vertices)).max() - 1e-12


def test_make_process_and_centering_support():
    rng = np.random.default_rng(0)
    z = gaussian_design(12, 3, rng)
    gen = GaussianRegression(z, np.array([1.0, 0.0, 0.0]))
    s = gen.draw(rng)
    proc = make_process(quadratic_model(3, centering="expectation"), s, gen)
    assert isinstance(proc, LinearProcess)
    np.testing.assert_allclose(proc.psi, gen.centered_increments(s))
    with pytest.raises(ValueError):
        make_process(quadratic_model(3, centering="expectation"), s)
    with pytest.raises(ValueError):
        LossProcess(huber_model(3, centering="expectation"), s)


# -- conditional means ------------------------------------------------------------------------


def test_conditional_mean_linear_matches_direct_mc_and_is_homogeneous():
    setup = linear_setup(64, 8, 1.0, np.random.default_rng(0))
    proc = setup.process
    est = conditional_mean_En(proc, BallSpec(np.zeros(8), 1.0), 500, seed=4)
    rng = np.random.default_rng(4)
    eps = rng.choice([-1.0, 1.0], size=(500, 64))
    assert est.mean == pytest.approx(np.abs(eps @ proc.psi / 64).max(axis=1).mean(), rel=1e-12)
    assert est.search == "dual-norm-exact" and not est.lower_estimate
    est3 = conditional_mean_En(proc, BallSpec(np.zeros(8), 3.0), 500, seed=4)
    assert est3.mean == pytest.approx(3 * est.mean, rel=1e-12)
    assert est3.se == pytest.approx(3 * est.se, rel=1e-12)


def test_zero_envelope_gives_zero_estimate():
    est = conditional_mean_En(LinearProcess(np.zeros((10, 3))), BallSpec(np.zeros(3), 1.0), 20)
    assert est.mean == 0.0 and est.se == 0.0


def test_hoeffding_domination_at_desk_scale():
    setup = linear_setup(256, 64, 1.0, np.random.default_rng(5))
    est = conditional_mean_En(setup.process, setup.ball, 1000, seed=1)
    assert est.mean <= regime_bound("linear", 64, 256, setup.K_n) + 3 * est.se


def test_process_estimate_needs_two_replications():
    with pytest.raises(ValueError):
        ProcessEstimate(0.0, 0.0, 1, 0)


def test_block_draws_add_up_across_duplicated_blocks():
    rng = np.random.default_rng(2)
    psi = rng.normal(size=(20, 3))
    one = LinearProcess(psi, np.zeros(3, dtype=int))
    two = LinearProcess(np.hstack([psi, psi]), np.r_[np.zeros(3, dtype=int), np.ones(3, dtype=int)])
    xi = rng.standard_normal((5, 20, 1))
    both = np.concatenate([xi, xi], axis=2)
    # same draw in both blocks: each block's coefficients equal the single-block ones
    np.testing.assert_allclose(two.coefficients(both)[:, :3], one.coefficients(xi))
    np.testing.assert_allclose(two.coefficients(both)[:, 3:], one.coefficients(xi))
    assert two.blocks == 2


# -- closed-form bounds ------------------------------------------------------------------------


def test_regime_bound_values():
    exact = float(mp.sqrt(2 * mp.log(4) / 100))
    assert regime_bound("linear", 2, 100, 1.0) == pytest.approx(exact, rel=1e-14)
    assert round(exact, 5) == 0.16651
    assert regime_bound("glm", 2, 100, 1.0) == 2 * regime_bound("linear", 2, 100, 1.0)
    assert regime_bound("extended-glm", 2, 100, 1.0, r=3, C=1.5) == pytest.approx(6 * exact)
    ident = np.sqrt(50) * np.eye(50)[:, :5]
    assert eigen_ratio(ident) == pytest.approx(1.0)
    assert regime_bound("nonlinear", 2, 100, 1.0, eigen_ratio=1.0) == pytest.approx(exact)
    with pytest.raises(np.linalg.LinAlgError):
        eigen_ratio(np.ones((3, 5)))
    with pytest.raises(ValueError):
        regime_bound("nonlinear", 2, 100, 1.0)
    with pytest.raises(ValueError):
        regime_bound("cubic", 2, 100, 1.0)


def test_massart_threshold_values():
    assert massart_threshold(0.1, 0.2, 100, 2.0) == pytest.approx(0.14)
    assert massart_threshold(0.1, 0.2, 100, 0.0) == 0.1
    assert massart_threshold(0.1, 0.0, 100, 9.0) == 0.1
    ts = np.linspace(0, 10, 21)
    assert np.all(np.diff([massart_threshold(0.1, 0.2, 100, t) for t in ts]) >= 0)


def _bernstein_mp(L, tau, p, n, t):
    a = mp.mpf(t) + mp.log(p)
    return 2 * tau * L * mp.sqrt(2 * a / n) + 2 * L * a / n


def test_bernstein_tail_values():
    assert bernstein_envelope_tail(1, 1, 2, 100, 1) == pytest.approx(float(_bernstein_mp(1, 1, 2, 100, 1)),
                                                                      rel=1e-14)
    assert round(bernstein_envelope_tail(1, 1, 2, 100, 1), 5) == 0.40190
    # the t = 2 value from the independent evaluation (see the decisions ledger for the listed value)
    assert bernstein_envelope_tail(1, 1, 2, 100, 2) == pytest.approx(float(_bernstein_mp(1, 1, 2, 100, 2)),
                                                                      rel=1e-14)
    assert bernstein_envelope_tail(1e-12, 1, 2, 100, 1) == pytest.approx(0.0, abs=1e-11)
    vals = [bernstein_envelope_tail(1, 1, 2, 100, t) for t in (0.5, 1, 2, 4)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert bernstein_envelope_tail(1, 1, 2, 50, 1) > bernstein_envelope_tail(1, 1, 2, 100, 1)


def test_subgaussian_tau_closed_form():
    L = 2.0
    expected = float(mp.sqrt(2 * L**2 * ((1 - 2 / mp.mpf(L) ** 2) ** -0.5 - 1)))
    assert subgaussian_tau(L) == pytest.approx(expected, rel=1e-14)
    with pytest.raises(ValueError):
        subgaussian_tau(1.0)


def test_peeling_threshold_values():
    t = float(mp.log(100))
    a = mp.log(100) + mp.log(100)
    expected = float(mp.mpf("0.1") * (1 + (mp.sqrt(a / mp.log(100)) + a / 400)))
    assert peeling_threshold(0.1, 1.0, 100, 400, t) == pytest.approx(expected, rel=1e-14)
    assert peeling_threshold(0.1, 0.0, 100, 400, 7.0) == 0.1
    assert fixed_m_threshold(0.1, 0.0, 100, 400, 3.0, np.e) == pytest.approx(0.1)
    lam, K = peeling_constants(1.0, 64, 256)
    assert lam == pytest.approx(8 * np.e * np.sqrt(2 * np.log(128) / 256))
    assert K == pytest.approx(0.5 * np.sqrt(np.log(64) / np.log(128)))
    r = shell_radii(2.0, 3)
    assert r.size == 65 and r[0] == 2.0 and r[1] == pytest.approx(2.0 / np.e)


# -- Monte Carlo checks -----------------------------------------------------------------------


def _toy_generator(n=100, p=20, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianRegression(gaussian_design(n, p, rng), np.zeros(p))


def test_symmetrization_check_passes_and_large_t_is_degenerate():
    gen = _toy_generator()
    rep = symmetrization_check(gen, 1.0, 4.0, 500, seed=1)
    assert rep.verdict
    big = symmetrization_check(gen, 1.0, 50.0, 200, seed=1)
    assert big.lhs_freq == 0.0 and big.rhs_freq == 0.0 and big.verdict
    with pytest.raises(ValueError):
        symmetrization_check(gen, 1.0, 3.0, 10)


def test_tail_checks_pass_at_t3():
    gen = _toy_generator()
    proc = linear_setup(100, 20, 1.0, np.random.default_rng(3)).process
    assert bernstein_check(100, 20, 3.0, 500, seed=2).verdict
    assert massart_check(proc, 1.0, 3.0, 500, seed=2).verdict
    assert peeling_check(gen, 1.0, 3.0, 500, seed=2).verdict


def test_contraction_identity_ratio_is_one_and_zero_process_is_flagged():
    proc = LinearProcess(np.random.default_rng(0).normal(size=(30, 4)))
    ball = BallSpec(np.zeros(4), 1.0)
    rep = contraction_check(proc, proc, ball, 100, seed=0)
    assert rep.ratio == pytest.approx(1.0) and rep.verdict
    zero = LinearProcess(np.zeros((30, 4)))
    rep = contraction_check(proc, zero, ball, 50, seed=0)
    assert not rep.defined and not rep.verdict


def test_huber_contraction_small():
    setup = huber_setup(64, 6, 1.0, np.random.default_rng(0))
    rep = contraction_check(setup.process, setup.comparison, setup.ball, 100, seed=1, restarts=16, steps=30)
    assert rep.defined and rep.verdict and rep.numerator.lower_estimate


def test_multivariate_contraction_small():
    setup = mixture_setup(64, 0.5, np.random.default_rng(0), (2, 2))
    rep = multivariate_contraction_check(setup.process, setup.comparison, setup.ball, 30, seed=0, restarts=8,
                                         steps=20)
    assert rep.defined and np.isfinite(rep.ratio) and rep.bound == 2.0


def test_linear_sups_free_mask():
    proc = LinearProcess(np.array([[1.0, 10.0], [1.0, 10.0]]))
    draws = np.ones((1, 2))
    assert linear_sups(proc, 1.0, draws)[0] == 10.0
    assert linear_sups(proc, 1.0, draws, free=[True, False])[0] == 1.0
