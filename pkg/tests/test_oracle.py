import itertools

import cvxpy as cp
import numpy as np
import pytest

from chaining_lab.emp_process import LinearProcess, hoeffding_level
from chaining_lab.losses import huber_model, quadratic_model
from chaining_lab.oracle import (CallableG, ConjugateUnbounded, Norm, OracleConfig, QuadraticG, TabulatedG,
                                 cone_constants, conjugate_function, convex_conjugate, effective_sparsity,
                                 event_T_frequency, excess_risk, margin_fit, oracle_experiment,
                                 sparse_approx_target, t_ratio_sup, theorem1_bounds, theorem2_M)
from chaining_lab.samples import GaussianRegression, column_norms, gaussian_design


# -- conjugates -----------------------------------------------------------------------------------


@pytest.mark.parametrize("c, v, expected", [(1.0, 2.0, 1.0), (0.5, 3.0, 4.5), (2.0, 0.0, 0.0)])
def test_numeric_conjugate_examples(c, v, expected):
    G = QuadraticG(c)
    assert convex_conjugate(G, v, exact=False) == pytest.approx(expected, abs=1e-10)
    assert convex_conjugate(G, v) == pytest.approx(expected, abs=1e-15)


def test_conjugate_of_tabulated_and_callable_margins():
    u = np.linspace(0, 4, 41)
    G = TabulatedG(u, u**2)
    for v in (0.0, 1.0, 3.3, 7.0):
        assert convex_conjugate(G, v) == pytest.approx(convex_conjugate(G, v, exact=False), abs=1e-9)
    with pytest.raises(ConjugateUnbounded):
        convex_conjugate(G, 100.0)
    with pytest.raises(ConjugateUnbounded):
        convex_conjugate(CallableG(lambda x: np.asarray(x)), 2.0)
    assert convex_conjugate(CallableG(lambda x: np.asarray(x) ** 4), 4.0) == pytest.approx(3.0, abs=1e-9)
    with pytest.raises(ValueError):
        convex_conjugate(QuadraticG(), -1.0)
    with pytest.raises(ValueError):
        TabulatedG([0, 1, 2], [0, 1, 2])


# -- effective sparsity ------------------------------------------------------------------------------


@pytest.mark.parametrize("k", [1, 4])
def test_l2_effective_sparsity(k):
    es = effective_sparsity(Norm.l2(10), 3.0, range(k))
    assert es.delta == pytest.approx(1 / np.sqrt(k), abs=1e-6)
    assert es.gamma == pytest.approx(np.sqrt(k), abs=1e-6)
    assert es.phi2 == pytest.approx(1.0, abs=1e-6)


def test_diag_effective_sparsity_against_grid():
    es = effective_sparsity(Norm.diag([2.0, 1.0]), 1.0, [0])
    # grid over theta_2 in [-1, 1] with |theta_1| = 1
    t2 = np.linspace(-1, 1, 20001)
    grid = np.sqrt(4 + t2**2).min()
    assert es.delta == pytest.approx(grid, abs=1e-6)
    assert es.gamma == pytest.approx(0.5, abs=1e-6)


def _cvx_delta(A, L, S):
    p = A.shape[1]
    Sc = [j for j in range(p) if j not in S]
    best = np.inf
    for tail in itertools.product([1.0, -1.0], repeat=len(S) - 1):
        signs = np.array((1.0,) + tail)
        u = cp.Variable(len(S), nonneg=True)
        w = cp.Variable(len(Sc))
        expr = A[:, S] @ cp.multiply(signs, u) + A[:, Sc] @ w
        prob = cp.Problem(cp.Minimize(cp.norm(expr, 2)), [cp.sum(u) == 1, cp.norm1(w) <= L])
        prob.solve(solver=cp.CLARABEL)
        best = min(best, prob.value)
    return best


@pytest.mark.parametrize("seed, L, S", [(0, 1.0, [0, 3]), (1, 3.0, [1, 2, 5]), (2, 0.5, [4])])
def test_effective_sparsity_matches_cvxpy(seed, L, S):
    z = gaussian_design(30, 12, np.random.default_rng(seed))
    tau = Norm.design(z)
    es = effective_sparsity(tau, L, S)
    assert es.delta == pytest.approx(_cvx_delta(tau.A, L, S), abs=1e-6)
    th = es.theta
    assert np.abs(th[S]).sum() == pytest.approx(1.0)
    assert np.abs(np.delete(th, S)).sum() <= L + 1e-9
    assert tau(th) == pytest.approx(es.delta, abs=1e-9)


def test_effective_sparsity_degenerate_and_validation():
    z = gaussian_design(5, 20, np.random.default_rng(0))
    es = effective_sparsity(Norm.design(z), 100.0, [0])
    assert es.gamma == np.inf and es.phi2 == 0.0
    with pytest.raises(ValueError):
        effective_sparsity(Norm.l2(3), 1.0, [])
    with pytest.raises(ValueError):
        effective_sparsity(Norm.l2(3), -1.0, [0])


def test_norm_constructors():
    W = np.array([[2.0, 0.5], [0.5, 1.0]])
    th = np.array([0.3, -1.2])
    assert Norm.weighted(W)(th) == pytest.approx(np.sqrt(th @ W @ th))
    with pytest.raises(ValueError):
        Norm.weighted(-np.eye(2))
    z = np.random.default_rng(0).normal(size=(7, 2))
    assert Norm.design(z)(th) == pytest.approx(np.sqrt(np.mean((z @ th) ** 2)))


# -- excess risk and margin --------------------------------------------------------------------------


def test_excess_risk_quadratic():
    rng = np.random.default_rng(0)
    z = gaussian_design(40, 5, rng)
    theta0 = np.array([1.0, 0, 0, 0, 0])
    gen = GaussianRegression(z, theta0)
    m = quadratic_model(5)
    assert excess_risk(m, gen, theta0, theta0).value == 0.0
    assert excess_risk(m, gen, theta0 + np.eye(5)[0], theta0).value == pytest.approx(1.0)
    # the Monte Carlo path agrees with the closed form when the reference is not the truth
    ref = theta0 + 0.2 * np.eye(5)[2]
    th = theta0 + 0.3 * np.eye(5)[1]
    mc = excess_risk(m, gen, th, ref, draws=400_000, seed=1)
    exact = np.mean((z @ (th - theta0)) ** 2) - np.mean((z @ (ref - theta0)) ** 2)
    assert mc.se > 0 and abs(mc.value - exact) <= 4 * mc.se


def test_excess_risk_nonnegative_at_the_minimizer():
    rng = np.random.default_rng(1)
    z = gaussian_design(20, 3, rng)
    gen = GaussianRegression(z, np.array([0.5, -0.5, 0.0]))
    m = huber_model(3)
    for k in range(5):
        th = gen.theta0 + rng.normal(scale=0.3, size=3)
        e = excess_risk(m, gen, th, gen.theta0, draws=40_000, seed=k)
        assert e.value >= -3 * e.se


def test_margin_fit_quadratic_is_exact_and_homogeneous():
    rng = np.random.default_rng(2)
    z = gaussian_design(30, 6, rng)
    theta0 = np.zeros(6)
    tau = Norm.design(z)

    def excess(th):
        return float(np.mean((z @ (th - theta0)) ** 2))

    fit = margin_fit(excess, theta0, tau, 1.0, probes=100)
    assert fit.c == pytest.approx(1.0) and np.allclose(fit.ratios, 1.0)
    assert margin_fit(excess, theta0, tau.scaled(2.0), 1.0, probes=100).c == pytest.approx(0.25)


# -- bound formulas ------------------------------------------------------------------------------------


def test_cone_constants():
    assert cone_constants(0.2, 0.1, 0.5) == pytest.approx((3.0, 18.0))
    with pytest.raises(ValueError):
        cone_constants(0.05, 0.1, 0.5)


def test_worked_instance_two_code_paths():
    H_closed = QuadraticG(1.0).conjugate
    H_numeric = conjugate_function(QuadraticG(1.0), exact=False)
    for H in (H_closed, H_numeric):
        b = theorem1_bounds(0.2, 0.1, 0.5, np.sqrt(3), H)
        M0, _ = theorem2_M(0.2, 0.1, 0.5, np.sqrt(3), np.sqrt(3), H)
        assert b.L == pytest.approx(3.0)
        assert M0 == pytest.approx(2.4, abs=1e-10)
        # delta H(2 lam Gamma / delta) v 2 lam^2 = 0.5 * 0.48
        assert b.rhs1 == pytest.approx(0.24, abs=1e-10)
        assert (0.2 - 0.1) * M0 == pytest.approx(b.rhs1, abs=1e-10)


def test_bound_floor_and_monotonicity():
    H = QuadraticG(1.0).conjugate
    assert theorem1_bounds(0.2, 0.1, 0.5, 0.0, H).rhs1 == pytest.approx(2 * 0.2**2)
    b = theorem1_bounds(0.2, 0.1, 0.5, np.sqrt(3), H)
    assert b.rhs2 >= b.rhs1 and b.L_delta >= b.L
    assert theorem2_M(0.1, 0.1, 0.5, 1.0, 1.0, H) == (np.inf, np.inf)
    M_half, _ = theorem2_M(0.2, 0.1, 0.5, 1.0, 1.0, H)
    M_quarter, _ = theorem2_M(0.2, 0.1, 0.25, 1.0, 1.0, H)
    lam = 0.2
    assert M_half == pytest.approx(0.5 / 0.1 * max((2 * lam / 0.5) ** 2 / 4, 2 * lam**2))
    assert M_quarter == pytest.approx(0.25 / 0.1 * max((2 * lam / 0.25) ** 2 / 4, 2 * lam**2))


def test_sparse_approx_target_hand_arithmetic():
    # l2 tau: Gamma(L, S) = sqrt(|S|); H(v) = v^2/4
    H = QuadraticG(1.0).conjugate
    lam, lam0, delta = 0.2, 0.1, 0.5
    tau = Norm.l2(6)
    cands = [np.r_[1.0, 0, 0, 0, 0, 0], np.r_[1.0, 1.0, 1.0, 0, 0, 0], np.r_[1.0, 1.0, 0, 0, 0, 0]]
    excess_by_size = {1: 5.0, 2: 0.1, 3: 0.0}

    def gamma(L, S):
        return effective_sparsity(tau, L, S).gamma

    def excess(th):
        return excess_by_size[int(np.count_nonzero(th))]

    def hand(k):
        v = 4 * (1 + delta) * lam * np.sqrt(k) / delta**2
        return max(2 * delta * v**2 / 4, 2 * lam**2) + (1 + delta) * excess_by_size[k]

    # k=1: 5.76 + 7.5, k=2: 11.52 + 0.15, k=3: 17.28
    th, k = sparse_approx_target(cands, lam, lam0, delta, H, gamma, excess)
    assert k == min(range(3), key=lambda i: hand(int(np.count_nonzero(cands[i])))) == 2
    np.testing.assert_array_equal(th, cands[2])
    assert sparse_approx_target(cands[:1], lam, lam0, delta, H, gamma, lambda t: 0.0)[1] == 0
    with pytest.raises(ValueError):
        sparse_approx_target([], lam, lam0, delta, H, gamma, excess)


# -- event T and the end-to-end experiment ------------------------------------------------------------


def _linear_toy(n=200, p=50, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianRegression(gaussian_design(n, p, rng), np.zeros(p))


def test_event_T_extremes_and_frequency():
    gen = _linear_toy()
    assert event_T_frequency(gen, gen.theta0, 1e6, 1.0, 50).frequency == 1.0
    assert event_T_frequency(gen, gen.theta0, 0.0, 1.0, 50).frequency == 0.0
    s = gen.draw(np.random.default_rng(9))
    K_hat = float(column_norms(gen.centered_increments(s)).max())
    lam0 = hoeffding_level(50, 200) * K_hat
    assert event_T_frequency(gen, gen.theta0, lam0, 2.0, 300, seed=1).frequency >= 0.9


def test_t_ratio_sup_linear_closed_form():
    psi = np.random.default_rng(0).normal(size=(20, 4))
    proc = LinearProcess(psi)
    v = np.abs(psi.mean(axis=0)).max()
    # for m >= lam0 the ratio is v; below lam0 it is m v / lam0
    assert t_ratio_sup(proc, np.zeros(4), 0.01, 1.0, shells=4) == pytest.approx(v)


def test_oracle_experiment_small():
    rep = oracle_experiment(OracleConfig(n=60, p=80, reps=20, seed=3))
    s = rep.summary()
    assert len(rep.rows) == 20 and [r.rep for r in rep.rows] == list(range(20))
    assert s["failures"] == 0
    assert s["T_frequency"] >= 0.8
    assert rep.L == pytest.approx(3.0) and rep.L_delta == pytest.approx(18.0)
    again = oracle_experiment(OracleConfig(n=60, p=80, reps=20, seed=3))
    assert [r.lhs for r in again.rows] == [r.lhs for r in rep.rows]


def test_noise_free_quadratic_toy_recovers_truth():
    rep = oracle_experiment(OracleConfig(n=100, p=20, reps=5, sigma=1e-6, seed=1))
    for r in rep.rows:
        assert r.verdict and r.lhs < 1e-3


def test_effective_sparsity_is_nondecreasing_in_L():
    z = gaussian_design(40, 15, np.random.default_rng(4))
    tau = Norm.design(z)
    gammas = [effective_sparsity(tau, L, [0, 1]).gamma for L in (0.0, 0.5, 1.0, 2.0, 4.0)]
    assert all(a <= b * (1 + 1e-9) for a, b in zip(gammas, gammas[1:]))


def test_event_T_is_monotone_in_lam0():
    gen = _linear_toy(n=100, p=20, seed=3)
    freqs = [event_T_frequency(gen, gen.theta0, lam0, 1.0, 100, seed=2).frequency for lam0 in (0.05, 0.1, 0.2, 0.4)]
    assert freqs == sorted(freqs)
