import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from chaining_lab.losses import (EnvelopeError, ExpectationCentering, LipschitzEnvelope, LossModel, MixtureParams,
                                 MixtureRegression, _simplex_project, build_envelope, eval_centered, eval_loss,
                                 huber, huber_model, logistic_model, mixture_comparison_blocks, mixture_model,
                                 quadratic_model, sigmoid_least_squares, verify_condition1)
from chaining_lab.samples import GaussianRegression, SampleSet, gaussian_design


def _sample(n=30, p=4, seed=0, binary=False):
    rng = np.random.default_rng(seed)
    z = gaussian_design(n, p, rng)
    y = (rng.random(n) < 0.5).astype(float) if binary else rng.standard_normal(n)
    return SampleSet(y, z)


def _numgrad(model, theta, y, z, h=1e-6):
    g = np.zeros((z.shape[0], theta.size))
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        g[:, j] = (model.values(theta + e, y, z)[0] - model.values(theta - e, y, z)[0]) / (2 * h)
    return g


def test_huber_pieces():
    r = np.array([-3.0, -1.0, 0.0, 0.5, 2.0])
    np.testing.assert_allclose(huber(r, 1.0), [2.5, 0.5, 0.0, 0.125, 1.5])


def test_quadratic_value_matches_definition():
    s = _sample()
    theta = np.array([0.3, -0.1, 0.0, 1.0])
    m = quadratic_model(4)
    np.testing.assert_allclose(m.values(theta, s.y, s.z)[0], (s.y - s.z @ theta) ** 2)
    assert eval_loss(m, theta, s.observation(3)) == pytest.approx((s.y[3] - s.z[3] @ theta) ** 2)


def test_logistic_value_matches_definition():
    s = _sample(binary=True)
    theta = np.array([0.3, -0.1, 0.0, 1.0])
    eta = s.z @ theta
    expected = -(s.y * np.log(1 / (1 + np.exp(-eta))) + (1 - s.y) * np.log(1 / (1 + np.exp(eta))))
    np.testing.assert_allclose(logistic_model(4).values(theta, s.y, s.z)[0], expected, rtol=1e-12)


def test_mixture_value_against_scipy_density():
    rng = np.random.default_rng(1)
    z = gaussian_design(25, 5, rng)
    y = rng.standard_normal(25)
    params = MixtureParams([0.3, 0.7], [0.8, 1.5], (rng.normal(size=2), rng.normal(size=3)))
    m = mixture_model((2, 3), beta_bound=5.0)
    dens = 0.3 * stats.norm.pdf(y, z[:, :2] @ params.beta[0], 0.8) + \
        0.7 * stats.norm.pdf(y, z[:, 2:] @ params.beta[1], 1.5)
    np.testing.assert_allclose(m.values(params.to_theta(), y, z)[0], -np.log(dens), rtol=1e-12)


def test_mixture_value_stable_far_in_the_tail():
    m = mixture_model((1, 1), beta_bound=1.0)
    theta = MixtureParams([0.5, 0.5], [0.5, 0.5], ([1.0], [-1.0])).to_theta()
    v = m.values(theta, np.array([200.0]), np.array([[1.0, 1.0]]))
    assert np.isfinite(v).all()


@pytest.mark.parametrize("model, binary", [
    (quadratic_model(4), False),
    (huber_model(4, 0.7), False),
    (logistic_model(4), True),
])
def test_single_index_gradients_match_finite_differences(model, binary):
    s = _sample(binary=binary)
    theta = np.array([0.2, -0.4, 0.1, 0.3])
    np.testing.assert_allclose(model.obs_grads(theta, s.y, s.z)[0], _numgrad(model, theta, s.y, s.z), atol=1e-6)


def test_mixture_gradients_match_finite_differences_and_weighted_path():
    rng = np.random.default_rng(2)
    z = gaussian_design(20, 4, rng)
    y = rng.standard_normal(20)
    m = mixture_model((2, 2))
    theta = np.array([0.4, 0.6, 0.9, 1.3, 0.2, -0.3, 0.5, 0.1])
    g = m.obs_grads(theta, y, z)[0]
    np.testing.assert_allclose(g, _numgrad(m, theta, y, z), atol=1e-6)
    w = rng.random(20)
    np.testing.assert_allclose(m.weighted_grad(theta, y, z, w)[0], w @ g, rtol=1e-10, atol=1e-12)


def test_mixture_params_round_trip_and_validation():
    p = MixtureParams([0.25, 0.75], [1.0, 2.0], ([1.0, 2.0], [3.0]))
    q = MixtureParams.from_theta(p.to_theta(), (2, 1))
    np.testing.assert_array_equal(q.to_theta(), p.to_theta())
    with pytest.raises(ValueError):
        MixtureParams([0.5, 0.6], [1.0, 1.0], ([1.0], [1.0]))
    with pytest.raises(ValueError):
        MixtureParams([0.5, 0.5], [1.0, 0.0], ([1.0], [1.0]))


def test_model_validation():
    with pytest.raises(ValueError):
        LossModel("cubic", 3)
    with pytest.raises(ValueError):
        LossModel("quadratic", 3, centering="median")
    with pytest.raises(ValueError):
        mixture_model((2, 2), sigma_bounds=(0.0, 1.0))
    with pytest.raises(ValueError):
        LossModel("generic-nonlinear", 2, lower=[-1, -1], upper=[1, 1])


def test_mixture_box_and_projection():
    m = mixture_model((1, 2))
    assert m.dim == 7 and m.r == 2
    t = m.project(np.array([2.0, -1.0, 5.0, 0.1, 3.0, -3.0, 0.0]))[0]
    assert m.contains(t)
    np.testing.assert_allclose(t[:2], [1.0, 0.0])
    assert m.labels()[4] == "beta_1,1"


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-5, 5)))
def test_simplex_projection_is_the_euclidean_projection(v):
    x = _simplex_project(v[None, :])[0]
    assert x.min() >= 0 and x.sum() == pytest.approx(1.0, abs=1e-12)
    # variational inequality against random simplex points
    w = np.random.default_rng(0).dirichlet(np.ones(v.size), size=20)
    assert np.all((w - x) @ (v - x) <= 1e-9)


@pytest.mark.parametrize("model, binary", [
    (quadratic_model(4, lower=-np.ones(4), upper=np.ones(4)), False),
    (huber_model(4, 0.5), False),
    (logistic_model(4, lower=-np.ones(4), upper=np.ones(4)), True),
])
def test_closed_form_envelopes_satisfy_componentwise_lipschitz(model, binary):
    s = _sample(binary=binary)
    env = build_envelope(model, s)
    if model.kind == "lipschitz-glm" and model.link == "huber":
        # unbounded box: check pairs on a wide box instead
        model = huber_model(4, 0.5, lower=-3 * np.ones(4), upper=3 * np.ones(4))
    rep = verify_condition1(model, env, s, trials=500)
    assert rep.verified, rep


def test_mixture_envelope_satisfies_componentwise_lipschitz():
    rng = np.random.default_rng(3)
    z = gaussian_design(15, 3, rng)
    gen = MixtureRegression(z, MixtureParams([0.5, 0.5], [1.0, 1.0], ([0.2, -0.2], [0.5])))
    s = gen.draw(rng)
    m = mixture_model((2, 1), sigma_bounds=(0.7, 1.5), beta_bound=0.8)
    env = build_envelope(m, s)
    assert verify_condition1(m, env, s, trials=2000).verified
    assert env.K_n == pytest.approx(env.column_norms().max())


def test_grid_envelope_for_generic_loss():
    rng = np.random.default_rng(4)
    z = gaussian_design(12, 2, rng)
    s = SampleSet(rng.random(12), z)
    m = sigmoid_least_squares(2)
    env = build_envelope(m, s, grid_points=24)
    assert verify_condition1(m, env, s, trials=1000).verified


def test_uncentered_quadratic_without_box_has_no_envelope():
    with pytest.raises(EnvelopeError) as info:
        build_envelope(quadratic_model(3), _sample(p=3))
    assert info.value.coordinate == 0


def test_envelope_rejects_inconsistent_K():
    with pytest.raises(ValueError):
        LipschitzEnvelope(np.ones((3, 2)), K_n=2.0)
    with pytest.raises(ValueError):
        LipschitzEnvelope(-np.ones((3, 2)))


def test_envelope_csv_headers(tmp_path):
    env = LipschitzEnvelope(np.arange(6.0).reshape(3, 2))
    path = tmp_path / "psi.csv"
    env.to_csv(path)
    lines = path.read_text(encoding="utf-8").split("\n")
    assert lines[0] == "ψ_1,ψ_2" and len(lines) == 5


def test_expectation_centering_quadratic_closed_form():
    rng = np.random.default_rng(5)
    z = gaussian_design(10, 3, rng)
    theta0 = np.array([1.0, 0.0, -1.0])
    gen = GaussianRegression(z, theta0, 0.5)
    cen = ExpectationCentering(gen, draws=200_000, seed=1)
    theta = np.array([0.5, 0.2, -0.5])
    exact = (z @ (theta0 - theta)) ** 2 + 0.25
    np.testing.assert_allclose(cen.constants(quadratic_model(3), theta, z), exact, rtol=0.02)
    m = quadratic_model(3, centering="expectation")
    s = gen.draw(rng)
    v = eval_centered(m, theta, s.observation(2), 2, cen, z)
    assert v == pytest.approx((s.y[2] - z[2] @ theta) ** 2 - exact[2], abs=0.02)


def test_centered_quadratic_envelope_is_exact_for_linear_increments():
    rng = np.random.default_rng(6)
    z = gaussian_design(10, 3, rng)
    gen = GaussianRegression(z, np.zeros(3))
    cen = ExpectationCentering(gen, draws=20_000, seed=2)
    s = gen.draw(rng)
    m = quadratic_model(3, centering="expectation")
    env = build_envelope(m, s, centering=cen)
    np.testing.assert_allclose(env.psi, 2 * np.abs(s.y - cen.response_mean())[:, None] * np.abs(z))


def test_mixture_comparison_blocks_dominate_linear_predictor_changes():
    rng = np.random.default_rng(7)
    z = gaussian_design(20, 4, rng)
    params = MixtureParams([0.5, 0.5], [1.0, 1.0], ([0.1, 0.2], [-0.1, 0.3]))
    s = MixtureRegression(z, params).draw(rng)
    m = mixture_model((2, 2))
    star = params.to_theta()
    psi, ids = mixture_comparison_blocks(m, s, star)
    np.testing.assert_array_equal(ids, [0, 0, 1, 1])
    for _ in range(50):
        a, b = star.copy(), star.copy()
        a[4:] = rng.uniform(-1, 1, 4)
        b[4:] = rng.uniform(-1, 1, 4)
        lhs = np.abs(m.values(a, s.y, z)[0] - m.values(b, s.y, z)[0])
        d = a[4:] - b[4:]
        rhs = np.abs(psi[:, :2] @ d[:2]) + np.abs(psi[:, 2:] @ d[2:])
        assert np.all(lhs <= rhs + 1e-12)
