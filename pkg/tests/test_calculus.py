import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from conftest import all_losses
from residual_landscape.calculus import (fd_grad, fd_hessian, grad_Flin, grad_wv, hess_wv,
                                         min_eig_sym, minimize_ball, minimize_flin, objective_F,
                                         objective_F_batch, objective_Flin, project_ball,
                                         rel_error, spectral_norm)
from residual_landscape.errors import ContractError, PreconditionError, ShapeError
from residual_landscape.model import Dataset, FeatureMap, Loss, ResidualParams


def random_params(g, d, k, scale=0.7):
    return ResidualParams(g.normal(size=d) * scale, g.normal(size=(d, k)) * scale)


def example1(eps):
    return FeatureMap.scaled(1, eps), Loss("squared"), Dataset(np.array([[1.0]]), np.array([1.0]))


def test_objective_examples():
    fmap, loss, data = example1(0.1)
    assert objective_F(ResidualParams([0.0], [[-10.0]]), fmap, loss, data) == 0.5
    assert objective_F(ResidualParams([1.0], [[0.0]]), fmap, loss, data) == 0.0
    assert objective_Flin([1.0], loss, data) == 0.0
    assert objective_Flin([0.0], loss, data) == 0.5


def test_objective_reduces_to_linear_when_V_is_zero(small_problem, rng):
    fmap, data = small_problem
    for loss in all_losses():
        w = rng.normal(size=3)
        p = ResidualParams(w, np.zeros((3, 4)))
        assert objective_F(p, fmap, loss, data) == pytest.approx(objective_Flin(w, loss, data),
                                                                 rel=1e-14)


def test_shape_mismatch(small_problem):
    fmap, data = small_problem
    with pytest.raises(ShapeError):
        objective_F(ResidualParams.zeros(3, 2), fmap, Loss(), data)
    with pytest.raises(ShapeError):
        objective_Flin(np.zeros(2), Loss(), data)


def test_example1_derivatives():
    eps = 0.1
    fmap, loss, data = example1(eps)
    p = ResidualParams([0.0], [[-1.0 / eps]])
    g = grad_wv(p, fmap, loss, data)
    assert g.norm == 0.0
    h = hess_wv(p, fmap, loss, data)
    assert np.allclose(h.H, [[0.0, -eps], [-eps, 0.0]], atol=1e-15)


@pytest.mark.parametrize("act", ["tanh", "relu", "softplus"])
def test_gradient_and_hessian_match_finite_differences(small_problem, rng, act):
    _, data = small_problem
    fmap = FeatureMap.random_features(3, 4, rng, activation=act, bias_augment=True)
    for loss in all_losses():
        for _ in range(3):
            p = random_params(rng, 3, 5)
            g = grad_wv(p, fmap, loss, data).flat
            assert rel_error(fd_grad(p, fmap, loss, data), g) <= 1e-6
            if loss.family != "smoothed_hinge":
                H = hess_wv(p, fmap, loss, data).H
                assert rel_error(fd_hessian(p, fmap, loss, data), H) <= 1e-5


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 32 - 1),
       st.sampled_from(["squared", "logistic", "smoothed_hinge"]))
def test_hessian_is_symmetric_and_dV_vanishes_at_zero(d, k, seed, family):
    g = np.random.default_rng(seed)
    data = Dataset(g.normal(size=(9, d)), np.sign(g.normal(size=9)))
    fmap = FeatureMap.random_features(d, k, g)
    loss = Loss(family)
    p = random_params(g, d, k)
    H = hess_wv(p, fmap, loss, data).H
    assert np.array_equal(H, H.T)
    zero_w = ResidualParams(np.zeros(d), p.V)
    assert not np.any(grad_wv(zero_w, fmap, loss, data).dV)


def test_hessian_blocks(small_problem, rng):
    fmap, data = small_problem
    h = hess_wv(random_params(rng, 3, 4), fmap, Loss("logistic"), data)
    assert h.ww.shape == (3, 3) and h.wV.shape == (3, 12) and h.VV.shape == (12, 12)


def test_linear_gradient_matches_differences(small_problem, rng):
    _, data = small_problem
    w = rng.normal(size=3)
    for loss in all_losses()[:2]:
        e = 1e-6
        fd = [(objective_Flin(w + e * v, loss, data) - objective_Flin(w - e * v, loss, data))
              / (2 * e) for v in np.eye(3)]
        assert np.allclose(grad_Flin(w, loss, data), fd, atol=1e-8)


def test_batch_objective_matches_scalar(small_problem, rng):
    fmap, data = small_problem
    loss = Loss("logistic")
    ps = [random_params(rng, 3, 4) for _ in range(5)]
    vals = objective_F_batch(np.stack([p.flat() for p in ps]), fmap, loss, data, 3, 4, chunk=2)
    assert np.allclose(vals, [objective_F(p, fmap, loss, data) for p in ps], rtol=1e-14)


def test_fd_rejects_bad_step(small_problem):
    fmap, data = small_problem
    with pytest.raises(ValueError):
        fd_grad(ResidualParams.zeros(3, 4), fmap, Loss(), data, step=0.0)


# -- linear algebra ----------------------------------------------------------

def test_min_eig_sym(rng):
    M = rng.normal(size=(6, 6))
    S = M + M.T
    lam, v = min_eig_sym(S)
    assert lam == pytest.approx(np.linalg.eigvalsh(S)[0])
    assert np.allclose(S @ v, lam * v)
    assert min_eig_sym(np.diag([3.0, -2.0, 1.0]))[0] == -2.0
    with pytest.raises(ContractError):
        min_eig_sym(M)
    with pytest.raises(ContractError):
        min_eig_sym(np.zeros((2, 3)))


def test_spectral_norm():
    assert spectral_norm(np.diag([3.0, -4.0])) == 4.0
    assert spectral_norm(np.zeros((0, 3))) == 0.0


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=6), st.floats(0.1, 10))
def test_project_ball(z, r):
    z = np.array(z)
    p = project_ball(z, r)
    assert np.linalg.norm(p) <= r * (1 + 1e-12)
    if np.linalg.norm(z) <= r:
        assert np.array_equal(p, z)
    else:
        assert np.allclose(p / np.linalg.norm(p), z / np.linalg.norm(z))


# -- convex oracle -----------------------------------------------------------

def slsqp_flin(loss, data, radius):
    res = minimize(lambda w: objective_Flin(w, loss, data), np.zeros(data.d),
                   jac=lambda w: grad_Flin(w, loss, data), method="SLSQP",
                   constraints=[{"type": "ineq", "fun": lambda w: radius ** 2 - w @ w,
                                 "jac": lambda w: -2 * w}],
                   options={"ftol": 1e-14, "maxiter": 1000})
    return res.fun


@pytest.mark.parametrize("radius", [0.3, 1.0, 10.0])
def test_minimize_flin_against_slsqp(small_problem, radius):
    _, data = small_problem
    for loss in all_losses():
        got = minimize_flin(loss, data, radius)
        assert got.converged
        assert np.linalg.norm(got.w) <= radius + 1e-12
        assert got.value <= slsqp_flin(loss, data, radius) + 1e-8


def test_minimize_flin_examples():
    _, loss, data = example1(1.0)
    assert minimize_flin(loss, data, 10.0).value == pytest.approx(0.0, abs=1e-12)
    res = minimize_flin(loss, data, 0.5)
    assert res.w[0] == pytest.approx(0.5) and res.value == pytest.approx(0.125)
    with pytest.raises(PreconditionError):
        minimize_flin(loss, data, 0.0)


def test_minimize_ball_quadratic():
    c = np.array([3.0, 4.0])
    res = minimize_ball(lambda x: 0.5 * np.sum((x - c) ** 2), lambda x: x - c,
                        np.zeros(2), 1.0, 1.0)
    assert np.allclose(res.w, c / 5.0)


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0, 1))
def test_flin_is_convex_along_segments(seed, t):
    g = np.random.default_rng(seed)
    data = Dataset(g.normal(size=(10, 3)), np.sign(g.normal(size=10)))
    a, b = g.normal(size=3) * 3, g.normal(size=3) * 3
    for loss in all_losses():
        lhs = objective_Flin(t * a + (1 - t) * b, loss, data)
        rhs = t * objective_Flin(a, loss, data) + (1 - t) * objective_Flin(b, loss, data)
        assert lhs <= rhs + 1e-12 * (1 + abs(rhs))
