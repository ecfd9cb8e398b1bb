import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from residual_landscape.calculus import grad_wv, objective_F
from residual_landscape.errors import DomainError, PreconditionError, ShapeError
from residual_landscape.experiments import scalar_reduction_error
from residual_landscape.landscape import certificate_direction, lemma1_certificate
from residual_landscape.model import Dataset, FeatureMap, Loss, ResidualParams
from residual_landscape.vector import (VectorDataset, VectorLoss, VectorParams, Flin_vec,
                                       gram_inverse, grad_WV_vec, lemma4_certificate,
                                       objective_F_vec, s_min, thm_vec_bound,
                                       vector_certificate_direction)


def problem(g, m=3, d=5, k=4, n=20, family="sum_of_squares"):
    X = g.normal(size=(n, d))
    Y = g.normal(size=(n, m)) if family == "sum_of_squares" else np.eye(m)[g.integers(0, m, n)]
    return FeatureMap.random_features(d, k, g), VectorLoss(family), VectorDataset(X, Y)


def fd(params, fmap, loss, data, h=1e-5):
    x0 = params.flat()
    m, d, k = params.m, params.d, params.k
    f = lambda z: objective_F_vec(VectorParams.from_flat(z, m, d, k), fmap, loss, data)
    return np.array([(f(x0 + h * e) - f(x0 - h * e)) / (2 * h) for e in np.eye(x0.size)])


@pytest.mark.parametrize("family", ["sum_of_squares", "cross_entropy"])
def test_gradient_matches_finite_differences(family, rng):
    fmap, loss, data = problem(rng, family=family)
    for _ in range(3):
        p = VectorParams(rng.normal(size=(3, 5)), rng.normal(size=(5, 4)))
        g = grad_WV_vec(p, fmap, loss, data)
        ref = fd(p, fmap, loss, data)
        assert np.max(np.abs(g - ref)) / (1 + np.max(np.abs(ref))) <= 1e-6


def test_loss_values(rng):
    P = rng.normal(size=(4, 3))
    Y = np.eye(3)[[0, 1, 2, 0]]
    ce = VectorLoss("cross_entropy").value(P, Y)
    ref = -np.log(np.exp(P[np.arange(4), [0, 1, 2, 0]]) / np.exp(P).sum(axis=1))
    assert np.allclose(ce, ref)
    assert VectorLoss().value(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]]))[0] == 2.5
    with pytest.raises(ValueError):
        VectorLoss("hinge")


def test_cross_entropy_needs_probability_targets(rng):
    fmap, _, data = problem(rng)
    p = VectorParams(np.ones((3, 5)), np.zeros((5, 4)))
    with pytest.raises(DomainError):
        objective_F_vec(p, fmap, VectorLoss("cross_entropy"), data)


def test_shape_errors(rng):
    fmap, loss, data = problem(rng)
    with pytest.raises(ShapeError):
        VectorParams(np.ones((3, 5)), np.ones((4, 4)))
    with pytest.raises(ShapeError):
        objective_F_vec(VectorParams(np.ones((2, 5)), np.ones((5, 4))), fmap, loss, data)
    with pytest.raises(ShapeError):
        Flin_vec(np.ones((3, 4)), loss, data)
    with pytest.raises(ShapeError):
        VectorParams.from_flat(np.zeros(3), 1, 1, 1)


def test_s_min_examples(rng):
    assert s_min(np.eye(3)) == pytest.approx(1.0)
    assert s_min(np.diag([3.0, 2.0])) == pytest.approx(2.0)
    assert s_min(np.ones((2, 3))) == pytest.approx(0.0, abs=1e-12)
    assert s_min(np.ones((3, 2))) == 0.0
    for _ in range(20):
        W = rng.normal(size=(3, 5))
        assert s_min(W) == pytest.approx(np.sqrt(np.linalg.eigvalsh(W @ W.T)[0]), abs=1e-10)


def test_comparator_at_itself_gives_zero_gap(rng):
    fmap, loss, data = problem(rng)
    W = rng.normal(size=(3, 5))
    p = VectorParams(W, np.zeros((5, 4)))
    assert objective_F_vec(p, fmap, loss, data) == Flin_vec(W, loss, data)
    c = thm_vec_bound(p, fmap, loss, data, W)
    assert c.rhs == 0.0 and c.passed


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["sum_of_squares", "cross_entropy"]))
def test_bound_and_certificate_hold(seed, family):
    g = np.random.default_rng(seed)
    fmap, loss, data = problem(g, family=family)
    s = g.uniform(0.2, 2.0)
    p = VectorParams(g.normal(size=(3, 5)) * s, g.normal(size=(5, 4)) * s)
    W_star = g.normal(size=(3, 5)) * 2
    assert thm_vec_bound(p, fmap, loss, data, W_star).passed
    assert lemma4_certificate(p, fmap, loss, data, W_star).passed


def test_rank_deficient_W_is_refused(rng):
    fmap, loss, data = problem(rng)
    W = np.ones((3, 5))
    p = VectorParams(W, np.zeros((5, 4)))
    with pytest.raises(PreconditionError):
        thm_vec_bound(p, fmap, loss, data, W)
    with pytest.raises(PreconditionError):
        lemma4_certificate(p, fmap, loss, data, W)


def test_gram_inverse_residual(rng):
    W = rng.normal(size=(3, 6))
    Z = gram_inverse(W)
    assert np.max(np.abs(W @ W.T @ Z - np.eye(3))) <= 1e-10


def test_orthonormal_rows_simplify_the_certificate(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(5, 3)))
    W = Q.T
    V = rng.normal(size=(5, 4))
    W_star = rng.normal(size=(3, 5))
    G = vector_certificate_direction(VectorParams(W, V), W_star)
    assert np.allclose(G[15:], (W.T @ W_star @ V).ravel(), atol=1e-12)


def test_single_output_matches_scalar_pipeline(rng):
    X = rng.normal(size=(15, 4))
    y = rng.normal(size=15)
    fmap = FeatureMap.one_hidden(rng.normal(size=(3, 4)), activation="tanh")
    w, V, w_star = rng.normal(size=4), rng.normal(size=(4, 3)), rng.normal(size=4)
    vp, sp = VectorParams(w[None], V), ResidualParams(w, V)
    vd, sd = VectorDataset(X, y), Dataset(X, y)
    vl, sl = VectorLoss(), Loss("squared")
    assert abs(objective_F_vec(vp, fmap, vl, vd) - objective_F(sp, fmap, sl, sd)) <= 1e-12
    assert np.max(np.abs(grad_WV_vec(vp, fmap, vl, vd) - grad_wv(sp, fmap, sl, sd).flat)) <= 1e-12
    assert np.allclose(vector_certificate_direction(vp, w_star[None]),
                       certificate_direction(sp, w_star), rtol=0, atol=1e-12)
    assert abs(lemma4_certificate(vp, fmap, vl, vd, w_star[None]).lhs
               - lemma1_certificate(sp, fmap, sl, sd, w_star).lhs) <= 1e-12
    assert s_min(w[None]) == pytest.approx(np.linalg.norm(w), rel=1e-14)


def test_single_output_bound_rhs_on_many_instances():
    g = np.random.default_rng(7)
    fmap = FeatureMap.random_features(5, 4, g)
    for _ in range(100):
        assert scalar_reduction_error(g, fmap, g.normal(size=(20, 5))) <= 1e-12


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0, 1))
def test_matrix_linear_objective_is_convex(seed, t):
    g = np.random.default_rng(seed)
    _, loss, data = problem(g, family="cross_entropy")
    A, B = g.normal(size=(3, 5)) * 3, g.normal(size=(3, 5)) * 3
    lhs = Flin_vec(t * A + (1 - t) * B, loss, data)
    assert lhs <= t * Flin_vec(A, loss, data) + (1 - t) * Flin_vec(B, loss, data) + 1e-12


def test_vector_csv(tmp_path, rng):
    X, Y = rng.normal(size=(6, 4)), rng.normal(size=(6, 2))
    rows = ["x1,x2,x3,x4,y1,y2"] + [",".join(repr(float(v)) for v in np.r_[x, y])
                                    for x, y in zip(X, Y)]
    (tmp_path / "v.csv").write_text("\n".join(rows) + "\n")
    data = VectorDataset.from_csv(tmp_path / "v.csv", m=2)
    assert np.array_equal(data.X, X) and np.array_equal(data.Y, Y)
    assert data.m == 2 and data.d == 4 and len(data.samples) == 6
    with pytest.raises(ShapeError):
        VectorDataset.from_csv(tmp_path / "v.csv", m=6)
