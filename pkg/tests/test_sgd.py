import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from residual_landscape.calculus import minimize_flin
from residual_landscape.errors import ShapeError
from residual_landscape.instances import synthetic_dataset, trial_rng
from residual_landscape.model import Dataset, FeatureMap, Loss
from residual_landscape.sgd import (AlternatingLinearSequence, ProductDomain, QuadraticSequence,
                                    SkipParams, comparator_regret, domain_constants,
                                    induced_sequence, ogd_regret_check, ogd_run, project_product,
                                    sgd_run, skip_objective, skip_predict, thm5_check)


@pytest.fixture
def linear_data():
    return synthetic_dataset(trial_rng(3, 0), 128, 4, "linear")


def test_skip_predict_examples(rng):
    x = rng.normal(size=3)
    fmap = FeatureMap.random_features(3, 2, rng)
    w = rng.normal(size=3)
    assert skip_predict(SkipParams(w, np.zeros(2)), fmap, x) == pytest.approx(w @ x, rel=1e-15)
    assert skip_predict(SkipParams(np.zeros(3), np.ones(2)), FeatureMap.zero(3, 2), x) == 0.0
    assert skip_predict(SkipParams([2.0], [3.0]), FeatureMap.scaled(1, 0.5), [4.0]) == 14.0
    with pytest.raises(ShapeError):
        skip_predict(SkipParams(w, np.zeros(3)), fmap, x)


def test_product_domain_validation():
    with pytest.raises(ValueError):
        ProductDomain(0.0, 1.0, 1.0, 1.0)


def test_projection_examples():
    dom = ProductDomain(1.0, 2.0, 1.0, 1.0)
    inside = SkipParams([0.3], [0.4], [1.0])
    out = project_product(inside, dom)
    assert np.array_equal(out.u, inside.u) and np.array_equal(out.theta, inside.theta)
    far = SkipParams([1.2], [1.6], [0.0, 4.0])
    out = project_product(far, dom)
    assert np.allclose(out.u, [0.6, 0.8]) and np.allclose(out.theta, [0.0, 2.0])


def bisection_projection(z, radius):
    # nearest point of the ball: z / (1 + m) with the multiplier m found by bisection
    if np.linalg.norm(z) <= radius:
        return z
    lo, hi = 0.0, 1.0
    while np.linalg.norm(z) / (1 + hi) > radius:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(z) / (1 + mid) > radius:
            lo = mid
        else:
            hi = mid
    return z / (1 + hi)


@settings(max_examples=100)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 5), st.floats(0.1, 5))
def test_projection_is_nearest_point(seed, b, rho):
    g = np.random.default_rng(seed)
    p = SkipParams(g.normal(size=3) * 3, g.normal(size=2) * 3, g.normal(size=4) * 3)
    out = project_product(p, ProductDomain(b, rho, 1.0, 1.0))
    assert np.allclose(out.u, bisection_projection(p.u, b), atol=1e-12)
    assert np.allclose(out.theta, bisection_projection(p.theta, rho), atol=1e-12)


@pytest.mark.parametrize("family", ["squared", "logistic", "smoothed_hinge"])
def test_domain_constants_bound_slopes_and_values(family, rng):
    loss = Loss(family, 0.5)
    gen = "linear" if family == "squared" else "classification"
    data = synthetic_dataset(rng, 64, 3, gen)
    fmap = FeatureMap.random_features(3, 4, rng)
    dom = domain_constants(loss, data, fmap, b=2.0)
    Z = np.concatenate([data.X, fmap(data.X)], axis=1)
    for _ in range(200):
        u = rng.normal(size=7)
        u *= 2.0 * rng.uniform() / np.linalg.norm(u)
        p = Z @ u
        assert np.all(np.abs(loss.d1(p, data.y)) * np.linalg.norm(Z, axis=1) <= dom.l + 1e-12)
        assert np.all(loss.value(p, data.y) <= dom.r_loss + 1e-12)


def test_zero_step_keeps_the_initializer(linear_data):
    fmap = FeatureMap.zero(4, 2)
    dom = domain_constants(Loss(), linear_data, fmap, b=2.0)
    init = SkipParams(np.full(4, 0.1), np.zeros(2))
    tr = sgd_run(dom, fmap, Loss(), linear_data, T=50, eta=0.0, seed=1, eval_every=5,
                 init=init)
    for u, _ in tr.iterates.values():
        assert np.array_equal(u, init.u)
    assert np.all(tr.wv_norm == np.linalg.norm(init.u))
    assert np.array_equal(tr.final.u, init.u)


def test_sgd_rejects_bad_arguments(linear_data):
    fmap = FeatureMap.zero(4, 2)
    dom = domain_constants(Loss(), linear_data, fmap, b=2.0)
    with pytest.raises(ValueError):
        sgd_run(dom, fmap, Loss(), linear_data, T=0)
    with pytest.raises(ValueError):
        sgd_run(dom, fmap, Loss(), linear_data, T=5, eta=-1.0)


def test_sgd_is_deterministic(linear_data, rng):
    fmap = FeatureMap.one_hidden(rng.normal(size=(3, 4)) * 0.3, activation="relu")
    dom = domain_constants(Loss(), linear_data, fmap, b=2.0, rho_theta=2.0)
    a = sgd_run(dom, fmap, Loss(), linear_data, T=500, seed=9)
    b = sgd_run(dom, fmap, Loss(), linear_data, T=500, seed=9)
    c = sgd_run(dom, fmap, Loss(), linear_data, T=500, seed=10)
    assert np.array_equal(a.sample_loss, b.sample_loss) and a.F_full == b.F_full
    assert np.array_equal(a.final.theta, b.final.theta)
    assert not np.array_equal(a.indices, c.indices)


def test_iterates_stay_in_the_domain(linear_data, rng):
    fmap = FeatureMap.one_hidden(rng.normal(size=(3, 4)), activation="softplus")
    dom = domain_constants(Loss(), linear_data, fmap, b=0.5, rho_theta=1.0)
    tr = sgd_run(dom, fmap, Loss(), linear_data, T=2000, seed=2, eta=0.05)
    assert np.max(tr.wv_norm) <= dom.b + 1e-12
    assert tr.theta_norm_max <= dom.rho_theta + 1e-12
    for u, th in tr.iterates.values():
        assert np.linalg.norm(u) <= dom.b + 1e-12 and np.linalg.norm(th) <= 1.0 + 1e-12


def test_evaluation_schedule(linear_data):
    fmap = FeatureMap.zero(4, 1)
    dom = domain_constants(Loss(), linear_data, fmap, b=2.0)
    tr = sgd_run(dom, fmap, Loss(), linear_data, T=2500, seed=0)
    assert tr.eval_steps[:3] == [1, 3, 5] and tr.eval_steps[-1] == 2500
    u, th = tr.iterates[2500]
    assert tr.F_full[-1] == skip_objective(u, th, fmap, Loss(), linear_data)


def test_trace_csv(tmp_path, linear_data):
    fmap = FeatureMap.zero(4, 1)
    dom = domain_constants(Loss(), linear_data, fmap, b=2.0)
    tr = sgd_run(dom, fmap, Loss(), linear_data, T=20, seed=0, eval_every=10)
    tr.write_csv(tmp_path / "t.csv")
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "sample_loss", "wv_norm", "F_full"]
    assert len(rows) == 21 and rows[2][3] == "" and rows[11][3] != "" and rows[20][3] != ""


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts():
    data = Dataset(np.array([[1e200]]), np.array([1e200]))
    fmap = FeatureMap.zero(1, 1)
    dom = ProductDomain(1e300, 1.0, 1.0, 1.0)
    with pytest.raises(FloatingPointError, match="non-finite"):
        sgd_run(dom, fmap, Loss(), data, T=5, eta=1.0, seed=0)


@pytest.mark.parametrize("family", ["zero", "random_features", "one_hidden"])
def test_sgd_iterates_equal_ogd_on_induced_sequence(family, linear_data, rng):
    if family == "zero":
        fmap = FeatureMap.zero(4, 3)
    elif family == "random_features":
        fmap = FeatureMap.random_features(4, 3, rng)
    else:
        fmap = FeatureMap.one_hidden(rng.normal(size=(3, 4)), activation="relu")
    loss = Loss("logistic") if family == "zero" else Loss()
    data = linear_data if family != "zero" else Dataset(linear_data.X, np.sign(linear_data.y))
    dom = domain_constants(loss, data, fmap, b=1.0)
    tr = sgd_run(dom, fmap, loss, data, T=100, seed=4, eval_every=1, record_features=True)
    xs = ogd_run(induced_sequence(tr, data, loss), dom.b, tr.eta)
    for t in range(1, 101):
        assert np.array_equal(xs[t - 1], tr.iterates[t][0])
    assert np.array_equal(xs[-1], tr.final.u)


def test_induced_sequence_needs_features(linear_data):
    fmap = FeatureMap.zero(4, 1)
    dom = domain_constants(Loss(), linear_data, fmap, b=1.0)
    tr = sgd_run(dom, fmap, Loss(), linear_data, T=5, seed=0)
    with pytest.raises(ValueError):
        induced_sequence(tr, linear_data, Loss())


# -- online gradient descent ---------------------------------------------------

@pytest.mark.parametrize("T", [1, 100, 1000])
def test_regret_on_constant_quadratic(T):
    seq = QuadraticSequence([0.6, -0.3, 2.0], a=1.5, T=T)
    b = 1.0
    led = ogd_regret_check(seq, b, seq.lipschitz(b))
    assert led.passed and led.average_regret >= -1e-12
    assert led.average_regret <= 0.5 * led.bound + 1e-12
    if T == 1000:
        xs = ogd_run(seq, b, led.eta)
        assert np.linalg.norm(xs[-1] - led.comparator) < 0.05


@pytest.mark.parametrize("T", [1, 2, 101, 1000])
def test_regret_on_alternating_linear(T):
    seq = AlternatingLinearSequence(2.0, 3, T)
    led = ogd_regret_check(seq, 1.5, 2.0)
    assert led.passed
    assert led.bound == pytest.approx(2 * 1.5 * 2.0 / np.sqrt(T))


def test_regret_to_check():
    led = ogd_regret_check(AlternatingLinearSequence(1.0, 1, 10), 1.0, 1.0)
    c = led.to_check()
    assert c.passed == led.passed and c.lhs == led.bound and c.context["T"] == 10


def test_comparator_regret_holds_per_run(linear_data, rng):
    fmap = FeatureMap.random_features(4, 3, rng)
    loss = Loss()
    dom = domain_constants(loss, linear_data, fmap, b=1.5)
    tr = sgd_run(dom, fmap, loss, linear_data, T=3000, seed=5)
    bound = 2 * dom.b * dom.l / np.sqrt(tr.T)
    for _ in range(10):
        u = rng.normal(size=4)
        u *= dom.b * rng.uniform() / np.linalg.norm(u)
        assert comparator_regret(tr, linear_data, loss, u) <= bound


# -- competitiveness with the best linear predictor ---------------------------

def test_zero_map_matches_linear_problem(linear_data):
    fmap = FeatureMap.zero(4, 2)
    loss = Loss()
    dom = domain_constants(loss, linear_data, fmap, b=2.0)
    tr = sgd_run(dom, fmap, loss, linear_data, T=4000, seed=0)
    flin = minimize_flin(loss, linear_data, dom.b).value
    assert tr.F_full[-1] - flin <= dom.b * dom.l / np.sqrt(tr.T)
    c = thm5_check(tr, loss, linear_data, dom)
    assert c.passed and c.rhs == tr.min_F and c.context["C"] == 5.0


def test_nonlinear_target_may_beat_linear():
    rng = trial_rng(1, 0)
    data = synthetic_dataset(rng, 256, 2, "nonlinear")
    fmap = FeatureMap.random_features(2, 30, rng, scale=2.0)
    loss = Loss()
    dom = domain_constants(loss, data, fmap, b=4.0)
    tr = sgd_run(dom, fmap, loss, data, T=20000, seed=0, eta=0.02)
    c = thm5_check(tr, loss, data, dom)
    assert c.passed
    assert c.context["beats_linear"] == (tr.min_F < c.context["min_Flin"])


def test_margin_shrinks_with_T(linear_data):
    fmap = FeatureMap.zero(4, 2)
    loss = Loss()
    dom = domain_constants(loss, linear_data, fmap, b=2.0)
    margins = [thm5_check(sgd_run(dom, fmap, loss, linear_data, T=T, seed=0),
                          loss, linear_data, dom).margin for T in (1000, 10000, 100000)]
    assert margins[0] >= margins[1] >= margins[2] > 0
