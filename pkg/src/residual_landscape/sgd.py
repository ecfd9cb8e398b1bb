"""Projected SGD for the skip-to-output predictor  x -> w^T x + v^T f_theta(x),
and projected online gradient descent on the induced convex sequence.

The (w, v) block is always handled as one concatenated vector ``u`` and the
prediction is ``u . (x, f(x))``. The same arithmetic is used by the online
learner, so SGD iterates and OGD iterates on the induced sequence coincide
bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calculus import minimize_flin, project_ball
from .errors import ShapeError
from .model import Dataset, FeatureMap, Loss, _activate, _activate_slope, tree_mean
from .reporting import BoundCheck, write_rows


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based 64-bit generator (Philox-4x64) used for every random draw."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True, eq=False)
class SkipParams:
    w: np.ndarray
    v: np.ndarray
    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("w", "v", "theta"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name),
                                                                    dtype=float)))

    @property
    def u(self) -> np.ndarray:
        return np.concatenate([self.w, self.v])

    @classmethod
    def from_u(cls, u, d: int, theta=None) -> "SkipParams":
        u = np.asarray(u, dtype=float)
        return cls(u[:d], u[d:], np.zeros(0) if theta is None else theta)


def skip_features(fmap: FeatureMap, x, theta=None) -> np.ndarray:
    """(x, f_theta(x)) for one input or a batch."""
    m = fmap if theta is None or not fmap.trainable else fmap.with_theta(theta)
    x = np.asarray(x, dtype=float)
    return np.concatenate([x, m(x)], axis=-1)


def skip_predict(p: SkipParams, fmap: FeatureMap, x) -> float:
    if p.w.size != fmap.d or p.v.size != fmap.out_dim:
        raise ShapeError("parameter dimensions do not match the feature map")
    z = skip_features(fmap, x, p.theta if p.theta.size else None)
    return float(p.u @ z)


def skip_objective(u, theta, fmap: FeatureMap, loss: Loss, data: Dataset) -> float:
    Z = skip_features(fmap, data.X, theta if np.size(theta) else None)
    return float(tree_mean(loss.value(Z @ np.asarray(u, dtype=float), data.y)))


# ---------------------------------------------------------------------------
# Domain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProductDomain:
    """M1 x M2: the ball ||(w, v)|| <= b times the ball ||theta|| <= rho_theta,
    with the loss Lipschitz constant ``l`` in (w, v) and uniform bound ``r_loss``."""

    b: float
    rho_theta: float
    l: float
    r_loss: float

    def __post_init__(self):
        if not all(x > 0 for x in (self.b, self.rho_theta, self.l, self.r_loss)):
            raise ValueError("b, rho_theta, l and r_loss must be positive")


def domain_constants(loss: Loss, data: Dataset, fmap: FeatureMap, b: float,
                     rho_theta: float = 1.0) -> ProductDomain:
    """Lipschitz constant and loss bound from a scan of the data bounds
    X = max ||x||, Y = max |y| and a bound on ||f(x)|| over the domain."""
    x_max = float(np.max(np.linalg.norm(data.X, axis=1)))
    y_max = float(np.max(np.abs(data.y)))
    if fmap.trainable:
        phi = fmap.feature_bound(x_max, rho_theta)
    else:
        phi = float(np.max(np.linalg.norm(fmap(data.X), axis=1)))
    s = x_max + phi
    p_max = b * s
    if loss.family == "squared":
        l, r = (p_max + y_max) * s, 0.5 * (p_max + y_max) ** 2
    elif loss.family == "logistic":
        l, r = y_max * s, float(np.logaddexp(0.0, p_max * y_max))
    else:
        l, r = y_max * s, 1.0 + p_max * y_max - 0.5 * loss.width
    return ProductDomain(float(b), float(rho_theta), float(max(l, 1e-12)),
                         float(max(r, 1e-12)))


def project_product(point: SkipParams, dom: ProductDomain) -> SkipParams:
    """Separate Euclidean projections of (w, v) and theta onto their balls."""
    u = project_ball(point.u, dom.b)
    theta = project_ball(point.theta, dom.rho_theta) if point.theta.size else point.theta
    return SkipParams.from_u(u, point.w.size, theta)


def ogd_step(x, g, eta: float, radius: float) -> np.ndarray:
    return project_ball(x - eta * g, radius)


# ---------------------------------------------------------------------------
# SGD
# ---------------------------------------------------------------------------

@dataclass
class SgdTrace:
    T: int
    eta: float
    seed: int
    d: int
    indices: np.ndarray
    sample_loss: np.ndarray
    wv_norm: np.ndarray
    eval_steps: list
    F_full: list
    iterates: dict
    final: SkipParams
    features: np.ndarray | None = None     # rows (x_t, f_theta_t(x_t)) when recorded
    theta_norm_max: float = 0.0

    def rows(self):
        full = dict(zip(self.eval_steps, self.F_full))
        for t in range(1, self.T + 1):
            yield (t, float(self.sample_loss[t - 1]), float(self.wv_norm[t - 1]), full.get(t))

    def write_csv(self, path) -> None:
        write_rows(path, ["t", "sample_loss", "wv_norm", "F_full"], self.rows())

    @property
    def min_F(self) -> float:
        return float(min(self.F_full))


def sgd_run(dom: ProductDomain, fmap: FeatureMap, loss: Loss, data: Dataset, T: int,
            eta: float | None = None, seed: int = 0, eval_every: int | None = None,
            init: SkipParams | None = None, record_features: bool = False) -> SgdTrace:
    """Projected SGD over M1 x M2 with samples drawn uniformly with replacement.

    Defaults: eta = b / (l sqrt(T)), start at (w, v) = 0 with the map's own
    theta, full objective every max(1, T // 1000) steps plus the last iterate.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if eta is None:
        eta = dom.b / (dom.l * np.sqrt(T))
    if eta < 0:
        raise ValueError("eta must be non-negative")
    if eval_every is None:
        eval_every = max(1, T // 1000)
    d, K = data.d, fmap.out_dim
    if init is None:
        init = SkipParams(np.zeros(d), np.zeros(K), fmap.theta())
    start = project_product(init, dom)
    u = start.u
    theta = start.theta.copy()
    trainable = fmap.trainable
    k = fmap.k
    X, Y = data.X, data.y
    Zall = None if trainable else np.concatenate([X, fmap(X)], axis=1)
    rng = make_rng(seed)
    idx = rng.integers(0, data.n, size=T)

    sample_loss = np.empty(T)
    wv_norm = np.empty(T)
    feats = np.empty((T, d + K)) if record_features else None
    eval_set = set(range(1, T + 1, eval_every)) | {T}
    eval_steps, F_full, iterates = [], [], {}
    theta_max = float(np.linalg.norm(theta)) if theta.size else 0.0
    act = fmap.activation
    bias = np.ones(1) if fmap.bias_augment else np.zeros(0)

    for t in range(1, T + 1):
        i = idx[t - 1]
        x, y = X[i], Y[i]
        if trainable:
            A = theta[:k * d].reshape(k, d)
            c = theta[k * d:]
            pre = A @ x + c
            z = np.concatenate([x, _activate(pre, act), bias])
        else:
            z = Zall[i]
        if record_features:
            feats[t - 1] = z
        if t in eval_set:
            eval_steps.append(t)
            F_full.append(skip_objective(u, theta, fmap, loss, data))
            iterates[t] = (u.copy(), theta.copy())
        p = u @ z
        val = loss.value(p, y)
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite loss at step {t}: p={p!r}, y={y!r}")
        sample_loss[t - 1] = val
        wv_norm[t - 1] = np.linalg.norm(u)
        g = loss.d1(p, y)
        if trainable:
            gt = g * u[d:d + k] * _activate_slope(pre, act)
            theta_grad = np.concatenate([np.outer(gt, x).ravel(), gt])
            theta = project_ball(theta - eta * theta_grad, dom.rho_theta)
            theta_max = max(theta_max, float(np.linalg.norm(theta)))
        u = ogd_step(u, g * z, eta, dom.b)

    final = SkipParams.from_u(u, d, theta)
    return SgdTrace(T, float(eta), seed, d, idx, sample_loss, wv_norm, eval_steps, F_full,
                    iterates, final, feats, theta_max)


# ---------------------------------------------------------------------------
# Online gradient descent
# ---------------------------------------------------------------------------

class QuadraticSequence:
    """T copies of g(x) = (a/2) ||x - center||^2."""

    def __init__(self, center, a: float, T: int):
        self.center = np.asarray(center, dtype=float)
        self.a = float(a)
        self.T = int(T)
        self.dim = self.center.size

    def __len__(self):
        return self.T

    def value(self, t, x):
        return 0.5 * self.a * float(np.sum((x - self.center) ** 2))

    def grad(self, t, x):
        return self.a * (x - self.center)

    def lipschitz(self, radius):
        return self.a * (radius + float(np.linalg.norm(self.center)))

    def best_fixed(self, radius):
        x = project_ball(self.center, radius)
        return x, self.value(0, x)


class AlternatingLinearSequence:
    """g_t(x) = +l x_1 for odd t and -l x_1 for even t (t = 1, 2, ...)."""

    def __init__(self, l: float, dim: int, T: int):
        self.l, self.dim, self.T = float(l), int(dim), int(T)

    def __len__(self):
        return self.T

    def _sign(self, t):
        return 1.0 if t % 2 == 1 else -1.0

    def value(self, t, x):
        return self._sign(t) * self.l * float(x[0])

    def grad(self, t, x):
        g = np.zeros(self.dim)
        g[0] = self._sign(t) * self.l
        return g

    def lipschitz(self, radius):
        return self.l

    def best_fixed(self, radius):
        total = sum(self._sign(t) for t in range(1, self.T + 1))
        x = np.zeros(self.dim)
        if total:
            x[0] = -np.sign(total) * radius
        return x, total * self.l * float(x[0]) / self.T


class LinearPredictorSequence:
    """g_t(u) = l(u . z_t; y_t) for recorded features z_t."""

    def __init__(self, Z, y, loss: Loss):
        self.Z = np.asarray(Z, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.loss = loss
        self.T, self.dim = self.Z.shape

    def __len__(self):
        return self.T

    def value(self, t, u):
        return float(self.loss.value(u @ self.Z[t - 1], self.y[t - 1]))

    def grad(self, t, u):
        z = self.Z[t - 1]
        return self.loss.d1(u @ z, self.y[t - 1]) * z

    def best_fixed(self, radius):
        res = minimize_flin(self.loss, Dataset(self.Z, self.y), radius)
        return res.w, res.value


def induced_sequence(trace: SgdTrace, data: Dataset, loss: Loss) -> LinearPredictorSequence:
    if trace.features is None:
        raise ValueError("trace was run without record_features=True")
    return LinearPredictorSequence(trace.features, data.y[trace.indices], loss)


def ogd_run(seq, radius: float, eta: float, x1=None) -> np.ndarray:
    """Iterates x_1..x_{T+1} of projected online gradient descent."""
    x = np.zeros(seq.dim) if x1 is None else project_ball(x1, radius)
    out = np.empty((len(seq) + 1, seq.dim))
    out[0] = x
    for t in range(1, len(seq) + 1):
        x = ogd_step(x, seq.grad(t, x), eta, radius)
        out[t] = x
    return out


@dataclass(frozen=True)
class RegretLedger:
    T: int
    cumulative: float
    comparator: np.ndarray
    comparator_value: float
    average_regret: float
    bound: float
    eta: float

    @property
    def passed(self) -> bool:
        return self.average_regret <= self.bound

    def to_check(self, name="ogd_average_regret", **ctx) -> BoundCheck:
        return BoundCheck.make(name, self.bound, self.average_regret,
                               dict(T=self.T, eta=self.eta, cumulative=self.cumulative,
                                    comparator_value=self.comparator_value, **ctx))


def ogd_regret_check(seq, radius: float, lipschitz: float, eta: float | None = None,
                     x1=None) -> RegretLedger:
    """Average regret of OGD against the best fixed point in the ball, with the
    bound 2 b l / sqrt(T). The default step is b / (l sqrt(T)) from x_1 = 0."""
    T = len(seq)
    if eta is None:
        eta = radius / (lipschitz * np.sqrt(T))
    xs = ogd_run(seq, radius, eta, x1)
    cumulative = float(sum(seq.value(t, xs[t - 1]) for t in range(1, T + 1)))
    comp, comp_avg = seq.best_fixed(radius)
    avg = cumulative / T - comp_avg
    return RegretLedger(T, cumulative, comp, float(comp_avg), float(avg),
                        2.0 * radius * lipschitz / np.sqrt(T), float(eta))


def comparator_regret(trace: SgdTrace, data: Dataset, loss: Loss, w) -> float:
    """(1/T) sum_t [h_t(iterate) - l(w . x_t; y_t)] for a fixed linear predictor w."""
    w = np.asarray(w, dtype=float)
    p = data.X[trace.indices] @ w
    ref = loss.value(p, data.y[trace.indices])
    return float(np.sum(trace.sample_loss) - np.sum(ref)) / trace.T


def thm5_check(trace: SgdTrace, loss: Loss, data: Dataset, dom: ProductDomain,
               delta: float = 0.01, C: float = 5.0) -> BoundCheck:
    """min_t F(iterate_t) <= min_{||u|| <= b} F_lin(u)
    + C (b l + r sqrt(log(1/delta))) / sqrt(T); stored as lhs = bound, rhs = min F."""
    flin = minimize_flin(loss, data, dom.b)
    scale = (dom.b * dom.l + dom.r_loss * np.sqrt(np.log(1.0 / delta))) / np.sqrt(trace.T)
    bound = flin.value + C * scale
    min_F = trace.min_F
    ctx = {"min_F": min_F, "min_Flin": flin.value, "Flin_converged": flin.converged,
           "C": C, "delta": delta, "T": trace.T, "seed": trace.seed, "b": dom.b, "l": dom.l,
           "r_loss": dom.r_loss, "eta": trace.eta,
           "C_needed": max(0.0, (min_F - flin.value) / scale),
           "beats_linear": min_F < flin.value}
    return BoundCheck.make("thm5_sgd_competitive", bound, min_F, ctx)
