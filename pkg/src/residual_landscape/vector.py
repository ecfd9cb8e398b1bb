"""Vector-valued outputs: F(W, V, theta) = E[l(W (x + V f(x)); y)] with W of shape (m, d).

Flattened order is W row-major, then V row-major.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import log_softmax, softmax

from .calculus import spectral_norm
from .errors import DomainError, PreconditionError, ShapeError
from .model import FeatureMap, _freeze, tree_mean
from .reporting import BoundCheck

VECTOR_LOSSES = ("sum_of_squares", "cross_entropy")


class VectorSample(NamedTuple):
    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True, eq=False)
class VectorDataset:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0] or X.shape[0] == 0:
            raise ShapeError("need X of shape (n, d) and Y of shape (n, m) with n >= 1")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DomainError("dataset contains non-finite values")
        object.__setattr__(self, "X", _freeze(X))
        object.__setattr__(self, "Y", _freeze(Y))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    @property
    def samples(self) -> list[VectorSample]:
        return [VectorSample(x, y) for x, y in zip(self.X, self.Y)]

    @classmethod
    def from_csv(cls, path, m: int) -> "VectorDataset":
        """Columns x1..xd, y1..ym with a header row; m is declared by the caller."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        if m < 1 or len(header) <= m:
            raise ShapeError(f"cannot split {len(header)} columns into d >= 1 inputs and m={m} outputs")
        return cls(body[:, :-m], body[:, -m:])


@dataclass(frozen=True)
class VectorLoss:
    """sum_of_squares: 0.5 ||p - y||^2;  cross_entropy: -sum_i y_i log softmax(p)_i."""

    family: str = "sum_of_squares"

    def __post_init__(self):
        if self.family not in VECTOR_LOSSES:
            raise ValueError(f"unknown vector loss {self.family!r}")

    def value(self, P, Y):
        if self.family == "sum_of_squares":
            return 0.5 * np.sum((P - Y) ** 2, axis=-1)
        return -np.sum(Y * log_softmax(P, axis=-1), axis=-1)

    def grad(self, P, Y):
        """Derivative in the prediction, row by row."""
        if self.family == "sum_of_squares":
            return P - Y
        return softmax(P, axis=-1) * np.sum(Y, axis=-1, keepdims=True) - Y


@dataclass(frozen=True, eq=False)
class VectorParams:
    W: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if W.shape[1] != V.shape[0]:
            raise ShapeError(f"W is {W.shape} but V is {V.shape}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "V", V)

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def k(self) -> int:
        return self.V.shape[1]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.V.ravel()])

    @classmethod
    def from_flat(cls, flat, m: int, d: int, k: int) -> "VectorParams":
        flat = np.asarray(flat, dtype=float)
        if flat.size != m * d + d * k:
            raise ShapeError("flat vector has the wrong length")
        return cls(flat[:m * d].reshape(m, d), flat[m * d:].reshape(d, k))


def _validate(params: VectorParams, fmap: FeatureMap, loss: VectorLoss, data: VectorDataset):
    if params.d != data.d or fmap.d != data.d or params.k != fmap.out_dim or params.m != data.m:
        raise ShapeError("dimensions of W, V, feature map and data do not agree")
    if loss.family == "cross_entropy":
        Y = data.Y
        if np.any(Y < 0) or np.any(np.abs(Y.sum(axis=1) - 1.0) > 1e-12):
            raise DomainError("cross-entropy needs one-hot (probability) targets")


def _forward_vec(params, fmap, data):
    F = fmap(data.X)
    Z = data.X + F @ params.V.T
    return F, Z, Z @ params.W.T


def objective_F_vec(params: VectorParams, fmap: FeatureMap, loss: VectorLoss,
                    data: VectorDataset) -> float:
    _validate(params, fmap, loss, data)
    _, _, P = _forward_vec(params, fmap, data)
    return float(tree_mean(loss.value(P, data.Y)))


def grad_WV_vec(params: VectorParams, fmap: FeatureMap, loss: VectorLoss,
                data: VectorDataset) -> np.ndarray:
    """Flat gradient (dW row-major, then dV row-major).

    dW = E[d (x + V f)^T],  dV = W^T E[d f^T]  with d the loss slope in p.
    """
    _validate(params, fmap, loss, data)
    F, Z, P = _forward_vec(params, fmap, data)
    D = loss.grad(P, data.Y)
    dW = tree_mean(np.einsum("si,sj->sij", D, Z))
    dV = params.W.T @ tree_mean(np.einsum("si,sj->sij", D, F))
    return np.concatenate([dW.ravel(), dV.ravel()])


def Flin_vec(W, loss: VectorLoss, data: VectorDataset) -> float:
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape != (data.m, data.d):
        raise ShapeError(f"W must be {(data.m, data.d)}")
    return float(tree_mean(loss.value(data.X @ W.T, data.Y)))


def s_min(W) -> float:
    """Smallest singular value; 0 for rank-deficient (wide) W."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    s = np.linalg.svd(W, compute_uv=False)
    if W.shape[0] > W.shape[1]:
        return 0.0
    return float(s[-1])


def thm_vec_denominator(params: VectorParams, W_star) -> float:
    W_star = np.atleast_2d(np.asarray(W_star, dtype=float))
    s = s_min(params.W)
    return float(np.sqrt(2 * np.sum(params.W ** 2)
                         + np.sum(W_star ** 2) * (2 + spectral_norm(params.V) ** 2 / s ** 2)))


def thm_vec_bound(params: VectorParams, fmap: FeatureMap, loss: VectorLoss, data: VectorDataset,
                  W_star, **ctx) -> BoundCheck:
    """||grad F|| >= (F - F_lin(W*)) / sqrt(2||W||_F^2 + ||W*||_F^2 (2 + ||V||^2 / s_min(W)^2))."""
    s = s_min(params.W)
    if s <= 1e-10:
        raise PreconditionError(f"W is (numerically) rank deficient: s_min = {s:.3g}")
    W_star = np.atleast_2d(np.asarray(W_star, dtype=float))
    gap = objective_F_vec(params, fmap, loss, data) - Flin_vec(W_star, loss, data)
    lhs = float(np.linalg.norm(grad_WV_vec(params, fmap, loss, data)))
    return BoundCheck.make("vector_gradient_lower_bound", lhs,
                           gap / thm_vec_denominator(params, W_star),
                           dict(s_min=s, gap=gap, m=params.m, **ctx))


def gram_inverse(W, atol: float = 1e-10) -> np.ndarray:
    """(W W^T)^{-1} by solving W W^T Z = I; the residual is asserted."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    gram = W @ W.T
    eye = np.eye(W.shape[0])
    try:
        Z = np.linalg.solve(gram, eye)
    except np.linalg.LinAlgError as exc:
        raise PreconditionError("W W^T is singular") from exc
    resid = float(np.max(np.abs(gram @ Z - eye)))
    if not resid <= atol:
        raise PreconditionError(f"W W^T is too ill-conditioned: residual {resid:.3g}")
    return Z


def vector_certificate_direction(params: VectorParams, W_star) -> np.ndarray:
    """Flattened (W - W*, W^T (W W^T)^{-1} W* V)."""
    W_star = np.atleast_2d(np.asarray(W_star, dtype=float))
    if W_star.shape != params.W.shape:
        raise ShapeError("comparator must have the shape of W")
    second = params.W.T @ gram_inverse(params.W) @ W_star @ params.V
    return np.concatenate([(params.W - W_star).ravel(), second.ravel()])


def lemma4_certificate(params: VectorParams, fmap: FeatureMap, loss: VectorLoss,
                       data: VectorDataset, W_star, **ctx) -> BoundCheck:
    """<vec G, grad F> >= F - F_lin(W*)."""
    G = vector_certificate_direction(params, W_star)
    lhs = float(G @ grad_WV_vec(params, fmap, loss, data))
    gap = objective_F_vec(params, fmap, loss, data) - Flin_vec(W_star, loss, data)
    return BoundCheck.make("vector_inner_product", lhs, gap,
                           dict(condition=float(np.linalg.cond(params.W @ params.W.T)), **ctx))
