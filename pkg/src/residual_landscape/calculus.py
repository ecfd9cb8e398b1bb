"""Objective, exact derivatives in (w, V), and numerical utilities.

Coordinates are the flattened ``(w, vec(V))`` with V row-major, as in
:meth:`ResidualParams.flat`. The derivatives in theta are never needed here.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import ContractError, PreconditionError, ShapeError
from .model import Dataset, FeatureMap, Loss, ResidualParams, tree_mean, tree_sum

GRAD_STEP = 1e-5
HESS_STEP = 1e-4


def _check(params: ResidualParams, fmap: FeatureMap, data: Dataset):
    if params.d != data.d or fmap.d != data.d:
        raise ShapeError(f"dimension mismatch: w has {params.d}, map takes {fmap.d}, "
                         f"data has {data.d}")
    if params.k != fmap.out_dim:
        raise ShapeError(f"V has {params.k} columns but the map outputs {fmap.out_dim}")


def _forward(params, fmap, data):
    _check(params, fmap, data)
    F = fmap(data.X)
    Z = data.X + F @ params.V.T
    return F, Z, Z @ params.w


def objective_F(params: ResidualParams, fmap: FeatureMap, loss: Loss, data: Dataset) -> float:
    """Average of l(w^T (x + V f(x)); y) over the data."""
    _, _, p = _forward(params, fmap, data)
    return float(tree_mean(loss.value(p, data.y)))


def objective_Flin(w, loss: Loss, data: Dataset) -> float:
    """Average loss of the linear predictor x -> w^T x."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if w.shape != (data.d,):
        raise ShapeError(f"w must have length {data.d}")
    return float(tree_mean(loss.value(data.X @ w, data.y)))


def grad_Flin(w, loss: Loss, data: Dataset) -> np.ndarray:
    w = np.atleast_1d(np.asarray(w, dtype=float))
    d1 = loss.d1(data.X @ w, data.y)
    return tree_mean(d1[:, None] * data.X)


@dataclass(frozen=True, eq=False)
class GradWV:
    dw: np.ndarray
    dV: np.ndarray

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.dw, self.dV.ravel()])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.flat))


@dataclass(frozen=True, eq=False)
class HessWV:
    H: np.ndarray
    d: int
    k: int

    @property
    def ww(self) -> np.ndarray:
        return self.H[:self.d, :self.d]

    @property
    def wV(self) -> np.ndarray:
        return self.H[:self.d, self.d:]

    @property
    def VV(self) -> np.ndarray:
        return self.H[self.d:, self.d:]


def grad_wv(params: ResidualParams, fmap: FeatureMap, loss: Loss, data: Dataset) -> GradWV:
    F, Z, p = _forward(params, fmap, data)
    d1 = loss.d1(p, data.y)
    dw = tree_mean(d1[:, None] * Z)
    # E[l' w f^T] = w E[l' f]^T, exactly zero at w = 0
    dV = np.outer(params.w, tree_mean(d1[:, None] * F))
    return GradWV(dw, dV)


def hess_wv(params: ResidualParams, fmap: FeatureMap, loss: Loss, data: Dataset) -> HessWV:
    """Exact Hessian in (w, vec V).

    With J the derivative of the prediction (x + V f, w f^T), the Hessian is
    E[l'' J J^T] plus the mixed term E[l' f_j] at (w_i, V_ij), which comes
    from the bilinear coupling w^T V f.
    """
    F, Z, p = _forward(params, fmap, data)
    d, k = params.d, params.k
    n = data.n
    d1 = loss.d1(p, data.y)
    d2 = loss.d2(p, data.y)
    J = np.concatenate([Z, (params.w[None, :, None] * F[:, None, :]).reshape(n, d * k)], axis=1)
    outer = np.einsum("si,sj->sij", J, J) * d2[:, None, None]
    H = tree_mean(outer)
    r = tree_mean(d1[:, None] * F)
    for i in range(d):
        cols = slice(d + i * k, d + (i + 1) * k)
        H[i, cols] += r
        H[cols, i] += r
    return HessWV(H, d, k)


# ---------------------------------------------------------------------------
# Linear algebra helpers
# ---------------------------------------------------------------------------

def spectral_norm(M) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def min_eig_sym(H) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue of a symmetric matrix and a unit eigenvector."""
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ContractError(f"expected a square matrix, got {H.shape}")
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    if H.size and np.max(np.abs(H - H.T)) > 1e-10 * scale:
        raise ContractError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (H + H.T))
    return float(vals[0]), vecs[:, 0]


# ---------------------------------------------------------------------------
# Convex minimization over a Euclidean ball
# ---------------------------------------------------------------------------

def project_ball(z, radius: float) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    nrm = np.linalg.norm(z)
    if nrm > radius:
        return z * (radius / nrm)
    return z


class BallMinimum(NamedTuple):
    w: np.ndarray
    value: float
    converged: bool
    iterations: int


def minimize_ball(fun: Callable, grad: Callable, x0, radius: float, lipschitz: float,
                  tol: float = 1e-10, max_iter: int = 1_000_000) -> BallMinimum:
    """Accelerated projected gradient with fixed step 1/L and function-value
    restarts. Stops when the gradient mapping norm drops below ``tol`` or the
    iterate stops moving."""
    if not radius > 0:
        raise PreconditionError("radius must be positive")
    L = max(float(lipschitz), 1e-300)
    x = project_ball(x0, radius)
    fx = fun(x)
    y, t = x.copy(), 1.0
    for it in range(1, max_iter + 1):
        x_new = project_ball(y - grad(y) / L, radius)
        f_new = fun(x_new)
        if f_new > fx:
            # restart momentum from the last accepted point
            y, t = x.copy(), 1.0
            x_new = project_ball(x - grad(x) / L, radius)
            f_new = fun(x_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        stalled = np.array_equal(x_new, x)
        x, fx, t = x_new, f_new, t_new
        gmap = L * np.linalg.norm(x - project_ball(x - grad(x) / L, radius))
        if gmap <= tol or stalled:
            return BallMinimum(x, float(fx), True, it)
    return BallMinimum(x, float(fx), False, max_iter)


def minimize_flin(loss: Loss, data: Dataset, radius: float, tol: float = 1e-10,
                  max_iter: int = 1_000_000) -> BallMinimum:
    """Minimize the convex linear-predictor loss over ||w|| <= radius."""
    if not radius > 0:
        raise PreconditionError("radius must be positive")
    y_max = float(np.max(np.abs(data.y)))
    L = loss.d2_sup(y_max) * float(tree_mean(np.sum(data.X ** 2, axis=1)))
    return minimize_ball(lambda w: objective_Flin(w, loss, data),
                         lambda w: grad_Flin(w, loss, data),
                         np.zeros(data.d), radius, L, tol=tol, max_iter=max_iter)


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

def objective_F_batch(flats, fmap: FeatureMap, loss: Loss, data: Dataset, d: int, k: int,
                      chunk: int = 2048) -> np.ndarray:
    """objective_F at each row of ``flats`` (shape (B, d + d k))."""
    flats = np.atleast_2d(np.asarray(flats, dtype=float))
    F = fmap(data.X)
    out = np.empty(flats.shape[0])
    for s in range(0, flats.shape[0], chunk):
        blk = flats[s:s + chunk]
        w = blk[:, :d]
        V = blk[:, d:].reshape(-1, d, k)
        Z = data.X[None, :, :] + np.einsum("nk,bdk->bnd", F, V)
        p = np.einsum("bnd,bd->bn", Z, w)
        out[s:s + chunk] = tree_mean(loss.value(p, data.y[None, :]), axis=1)
    return out


def fd_grad(params: ResidualParams, fmap: FeatureMap, loss: Loss, data: Dataset,
            step: float = GRAD_STEP) -> np.ndarray:
    """Central differences of objective_F in flattened coordinates."""
    if not step > 0:
        raise ValueError("step must be positive")
    _check(params, fmap, data)
    x0 = params.flat()
    E = step * np.eye(x0.size)
    vals = objective_F_batch(np.concatenate([x0 + E, x0 - E]), fmap, loss, data,
                             params.d, params.k)
    D = x0.size
    return (vals[:D] - vals[D:]) / (2.0 * step)


def fd_hessian(params: ResidualParams, fmap: FeatureMap, loss: Loss, data: Dataset,
               step: float = HESS_STEP) -> np.ndarray:
    """Central second differences of objective_F in flattened coordinates."""
    if not step > 0:
        raise ValueError("step must be positive")
    _check(params, fmap, data)
    x0 = params.flat()
    D = x0.size
    E = step * np.eye(D)
    iu, ju = np.triu_indices(D, 1)
    pts = [x0[None, :], x0 + E, x0 - E,
           x0 + E[iu] + E[ju], x0 + E[iu] - E[ju], x0 - E[iu] + E[ju], x0 - E[iu] - E[ju]]
    vals = objective_F_batch(np.concatenate(pts), fmap, loss, data, params.d, params.k)
    m = iu.size
    f0 = vals[0]
    fp, fm = vals[1:1 + D], vals[1 + D:1 + 2 * D]
    o = 1 + 2 * D
    fpp, fpm, fmp, fmm = (vals[o + i * m:o + (i + 1) * m] for i in range(4))
    H = np.zeros((D, D))
    H[np.diag_indices(D)] = (fp - 2.0 * f0 + fm) / step ** 2
    off = (fpp - fpm - fmp + fmm) / (4.0 * step ** 2)
    H[iu, ju] = off
    H[ju, iu] = off
    return H


def rel_error(approx, exact) -> float:
    """max |approx - exact| / (1 + max |exact|)."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    if exact.size == 0:
        return 0.0
    return float(np.max(np.abs(approx - exact)) / (1.0 + np.max(np.abs(exact))))


__all__ = [
    "GradWV", "HessWV", "BallMinimum", "objective_F", "objective_Flin", "grad_Flin",
    "grad_wv", "hess_wv", "min_eig_sym", "spectral_norm", "project_ball", "minimize_ball",
    "minimize_flin", "objective_F_batch", "fd_grad", "fd_hessian", "rel_error", "tree_sum",
]
