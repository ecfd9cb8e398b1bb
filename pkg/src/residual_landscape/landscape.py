"""Landscape inequalities for F(w, V, theta) relative to the best linear predictor.

Every check returns a :class:`BoundCheck` so batches can be reported uniformly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .calculus import (grad_wv, hess_wv, min_eig_sym, objective_F, objective_F_batch,
                       objective_Flin, spectral_norm)
from .errors import PreconditionError
from .model import Dataset, FeatureMap, Loss, ResidualParams, tree_mean
from .reporting import BoundCheck

LIPSCHITZ_NOTE = "sampled estimate (max difference quotient x 1.5)"


def _point_context(params: ResidualParams, fmap: FeatureMap, **extra) -> dict:
    ctx = {"w": params.w, "V": params.V, "theta": fmap.digest()}
    ctx.update(extra)
    return ctx


def _comparator(w_star, d):
    w_star = np.atleast_1d(np.asarray(w_star, dtype=float))
    if w_star.shape != (d,):
        raise PreconditionError(f"comparator must have length {d}")
    return w_star


# ---------------------------------------------------------------------------
# Points with w != 0
# ---------------------------------------------------------------------------

def thm1_denominator(w_norm: float, v_norm: float, w_star_norm: float) -> float:
    return float(np.sqrt(2 * w_norm ** 2 + w_star_norm ** 2 * (2 + v_norm ** 2 / w_norm ** 2)))


def thm1_lower_bound(params: ResidualParams, fmap: FeatureMap, loss: Loss, data: Dataset,
                     w_star, **ctx) -> BoundCheck:
    """||grad F|| >= (F - F_lin(w*)) / sqrt(2||w||^2 + ||w*||^2 (2 + ||V||^2/||w||^2))."""
    w_norm = float(np.linalg.norm(params.w))
    if w_norm == 0:
        raise PreconditionError("requires w != 0; use thm2_check at w = 0")
    w_star = _comparator(w_star, params.d)
    gap = objective_F(params, fmap, loss, data) - objective_Flin(w_star, loss, data)
    denom = thm1_denominator(w_norm, spectral_norm(params.V), float(np.linalg.norm(w_star)))
    lhs = grad_wv(params, fmap, loss, data).norm
    return BoundCheck.make("thm1_gradient_lower_bound", lhs, gap / denom,
                           _point_context(params, fmap, w_star=w_star, gap=gap, **ctx))


def certificate_direction(params: ResidualParams, w_star) -> np.ndarray:
    """Flattened (w - w*, w w*^T V / ||w||^2)."""
    w = params.w
    w_star = _comparator(w_star, params.d)
    second = np.outer(w, w_star @ params.V) / float(w @ w)
    return np.concatenate([w - w_star, second.ravel()])


def lemma1_certificate(params: ResidualParams, fmap: FeatureMap, loss: Loss, data: Dataset,
                       w_star, **ctx) -> BoundCheck:
    """<vec G, grad F> >= F - F_lin(w*)."""
    if not np.any(params.w):
        raise PreconditionError("requires w != 0")
    G = certificate_direction(params, w_star)
    lhs = float(G @ grad_wv(params, fmap, loss, data).flat)
    gap = objective_F(params, fmap, loss, data) - objective_Flin(w_star, loss, data)
    return BoundCheck.make("lemma1_inner_product", lhs, gap,
                           _point_context(params, fmap, w_star=np.asarray(w_star, float), **ctx))


# ---------------------------------------------------------------------------
# Points with w = 0
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ZeroSlopeFeatureMean:
    r_vec: np.ndarray


def zero_slope_feature_mean(fmap: FeatureMap, loss: Loss, data: Dataset) -> ZeroSlopeFeatureMean:
    """E[l'(0; y) f(x)]: the off-diagonal block of the Hessian at w = 0."""
    d1 = loss.d1(np.zeros(data.n), data.y)
    return ZeroSlopeFeatureMean(tree_mean(d1[:, None] * fmap(data.X)))


def _at_zero(V, d) -> ResidualParams:
    return ResidualParams(np.zeros(d), np.asarray(V, dtype=float))


def hessian_zero_structure_check(V, fmap: FeatureMap, loss: Loss, data: Dataset,
                                 atol: float = 1e-10) -> BoundCheck:
    """At w = 0 the V-V block vanishes and row i of the w-V block is e_i (x) r."""
    params = _at_zero(V, data.d)
    hs = hess_wv(params, fmap, loss, data)
    r = zero_slope_feature_mean(fmap, loss, data).r_vec
    expected = np.kron(np.eye(params.d), r[None, :])
    dev_vv = float(np.max(np.abs(hs.VV))) if hs.VV.size else 0.0
    dev_wv = float(np.max(np.abs(hs.wV - expected))) if expected.size else 0.0
    worst = max(dev_vv, dev_wv)
    return BoundCheck.make("hessian_zero_structure", atol, worst,
                           _point_context(params, fmap, vv_max=dev_vv, wv_dev=dev_wv), tol=0.0)


def bordered_matrix(b: float, u) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    M = np.zeros((u.size + 1, u.size + 1))
    M[0, 0] = b
    M[0, 1:] = u
    M[1:, 0] = u
    return M


def lemma2_bordered_min_eig(b: float, u, atol: float = 1e-10) -> float:
    """Smallest eigenvalue (b - sqrt(b^2 + 4||u||^2)) / 2 of [[b, u^T], [u, 0]].

    For b >= 0 the identity ||u||^2 = |b lam| + lam^2 is also verified.
    """
    b = float(b)
    uu = float(np.dot(np.ravel(u), np.ravel(u)))
    root = np.sqrt(b * b + 4.0 * uu)
    # rationalized form for b > 0 avoids cancellation
    lam = -2.0 * uu / (b + root) if b > 0 else 0.5 * (b - root)
    if b >= 0 and abs(uu - (abs(b * lam) + lam * lam)) > atol * (1.0 + uu):
        raise ArithmeticError("bordered-matrix identity failed")
    return float(lam)


def thm2_check(V, fmap: FeatureMap, loss: Loss, data: Dataset, w_star,
               **ctx) -> tuple[BoundCheck, BoundCheck]:
    """(a) lambda_min of the Hessian at w = 0 is <= 0; (b) the combined
    gradient/curvature lower bound on (F(0, V) - F_lin(w*)) / ||w*||."""
    w_star = _comparator(w_star, data.d)
    ws_norm = float(np.linalg.norm(w_star))
    if ws_norm == 0:
        raise PreconditionError("requires w* != 0")
    params = _at_zero(V, data.d)
    hs = hess_wv(params, fmap, loss, data)
    lam, _ = min_eig_sym(hs.H)
    gnorm = grad_wv(params, fmap, loss, data).norm
    hww = spectral_norm(hs.ww)
    v_norm = spectral_norm(params.V)
    lhs = gnorm + v_norm * np.sqrt(abs(lam) * hww + lam * lam)
    gap = objective_F(params, fmap, loss, data) - objective_Flin(w_star, loss, data)
    base = _point_context(params, fmap, w_star=w_star, lambda_min=lam, **ctx)
    a = BoundCheck.make("thm2_min_eig_nonpositive", 0.0, lam, base)
    b = BoundCheck.make("thm2_combined_bound", lhs, gap / ws_norm,
                        dict(base, grad_norm=gnorm, hess_ww_norm=hww, gap=gap))
    return a, b


# ---------------------------------------------------------------------------
# Lipschitz constants and approximate stationary points
# ---------------------------------------------------------------------------

class LipschitzEstimate(NamedTuple):
    mu0: float
    mu1: float
    mu2: float


def _sample_region(rng, center, radius, norm, size):
    D = center.size
    if norm == "linf":
        return center + rng.uniform(-radius, radius, size=(size, D))
    g = rng.normal(size=(size, D))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return center + g * (radius * rng.uniform(size=(size, 1)) ** (1.0 / D))


def _clip_region(z, center, radius, norm):
    if norm == "linf":
        return np.clip(z, center - radius, center + radius)
    off = z - center
    nrm = np.linalg.norm(off, axis=1, keepdims=True)
    scale = np.minimum(1.0, radius / np.maximum(nrm, 1e-300))
    return center + off * scale


def estimate_lipschitz(center: ResidualParams, radius: float, fmap: FeatureMap, loss: Loss,
                       data: Dataset, samples: int = 200, rng=None, norm: str = "l2",
                       safety: float = 1.5) -> LipschitzEstimate:
    """Sampled Lipschitz constants of F, grad F and Hess F in (w, V) on a ball
    (``norm='l2'``) or box (``norm='linf'``) around ``center``.

    These are lower bounds on the true suprema, inflated by ``safety``.
    """
    if not radius > 0 or samples < 2:
        raise PreconditionError("need radius > 0 and samples >= 2")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    c = center.flat()
    d, k = center.d, center.k
    z1 = _sample_region(rng, c, radius, norm, samples)
    dirs = rng.normal(size=z1.shape)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    steps = radius * 10.0 ** rng.uniform(-3.0, 0.0, size=(samples, 1))
    z2 = _clip_region(z1 + steps * dirs, c, radius, norm)
    dist = np.linalg.norm(z1 - z2, axis=1)
    keep = dist > 0
    z1, z2, dist = z1[keep], z2[keep], dist[keep]
    f1 = objective_F_batch(z1, fmap, loss, data, d, k)
    f2 = objective_F_batch(z2, fmap, loss, data, d, k)
    mu0 = float(np.max(np.abs(f1 - f2) / dist))
    mu1 = mu2 = 0.0
    for a, b, s in zip(z1, z2, dist):
        pa, pb = ResidualParams.from_flat(a, d, k), ResidualParams.from_flat(b, d, k)
        ga, gb = grad_wv(pa, fmap, loss, data).flat, grad_wv(pb, fmap, loss, data).flat
        Ha, Hb = hess_wv(pa, fmap, loss, data).H, hess_wv(pb, fmap, loss, data).H
        mu1 = max(mu1, float(np.linalg.norm(ga - gb)) / s)
        mu2 = max(mu2, spectral_norm(Ha - Hb) / s)
    return LipschitzEstimate(safety * mu0, float(safety * mu1), float(safety * mu2))


@dataclass(frozen=True)
class SopspCertificate:
    """Smallest epsilon for which a point is an epsilon-SOPSP, plus the
    constants (b, r, mu0, mu1, mu2) the suboptimality bound needs."""

    grad_norm: float
    lambda_min: float
    epsilon: float
    mu0: float
    mu1: float
    mu2: float
    b: float
    r: float

    def to_dict(self) -> dict:
        return dict(self.__dict__, lipschitz=LIPSCHITZ_NOTE)


def certificate_epsilon(grad_norm: float, lambda_min: float, mu2: float) -> float:
    curvature = lambda_min ** 2 / mu2 if lambda_min < 0 else 0.0
    return float(max(grad_norm, curvature))


def classify_sopsp(params: ResidualParams, fmap: FeatureMap, loss: Loss, data: Dataset,
                   mu2: float, mu0: float = float("nan"), mu1: float = float("nan"),
                   b: float | None = None, r: float = float("nan")) -> SopspCertificate:
    if not mu2 > 0:
        raise PreconditionError("mu2 must be positive")
    g = grad_wv(params, fmap, loss, data).norm
    lam, _ = min_eig_sym(hess_wv(params, fmap, loss, data).H)
    if b is None:
        b = max(float(np.linalg.norm(params.w)), spectral_norm(params.V))
    return SopspCertificate(g, lam, certificate_epsilon(g, lam, mu2), float(mu0), float(mu1),
                            float(mu2), float(b), float(r))


def thm3_excess(cert: SopspCertificate) -> float:
    """The explicit suboptimality term of the epsilon-SOPSP bound with delta = sqrt(eps)."""
    if not cert.mu2 > 0:
        raise PreconditionError("degenerate certificate: mu2 must be positive")
    eps, b, r = cert.epsilon, cert.b, cert.r
    mu0, mu1, mu2 = cert.mu0, cert.mu1, cert.mu2
    se = np.sqrt(eps)
    near = mu0 * se + r * (eps + mu1 * se + np.sqrt(2.0) * b * np.sqrt(mu1 * se * (np.sqrt(mu2) + mu2)))
    far = np.sqrt(2 * b * b * eps * eps + r * r * (2 * eps * eps + b * b * eps))
    return float(max(near, far))


def thm3_bound(cert: SopspCertificate, F_at_point: float, Flin_value: float,
               **ctx) -> BoundCheck:
    """F(point) <= F_lin(w*) + excess(cert); stored as lhs = bound, rhs = F."""
    bound = Flin_value + thm3_excess(cert)
    return BoundCheck.make("thm3_sopsp_bound", bound, F_at_point,
                           dict(cert.to_dict(), Flin_value=Flin_value, **ctx))


class SopspSearch(NamedTuple):
    params: ResidualParams
    certificate: SopspCertificate
    converged: bool
    iterations: int


def find_sopsp(start: ResidualParams, fmap: FeatureMap, loss: Loss, data: Dataset,
               target: float, mu2: float, max_iter: int = 20000) -> SopspSearch:
    """Gradient descent with Armijo backtracking; near-stationary points with
    curvature below -sqrt(mu2 target) are left by a step of length
    0.1 sqrt(target / mu2) along the better sign of the bottom eigenvector."""
    if not target > 0:
        raise PreconditionError("target epsilon must be positive")
    d, k = start.d, start.k
    x = start.flat()

    def at(z):
        return ResidualParams.from_flat(z, d, k)

    fx = objective_F(at(x), fmap, loss, data)
    alpha = 1.0
    escape = 0.1 * np.sqrt(target / mu2)
    cert = None
    for it in range(max_iter + 1):
        p = at(x)
        g = grad_wv(p, fmap, loss, data).flat
        gn = float(np.linalg.norm(g))
        if gn <= target:
            lam, vec = min_eig_sym(hess_wv(p, fmap, loss, data).H)
            cert = SopspCertificate(gn, lam, certificate_epsilon(gn, lam, mu2),
                                    float("nan"), float("nan"), mu2,
                                    max(float(np.linalg.norm(p.w)), spectral_norm(p.V)),
                                    float("nan"))
            if cert.epsilon <= target:
                return SopspSearch(p, cert, True, it)
            cands = [x + escape * vec, x - escape * vec]
            vals = [objective_F(at(z), fmap, loss, data) for z in cands]
            j = int(np.argmin(vals))
            x, fx = cands[j], vals[j]
            continue
        if it == max_iter:
            break
        while True:
            z = x - alpha * g
            fz = objective_F(at(z), fmap, loss, data)
            if fz <= fx - 0.5 * alpha * gn * gn or alpha < 1e-12:
                break
            alpha *= 0.5
        x, fx = z, fz
        alpha = min(alpha * 2.0, 1e3)
    cert = classify_sopsp(at(x), fmap, loss, data, mu2)
    return SopspSearch(at(x), cert, cert.epsilon <= target, max_iter)
