"""Per-trial drivers for the verification sweeps. Every trial is a top-level
function of (seed, index, options) so batches can run in worker processes and
still come back in a fixed order."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .calculus import (fd_grad, fd_hessian, grad_wv, hess_wv, min_eig_sym, minimize_flin,
                       objective_F, rel_error, spectral_norm)
from .counterexamples import example1_verify, figure1_artifacts
from .errors import PreconditionError
from .instances import random_instance, random_params, trial_rng
from .landscape import (bordered_matrix, certificate_direction, classify_sopsp,
                        estimate_lipschitz, find_sopsp, hessian_zero_structure_check,
                        lemma1_certificate, lemma2_bordered_min_eig, thm1_lower_bound,
                        thm2_check, thm3_bound)
from .model import Dataset, Loss, ResidualParams
from .reporting import BoundCheck
from .vector import (VectorDataset, VectorLoss, VectorParams, grad_WV_vec, lemma4_certificate,
                     objective_F_vec, s_min, thm_vec_bound, vector_certificate_direction)

LANDSCAPE_MAPS = ("scale", "one_hidden", "random_features")


def run_trials(fn, seed: int, trials: int, jobs: int = 1, **options) -> list[BoundCheck]:
    """Concatenated checks of fn(seed, i, **options) for i = 0..trials-1, in index order."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if jobs <= 1:
        parts = [fn(seed, i, **options) for i in range(trials)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(fn, seed, i, **options) for i in range(trials)]
            parts = [f.result() for f in futures]
    return [c for part in parts for c in part]


def _near_kink(loss: Loss, p, y, gap: float = 1e-2) -> bool:
    if loss.family != "smoothed_hinge":
        return False
    z = y * p
    return bool(np.any(np.abs(z - 1.0) < gap) or np.any(np.abs(z - (1.0 - loss.width)) < gap))


def gradient_trial(seed: int, index: int, grad_tol: float = 1e-6, hess_tol: float = 1e-5,
                   loss_family=None, map_family=None, d_max: int = 8, k_max: int = 8,
                   n: int = 16) -> list[BoundCheck]:
    """Analytic gradient and Hessian against central differences at one random point."""
    rng = trial_rng(seed, index)
    inst = random_instance(rng, d_max, k_max, n, loss_family, map_family)
    d, k = inst.data.d, inst.fmap.out_dim
    # the smoothed hinge has a jump in l'' at two margins; keep the point away from them
    for _ in range(100):
        params = random_params(rng, d, k, scale=0.7)
        Z = inst.data.X + inst.fmap(inst.data.X) @ params.V.T
        if not _near_kink(inst.loss, Z @ params.w, inst.data.y):
            break
    g = grad_wv(params, inst.fmap, inst.loss, inst.data).flat
    H = hess_wv(params, inst.fmap, inst.loss, inst.data).H
    eg = rel_error(fd_grad(params, inst.fmap, inst.loss, inst.data), g)
    eh = rel_error(fd_hessian(params, inst.fmap, inst.loss, inst.data), H)
    ctx = {"seed": seed, "trial": index, "loss_family": inst.loss.family, "map": inst.fmap.spec(),
           "d": d, "k": k}
    return [BoundCheck.make("gradient_vs_finite_difference", grad_tol, eg, ctx, tol=0.0),
            BoundCheck.make("hessian_vs_finite_difference", hess_tol, eh, ctx, tol=0.0)]


def landscape_trial(seed: int, index: int, comparators: int = 10, d_max: int = 8,
                    k_max: int = 8, n_max: int = 64, at_zero: bool = True,
                    bordered: bool = True) -> list[BoundCheck]:
    """One random point with w != 0 against several comparators, one point with
    w = 0, and one random bordered matrix."""
    rng = trial_rng(seed, index)
    n = int(rng.integers(1, n_max + 1))
    inst = random_instance(rng, d_max, k_max, n, map_choices=LANDSCAPE_MAPS)
    fmap, loss, data = inst
    d, k = data.d, fmap.out_dim
    params = random_params(rng, d, k, scale=float(rng.uniform(0.1, 3.0)))
    ctx = {"seed": seed, "trial": index, "loss_family": loss.family}
    out = []
    for j in range(comparators):
        w_star = rng.normal(size=d) * rng.uniform(0.1, 3.0)
        out.append(thm1_lower_bound(params, fmap, loss, data, w_star, comparator=j, **ctx))
        out.append(lemma1_certificate(params, fmap, loss, data, w_star, comparator=j, **ctx))
    if at_zero:
        V = rng.normal(size=(d, k)) * rng.uniform(0.1, 3.0)
        w_star = rng.normal(size=d)
        a, b = thm2_check(V, fmap, loss, data, w_star, **ctx)
        out += [BoundCheck.make(a.name, 1e-10, a.rhs, a.context), b,
                hessian_zero_structure_check(V, fmap, loss, data)]
    if bordered:
        out += bordered_trial(rng, ctx)
    return out


def bordered_trial(rng, ctx=None) -> list[BoundCheck]:
    size = int(rng.integers(1, 50))
    u = rng.normal(size=size) * rng.uniform(0.01, 5.0)
    b = float(rng.normal() * 5.0)
    if rng.uniform() < 0.1:
        u = np.zeros(size)
    lam = lemma2_bordered_min_eig(b, u)
    ref, _ = min_eig_sym(bordered_matrix(b, u))
    ctx = dict(ctx or {}, b=b, dim=size + 1, closed_form=lam, eigensolver=ref)
    out = [BoundCheck.make("bordered_min_eig_closed_form", 1e-10, abs(lam - ref), ctx, tol=0.0)]
    if b >= 0:
        uu = float(u @ u)
        resid = abs(uu - (abs(b * lam) + lam * lam)) / (1.0 + uu)
        out.append(BoundCheck.make("bordered_norm_identity", 1e-10, resid, ctx, tol=0.0))
    return out


def vector_trial(seed: int, index: int, m: int = 3, d: int = 5, k: int = 4,
                 n: int = 32) -> list[BoundCheck]:
    """Vector-output gradient bound and certificate on a random full-rank
    instance, plus the m = 1 reduction to the scalar pipeline."""
    rng = trial_rng(seed, index)
    inst = random_instance(rng, d, k, n, loss_family="squared", map_family="random_features",
                           d=d, k=k)
    fmap, X = inst.fmap, inst.data.X
    family = ("sum_of_squares", "cross_entropy")[index % 2]
    if family == "sum_of_squares":
        Y = rng.normal(size=(n, m))
    else:
        Y = np.eye(m)[rng.integers(0, m, size=n)]
    data = VectorDataset(X, Y)
    loss = VectorLoss(family)
    scale = float(rng.uniform(0.2, 2.0))
    params = VectorParams(rng.normal(size=(m, d)) * scale, rng.normal(size=(d, k)) * scale)
    W_star = rng.normal(size=(m, d)) * rng.uniform(0.1, 3.0)
    ctx = {"seed": seed, "trial": index, "loss_family": family}
    out = [thm_vec_bound(params, fmap, loss, data, W_star, **ctx),
           lemma4_certificate(params, fmap, loss, data, W_star, **ctx)]
    out.append(BoundCheck.make("vector_scalar_reduction", 1e-12,
                               scalar_reduction_error(rng, fmap, X), ctx, tol=0.0))
    return out


def scalar_reduction_error(rng, fmap, X) -> float:
    """Largest deviation between the m = 1 vector pipeline and the scalar one
    (objective, gradient, bound rhs, certificate direction)."""
    n, d = X.shape
    y = rng.normal(size=n)
    w, w_star = rng.normal(size=d), rng.normal(size=d)
    V = rng.normal(size=(d, fmap.out_dim))
    vp, sp = VectorParams(w[None, :], V), ResidualParams(w, V)
    vd, sd = VectorDataset(X, y), Dataset(X, y)
    vl, sl = VectorLoss("sum_of_squares"), Loss("squared")
    errs = [
        abs(objective_F_vec(vp, fmap, vl, vd) - objective_F(sp, fmap, sl, sd)),
        float(np.max(np.abs(grad_WV_vec(vp, fmap, vl, vd) - grad_wv(sp, fmap, sl, sd).flat))),
        abs(thm_vec_bound(vp, fmap, vl, vd, w_star[None, :]).rhs
            - thm1_lower_bound(sp, fmap, sl, sd, w_star).rhs),
        float(np.max(np.abs(vector_certificate_direction(vp, w_star[None, :])
                            - certificate_direction(sp, w_star)))),
    ]
    return float(max(errs))


def sopsp_trial(seed: int, index: int, b: float = 5.0, r: float = 5.0, target: float = 1e-3,
                d_max: int = 4, k_max: int = 4, n: int = 32, samples: int = 200,
                starts: int = 3, redraws: int = 20, max_iter: int = 5000) -> list[BoundCheck]:
    """Descend to an epsilon-SOPSP inside the flat ball of radius b and check the
    explicit suboptimality bound with sampled Lipschitz constants on that ball.

    Instances whose descent leaves the ball (minima too far out, or separable
    data under the logistic loss) are redrawn."""
    rng = trial_rng(seed, index)
    for redraw in range(redraws):
        # the bound needs a Lipschitz Hessian, which the smoothed hinge lacks
        inst = random_instance(rng, d_max, k_max, n,
                               loss_family=("squared", "logistic")[int(rng.integers(2))],
                               map_choices=LANDSCAPE_MAPS)
        fmap, loss, data = inst
        d, k = data.d, fmap.out_dim
        mu = estimate_lipschitz(ResidualParams.zeros(d, k), b, fmap, loss, data,
                                samples=samples, rng=rng)
        mu2 = max(mu.mu2, 1e-12)
        for attempt in range(starts):
            start = random_params(rng, d, k, scale=0.5)
            found = find_sopsp(start, fmap, loss, data, target, mu2, max_iter=max_iter)
            if found.converged and np.linalg.norm(found.params.flat()) <= b:
                break
        else:
            continue
        break
    else:
        raise PreconditionError(f"no SOPSP inside the radius-{b} ball after {redraws} instances")
    p = found.params
    flin = minimize_flin(loss, data, r, tol=1e-12)
    # the bound also uses ||Hess F(0, V)|| <= mu1
    h0 = spectral_norm(hess_wv(ResidualParams(np.zeros(d), p.V), fmap, loss, data).H)
    mu1 = max(mu.mu1, h0)
    cert = classify_sopsp(p, fmap, loss, data, mu2, mu.mu0, mu1, b=b, r=r)
    F = objective_F(p, fmap, loss, data)
    return [thm3_bound(cert, F, flin.value, seed=seed, trial=index, loss_family=loss.family,
                       map=fmap.spec(), redraws=redraw, iterations=found.iterations,
                       w=p.w, V=p.V, Flin_converged=flin.converged)]


def example1_checks(eps_values=(0.01, 0.1, 1.0, 10.0), seed: int = 0) -> list[BoundCheck]:
    return [c for eps in eps_values for c in example1_verify(eps, seed=seed)]


def figure1_checks(summary: dict, spurious_start=(-1.0, -1.6)) -> list[BoundCheck]:
    """Checks on the minima found by figure1_artifacts."""
    m = summary["minima"]
    bs, bb = m["b_spurious"], m["b_basin"]
    cs, cb = m["c_spurious"], m["c_basin"]
    dist = float(np.hypot(bs["point"][0] - spurious_start[0], bs["point"][1] - spurious_start[1]))
    ctx = {k: summary[k] for k in ("eps", "lambda", "radius", "fit_weight")}
    return [
        BoundCheck.make("regularized_spurious_near_start", 0.25, dist, dict(ctx, point=bs),
                        tol=0.0),
        BoundCheck.make("regularized_spurious_stationary", 1e-8, bs["grad_norm"], ctx, tol=0.0),
        BoundCheck.make("regularized_spurious_convex", bs["lambda_min"], 1e-6, ctx, tol=0.0),
        BoundCheck.make("regularized_spurious_excess", summary["excess_regularized"], 0.05,
                        dict(ctx, basin=bb), tol=0.0),
        BoundCheck.make("constrained_spurious_quadrant", -float(np.max(cs["point"])), 0.0,
                        dict(ctx, point=cs), tol=0.0),
        BoundCheck.make("constrained_spurious_excess", summary["excess_constrained"], 0.0,
                        dict(ctx, basin=cb), tol=0.0),
        BoundCheck.make("constrained_spurious_is_minimum", float(cs["converged"] and
                                                                cs["kind"] == "local_min"),
                        1.0, ctx, tol=0.0),
    ]


def figure1_run(out_dir, **kw):
    summary = figure1_artifacts(out_dir, **kw)
    return summary, figure1_checks(summary)


__all__ = ["run_trials", "gradient_trial", "landscape_trial", "bordered_trial", "vector_trial",
           "scalar_reduction_error", "sopsp_trial", "example1_checks", "figure1_checks",
           "figure1_run"]
