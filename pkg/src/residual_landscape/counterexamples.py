"""The two-parameter instance F(w, v) = (w (1 + eps v) - 1)^2 / 2 and the
regularized / ball-constrained variants that create spurious minima.

The instance is the residual model with d = k = 1, f(x) = eps x, squared loss
and a single sample x = y = 1.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .calculus import (grad_wv, hess_wv, min_eig_sym, objective_F, objective_Flin,
                       project_ball)
from .landscape import classify_sopsp, estimate_lipschitz, thm3_bound
from .model import Dataset, FeatureMap, Loss, ResidualParams
from .reporting import BoundCheck, write_json, write_rows


@dataclass(frozen=True)
class Example1Instance:
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def pipeline(self):
        """(feature map, loss, data) reproducing this instance in the generic model."""
        return (FeatureMap.scaled(1, self.eps), Loss("squared"),
                Dataset(np.array([[1.0]]), np.array([1.0])))

    def params(self, w, v) -> ResidualParams:
        return ResidualParams(np.array([w], dtype=float), np.array([[v]], dtype=float))


def example1_eval(inst: Example1Instance, w: float, v: float, order: int = 0):
    """Closed-form value (0), gradient (1) or Hessian (2)."""
    e = inst.eps
    s = 1.0 + e * v
    res = w * s - 1.0
    if order == 0:
        return 0.5 * res * res
    if order == 1:
        return np.array([res * s, res * e * w])
    if order == 2:
        off = e * (2.0 * w + 2.0 * e * w * v - 1.0)
        return np.array([[s * s, off], [off, e * e * w * w]])
    raise ValueError("order must be 0, 1 or 2")


@dataclass(frozen=True)
class RegularizedObjective:
    """fit_weight * F + (lam/2)(w^2 + v^2), optionally restricted to
    ||(w, v)|| <= constraint_radius.

    ``fit_weight=2`` gives the un-halved fit term (w(1 + eps v) - 1)^2 used by
    the contour figure; the relative weight of the regularizer matters for
    where (and whether) the spurious minimum appears.
    """

    base: Example1Instance
    lam: float = 0.0
    constraint_radius: float | None = None
    fit_weight: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.constraint_radius is not None and not self.constraint_radius > 0:
            raise ValueError("constraint radius must be positive")
        if not self.fit_weight > 0:
            raise ValueError("fit_weight must be positive")

    def value(self, z) -> float:
        w, v = z
        return float(self.fit_weight * example1_eval(self.base, w, v, 0)
                     + 0.5 * self.lam * (w * w + v * v))

    def grad(self, z) -> np.ndarray:
        w, v = z
        return self.fit_weight * example1_eval(self.base, w, v, 1) + self.lam * np.array([w, v])

    def hess(self, z) -> np.ndarray:
        w, v = z
        return self.fit_weight * example1_eval(self.base, w, v, 2) + self.lam * np.eye(2)

    def on_grid(self, W, V) -> np.ndarray:
        e = self.base.eps
        return (0.5 * self.fit_weight * (W * (1.0 + e * V) - 1.0) ** 2
                + 0.5 * self.lam * (W ** 2 + V ** 2))


def regularized_eval(obj: RegularizedObjective, w: float, v: float, order: int = 0):
    z = np.array([w, v], dtype=float)
    return (obj.value, obj.grad, obj.hess)[order](z)


# ---------------------------------------------------------------------------
# Local search
# ---------------------------------------------------------------------------

class LocalMin(NamedTuple):
    point: np.ndarray
    value: float
    grad_norm: float          # projected-gradient norm in ball mode
    lambda_min: float         # Hessian; tangential curvature on the boundary
    lambda_max: float
    on_boundary: bool
    converged: bool
    diverged: bool

    @property
    def kind(self) -> str:
        if self.lambda_min > 0:
            return "local_min"
        if self.lambda_min < 0 < self.lambda_max:
            return "saddle"
        return "degenerate"

    def to_dict(self) -> dict:
        return {"point": self.point, "value": self.value, "grad_norm": self.grad_norm,
                "lambda_min": self.lambda_min, "lambda_max": self.lambda_max,
                "on_boundary": self.on_boundary, "converged": self.converged,
                "diverged": self.diverged, "kind": self.kind}


def _descend(obj, x, radius, tol, max_iter):
    """(Projected) gradient descent with backtracking."""
    proj = (lambda z: z) if radius is None else (lambda z: project_ball(z, radius))
    fx = obj.value(x)
    alpha = 1.0
    for _ in range(max_iter):
        g = obj.grad(x)
        if np.linalg.norm(x - proj(x - g)) <= tol:
            break
        while True:
            z = proj(x - alpha * g)
            fz = obj.value(z)
            if fz <= fx - 0.5 / alpha * float(np.sum((z - x) ** 2)) or alpha < 1e-14:
                break
            alpha *= 0.5
        if np.array_equal(z, x) or np.linalg.norm(z) > 1e6:
            x = z
            break
        x, fx = z, fz
        alpha = min(2.0 * alpha, 1e2)
    return x


def find_local_min(objective, start, mode="unconstrained", tol: float = 1e-8,
                   max_iter: int = 200000) -> LocalMin:
    """Descend from ``start`` and polish with Newton steps.

    ``mode`` is ``"unconstrained"`` or a ball radius (float). In ball mode an
    interior result is classified by the Hessian and a boundary result by the
    curvature along the circle.
    """
    radius = None if mode == "unconstrained" else float(mode)
    x = np.asarray(start, dtype=float)
    if radius is not None:
        x = project_ball(x, radius)
    x = _descend(objective, x, radius, 1e-6 * tol, max_iter)
    if np.linalg.norm(x) > 1e6:
        g = objective.grad(x)
        return LocalMin(x, objective.value(x), float(np.linalg.norm(g)), float("nan"),
                        float("nan"), False, False, True)

    on_boundary = radius is not None and np.linalg.norm(x) >= radius * (1 - 1e-9)
    if on_boundary and x.size == 2:
        # Newton on the angle along the circle
        phi = float(np.arctan2(x[1], x[0]))
        for _ in range(60):
            z = radius * np.array([np.cos(phi), np.sin(phi)])
            t = radius * np.array([-np.sin(phi), np.cos(phi)])
            g, H = objective.grad(z), objective.hess(z)
            d1 = float(g @ t)
            d2 = float(t @ H @ t - g @ z)
            if d2 <= 0 or abs(d1) < 1e-15:
                break
            phi -= d1 / d2
        x = radius * np.array([np.cos(phi), np.sin(phi)])
        g, H = objective.grad(x), objective.hess(x)
        if float(g @ x) < 0:
            # the objective decreases outward: a boundary point with positive multiplier
            t = np.array([-np.sin(phi), np.cos(phi)])
            curv = float(t @ H @ t - (g @ x) / radius ** 2)
            pg = float(np.linalg.norm(x - project_ball(x - g, radius)))
            return LocalMin(x, objective.value(x), pg, curv, curv, True, pg <= tol, False)
        on_boundary = False
    if not on_boundary:
        for _ in range(60):
            g, H = objective.grad(x), objective.hess(x)
            lam_min, _ = min_eig_sym(H)
            if np.linalg.norm(g) < 1e-15 or lam_min <= 0:
                break
            step = np.linalg.solve(H, g)
            z = x - step
            if radius is not None and np.linalg.norm(z) > radius:
                break
            if np.linalg.norm(objective.grad(z)) >= np.linalg.norm(g):
                break
            x = z
    g, H = objective.grad(x), objective.hess(x)
    vals = np.linalg.eigvalsh(H)
    gn = float(np.linalg.norm(g)) if radius is None else \
        float(np.linalg.norm(x - project_ball(x - g, radius)))
    return LocalMin(x, objective.value(x), gn, float(vals[0]), float(vals[-1]),
                    False, gn <= tol, False)


# ---------------------------------------------------------------------------
# Contour grids
# ---------------------------------------------------------------------------

class ContourGrid(NamedTuple):
    w: np.ndarray
    v: np.ndarray
    values: np.ndarray          # shape (len(v), len(w)); NaN outside the constraint

    def rows(self):
        for i, vv in enumerate(self.v):
            for j, ww in enumerate(self.w):
                val = self.values[i, j]
                yield float(ww), float(vv), (None if np.isnan(val) else float(val))

    def write_csv(self, path) -> None:
        write_rows(path, ["w", "v", "value"], self.rows())


def _axis(lo, hi, step):
    n = int(round((hi - lo) / step)) + 1
    return np.round(lo + step * np.arange(n), 12)


def contour_grid(objective: RegularizedObjective, w_range, v_range, step: float) -> ContourGrid:
    """Objective values on a grid (rows indexed by v); points outside the
    constraint ball are left empty."""
    if not step > 0:
        raise ValueError("step must be positive")
    ws, vs = _axis(*w_range, step), _axis(*v_range, step)
    Wg, Vg = np.meshgrid(ws, vs)
    vals = objective.on_grid(Wg, Vg)
    if objective.constraint_radius is not None:
        vals = np.where(np.hypot(Wg, Vg) <= objective.constraint_radius, vals, np.nan)
    return ContourGrid(ws, vs, vals)


# ---------------------------------------------------------------------------
# Reproductions
# ---------------------------------------------------------------------------

def example1_verify(eps: float, samples: int = 200, seed: int = 0) -> list[BoundCheck]:
    """Checks at (0, -1/eps): zero gradient, Hessian [[0, -eps], [-eps, 0]],
    value 1/2 above F_lin(1) = 0, and consistency with the SOPSP bound at the
    point's norm."""
    inst = Example1Instance(eps)
    fmap, loss, data = inst.pipeline()
    p = inst.params(0.0, -1.0 / eps)
    F = objective_F(p, fmap, loss, data)
    flin = objective_Flin([1.0], loss, data)
    g = grad_wv(p, fmap, loss, data)
    H = hess_wv(p, fmap, loss, data).H
    lam, _ = min_eig_sym(H)
    expected_H = np.array([[0.0, -eps], [-eps, 0.0]])
    ctx = {"eps": eps, "point": [0.0, -1.0 / eps]}
    checks = [
        BoundCheck.make("example1_zero_gradient", 1e-12, g.norm, ctx, tol=0.0),
        BoundCheck.make("example1_hessian", 1e-12, float(np.max(np.abs(H - expected_H))),
                        dict(ctx, hessian=H, lambda_min=lam), tol=0.0),
        BoundCheck.make("example1_value", 1e-12, abs(F - 0.5), dict(ctx, F=F), tol=0.0),
        BoundCheck.make("example1_gap_above_linear", F - flin, 0.5 - 1e-12,
                        dict(ctx, F=F, Flin_1=flin, gap=F - flin), tol=0.0),
    ]
    # Lipschitz constants on the box [-2/eps, 2/eps]^2
    mu = estimate_lipschitz(ResidualParams.zeros(1, 1), 2.0 / eps, fmap, loss, data,
                            samples=samples, rng=seed, norm="linf")
    b = float(np.hypot(0.0, 1.0 / eps))
    cert = classify_sopsp(p, fmap, loss, data, mu.mu2, mu.mu0, mu.mu1, b=b, r=1.0)
    checks.append(BoundCheck.make("example1_certificate_eps", eps * eps / mu.mu2, cert.epsilon,
                                  dict(ctx, certificate=cert.to_dict())))
    checks.append(thm3_bound(cert, F, flin, eps=eps, seed=seed))
    return checks


def figure1_artifacts(out_dir, eps: float = 1.0, lam: float = 0.5, radius: float = 2.0,
                      half_range: float = 3.0, step: float = 0.05,
                      fit_weight: float = 2.0) -> dict:
    """Write panel_a/b/c.csv and minima.json; return the minima summary.

    Panels: (a) the fit term, (b) fit + (lam/2)(w^2 + v^2), (c) the fit term
    on the ball of the given radius. The default ``fit_weight=2`` uses the
    un-halved fit term (w(1 + v) - 1)^2 of the figure.
    """
    os.makedirs(out_dir, exist_ok=True)
    inst = Example1Instance(eps)
    plain = RegularizedObjective(inst, fit_weight=fit_weight)
    reg = RegularizedObjective(inst, lam=lam, fit_weight=fit_weight)
    ball = RegularizedObjective(inst, constraint_radius=radius, fit_weight=fit_weight)
    rng = (-half_range, half_range)
    for name, obj in (("panel_a", plain), ("panel_b", reg), ("panel_c", ball)):
        contour_grid(obj, rng, rng, step).write_csv(os.path.join(out_dir, f"{name}.csv"))

    basin_start = (1.0, 0.0)
    spurious_start = (-1.0, -1.6)
    found = {
        "a_global_basin": find_local_min(plain, basin_start),
        "a_saddle": find_local_min(plain, (0.0, -1.0 / eps)),
        "b_basin": find_local_min(reg, basin_start),
        "b_spurious": find_local_min(reg, spurious_start),
        "c_basin": find_local_min(ball, basin_start, mode=radius),
        "c_spurious": find_local_min(ball, spurious_start, mode=radius),
    }
    summary = {"eps": eps, "lambda": lam, "radius": radius, "fit_weight": fit_weight,
               "minima": {k: v.to_dict() for k, v in found.items()},
               "excess_regularized": found["b_spurious"].value - found["b_basin"].value,
               "excess_constrained": found["c_spurious"].value - found["c_basin"].value}
    write_json(os.path.join(out_dir, "minima.json"), summary)
    return summary
