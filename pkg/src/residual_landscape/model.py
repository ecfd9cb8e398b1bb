"""Data, losses, feature maps and parameters for the residual predictor

    x -> w^T (x + V f(x))

All objects are immutable after construction and evaluation is pure.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from .errors import DomainError, ShapeError

LOSS_FAMILIES = ("squared", "logistic", "smoothed_hinge")
MAP_FAMILIES = ("scale", "one_hidden", "random_features", "zero")
ACTIVATIONS = ("tanh", "softplus", "relu")


def tree_sum(a, axis=0):
    """Sum along ``axis`` with a fixed pairwise tree.

    The reduction order depends only on the length of the axis, so results
    are reproducible bit for bit and rounding grows like log(n).
    """
    a = np.moveaxis(np.asarray(a, dtype=float), axis, 0)
    n = a.shape[0]
    if n == 0:
        return np.zeros(a.shape[1:])
    while n > 1:
        h = n // 2
        s = a[:h] + a[h:2 * h]
        if n % 2:
            s = np.concatenate([s, a[2 * h:]], axis=0)
        a = s
        n = a.shape[0]
    return a[0]


def tree_mean(a, axis=0):
    a = np.asarray(a, dtype=float)
    return tree_sum(a, axis) / a.shape[axis]


def _freeze(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Samples and datasets
# ---------------------------------------------------------------------------

class LabeledSample(NamedTuple):
    x: np.ndarray
    y: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """Finite empirical distribution; expectations are uniform averages."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ShapeError(f"X {X.shape} and y {y.shape} are incompatible")
        if X.shape[0] == 0 or X.shape[1] == 0:
            raise ShapeError("dataset must be non-empty with d >= 1")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DomainError("dataset entries must be finite")
        object.__setattr__(self, "X", _freeze(X))
        object.__setattr__(self, "y", _freeze(y))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def samples(self) -> list[LabeledSample]:
        return [LabeledSample(x, float(t)) for x, t in zip(self.X, self.y)]

    def __iter__(self) -> Iterator[LabeledSample]:
        return iter(self.samples)

    def __len__(self) -> int:
        return self.n

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample | tuple]) -> "Dataset":
        if not samples:
            raise ShapeError("dataset must be non-empty")
        X = [np.atleast_1d(np.asarray(s[0], dtype=float)) for s in samples]
        if len({x.shape for x in X}) != 1:
            raise ShapeError("all samples must share the input dimension")
        return cls(np.stack(X), np.array([float(s[1]) for s in samples]))

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        """Read ``x1,...,xd,y`` with a header row."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise ShapeError(f"{path}: need a header and at least one sample")
        header = [h.strip() for h in rows[0]]
        d = len(header) - 1
        if d < 1 or header[-1] != "y" or header[:-1] != [f"x{i + 1}" for i in range(d)]:
            raise ShapeError(f"{path}: header must be x1,...,xd,y")
        body = [r for r in rows[1:] if r]
        if any(len(r) != d + 1 for r in body):
            raise ShapeError(f"{path}: ragged row")
        arr = np.array([[float(v) for v in r] for r in body])
        return cls(arr[:, :d], arr[:, d])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i + 1}" for i in range(self.d)] + ["y"])
            for x, t in zip(self.X, self.y):
                w.writerow([repr(float(v)) for v in x] + [repr(float(t))])


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Loss:
    """A loss l(p; y), convex and twice differentiable in the prediction p.

    ``smoothed_hinge`` with width h is 0 for yp >= 1, (1-yp)^2/(2h) for
    1-h <= yp < 1 and 1 - yp - h/2 below. Its second derivative jumps at
    yp = 1 and yp = 1-h; there we return the value of the branch that
    contains the point.
    """

    family: str = "squared"
    width: float = 1.0

    def __post_init__(self):
        if self.family not in LOSS_FAMILIES:
            raise ValueError(f"unknown loss family {self.family!r}")
        if not self.width > 0:
            raise ValueError("smoothing width must be positive")

    def value(self, p, y):
        p = np.asarray(p, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.family == "squared":
            return 0.5 * (p - y) ** 2
        z = y * p
        if self.family == "logistic":
            return np.logaddexp(0.0, -z)
        h = self.width
        return np.where(z >= 1.0, 0.0,
                        np.where(z >= 1.0 - h, (1.0 - z) ** 2 / (2.0 * h), 1.0 - z - 0.5 * h))

    def d1(self, p, y):
        p = np.asarray(p, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.family == "squared":
            return p - y
        z = y * p
        if self.family == "logistic":
            return -y * expit(-z)
        h = self.width
        return -y * np.where(z >= 1.0, 0.0, np.where(z >= 1.0 - h, (1.0 - z) / h, 1.0))

    def d2(self, p, y):
        p = np.asarray(p, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.family == "squared":
            return np.ones(np.broadcast(p, y).shape)
        z = y * p
        if self.family == "logistic":
            return y * y * expit(z) * expit(-z)
        h = self.width
        return y * y * np.where((z < 1.0) & (z >= 1.0 - h), 1.0 / h, 0.0)

    def d2_sup(self, y_max: float) -> float:
        """Upper bound on l'' over all p for |y| <= y_max."""
        if self.family == "squared":
            return 1.0
        if self.family == "logistic":
            return 0.25 * y_max ** 2
        return y_max ** 2 / self.width


def loss_eval(loss: Loss, p, y, order: int = 0):
    """Value (order 0), first (1) or second (2) derivative of ``loss`` in p."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    pa, ya = np.asarray(p, dtype=float), np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(pa)) and np.all(np.isfinite(ya))):
        raise DomainError("loss arguments must be finite")
    out = (loss.value, loss.d1, loss.d2)[order](pa, ya)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Feature maps
# ---------------------------------------------------------------------------

def _activate(a, kind):
    if kind == "tanh":
        return np.tanh(a)
    if kind == "softplus":
        return np.logaddexp(0.0, a)
    return np.maximum(a, 0.0)


def _activate_slope(a, kind):
    if kind == "tanh":
        return 1.0 - np.tanh(a) ** 2
    if kind == "softplus":
        return expit(a)
    # one-sided (right) derivative at the kink
    return (a >= 0.0).astype(float)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """The inner function f_theta: R^d -> R^k (R^(k+1) with ``bias_augment``).

    Families:
      scale           f(x) = scale * x        (k = d, nothing trainable)
      one_hidden      f(x) = act(A x + c)     (theta = (A, c) trainable)
      random_features f(x) = act(A x + c)     (A, c drawn once and frozen)
      zero            f(x) = 0
    """

    family: str
    d: int
    k: int
    scale: float = 1.0
    A: np.ndarray | None = None
    c: np.ndarray | None = None
    activation: str = "tanh"
    bias_augment: bool = False

    def __post_init__(self):
        if self.family not in MAP_FAMILIES:
            raise ValueError(f"unknown feature map family {self.family!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.d < 1 or self.k < 0:
            raise ShapeError("need d >= 1 and k >= 0")
        if self.family == "scale":
            if self.k != self.d:
                raise ShapeError("scale map needs k == d")
            if not np.isfinite(self.scale):
                raise DomainError("scale must be finite")
        if self.family in ("one_hidden", "random_features"):
            A = np.asarray(self.A, dtype=float)
            c = np.zeros(self.k) if self.c is None else np.asarray(self.c, dtype=float)
            if A.shape != (self.k, self.d) or c.shape != (self.k,):
                raise ShapeError(f"A must be {(self.k, self.d)} and c {(self.k,)}")
            if not (np.all(np.isfinite(A)) and np.all(np.isfinite(c))):
                raise DomainError("feature map parameters must be finite")
            object.__setattr__(self, "A", _freeze(A))
            object.__setattr__(self, "c", _freeze(c))

    # constructors -----------------------------------------------------------
    @classmethod
    def scaled(cls, d: int, eps: float, bias_augment: bool = False) -> "FeatureMap":
        return cls("scale", d, d, scale=float(eps), bias_augment=bias_augment)

    @classmethod
    def zero(cls, d: int, k: int, bias_augment: bool = False) -> "FeatureMap":
        return cls("zero", d, k, bias_augment=bias_augment)

    @classmethod
    def one_hidden(cls, A, c=None, activation="tanh", bias_augment=False) -> "FeatureMap":
        A = np.asarray(A, dtype=float)
        return cls("one_hidden", A.shape[1], A.shape[0], A=A, c=c,
                   activation=activation, bias_augment=bias_augment)

    @classmethod
    def random_features(cls, d, k, rng, activation="tanh", scale=1.0,
                        bias_augment=False) -> "FeatureMap":
        A = rng.normal(size=(k, d)) * (scale / np.sqrt(d))
        c = rng.normal(size=k) * scale
        return cls("random_features", d, k, A=A, c=c, activation=activation,
                   bias_augment=bias_augment)

    # evaluation -------------------------------------------------------------
    @property
    def out_dim(self) -> int:
        return self.k + int(self.bias_augment)

    @property
    def trainable(self) -> bool:
        return self.family == "one_hidden"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ShapeError(f"expected input dimension {self.d}, got {x.shape}")
        if self.family == "scale":
            F = self.scale * X
        elif self.family == "zero":
            F = np.zeros((X.shape[0], self.k))
        else:
            F = _activate(X @ self.A.T + self.c, self.activation)
        if self.bias_augment:
            F = np.concatenate([F, np.ones((X.shape[0], 1))], axis=1)
        return F[0] if single else F

    # trainable parameters ---------------------------------------------------
    def theta(self) -> np.ndarray:
        """Flat trainable parameters (A row-major, then c); empty if frozen."""
        if not self.trainable:
            return np.zeros(0)
        return np.concatenate([self.A.ravel(), self.c])

    def with_theta(self, theta) -> "FeatureMap":
        if not self.trainable:
            return self
        theta = np.asarray(theta, dtype=float)
        kd = self.k * self.d
        return FeatureMap("one_hidden", self.d, self.k, A=theta[:kd].reshape(self.k, self.d),
                          c=theta[kd:], activation=self.activation,
                          bias_augment=self.bias_augment)

    def theta_grad(self, x, upstream) -> np.ndarray:
        """Gradient in theta of ``upstream . f(x)`` for a single input x."""
        if not self.trainable:
            return np.zeros(0)
        pre = self.A @ x + self.c
        g = np.asarray(upstream, dtype=float)[:self.k] * _activate_slope(pre, self.activation)
        return np.concatenate([np.outer(g, x).ravel(), g])

    def feature_bound(self, x_max: float, theta_radius: float | None = None) -> float:
        """Upper bound on ||f(x)|| for ||x|| <= x_max (and ||theta|| <= theta_radius
        for trainable maps)."""
        extra = 1.0 if self.bias_augment else 0.0
        if self.family == "zero":
            base = 0.0
        elif self.family == "scale":
            base = abs(self.scale) * x_max
        else:
            if self.trainable and theta_radius is not None:
                pre = theta_radius * np.hypot(x_max, 1.0)
            else:
                pre = np.linalg.norm(self.A, 2) * x_max + np.linalg.norm(self.c)
            if self.activation == "tanh":
                base = min(np.sqrt(self.k), pre)
            elif self.activation == "relu":
                base = pre
            else:
                base = np.sqrt(self.k) * np.log(2.0) + pre
        return float(np.sqrt(base ** 2 + extra))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.family}|{self.d}|{self.k}|{self.scale!r}|{self.activation}|"
                 f"{self.bias_augment}".encode())
        if self.A is not None:
            h.update(np.ascontiguousarray(self.A).tobytes())
            h.update(np.ascontiguousarray(self.c).tobytes())
        return h.hexdigest()[:16]

    def spec(self) -> dict:
        out = {"family": self.family, "d": self.d, "k": self.k,
               "bias_augment": self.bias_augment, "digest": self.digest()}
        if self.family == "scale":
            out["scale"] = self.scale
        if self.A is not None:
            out["activation"] = self.activation
        return out


def feature_eval(fmap: FeatureMap, x) -> np.ndarray:
    return fmap(x)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ResidualParams:
    """Tunable pair (w, V). Flattened order: w, then V row-major."""

    w: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        V = np.asarray(self.V, dtype=float)
        if V.ndim == 1 and w.shape[0] == 1:
            V = V[None, :]
        if w.ndim != 1 or V.ndim != 2 or V.shape[0] != w.shape[0]:
            raise ShapeError(f"w {w.shape} and V {V.shape} are incompatible")
        object.__setattr__(self, "w", _freeze(w))
        object.__setattr__(self, "V", _freeze(V))

    @property
    def d(self) -> int:
        return self.w.shape[0]

    @property
    def k(self) -> int:
        return self.V.shape[1]

    @property
    def size(self) -> int:
        return self.d * (1 + self.k)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w, self.V.ravel()])

    @classmethod
    def from_flat(cls, flat, d: int, k: int) -> "ResidualParams":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (d * (1 + k),):
            raise ShapeError(f"flat vector of length {flat.shape} does not fit d={d}, k={k}")
        return cls(flat[:d], flat[d:].reshape(d, k))

    @classmethod
    def zeros(cls, d: int, k: int) -> "ResidualParams":
        return cls(np.zeros(d), np.zeros((d, k)))
