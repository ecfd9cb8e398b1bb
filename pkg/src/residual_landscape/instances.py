"""Random instance and dataset generators shared by the sweeps and the CLI."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .model import LOSS_FAMILIES, Dataset, FeatureMap, Loss, ResidualParams

MAP_CHOICES = ("scale", "one_hidden", "random_features", "zero")
ACTIVATION_CHOICES = ("tanh", "relu", "softplus")
GENERATORS = ("linear", "nonlinear", "classification")


def trial_rng(seed: int, index: int) -> np.random.Generator:
    """Philox stream for trial ``index``; identical to the index-th child of
    ``SeedSequence(seed).spawn(...)``, so trials are independent of job layout."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def synthetic_dataset(rng, n: int, d: int, generator: str = "linear",
                      noise: float = 0.0) -> Dataset:
    """Gaussian inputs scaled to ||x|| ~ 1 with

    linear          y = w0 . x + noise, ||w0|| = 1 (realizable when noise = 0)
    nonlinear       y = sin(3 w0 . x) + (w1 . x)^2 + noise
    classification  y = sign(w0 . x) in {-1, +1}, labels flipped with probability ``noise``
    """
    if generator not in GENERATORS:
        raise ValueError(f"unknown generator {generator!r}")
    X = rng.normal(size=(n, d)) / np.sqrt(d)
    w0 = rng.normal(size=d)
    w0 /= np.linalg.norm(w0)
    if generator == "linear":
        y = X @ w0 + noise * rng.normal(size=n)
    elif generator == "nonlinear":
        w1 = rng.normal(size=d)
        w1 /= np.linalg.norm(w1)
        y = np.sin(3.0 * (X @ w0)) + (X @ w1) ** 2 + noise * rng.normal(size=n)
    else:
        y = np.where(X @ w0 >= 0, 1.0, -1.0)
        flip = rng.uniform(size=n) < noise
        y[flip] = -y[flip]
    return Dataset(X, y)


def dataset_for_loss(rng, n: int, d: int, loss: Loss) -> Dataset:
    gen = "nonlinear" if loss.family == "squared" else "classification"
    return synthetic_dataset(rng, n, d, gen, noise=0.1)


def random_feature_map(rng, d: int, k: int, family: str,
                       activation: str | None = None) -> FeatureMap:
    if activation is None:
        activation = ACTIVATION_CHOICES[rng.integers(len(ACTIVATION_CHOICES))]
    if family == "scale":
        return FeatureMap.scaled(d, float(rng.uniform(-2.0, 2.0)))
    if family == "zero":
        return FeatureMap.zero(d, k)
    if family == "random_features":
        return FeatureMap.random_features(d, k, rng, activation=activation)
    A = rng.normal(size=(k, d)) / np.sqrt(d)
    return FeatureMap.one_hidden(A, rng.normal(size=k) * 0.5, activation=activation)


def random_loss(rng, family: str | None = None) -> Loss:
    if family is None:
        family = LOSS_FAMILIES[rng.integers(len(LOSS_FAMILIES))]
    width = float(rng.uniform(0.2, 2.0)) if family == "smoothed_hinge" else 1.0
    return Loss(family, width)


class Instance(NamedTuple):
    fmap: FeatureMap
    loss: Loss
    data: Dataset


def random_instance(rng, d_max: int = 8, k_max: int = 8, n: int = 32,
                    loss_family: str | None = None, map_family: str | None = None,
                    map_choices=MAP_CHOICES, d: int | None = None,
                    k: int | None = None) -> Instance:
    d = int(rng.integers(1, d_max + 1)) if d is None else d
    if map_family is None:
        map_family = map_choices[rng.integers(len(map_choices))]
    if map_family == "scale":
        k = d
    elif k is None:
        k = int(rng.integers(1, k_max + 1))
    loss = random_loss(rng, loss_family)
    fmap = random_feature_map(rng, d, k, map_family)
    return Instance(fmap, loss, dataset_for_loss(rng, n, d, loss))


def random_params(rng, d: int, k: int, scale: float = 1.0) -> ResidualParams:
    """Gaussian (w, V) with w bounded away from 0."""
    w = rng.normal(size=d) * scale
    while np.linalg.norm(w) < 1e-3:
        w = rng.normal(size=d) * scale
    return ResidualParams(w, rng.normal(size=(d, k)) * scale / np.sqrt(max(k, 1)))
