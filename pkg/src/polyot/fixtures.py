"""Reproducible instances used by the tests, the acceptance suite and the CLI."""
from __future__ import annotations

import math

import numpy as np

from .errors import InvalidInputError
from .measures import DiscreteMeasure, grid_sample, shift_measure
from .polynorm import PolyhedralNorm, l1_norm


def random_norm(rng, dim: int, n_vertices: int = 12, symmetric: bool | None = None) -> PolyhedralNorm:
    """Random polyhedral norm with at most ``n_vertices`` dual vertices.

    Dual vertices are random directions with random lengths in ``[0.5, 2]``;
    draws are repeated until the origin is interior to their hull.
    """
    if symmetric is None:
        symmetric = bool(rng.random() < 0.5)
    n_vertices = max(n_vertices, 2 * dim if symmetric else dim + 1)
    for _ in range(200):
        k = int(rng.integers(dim + 1, n_vertices + 1))
        if symmetric:
            k = max(dim, k // 2)
        V = rng.normal(size=(k, dim))
        V /= np.linalg.norm(V, axis=1)[:, None]
        V *= rng.uniform(0.5, 2.0, size=(k, 1))
        if symmetric:
            V = np.vstack([V, -V])
        try:
            N = PolyhedralNorm(V, name="random")
        except InvalidInputError:
            continue
        return N
    raise RuntimeError("could not draw a norm")


def random_measure(rng, n: int, dim: int, integer: bool = False) -> DiscreteMeasure:
    if integer:
        P = rng.integers(0, max(3, n), size=(n, dim)).astype(float)
    else:
        P = rng.random((n, dim))
    w = rng.uniform(0.1, 1.0, size=n)
    return DiscreteMeasure(P, w / w.sum())


def random_instance(seed: int, n_max: int = 50, d_max: int = 3, vertices_max: int = 12):
    """``(mu, nu, norm)`` with sizes, dimension and norm drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, d_max + 1))
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, n_max + 1))
    norm = random_norm(rng, d, vertices_max)
    return random_measure(rng, n, d), random_measure(rng, m, d), norm


def uniform_pair(seed: int, n: int, dim: int = 2):
    """Two uniform ``n``-point measures with random positions in the unit cube."""
    rng = np.random.default_rng(seed)
    return (DiscreteMeasure.uniform(rng.random((n, dim))), DiscreteMeasure.uniform(rng.random((n, dim))))


def shift_instance(n_per_axis: int = 8, shift=(2.0, 1.0)):
    """Uniform grid on the unit square and its translate, with the l1 norm."""
    mu = grid_sample("uniform", [(0.0, 1.0), (0.0, 1.0)], n_per_axis)
    return mu, shift_measure(mu, shift), l1_norm(2)


def chain3():
    """Uniform measures on {0, 1, 2} and {3, 4, 5} on the line."""
    mu = DiscreteMeasure.uniform(np.array([[0.0], [1.0], [2.0]]))
    nu = DiscreteMeasure.uniform(np.array([[3.0], [4.0], [5.0]]))
    return mu, nu, l1_norm(1)


def rotated_uniform(n_per_axis: int, angle: float, center=(0.5, 0.5), offset=(0.0, 0.0)):
    """Uniform grid on the unit square and its rotation by ``angle`` about ``center`` (plus ``offset``)."""
    mu = grid_sample("uniform", [(0.0, 1.0), (0.0, 1.0)], n_per_axis)
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    ctr = np.asarray(center, float)
    P = (mu.points - ctr) @ R.T + ctr + np.asarray(offset, float)
    return mu, DiscreteMeasure(P, mu.weights)
