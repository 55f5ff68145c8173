"""Quadrature rules on the reference triangle and the unit segment.

The reference triangle has vertices (0, 0), (1, 0), (0, 1).  Besides the
Gauss-type rules used for exact assembly and error integration, the vertex
rule ``|E|/3 * sum_i f(r_i) g(r_i)`` is provided; it is what localizes the
mass matrices to one block per mesh vertex.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import ConfigError

MAX_DEGREE = 10


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def __len__(self) -> int:
        return len(self.weights)


def _rule(points, weights, degree) -> QuadRule:
    p = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    p.setflags(write=False)
    w.setflags(write=False)
    return QuadRule(p, w, degree)


def _check_degree(degree: int) -> int:
    if int(degree) != degree or not 0 <= degree <= MAX_DEGREE:
        raise ConfigError(f"unsupported quadrature degree {degree!r} (0..{MAX_DEGREE})")
    return int(degree)


@lru_cache(maxsize=None)
def gauss_seg(degree: int) -> QuadRule:
    """Gauss-Legendre rule on [0, 1]; points have shape (n,)."""
    degree = _check_degree(degree)
    n = max(1, (degree + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(n)
    return _rule(0.5 * (x + 1.0), 0.5 * w, 2 * n - 1)


@lru_cache(maxsize=None)
def gauss_tri(degree: int) -> QuadRule:
    """Rule on the reference triangle exact for polynomials of ``degree``.

    Degrees 0-1 give the centroid rule, degree 2 the classical interior
    3-point rule; higher degrees use a collapsed (Duffy) tensor Gauss rule.
    """
    degree = _check_degree(degree)
    if degree <= 1:
        return _rule([[1.0 / 3.0, 1.0 / 3.0]], [0.5], 1)
    if degree == 2:
        a, b = 1.0 / 6.0, 2.0 / 3.0
        return _rule([[a, a], [b, a], [a, b]], [1.0 / 6.0] * 3, 2)
    nu = (degree + 2) // 2
    nv = (degree + 3) // 2
    xu, wu = np.polynomial.legendre.leggauss(nu)
    xv, wv = np.polynomial.legendre.leggauss(nv)
    xu, wu = 0.5 * (xu + 1.0), 0.5 * wu
    xv, wv = 0.5 * (xv + 1.0), 0.5 * wv
    U, V = np.meshgrid(xu, xv, indexing="ij")
    WU, WV = np.meshgrid(wu, wv, indexing="ij")
    pts = np.stack([(U * (1.0 - V)).ravel(), V.ravel()], axis=1)
    wts = (WU * WV * (1.0 - V)).ravel()
    return _rule(pts, wts, degree)


@lru_cache(maxsize=None)
def vertex_rule() -> QuadRule:
    """Trapezoidal vertex rule: weight 1/6 at each reference vertex."""
    return _rule([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [1.0 / 6.0] * 3, 1)


def rule_for(mode: str, degree: int = 4) -> QuadRule:
    """``"vertexquad"`` -> vertex rule; ``"exact"`` -> Gauss rule of ``degree``."""
    if mode == "vertexquad":
        return vertex_rule()
    if mode == "exact":
        return gauss_tri(degree)
    raise ConfigError(f"unknown assembly mode {mode!r}")


def map_points(mesh, ref_points: np.ndarray) -> np.ndarray:
    """Physical images (M, nq, 2) of reference points on every triangle."""
    p = mesh.vertices[mesh.triangles]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    return p[:, None, 0, :] + np.einsum("tij,qj->tqi", J, ref_points)


def vertex_quad_pairing(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    g: Callable[[np.ndarray, np.ndarray], np.ndarray],
    mesh,
) -> float:
    """Sum over triangles of ``|E|/3 * sum_i f(r_i) : g(r_i)``.

    ``f`` and ``g`` are called as ``f(points, cells)`` with points (n, 2) and
    the owning triangle of every point, so fields that are discontinuous
    across elements are evaluated from inside each element.  Values may be
    scalars, vectors or tensors; they are fully contracted.
    """
    pts = mesh.vertices[mesh.triangles].reshape(-1, 2)
    cells = np.repeat(np.arange(mesh.n_triangles), 3)
    fv = np.asarray(f(pts, cells), dtype=float).reshape(len(pts), -1)
    gv = np.asarray(g(pts, cells), dtype=float).reshape(len(pts), -1)
    w = np.repeat(mesh.areas() / 3.0, 3)
    return float(np.sum(w * np.einsum("ij,ij->i", fv, gv)))
