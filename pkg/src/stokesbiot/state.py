"""Coefficient vectors of all fields at one time level."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .elements import FIELDS, FeSystem


@dataclass
class SolutionState:
    t: float
    sigma_f: np.ndarray
    u_p: np.ndarray
    sigma_p: np.ndarray
    p_p: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    lam: np.ndarray
    u_f: np.ndarray
    u_s: np.ndarray
    gamma_f: np.ndarray
    gamma_p: np.ndarray
    eta_p: np.ndarray = field(default=None)  # (2 * n_poro_triangles,), elementwise constant
    p_f: np.ndarray = field(default=None)  # (n_fluid_triangles, 3) vertex values per element

    @classmethod
    def zeros(cls, fe: FeSystem, t: float = 0.0) -> "SolutionState":
        return cls.from_vector(fe, np.zeros(fe.n_dofs), t)

    @classmethod
    def from_vector(cls, fe: FeSystem, x: np.ndarray, t: float, eta_p=None, p_f=None) -> "SolutionState":
        parts = fe.split(np.asarray(x, dtype=float))
        if eta_p is None:
            eta_p = np.zeros(2 * fe.mesh_p.n_triangles)
        if p_f is None:
            p_f = np.zeros((fe.mesh_f.n_triangles, 3))
        return cls(t=float(t), eta_p=eta_p, p_f=p_f, **parts)

    def vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, n) for n in FIELDS])

    def copy(self) -> "SolutionState":
        kw = {f.name: (np.array(getattr(self, f.name)) if isinstance(getattr(self, f.name), np.ndarray) else getattr(self, f.name)) for f in fields(self)}
        return replace(self, **kw)
