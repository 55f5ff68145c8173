"""Monolithic backward-Euler system and sparse linear solvers.

Global ordering (see ``elements.FIELDS``)::

    X = (sigma_f, u_p, sigma_p, p_p), Y = (phi, theta, lam),
    Z = (u_f, u_s, gamma_f, gamma_p)

    [ E/dt + A   B1^T   B^T ] [X]   [F + E X_prev / dt]
    [  -B1        C      0  ] [Y] = [        0        ]
    [  -B         0      0  ] [Z]   [        G        ]

The matrix depends on ``dt`` but not on the step index, so it is assembled
and factorized once per run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from . import forms
from .elements import FIELDS, FeSystem
from .errors import ConfigError, LinearSolveError


@dataclass(frozen=True)
class SolverOptions:
    method: str = "direct"
    rel_tol: float = 1e-10
    max_iter: int = 2000

    def __post_init__(self):
        if self.method not in ("direct", "gmres"):
            raise ConfigError(f"unknown solver method {self.method!r}")
        if not self.rel_tol > 0:
            raise ConfigError("rel_tol must be positive")
        if int(self.max_iter) < 1:
            raise ConfigError("max_iter must be >= 1")


@dataclass
class StepOperator:
    """Time-independent part of the step system for one ``dt``."""

    fe: FeSystem
    coeff: forms.Coefficients
    dt: float
    mode: str
    blocks: dict
    raw: sps.csr_matrix
    history: sps.csr_matrix
    fixed: np.ndarray
    matrix: sps.csr_matrix
    lift: sps.csr_matrix
    iface: forms.InterfaceForms = field(repr=False, default=None)


@dataclass
class BlockSystem:
    """Constrained step system: fixed rows/columns are identity/zero."""

    matrix: sps.csr_matrix
    rhs: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    fe: FeSystem
    operator: StepOperator | None = None
    t: float = 0.0

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.matrix.shape[0], dtype=bool)
        mask[self.fixed] = False
        return np.flatnonzero(mask)


def assemble_blocks(fe: FeSystem, coeff: forms.Coefficients, dt: float, mode: str = "vertexquad") -> tuple[dict, forms.InterfaceForms]:
    """Nonzero blocks of the step matrix keyed by (row field, column field)."""
    Af = forms.assemble_af(fe, coeff, mode)
    Ap = forms.assemble_ap(fe, coeff, mode)
    SS, SP, PP = forms.assemble_ae(fe, coeff, mode)
    bf, bs, bp = forms.assemble_b_div(fe)
    bskf, bskp = forms.assemble_bsk(fe, mode)
    itf = forms.assemble_interface(fe, coeff)
    B = {
        ("sigma_f", "sigma_f"): Af,
        ("sigma_f", "phi"): itf.b_nf,
        ("sigma_f", "u_f"): bf,
        ("sigma_f", "gamma_f"): bskf,
        ("u_p", "u_p"): Ap,
        ("u_p", "p_p"): bp,
        ("u_p", "lam"): itf.b_gamma,
        ("sigma_p", "sigma_p"): SS / dt,
        ("sigma_p", "p_p"): SP / dt,
        ("sigma_p", "theta"): itf.b_np,
        ("sigma_p", "u_s"): bs,
        ("sigma_p", "gamma_p"): bskp,
        ("p_p", "sigma_p"): (SP.T / dt).tocsr(),
        ("p_p", "p_p"): PP / dt,
        ("p_p", "u_p"): (-bp.T).tocsr(),
        ("phi", "sigma_f"): (-itf.b_nf.T).tocsr(),
        ("phi", "phi"): itf.c_bjs[("phi", "phi")],
        ("phi", "theta"): itf.c_bjs[("phi", "theta")],
        ("phi", "lam"): itf.c_gamma_f,
        ("theta", "sigma_p"): (-itf.b_np.T).tocsr(),
        ("theta", "phi"): itf.c_bjs[("theta", "phi")],
        ("theta", "theta"): itf.c_bjs[("theta", "theta")],
        ("theta", "lam"): itf.c_gamma_p,
        ("lam", "u_p"): (-itf.b_gamma.T).tocsr(),
        ("lam", "phi"): (-itf.c_gamma_f.T).tocsr(),
        ("lam", "theta"): (-itf.c_gamma_p.T).tocsr(),
        ("u_f", "sigma_f"): (-bf.T).tocsr(),
        ("u_s", "sigma_p"): (-bs.T).tocsr(),
        ("gamma_f", "sigma_f"): (-bskf.T).tocsr(),
        ("gamma_p", "sigma_p"): (-bskp.T).tocsr(),
    }
    return B, itf


def _bmat(fe: FeSystem, blocks: dict) -> sps.csr_matrix:
    grid = [[None] * len(FIELDS) for _ in FIELDS]
    for i, r in enumerate(FIELDS):
        for j, c in enumerate(FIELDS):
            if (r, c) in blocks:
                grid[i][j] = blocks[(r, c)]
    # sps.bmat needs every block row/column to be sized
    for i, n in enumerate(FIELDS):
        if grid[i][i] is None:
            grid[i][i] = sps.csr_matrix((fe.dims[n], fe.dims[n]))
    A = sps.bmat(grid, format="csr")
    A.sum_duplicates()
    return A


def constrain(A: sps.csr_matrix, fixed: np.ndarray) -> sps.csr_matrix:
    """Zero the rows and columns of ``fixed`` and put ones on their diagonal."""
    n = A.shape[0]
    keep = np.ones(n)
    keep[fixed] = 0.0
    D = sps.diags(keep)
    out = (D @ A @ D + sps.diags(1.0 - keep)).tocsr()
    out.eliminate_zeros()
    return out


def assemble_operator(
    fe: FeSystem, coeff: forms.Coefficients, dt: float, mode: str = "vertexquad"
) -> StepOperator:
    if not dt > 0:
        raise ConfigError(f"time step must be positive, got {dt}")
    blocks, itf = assemble_blocks(fe, coeff, dt, mode)
    raw = _bmat(fe, blocks)
    hist = {k: blocks[k] for k in [("sigma_p", "sigma_p"), ("sigma_p", "p_p"), ("p_p", "sigma_p"), ("p_p", "p_p")]}
    history = _bmat(fe, hist)
    fixed = fe.essential_global()
    return StepOperator(
        fe=fe,
        coeff=coeff,
        dt=dt,
        mode=mode,
        blocks=blocks,
        raw=raw,
        history=history.tocsr(),
        fixed=fixed,
        matrix=constrain(raw, fixed),
        lift=raw[:, fixed].tocsr(),
        iface=itf,
    )


def step_rhs(
    op: StepOperator, data: forms.ProblemData, t: float, prev_vector: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray]:
    """Lifted right-hand side and essential values at time ``t``."""
    b = forms.assemble_rhs(op.fe, data, t)
    if prev_vector is not None:
        b += op.history @ prev_vector
    xf = forms.essential_values(op.fe, data, t)
    if len(op.fixed):
        b -= op.lift @ xf
        b[op.fixed] = xf
    return b, xf


def assemble_step_system(
    fe: FeSystem,
    coeff: forms.Coefficients,
    dt: float,
    prev,
    t: float,
    data: forms.ProblemData | None = None,
    mode: str = "vertexquad",
    operator: StepOperator | None = None,
) -> BlockSystem:
    """Step system at time ``t`` given the previous state (``sigma_p``, ``p_p``)."""
    op = operator if operator is not None else assemble_operator(fe, coeff, dt, mode)
    if op.dt != dt:
        raise ConfigError("operator was assembled for a different time step")
    data = data or forms.ProblemData()
    prev_vec = None
    if prev is not None:
        prev_vec = np.zeros(fe.n_dofs)
        prev_vec[fe.slice("sigma_p")] = prev.sigma_p
        prev_vec[fe.slice("p_p")] = prev.p_p
    b, xf = step_rhs(op, data, t, prev_vec)
    return BlockSystem(op.matrix, b, op.fixed, xf, fe, op, t)


# ---------------------------------------------------------------------------
# solvers


class LinearSolver:
    """Factorize once, solve many times (direct), or run restarted GMRES."""

    def __init__(self, A: sps.spmatrix, opts: SolverOptions | None = None):
        self.A = A.tocsc()
        self.opts = opts or SolverOptions()
        self.factorizations = 0
        self._lu = None
        if self.opts.method == "direct":
            try:
                self._lu = spla.splu(self.A)
            except RuntimeError as exc:
                raise LinearSolveError(f"LU factorization failed: {exc}") from exc
            self.factorizations = 1

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        nb = np.linalg.norm(b)
        if nb == 0.0:
            return np.zeros_like(b)
        if self._lu is not None:
            x = self._lu.solve(b)
            res = np.linalg.norm(self.A @ x - b) / nb
            if not np.isfinite(res) or res > 1e-6:
                raise LinearSolveError("direct solve failed (singular matrix?)", res)
            return x
        x, info = spla.gmres(
            self.A, b, rtol=self.opts.rel_tol, atol=0.0, restart=200, maxiter=self.opts.max_iter
        )
        res = np.linalg.norm(self.A @ x - b) / nb
        if info != 0 or res > 10 * self.opts.rel_tol:
            raise LinearSolveError(f"GMRES did not converge (info={info})", res)
        return x


def solve(sys: BlockSystem | sps.spmatrix, opts: SolverOptions | None = None, rhs=None) -> np.ndarray:
    """Solve a :class:`BlockSystem` (or a bare matrix with ``rhs``)."""
    if isinstance(sys, BlockSystem):
        A, b = sys.matrix, sys.rhs
    else:
        A, b = sys, rhs
    return LinearSolver(A, opts).solve(b)
