"""Local elimination of stresses, Darcy fluxes and rotations.

With the vertex quadrature rule the mass blocks ``A_{sigma_f sigma_f}``,
``A_{u_p u_p}`` and ``A_{sigma_p sigma_p}`` couple only DOFs at the same
mesh vertex.  Inverting those small blocks eliminates (sigma_f, u_p,
sigma_p); the resulting rotation blocks are then diagonal (one scalar DOF
per vertex), which eliminates (gamma_f, gamma_p).  What remains is a
nonsymmetric positive definite system in

    (p_p, phi, theta, lam, u_f, u_s).

The fluid compliance ``(dev sigma, dev tau) / (2 mu)`` vanishes on
``lambda_v I`` at every vertex ``v``, so its vertex blocks are only positive
semidefinite.  The blocks are therefore built from the shifted form
``a_f + eps (tr sigma, tr tau) / (4 mu)``, which is vertex-local and SPD.
The reduced operator of the shifted system is then used for defect
correction on the unshifted monolithic residual; the iteration contracts
by roughly ``2 eps`` per sweep and converges to the unshifted discrete
solution, so nothing about the discretization changes.

Everything here is sparse linear algebra on the constrained step matrix;
nothing is densified globally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from . import forms
from .elements import FeSystem
from .errors import AssemblyError, LinearSolveError, ReductionError
from .system import BlockSystem, LinearSolver, SolverOptions

ELIMINATED = ("sigma_f", "u_p", "sigma_p")
ROTATIONS = ("gamma_f", "gamma_p")
TRACE_SHIFT = 1e-3


@dataclass
class VertexBlocks:
    """Per-vertex blocks of the eliminated mass matrices.

    ``index`` holds global DOF ids of the eliminated set, ordered; each block
    ``b`` covers positions ``positions[b]`` of ``index`` and belongs to
    ``(fields[b], vertices[b])``.
    """

    index: np.ndarray
    positions: list
    inverses: list
    fields: list
    vertices: list
    inverse: sps.csr_matrix
    matrix: sps.csr_matrix  # step matrix including the trace shift
    shift: float = TRACE_SHIFT

    def n_blocks(self) -> int:
        return len(self.positions)

    def stored_entries(self) -> int:
        return int(sum(B.size for B in self.inverses))


def _free_mask(n: int, fixed: np.ndarray) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    return mask


def trace_shift(sys: BlockSystem, eps: float = TRACE_SHIFT) -> sps.csr_matrix:
    """Global ``eps (tr sigma_f, tr tau_f) / (4 mu)`` with constrained rows removed."""
    fe = sys.fe
    if sys.operator is None:
        raise ReductionError("step system carries no operator (coefficients unknown)")
    n = fe.n_dofs
    P = forms.assemble_af_trace(fe, sys.operator.coeff, "vertexquad").tocoo()
    o = fe.offsets["sigma_f"]
    G = sps.coo_matrix((eps * P.data, (P.row + o, P.col + o)), shape=(n, n)).tocsr()
    keep = np.ones(n)
    keep[sys.fixed] = 0.0
    D = sps.diags(keep)
    return (D @ G @ D).tocsr()


def build_vertex_blocks(
    sys: BlockSystem, fe: FeSystem, shift: float = TRACE_SHIFT, check_tol: float = 1e-12
) -> VertexBlocks:
    if not shift > 0:
        raise ReductionError("the fluid trace shift must be positive")
    K = (sys.matrix + trace_shift(sys, shift)).tocsr()
    free = _free_mask(fe.n_dofs, sys.fixed)
    idx, key_field, key_vertex = [], [], []
    for k, name in enumerate(ELIMINATED):
        g = fe.offsets[name] + np.arange(fe.dims[name])
        v = fe.dof_vertex(name)
        keep = free[g]
        idx.append(g[keep])
        key_field.append(np.full(keep.sum(), k))
        key_vertex.append(v[keep])
    index = np.concatenate(idx)
    kf = np.concatenate(key_field)
    kv = np.concatenate(key_vertex)
    key = kf * (max(fe.mesh_f.n_vertices, fe.mesh_p.n_vertices) + 1) + kv

    A = K[index][:, index].tocoo()
    scale = np.abs(A.data).max() if A.nnz else 1.0
    bad = (key[A.row] != key[A.col]) & (np.abs(A.data) > 1e-14 * scale)
    if bad.any():
        raise AssemblyError(
            f"{int(bad.sum())} mass-matrix entries couple different vertices; "
            "the local elimination needs vertex-quadrature assembly"
        )

    ukeys, inv = np.unique(key, return_inverse=True)
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(len(ukeys) + 1))
    positions = [order[bounds[b] : bounds[b + 1]] for b in range(len(ukeys))]

    sizes = np.array([len(p) for p in positions])
    # block id, slot within its size group and local position of every E dof
    local = np.empty(len(index), dtype=int)
    slot = np.empty(len(positions), dtype=int)
    for s in np.unique(sizes):
        which = np.flatnonzero(sizes == s)
        slot[which] = np.arange(len(which))
    for b, p in enumerate(positions):
        local[p] = np.arange(len(p))
    inverses: list = [None] * len(positions)
    rows, cols, vals = [], [], []
    for s in np.unique(sizes):
        which = np.flatnonzero(sizes == s)
        P = np.stack([positions[b] for b in which])  # (nb, s)
        blocks = np.zeros((len(which), s, s))
        sel = sizes[inv[A.row]] == s
        r, c = A.row[sel], A.col[sel]
        np.add.at(blocks, (slot[inv[r]], local[r], local[c]), A.data[sel])
        try:
            Binv = np.linalg.inv(blocks)
        except np.linalg.LinAlgError as exc:
            raise ReductionError("singular vertex block in the mass matrix") from exc
        # stiff but regular blocks (nearly incompressible solid) are fine;
        # reject blocks that are singular to working precision
        cond = np.linalg.cond(blocks).max()
        err = np.abs(np.einsum("bij,bjk->bik", Binv, blocks) - np.eye(s)).max()
        if not np.isfinite(err) or cond * check_tol > 1.0 or err > check_tol * cond:
            raise ReductionError(f"ill-conditioned vertex block (cond {cond:.2e}, |B A - I| = {err:.2e})")
        for n, b in enumerate(which):
            inverses[b] = Binv[n]
        rows.append(np.repeat(P, s, axis=1).ravel())
        cols.append(np.tile(P, (1, s)).ravel())
        vals.append(Binv.ravel())
    m = len(index)
    inverse = sps.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m)
    ).tocsr()
    return VertexBlocks(
        index=index,
        positions=positions,
        inverses=inverses,
        fields=[ELIMINATED[kf[p[0]]] for p in positions],
        vertices=[int(kv[p[0]]) for p in positions],
        inverse=inverse,
        matrix=K,
        shift=shift,
    )


@dataclass
class ReducedOperator:
    """Reduced matrix and the operators needed to transform RHS and recover."""

    fe: FeSystem
    matrix: sps.csr_matrix
    R: np.ndarray  # global ids of reduced unknowns
    G: np.ndarray  # global ids of rotations
    E: np.ndarray  # global ids of eliminated stresses/fluxes
    fixed: np.ndarray
    Einv: sps.csr_matrix
    A_QE: sps.csr_matrix
    A_EQ: sps.csr_matrix
    S_RG: sps.csr_matrix
    S_GR: sps.csr_matrix
    d_G: np.ndarray
    intermediate: sps.csr_matrix | None = None

    def reduce_rhs(self, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Reduced RHS and the intermediate RHS of the rotations."""
        Q = np.concatenate([self.R, self.G])
        b1 = b[Q] - self.A_QE @ (self.Einv @ b[self.E])
        nR = len(self.R)
        bR, bG = b1[:nR], b1[nR:]
        return bR - self.S_RG @ (bG / self.d_G), bG

    def recover(self, x_R: np.ndarray, b: np.ndarray, fixed_values: np.ndarray) -> np.ndarray:
        """Full coefficient vector from the reduced solution."""
        _, bG = self.reduce_rhs(b)
        gam = (bG - self.S_GR @ x_R) / self.d_G
        x = np.zeros(self.fe.n_dofs)
        x[self.fixed] = fixed_values
        x[self.R] = x_R
        x[self.G] = gam
        xQ = np.concatenate([x_R, gam])
        x[self.E] = self.Einv @ (b[self.E] - self.A_EQ @ xQ)
        return x


@dataclass
class ReducedSystem:
    """Reduced operator plus the step system it was built for.

    ``rhs`` is the reduced right-hand side of the shifted system; ``base``
    is the unshifted constrained step matrix used for defect correction.
    """

    operator: ReducedOperator
    base: sps.csr_matrix
    rhs: np.ndarray
    full_rhs: np.ndarray
    fixed_values: np.ndarray
    t: float = 0.0

    @property
    def matrix(self) -> sps.csr_matrix:
        return self.operator.matrix

    def with_system(self, sys: BlockSystem) -> "ReducedSystem":
        """Same operator, right-hand side of another step."""
        rhs, _ = self.operator.reduce_rhs(sys.rhs)
        return ReducedSystem(self.operator, self.base, rhs, sys.rhs, sys.fixed_values, sys.t)


@dataclass
class ReducedSolution:
    """Reduced unknowns and the full vector assembled during correction."""

    values: np.ndarray
    full: np.ndarray
    sweeps: int
    residual: float


def eliminate(sys: BlockSystem, blocks: VertexBlocks, keep_intermediate: bool = False) -> ReducedSystem:
    fe = sys.fe
    n = fe.n_dofs
    free = _free_mask(n, sys.fixed)
    E = blocks.index
    G = np.concatenate([fe.offsets[g] + np.arange(fe.dims[g]) for g in ROTATIONS])
    inE = np.zeros(n, dtype=bool)
    inE[E] = True
    inG = np.zeros(n, dtype=bool)
    inG[G] = True
    R = np.flatnonzero(free & ~inE & ~inG)
    Q = np.concatenate([R, G])

    A = blocks.matrix
    A_QE = A[Q][:, E].tocsr()
    A_EQ = A[E][:, Q].tocsr()
    S1 = (A[Q][:, Q] - A_QE @ blocks.inverse @ A_EQ).tocsr()
    S1.eliminate_zeros()

    nR = len(R)
    S_GG = S1[nR:, nR:].tocoo()
    d_G = S1[nR:, nR:].diagonal()
    scale = np.abs(d_G).max() if len(d_G) else 1.0
    off = S_GG.row != S_GG.col
    if np.any(np.abs(S_GG.data[off]) > 1e-12 * scale):
        raise AssemblyError("rotation Schur block is not diagonal; vertex quadrature required")
    bad = np.flatnonzero(d_G <= 1e-13 * scale)
    if len(bad):
        raise ReductionError(f"singular rotation block at {len(bad)} vertices (all stress DOFs constrained?)")
    S_RG = S1[:nR, nR:].tocsr()
    S_GR = S1[nR:, :nR].tocsr()
    Ared = (S1[:nR, :nR] - S_RG @ sps.diags(1.0 / d_G) @ S_GR).tocsr()
    Ared.eliminate_zeros()
    op = ReducedOperator(
        fe=fe,
        matrix=Ared,
        R=R,
        G=G,
        E=E,
        fixed=sys.fixed,
        Einv=blocks.inverse,
        A_QE=A_QE,
        A_EQ=A_EQ,
        S_RG=S_RG,
        S_GR=S_GR,
        d_G=d_G,
        intermediate=S1 if keep_intermediate else None,
    )
    rhs, _ = op.reduce_rhs(sys.rhs)
    return ReducedSystem(op, sys.matrix.tocsr(), rhs, sys.rhs, sys.fixed_values, sys.t)


def solve_reduced(
    red: ReducedSystem,
    opts: SolverOptions | None = None,
    solver: LinearSolver | None = None,
    tol: float = 1e-13,
    max_sweeps: int = 50,
) -> ReducedSolution:
    """Solve the step system through the reduced operator.

    Each sweep solves one reduced system for the current monolithic
    residual and recovers the eliminated fields; the loop stops once the
    unshifted residual is below ``tol`` relative to the right-hand side.
    """
    solver = solver or LinearSolver(red.matrix, opts)
    op = red.operator
    b = red.full_rhs
    nb = np.linalg.norm(b)
    x = np.zeros_like(b)
    if nb == 0.0:
        return ReducedSolution(np.zeros(len(op.R)), x, 0, 0.0)
    r = b.copy()
    res = 1.0
    for sweep in range(1, max_sweeps + 1):
        rR, _ = op.reduce_rhs(r)
        dR = solver.solve(rR)
        x += op.recover(dR, r, r[op.fixed])
        r = b - red.base @ x
        new = np.linalg.norm(r) / nb
        if new <= tol:
            return ReducedSolution(x[op.R].copy(), x, sweep, new)
        if sweep > 3 and new > 0.5 * res:
            break
        res = new
    raise LinearSolveError("defect correction on the reduced system stagnated", new)


def recover(red: ReducedSystem, sol: ReducedSolution):
    """Full state (as :class:`SolutionState`) from a reduced solve."""
    from .state import SolutionState

    return SolutionState.from_vector(red.operator.fe, sol.full, red.t)


def rayleigh_quotients(A: sps.spmatrix, n_samples: int = 1000, seed: int = 0) -> np.ndarray:
    """``q^T A q / q^T q`` for random Gaussian vectors."""
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((A.shape[0], n_samples))
    AQ = A @ Q
    return np.einsum("ij,ij->j", Q, AQ) / np.einsum("ij,ij->j", Q, Q)
