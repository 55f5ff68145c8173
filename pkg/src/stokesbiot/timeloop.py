"""Backward-Euler time stepping, initial data and derived fields."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from . import forms
from .elements import (
    FIELDS,
    FeSystem,
    REF_VERTICES,
    evaluate_tensor,
    interpolate_tensor_field,
    interpolate_vector_field,
)
from .errors import ConfigError, SolverError
from .quadrature import gauss_tri, map_points
from .reduction import build_vertex_blocks, eliminate, solve_reduced
from .state import SolutionState
from .system import (
    BlockSystem,
    LinearSolver,
    SolverOptions,
    assemble_operator,
    assemble_step_system,
)

log = logging.getLogger(__name__)

PATHS = ("monolithic", "reduced")
INIT_MODES = ("analytic-interpolate", "discrete-construct")

__all__ = [
    "SolutionState",
    "TimeGrid",
    "InitialData",
    "Problem",
    "TimeStepper",
    "initial_data",
    "interpolate_state",
    "step",
    "run",
    "energy",
    "row_residuals",
    "stationary_residual",
]


class InitialDataError(SolverError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    T: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0 or not self.T > 0:
            raise ConfigError("T and dt must be positive")
        M = round(self.T / self.dt)
        if M < 1 or abs(M * self.dt - self.T) > 1e-9 * self.T:
            raise ConfigError(f"T = {self.T} is not an integer multiple of dt = {self.dt}")

    @property
    def M(self) -> int:
        return int(round(self.T / self.dt))

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.M + 1)


@dataclass
class InitialData:
    """What the initial-data constructors need.

    ``exact`` (analytic mode) exposes ``sigma_f, u_p, sigma_p, p_p, u_f,
    u_s, gamma_f, gamma_p, eta`` as functions of ``(points, t)``.  The
    discrete construction uses ``p_p0(x)``, the interface structure
    velocity ``theta0(x)``, ``div_u_p0(x)`` (divergence of the initial Darcy
    flux) and optional natural displacement data ``eta_bc[tag](x, n)``.
    Missing functions mean zero.
    """

    exact: object = None
    p_p0: Callable | None = None
    theta0: Callable | None = None
    div_u_p0: Callable | None = None
    eta_bc: Mapping[str, Callable] = field(default_factory=dict)

    @classmethod
    def from_exact(cls, exact) -> "InitialData":
        def eta_bc(x, n):
            return exact.eta(x, 0.0)

        return cls(
            exact=exact,
            p_p0=lambda x: exact.p_p(x, 0.0),
            theta0=lambda x: exact.u_s(x, 0.0),
            div_u_p0=lambda x: exact.div_u_p(x, 0.0),
            eta_bc={"*": eta_bc},
        )


# ---------------------------------------------------------------------------
# derived fields


def cell_average(mesh, fn, degree: int = 5) -> np.ndarray:
    """Elementwise means of ``fn(points)``; vector data comes back interleaved."""
    rule = gauss_tri(degree)
    x = map_points(mesh, rule.points)
    v = np.asarray(fn(x.reshape(-1, 2)), dtype=float).reshape(x.shape[:2] + (-1,))
    avg = np.einsum("q,tqc->tc", rule.weights, v) / rule.weights.sum()
    return avg.ravel() if avg.shape[1] > 1 else avg[:, 0]


def fluid_pressure(fe: FeSystem, coeff: forms.Coefficients, sigma_f: np.ndarray, q_f, t: float) -> np.ndarray:
    """``p_f = -(tr sigma_f - 2 mu q_f) / 2`` at the vertices of each fluid element."""
    tr = forms.trace(evaluate_tensor(fe.bdm_f, sigma_f, REF_VERTICES))  # (M, 3)
    if q_f is not None:
        x = fe.mesh_f.vertices[fe.mesh_f.triangles]
        q = np.asarray(q_f(x.reshape(-1, 2), t), dtype=float).reshape(tr.shape)
        tr = tr - 2.0 * coeff.mu * q
    return -0.5 * tr


def interpolate_state(fe: FeSystem, exact, t: float) -> SolutionState:
    """Canonical interpolant of exact fields: BDM1 for stresses and fluxes,
    cell means for P0 fields, vertex values for rotations, nodal values for
    the interface multipliers."""
    mf, mp = fe.mesh_f, fe.mesh_p
    parts = {
        "sigma_f": interpolate_tensor_field(mf, lambda x: exact.sigma_f(x, t)),
        "u_p": interpolate_vector_field(mp, lambda x: exact.u_p(x, t)),
        "sigma_p": interpolate_tensor_field(mp, lambda x: exact.sigma_p(x, t)),
        "p_p": cell_average(mp, lambda x: exact.p_p(x, t)),
        "phi": forms.trace_interpolate(fe, "fluid", lambda x: exact.u_f(x, t)),
        "theta": forms.trace_interpolate(fe, "poro", lambda x: exact.u_s(x, t)),
        "lam": forms.trace_interpolate(fe, "poro", lambda x: exact.p_p(x, t)),
        "u_f": cell_average(mf, lambda x: exact.u_f(x, t)),
        "u_s": cell_average(mp, lambda x: exact.u_s(x, t)),
        "gamma_f": np.asarray(exact.gamma_f(mf.vertices, t), dtype=float),
        "gamma_p": np.asarray(exact.gamma_p(mp.vertices, t), dtype=float),
    }
    eta = cell_average(mp, lambda x: exact.eta(x, t))
    return SolutionState.from_vector(fe, fe.join(parts), t, eta_p=eta)


# ---------------------------------------------------------------------------
# discrete initial data


def _subsolve(fe: FeSystem, names, blocks: dict, rhs: dict, fixed: dict) -> dict:
    """Solve the block system restricted to ``names``.

    ``fixed[name] = (local dofs, values)`` prescribes DOFs (rows replaced by
    identity, columns lifted to the right-hand side).
    """
    dims = [fe.dims[n] for n in names]
    off = np.concatenate([[0], np.cumsum(dims)])
    grid = [[blocks.get((r, c)) for c in names] for r in names]
    for i, n in enumerate(names):
        if grid[i][i] is None:
            grid[i][i] = sps.csr_matrix((dims[i], dims[i]))
    A = sps.bmat(grid, format="csr")
    b = np.concatenate([np.asarray(rhs.get(n, np.zeros(fe.dims[n])), dtype=float) for n in names])
    idx, vals = [], []
    for i, n in enumerate(names):
        if n in fixed:
            d, v = fixed[n]
            idx.append(off[i] + np.asarray(d, dtype=np.int64))
            vals.append(np.asarray(v, dtype=float))
    if idx:
        idx = np.concatenate(idx)
        vals = np.concatenate(vals)
        b = b - A[:, idx] @ vals
        keep = np.ones(A.shape[0])
        keep[idx] = 0.0
        D = sps.diags(keep)
        A = (D @ A @ D + sps.diags(1.0 - keep)).tocsr()
        b[idx] = vals
    A = A.tocsc()
    try:
        x = spla.splu(A).solve(b)
    except RuntimeError:
        x = _singular_solve(A, b, off[1])
    res = np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300)
    if not np.isfinite(res) or res > 1e-8:
        raise InitialDataError(f"initial-data subproblem over {names} failed (residual {res:.2e})")
    return {n: x[off[i] : off[i + 1]] for i, n in enumerate(names)}


def _singular_solve(A, b, n_primal: int, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Solve a saddle-point system whose multipliers are not unique.

    Staircase interfaces can leave a vertex whose stress DOFs all lie on
    the interface; the rotation and trace multipliers there then have a
    local null mode.  A small negative shift on the multiplier diagonal
    makes the matrix invertible, and iterating on the unshifted residual
    converges when the data are compatible with that mode (for example zero
    data).  Otherwise the caller's residual check reports the failure.
    """
    n = A.shape[0]
    scale = abs(A).max()
    d = np.zeros(n)
    d[n_primal:] = -1e-8 * scale
    try:
        lu = spla.splu((A + sps.diags(d)).tocsc())
    except RuntimeError as exc:
        raise InitialDataError(f"initial-data subproblem is singular: {exc}") from exc
    nb = max(np.linalg.norm(b), 1e-300)
    x = np.zeros(n)
    for _ in range(max_iter):
        r = b - A @ x
        if np.linalg.norm(r) <= tol * nb:
            break
        x += lu.solve(r)
    return x


def _essential_split(fe: FeSystem, data: forms.ProblemData, t: float) -> dict:
    vals = forms.essential_values(fe, data, t)
    glob = fe.essential_global()
    out = {}
    for name in ("sigma_f", "u_p", "sigma_p"):
        d = fe.essential[name].dofs if name in fe.essential else np.zeros(0, dtype=np.int64)
        out[name] = (d, vals[np.searchsorted(glob, fe.offsets[name] + d)])
    return out


def _expand_tags(fe: FeSystem, fns: Mapping[str, Callable]) -> dict:
    """Natural elasticity data keyed by tag; ``"*"`` applies to every natural tag."""
    if "*" not in fns:
        return dict(fns)
    return {t: fns["*"] for t in fe.bcs_natural("elasticity")}


def construct_initial(
    fe: FeSystem,
    coeff: forms.Coefficients,
    data: forms.ProblemData,
    init: InitialData,
    mode: str = "vertexquad",
) -> SolutionState:
    """Compatible discrete initial data by four successive solves.

    1. ``theta_0`` projected onto the poro multiplier space.
    2. Coupled Stokes-Darcy problem for (sigma_f, phi, u_f, gamma_f, u_p,
       p_p, lam) with ``theta_0`` as data.
    3. Mixed elasticity for (sigma_p, omega, eta, rho) with ``p_p, phi,
       theta, lam`` as data.
    4. Auxiliary elasticity problem for (u_s, gamma_p).
    """
    t0 = 0.0
    Af = forms.assemble_af(fe, coeff, mode)
    Ap = forms.assemble_ap(fe, coeff, mode)
    SS, SP, _ = forms.assemble_ae(fe, coeff, mode)
    bf, bs, bp = forms.assemble_b_div(fe)
    bskf, bskp = forms.assemble_bsk(fe, mode)
    itf = forms.assemble_interface(fe, coeff)
    ess = _essential_split(fe, data, t0)
    mp = fe.mesh_p

    # step 1
    if init.theta0 is not None:
        theta0 = forms.trace_project(fe, "poro", init.theta0)
    else:
        theta0 = np.zeros(fe.dims["theta"])

    # step 2
    base = forms.assemble_rhs(fe, forms.ProblemData(
        f_f=data.f_f, q_f=data.q_f, fluid_bc=data.fluid_bc, darcy_bc=data.darcy_bc
    ), t0)
    rhs = {n: base[fe.slice(n)] for n in ("sigma_f", "u_p", "u_f")}
    rhs["p_p"] = (
        cell_average(mp, init.div_u_p0) * mp.areas() if init.div_u_p0 is not None else np.zeros(fe.dims["p_p"])
    )
    rhs["phi"] = -(itf.c_bjs[("phi", "theta")] @ theta0)
    rhs["lam"] = itf.c_gamma_p.T @ theta0
    blocks = {
        ("sigma_f", "sigma_f"): Af,
        ("sigma_f", "phi"): itf.b_nf,
        ("sigma_f", "u_f"): bf,
        ("sigma_f", "gamma_f"): bskf,
        ("u_p", "u_p"): Ap,
        ("u_p", "p_p"): bp,
        ("u_p", "lam"): itf.b_gamma,
        ("p_p", "u_p"): -bp.T,
        ("phi", "sigma_f"): -itf.b_nf.T,
        ("phi", "phi"): itf.c_bjs[("phi", "phi")],
        ("phi", "lam"): itf.c_gamma_f,
        ("lam", "u_p"): -itf.b_gamma.T,
        ("lam", "phi"): -itf.c_gamma_f.T,
        ("u_f", "sigma_f"): -bf.T,
        ("gamma_f", "sigma_f"): -bskf.T,
    }
    s2 = _subsolve(
        fe,
        ("sigma_f", "u_p", "p_p", "phi", "lam", "u_f", "gamma_f"),
        blocks,
        rhs,
        {k: ess[k] for k in ("sigma_f", "u_p")},
    )

    # step 3
    eta_bc = {t: (lambda x, n, tt, f=f: f(x, n)) for t, f in _expand_tags(fe, init.eta_bc).items()}
    nat = forms.assemble_rhs(fe, forms.ProblemData(f_p=data.f_p, elastic_bc=eta_bc), t0)
    rhs = {
        "sigma_p": nat[fe.slice("sigma_p")] - SP @ s2["p_p"],
        "theta": -(
            itf.c_bjs[("theta", "phi")] @ s2["phi"]
            + itf.c_bjs[("theta", "theta")] @ theta0
            + itf.c_gamma_p @ s2["lam"]
        ),
        "u_s": nat[fe.slice("u_s")],
    }
    blocks = {
        ("sigma_p", "sigma_p"): SS,
        ("sigma_p", "theta"): itf.b_np,
        ("sigma_p", "u_s"): bs,
        ("sigma_p", "gamma_p"): bskp,
        ("theta", "sigma_p"): -itf.b_np.T,
        ("u_s", "sigma_p"): -bs.T,
        ("gamma_p", "sigma_p"): -bskp.T,
    }
    s3 = _subsolve(fe, ("sigma_p", "theta", "u_s", "gamma_p"), blocks, rhs, {"sigma_p": ess["sigma_p"]})

    # step 4
    vel = forms.assemble_rhs(fe, forms.ProblemData(elastic_bc=data.elastic_bc), t0)
    rhs = {"sigma_p": vel[fe.slice("sigma_p")] - itf.b_np @ theta0}
    blocks = {
        ("sigma_p", "sigma_p"): SS,
        ("sigma_p", "u_s"): bs,
        ("sigma_p", "gamma_p"): bskp,
        ("u_s", "sigma_p"): -bs.T,
        ("gamma_p", "sigma_p"): -bskp.T,
    }
    d = ess["sigma_p"][0]
    s4 = _subsolve(fe, ("sigma_p", "u_s", "gamma_p"), blocks, rhs, {"sigma_p": (d, np.zeros(len(d)))})

    parts = {
        "sigma_f": s2["sigma_f"],
        "u_p": s2["u_p"],
        "sigma_p": s3["sigma_p"],
        "p_p": s2["p_p"],
        "phi": s2["phi"],
        "theta": theta0,
        "lam": s2["lam"],
        "u_f": s2["u_f"],
        "u_s": s4["u_s"],
        "gamma_f": s2["gamma_f"],
        "gamma_p": s4["gamma_p"],
    }
    st = SolutionState.from_vector(fe, fe.join(parts), t0, eta_p=s3["u_s"])
    st.p_f = fluid_pressure(fe, coeff, st.sigma_f, data.q_f, t0)
    return st


def initial_data(
    fe: FeSystem,
    coeff: forms.Coefficients,
    mode: str,
    data: forms.ProblemData | None = None,
    init: InitialData | None = None,
    quad: str = "vertexquad",
) -> SolutionState:
    data = data or forms.ProblemData()
    init = init or InitialData()
    if mode == "analytic-interpolate":
        if init.exact is None:
            raise ConfigError("analytic-interpolate initial data needs exact fields")
        st = interpolate_state(fe, init.exact, 0.0)
        st.p_f = fluid_pressure(fe, coeff, st.sigma_f, data.q_f, 0.0)
        return st
    if mode == "discrete-construct":
        return construct_initial(fe, coeff, data, init, quad)
    raise ConfigError(f"unknown initial-data mode {mode!r}; expected one of {INIT_MODES}")


def stationary_residual(
    fe: FeSystem, coeff: forms.Coefficients, data: forms.ProblemData, state: SolutionState, mode: str = "vertexquad"
) -> float:
    """Max residual of the rows without time derivative at ``state.t``,
    relative to the size of the terms in those rows."""
    op = assemble_operator(fe, coeff, 1.0, mode)
    x = state.vector()
    b = forms.assemble_rhs(fe, data, state.t)
    rows = np.ones(fe.n_dofs, dtype=bool)
    rows[fe.slice("sigma_p")] = False
    rows[fe.slice("p_p")] = False
    rows[op.fixed] = False
    Kx = op.raw @ x
    scale = max(np.abs(b[rows]).max(), (abs(op.raw) @ np.abs(x))[rows].max(), 1e-300)
    return float(np.abs(b - Kx)[rows].max() / scale)


# ---------------------------------------------------------------------------
# stepping


class TimeStepper:
    """Backward-Euler stepper; the step matrix is factorized once per ``dt``."""

    def __init__(
        self,
        fe: FeSystem,
        coeff: forms.Coefficients,
        dt: float,
        data: forms.ProblemData | None = None,
        path: str = "monolithic",
        mode: str = "vertexquad",
        opts: SolverOptions | None = None,
    ):
        if path not in PATHS:
            raise ConfigError(f"unknown solution path {path!r}; expected one of {PATHS}")
        if path == "reduced" and mode != "vertexquad":
            raise ConfigError("the reduced path needs vertex-quadrature assembly")
        self.fe, self.coeff, self.dt = fe, coeff, float(dt)
        self.data = data or forms.ProblemData()
        forms.validate_data(fe, self.data)
        self.path, self.mode = path, mode
        self.opts = opts or SolverOptions()
        self.op = assemble_operator(fe, coeff, self.dt, mode)
        self.reduced = None
        if path == "monolithic":
            self.solver = LinearSolver(self.op.matrix, self.opts)
        else:
            zero = np.zeros(fe.n_dofs)
            probe = BlockSystem(self.op.matrix, zero, self.op.fixed, zero[: len(self.op.fixed)], fe, self.op)
            self.reduced = eliminate(probe, build_vertex_blocks(probe, fe))
            self.solver = LinearSolver(self.reduced.matrix, self.opts)
        self.steps = 0

    @property
    def factorizations(self) -> int:
        return self.solver.factorizations

    def system(self, prev: SolutionState, t_next: float) -> BlockSystem:
        return assemble_step_system(
            self.fe, self.coeff, self.dt, prev, t_next, self.data, self.mode, operator=self.op
        )

    def solve_vector(self, sys: BlockSystem) -> np.ndarray:
        if self.reduced is None:
            return self.solver.solve(sys.rhs)
        return solve_reduced(self.reduced.with_system(sys), solver=self.solver).full

    def step(self, prev: SolutionState, t_next: float | None = None) -> SolutionState:
        t_next = prev.t + self.dt if t_next is None else float(t_next)
        if abs((t_next - prev.t) - self.dt) > 1e-9 * max(self.dt, 1.0):
            raise ConfigError("step size differs from the stepper's dt")
        sys = self.system(prev, t_next)
        try:
            x = self.solve_vector(sys)
        except SolverError as exc:
            raise type(exc)(f"step {self.steps + 1} (t = {t_next:g}): {exc}") from exc
        self.steps += 1
        eta = prev.eta_p + self.dt * self.fe.split(x)["u_s"] if prev.eta_p is not None else None
        st = SolutionState.from_vector(self.fe, x, t_next, eta_p=eta)
        st.p_f = fluid_pressure(self.fe, self.coeff, st.sigma_f, self.data.q_f, t_next)
        return st


def step(
    prev: SolutionState,
    t_next: float,
    fe: FeSystem,
    coeff: forms.Coefficients,
    path: str = "monolithic",
    data: forms.ProblemData | None = None,
    mode: str = "vertexquad",
    opts: SolverOptions | None = None,
) -> SolutionState:
    """One backward-Euler step (assembles and factorizes; prefer :class:`TimeStepper`)."""
    return TimeStepper(fe, coeff, t_next - prev.t, data, path, mode, opts).step(prev, t_next)


@dataclass
class Problem:
    """Everything a run needs, already built."""

    fe: FeSystem
    coeff: forms.Coefficients
    data: forms.ProblemData
    grid: TimeGrid
    init_mode: str = "discrete-construct"
    init: InitialData = field(default_factory=InitialData)
    path: str = "reduced"
    mode: str = "vertexquad"
    opts: SolverOptions = field(default_factory=SolverOptions)


def run(problem: Problem, callback: Callable[[int, SolutionState], None] | None = None, keep: str = "all"):
    """March from the initial state to ``T``.

    ``keep="all"`` returns every state, ``"last"`` only ``[initial, final]``.
    ``callback(m, state)`` is called for ``m = 0..M``.
    """
    pb = problem
    st = initial_data(pb.fe, pb.coeff, pb.init_mode, pb.data, pb.init, pb.mode)
    stepper = TimeStepper(pb.fe, pb.coeff, pb.grid.dt, pb.data, pb.path, pb.mode, pb.opts)
    states = [st]
    if callback:
        callback(0, st)
    for m in range(1, pb.grid.M + 1):
        st = stepper.step(st, m * pb.grid.dt)
        if callback:
            callback(m, st)
        if keep == "all":
            states.append(st)
        log.debug("step %d/%d t=%g", m, pb.grid.M, st.t)
    if keep != "all":
        states.append(st)
    run.last_stepper = stepper
    return states


# ---------------------------------------------------------------------------
# diagnostics


def energy(fe: FeSystem, coeff: forms.Coefficients, state: SolutionState, mode: str = "vertexquad") -> float:
    """``s0 |p|^2 + |A^{1/2}(sigma_p + alpha p I)|^2`` with the chosen rule."""
    SS, SP, PP = forms.assemble_ae(fe, coeff, mode)
    s, p = state.sigma_p, state.p_p
    return float(s @ (SS @ s) + 2.0 * s @ (SP @ p) + p @ (PP @ p))


def row_residuals(stepper: TimeStepper, prev: SolutionState, state: SolutionState) -> dict:
    """Max residual per equation group of a solved step, relative to the RHS scale."""
    sys = stepper.system(prev, state.t)
    x = state.vector()
    r = np.abs(sys.rhs - sys.matrix @ x)
    fe = stepper.fe
    scale = max(np.abs(sys.rhs).max(), (abs(sys.matrix) @ np.abs(x)).max(), 1e-300)
    out = {n: float(r[fe.slice(n)].max(initial=0.0) / scale) for n in FIELDS}
    out["mass"] = out["lam"]
    out["momentum"] = max(out["phi"], out["theta"])
    out["divergence"] = max(out["u_f"], out["u_s"], out["p_p"])
    return out
