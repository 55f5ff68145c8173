"""Coefficients, tensor helpers and assembly of all bilinear forms and loads.

Every matrix returned here is indexed ``[first argument, second argument]``
of its form, in field-local numbering.  For example ``assemble_b_div``
returns ``b_f`` with rows over stress DOFs and columns over ``u_f`` DOFs.

Volume forms accept ``mode="exact"`` (Gauss rule) or ``mode="vertexquad"``
(vertex rule); the latter gives mass matrices with one block per vertex.
Interface forms are always integrated on the intersection mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .elements import (
    BDM1Space,
    FeSystem,
    TraceSpace,
    barycentric,
    bdm1_eval_at,
)
from .errors import CoefficientError, ConfigError
from .geometry import Mesh, outward_normals
from .quadrature import gauss_seg, gauss_tri, map_points, rule_for

EXACT_DEGREE = 4
LOAD_DEGREE = 5


# ---------------------------------------------------------------------------
# coefficients and tensor algebra


@dataclass(frozen=True)
class Coefficients:
    """Physical parameters.  ``K`` is a 2x2 array or ``K(points) -> (n, 2, 2)``."""

    mu: float = 1.0
    mu_p: float = 1.0
    lambda_p: float = 1.0
    alpha_p: float = 1.0
    s0: float = 1.0
    K: object = field(default_factory=lambda: np.eye(2))
    alpha_bjs: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise CoefficientError(f"mu must be positive, got {self.mu}")
        if not self.mu_p > 0:
            raise CoefficientError(f"mu_p must be positive, got {self.mu_p}")
        if not self.lambda_p >= 0:
            raise CoefficientError(f"lambda_p must be non-negative, got {self.lambda_p}")
        if not 0 <= self.alpha_p <= 1:
            raise CoefficientError(f"alpha_p must lie in [0, 1], got {self.alpha_p}")
        if not self.s0 >= 0:
            raise CoefficientError(f"s0 must be non-negative, got {self.s0}")
        if not self.alpha_bjs >= 0:
            raise CoefficientError(f"alpha_bjs must be non-negative, got {self.alpha_bjs}")
        if not callable(self.K):
            K = np.asarray(self.K, dtype=float)
            if K.shape != (2, 2):
                raise CoefficientError("K must be a 2x2 matrix")
            _check_spd(K[None])

    def K_at(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points).reshape(-1, 2)
        if callable(self.K):
            K = np.asarray(self.K(pts), dtype=float).reshape(-1, 2, 2)
            _check_spd(K)
            return K
        return np.broadcast_to(np.asarray(self.K, dtype=float), (len(pts), 2, 2))

    def Kinv_at(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.inv(self.K_at(points))

    def compliance_scale(self) -> float:
        """``A(I) = c I`` with ``c = 1 / (2 mu_p + 2 lambda_p)``."""
        return 1.0 / (2.0 * self.mu_p + 2.0 * self.lambda_p)


def _check_spd(K: np.ndarray) -> None:
    if not np.allclose(K, np.swapaxes(K, -1, -2), rtol=1e-12, atol=0.0):
        raise CoefficientError("permeability K must be symmetric")
    if np.any(np.linalg.eigvalsh(K)[..., 0] <= 0):
        raise CoefficientError("permeability K must be positive definite")


def trace(tau: np.ndarray) -> np.ndarray:
    return tau[..., 0, 0] + tau[..., 1, 1]


def dev(tau: np.ndarray) -> np.ndarray:
    """Deviatoric part ``tau - tr(tau)/2 I``."""
    tau = np.asarray(tau, dtype=float)
    return tau - 0.5 * trace(tau)[..., None, None] * np.eye(2)


def compliance_apply(tau: np.ndarray, coeff: Coefficients) -> np.ndarray:
    """``A(tau) = (tau - lambda/(2 mu + 2 lambda) tr(tau) I) / (2 mu)``."""
    tau = np.asarray(tau, dtype=float)
    lam, mu = coeff.lambda_p, coeff.mu_p
    return (tau - lam / (2 * mu + 2 * lam) * trace(tau)[..., None, None] * np.eye(2)) / (2 * mu)


def compliance_inverse(tau: np.ndarray, coeff: Coefficients) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    return 2 * coeff.mu_p * tau + coeff.lambda_p * trace(tau)[..., None, None] * np.eye(2)


# ---------------------------------------------------------------------------
# element helpers


def tensor_basis(space: BDM1Space, ref_points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tensor basis values (M, nq, 12, 2, 2) and global DOFs (M, 12).

    Local DOF ``6 r + i`` has row ``r`` equal to vector basis ``i``.
    """
    v = space.values(ref_points)
    M, nq = v.shape[:2]
    T = np.zeros((M, nq, 12, 2, 2))
    T[:, :, 0:6, 0, :] = v
    T[:, :, 6:12, 1, :] = v
    n = space.dim
    return T, np.concatenate([space.ldof, space.ldof + n], axis=1)


def _scatter(rows, cols, vals, shape) -> sps.csr_matrix:
    rows = np.broadcast_to(rows, vals.shape).ravel()
    cols = np.broadcast_to(cols, vals.shape).ravel()
    vals = vals.ravel()
    keep = vals != 0.0
    A = sps.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=shape).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def _local_square(ldof, K, n) -> sps.csr_matrix:
    return _scatter(ldof[:, :, None], ldof[:, None, :], K, (n, n))


def _weights(mesh: Mesh, rule) -> np.ndarray:
    _, det = mesh.jacobians()
    return det[:, None] * rule.weights[None, :]


# ---------------------------------------------------------------------------
# volume forms


def assemble_af(fe: FeSystem, coeff: Coefficients, mode: str = "vertexquad") -> sps.csr_matrix:
    """``a_f(sigma, tau) = (dev sigma, dev tau) / (2 mu)`` on the fluid stress space."""
    rule = rule_for(mode, EXACT_DEGREE)
    T, ldof = tensor_basis(fe.bdm_f, rule.points)
    W = _weights(fe.mesh_f, rule) / (2.0 * coeff.mu)
    K = np.einsum("tq,tqiab,tqjab->tij", W, dev(T), T)
    return _local_square(ldof, K, fe.dims["sigma_f"])


def assemble_af_trace(fe: FeSystem, coeff: Coefficients, mode: str = "vertexquad") -> sps.csr_matrix:
    """``(tr sigma, tr tau) / (4 mu)``, the part of ``(sigma, tau) / (2 mu)`` that ``a_f`` drops."""
    rule = rule_for(mode, EXACT_DEGREE)
    T, ldof = tensor_basis(fe.bdm_f, rule.points)
    W = _weights(fe.mesh_f, rule) / (4.0 * coeff.mu)
    tr = trace(T)
    K = np.einsum("tq,tqi,tqj->tij", W, tr, tr)
    return _local_square(ldof, K, fe.dims["sigma_f"])


def assemble_ap(fe: FeSystem, coeff: Coefficients, mode: str = "vertexquad") -> sps.csr_matrix:
    """``a_p(u, v) = mu (K^{-1} u, v)`` on the Darcy flux space."""
    rule = rule_for(mode, EXACT_DEGREE)
    mesh = fe.mesh_p
    V = fe.bdm_p.values(rule.points)
    x = map_points(mesh, rule.points)
    Kinv = coeff.Kinv_at(x.reshape(-1, 2)).reshape(x.shape[:2] + (2, 2))
    W = _weights(mesh, rule) * coeff.mu
    K = np.einsum("tq,tqia,tqab,tqjb->tij", W, V, Kinv, V)
    return _local_square(fe.bdm_p.ldof, K, fe.dims["u_p"])


def assemble_ae(
    fe: FeSystem, coeff: Coefficients, mode: str = "vertexquad"
) -> tuple[sps.csr_matrix, sps.csr_matrix, sps.csr_matrix]:
    """Blocks of ``a_e(sigma, p; tau, w) + (s0 p, w)``.

    Returns ``(ss, sp, pp)``: ``ss[tau, sigma] = (A sigma, tau)``,
    ``sp[tau, p] = (A(alpha p I), tau)`` and
    ``pp[w, p] = (A(alpha p I), alpha w I) + (s0 p, w)``.
    """
    rule = rule_for(mode, EXACT_DEGREE)
    mesh = fe.mesh_p
    T, ldof = tensor_basis(fe.bdm_p, rule.points)
    W = _weights(mesh, rule)
    ss = np.einsum("tq,tqiab,tqjab->tij", W, compliance_apply(T, coeff), T)
    SS = _local_square(ldof, ss, fe.dims["sigma_p"])

    c = coeff.compliance_scale()
    a = coeff.alpha_p
    sp = a * c * np.einsum("tq,tqi->ti", W, trace(T))
    M = mesh.n_triangles
    SP = _scatter(ldof, np.arange(M)[:, None], sp, (fe.dims["sigma_p"], M))
    area = W.sum(axis=1)
    PP = sps.diags(area * (2.0 * a * a * c + coeff.s0)).tocsr()
    return SS, SP, PP


def assemble_b_div(fe: FeSystem) -> tuple[sps.csr_matrix, sps.csr_matrix, sps.csr_matrix]:
    """``b_f[tau_f, v_f]``, ``b_s[tau_p, v_s]`` and ``b_p[v_p, w_p]``.

    ``b_f = (div tau, v)``, ``b_s`` likewise, ``b_p = -(div v, w)``.
    """

    def stress_div(space: BDM1Space, mesh: Mesh, ndof: int) -> sps.csr_matrix:
        d = space.divergences() * mesh.areas()[:, None]  # (M, 6)
        M = mesh.n_triangles
        n = space.dim
        rows = np.concatenate([space.ldof, space.ldof + n], axis=1)
        cols = np.concatenate(
            [np.repeat(2 * np.arange(M)[:, None], 6, 1), np.repeat(2 * np.arange(M)[:, None] + 1, 6, 1)],
            axis=1,
        )
        return _scatter(rows, cols, np.concatenate([d, d], axis=1), (ndof, 2 * M))

    bf = stress_div(fe.bdm_f, fe.mesh_f, fe.dims["sigma_f"])
    bs = stress_div(fe.bdm_p, fe.mesh_p, fe.dims["sigma_p"])
    mp = fe.mesh_p
    d = -fe.bdm_p.divergences() * mp.areas()[:, None]
    bp = _scatter(fe.bdm_p.ldof, np.arange(mp.n_triangles)[:, None], d, (fe.dims["u_p"], mp.n_triangles))
    return bf, bs, bp


def assemble_bsk(fe: FeSystem, mode: str = "vertexquad") -> tuple[sps.csr_matrix, sps.csr_matrix]:
    """``b_sk[tau, chi] = (tau, chi)`` with ``chi = [[0, g], [-g, 0]]``, i.e.
    ``int g (tau_12 - tau_21)``, for the fluid and the poroelastic stress."""
    rule = rule_for(mode, EXACT_DEGREE)
    out = []
    for space, mesh, name in ((fe.bdm_f, fe.mesh_f, "sigma_f"), (fe.bdm_p, fe.mesh_p, "sigma_p")):
        T, ldof = tensor_basis(space, rule.points)
        lam = barycentric(rule.points)  # (nq, 3)
        W = _weights(mesh, rule)
        asym = T[..., 0, 1] - T[..., 1, 0]  # (M, nq, 12)
        loc = np.einsum("tq,tqi,qr->tir", W, asym, lam)
        out.append(_scatter(ldof[:, :, None], mesh.triangles[:, None, :], loc, (fe.dims[name], mesh.n_vertices)))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# interface forms


@dataclass(frozen=True)
class InterfaceForms:
    """All interface blocks, rows = first argument, cols = second argument."""

    b_nf: sps.csr_matrix  # [tau_f, psi]
    b_np: sps.csr_matrix  # [tau_p, vphi]
    b_gamma: sps.csr_matrix  # [v_p, xi]
    c_bjs: dict  # keys ("phi"|"theta", "phi"|"theta"): [test, trial]
    c_gamma_f: sps.csr_matrix  # [psi, xi]  <psi . n_f, xi>
    c_gamma_p: sps.csr_matrix  # [vphi, xi] <vphi . n_p, xi>


def _segment_points(fe: FeSystem, degree: int):
    q = gauss_seg(degree)
    I = fe.iface
    x = I.a[:, None, :] + q.points[None, :, None] * (I.b - I.a)[:, None, :]
    w = I.length[:, None] * q.weights[None, :]
    return x, w


def _trace_hats(mesh: Mesh, space: TraceSpace, seg_edge: np.ndarray, x: np.ndarray):
    """Scalar multiplier DOFs (S, 2) and hat values (S, nq, 2) at points ``x``."""
    e = space.trace.edges[seg_edge]
    a = mesh.vertices[mesh.edges[e, 0]]
    b = mesh.vertices[mesh.edges[e, 1]]
    d = b - a
    xi = np.einsum("sqa,sa->sq", x - a[:, None, :], d) / np.einsum("sa,sa->s", d, d)[:, None]
    hats = np.stack([1.0 - xi, xi], axis=2)
    return space.edge_dofs()[seg_edge], hats


def _bdm_on_segments(space: BDM1Space, mesh: Mesh, trace_edges: np.ndarray, seg_edge, x):
    e = trace_edges[seg_edge]
    cells = mesh.edge_tris[e, 0]
    S, nq = x.shape[:2]
    vals = bdm1_eval_at(space, np.repeat(cells, nq), x.reshape(-1, 2)).reshape(S, nq, 6, 2)
    return space.ldof[cells], vals


def assemble_interface(fe: FeSystem, coeff: Coefficients, degree: int = 4) -> InterfaceForms:
    I = fe.iface
    x, w = _segment_points(fe, degree)
    S = I.n_segments
    n_f, n_p, t = I.n_f, I.n_p, I.t_f

    f_ldof, f_vals = _bdm_on_segments(fe.bdm_f, fe.mesh_f, I.fluid_trace.edges, I.fluid_seg, x)
    p_ldof, p_vals = _bdm_on_segments(fe.bdm_p, fe.mesh_p, I.poro_trace.edges, I.poro_seg, x)
    f_dofs, f_hat = _trace_hats(fe.mesh_f, fe.trace_f, I.fluid_seg, x)
    p_dofs, p_hat = _trace_hats(fe.mesh_p, fe.trace_p, I.poro_seg, x)

    nsf, nsp = fe.bdm_f.dim, fe.bdm_p.dim
    # stress row r, vector basis i: (tau n)_r = phi_i . n ; pairs with multiplier component r
    vnf = np.einsum("sqia,sa->sqi", f_vals, n_f)
    vnp = np.einsum("sqia,sa->sqi", p_vals, n_p)

    def stress_mult(vn, ldof, hats, mdofs, nstress, nmult_scalar):
        blocks = []
        for r in range(2):
            loc = -np.einsum("sq,sqi,sqm->sim", w, vn, hats)
            rows = ldof[:, :, None] + r * nstress
            cols = 2 * mdofs[:, None, :] + r
            blocks.append(_scatter(rows, cols, loc, (2 * nstress, 2 * nmult_scalar)))
        return blocks[0] + blocks[1]

    b_nf = stress_mult(vnf, f_ldof, f_hat, f_dofs, nsf, fe.trace_f.dim)
    b_np = stress_mult(vnp, p_ldof, p_hat, p_dofs, nsp, fe.trace_p.dim)

    loc = np.einsum("sq,sqi,sqm->sim", w, vnp, p_hat)
    b_gamma = _scatter(p_ldof[:, :, None], p_dofs[:, None, :], loc, (nsp, fe.trace_p.dim))

    # BJS: kappa = mu alpha / sqrt(t.K t)
    Kq = coeff.K_at(x.reshape(-1, 2)).reshape(S, -1, 2, 2)
    kt = np.einsum("sa,sqab,sb->sq", t, Kq, t)
    kappa = coeff.mu * coeff.alpha_bjs / np.sqrt(kt)

    def vec_cols(dofs, hats, vec):
        # vector multiplier basis (scalar hat m, component c): value hat * e_c
        # returns dofs (S, 4) and (hat * vec_c) values (S, nq, 4)
        d = np.concatenate([2 * dofs, 2 * dofs + 1], axis=1)
        v = np.concatenate([hats * vec[:, None, 0:1], hats * vec[:, None, 1:2]], axis=2)
        return d, v

    fd_t, fv_t = vec_cols(f_dofs, f_hat, t)
    pd_t, pv_t = vec_cols(p_dofs, p_hat, t)
    nphi, ntheta = 2 * fe.trace_f.dim, 2 * fe.trace_p.dim
    wk = w * kappa

    def pair(rd, rv, cd, cv, shape, sign=1.0):
        loc = sign * np.einsum("sq,sqi,sqj->sij", wk, rv, cv)
        return _scatter(rd[:, :, None], cd[:, None, :], loc, shape)

    c_bjs = {
        ("phi", "phi"): pair(fd_t, fv_t, fd_t, fv_t, (nphi, nphi)),
        ("phi", "theta"): pair(fd_t, fv_t, pd_t, pv_t, (nphi, ntheta), -1.0),
        ("theta", "phi"): pair(pd_t, pv_t, fd_t, fv_t, (ntheta, nphi), -1.0),
        ("theta", "theta"): pair(pd_t, pv_t, pd_t, pv_t, (ntheta, ntheta)),
    }

    fd_n, fv_n = vec_cols(f_dofs, f_hat, n_f)
    pd_n, pv_n = vec_cols(p_dofs, p_hat, n_p)
    nlam = fe.trace_p.dim
    loc = np.einsum("sq,sqi,sqm->sim", w, fv_n, p_hat)
    c_gamma_f = _scatter(fd_n[:, :, None], p_dofs[:, None, :], loc, (nphi, nlam))
    loc = np.einsum("sq,sqi,sqm->sim", w, pv_n, p_hat)
    c_gamma_p = _scatter(pd_n[:, :, None], p_dofs[:, None, :], loc, (ntheta, nlam))
    return InterfaceForms(b_nf, b_np, b_gamma, c_bjs, c_gamma_f, c_gamma_p)


def _trace_parts(fe: FeSystem, side: str):
    if side == "fluid":
        return fe.mesh_f, fe.trace_f
    if side == "poro":
        return fe.mesh_p, fe.trace_p
    raise ValueError(f"unknown interface side {side!r}")


def trace_points(fe: FeSystem, side: str, degree: int = LOAD_DEGREE):
    """Gauss points (S, nq, 2), weights (S, nq) and hat values (S, nq, 2) on trace edges."""
    mesh, space = _trace_parts(fe, side)
    e = space.trace.edges
    x, w = _edge_quadrature(mesh, e, degree)
    q = gauss_seg(degree).points
    hats = np.broadcast_to(np.stack([1.0 - q, q], axis=1), (len(e), len(q), 2))
    return x, w, hats


def trace_mass(fe: FeSystem, side: str) -> sps.csr_matrix:
    """Scalar mass matrix ``<xi, eta>`` of a multiplier space."""
    _, space = _trace_parts(fe, side)
    _, w, hats = trace_points(fe, side, 2)
    loc = np.einsum("sq,sqi,sqj->sij", w, hats, hats)
    d = space.edge_dofs()
    return _scatter(d[:, :, None], d[:, None, :], loc, (space.dim, space.dim))


def trace_load(fe: FeSystem, side: str, fn, degree: int = LOAD_DEGREE) -> np.ndarray:
    """``<fn, xi>`` for every scalar DOF; vector data gives interleaved components."""
    _, space = _trace_parts(fe, side)
    x, w, hats = trace_points(fe, side, degree)
    S, nq = w.shape
    g = np.asarray(fn(x.reshape(-1, 2)), dtype=float).reshape(S, nq, -1)
    ncomp = g.shape[2]
    out = np.zeros(ncomp * space.dim)
    d = space.edge_dofs()
    for c in range(ncomp):
        np.add.at(out, ncomp * d + c, np.einsum("sq,sqi,sq->si", w, hats, g[:, :, c]))
    return out


def trace_project(fe: FeSystem, side: str, fn) -> np.ndarray:
    """L2 projection of scalar or vector data onto a multiplier space."""

    M = trace_mass(fe, side).tocsc()
    b = trace_load(fe, side, fn)
    ncomp = len(b) // M.shape[0]
    lu = spla.splu(M)
    out = np.zeros_like(b)
    for c in range(ncomp):
        out[c::ncomp] = lu.solve(b[c::ncomp])
    return out


def trace_interpolate(fe: FeSystem, side: str, fn) -> np.ndarray:
    """Nodal interpolant: each scalar DOF takes the value at its edge endpoint."""
    mesh, space = _trace_parts(fe, side)
    d = space.edge_dofs()
    x = mesh.vertices[mesh.edges[space.trace.edges]]  # (S, 2, 2)
    g = np.asarray(fn(x.reshape(-1, 2)), dtype=float).reshape(len(d) * 2, -1)
    ncomp = g.shape[1]
    out = np.zeros(ncomp * space.dim)
    for c in range(ncomp):
        out[ncomp * d.ravel() + c] = g[:, c]
    return out


def trace_evaluate(fe: FeSystem, side: str, coef: np.ndarray, degree: int = LOAD_DEGREE):
    """Multiplier values (S, nq, ncomp) at the trace Gauss points, with points and weights."""
    _, space = _trace_parts(fe, side)
    x, w, hats = trace_points(fe, side, degree)
    ncomp = len(coef) // space.dim
    d = space.edge_dofs()
    vals = np.stack(
        [np.einsum("sqi,si->sq", hats, coef[c::ncomp][d]) for c in range(ncomp)], axis=2
    )
    return vals, x, w


# ---------------------------------------------------------------------------
# loads and boundary data

VectorFn = Callable[[np.ndarray, float], np.ndarray]
BoundaryFn = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


@dataclass
class ProblemData:
    """Loads and boundary data as functions of ``(points, t)``.

    Boundary functions take ``(points, normals, t)``.  For natural
    conditions they return the prescribed field (fluid velocity, structure
    velocity, Darcy pressure); for essential ones they return ``sigma n``
    (stresses) or ``u . n`` (Darcy flux) for the given normal, which must be
    linear in the normal.  Missing entries mean zero.
    """

    f_f: VectorFn | None = None
    f_p: VectorFn | None = None
    q_f: VectorFn | None = None
    q_p: VectorFn | None = None
    fluid_bc: Mapping[str, BoundaryFn] = field(default_factory=dict)
    darcy_bc: Mapping[str, BoundaryFn] = field(default_factory=dict)
    elastic_bc: Mapping[str, BoundaryFn] = field(default_factory=dict)


def _volume_load(mesh: Mesh, fn, t: float, degree: int = LOAD_DEGREE):
    rule = gauss_tri(degree)
    x = map_points(mesh, rule.points)
    vals = np.asarray(fn(x.reshape(-1, 2), t), dtype=float)
    vals = vals.reshape(x.shape[:2] + vals.shape[1:])
    return vals, _weights(mesh, rule), rule


def _edge_quadrature(mesh: Mesh, edges: np.ndarray, degree: int = LOAD_DEGREE):
    q = gauss_seg(degree)
    a = mesh.vertices[mesh.edges[edges, 0]]
    b = mesh.vertices[mesh.edges[edges, 1]]
    x = a[:, None, :] + q.points[None, :, None] * (b - a)[:, None, :]
    w = np.linalg.norm(b - a, axis=1)[:, None] * q.weights[None, :]
    return x, w


def _natural_stress_term(mesh, space, tags, fns, t, out, offset):
    """Add ``<tau n, g>`` over boundary edges with natural data ``g``."""
    for tag in tags:
        fn = fns.get(tag)
        if fn is None:
            continue
        edges = mesh.edges_with_tag(tag)
        if len(edges) == 0:
            continue
        x, w = _edge_quadrature(mesh, edges)
        n = outward_normals(mesh, edges)
        nq = x.shape[1]
        g = np.asarray(fn(x.reshape(-1, 2), np.repeat(n, nq, axis=0), t), dtype=float).reshape(len(edges), nq, -1)
        cells = mesh.edge_tris[edges, 0]
        V = bdm1_eval_at(space, np.repeat(cells, nq), x.reshape(-1, 2)).reshape(len(edges), nq, 6, 2)
        vn = np.einsum("eqia,ea->eqi", V, n)
        ldof = space.ldof[cells]
        if g.shape[2] == 1:  # scalar data: Darcy pressure, sign handled by caller
            np.add.at(out, offset + ldof, np.einsum("eq,eqi,eq->ei", w, vn, g[:, :, 0]))
        else:
            for r in range(2):
                np.add.at(out, offset + r * space.dim + ldof, np.einsum("eq,eqi,eq->ei", w, vn, g[:, :, r]))


def assemble_rhs(fe: FeSystem, data: ProblemData, t: float) -> np.ndarray:
    """Load vector ``[F; 0; G]`` at time ``t`` including natural boundary terms.

    History terms and essential-DOF lifts are added by the system module.
    """
    b = np.zeros(fe.n_dofs)
    mf, mp = fe.mesh_f, fe.mesh_p

    if data.q_f is not None:
        q, W, rule = _volume_load(mf, data.q_f, t)
        T, ldof = tensor_basis(fe.bdm_f, rule.points)
        loc = -0.5 * np.einsum("tq,tq,tqi->ti", W, q, trace(T))
        np.add.at(b, fe.offsets["sigma_f"] + ldof, loc)
    if data.q_p is not None:
        q, W, _ = _volume_load(mp, data.q_p, t)
        b[fe.slice("p_p")] += np.einsum("tq,tq->t", W, q)
    for fn, mesh, name in ((data.f_f, mf, "u_f"), (data.f_p, mp, "u_s")):
        if fn is None:
            continue
        f, W, _ = _volume_load(mesh, fn, t)
        b[fe.slice(name)] += np.einsum("tq,tqc->tc", W, f).ravel()

    _natural_stress_term(
        mf, fe.bdm_f, fe.bcs_natural("fluid"), data.fluid_bc, t, b, fe.offsets["sigma_f"]
    )
    _natural_stress_term(
        mp, fe.bdm_p, fe.bcs_natural("elasticity"), data.elastic_bc, t, b, fe.offsets["sigma_p"]
    )
    tmp = np.zeros(fe.n_dofs)
    _natural_stress_term(mp, fe.bdm_p, fe.bcs_natural("darcy"), data.darcy_bc, t, tmp, fe.offsets["u_p"])
    b -= tmp
    return b


def essential_values(fe: FeSystem, data: ProblemData, t: float) -> np.ndarray:
    """Interpolated values of all essential DOFs, in ``fe.essential_global()`` order."""
    vals = np.zeros(fe.n_dofs)
    has = np.zeros(fe.n_dofs, dtype=bool)
    spec = {"sigma_f": (fe.mesh_f, data.fluid_bc), "u_p": (fe.mesh_p, data.darcy_bc), "sigma_p": (fe.mesh_p, data.elastic_bc)}
    for name, ess in fe.essential.items():
        mesh, fns = spec[name]
        if len(ess.dofs) == 0:
            continue
        L = mesh.edge_lengths()[ess.edges]
        n = mesh.edge_normals()[ess.edges]
        x = mesh.vertices[mesh.edges[ess.edges, ess.endpoint]]
        v = np.zeros(len(ess.dofs))
        for tag in np.unique(ess.tags):
            fn = fns.get(tag)
            sel = ess.tags == tag
            if fn is None:
                continue
            g = np.asarray(fn(x[sel], n[sel], t), dtype=float)
            if name == "u_p":
                v[sel] = L[sel] * g.reshape(-1)
            else:
                g = g.reshape(-1, 2)
                v[sel] = L[sel] * g[np.arange(len(g)), ess.row[sel]]
        idx = fe.offsets[name] + ess.dofs
        vals[idx] = v
        has[idx] = True
    return vals[np.flatnonzero(has)]


def validate_data(fe: FeSystem, data: ProblemData) -> None:
    """Reject boundary data attached to tags the mesh does not have."""
    for name, fns, mesh in (
        ("fluid", data.fluid_bc, fe.mesh_f),
        ("darcy", data.darcy_bc, fe.mesh_p),
        ("elasticity", data.elastic_bc, fe.mesh_p),
    ):
        for tag in fns:
            if tag not in mesh.boundary_tags():
                raise ConfigError(f"{name} data given for unknown boundary tag {tag!r}")
