"""Reference bases, Piola map and global DOF numbering.

Spaces (lowest order):

* stresses: two rows of BDM1, velocities/fluxes: BDM1 (vector);
* u_f, u_s: piecewise constant vectors, p_p: piecewise constant;
* vorticity/rotation: continuous P1 scalars ``g`` standing for the skew
  tensor ``[[0, g], [-g, 0]]``;
* interface multipliers: continuous P1 (variant ``S1``) or discontinuous P1
  (variant ``S2``) on the trace meshes.

BDM1 DOFs are the normal components at the two endpoints of every edge,
multiplied by the edge length.  Global DOF ``2*e + m`` belongs to endpoint
``mesh.edges[e, m]``; tensor row ``r`` is offset by ``r * 2 * n_edges``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, GeometryError
from .geometry import INTERFACE, InterfaceMesh, Mesh, Trace

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
# local edge k is opposite local vertex k, traversed counterclockwise
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])
GRAD_BARY = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def barycentric(ref_points: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(ref_points)
    return np.stack([1.0 - x[:, 0] - x[:, 1], x[:, 0], x[:, 1]], axis=1)


def _ref_edge_data() -> tuple[np.ndarray, np.ndarray]:
    d = REF_VERTICES[LOCAL_EDGES[:, 1]] - REF_VERTICES[LOCAL_EDGES[:, 0]]
    length = np.linalg.norm(d, axis=1)
    normal = np.stack([d[:, 1], -d[:, 0]], axis=1) / length[:, None]
    return normal, length


REF_NORMALS, REF_LENGTHS = _ref_edge_data()


def _ref_directions() -> tuple[np.ndarray, np.ndarray]:
    """Vertex index and constant vector of each local basis function.

    Basis ``i = 2k + j`` is ``lambda_r(x) * w_i`` with ``r = LOCAL_EDGES[k, j]``;
    ``w_i`` has normal component ``1/|e_k|`` on edge k and 0 on the other
    edge through ``r``.
    """
    vert = np.zeros(6, dtype=np.int64)
    w = np.zeros((6, 2))
    for k in range(3):
        for j in range(2):
            r = LOCAL_EDGES[k, j]
            other = 3 - r - k
            A = np.stack([REF_NORMALS[k], REF_NORMALS[other]])
            w[2 * k + j] = np.linalg.solve(A, [1.0 / REF_LENGTHS[k], 0.0])
            vert[2 * k + j] = r
    return vert, w


DOF_VERTEX, _W = _ref_directions()


def eval_bdm1(ref_points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reference BDM1 basis values and divergences.

    Returns values of shape (nq, 6, 2) (or (6, 2) for a single point) and the
    six constant divergences.
    """
    pts = np.asarray(ref_points, dtype=float)
    single = pts.ndim == 1
    lam = barycentric(pts)
    vals = lam[:, DOF_VERTEX, None] * _W[None, :, :]
    divs = np.einsum("ij,ij->i", GRAD_BARY[DOF_VERTEX], _W)
    return (vals[0] if single else vals), divs


def ref_dof_functionals(v: np.ndarray) -> np.ndarray:
    """Apply the six reference DOFs to vertex values ``v`` (3, 2)."""
    out = np.zeros(6)
    for k in range(3):
        for j in range(2):
            out[2 * k + j] = REF_LENGTHS[k] * v[LOCAL_EDGES[k, j]] @ REF_NORMALS[k]
    return out


def piola(
    tri: np.ndarray, ref_val: np.ndarray, ref_div: np.ndarray | float
) -> tuple[np.ndarray, np.ndarray]:
    """Contravariant Piola map ``v = J v_hat / det J`` onto triangle ``tri``."""
    tri = np.asarray(tri, dtype=float)
    J = np.stack([tri[1] - tri[0], tri[2] - tri[0]], axis=1)
    det = np.linalg.det(J)
    if abs(det) < 1e-14 * max(np.abs(J).max(), 1e-300) ** 2:
        raise GeometryError("degenerate triangle in Piola map")
    v = np.einsum("ij,...j->...i", J, np.asarray(ref_val, dtype=float)) / det
    return v, np.asarray(ref_div, dtype=float) / det


# ---------------------------------------------------------------------------
# physical bases


@dataclass(frozen=True)
class BDM1Space:
    """Vector BDM1 on a mesh: local-to-global map and orientation signs."""

    mesh: Mesh
    ldof: np.ndarray  # (M, 6)
    signs: np.ndarray  # (M, 6)

    @property
    def dim(self) -> int:
        return 2 * self.mesh.n_edges

    def values(self, ref_points: np.ndarray) -> np.ndarray:
        """Physical basis values (M, nq, 6, 2) at mapped reference points."""
        J, det = self.mesh.jacobians()
        ref, _ = eval_bdm1(np.atleast_2d(ref_points))
        v = np.einsum("tab,qib->tqia", J, ref) / det[:, None, None, None]
        return v * self.signs[:, None, :, None]

    def divergences(self) -> np.ndarray:
        """Elementwise constant divergences (M, 6)."""
        _, det = self.mesh.jacobians()
        _, dref = eval_bdm1(REF_VERTICES)
        return self.signs * dref[None, :] / det[:, None]

    def dof_vertex(self) -> np.ndarray:
        """Mesh vertex owning each global DOF."""
        return self.mesh.edges.reshape(-1)


def bdm1_space(mesh: Mesh) -> BDM1Space:
    M = mesh.n_triangles
    ldof = np.zeros((M, 6), dtype=np.int64)
    signs = np.zeros((M, 6), dtype=np.int64)
    for k in range(3):
        e = mesh.tri_edges[:, k]
        for j in range(2):
            r = mesh.triangles[:, LOCAL_EDGES[k, j]]
            m = np.where(mesh.edges[e, 0] == r, 0, 1)
            ldof[:, 2 * k + j] = 2 * e + m
            signs[:, 2 * k + j] = mesh.tri_signs[:, k]
    ldof.setflags(write=False)
    signs.setflags(write=False)
    return BDM1Space(mesh, ldof, signs)


def locate(mesh: Mesh, cells: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Reference coordinates of ``points`` inside triangles ``cells``."""
    p = mesh.vertices[mesh.triangles[cells]]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    return np.linalg.solve(J, (points - p[:, 0])[..., None])[..., 0]


def bdm1_eval_at(space: BDM1Space, cells: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Basis values (n, 6, 2) of the cell owning each point."""
    ref = locate(space.mesh, cells, points)
    J, det = space.mesh.jacobians()
    rv, _ = eval_bdm1(ref)
    v = np.einsum("nab,nib->nia", J[cells], rv) / det[cells, None, None]
    return v * space.signs[cells, :, None]


def interpolate_vector(mesh: Mesh, flux) -> np.ndarray:
    """BDM1 interpolant from ``flux(points, normals) -> u . n`` at edge endpoints."""
    L = mesh.edge_lengths()
    n = mesh.edge_normals()
    out = np.zeros(2 * mesh.n_edges)
    for m in range(2):
        x = mesh.vertices[mesh.edges[:, m]]
        out[m::2] = L * np.asarray(flux(x, n), dtype=float)
    return out


def interpolate_vector_field(mesh: Mesh, u) -> np.ndarray:
    """BDM1 interpolant of a vector field ``u(points) -> (n, 2)``."""
    return interpolate_vector(mesh, lambda x, n: np.einsum("ij,ij->i", u(x), n))


def interpolate_tensor_field(mesh: Mesh, sigma) -> np.ndarray:
    """Row-wise BDM1 interpolant of ``sigma(points) -> (n, 2, 2)``."""
    rows = [
        interpolate_vector_field(mesh, lambda x, r=r: sigma(x)[:, r, :]) for r in range(2)
    ]
    return np.concatenate(rows)


def evaluate_bdm1(space: BDM1Space, coef: np.ndarray, ref_points: np.ndarray) -> np.ndarray:
    """Field values (M, nq, 2) from global coefficients."""
    return np.einsum("tqia,ti->tqa", space.values(ref_points), coef[space.ldof])


def evaluate_tensor(space: BDM1Space, coef: np.ndarray, ref_points: np.ndarray) -> np.ndarray:
    """Tensor field values (M, nq, 2, 2); rows stored consecutively in ``coef``."""
    n = space.dim
    vals = space.values(ref_points)
    rows = [np.einsum("tqia,ti->tqa", vals, coef[r * n : (r + 1) * n][space.ldof]) for r in range(2)]
    return np.stack(rows, axis=2)


def tensor_divergence(space: BDM1Space, coef: np.ndarray) -> np.ndarray:
    """Elementwise constant row divergences (M, 2)."""
    n = space.dim
    d = space.divergences()
    return np.stack(
        [np.einsum("ti,ti->t", d, coef[r * n : (r + 1) * n][space.ldof]) for r in range(2)],
        axis=1,
    )


def p1_values(mesh: Mesh, coef: np.ndarray, ref_points: np.ndarray) -> np.ndarray:
    """Continuous P1 field values (M, nq)."""
    lam = barycentric(ref_points)
    return np.einsum("qi,ti->tq", lam, coef[mesh.triangles])


def skew(g: np.ndarray) -> np.ndarray:
    """Skew tensor ``[[0, g], [-g, 0]]`` of a scalar array."""
    g = np.asarray(g, dtype=float)
    out = np.zeros(g.shape + (2, 2))
    out[..., 0, 1] = g
    out[..., 1, 0] = -g
    return out


# ---------------------------------------------------------------------------
# interface multipliers


@dataclass(frozen=True)
class TraceSpace:
    """Scalar P1 multiplier space on a trace; continuous (S1) or not (S2)."""

    trace: Trace
    variant: str

    @property
    def dim(self) -> int:
        if self.variant == "S1":
            return self.trace.n_nodes
        return 2 * self.trace.n_edges

    def edge_dofs(self) -> np.ndarray:
        """(S, 2) scalar DOFs attached to the endpoints of each trace edge."""
        if self.variant == "S1":
            return self.trace.edge_nodes
        s = np.arange(self.trace.n_edges)
        return np.stack([2 * s, 2 * s + 1], axis=1)


def check_variant(variant: str) -> str:
    v = str(variant).upper()
    if v not in ("S1", "S2"):
        raise ConfigError(f"unknown multiplier variant {variant!r}")
    return v


# ---------------------------------------------------------------------------
# boundary conditions and the full system


FLUID_KINDS = ("velocity", "traction", "normal_traction")
DARCY_KINDS = ("pressure", "flux")
ELASTIC_KINDS = ("displacement", "traction")


@dataclass(frozen=True)
class BoundaryConditions:
    """Kind of condition per boundary tag and physics.

    Fluid: ``velocity`` (natural), ``traction`` (essential sigma_f n),
    ``normal_traction`` (essential (sigma_f n).n, natural zero u.t; the edge
    must be axis aligned).  Darcy: ``pressure`` (natural) or ``flux``
    (essential u_p.n).  Elasticity: ``displacement`` (natural) or
    ``traction`` (essential sigma_p n).  Tags not listed are natural.
    """

    fluid: Mapping[str, str] = field(default_factory=dict)
    darcy: Mapping[str, str] = field(default_factory=dict)
    elasticity: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name, kinds, spec in (
            ("fluid", FLUID_KINDS, self.fluid),
            ("darcy", DARCY_KINDS, self.darcy),
            ("elasticity", ELASTIC_KINDS, self.elasticity),
        ):
            for tag, kind in spec.items():
                if kind not in kinds:
                    raise ConfigError(f"{name} boundary {tag!r}: unknown kind {kind!r}")
                if tag == INTERFACE:
                    raise ConfigError(f"{name}: the interface cannot carry a boundary condition")

    def tags(self, physics: str, kind: str) -> list[str]:
        spec = getattr(self, physics)
        return sorted(t for t, k in spec.items() if k == kind)


FIELDS = (
    "sigma_f",
    "u_p",
    "sigma_p",
    "p_p",
    "phi",
    "theta",
    "lam",
    "u_f",
    "u_s",
    "gamma_f",
    "gamma_p",
)
REDUCED_FIELDS = ("p_p", "phi", "theta", "lam", "u_f", "u_s")


@dataclass(frozen=True)
class EssentialDofs:
    """Constrained DOFs of one field (field-local indices) with their edges."""

    dofs: np.ndarray
    edges: np.ndarray
    endpoint: np.ndarray
    row: np.ndarray  # tensor row, 0 for vectors
    tags: np.ndarray


def _edge_dofs(mesh: Mesh, tags: list[str], rows: tuple[int, ...] | None, axis_row=False):
    dofs, edges, ends, rws, tg = [], [], [], [], []
    n2 = 2 * mesh.n_edges
    normals = mesh.edge_normals()
    for tag in tags:
        for e in mesh.edges_with_tag(tag):
            if axis_row:
                a = int(np.argmax(np.abs(normals[e])))
                if abs(normals[e, 1 - a]) > 1e-12:
                    raise ConfigError(
                        f"normal_traction boundary {tag!r} must be axis aligned"
                    )
                use = (a,)
            else:
                use = rows if rows is not None else (0,)
            for r in use:
                for m in range(2):
                    dofs.append(r * n2 + 2 * e + m)
                    edges.append(e)
                    ends.append(m)
                    rws.append(r)
                    tg.append(tag)
    order = np.argsort(dofs, kind="stable")
    arr = lambda v, dt=np.int64: np.asarray(v, dtype=dt)[order] if v else np.zeros(0, dt)  # noqa: E731
    return EssentialDofs(arr(dofs), arr(edges), arr(ends), arr(rws), arr(tg, object))


@dataclass(frozen=True)
class FeSystem:
    """All discrete spaces of the coupled problem and their global numbering.

    The global ordering is ``FIELDS``: (sigma_f, u_p, sigma_p, p_p | phi,
    theta, lam | u_f, u_s, gamma_f, gamma_p).
    """

    mesh_f: Mesh
    mesh_p: Mesh
    iface: InterfaceMesh
    variant: str
    bcs: BoundaryConditions
    bdm_f: BDM1Space
    bdm_p: BDM1Space
    trace_f: TraceSpace
    trace_p: TraceSpace
    dims: dict
    offsets: dict
    essential: dict

    @property
    def n_dofs(self) -> int:
        return int(sum(self.dims.values()))

    def slice(self, name: str) -> slice:
        o = self.offsets[name]
        return slice(o, o + self.dims[name])

    def indices(self, *names: str) -> np.ndarray:
        return np.concatenate([np.arange(self.offsets[n], self.offsets[n] + self.dims[n]) for n in names])

    def split(self, x: np.ndarray) -> dict:
        return {n: np.array(x[self.slice(n)]) for n in FIELDS}

    def join(self, parts: Mapping[str, np.ndarray]) -> np.ndarray:
        x = np.zeros(self.n_dofs)
        for n in FIELDS:
            if n in parts:
                x[self.slice(n)] = parts[n]
        return x

    def essential_global(self) -> np.ndarray:
        out = [self.offsets[n] + ess.dofs for n, ess in self.essential.items()]
        return np.sort(np.concatenate(out)) if out else np.zeros(0, dtype=np.int64)

    def dof_vertex(self, name: str) -> np.ndarray:
        """Mesh vertex owning each DOF of a vertex-localized field."""
        if name in ("sigma_f", "sigma_p"):
            mesh = self.mesh_f if name == "sigma_f" else self.mesh_p
            v = mesh.edges.reshape(-1)
            return np.concatenate([v, v])
        if name == "u_p":
            return self.mesh_p.edges.reshape(-1)
        if name == "gamma_f":
            return np.arange(self.mesh_f.n_vertices)
        if name == "gamma_p":
            return np.arange(self.mesh_p.n_vertices)
        raise KeyError(name)

    def bcs_natural(self, physics: str) -> list[str]:
        """Boundary tags carrying a natural condition for ``physics``."""
        mesh = self.mesh_f if physics == "fluid" else self.mesh_p
        spec = getattr(self.bcs, physics)
        default = {"fluid": "velocity", "darcy": "pressure", "elasticity": "displacement"}[physics]
        return [
            t for t in mesh.boundary_tags() if t != INTERFACE and spec.get(t, default) == default
        ]

    def reduced_dim(self) -> int:
        return int(sum(self.dims[n] for n in REDUCED_FIELDS))


def build_fe_system(
    mesh_f: Mesh,
    mesh_p: Mesh,
    iface: InterfaceMesh,
    variant: str = "S2",
    bcs: BoundaryConditions | None = None,
) -> FeSystem:
    variant = check_variant(variant)
    bcs = bcs or BoundaryConditions()
    for physics, mesh in (("fluid", mesh_f), ("darcy", mesh_p), ("elasticity", mesh_p)):
        known = set(mesh.boundary_tags())
        for tag in getattr(bcs, physics):
            if tag not in known:
                raise ConfigError(f"{physics} boundary tag {tag!r} not present in mesh")
    tf = TraceSpace(iface.fluid_trace, variant)
    tp = TraceSpace(iface.poro_trace, variant)
    Ef, Ep = mesh_f.n_edges, mesh_p.n_edges
    dims = {
        "sigma_f": 4 * Ef,
        "u_p": 2 * Ep,
        "sigma_p": 4 * Ep,
        "p_p": mesh_p.n_triangles,
        "phi": 2 * tf.dim,
        "theta": 2 * tp.dim,
        "lam": tp.dim,
        "u_f": 2 * mesh_f.n_triangles,
        "u_s": 2 * mesh_p.n_triangles,
        "gamma_f": mesh_f.n_vertices,
        "gamma_p": mesh_p.n_vertices,
    }
    offsets, o = {}, 0
    for n in FIELDS:
        offsets[n] = o
        o += dims[n]

    ess_f_full = _edge_dofs(mesh_f, bcs.tags("fluid", "traction"), (0, 1))
    ess_f_norm = _edge_dofs(mesh_f, bcs.tags("fluid", "normal_traction"), None, axis_row=True)
    ess_f = _merge(ess_f_full, ess_f_norm)
    essential = {
        "sigma_f": ess_f,
        "u_p": _edge_dofs(mesh_p, bcs.tags("darcy", "flux"), None),
        "sigma_p": _edge_dofs(mesh_p, bcs.tags("elasticity", "traction"), (0, 1)),
    }
    return FeSystem(
        mesh_f=mesh_f,
        mesh_p=mesh_p,
        iface=iface,
        variant=variant,
        bcs=bcs,
        bdm_f=bdm1_space(mesh_f),
        bdm_p=bdm1_space(mesh_p),
        trace_f=tf,
        trace_p=tp,
        dims=dims,
        offsets=offsets,
        essential=essential,
    )


def _merge(a: EssentialDofs, b: EssentialDofs) -> EssentialDofs:
    dofs = np.concatenate([a.dofs, b.dofs])
    dofs_u, idx = np.unique(dofs, return_index=True)
    cat = lambda x, y: np.concatenate([x, y])[idx]  # noqa: E731
    return EssentialDofs(
        dofs_u,
        cat(a.edges, b.edges),
        cat(a.endpoint, b.endpoint),
        cat(a.row, b.row),
        cat(a.tags, b.tags),
    )
