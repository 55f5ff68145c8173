"""Triangular meshes for the fluid and poroelastic subdomains and the
interface between them.

Edges are oriented from the lower to the higher global vertex index; the
global edge normal is the clockwise rotation of that edge vector.  Each
triangle stores, for its local edge ``k`` (opposite local vertex ``k``), the
global edge id and a sign that is ``+1`` when the triangle's outward normal
agrees with the global edge normal.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, GeometryError

INTERIOR = "interior"
INTERFACE = "interface"

_TOL = 1e-10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Mesh:
    """Oriented triangle mesh with edge incidence and boundary tags.

    Attributes:
        vertices: (N, 2) coordinates.
        triangles: (M, 3) vertex ids, counterclockwise.
        edges: (E, 2) vertex ids, lower id first.
        edge_tags: (E,) labels; ``"interior"``, ``"interface"`` or a side label.
        tri_edges: (M, 3) global edge of local edge k (opposite local vertex k).
        tri_signs: (M, 3) +1/-1 orientation of local edges against global normals.
        edge_tris: (E, 2) adjacent triangles, -1 where absent.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_tags: np.ndarray
    tri_edges: np.ndarray
    tri_signs: np.ndarray
    edge_tris: np.ndarray
    tri_tags: np.ndarray = field(default=None)  # type: ignore[assignment]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def jacobians(self) -> tuple[np.ndarray, np.ndarray]:
        """Affine map Jacobians (M, 2, 2) and their determinants."""
        p = self.vertices[self.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        return J, det

    def areas(self) -> np.ndarray:
        return 0.5 * self.jacobians()[1]

    def edge_vectors(self) -> np.ndarray:
        return self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]

    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.edge_vectors(), axis=1)

    def edge_normals(self) -> np.ndarray:
        """Unit global normals (clockwise rotation of the oriented edge)."""
        d = self.edge_vectors()
        n = np.stack([d[:, 1], -d[:, 0]], axis=1)
        return n / np.linalg.norm(n, axis=1)[:, None]

    def h(self) -> float:
        return float(self.edge_lengths().max())

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def edges_with_tag(self, tag: str) -> np.ndarray:
        return np.flatnonzero(self.edge_tags == tag)

    def boundary_tags(self) -> list[str]:
        tags = {t for t in self.edge_tags.tolist() if t != INTERIOR}
        return sorted(tags)


def make_mesh(
    vertices: np.ndarray,
    triangles: np.ndarray,
    edge_tags: Mapping[tuple[int, int], str] | None = None,
    tri_tags: np.ndarray | None = None,
) -> Mesh:
    """Build edge connectivity, orientation signs and default tags.

    Triangles with negative orientation are flipped.  Boundary edges without
    an explicit tag get the bounding-box side they lie on, or ``"boundary"``.
    """
    vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
    triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    if len(triangles) == 0:
        raise GeometryError("mesh has no triangles")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise GeometryError("triangle references a missing vertex")

    p = vertices[triangles]
    area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 2, 0] - p[:, 0, 0]
    ) * (p[:, 1, 1] - p[:, 0, 1])
    scale = max(np.ptp(vertices, axis=0).max(), 1.0) ** 2
    if np.any(np.abs(area2) <= 1e-14 * scale):
        raise GeometryError("degenerate triangle")
    flip = area2 < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]

    M = len(triangles)
    loc = np.array([[1, 2], [2, 0], [0, 1]])
    pairs = triangles[:, loc]  # (M, 3, 2)
    lo = pairs.min(axis=2)
    hi = pairs.max(axis=2)
    keys = np.stack([lo.ravel(), hi.ravel()], axis=1)
    edges, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    tri_edges = inverse.reshape(M, 3)
    tri_signs = np.where(pairs[:, :, 0] < pairs[:, :, 1], 1, -1)

    E = len(edges)
    count = np.bincount(inverse, minlength=E)
    if count.max() > 2:
        e = int(np.argmax(count))
        raise GeometryError(f"edge {tuple(edges[e])} shared by more than 2 triangles")
    order = np.argsort(inverse, kind="stable")
    owner = np.repeat(np.arange(M), 3)[order]
    first = np.searchsorted(inverse[order], np.arange(E))
    edge_tris = -np.ones((E, 2), dtype=np.int64)
    edge_tris[:, 0] = owner[first]
    two = count == 2
    edge_tris[two, 1] = owner[first[two] + 1]

    tags = np.full(E, INTERIOR, dtype=object)
    boundary = count == 1
    lookup = {}
    if edge_tags:
        lookup = {(min(a, b), max(a, b)): v for (a, b), v in edge_tags.items()}
    lo_xy = vertices.min(axis=0)
    hi_xy = vertices.max(axis=0)
    tol = 1e-10 * max(np.ptp(vertices, axis=0).max(), 1.0)
    for e in np.flatnonzero(boundary):
        a, b = (int(v) for v in edges[e])
        if (a, b) in lookup:
            tags[e] = lookup[(a, b)]
            continue
        pa, pb = vertices[a], vertices[b]
        if abs(pa[0] - lo_xy[0]) < tol and abs(pb[0] - lo_xy[0]) < tol:
            tags[e] = "left"
        elif abs(pa[0] - hi_xy[0]) < tol and abs(pb[0] - hi_xy[0]) < tol:
            tags[e] = "right"
        elif abs(pa[1] - lo_xy[1]) < tol and abs(pb[1] - lo_xy[1]) < tol:
            tags[e] = "bottom"
        elif abs(pa[1] - hi_xy[1]) < tol and abs(pb[1] - hi_xy[1]) < tol:
            tags[e] = "top"
        else:
            tags[e] = "boundary"
    if tri_tags is None:
        tri_tags = np.zeros(M, dtype=np.int64)
    return Mesh(
        vertices=_frozen(vertices),
        triangles=_frozen(triangles),
        edges=_frozen(edges.astype(np.int64)),
        edge_tags=_frozen(tags),
        tri_edges=_frozen(tri_edges.astype(np.int64)),
        tri_signs=_frozen(tri_signs.astype(np.int64)),
        edge_tris=_frozen(edge_tris),
        tri_tags=_frozen(np.asarray(tri_tags)),
    )


def build_rect_mesh(
    bounds: Sequence[float], nx: int, ny: int, diag: str = "left"
) -> Mesh:
    """Structured triangulation of a rectangle with ``2 * nx * ny`` triangles.

    ``diag="right"`` cuts every cell along the (x0, y0)-(x1, y1) diagonal,
    ``"left"`` along the other one, ``"alternating"`` switches by cell parity.
    ``"crossed"`` adds the cell center and gives ``4 * nx * ny`` triangles.
    """
    x0, y0, x1, y1 = (float(v) for v in bounds)
    if not (x1 > x0 and y1 > y0):
        raise ConfigError(f"invalid rectangle bounds {tuple(bounds)}")
    if int(nx) < 1 or int(ny) < 1:
        raise ConfigError("rectangle mesh needs nx, ny >= 1")
    if diag not in ("left", "right", "alternating", "crossed"):
        raise ConfigError(f"unknown diagonal option {diag!r}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    if diag == "crossed":
        cx, cy = np.meshgrid(0.5 * (xs[1:] + xs[:-1]), 0.5 * (ys[1:] + ys[:-1]), indexing="xy")
        base = len(vertices)
        vertices = np.concatenate([vertices, np.stack([cx.ravel(), cy.ravel()], axis=1)])
        for j in range(ny):
            for i in range(nx):
                a, b = vid(i, j), vid(i + 1, j)
                c, d = vid(i + 1, j + 1), vid(i, j + 1)
                m = base + j * nx + i
                tris += [(a, b, m), (b, c, m), (c, d, m), (d, a, m)]
        return make_mesh(vertices, np.array(tris))
    for j in range(ny):
        for i in range(nx):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            right = diag == "right" or (diag == "alternating" and (i + j) % 2 == 1)
            if right:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return make_mesh(vertices, np.array(tris))


def classify_boundary(mesh: Mesh, spec: Mapping[str, str]) -> Mesh:
    """Relabel boundary edges through ``spec`` (current label -> new tag).

    Every non-interior, non-interface edge must be covered by ``spec``.
    Interface edges keep their tag.
    """
    tags = np.array(mesh.edge_tags, dtype=object)
    for e, tag in enumerate(mesh.edge_tags):
        if tag in (INTERIOR, INTERFACE):
            continue
        if tag not in spec:
            raise ConfigError(
                f"boundary edge {tuple(mesh.edges[e])} with label {tag!r} "
                f"is not covered by the boundary specification"
            )
        tags[e] = spec[tag]
    return Mesh(
        vertices=mesh.vertices,
        triangles=mesh.triangles,
        edges=mesh.edges,
        edge_tags=_frozen(tags),
        tri_edges=mesh.tri_edges,
        tri_signs=mesh.tri_signs,
        edge_tris=mesh.edge_tris,
        tri_tags=mesh.tri_tags,
    )


def submesh(parent: Mesh, mask: np.ndarray) -> Mesh:
    """Extract the triangles selected by ``mask``.

    Edges between selected and unselected triangles become interface edges;
    parent boundary tags are inherited.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise GeometryError("empty submesh")
    tris = parent.triangles[mask]
    used = np.unique(tris)
    renum = -np.ones(parent.n_vertices, dtype=np.int64)
    renum[used] = np.arange(len(used))
    tags = {}
    for e, (a, b) in enumerate(parent.edges):
        t0, t1 = parent.edge_tris[e]
        inside = [t >= 0 and mask[t] for t in (t0, t1)]
        if not any(inside) or renum[a] < 0 or renum[b] < 0:
            continue
        if all(inside):
            continue
        if t1 >= 0:
            tags[(int(renum[a]), int(renum[b]))] = INTERFACE
        else:
            tags[(int(renum[a]), int(renum[b]))] = str(parent.edge_tags[e])
    return make_mesh(parent.vertices[used], renum[tris], tags, parent.tri_tags[mask])


# ---------------------------------------------------------------------------
# ASCII mesh files


def read_mesh(path: str | Path, region: str | None = None) -> Mesh:
    """Read the ASCII triangle-list format.

    Layout::

        vertices N triangles M
        x y                      (N lines)
        i j k tag                (M lines)
        edges K                  (optional)
        i j tag                  (K lines)

    With ``region`` given only triangles carrying that tag are kept and the
    edges they share with other regions are tagged ``interface``.
    """
    text = Path(path).read_text().split("\n")
    lines = [ln.split("#")[0].strip() for ln in text]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ConfigError(f"{path}: empty mesh file")
    m = re.match(r"vertices\s+(\d+)\s*/?\s*triangles\s+(\d+)$", lines[0])
    if not m:
        raise ConfigError(f"{path}: bad header {lines[0]!r}")
    nv, nt = int(m.group(1)), int(m.group(2))
    try:
        verts = np.array([[float(v) for v in ln.split()[:2]] for ln in lines[1 : 1 + nv]])
        trow = [ln.split() for ln in lines[1 + nv : 1 + nv + nt]]
        tris = np.array([[int(v) for v in r[:3]] for r in trow])
        ttags = np.array([r[3] if len(r) > 3 else "0" for r in trow], dtype=object)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: malformed vertex/triangle block") from exc
    if len(verts) != nv or len(tris) != nt:
        raise ConfigError(f"{path}: truncated file")
    edge_tags: dict[tuple[int, int], str] = {}
    rest = lines[1 + nv + nt :]
    if rest:
        m = re.match(r"edges\s+(\d+)$", rest[0])
        if not m:
            raise ConfigError(f"{path}: unexpected line {rest[0]!r}")
        for ln in rest[1 : 1 + int(m.group(1))]:
            i, j, tag = ln.split()[:3]
            edge_tags[(int(i), int(j))] = tag
    full = make_mesh(verts, tris, edge_tags, ttags)
    if region is None:
        return full
    mask = full.tri_tags == region
    if not mask.any():
        raise ConfigError(f"{path}: no triangles tagged {region!r}")
    return submesh(full, mask)


def write_mesh(mesh: Mesh, path: str | Path) -> None:
    with open(path, "w") as f:
        f.write(f"vertices {mesh.n_vertices} triangles {mesh.n_triangles}\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g}\n")
        for (i, j, k), tag in zip(mesh.triangles, mesh.tri_tags):
            f.write(f"{i} {j} {k} {tag}\n")
        bnd = np.flatnonzero(mesh.edge_tags != INTERIOR)
        f.write(f"edges {len(bnd)}\n")
        for e in bnd:
            f.write(f"{mesh.edges[e, 0]} {mesh.edges[e, 1]} {mesh.edge_tags[e]}\n")


# ---------------------------------------------------------------------------
# interface


@dataclass(frozen=True)
class Trace:
    """Interface edges of one subdomain mesh, viewed as a 1D mesh."""

    edges: np.ndarray  # mesh edge ids
    nodes: np.ndarray  # mesh vertex ids touched by the trace
    edge_nodes: np.ndarray  # (S, 2) positions in ``nodes`` of each edge's endpoints
    lengths: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def h(self) -> float:
        return float(self.lengths.max())


def _trace(mesh: Mesh) -> Trace:
    edges = mesh.edges_with_tag(INTERFACE)
    if len(edges) == 0:
        raise GeometryError("mesh has no interface edges")
    nodes, inv = np.unique(mesh.edges[edges].ravel(), return_inverse=True)
    return Trace(
        edges=_frozen(edges),
        nodes=_frozen(nodes),
        edge_nodes=_frozen(inv.reshape(-1, 2)),
        lengths=_frozen(mesh.edge_lengths()[edges]),
    )


def outward_normals(mesh: Mesh, edges: np.ndarray) -> np.ndarray:
    """Outward unit normals of boundary ``edges`` with respect to ``mesh``."""
    n = mesh.edge_normals()[edges]
    t = mesh.edge_tris[edges, 0]
    k = np.argmax(mesh.tri_edges[t] == np.asarray(edges)[:, None], axis=1)
    s = mesh.tri_signs[t, k]
    return n * s[:, None]


@dataclass(frozen=True)
class InterfaceMesh:
    """Fluid and poroelastic traces of the interface and their common refinement.

    Intersection segment ``s`` runs from ``a[s]`` to ``b[s]`` and lies inside
    fluid trace edge ``fluid_seg[s]`` and poro trace edge ``poro_seg[s]``
    (indices into the respective :class:`Trace`).
    """

    fluid_trace: Trace
    poro_trace: Trace
    a: np.ndarray
    b: np.ndarray
    fluid_seg: np.ndarray
    poro_seg: np.ndarray
    length: np.ndarray
    n_f: np.ndarray
    n_p: np.ndarray
    t_f: np.ndarray

    @property
    def n_segments(self) -> int:
        return len(self.length)

    def total_length(self) -> float:
        return float(self.length.sum())


def build_interface(mesh_f: Mesh, mesh_p: Mesh) -> InterfaceMesh:
    """Common refinement of the two interface traces.

    The traces may be non-matching; each pair of collinear, overlapping
    fluid/poro edges contributes one intersection segment.
    """
    tf, tp = _trace(mesh_f), _trace(mesh_p)
    fa = mesh_f.vertices[mesh_f.edges[tf.edges, 0]]
    fb = mesh_f.vertices[mesh_f.edges[tf.edges, 1]]
    pa = mesh_p.vertices[mesh_p.edges[tp.edges, 0]]
    pb = mesh_p.vertices[mesh_p.edges[tp.edges, 1]]
    nf_out = outward_normals(mesh_f, tf.edges)

    scale = max(tf.lengths.sum(), tp.lengths.sum())
    tol = _TOL * scale
    segs = []
    for i in range(tf.n_edges):
        d = fb[i] - fa[i]
        L = np.linalg.norm(d)
        u = d / L
        nrm = np.array([u[1], -u[0]])
        # poro endpoints in the fluid edge frame
        sa = (pa - fa[i]) @ u
        sb = (pb - fa[i]) @ u
        da = (pa - fa[i]) @ nrm
        db = (pb - fa[i]) @ nrm
        collinear = (np.abs(da) < tol) & (np.abs(db) < tol)
        lo = np.maximum(np.minimum(sa, sb), 0.0)
        hi = np.minimum(np.maximum(sa, sb), L)
        for j in np.flatnonzero(collinear & (hi - lo > tol)):
            segs.append((i, j, lo[j], hi[j]))
    if not segs:
        raise GeometryError("fluid and poroelastic interface traces do not overlap")
    segs.sort(key=lambda s: (s[0], s[2]))
    fi = np.array([s[0] for s in segs])
    pj = np.array([s[1] for s in segs])
    s0 = np.array([s[2] for s in segs])
    s1 = np.array([s[3] for s in segs])
    u = (fb - fa) / tf.lengths[:, None]
    a = fa[fi] + s0[:, None] * u[fi]
    b = fa[fi] + s1[:, None] * u[fi]
    length = s1 - s0

    cover_f = np.bincount(fi, weights=length, minlength=tf.n_edges)
    cover_p = np.bincount(pj, weights=length, minlength=tp.n_edges)
    if np.any(np.abs(cover_f - tf.lengths) > tol) or np.any(
        np.abs(cover_p - tp.lengths) > tol
    ):
        raise GeometryError("interface traces do not coincide (gap or overlap)")

    n_f = nf_out[fi]
    np_out = outward_normals(mesh_p, tp.edges)[pj]
    if np.any(np.abs(np.einsum("ij,ij->i", n_f, np_out) + 1.0) > 1e-8):
        raise GeometryError("interface normals are not opposite")
    t_f = np.stack([-n_f[:, 1], n_f[:, 0]], axis=1)
    return InterfaceMesh(
        fluid_trace=tf,
        poro_trace=tp,
        a=_frozen(a),
        b=_frozen(b),
        fluid_seg=_frozen(fi),
        poro_seg=_frozen(pj),
        length=_frozen(length),
        n_f=_frozen(n_f),
        n_p=_frozen(-n_f),
        t_f=_frozen(t_f),
    )
