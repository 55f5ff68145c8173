"""Ready-made problems: the convergence test, river/aquifer coupling, and a
porous medium with a fluid-filled cavity."""

from __future__ import annotations

import numpy as np

from . import forms
from .elements import BoundaryConditions, build_fe_system
from .errors import ConfigError
from .geometry import Mesh, build_interface, build_rect_mesh, classify_boundary, submesh
from .system import SolverOptions
from .timeloop import InitialData, Problem, TimeGrid
from .verify import example1_problem

EXAMPLE1_COEFF = dict(mu=1.0, alpha_p=1.0, lambda_p=1.0, mu_p=1.0, s0=1.0, K=1.0, alpha_bjs=1.0)
EXAMPLE2_COEFF = dict(EXAMPLE1_COEFF)
EXAMPLE3_COEFF = dict(
    mu=1e-6, alpha_p=1.0, lambda_p=5.0 / 18.0 * 1e7, mu_p=5.0 / 12.0 * 1e7, s0=6.89e-2, K=1e-8, alpha_bjs=1.0
)

PRESETS = ("example1", "example2", "example3", "custom")


def coefficients(values: dict) -> forms.Coefficients:
    """Coefficients from plain values; a scalar ``K`` means ``K * I``."""
    kw = dict(values)
    K = np.asarray(kw.pop("K", 1.0), dtype=float)
    if K.ndim == 0:
        K = float(K) * np.eye(2)
    return forms.Coefficients(K=K, **kw)


# ---------------------------------------------------------------------------
# river over aquifer


EXAMPLE2_BCS = BoundaryConditions(
    fluid={"f-right": "traction"},
    darcy={"p-left": "flux", "p-right": "flux"},
    elasticity={"p-bottom": "traction"},
)


def inflow(x, n, t):
    y = x[:, 1]
    return np.stack([-40.0 * y * (y - 1.0), np.zeros_like(y)], axis=1)


def example2_data() -> forms.ProblemData:
    zero_v = lambda x, n, t: np.zeros((len(x), 2))  # noqa: E731
    zero_s = lambda x, n, t: np.zeros(len(x))  # noqa: E731
    return forms.ProblemData(
        fluid_bc={"f-left": inflow, "f-top": zero_v, "f-right": zero_v},
        darcy_bc={"p-bottom": zero_s, "p-left": zero_s, "p-right": zero_s},
        elastic_bc={"p-bottom": zero_v, "p-left": zero_v, "p-right": zero_v},
    )


def example2_meshes(nf: int = 32, np_: int = 24) -> tuple[Mesh, Mesh]:
    """Fluid on (0,2)x(0,1) with ``2nf x nf`` cells, aquifer on (0,2)x(-1,0) with ``2np x np``."""
    mf = classify_boundary(
        build_rect_mesh((0, 0, 2, 1), 2 * nf, nf, "right"),
        {"left": "f-left", "right": "f-right", "top": "f-top", "bottom": "interface"},
    )
    mp = classify_boundary(
        build_rect_mesh((0, -1, 2, 0), 2 * np_, np_, "left"),
        {"left": "p-left", "right": "p-right", "bottom": "p-bottom", "top": "interface"},
    )
    return mf, mp


def example2_problem(
    nf: int = 32,
    np_: int = 24,
    variant: str = "S2",
    path: str = "reduced",
    T: float = 3.0,
    dt: float = 0.06,
    coeff: forms.Coefficients | None = None,
    opts: SolverOptions | None = None,
) -> Problem:
    mf, mp = example2_meshes(nf, np_)
    fe = build_fe_system(mf, mp, build_interface(mf, mp), variant, EXAMPLE2_BCS)
    return Problem(
        fe=fe,
        coeff=coeff or coefficients(EXAMPLE2_COEFF),
        data=example2_data(),
        grid=TimeGrid(T, dt),
        init_mode="discrete-construct",
        init=InitialData(),
        path=path,
        opts=opts or SolverOptions(),
    )


# ---------------------------------------------------------------------------
# cavity in a poroelastic block


def star_cavity(points: np.ndarray, center=(0.5, 0.5), r0: float = 0.22, amp: float = 0.35, arms: int = 5, channel: float = 0.08) -> np.ndarray:
    """Star-shaped cavity joined to the right side by a straight channel."""
    d = points - np.asarray(center)
    r = np.hypot(d[:, 0], d[:, 1])
    ang = np.arctan2(d[:, 1], d[:, 0])
    star = r < r0 * (1.0 + amp * np.cos(arms * ang))
    chan = (np.abs(d[:, 1]) < channel) & (d[:, 0] > 0)
    return star | chan


def example3_meshes(n: int = 32, mask_fn=star_cavity, parent: Mesh | None = None) -> tuple[Mesh, Mesh]:
    """Split a mesh into cavity and porous parts.

    By default the parent is an ``n x n`` crossed mesh of the unit square and
    whole cells are assigned by their centers, so every interface vertex
    touches at least two triangles of each side.  A given ``parent`` is
    split triangle by triangle at the centroids.
    """
    if parent is None:
        parent = build_rect_mesh((0, 0, 1, 1), n, n, "crossed")
        c = parent.centroids()
        ij = np.minimum((c * n).astype(np.int64), n - 1)
        mask = np.asarray(mask_fn((ij + 0.5) / n), dtype=bool)
    else:
        mask = np.asarray(mask_fn(parent.centroids()), dtype=bool)
    if mask.all() or not mask.any():
        raise ConfigError("cavity mask must select some but not all triangles")
    mf = submesh(parent, mask)
    mp = submesh(parent, ~mask)
    ftags = {t: f"f-{t}" for t in mf.boundary_tags() if t != "interface"}
    mf = classify_boundary(mf, ftags)
    mp = classify_boundary(mp, {t: f"p-{t}" for t in mp.boundary_tags() if t != "interface"})
    if set(mf.boundary_tags()) - {"interface", "f-right"}:
        raise ConfigError("the cavity may only touch the right side of the block")
    return mf, mp


EXAMPLE3_BCS = BoundaryConditions(
    fluid={"f-right": "normal_traction"},
    darcy={"p-top": "flux", "p-bottom": "flux"},
    elasticity={"p-left": "traction", "p-right": "traction"},
)


def ramp(t: float, t_ramp: float = 0.5) -> float:
    return min(max(t / t_ramp, 0.0), 1.0)


def example3_data(drop: float = 1.0, alpha_p: float = 1.0, t_ramp: float = 0.5) -> forms.ProblemData:
    """Boundary data of the pressure-drop problem, as perturbation of the
    uniform reference state (pressure 1000 everywhere)."""
    zero_v = lambda x, n, t: np.zeros((len(x), 2))  # noqa: E731
    zero_s = lambda x, n, t: np.zeros(len(x))  # noqa: E731

    def p_left(x, n, t):
        return np.full(len(x), drop * ramp(t, t_ramp))

    def sig_left(x, n, t):
        return -alpha_p * p_left(x, n, t)[:, None] * n

    return forms.ProblemData(
        fluid_bc={"f-right": zero_v},
        darcy_bc={"p-left": p_left, "p-right": zero_s, "p-top": zero_s, "p-bottom": zero_s},
        elastic_bc={"p-left": sig_left, "p-right": zero_v, "p-top": zero_v, "p-bottom": zero_v},
    )


def example3_problem(
    n: int = 32,
    variant: str = "S2",
    path: str = "reduced",
    T: float = 10.0,
    dt: float = 0.05,
    coeff: forms.Coefficients | None = None,
    meshes: tuple[Mesh, Mesh] | None = None,
    opts: SolverOptions | None = None,
) -> Problem:
    mf, mp = meshes or example3_meshes(n)
    fe = build_fe_system(mf, mp, build_interface(mf, mp), variant, EXAMPLE3_BCS)
    coeff = coeff or coefficients(EXAMPLE3_COEFF)
    return Problem(
        fe=fe,
        coeff=coeff,
        data=example3_data(alpha_p=coeff.alpha_p),
        grid=TimeGrid(T, dt),
        init_mode="discrete-construct",
        init=InitialData(),
        path=path,
        opts=opts or SolverOptions(),
    )


def example3_metrics(fe, state) -> dict:
    """Sanity measures: finiteness, channel flow, pressure range."""
    uf = state.u_f.reshape(-1, 2)
    vec = state.vector()
    return {
        "finite": bool(np.all(np.isfinite(vec))),
        "max_fluid_speed": float(np.hypot(uf[:, 0], uf[:, 1]).max()),
        "p_min": float(state.p_p.min()),
        "p_max": float(state.p_p.max()),
    }


def build(preset: str, **kw):
    """Problem for a named preset (``example1`` returns ``(problem, mms)``)."""
    if preset == "example1":
        return example1_problem(**kw)
    if preset == "example2":
        return example2_problem(**kw)
    if preset == "example3":
        return example3_problem(**kw)
    raise ConfigError(f"unknown preset {preset!r}; expected one of {PRESETS[:-1]}")
