"""Manufactured solution, error norms, convergence tables and property checks."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sps

from . import forms
from .elements import (
    BoundaryConditions,
    barycentric,
    bdm1_eval_at,
    bdm1_space,
    build_fe_system,
    evaluate_bdm1,
    evaluate_tensor,
    interpolate_tensor_field,
    p1_values,
    tensor_divergence,
)
from .geometry import build_interface, build_rect_mesh, classify_boundary
from .quadrature import gauss_seg, gauss_tri, map_points, rule_for, vertex_rule
from .reduction import build_vertex_blocks, eliminate, rayleigh_quotients
from .system import SolverOptions
from .timeloop import (
    InitialData,
    Problem,
    TimeGrid,
    TimeStepper,
    energy,
    initial_data,
    row_residuals,
    run,
)

log = logging.getLogger(__name__)

PI = math.pi

# column order of the error tables
TABLE_FIELDS = (
    "sigma_f", "u_f", "gamma_f", "p_f",
    "sigma_p", "u_s", "gamma_p", "u_p", "p_p",
    "eta", "phi", "theta", "lam",
)
LINF_FIELDS = ("sigma_p", "p_p")
MULTIPLIERS = ("phi", "theta", "lam")
ERROR_DEGREE = 6


# ---------------------------------------------------------------------------
# manufactured solution


class MmsFields:
    """Closures of the convergence-test solution.

    ``u_f = u_s = pi cos(pi t) v``, ``eta = sin(pi t) v`` with
    ``v = (-3x + cos y, y + 1)``, ``p_p = e^t sin(pi x) cos(pi y / 2)``,
    ``p_f = p_p + 2 pi cos(pi t)`` and ``u_p = -(K / mu) grad p_p`` for
    ``K = k I``.  Every function takes ``(points (n, 2), t)``.  The
    interface conditions hold on ``y = 0`` only for the unit parameters.
    """

    def __init__(self, coeff: forms.Coefficients | None = None):
        c = coeff or forms.Coefficients()
        if callable(c.K):
            raise ValueError("manufactured solution needs a constant isotropic K")
        K = np.asarray(c.K, dtype=float)
        if abs(K[0, 1]) > 0 or abs(K[0, 0] - K[1, 1]) > 0:
            raise ValueError("manufactured solution needs K = k I")
        self.coeff = c
        self.k = float(K[0, 0])

    # primary fields
    @staticmethod
    def _v(x):
        return np.stack([-3.0 * x[:, 0] + np.cos(x[:, 1]), x[:, 1] + 1.0], axis=1)

    @staticmethod
    def _grad_v(x):
        g = np.zeros((len(x), 2, 2))
        g[:, 0, 0] = -3.0
        g[:, 0, 1] = -np.sin(x[:, 1])
        g[:, 1, 1] = 1.0
        return g

    def p_p(self, x, t):
        return np.exp(t) * np.sin(PI * x[:, 0]) * np.cos(PI * x[:, 1] / 2)

    def grad_p_p(self, x, t):
        e = np.exp(t)
        return np.stack(
            [
                e * PI * np.cos(PI * x[:, 0]) * np.cos(PI * x[:, 1] / 2),
                -e * (PI / 2) * np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1] / 2),
            ],
            axis=1,
        )

    def u_f(self, x, t):
        return PI * np.cos(PI * t) * self._v(x)

    def p_f(self, x, t):
        return self.p_p(x, t) + 2 * PI * np.cos(PI * t)

    def eta(self, x, t):
        return np.sin(PI * t) * self._v(x)

    def u_s(self, x, t):
        return self.u_f(x, t)

    def u_p(self, x, t):
        return -(self.k / self.coeff.mu) * self.grad_p_p(x, t)

    def div_u_p(self, x, t):
        return (self.k / self.coeff.mu) * (5 * PI**2 / 4) * self.p_p(x, t)

    # derived fields
    def sigma_f(self, x, t):
        G = PI * np.cos(PI * t) * self._grad_v(x)
        e = 0.5 * (G + np.swapaxes(G, 1, 2))
        return -self.p_f(x, t)[:, None, None] * np.eye(2) + 2 * self.coeff.mu * e

    def gamma_f(self, x, t):
        """Scalar ``g`` of the vorticity ``[[0, g], [-g, 0]]``."""
        return -(PI / 2) * np.cos(PI * t) * np.sin(x[:, 1])

    def sigma_p(self, x, t):
        c = self.coeff
        G = np.sin(PI * t) * self._grad_v(x)
        e = 0.5 * (G + np.swapaxes(G, 1, 2))
        div_eta = -2.0 * np.sin(PI * t)
        iso = c.lambda_p * div_eta - c.alpha_p * self.p_p(x, t)
        return iso[:, None, None] * np.eye(2) + 2 * c.mu_p * e

    def gamma_p(self, x, t):
        return self.gamma_f(x, t)

    # interface traces
    def phi(self, x, t):
        return self.u_f(x, t)

    def theta(self, x, t):
        return self.u_s(x, t)

    def lam(self, x, t):
        return self.p_p(x, t)

    # loads
    def q_f(self, x, t):
        return np.full(len(x), -2 * PI * np.cos(PI * t))

    def f_f(self, x, t):
        out = self.grad_p_p(x, t)
        out[:, 0] += self.coeff.mu * PI * np.cos(PI * t) * np.cos(x[:, 1])
        return out

    def f_p(self, x, t):
        c = self.coeff
        out = c.alpha_p * self.grad_p_p(x, t)
        out[:, 0] += c.mu_p * np.sin(PI * t) * np.cos(x[:, 1])
        return out

    def q_p(self, x, t):
        c = self.coeff
        return (
            c.s0 * self.p_p(x, t)
            - 2 * c.alpha_p * PI * np.cos(PI * t)
            + (5 * PI**2 / 4) * (self.k / c.mu) * self.p_p(x, t)
        )

    def div_sigma_f(self, x, t):
        return -self.f_f(x, t)

    def div_sigma_p(self, x, t):
        return -self.f_p(x, t)

    def problem_data(self) -> forms.ProblemData:
        """Loads and the reference boundary layout of the convergence test."""

        def traction(fn):
            return lambda x, n, t: np.einsum("nij,nj->ni", fn(x, t), n)

        return forms.ProblemData(
            f_f=self.f_f,
            f_p=self.f_p,
            q_f=self.q_f,
            q_p=self.q_p,
            fluid_bc={
                "f-left": lambda x, n, t: self.u_f(x, t),
                "f-right": lambda x, n, t: self.u_f(x, t),
                "f-top": traction(self.sigma_f),
            },
            darcy_bc={
                "p-left": lambda x, n, t: self.p_p(x, t),
                "p-right": lambda x, n, t: self.p_p(x, t),
                "p-bottom": lambda x, n, t: np.einsum("ni,ni->n", self.u_p(x, t), n),
            },
            elastic_bc={
                "p-left": lambda x, n, t: self.u_s(x, t),
                "p-right": lambda x, n, t: self.u_s(x, t),
                "p-bottom": traction(self.sigma_p),
            },
        )


EXAMPLE1_BCS = BoundaryConditions(
    fluid={"f-top": "traction"}, darcy={"p-bottom": "flux"}, elasticity={"p-bottom": "traction"}
)


def example1_meshes(level: int):
    """Non-matching meshes: fluid ``8 * 2^level``, poro ``5 * 2^level`` cells per side."""
    nf, np_ = 8 * 2**level, 5 * 2**level
    mf = classify_boundary(
        build_rect_mesh((0, 0, 1, 1), nf, nf, "right"),
        {"left": "f-left", "right": "f-right", "top": "f-top", "bottom": "interface"},
    )
    mp = classify_boundary(
        build_rect_mesh((0, -1, 1, 0), np_, np_, "left"),
        {"left": "p-left", "right": "p-right", "bottom": "p-bottom", "top": "interface"},
    )
    return mf, mp


def example1_problem(
    level: int,
    variant: str = "S2",
    path: str = "reduced",
    coeff: forms.Coefficients | None = None,
    T: float = 0.01,
    dt: float = 1e-3,
    init_mode: str = "analytic-interpolate",
    opts: SolverOptions | None = None,
) -> tuple[Problem, MmsFields]:
    coeff = coeff or forms.Coefficients()
    mms = MmsFields(coeff)
    mf, mp = example1_meshes(level)
    fe = build_fe_system(mf, mp, build_interface(mf, mp), variant, EXAMPLE1_BCS)
    pb = Problem(
        fe=fe,
        coeff=coeff,
        data=mms.problem_data(),
        grid=TimeGrid(T, dt),
        init_mode=init_mode,
        init=InitialData.from_exact(mms),
        path=path,
        opts=opts or SolverOptions(),
    )
    return pb, mms


# ---------------------------------------------------------------------------
# residual oracle


def _symbolic_solution():
    import sympy as sp

    x, y, t = sp.symbols("x y t", real=True)
    mu, mu_p, lam_p, alpha, s0, k = sp.symbols("mu mu_p lambda_p alpha s0 k", positive=True)
    v = sp.Matrix([-3 * x + sp.cos(y), y + 1])
    u_f = sp.pi * sp.cos(sp.pi * t) * v
    p_p = sp.exp(t) * sp.sin(sp.pi * x) * sp.cos(sp.pi * y / 2)
    p_f = p_p + 2 * sp.pi * sp.cos(sp.pi * t)
    eta = sp.sin(sp.pi * t) * v
    X = sp.Matrix([x, y])

    def grad(w):
        return w.jacobian(X)

    def div_t(S):
        return sp.Matrix([sp.diff(S[i, 0], x) + sp.diff(S[i, 1], y) for i in range(2)])

    I2 = sp.eye(2)
    e_f = (grad(u_f) + grad(u_f).T) / 2
    sigma_f = -p_f * I2 + 2 * mu * e_f
    gam_f = (grad(u_f) - grad(u_f).T) / 2
    e_p = (grad(eta) + grad(eta).T) / 2
    div_eta = sp.diff(eta[0], x) + sp.diff(eta[1], y)
    sigma_p = lam_p * div_eta * I2 + 2 * mu_p * e_p - alpha * p_p * I2
    u_s = sp.diff(eta, t)
    gam_p = (grad(u_s) - grad(u_s).T) / 2
    u_p = -(k / mu) * sp.Matrix([sp.diff(p_p, x), sp.diff(p_p, y)])
    div_u_p = sp.diff(u_p[0], x) + sp.diff(u_p[1], y)
    q_f = sp.diff(u_f[0], x) + sp.diff(u_f[1], y)
    return dict(
        syms=(x, y, t), params=(mu, mu_p, lam_p, alpha, s0, k),
        u_f=u_f, p_f=p_f, p_p=p_p, eta=eta, u_s=u_s, u_p=u_p, div_u_p=div_u_p,
        sigma_f=sigma_f, gamma_f=gam_f[0, 1], sigma_p=sigma_p, gamma_p=gam_p[0, 1],
        grad_u_f=grad(u_f), q_f=q_f,
        f_f=-div_t(sigma_f), f_p=-div_t(sigma_p),
        q_p=sp.diff(s0 * p_p + alpha * div_eta, t) + div_u_p,
    )


def mms_residuals(mms: MmsFields, n_samples: int = 1000, seed: int = 0) -> dict:
    """Max pointwise residuals of the hand-coded closures.

    Each closure is compared with an expression derived symbolically from
    the primary fields (constitutive laws, momentum and mass balances), and
    the interface conditions are evaluated on ``y = 0``.
    """
    import sympy as sp

    S = _symbolic_solution()
    x, y, t = S["syms"]
    c = mms.coeff
    subs = dict(zip(S["params"], (c.mu, c.mu_p, c.lambda_p, c.alpha_p, c.s0, mms.k)))
    rng = np.random.default_rng(seed)
    px = np.column_stack([rng.uniform(0, 1, n_samples), rng.uniform(0, 1, n_samples)])
    pp = np.column_stack([rng.uniform(0, 1, n_samples), rng.uniform(-1, 0, n_samples)])
    tt = rng.uniform(0, 1, n_samples)

    def lam(expr):
        f = sp.lambdify((x, y, t), sp.sympify(expr).subs(subs), "numpy")

        def ev(P):
            out = [np.broadcast_to(np.asarray(f(P[i, 0], P[i, 1], tt[i]), dtype=float), ()) for i in range(len(P))]
            return np.array(out)

        return ev

    def lam_vec(M):
        fs = [lam(M[i]) for i in range(M.shape[0])]
        return lambda P: np.stack([f(P) for f in fs], axis=1)

    def lam_ten(M):
        fs = [[lam(M[i, j]) for j in range(2)] for i in range(2)]
        return lambda P: np.stack([np.stack([fs[i][j](P) for j in range(2)], axis=1) for i in range(2)], axis=1)

    def closure(fn, P):
        return np.stack([np.asarray(fn(P[i : i + 1], tt[i]), dtype=float)[0] for i in range(len(P))])

    res = {}
    checks = [
        ("u_f", mms.u_f, lam_vec(S["u_f"]), px),
        ("p_f", mms.p_f, lam(S["p_f"]), px),
        ("sigma_f", mms.sigma_f, lam_ten(S["sigma_f"]), px),
        ("gamma_f", mms.gamma_f, lam(S["gamma_f"]), px),
        ("f_f", mms.f_f, lam_vec(S["f_f"]), px),
        ("q_f", mms.q_f, lam(S["q_f"]), px),
        ("p_p", mms.p_p, lam(S["p_p"]), pp),
        ("u_p", mms.u_p, lam_vec(S["u_p"]), pp),
        ("div_u_p", mms.div_u_p, lam(S["div_u_p"]), pp),
        ("eta", mms.eta, lam_vec(S["eta"]), pp),
        ("u_s", mms.u_s, lam_vec(S["u_s"]), pp),
        ("sigma_p", mms.sigma_p, lam_ten(S["sigma_p"]), pp),
        ("gamma_p", mms.gamma_p, lam(S["gamma_p"]), pp),
        ("f_p", mms.f_p, lam_vec(S["f_p"]), pp),
        ("q_p", mms.q_p, lam(S["q_p"]), pp),
    ]
    for name, fn, ref, P in checks:
        res[name] = float(np.abs(closure(fn, P) - ref(P)).max())

    # Stokes constitutive law in the form with vorticity and q_f
    G = lam_ten(S["grad_u_f"])(px)
    sf = closure(mms.sigma_f, px)
    gf = closure(mms.gamma_f, px)
    qf = closure(mms.q_f, px)
    dev = sf - 0.5 * np.einsum("nii->n", sf)[:, None, None] * np.eye(2)
    skew = np.zeros_like(G)
    skew[:, 0, 1], skew[:, 1, 0] = gf, -gf
    rhs = G - skew - 0.5 * qf[:, None, None] * np.eye(2)
    res["stokes_constitutive"] = float(np.abs(dev / (2 * c.mu) - rhs).max())
    res["stokes_symmetry"] = float(np.abs(sf - np.swapaxes(sf, 1, 2)).max())
    pf_post = -0.5 * (np.einsum("nii->n", sf) - 2 * c.mu * qf)
    res["stokes_pressure"] = float(np.abs(pf_post - closure(mms.p_f, px)).max())
    # Darcy law
    up = closure(mms.u_p, pp)
    gp = np.stack([np.asarray(mms.grad_p_p(pp[i : i + 1], tt[i]))[0] for i in range(len(pp))])
    res["darcy"] = float(np.abs(c.mu / mms.k * up + gp).max())

    # interface conditions on y = 0 with n_f = (0, -1), n_p = (0, 1), t = (1, 0)
    gx = np.column_stack([rng.uniform(0, 1, n_samples), np.zeros(n_samples)])
    nf, np_ = np.array([0.0, -1.0]), np.array([0.0, 1.0])
    uf, us, upg = closure(mms.u_f, gx), closure(mms.u_s, gx), closure(mms.u_p, gx)
    sfg, spg, ppg = closure(mms.sigma_f, gx), closure(mms.sigma_p, gx), closure(mms.p_p, gx)
    res["iface_mass"] = float(np.abs(uf @ nf + (us + upg) @ np_).max())
    res["iface_momentum"] = float(np.abs(sfg @ nf + spg @ np_).max())
    tf = np.array([1.0, 0.0])
    bjs = c.mu * c.alpha_bjs / math.sqrt(mms.k) * ((uf - us) @ tf)
    res["iface_bjs"] = float(np.abs(sfg @ nf + bjs[:, None] * tf + ppg[:, None] * nf).max())
    return res


# ---------------------------------------------------------------------------
# error norms


def _tri_rule(mesh):
    rule = gauss_tri(ERROR_DEGREE)
    x = map_points(mesh, rule.points)
    w = forms._weights(mesh, rule)
    return rule, x.reshape(-1, 2), w


def _l2(diff: np.ndarray, w: np.ndarray) -> float:
    d = diff.reshape(w.shape + (-1,))
    return float(np.sqrt(np.einsum("tq,tqc->", w, d * d)))


def _surrogate_seminorm(fe, side: str, coef: np.ndarray, exact) -> float:
    """``h_t`` times the squared first-difference seminorm of nodal errors."""
    mesh, space = forms._trace_parts(fe, side)
    nodal = forms.trace_interpolate(fe, side, exact)
    ncomp = len(coef) // space.dim
    err = (coef - nodal).reshape(-1, ncomp)
    d = space.edge_dofs()
    L = space.trace.lengths
    jump = err[d[:, 1]] - err[d[:, 0]]
    return float(space.trace.h() * np.sum((jump**2).sum(axis=1) / L))


def spatial_errors(fe, state, mms: MmsFields) -> dict:
    """Error of one state in each field's spatial norm at ``state.t``."""
    t = state.t
    mf, mp = fe.mesh_f, fe.mesh_p
    out = {}

    rule, xf, wf = _tri_rule(mf)
    rule_p, xp, wp = _tri_rule(mp)
    Mf, Mp = mf.n_triangles, mp.n_triangles
    nq = len(rule.weights)

    def hdiv_tensor(space, coef, exact, div_exact, x, w, M):
        S = evaluate_tensor(space, coef, rule.points).reshape(-1, 4)
        e0 = _l2(S - exact(x, t).reshape(-1, 4), w)
        D = np.repeat(tensor_divergence(space, coef), nq, axis=0)
        e1 = _l2(D - div_exact(x, t), w)
        return math.hypot(e0, e1)

    out["sigma_f"] = hdiv_tensor(fe.bdm_f, state.sigma_f, mms.sigma_f, mms.div_sigma_f, xf, wf, Mf)
    out["sigma_p"] = hdiv_tensor(fe.bdm_p, state.sigma_p, mms.sigma_p, mms.div_sigma_p, xp, wp, Mp)
    out["u_f"] = _l2(np.repeat(state.u_f.reshape(Mf, 2), nq, axis=0) - mms.u_f(xf, t), wf)
    out["u_s"] = _l2(np.repeat(state.u_s.reshape(Mp, 2), nq, axis=0) - mms.u_s(xp, t), wp)
    out["eta"] = _l2(np.repeat(state.eta_p.reshape(Mp, 2), nq, axis=0) - mms.eta(xp, t), wp)
    out["p_p"] = _l2(np.repeat(state.p_p, nq) - mms.p_p(xp, t), wp)
    out["gamma_f"] = _l2(p1_values(mf, state.gamma_f, rule.points).ravel() - mms.gamma_f(xf, t), wf)
    out["gamma_p"] = _l2(p1_values(mp, state.gamma_p, rule_p.points).ravel() - mms.gamma_p(xp, t), wp)
    pf = np.einsum("qi,ti->tq", barycentric(rule.points), state.p_f).ravel()
    out["p_f"] = _l2(pf - mms.p_f(xf, t), wf)
    U = evaluate_bdm1(fe.bdm_p, state.u_p, rule.points).reshape(-1, 2)
    div_u = np.repeat(np.einsum("ti,ti->t", fe.bdm_p.divergences(), state.u_p[fe.bdm_p.ldof]), nq)
    out["u_p"] = math.hypot(_l2(U - mms.u_p(xp, t), wp), _l2(div_u - mms.div_u_p(xp, t), wp))

    for name, side in (("phi", "fluid"), ("theta", "poro"), ("lam", "poro")):
        coef = getattr(state, name)
        vals, x, w = forms.trace_evaluate(fe, side, coef, ERROR_DEGREE)
        exact = getattr(mms, name)
        ex = np.asarray(exact(x.reshape(-1, 2), t), dtype=float).reshape(vals.shape)
        e2 = float(np.einsum("sq,sqc->", w, (vals - ex) ** 2))
        if fe.variant == "S1":
            e2 += _surrogate_seminorm(fe, side, coef, lambda p, ex=exact: ex(p, t))
        out[name] = math.sqrt(e2)
    return out


def error_norms(states: Sequence, mms: MmsFields, fe, dt: float | None = None) -> dict:
    """Space-time errors: ``(dt sum_m |e(t_m)|^2)^{1/2}``, or max over steps for
    ``LINF_FIELDS``; ``m`` runs over the steps after the initial state."""
    steps = list(states[1:]) if len(states) > 1 else list(states)
    if dt is None:
        dt = states[1].t - states[0].t if len(states) > 1 else 1.0
    per = [spatial_errors(fe, s, mms) for s in steps]
    out = {}
    for f in TABLE_FIELDS:
        vals = np.array([p[f] for p in per])
        out[f] = float(vals.max()) if f in LINF_FIELDS else float(np.sqrt(dt * np.sum(vals**2)))
    return out


def rate(e_prev: float, e_cur: float, h_prev: float, h_cur: float) -> float:
    return math.log(e_prev / e_cur) / math.log(h_prev / h_cur)


@dataclass
class ErrorReport:
    """Rows of a convergence table; rates are against the previous row."""

    variant: str
    rows: list = field(default_factory=list)

    def add(self, level: int, h: dict, errors: dict) -> None:
        self.rows.append({"level": level, "h": dict(h), "errors": dict(errors)})

    def h_for(self, field_name: str, row: dict) -> float:
        if field_name == "phi":
            return row["h"]["h_tf"]
        if field_name in ("theta", "lam"):
            return row["h"]["h_tp"]
        if field_name in ("sigma_f", "u_f", "gamma_f", "p_f"):
            return row["h"]["h_f"]
        return row["h"]["h_p"]

    def rates(self, field_name: str) -> list:
        out = [float("nan")]
        for a, b in zip(self.rows, self.rows[1:]):
            out.append(rate(a["errors"][field_name], b["errors"][field_name], self.h_for(field_name, a), self.h_for(field_name, b)))
        return out

    def errors(self, field_name: str) -> list:
        return [r["errors"][field_name] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["level", "h_f", "h_p", "h_tf", "h_tp"]
        for f in TABLE_FIELDS:
            head += [f"err_{f}", f"rate_{f}"]
        w.writerow(head)
        rates = {f: self.rates(f) for f in TABLE_FIELDS}
        for i, r in enumerate(self.rows):
            line = [r["level"]] + [f"{r['h'][k]:.6e}" for k in ("h_f", "h_p", "h_tf", "h_tp")]
            for f in TABLE_FIELDS:
                rt = rates[f][i]
                line += [f"{r['errors'][f]:.6e}", "" if math.isnan(rt) else f"{rt:.4f}"]
            w.writerow(line)
        return buf.getvalue()


def mesh_sizes(fe) -> dict:
    return {
        "h_f": fe.mesh_f.h(),
        "h_p": fe.mesh_p.h(),
        "h_tf": fe.trace_f.trace.h(),
        "h_tp": fe.trace_p.trace.h(),
    }


def convergence_study(
    levels: int,
    variant: str = "S2",
    path: str = "reduced",
    T: float = 0.01,
    dt: float = 1e-3,
    callback: Callable[[int, dict], None] | None = None,
) -> ErrorReport:
    if levels < 1:
        raise ValueError("levels must be >= 1")
    report = ErrorReport(variant.upper())
    for level in range(levels):
        pb, mms = example1_problem(level, variant, path, T=T, dt=dt)
        states = run(pb)
        errs = error_norms(states, mms, pb.fe, dt)
        report.add(level, mesh_sizes(pb.fe), errs)
        log.info("level %d done", level)
        if callback:
            callback(level, report.rows[-1])
    return report


# ---------------------------------------------------------------------------
# quadrature properties


def _local_bdm_mass(space, mesh, rule):
    V = space.values(rule.points)
    w = forms._weights(mesh, rule)
    return np.einsum("tq,tqia,tqja->tij", w, V, V)


def norm_equivalence(mesh) -> tuple[float, float]:
    """Extreme generalized eigenvalues of the vertex-rule vs exact BDM1 mass,
    over all elements.  Both stay bounded away from 0 and infinity."""
    space = bdm1_space(mesh)
    Mq = _local_bdm_mass(space, mesh, vertex_rule())
    Me = _local_bdm_mass(space, mesh, gauss_tri(4))
    L = np.linalg.cholesky(Me)
    Li = np.linalg.inv(L)
    ev = np.linalg.eigvalsh(Li @ Mq @ np.swapaxes(Li, 1, 2))
    return float(ev.min()), float(ev.max())


def vertex_rule_error(seed: int = 0, n: int = 50) -> float:
    """Max error of the vertex rule on random linear integrands (reference
    triangle; the rule is affine invariant)."""
    rng = np.random.default_rng(seed)
    rule = vertex_rule()
    worst = 0.0
    for _ in range(n):
        c = rng.standard_normal(3)
        approx = rule.weights @ (c[0] + rule.points @ c[1:])
        exact = 0.5 * c[0] + (c[1] + c[2]) / 6.0
        worst = max(worst, abs(approx - exact))
    return worst


def quadrature_consistency(levels: Sequence[int] = (4, 8, 16, 32)) -> list:
    """``|(A s_h, t_h)_Q - (A s_h, t_h)|`` for interpolants of fixed smooth fields."""
    coeff = forms.Coefficients(mu_p=1.0, lambda_p=2.0)

    def sig(x):
        s = np.zeros((len(x), 2, 2))
        s[:, 0, 0] = np.sin(x[:, 0]) * np.cos(x[:, 1])
        s[:, 0, 1] = x[:, 0] * x[:, 1] ** 2
        s[:, 1, 0] = np.exp(x[:, 1])
        s[:, 1, 1] = np.cos(2 * x[:, 0])
        return s

    def tau(x):
        s = np.zeros((len(x), 2, 2))
        s[:, 0, 0] = x[:, 1] ** 2
        s[:, 0, 1] = np.sin(3 * x[:, 0])
        s[:, 1, 0] = 1.0 + x[:, 0]
        s[:, 1, 1] = np.cos(x[:, 0] * x[:, 1])
        return s


    out = []
    for n in levels:
        mesh = build_rect_mesh((0, 0, 1, 1), n, n, "alternating")
        space = bdm1_space(mesh)
        a = interpolate_tensor_field(mesh, sig)
        b = interpolate_tensor_field(mesh, tau)
        vals = []
        for mode in ("vertexquad", "exact"):
            rule = rule_for(mode, 4)
            w = forms._weights(mesh, rule)
            S = evaluate_tensor(space, a, rule.points)
            Tt = evaluate_tensor(space, b, rule.points)
            vals.append(float(np.einsum("tq,tqab,tqab->", w, forms.compliance_apply(S, coeff), Tt)))
        out.append((mesh.h(), abs(vals[0] - vals[1])))
    return out


# ---------------------------------------------------------------------------
# structural checks


def interface_antisymmetry(blocks: dict, tol: float = 1e-12) -> float:
    """Largest violation of the skew pairing of the multiplier coupling
    blocks and of the symmetry of the BJS blocks (0 for a correct assembly)."""
    worst = 0.0
    for a, b in (("phi", "lam"), ("theta", "lam"), ("u_p", "lam")):
        D = blocks[(a, b)] + blocks[(b, a)].T
        scale = max(abs(blocks[(a, b)]).max(), 1e-300)
        worst = max(worst, abs(D).max() / scale if D.nnz else 0.0)
    C = sps.bmat(
        [[blocks[("phi", "phi")], blocks[("phi", "theta")]], [blocks[("theta", "phi")], blocks[("theta", "theta")]]]
    ).tocsr()
    D = C - C.T
    if D.nnz:
        worst = max(worst, abs(D).max() / max(abs(C).max(), 1e-300))
    ev = np.linalg.eigvalsh(C.toarray()) if C.shape[0] <= 3000 else np.zeros(1)
    if ev.min() < -tol * max(abs(ev).max(), 1.0):
        worst = max(worst, -ev.min())
    return float(worst)


def small_problem(variant: str = "S2", coeff: forms.Coefficients | None = None, nonmatching: bool = True, nf: int = 4, np_: int = 3):
    """Unit-square fluid over unit-square poro domain with the reference boundary layout."""
    mf = classify_boundary(
        build_rect_mesh((0, 0, 1, 1), nf, nf, "right"),
        {"left": "f-left", "right": "f-right", "top": "f-top", "bottom": "interface"},
    )
    n2 = np_ if nonmatching else nf
    mp = classify_boundary(
        build_rect_mesh((0, -1, 1, 0), n2, n2, "left"),
        {"left": "p-left", "right": "p-right", "bottom": "p-bottom", "top": "interface"},
    )
    fe = build_fe_system(mf, mp, build_interface(mf, mp), variant, EXAMPLE1_BCS)
    return fe, (coeff or forms.Coefficients())


def cross_path_difference(fe, coeff, data, init: InitialData, steps: int = 3, dt: float = 0.1, init_mode="analytic-interpolate") -> dict:
    """Relative per-field difference between monolithic and reduced runs."""
    st0 = initial_data(fe, coeff, init_mode, data, init)
    final = {}
    for path in ("monolithic", "reduced"):
        s = TimeStepper(fe, coeff, dt, data, path)
        st = st0
        for _ in range(steps):
            st = s.step(st)
        final[path] = st
    out = {}
    a, b = fe.split(final["monolithic"].vector()), fe.split(final["reduced"].vector())
    for n in a:
        scale = max(np.abs(a[n]).max(initial=0.0), 1e-300)
        out[n] = float(np.abs(a[n] - b[n]).max(initial=0.0) / scale)
    return out


def reduced_rayleigh(fe, coeff, dt: float = 0.1, n_samples: int = 1000, seed: int = 0) -> np.ndarray:
    from .system import assemble_operator, BlockSystem

    op = assemble_operator(fe, coeff, dt)
    zero = np.zeros(fe.n_dofs)
    sys = BlockSystem(op.matrix, zero, op.fixed, zero[: len(op.fixed)], fe, op)
    red = eliminate(sys, build_vertex_blocks(sys, fe))
    return rayleigh_quotients(red.matrix, n_samples, seed)


def random_initial(fe, coeff, seed: int = 0) -> InitialData:
    """Smooth random initial pressure and interface velocity."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(4)
    b = rng.standard_normal(4)
    return InitialData(
        p_p0=lambda x: a[0] + a[1] * np.sin(2 * x[:, 0]) + a[2] * np.cos(3 * x[:, 1]) + a[3] * x[:, 0] * x[:, 1],
        theta0=lambda x: np.stack([b[0] + b[1] * x[:, 0], b[2] * np.sin(x[:, 0]) + b[3]], axis=1),
    )


def energy_history(fe, coeff, init: InitialData, steps: int = 10, dt: float = 0.1, path: str = "reduced") -> np.ndarray:
    data = forms.ProblemData()
    st = initial_data(fe, coeff, "discrete-construct", data, init)
    s = TimeStepper(fe, coeff, dt, data, path)
    E = [energy(fe, coeff, st)]
    for _ in range(steps):
        st = s.step(st)
        E.append(energy(fe, coeff, st))
    return np.array(E)


def conservation_history(pb: Problem, steps: int = 10) -> list:
    """Per-step equation-group residuals of a run."""
    st = initial_data(pb.fe, pb.coeff, pb.init_mode, pb.data, pb.init, pb.mode)
    s = TimeStepper(pb.fe, pb.coeff, pb.grid.dt, pb.data, pb.path, pb.mode, pb.opts)
    out = []
    for _ in range(steps):
        new = s.step(st)
        out.append(row_residuals(s, st, new))
        st = new
    return out


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def property_suite(sizes: Sequence[tuple[int, int]] = ((4, 3), (6, 4), (5, 5)), seeds: Sequence[int] = (0,)) -> list:
    """Run the structural and numerical properties; returns a list of :class:`Check`."""
    checks = []

    def add(name, ok, detail):
        checks.append(Check(name, bool(ok), detail))
        log.info("%s: %s (%s)", name, "pass" if ok else "FAIL", detail)

    mms = MmsFields()
    r = mms_residuals(mms, 200, seeds[0])
    worst = max(r.values())
    add("mms_residual", worst < 1e-10, f"max residual {worst:.2e}")

    err = vertex_rule_error(seeds[0])
    add("vertex_rule_linear", err < 1e-14, f"max error {err:.2e}")

    lo, hi = [], []
    for n in (4, 8, 16):
        a, b = norm_equivalence(build_rect_mesh((0, 0, 1, 1), n, n, "alternating"))
        lo.append(a)
        hi.append(b)
    add("norm_equivalence", min(lo) > 0.05 and max(hi) < 20 and np.ptp(lo) < 1e-8,
        f"eigenvalue range [{min(lo):.3f}, {max(hi):.3f}]")

    qc = quadrature_consistency()
    rt = rate(qc[-2][1], qc[-1][1], qc[-2][0], qc[-1][0])
    add("quadrature_consistency", rt >= 0.9, f"rate {rt:.2f}")

    for seed in seeds:
        for variant in ("S1", "S2"):
            for nf, np_ in sizes:
                fe, coeff = small_problem(variant, nonmatching=nf != np_, nf=nf, np_=np_)
                q = reduced_rayleigh(fe, coeff, seed=seed)
                add(f"spd_{variant}_{nf}x{np_}", q.min() > 0, f"min Rayleigh quotient {q.min():.3e}")
                q = reduced_rayleigh(fe, forms.Coefficients(s0=1e-6, lambda_p=1e7), seed=seed)
                add(f"spd_locking_{variant}_{nf}x{np_}", q.min() > 0, f"min Rayleigh quotient {q.min():.3e}")

    from .system import assemble_blocks

    fe, coeff = small_problem("S2")
    blocks, _ = assemble_blocks(fe, coeff, 0.1)
    v = interface_antisymmetry(blocks)
    add("interface_antisymmetry", v < 1e-12, f"violation {v:.2e}")

    for c in (forms.Coefficients(), forms.Coefficients(s0=1e-6)):
        for variant in ("S1", "S2"):
            fe, _ = small_problem(variant)
            d = cross_path_difference(fe, c, mms.problem_data(), InitialData.from_exact(mms))
            w = max(d.values())
            add(f"cross_path_{variant}_s0={c.s0:g}", w <= 1e-8, f"max relative difference {w:.2e}")

    pb, _ = example1_problem(0, "S2", "reduced")
    hist = conservation_history(pb, 10)
    worst = {k: max(h[k] for h in hist) for k in ("mass", "momentum", "divergence")}
    add("conservation", max(worst.values()) <= 1e-8, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))

    for seed in seeds:
        fe, coeff = small_problem("S2")
        E = energy_history(fe, coeff, random_initial(fe, coeff, seed))
        inc = float(np.max(np.diff(E) / E[:-1]))
        add(f"energy_decay_seed{seed}", inc <= 1e-12, f"max relative increase {inc:.2e}")

    fe, coeff = small_problem("S2")
    s = TimeStepper(fe, coeff, 0.1, mms.problem_data(), "reduced")
    st = initial_data(fe, coeff, "analytic-interpolate", mms.problem_data(), InitialData.from_exact(mms))
    for _ in range(3):
        st = s.step(st)
    add("single_factorization", s.factorizations == 1, f"{s.factorizations} factorization(s)")
    return checks


# ---------------------------------------------------------------------------
# qualitative metrics for the application examples


def interface_profiles(fe, state, degree: int = 4) -> dict:
    """Fluid and poro quantities at Gauss points of the interface segments.

    Returns points, weights, the fluid velocity trace ``phi``, the Darcy
    flux ``u_p``, ``-(sigma_f n_f) . n_f`` and the adjacent poro cell
    pressure.
    """
    it = fe.iface
    q = gauss_seg(degree)
    x = it.a[:, None, :] + q.points[None, :, None] * (it.b - it.a)[:, None, :]
    w = it.length[:, None] * q.weights[None, :]
    nq = w.shape[1]
    xf = x.reshape(-1, 2)

    tf, tp = fe.trace_f.trace, fe.trace_p.trace
    cf = np.repeat(fe.mesh_f.edge_tris[tf.edges[it.fluid_seg], 0], nq)
    cp = np.repeat(fe.mesh_p.edge_tris[tp.edges[it.poro_seg], 0], nq)
    nf = np.repeat(it.n_f, nq, axis=0)

    n = fe.bdm_f.dim
    Vf = bdm1_eval_at(fe.bdm_f, cf, xf)
    sig = np.stack(
        [np.einsum("kia,ki->ka", Vf, state.sigma_f[r * n : (r + 1) * n][fe.bdm_f.ldof[cf]]) for r in range(2)],
        axis=1,
    )
    up = np.einsum("kia,ki->ka", bdm1_eval_at(fe.bdm_p, cp, xf), state.u_p[fe.bdm_p.ldof[cp]])

    # phi is linear on each fluid trace edge
    mesh = fe.mesh_f
    d = fe.trace_f.edge_dofs()[it.fluid_seg]
    ea = mesh.vertices[mesh.edges[tf.edges[it.fluid_seg], 0]]
    eb = mesh.vertices[mesh.edges[tf.edges[it.fluid_seg], 1]]
    L = np.linalg.norm(eb - ea, axis=1)
    s = np.einsum("sqa,sa->sq", x - ea[:, None, :], (eb - ea) / L[:, None]) / L[:, None]
    phi = np.stack(
        [(1 - s) * state.phi[2 * d[:, 0] + c][:, None] + s * state.phi[2 * d[:, 1] + c][:, None] for c in range(2)],
        axis=2,
    )
    return {
        "x": xf,
        "w": w.ravel(),
        "phi": phi.reshape(-1, 2),
        "u_p": up,
        "neg_sigma_nn": -np.einsum("ka,kab,kb->k", nf, sig, nf),
        "p_p": state.p_p[cp],
    }


def example2_metrics(fe, state, peak_inflow: float = 10.0) -> dict:
    """Vertical-velocity mismatch and normal-stress balance on the interface."""
    prof = interface_profiles(fe, state)
    w = prof["w"]
    mism = prof["phi"][:, 1] - prof["u_p"][:, 1]
    L = w.sum()
    rms = math.sqrt(float(np.sum(w * mism**2)) / L)
    a, b = prof["neg_sigma_nn"], prof["p_p"]
    rel = math.sqrt(float(np.sum(w * (a - b) ** 2)) / max(float(np.sum(w * b**2)), 1e-300))
    return {
        "velocity_mismatch": rms / peak_inflow,
        "velocity_mismatch_max": float(np.abs(mism).max()) / peak_inflow,
        "mean_signed_mismatch": float(np.sum(w * mism)) / L / peak_inflow,
        "normal_stress_rel": rel,
    }
