"""Command-line driver: configuration, presets, output writers."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.io
import tomlkit

from . import forms, presets
from .elements import REF_VERTICES, BoundaryConditions, build_fe_system, evaluate_bdm1, evaluate_tensor
from .errors import ConfigError, SolverError
from .geometry import build_interface, read_mesh
from .state import SolutionState
from .system import SolverOptions
from .timeloop import INIT_MODES, PATHS, InitialData, Problem, TimeGrid, TimeStepper, energy, initial_data
from .verify import TABLE_FIELDS, convergence_study, example1_problem, property_suite

log = logging.getLogger("stokesbiot")

SECTIONS = {
    "": {"preset", "seed"},
    "mesh": {"level", "nf", "np", "n", "file", "fluid_file", "poro_file"},
    "coefficients": {"mu", "mu_p", "lambda_p", "alpha_p", "s0", "K", "alpha_bjs"},
    "discretization": {"variant", "path", "assembly"},
    "time": {"T", "dt", "init"},
    "solver": {"method", "rel_tol", "max_iter"},
    "output": {"dir", "vtk_every", "csv", "dump_reduced"},
    "boundary": {"fluid", "darcy", "elasticity"},
    "data": {"fluid", "darcy", "elasticity", "f_f", "f_p", "q_f", "q_p"},
}

PRESET_DEFAULTS = {
    "example1": dict(coefficients=presets.EXAMPLE1_COEFF, T=0.01, dt=1e-3, init="analytic-interpolate", mesh={"level": 0}),
    "example2": dict(coefficients=presets.EXAMPLE2_COEFF, T=3.0, dt=0.06, init="discrete-construct", mesh={"nf": 32, "np": 24}),
    "example3": dict(coefficients=presets.EXAMPLE3_COEFF, T=10.0, dt=0.05, init="discrete-construct", mesh={"n": 32}),
    "custom": dict(coefficients=presets.EXAMPLE1_COEFF, T=1.0, dt=0.1, init="discrete-construct", mesh={}),
}


@dataclass
class OutputOptions:
    dir: str = "output"
    vtk_every: int = 0
    csv: str = "summary.csv"
    dump_reduced: bool = False


@dataclass
class ProblemConfig:
    preset: str = "example1"
    coefficients: dict = field(default_factory=dict)
    mesh: dict = field(default_factory=dict)
    variant: str = "S2"
    path: str = "reduced"
    assembly: str = "vertexquad"
    T: float = 0.01
    dt: float = 1e-3
    init: str = "analytic-interpolate"
    solver: SolverOptions = field(default_factory=SolverOptions)
    output: OutputOptions = field(default_factory=OutputOptions)
    boundary: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    seed: int = 0

    def validate(self) -> "ProblemConfig":
        if self.preset not in presets.PRESETS:
            raise ConfigError(f"preset: unknown value {self.preset!r}")
        if str(self.variant).upper() not in ("S1", "S2"):
            raise ConfigError(f"discretization.variant: unknown value {self.variant!r}")
        self.variant = str(self.variant).upper()
        if self.path not in PATHS:
            raise ConfigError(f"discretization.path: unknown value {self.path!r}")
        if self.assembly not in ("vertexquad", "exact"):
            raise ConfigError(f"discretization.assembly: unknown value {self.assembly!r}")
        if self.path == "reduced" and self.assembly != "vertexquad":
            raise ConfigError("discretization: the reduced path needs vertexquad assembly")
        if self.init not in INIT_MODES:
            raise ConfigError(f"time.init: unknown value {self.init!r}")
        if self.init == "analytic-interpolate" and self.preset != "example1":
            raise ConfigError("time.init: analytic-interpolate needs the example1 preset")
        TimeGrid(self.T, self.dt)
        if int(self.output.vtk_every) < 0:
            raise ConfigError("output.vtk_every must be >= 0")
        try:
            presets.coefficients(self.coefficients)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"coefficients: {exc}") from exc
        if self.preset == "custom" and not (self.mesh.get("file") or (self.mesh.get("fluid_file") and self.mesh.get("poro_file"))):
            raise ConfigError("mesh: the custom preset needs mesh.file or mesh.fluid_file and mesh.poro_file")
        return self


def _plain(v):
    """tomlkit items to plain Python values."""
    if hasattr(v, "unwrap"):
        return v.unwrap()
    return v


def parse_config_text(text: str) -> ProblemConfig:
    try:
        doc = tomlkit.parse(text)
    except Exception as exc:  # tomlkit raises several parse error types
        raise ConfigError(f"config parse error: {exc}") from exc
    raw = _plain(doc)
    top = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    for k in top:
        if k not in SECTIONS[""]:
            raise ConfigError(f"unknown key {k!r}")
    for sec, body in raw.items():
        if not isinstance(body, dict):
            continue
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        for k in body:
            if k not in SECTIONS[sec]:
                raise ConfigError(f"unknown key {sec}.{k}")

    preset = top.get("preset", "example1")
    if preset not in PRESET_DEFAULTS:
        raise ConfigError(f"preset: unknown value {preset!r}")
    d = PRESET_DEFAULTS[preset]
    coeff = dict(d["coefficients"])
    coeff.update(raw.get("coefficients", {}))
    mesh = dict(d["mesh"])
    mesh.update(raw.get("mesh", {}))
    disc = raw.get("discretization", {})
    time = raw.get("time", {})
    sol = raw.get("solver", {})
    out = raw.get("output", {})
    try:
        cfg = ProblemConfig(
            preset=preset,
            coefficients=coeff,
            mesh=mesh,
            variant=disc.get("variant", "S2"),
            path=disc.get("path", "reduced"),
            assembly=disc.get("assembly", "vertexquad"),
            T=float(time.get("T", d["T"])),
            dt=float(time.get("dt", d["dt"])),
            init=time.get("init", d["init"]),
            solver=SolverOptions(**sol),
            output=OutputOptions(**out),
            boundary=raw.get("boundary", {}),
            data=raw.get("data", {}),
            seed=int(top.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid value: {exc}") from exc
    return cfg.validate()


def parse_config(path: str | Path) -> ProblemConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {str(p)!r} not found")
    return parse_config_text(p.read_text())


def to_toml(cfg: ProblemConfig) -> str:
    """Serialize a config; ``parse_config_text(to_toml(c))`` equals ``c``."""
    doc = tomlkit.document()
    doc["preset"] = cfg.preset
    doc["seed"] = cfg.seed
    doc["mesh"] = dict(cfg.mesh)
    doc["coefficients"] = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v) for k, v in cfg.coefficients.items()}
    doc["discretization"] = {"variant": cfg.variant, "path": cfg.path, "assembly": cfg.assembly}
    doc["time"] = {"T": cfg.T, "dt": cfg.dt, "init": cfg.init}
    doc["solver"] = asdict(cfg.solver)
    doc["output"] = asdict(cfg.output)
    if cfg.boundary:
        doc["boundary"] = cfg.boundary
    if cfg.data:
        doc["data"] = cfg.data
    return tomlkit.dumps(doc)


# ---------------------------------------------------------------------------
# building problems


def _const_bc(value):
    v = np.asarray(value, dtype=float)
    if v.ndim == 0:
        return lambda x, n, t: np.full(len(x), float(v))
    return lambda x, n, t: np.broadcast_to(v, (len(x), 2)).copy()


def _const_load(value):
    v = np.asarray(value, dtype=float)
    if v.ndim == 0:
        return lambda x, t: np.full(len(x), float(v))
    return lambda x, t: np.broadcast_to(v, (len(x), 2)).copy()


def _custom_problem(cfg: ProblemConfig, coeff, opts) -> Problem:
    m = cfg.mesh
    if m.get("file"):
        mf = read_mesh(m["file"], "fluid")
        mp = read_mesh(m["file"], "poro")
    else:
        mf, mp = read_mesh(m["fluid_file"]), read_mesh(m["poro_file"])
    b = cfg.boundary
    bcs = BoundaryConditions(fluid=b.get("fluid", {}), darcy=b.get("darcy", {}), elasticity=b.get("elasticity", {}))
    fe = build_fe_system(mf, mp, build_interface(mf, mp), cfg.variant, bcs)
    d = cfg.data
    data = forms.ProblemData(
        f_f=_const_load(d["f_f"]) if "f_f" in d else None,
        f_p=_const_load(d["f_p"]) if "f_p" in d else None,
        q_f=_const_load(d["q_f"]) if "q_f" in d else None,
        q_p=_const_load(d["q_p"]) if "q_p" in d else None,
        fluid_bc={k: _const_bc(v) for k, v in d.get("fluid", {}).items()},
        darcy_bc={k: _const_bc(v) for k, v in d.get("darcy", {}).items()},
        elastic_bc={k: _const_bc(v) for k, v in d.get("elasticity", {}).items()},
    )
    return Problem(fe, coeff, data, TimeGrid(cfg.T, cfg.dt), cfg.init, InitialData(), cfg.path, cfg.assembly, opts)


def build_problem(cfg: ProblemConfig) -> Problem:
    coeff = presets.coefficients(cfg.coefficients)
    opts = cfg.solver
    m = cfg.mesh
    if cfg.preset == "example1":
        pb, _ = example1_problem(int(m.get("level", 0)), cfg.variant, cfg.path, coeff, cfg.T, cfg.dt, cfg.init, opts)
    elif cfg.preset == "example2":
        pb = presets.example2_problem(int(m.get("nf", 32)), int(m.get("np", 24)), cfg.variant, cfg.path, cfg.T, cfg.dt, coeff, opts)
    elif cfg.preset == "example3":
        meshes = None
        if m.get("file"):
            meshes = (read_mesh(m["file"], "fluid"), read_mesh(m["file"], "poro"))
        pb = presets.example3_problem(int(m.get("n", 32)), cfg.variant, cfg.path, cfg.T, cfg.dt, coeff, meshes, opts)
    else:
        pb = _custom_problem(cfg, coeff, opts)
    pb.mode = cfg.assembly
    return pb


# ---------------------------------------------------------------------------
# writers


def _vtk_block(kind: str, name: str, values: np.ndarray) -> list[str]:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        out = [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [f"{v:.10e}" for v in values]
    else:
        out = [f"VECTORS {name} double"]
        out += [f"{a:.10e} {b:.10e} 0" for a, b in values]
    return out


def _write_grid(path: Path, mesh, cell: dict, point: dict, title: str) -> None:
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_vertices} double")
    lines += [f"{x:.12e} {y:.12e} 0" for x, y in mesh.vertices]
    M = mesh.n_triangles
    lines.append(f"CELLS {M} {4 * M}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {M}")
    lines += ["5"] * M
    lines.append(f"CELL_DATA {M}")
    for name, v in cell.items():
        lines += _vtk_block("cell", name, v)
    lines.append(f"POINT_DATA {mesh.n_vertices}")
    for name, v in point.items():
        lines += _vtk_block("point", name, v)
    path.write_text("\n".join(lines) + "\n")


def _vertex_average(mesh, cell_values: np.ndarray) -> np.ndarray:
    w = np.repeat(mesh.areas(), 3)
    idx = mesh.triangles.ravel()
    den = np.bincount(idx, weights=w, minlength=mesh.n_vertices)
    cv = cell_values.reshape(mesh.n_triangles, -1)
    out = np.stack(
        [np.bincount(idx, weights=w * np.repeat(cv[:, c], 3), minlength=mesh.n_vertices) for c in range(cv.shape[1])],
        axis=1,
    ) / den[:, None]
    return out[:, 0] if cv.shape[1] == 1 else out


def write_vtk(state: SolutionState, fe, path: str | Path) -> tuple[Path, Path]:
    """Two legacy ASCII files ``<path>_fluid.vtk`` and ``<path>_poro.vtk``."""
    base = Path(path)
    centroid = np.array([[1.0 / 3.0, 1.0 / 3.0]])
    mf, mp = fe.mesh_f, fe.mesh_p
    Sf = evaluate_tensor(fe.bdm_f, state.sigma_f, centroid)[:, 0]
    Sp = evaluate_tensor(fe.bdm_p, state.sigma_p, centroid)[:, 0]
    Up = evaluate_bdm1(fe.bdm_p, state.u_p, centroid)[:, 0]
    eta = state.eta_p.reshape(-1, 2)
    fpath = base.with_name(base.name + "_fluid.vtk")
    ppath = base.with_name(base.name + "_poro.vtk")
    _write_grid(
        fpath,
        mf,
        {
            "p_f": state.p_f.mean(axis=1),
            "u_f": state.u_f.reshape(-1, 2),
            "sigma_f_row1": Sf[:, 0],
            "sigma_f_row2": Sf[:, 1],
        },
        {"gamma_f": state.gamma_f},
        f"fluid t={state.t:.10g}",
    )
    _write_grid(
        ppath,
        mp,
        {
            "p_p": state.p_p,
            "u_s": state.u_s.reshape(-1, 2),
            "u_p": Up,
            "sigma_p_row1": Sp[:, 0],
            "sigma_p_row2": Sp[:, 1],
        },
        {"gamma_p": state.gamma_p, "eta_p": _vertex_average(mp, eta)},
        f"poro t={state.t:.10g}",
    )
    return fpath, ppath


def read_vtk(path: str | Path) -> dict:
    """Parse what :func:`write_vtk` writes (points, cells, data arrays)."""
    tok = Path(path).read_text().split("\n")
    out = {"cell_data": {}, "point_data": {}}
    i = 4
    section = None
    while i < len(tok):
        line = tok[i].strip()
        if not line:
            i += 1
            continue
        head = line.split()
        if head[0] == "POINTS":
            n = int(head[1])
            out["points"] = np.array([[float(v) for v in tok[i + 1 + k].split()[:2]] for k in range(n)])
            i += n + 1
        elif head[0] == "CELLS":
            n = int(head[1])
            out["cells"] = np.array([[int(v) for v in tok[i + 1 + k].split()[1:]] for k in range(n)])
            i += n + 1
        elif head[0] == "CELL_TYPES":
            i += int(head[1]) + 1
        elif head[0] in ("CELL_DATA", "POINT_DATA"):
            section = "cell_data" if head[0] == "CELL_DATA" else "point_data"
            size = int(head[1])
            i += 1
        elif head[0] == "SCALARS":
            out[section][head[1]] = np.array([float(tok[i + 2 + k]) for k in range(size)])
            i += size + 2
        elif head[0] == "VECTORS":
            out[section][head[1]] = np.array([[float(v) for v in tok[i + 1 + k].split()[:2]] for k in range(size)])
            i += size + 1
        else:
            raise ConfigError(f"{path}: unexpected line {line!r}")
    return out


SUMMARY_COLUMNS = ("step", "t", "energy", "max_u_f", "max_u_p", "max_u_s", "min_p_p", "max_p_p", "max_eta")


def summary_row(m: int, st: SolutionState, fe, coeff, mode: str) -> list[str]:
    def vmax(v):
        v = np.asarray(v).reshape(-1, 2)
        return float(np.hypot(v[:, 0], v[:, 1]).max(initial=0.0))

    up = evaluate_bdm1(fe.bdm_p, st.u_p, REF_VERTICES).reshape(-1, 2)
    vals = [
        st.t,
        energy(fe, coeff, st, mode),
        vmax(st.u_f),
        vmax(up),
        vmax(st.u_s),
        float(st.p_p.min()),
        float(st.p_p.max()),
        vmax(st.eta_p),
    ]
    return [str(m)] + [f"{v:.12e}" for v in vals]


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    path.write_text(",".join(header) + "\n" + "".join(",".join(r) + "\n" for r in rows))


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.out:
        cfg.output.dir = args.out
    pb = build_problem(cfg)
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    st = initial_data(pb.fe, pb.coeff, pb.init_mode, pb.data, pb.init, pb.mode)
    stepper = TimeStepper(pb.fe, pb.coeff, pb.grid.dt, pb.data, pb.path, pb.mode, pb.opts)
    rows = [summary_row(0, st, pb.fe, pb.coeff, pb.mode)]
    every = int(cfg.output.vtk_every)
    if every:
        write_vtk(st, pb.fe, out / "step_0000")
    if cfg.output.dump_reduced and pb.path == "reduced":
        _dump(stepper, st, out)
    for m in range(1, pb.grid.M + 1):
        st = stepper.step(st, m * pb.grid.dt)
        rows.append(summary_row(m, st, pb.fe, pb.coeff, pb.mode))
        if every and m % every == 0:
            write_vtk(st, pb.fe, out / f"step_{m:04d}")
    write_csv(out / cfg.output.csv, SUMMARY_COLUMNS, rows)
    print(f"{pb.grid.M} steps, t = {st.t:g}, factorizations = {stepper.factorizations}, summary in {out / cfg.output.csv}")
    return 0


def _dump(stepper: TimeStepper, prev: SolutionState, out: Path) -> list[Path]:
    sys_ = stepper.system(prev, prev.t + stepper.dt)
    red = stepper.reduced.with_system(sys_)
    files = [out / "reduced_matrix.mtx", out / "reduced_rhs.mtx"]
    scipy.io.mmwrite(str(files[0]), red.matrix.tocoo())
    scipy.io.mmwrite(str(files[1]), red.rhs.reshape(-1, 1))
    return files


def cmd_dump(args) -> int:
    if args.config:
        cfg = parse_config(args.config)
        cfg.path = "reduced"
        pb = build_problem(cfg)
    else:
        pb, _ = example1_problem(0, args.variant.upper(), "reduced")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    st = initial_data(pb.fe, pb.coeff, pb.init_mode, pb.data, pb.init, pb.mode)
    stepper = TimeStepper(pb.fe, pb.coeff, pb.grid.dt, pb.data, "reduced", pb.mode, pb.opts)
    files = _dump(stepper, st, out)
    n = stepper.reduced.matrix.shape[0]
    print(f"reduced system of size {n} written to {files[0]} and {files[1]}")
    return 0


def cmd_convergence(args) -> int:
    if args.levels < 1:
        raise ConfigError("--levels must be >= 1")

    def progress(level, row):
        print(f"level {level}: h_f = {row['h']['h_f']:.4f}, h_p = {row['h']['h_p']:.4f}", flush=True)

    rep = convergence_study(args.levels, args.variant.upper(), args.path, callback=progress)
    text = rep.to_csv()
    if args.csv:
        Path(args.csv).write_text(text)
    sys.stdout.write(text)
    rates = {f: rep.rates(f)[-1] for f in TABLE_FIELDS}
    if args.levels >= 2:
        print("finest rates: " + ", ".join(f"{f} {r:.2f}" for f, r in rates.items()))
    return 0


def cmd_verify(args) -> int:
    checks = property_suite(seeds=tuple(args.seed))
    for c in checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stokesbiot", description="Mixed finite element solver for coupled Stokes and Biot flow.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    r = sub.add_parser("run", help="run a configured problem")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("convergence", help="convergence study for the manufactured solution")
    c.add_argument("--levels", type=int, default=4)
    c.add_argument("--variant", choices=["s1", "s2", "S1", "S2"], default="s2")
    c.add_argument("--path", choices=list(PATHS), default="reduced")
    c.add_argument("--csv", default=None)
    c.set_defaults(func=cmd_convergence)

    v = sub.add_parser("verify", help="run the property suite")
    v.add_argument("--seed", type=int, action="append", default=None)
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("dump-reduced", help="write the reduced step matrix in Matrix Market format")
    d.add_argument("--config", default=None)
    d.add_argument("--variant", choices=["s1", "s2", "S1", "S2"], default="s2")
    d.add_argument("--out", default=".")
    d.set_defaults(func=cmd_dump)
    return p


def _thread_limit():
    n = os.environ.get("SOLVER_THREADS")
    if not n:
        return None
    try:
        k = int(n)
    except ValueError:
        raise ConfigError(f"SOLVER_THREADS must be an integer, got {n!r}") from None
    if k < 1:
        raise ConfigError("SOLVER_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=k)


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.command == "verify" and args.seed is None:
        args.seed = [0]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        limit = _thread_limit()
        try:
            return args.func(args)
        finally:
            if limit is not None:
                limit.restore_original_limits()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
