import numpy as np
import pytest
import scipy.sparse as sps

from stokesbiot import forms
from stokesbiot.elements import FIELDS, build_fe_system
from stokesbiot.errors import ConfigError, LinearSolveError
from stokesbiot.geometry import INTERFACE, build_interface, build_rect_mesh, classify_boundary
from stokesbiot.state import SolutionState
from stokesbiot.system import (
    LinearSolver,
    SolverOptions,
    assemble_blocks,
    assemble_operator,
    assemble_step_system,
    solve,
)
from stokesbiot.timeloop import InitialData, initial_data
from stokesbiot.verify import MmsFields, small_problem


@pytest.fixture(scope="module")
def setup():
    fe, coeff = small_problem("S2", nf=3, np_=2)
    return fe, coeff, MmsFields(coeff).problem_data()


def test_dt_must_be_positive(setup):
    fe, coeff, _ = setup
    with pytest.raises(ConfigError):
        assemble_operator(fe, coeff, 0.0)


def test_dimension_matches_fe(setup):
    fe, coeff, data = setup
    sys = assemble_step_system(fe, coeff, 0.1, None, 0.1, data)
    assert sys.matrix.shape == (fe.n_dofs, fe.n_dofs)


def test_two_triangle_dimension():
    mf = classify_boundary(build_rect_mesh((0, 0, 1, 1), 1, 1), {"left": "a", "right": "b", "top": "c", "bottom": INTERFACE})
    mp = classify_boundary(build_rect_mesh((0, -1, 1, 0), 1, 1), {"left": "a", "right": "b", "bottom": "c", "top": INTERFACE})
    fe = build_fe_system(mf, mp, build_interface(mf, mp), "S2")
    op = assemble_operator(fe, forms.Coefficients(), 0.5)
    assert op.matrix.shape[0] == sum(fe.dims.values())


def test_matrix_independent_of_step(setup):
    fe, coeff, data = setup
    op = assemble_operator(fe, coeff, 0.1)
    st0 = initial_data(fe, coeff, "analytic-interpolate", data, InitialData.from_exact(MmsFields(coeff)))
    s1 = assemble_step_system(fe, coeff, 0.1, st0, 0.1, data, operator=op)
    s2 = assemble_step_system(fe, coeff, 0.1, st0, 0.2, data)
    assert abs(s1.matrix - s2.matrix).max() < 1e-14
    assert not np.allclose(s1.rhs, s2.rhs)


def test_no_storage_no_coupling_leaves_compliance(setup):
    fe, _, _ = setup
    c = forms.Coefficients(s0=0.0, alpha_p=0.0)
    B, _ = assemble_blocks(fe, c, 0.25)
    assert B[("sigma_p", "p_p")].nnz == 0
    assert B[("p_p", "p_p")].nnz == 0
    SS, _, _ = forms.assemble_ae(fe, c)
    assert abs(B[("sigma_p", "sigma_p")] - SS / 0.25).max() < 1e-12


def test_skew_block_pattern(setup):
    fe, coeff, _ = setup
    B, _ = assemble_blocks(fe, coeff, 0.1)
    pairs = [
        ("sigma_f", "phi"), ("sigma_p", "theta"), ("u_p", "lam"), ("phi", "lam"), ("theta", "lam"),
        ("sigma_f", "u_f"), ("sigma_p", "u_s"), ("sigma_f", "gamma_f"), ("sigma_p", "gamma_p"), ("u_p", "p_p"),
    ]
    for a, b in pairs:
        assert abs(B[(a, b)] + B[(b, a)].T).max() < 1e-14, (a, b)
    # symmetric Biot coupling
    assert abs(B[("sigma_p", "p_p")] - B[("p_p", "sigma_p")].T).max() < 1e-14


def test_structural_zero_blocks(setup):
    fe, coeff, _ = setup
    op = assemble_operator(fe, coeff, 0.1)
    A = op.raw
    zero = [("u_f", "u_f"), ("u_s", "u_s"), ("gamma_f", "gamma_f"), ("u_f", "phi"), ("lam", "lam"), ("sigma_f", "sigma_p")]
    for r, c in zero:
        assert A[fe.slice(r), fe.slice(c)].nnz == 0


def test_constrained_rows_identity(setup):
    fe, coeff, data = setup
    sys = assemble_step_system(fe, coeff, 0.1, None, 0.1, data)
    A = sys.matrix.tocsr()
    for i in sys.fixed[:20]:
        row = A.getrow(i)
        assert row.nnz == 1 and row[0, i] == 1.0
        col = A.getcol(i)
        assert col.nnz == 1
    np.testing.assert_allclose(sys.rhs[sys.fixed], sys.fixed_values)
    x = solve(sys)
    np.testing.assert_allclose(x[sys.fixed], sys.fixed_values, atol=1e-14)


def test_full_step_residual(setup):
    fe, coeff, data = setup
    sys = assemble_step_system(fe, coeff, 0.1, None, 0.1, data)
    x = solve(sys)
    assert np.linalg.norm(sys.matrix @ x - sys.rhs) / np.linalg.norm(sys.rhs) < 1e-10


def test_zero_data_zero_solution(setup):
    fe, coeff, _ = setup
    sys = assemble_step_system(fe, coeff, 0.1, SolutionState.zeros(fe), 0.1, forms.ProblemData())
    assert np.all(solve(sys) == 0.0)


def test_identity_solve():
    b = np.arange(5.0)
    np.testing.assert_array_equal(solve(sps.identity(5, format="csr"), rhs=b), b)


def test_direct_and_gmres_agree(setup):
    fe, coeff, _ = setup
    A = forms.assemble_ap(fe, coeff)
    b = np.random.default_rng(0).standard_normal(A.shape[0])
    x1 = LinearSolver(A).solve(b)
    x2 = LinearSolver(A, SolverOptions("gmres", rel_tol=1e-13)).solve(b)
    assert np.abs(x1 - x2).max() / np.abs(x1).max() < 1e-10


def test_singular_matrix_reports():
    A = sps.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(LinearSolveError):
        LinearSolver(A).solve(np.ones(2))


def test_solver_options_validation():
    with pytest.raises(ConfigError):
        SolverOptions(method="cg")
    with pytest.raises(ConfigError):
        SolverOptions(rel_tol=0.0)


def test_field_order():
    assert FIELDS[:4] == ("sigma_f", "u_p", "sigma_p", "p_p")
    assert FIELDS[4:7] == ("phi", "theta", "lam")
