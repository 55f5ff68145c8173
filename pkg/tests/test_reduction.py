import numpy as np
import pytest

from stokesbiot import forms
from stokesbiot.errors import AssemblyError
from stokesbiot.reduction import (
    build_vertex_blocks,
    eliminate,
    rayleigh_quotients,
    recover,
    solve_reduced,
)
from stokesbiot.system import BlockSystem, assemble_operator, assemble_step_system
from stokesbiot.timeloop import InitialData
from stokesbiot.verify import MmsFields, cross_path_difference, reduced_rayleigh, small_problem


def step_system(variant="S2", nf=4, np_=3, coeff=None, mode="vertexquad", t=0.1):
    fe, c = small_problem(variant, coeff, nf=nf, np_=np_)
    data = MmsFields(c).problem_data()
    return fe, c, assemble_step_system(fe, c, 0.1, None, t, data, mode)


@pytest.fixture(scope="module")
def reduced():
    fe, c, sys = step_system()
    blocks = build_vertex_blocks(sys, fe)
    return fe, sys, blocks, eliminate(sys, blocks, keep_intermediate=True)


def test_block_inverses_accurate(reduced):
    fe, sys, blocks, _ = reduced
    K = blocks.matrix
    for p, B in zip(blocks.positions, blocks.inverses):
        g = blocks.index[p]
        A = K[g][:, g].toarray()
        assert np.abs(B @ A - np.eye(len(g))).max() < 1e-12
        # symmetric positive definite mass blocks
        np.linalg.cholesky(0.5 * (A + A.T))


def test_blocks_partition_eliminated_dofs(reduced):
    fe, sys, blocks, _ = reduced
    allpos = np.sort(np.concatenate(blocks.positions))
    np.testing.assert_array_equal(allpos, np.arange(len(blocks.index)))


def test_darcy_block_size_interior_vertex(reduced):
    fe, _, blocks, _ = reduced
    mp = fe.mesh_p
    # structured "left" mesh: interior vertices have six incident edges
    deg = np.bincount(mp.edges.ravel(), minlength=mp.n_vertices)
    for f, v, p in zip(blocks.fields, blocks.vertices, blocks.positions):
        if f != "u_p":
            continue
        x = mp.vertices[v]
        interior = 0 < x[0] < 1 and -1 < x[1] < 0
        if interior:
            assert deg[v] == 6 and len(p) == 6
        else:
            assert len(p) <= deg[v]


def test_blocks_need_vertex_quadrature():
    fe, _, sys = step_system(mode="exact")
    with pytest.raises(AssemblyError):
        build_vertex_blocks(sys, fe)


def test_reduced_dimension(reduced):
    fe, _, _, red = reduced
    expect = (
        fe.mesh_p.n_triangles + fe.dims["phi"] + fe.dims["theta"] + fe.dims["lam"]
        + 2 * fe.mesh_f.n_triangles + 2 * fe.mesh_p.n_triangles
    )
    assert red.matrix.shape == (expect, expect)
    assert expect == fe.reduced_dim()


def test_positive_definite(reduced):
    _, _, _, red = reduced
    assert rayleigh_quotients(red.matrix, 1000, 0).min() > 0


def test_solve_matches_monolithic(reduced):
    fe, sys, _, red = reduced
    from stokesbiot.system import solve

    x_mono = solve(sys)
    sol = solve_reduced(red)
    assert np.abs(sol.full - x_mono).max() / np.abs(x_mono).max() < 1e-8
    assert np.linalg.norm(sys.matrix @ sol.full - sys.rhs) / np.linalg.norm(sys.rhs) < 1e-8
    st = recover(red, sol)
    np.testing.assert_allclose(st.vector(), sol.full)


def test_zero_rhs_zero_solution(reduced):
    fe, sys, _, red = reduced
    zero = BlockSystem(sys.matrix, np.zeros(fe.n_dofs), sys.fixed, np.zeros(len(sys.fixed)), fe, sys.operator)
    sol = solve_reduced(red.with_system(zero))
    assert np.all(sol.full == 0.0)


def test_recovered_divergence_matches_load(reduced):
    # the u_f rows read -(div sigma_f, v) = (f_f, v): elementwise means
    fe, sys, _, red = reduced
    from stokesbiot.elements import tensor_divergence

    sol = solve_reduced(red)
    sig = fe.split(sol.full)["sigma_f"]
    div = tensor_divergence(fe.bdm_f, sig)
    c = sys.operator.coeff
    load = forms.assemble_rhs(fe, MmsFields(c).problem_data(), sys.t)
    fload = load[fe.slice("u_f")].reshape(-1, 2) / fe.mesh_f.areas()[:, None]
    np.testing.assert_allclose(-div, fload, atol=1e-8 * np.abs(fload).max())


def test_bjs_off_leaves_schur_term():
    fe, c = small_problem("S2", forms.Coefficients(alpha_bjs=0.0))
    op = assemble_operator(fe, c, 0.1)
    assert op.blocks[("phi", "phi")].nnz == 0
    zero = np.zeros(fe.n_dofs)
    sys = BlockSystem(op.matrix, zero, op.fixed, zero[: len(op.fixed)], fe, op)
    red = eliminate(sys, build_vertex_blocks(sys, fe))
    assert rayleigh_quotients(red.matrix, 200, 1).min() > 0


def test_storage_grows_linearly():
    totals, nverts = [], []
    for n in (8, 16):
        fe, c = small_problem("S2", nonmatching=False, nf=n)
        op = assemble_operator(fe, c, 0.1)
        zero = np.zeros(fe.n_dofs)
        sys = BlockSystem(op.matrix, zero, op.fixed, zero[: len(op.fixed)], fe, op)
        b = build_vertex_blocks(sys, fe)
        totals.append(b.stored_entries())
        nverts.append(fe.mesh_f.n_vertices + fe.mesh_p.n_vertices)
        # at most a 12x12 stress block per vertex and field plus a 6x6 flux block
        assert b.stored_entries() <= (2 * 144 + 36) * nverts[-1]
    growth = (totals[1] / totals[0]) / (nverts[1] / nverts[0])
    assert 0.8 < growth < 1.25


def test_intermediate_system_available(reduced):
    fe, _, blocks, red = reduced
    S1 = red.operator.intermediate
    n = len(red.operator.R) + len(red.operator.G)
    assert S1.shape == (n, n)


@pytest.mark.parametrize("variant", ["S1", "S2"])
@pytest.mark.parametrize("s0", [1.0, 1e-6])
def test_cross_path_small_storativity(variant, s0):
    fe, c = small_problem(variant, forms.Coefficients(s0=s0), nf=4, np_=3)
    mms = MmsFields(c)
    d = cross_path_difference(fe, c, mms.problem_data(), InitialData.from_exact(mms))
    assert max(d.values()) <= 1e-8


def test_locking_regime_positive_definite():
    fe, _ = small_problem("S2", nf=4, np_=3)
    q = reduced_rayleigh(fe, forms.Coefficients(s0=1e-6, lambda_p=1e7), n_samples=1000)
    assert q.min() > 0
