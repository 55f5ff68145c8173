import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from stokesbiot import forms
from stokesbiot.elements import build_fe_system, interpolate_tensor_field, interpolate_vector_field
from stokesbiot.errors import CoefficientError
from stokesbiot.geometry import INTERFACE, build_interface, build_rect_mesh, classify_boundary
from stokesbiot.verify import MmsFields, small_problem

tensors = arrays(np.float64, (2, 2), elements=st.floats(-10, 10))


@pytest.fixture(scope="module")
def fe():
    return small_problem("S2", nf=3, np_=2)[0]


@pytest.fixture(scope="module")
def fe_matching():
    return small_problem("S2", nonmatching=False, nf=3)[0]


def identity_tensor(mesh):
    return interpolate_tensor_field(mesh, lambda x: np.broadcast_to(np.eye(2), (len(x), 2, 2)))


def vertex_of(fe, name):
    return fe.dof_vertex(name)


def test_dev_examples():
    np.testing.assert_allclose(forms.dev(np.eye(2)), 0.0)
    np.testing.assert_allclose(forms.dev(np.array([[2.0, 1.0], [0.0, 0.0]])), [[1, 1], [0, -1]])


@settings(max_examples=100)
@given(tau=tensors)
def test_dev_traceless(tau):
    assert abs(forms.trace(forms.dev(tau))) < 1e-12


def test_compliance_examples():
    c = forms.Coefficients(mu_p=1.0, lambda_p=1.0)
    np.testing.assert_allclose(forms.compliance_apply(np.eye(2), c), 0.25 * np.eye(2))
    np.testing.assert_allclose(forms.compliance_inverse(np.eye(2), c), 4 * np.eye(2))
    np.testing.assert_allclose(forms.compliance_apply(4 * np.eye(2), c), np.eye(2))


@settings(max_examples=100)
@given(tau=tensors, mu=st.floats(0.1, 10), lam=st.floats(0, 100))
def test_compliance_bounds_and_inverse(tau, mu, lam):
    c = forms.Coefficients(mu_p=mu, lambda_p=lam)
    Atau = forms.compliance_apply(tau, c)
    tt = np.sum(tau * tau)
    q = np.sum(Atau * tau)
    assert q >= tt / (2 * mu + 2 * lam) * (1 - 1e-10) - 1e-12
    assert q <= tt / (2 * mu) * (1 + 1e-10) + 1e-12
    np.testing.assert_allclose(forms.compliance_apply(forms.compliance_inverse(tau, c), c), tau, atol=1e-9 * (1 + np.abs(tau).max()))


@pytest.mark.parametrize(
    "kw",
    [dict(mu=0.0), dict(mu_p=-1.0), dict(alpha_p=1.5), dict(s0=-1.0), dict(K=np.array([[1.0, 2.0], [0.0, 1.0]])), dict(K=-np.eye(2))],
)
def test_invalid_coefficients(kw):
    with pytest.raises(CoefficientError):
        forms.Coefficients(**kw)


@pytest.mark.parametrize("mode", ["vertexquad", "exact"])
def test_af_kills_identity(fe, mode):
    A = forms.assemble_af(fe, forms.Coefficients(), mode)
    I = identity_tensor(fe.mesh_f)
    assert abs(I @ A @ I) < 1e-12
    assert abs(A - A.T).max() < 1e-13
    ev = np.linalg.eigvalsh(A.toarray())
    assert ev.min() > -1e-12


def block_diagonal_by_vertex(A, owner_r, owner_c):
    C = A.tocoo()
    return np.all(owner_r[C.row] == owner_c[C.col])


def test_vertexquad_mass_matrices_localize(fe):
    c = forms.Coefficients()
    assert block_diagonal_by_vertex(forms.assemble_af(fe, c), vertex_of(fe, "sigma_f"), vertex_of(fe, "sigma_f"))
    assert block_diagonal_by_vertex(forms.assemble_ap(fe, c), vertex_of(fe, "u_p"), vertex_of(fe, "u_p"))
    SS, _, _ = forms.assemble_ae(fe, c)
    assert block_diagonal_by_vertex(SS, vertex_of(fe, "sigma_p"), vertex_of(fe, "sigma_p"))
    bf, bp = forms.assemble_bsk(fe)
    assert block_diagonal_by_vertex(bf, vertex_of(fe, "sigma_f"), np.arange(fe.mesh_f.n_vertices))
    assert block_diagonal_by_vertex(bp, vertex_of(fe, "sigma_p"), np.arange(fe.mesh_p.n_vertices))
    # the exact rule couples different vertices
    assert not block_diagonal_by_vertex(forms.assemble_ap(fe, c, "exact"), vertex_of(fe, "u_p"), vertex_of(fe, "u_p"))


def test_ap_identity_permeability_is_mass(fe):
    A = forms.assemble_ap(fe, forms.Coefficients(mu=1.0), "exact")
    A2 = forms.assemble_ap(fe, forms.Coefficients(mu=2.0, K=2 * np.eye(2)), "exact")
    assert abs(A - A2).max() < 1e-13
    assert np.linalg.eigvalsh(A.toarray()).min() > 0
    u = interpolate_vector_field(fe.mesh_p, lambda x: np.tile([1.0, 0.0], (len(x), 1)))
    assert u @ A @ u == pytest.approx(1.0, rel=1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000))
def test_ae_positive_semidefinite(fe, seed):
    rng = np.random.default_rng(seed)
    c = forms.Coefficients(s0=0.0, lambda_p=rng.uniform(0.1, 1e3), alpha_p=rng.uniform(0, 1))
    SS, SP, PP = forms.assemble_ae(fe, c)
    A = sps.bmat([[SS, SP], [SP.T, PP]]).toarray()
    q = rng.standard_normal((A.shape[0], 20))
    assert np.all(np.einsum("ij,ij->j", q, A @ q) >= -1e-10 * np.abs(A).max())


def test_ae_alpha_zero_decouples(fe):
    _, SP, _ = forms.assemble_ae(fe, forms.Coefficients(alpha_p=0.0))
    assert SP.nnz == 0


def test_b_div_constant_tensor(fe):
    bf, bs, bp = forms.assemble_b_div(fe)
    C = interpolate_tensor_field(fe.mesh_f, lambda x: np.broadcast_to([[1.0, 2.0], [-3.0, 0.5]], (len(x), 2, 2)))
    assert np.abs(C @ bf).max() < 1e-12


def test_b_div_divergence_theorem(fe):
    # entry of b_p for one basis function equals minus its outward flux out of the cell
    _, _, bp = forms.assemble_b_div(fe)
    sp = fe.bdm_p
    for t in range(3):
        for i in range(6):
            g = sp.ldof[t, i]
            # only the local edge i // 2 carries flux, and it is 1/2 by the DOF scaling
            flux = 0.5 * sp.signs[t, i]
            assert bp[g, t] == pytest.approx(-flux, abs=1e-12)


def test_b_div_full_rank_over_pressures():
    mf = classify_boundary(build_rect_mesh((0, 0, 1, 1), 2, 2), {"left": "a", "right": "b", "top": "c", "bottom": INTERFACE})
    mp = classify_boundary(build_rect_mesh((0, -1, 1, 0), 2, 2), {"left": "a", "right": "b", "bottom": "c", "top": INTERFACE})
    fe = build_fe_system(mf, mp, build_interface(mf, mp), "S2")
    _, _, bp = forms.assemble_b_div(fe)
    assert np.linalg.matrix_rank(bp.toarray()) == mp.n_triangles


def test_bsk_symmetric_tensor_pairs_to_zero(fe):
    S = interpolate_tensor_field(fe.mesh_p, lambda x: np.stack([np.stack([x[:, 0], x[:, 1]], 1), np.stack([x[:, 1], 1 + 0 * x[:, 0]], 1)], 1))
    for mode in ("vertexquad", "exact"):
        _, bp = forms.assemble_bsk(fe, mode)
        assert np.abs(S @ bp).max() < 1e-12


def test_bsk_convention(fe):
    # tau = [[0, 1], [0, 0]] against g = 1 integrates tau_12 - tau_21 = 1 over the domain
    T = interpolate_tensor_field(fe.mesh_f, lambda x: np.broadcast_to([[0.0, 1.0], [0.0, 0.0]], (len(x), 2, 2)))
    bf, _ = forms.assemble_bsk(fe, "exact")
    assert T @ bf @ np.ones(fe.mesh_f.n_vertices) == pytest.approx(1.0, rel=1e-12)


def test_bsk_quadrature_difference_decays():
    diffs = []
    for n in (4, 8, 16):
        fe, _ = small_problem("S2", nonmatching=False, nf=n)
        S = interpolate_tensor_field(fe.mesh_f, lambda x: np.stack([np.stack([np.sin(x[:, 1]), np.cos(x[:, 0])], 1), np.stack([x[:, 0] ** 2, x[:, 1]], 1)], 1))
        g = np.sin(fe.mesh_f.vertices[:, 0] + 2 * fe.mesh_f.vertices[:, 1])
        a = S @ forms.assemble_bsk(fe, "exact")[0] @ g
        b = S @ forms.assemble_bsk(fe, "vertexquad")[0] @ g
        diffs.append(abs(a - b))
    assert diffs[1] < diffs[0] and diffs[2] < diffs[1]
    assert np.log2(diffs[1] / diffs[2]) >= 0.9


def test_bjs_kernel_and_tangential_norm(fe_matching):
    fe = fe_matching
    itf = forms.assemble_interface(fe, forms.Coefficients())
    C = sps.bmat([[itf.c_bjs[("phi", "phi")], itf.c_bjs[("phi", "theta")]], [itf.c_bjs[("theta", "phi")], itf.c_bjs[("theta", "theta")]]]).toarray()
    assert np.abs(C - C.T).max() < 1e-14
    assert np.linalg.eigvalsh(C).min() > -1e-12
    # phi = theta (same vector field on matching traces) lies in the kernel
    f = lambda x: np.stack([np.sin(3 * x[:, 0]), x[:, 0] ** 2], axis=1)  # noqa: E731
    phi = forms.trace_interpolate(fe, "fluid", f)
    theta = forms.trace_interpolate(fe, "poro", f)
    v = np.concatenate([phi, theta])
    assert abs(v @ C @ v) < 1e-12
    # (phi, 0): tangential L2 norm on the interface, t_f = +-e_x
    g = lambda x: np.stack([1 + x[:, 0], 5 + 0 * x[:, 0]], axis=1)  # noqa: E731
    phi = forms.trace_interpolate(fe, "fluid", g)
    n = len(phi)
    assert phi @ C[:n, :n] @ phi == pytest.approx(((2**3 - 1) / 3), rel=1e-12)


def test_b_gamma_constant_multiplier(fe):
    itf = forms.assemble_interface(fe, forms.Coefficients())
    u = interpolate_vector_field(fe.mesh_p, lambda x: np.stack([x[:, 1], 1 + x[:, 0] ** 0 + x[:, 0]], 1))
    one = np.ones(fe.trace_p.dim)
    # n_p = +e_y on y = 0: flux of (., 2 + x) is 2.5
    assert u @ itf.b_gamma @ one == pytest.approx(2.5, rel=1e-12)


@pytest.mark.parametrize("variant", ["S1", "S2"])
def test_b_nf_reproduces_normal_stress_pairing(variant):
    fe, _ = small_problem(variant, nf=4, np_=3)
    itf = forms.assemble_interface(fe, forms.Coefficients())
    S = interpolate_tensor_field(fe.mesh_f, lambda x: np.stack([np.stack([x[:, 0], 1 + x[:, 1]], 1), np.stack([2 - x[:, 0], x[:, 0] * 0 + 3], 1)], 1))
    psi = forms.trace_interpolate(fe, "fluid", lambda x: np.stack([x[:, 0], 1 - x[:, 0]], 1))
    # -<sigma n_f, psi> with n_f = -e_y: sigma n_f = -(1 + 0, 3) on y = 0
    from stokesbiot.quadrature import gauss_seg

    g = gauss_seg(6)
    xs = g.points
    expect = -np.sum(g.weights * (-(1.0) * xs - 3.0 * (1 - xs)))
    assert S @ itf.b_nf @ psi == pytest.approx(expect, rel=1e-12)


def test_interface_skew_pairing(fe):
    from stokesbiot.system import assemble_blocks
    from stokesbiot.verify import interface_antisymmetry

    blocks, _ = assemble_blocks(fe, forms.Coefficients(), 0.1)
    assert interface_antisymmetry(blocks) < 1e-12


def test_rhs_zero_data(fe):
    assert np.all(forms.assemble_rhs(fe, forms.ProblemData(), 0.0) == 0.0)


def test_rhs_q_f_single_triangle():
    mf = classify_boundary(build_rect_mesh((0, 0, 1, 1), 1, 1), {"left": "a", "right": "b", "top": "c", "bottom": INTERFACE})
    mp = classify_boundary(build_rect_mesh((0, -1, 1, 0), 1, 1), {"left": "a", "right": "b", "bottom": "c", "top": INTERFACE})
    fe = build_fe_system(mf, mp, build_interface(mf, mp), "S2")
    b = forms.assemble_rhs(fe, forms.ProblemData(q_f=lambda x, t: np.ones(len(x))), 0.0)
    I = identity_tensor(mf)
    # F(I) = -(1/2)(q_f I, I) = -(1/2) * 2 * |Omega_f|
    assert I @ b[fe.slice("sigma_f")] == pytest.approx(-1.0, rel=1e-12)


def test_rhs_example1_boundary_lifts():
    fe, c = small_problem("S2")
    data = MmsFields(c).problem_data()
    b = forms.assemble_rhs(fe, data, 0.0)
    xf = forms.essential_values(fe, data, 0.0)
    assert np.abs(b[fe.slice("sigma_f")]).max() > 0
    assert np.abs(b[fe.slice("sigma_p")]).max() > 0
    assert np.abs(b[fe.slice("u_p")]).max() > 0
    assert np.abs(xf).max() > 0
    assert len(xf) == len(fe.essential_global())


def test_trace_projection_orthogonality(fe):
    f = lambda x: np.stack([np.sin(4 * x[:, 0]), np.exp(x[:, 0])], axis=1)  # noqa: E731
    c = forms.trace_project(fe, "poro", f)
    M = forms.trace_mass(fe, "poro")
    b = forms.trace_load(fe, "poro", f)
    for k in range(2):
        np.testing.assert_allclose(M @ c[k::2], b[k::2], atol=1e-14)


def test_exact_equals_vertexquad_for_constants(fe):
    # (I, I) integrand is constant: both rules agree
    c = forms.Coefficients()
    SSq, _, _ = forms.assemble_ae(fe, c, "vertexquad")
    SSe, _, _ = forms.assemble_ae(fe, c, "exact")
    I = identity_tensor(fe.mesh_p)
    assert I @ SSq @ I == pytest.approx(I @ SSe @ I, rel=1e-13)
    assert (I @ SSq @ I) == pytest.approx(2 * 0.25, rel=1e-12)
