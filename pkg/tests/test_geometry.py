import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokesbiot.errors import ConfigError, GeometryError
from stokesbiot.geometry import (
    INTERFACE,
    INTERIOR,
    build_interface,
    build_rect_mesh,
    classify_boundary,
    make_mesh,
    read_mesh,
    submesh,
    write_mesh,
)
from stokesbiot.presets import example2_meshes, example3_meshes
from stokesbiot.verify import example1_meshes


def pair(nf, np_, diag_f="right", diag_p="left"):
    mf = classify_boundary(
        build_rect_mesh((0, 0, 1, 1), nf, nf, diag_f),
        {"left": "f-left", "right": "f-right", "top": "f-top", "bottom": INTERFACE},
    )
    mp = classify_boundary(
        build_rect_mesh((0, -1, 1, 0), np_, np_, diag_p),
        {"left": "p-left", "right": "p-right", "bottom": "p-bottom", "top": INTERFACE},
    )
    return mf, mp


def test_smallest_rect_mesh():
    m = build_rect_mesh((0, 0, 1, 1), 1, 1, "left")
    assert m.n_triangles == 2
    assert m.n_edges == 5
    assert np.sum(m.edge_tags != INTERIOR) == 4


def test_four_by_four_mesh():
    m = build_rect_mesh((0, 0, 1, 1), 4, 4, "left")
    assert m.n_triangles == 32
    assert m.h() == pytest.approx(np.sqrt(2) / 4, rel=1e-14)


def test_coarsest_poro_trace():
    m = build_rect_mesh((0, -1, 1, 0), 5, 5, "left")
    top = m.edges_with_tag("top")
    assert len(top) == 5
    np.testing.assert_allclose(m.edge_lengths()[top], 0.2, rtol=1e-14)


def test_crossed_mesh():
    m = build_rect_mesh((0, 0, 1, 1), 3, 2, "crossed")
    assert m.n_triangles == 24
    assert m.areas().sum() == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("bad", [((0, 0, 0, 1), 2, 2), ((0, 0, 1, 1), 0, 2)])
def test_rect_mesh_rejects_bad_input(bad):
    with pytest.raises(ConfigError):
        build_rect_mesh(*bad)


def test_degenerate_triangle():
    with pytest.raises(GeometryError):
        make_mesh([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]])


def test_clockwise_triangle_is_flipped():
    m = make_mesh([[0, 0], [0, 1], [1, 0]], [[0, 1, 2]])
    assert m.areas()[0] == pytest.approx(0.5)


@settings(max_examples=25, deadline=None)
@given(
    nx=st.integers(1, 7),
    ny=st.integers(1, 7),
    diag=st.sampled_from(["left", "right", "alternating", "crossed"]),
    w=st.floats(0.1, 5.0),
    hgt=st.floats(0.1, 5.0),
)
def test_mesh_invariants(nx, ny, diag, w, hgt):
    m = build_rect_mesh((-1.0, 0.5, -1.0 + w, 0.5 + hgt), nx, ny, diag)
    areas = m.areas()
    assert np.all(areas > 0)
    assert areas.sum() == pytest.approx(w * hgt, rel=1e-12)
    interior = m.edge_tags == INTERIOR
    assert np.all(m.edge_tris[interior] >= 0)
    assert np.all(m.edge_tris[~interior, 1] == -1)
    # opposite signs on the two sides of interior edges
    for e in np.flatnonzero(interior)[:50]:
        s = []
        for t in m.edge_tris[e]:
            k = list(m.tri_edges[t]).index(e)
            s.append(m.tri_signs[t, k])
        assert s[0] == -s[1]
    # global normal is the clockwise rotation of the edge vector
    d = m.edge_vectors()
    n = m.edge_normals()
    np.testing.assert_allclose(n[:, 0] * d[:, 1] - n[:, 1] * d[:, 0], np.linalg.norm(d, axis=1), rtol=1e-12)
    assert np.all(m.edges[:, 0] < m.edges[:, 1])


def test_classify_boundary_unmatched():
    m = build_rect_mesh((0, 0, 1, 1), 2, 2)
    with pytest.raises(ConfigError):
        classify_boundary(m, {"left": "a", "right": "b"})


def test_classify_keeps_interface():
    mf, _ = pair(2, 2)
    assert len(mf.edges_with_tag(INTERFACE)) == 2
    m2 = classify_boundary(mf, {"f-left": "x", "f-right": "y", "f-top": "z"})
    assert len(m2.edges_with_tag(INTERFACE)) == 2


def test_example2_tags():
    mf, mp = example2_meshes(4, 3)
    assert set(mf.boundary_tags()) == {"f-left", "f-right", "f-top", INTERFACE}
    assert set(mp.boundary_tags()) == {"p-left", "p-right", "p-bottom", INTERFACE}


def test_example3_split():
    mf, mp = example3_meshes(16)
    assert set(mf.boundary_tags()) == {INTERFACE, "f-right"}
    assert {"p-left", "p-top", "p-bottom", "p-right"} <= set(mp.boundary_tags())
    assert mf.areas().sum() + mp.areas().sum() == pytest.approx(1.0, rel=1e-12)
    iface = build_interface(mf, mp)
    assert iface.total_length() == pytest.approx(mf.edge_lengths()[mf.edges_with_tag(INTERFACE)].sum(), rel=1e-12)


def test_matching_interface():
    mf, mp = pair(4, 4)
    iface = build_interface(mf, mp)
    assert iface.n_segments == 4
    np.testing.assert_allclose(np.sort(iface.length), 0.25)


def test_nonmatching_interface_8_5():
    mf, mp = pair(8, 5)
    iface = build_interface(mf, mp)
    assert iface.n_segments == 12
    assert iface.total_length() == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose((iface.n_f * iface.n_p).sum(axis=1), -1.0)
    np.testing.assert_allclose(iface.n_f, [[0.0, -1.0]] * 12, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(nf=st.integers(1, 12), np_=st.integers(1, 12))
def test_intersection_refines_both_traces(nf, np_):
    mf, mp = pair(nf, np_)
    iface = build_interface(mf, mp)
    for trace, seg in ((iface.fluid_trace, iface.fluid_seg), (iface.poro_trace, iface.poro_seg)):
        sums = np.bincount(seg, weights=iface.length, minlength=trace.n_edges)
        np.testing.assert_allclose(sums, trace.lengths, rtol=1e-12)
    assert iface.total_length() == pytest.approx(1.0, rel=1e-12)


def test_example1_trace_ratio():
    for level in range(3):
        mf, mp = example1_meshes(level)
        iface = build_interface(mf, mp)
        assert iface.fluid_trace.h() == pytest.approx(5 / 8 * iface.poro_trace.h(), rel=1e-12)


def test_interface_gap_rejected():
    mf, _ = pair(2, 2)
    mp = classify_boundary(
        build_rect_mesh((0, -1, 1, -0.1), 2, 2),
        {"left": "p-left", "right": "p-right", "bottom": "p-bottom", "top": INTERFACE},
    )
    with pytest.raises(GeometryError):
        build_interface(mf, mp)


def test_mesh_file_round_trip(tmp_path):
    parent = build_rect_mesh((0, 0, 1, 1), 4, 4, "crossed")
    tags = np.where(parent.centroids()[:, 1] > 0.5, "fluid", "poro").astype(object)
    parent = make_mesh(parent.vertices, parent.triangles, None, tags)
    path = tmp_path / "m.txt"
    write_mesh(parent, path)
    back = read_mesh(path)
    np.testing.assert_allclose(back.vertices, parent.vertices)
    assert back.n_triangles == parent.n_triangles
    mf = read_mesh(path, "fluid")
    mp = read_mesh(path, "poro")
    assert mf.n_triangles + mp.n_triangles == parent.n_triangles
    assert build_interface(mf, mp).total_length() == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        read_mesh(path, "solid")


def test_read_mesh_bad_header(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("points 3\n")
    with pytest.raises(ConfigError):
        read_mesh(p)


def test_submesh_interface_tags():
    parent = build_rect_mesh((0, 0, 1, 1), 2, 2)
    m = submesh(parent, parent.centroids()[:, 0] < 0.5)
    assert len(m.edges_with_tag(INTERFACE)) == 2
