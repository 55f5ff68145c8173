import math

import numpy as np
import pytest

from stokesbiot import forms
from stokesbiot.system import assemble_blocks
from stokesbiot.timeloop import interpolate_state
from stokesbiot.verify import (
    TABLE_FIELDS,
    ErrorReport,
    MmsFields,
    example1_problem,
    interface_antisymmetry,
    mesh_sizes,
    mms_residuals,
    property_suite,
    rate,
    small_problem,
    spatial_errors,
)


def test_mms_closures_consistent():
    res = mms_residuals(MmsFields(), n_samples=1000, seed=0)
    assert max(res.values()) < 1e-10


def test_mms_closures_other_coefficients():
    c = forms.Coefficients(mu=0.5, lambda_p=3.0, s0=0.1, alpha_p=0.7)
    res = mms_residuals(MmsFields(c), n_samples=200, seed=3)
    # the interface conditions are tied to the unit parameters
    bulk = {k: v for k, v in res.items() if not k.startswith("iface")}
    assert max(bulk.values()) < 1e-10
    assert res["iface_momentum"] > 1e-3


def test_mms_boundary_values():
    mms = MmsFields()
    x = np.array([[0.3, 0.0], [0.7, 0.0]])
    # no-slip tangential part is not imposed; normal velocity matches across y=0
    un_f = mms.u_f(x, 0.2)[:, 1]
    un_p = mms.u_p(x, 0.2)[:, 1] + mms.u_s(x, 0.2)[:, 1]
    np.testing.assert_allclose(un_f, un_p, atol=1e-13)


def test_rate_formula():
    assert rate(1.0, 0.25, 0.1, 0.05) == pytest.approx(2.0)
    assert rate(4.0, 2.0, 1.0, 0.5) == pytest.approx(1.0)


def test_interpolant_errors_small():
    # exact coefficients give errors of interpolation size only
    errs = []
    for level in (0, 1):
        pb, mms = example1_problem(level)
        st = interpolate_state(pb.fe, mms, 0.005)
        errs.append(spatial_errors(pb.fe, st, mms))
    for f in ("u_f", "u_s", "p_p", "gamma_f"):
        assert errs[1][f] < errs[0][f]
        assert math.log2(errs[0][f] / errs[1][f]) > 0.8


def test_error_report_csv():
    rep = ErrorReport("S2")
    h0 = {"h_f": 0.25, "h_p": 0.25, "h_tf": 0.125, "h_tp": 0.125}
    h1 = {k: v / 2 for k, v in h0.items()}
    rep.add(0, h0, {f: 1.0 for f in TABLE_FIELDS})
    rep.add(1, h1, {f: 0.25 for f in TABLE_FIELDS})
    lines = rep.to_csv().strip().split("\n")
    head = lines[0].split(",")
    assert head[:5] == ["level", "h_f", "h_p", "h_tf", "h_tp"]
    assert len(head) == 5 + 2 * len(TABLE_FIELDS)
    assert len(lines) == 3
    assert rep.rates("phi")[1] == pytest.approx(2.0)
    assert math.isnan(rep.rates("phi")[0])
    assert rep.h_for("theta", rep.rows[0]) == 0.125


def test_mesh_sizes_trace_finer():
    pb, _ = example1_problem(0)
    h = mesh_sizes(pb.fe)
    # level 0: 8x8 fluid and 5x5 poro grids; each trace grid follows its interface edges
    assert h["h_tf"] == pytest.approx(1 / 8)
    assert h["h_tp"] == pytest.approx(1 / 5)
    assert h["h_f"] == pytest.approx(math.sqrt(2) / 8)


def test_property_suite_passes():
    checks = property_suite()
    bad = [c for c in checks if not c.passed]
    assert not bad, [(c.name, c.detail) for c in bad]


def test_antisymmetry_detects_sign_error():
    fe, c = small_problem("S2")
    B, _ = assemble_blocks(fe, c, 0.1)
    assert interface_antisymmetry(B) < 1e-12
    bad = dict(B)
    bad[("lam", "phi")] = -B[("lam", "phi")]
    assert interface_antisymmetry(bad) > 0.5
