import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from l2flow import warped as wp
from l2flow.experiments import identity_test_metric, random_direction

VOL_S4 = 8 * np.pi ** 2 / 3


def order(e1, e2):
    return np.log2(e1 / e2)


def test_round_metric_definition():
    m = wp.round_metric(64)
    assert np.all(m.a == 1)
    assert m.f[32] == 1.0
    assert m.f[0] == 0 and m.f[-1] == 0
    assert m.L == pytest.approx(np.pi)
    m.validate()


@pytest.mark.parametrize("N", [14, 17, 0])
def test_round_metric_rejects_bad_n(N):
    with pytest.raises(ValueError):
        wp.round_metric(N)


def test_node_trig_symmetric():
    s, c = wp.node_trig(96, 3)
    assert np.array_equal(s, s[::-1])
    assert np.array_equal(np.abs(c), np.abs(c[::-1]))
    t = np.linspace(0, np.pi, 97)
    assert np.allclose(s, np.sin(3 * t), atol=4e-15)
    assert np.allclose(c, np.cos(3 * t), atol=4e-15)


def test_round_curvature_converges():
    errs = []
    for N in (64, 128):
        g = wp.Geometry(wp.round_metric(N))
        errs.append(np.abs(g.s - 12).max())
        assert np.abs(g.phi).max() < 1e-10
        assert np.abs(g.rm_norm_sq - 24).max() < 1e-2
    assert errs[1] < 1e-3
    assert order(*errs) > 1.9


def test_round_volume():
    e = [abs(wp.Geometry(wp.round_metric(N)).volume() - VOL_S4) for N in (64, 128)]
    assert e[1] / VOL_S4 < 1e-6
    assert order(*e) > 1.9


def test_scaled_round_curvature():
    rho = 3.0
    g = wp.Geometry(wp.round_metric(128, radius=rho))
    assert np.abs(g.s - 12 / rho ** 2).max() < 1e-3 / rho ** 2


def test_z_traceless_and_norm_consistent():
    g = wp.Geometry(identity_test_metric(96))
    assert np.abs(g.z.trace()).max() <= 1e-10 * (1 + np.abs(g.z.rad).max())
    assert np.allclose(g.rm_norm_sq, 2 * g.z.density() + g.s ** 2 / 6, rtol=1e-14)
    assert np.allclose(g.r.trace(), g.s, rtol=1e-12)
    assert np.allclose(g.r.rad - g.s / 4, g.z.rad, atol=1e-10)


def test_perturb_metric():
    m = wp.round_metric(96)
    assert wp.perturb_metric(m, 2, 0.0) is m
    p = wp.perturb_metric(m, 2, 0.05)
    v0, vL = wp.pole_slopes(p)
    assert abs(v0 - 1) < (np.pi / 96) ** 2 and abs(vL + 1) < (np.pi / 96) ** 2
    assert np.array_equal(p.a, m.a)
    g = wp.Geometry(p)
    assert g.norm_sq(g.z) > 0
    with pytest.raises(ValueError):
        wp.perturb_metric(m, 2, 0.5)


def test_validate_rejects_invalid():
    m = wp.round_metric(32)
    f = m.f.copy()
    f[5] = -1
    with pytest.raises(ValueError):
        wp.WarpedMetric(m.a, f, m.L).validate()
    with pytest.raises(ValueError):
        wp.WarpedMetric(-m.a, m.f, m.L).validate()
    with pytest.raises(ValueError):
        wp.WarpedMetric(m.a, 1.2 * m.f, m.L).validate()  # cone angle at both poles


def test_pole_projection_sets_unit_slopes():
    m = wp.round_metric(64)
    bad = wp.WarpedMetric(m.a, 1.01 * m.f, m.L)
    fixed = wp.enforce_pole_regularity(bad)
    v0, vL = wp.pole_slopes(fixed)
    assert abs(v0 - 1) < 1e-13 and abs(vL + 1) < 1e-13


def test_laplacian_round_eigenfunction():
    errs = []
    for N in (64, 128):
        m = wp.round_metric(N)
        _, c = wp.node_trig(N, 1)
        errs.append(np.abs(wp.laplacian_scalar(m, c) + 4 * c).max())
        assert np.abs(wp.laplacian_scalar(m, np.full(N + 1, 3.0))).max() < 1e-12
    assert order(*errs) > 1.9


def test_laplacian_linear():
    m = identity_test_metric(64)
    rng = np.random.default_rng(0)
    u, v = random_direction(64, rng).rad, random_direction(64, rng).rad
    lhs = wp.laplacian_scalar(m, 2 * u - 3 * v)
    rhs = 2 * wp.laplacian_scalar(m, u) - 3 * wp.laplacian_scalar(m, v)
    assert np.abs(lhs - rhs).max() < 1e-12 * (1 + np.abs(rhs).max())


def test_laplacian_rejects_odd_field():
    m = wp.round_metric(64)
    t = m.t
    with pytest.raises(ValueError, match="parity"):
        wp.laplacian_scalar(m, t)


def test_hessian_round_eigenfunction():
    errs = []
    for N in (64, 128):
        m = wp.round_metric(N)
        _, c = wp.node_trig(N, 1)
        H = wp.hessian_scalar(m, c)
        errs.append(max(np.abs(H.rad + c).max(), np.abs(H.sph + c).max()))
        Hc = wp.hessian_scalar(m, np.ones(N + 1))
        assert np.abs(Hc.rad).max() < 1e-12 and np.abs(Hc.sph).max() < 1e-12
    assert order(*errs) > 1.9


def test_hessian_trace_is_laplacian():
    errs = []
    for N in (64, 128):
        g = wp.Geometry(identity_test_metric(N))
        u = random_direction(N, np.random.default_rng(1)).sph
        errs.append(np.abs(g.hessian(u).trace() - g.laplacian(u)).max())
    assert order(*errs) > 1.9


def test_rough_laplacian_of_metric_and_scalar_multiple():
    errs = []
    for N in (64, 128):
        g = wp.Geometry(identity_test_metric(N))
        one = np.ones(N + 1)
        L1 = wp.rough_laplacian_sym2(g, wp.Sym2Field(one, one))
        assert np.abs(L1.rad).max() < 1e-10 and np.abs(L1.sph).max() < 1e-10
        u = random_direction(N, np.random.default_rng(2)).sph
        Lu = g.rough_laplacian(wp.Sym2Field.scalar(u))
        lu = g.laplacian(u)
        errs.append(max(np.abs(Lu.rad - lu).max(), np.abs(Lu.sph - lu).max()))
    assert errs[1] < 1e-10 or order(*errs) > 1.9


def test_rough_laplacian_commutes_with_trace():
    g = wp.Geometry(identity_test_metric(96))
    T = random_direction(96, np.random.default_rng(3))
    assert np.abs(g.rough_laplacian(T).trace() - g.laplacian(T.trace())).max() < 1e-10


def test_rough_laplacian_requires_pole_condition():
    m = wp.round_metric(32)
    one = np.ones(33)
    with pytest.raises(ValueError, match="parity"):
        wp.rough_laplacian_sym2(m, wp.Sym2Field(one, 0 * one))


def test_operator_outputs_respect_pole_parity():
    g = wp.Geometry(identity_test_metric(96))
    T = g.rough_laplacian(random_direction(96, np.random.default_rng(4)))
    wp.check_pole_condition(T)
    wp.check_even(g.laplacian(g.s), float(g.L))


def test_integrate():
    m = wp.round_metric(128)
    assert wp.integrate(m, np.ones(129)) == pytest.approx(VOL_S4, rel=1e-6)
    g = wp.Geometry(m)
    assert wp.integrate(m, g.s) == pytest.approx(32 * np.pi ** 2, rel=1e-4)
    u, v = np.cos(m.t), np.sin(m.t) ** 2
    assert wp.integrate(m, 2 * u + v) == pytest.approx(2 * wp.integrate(m, u) + wp.integrate(m, v), abs=1e-12)


def test_long_double_geometry():
    g = wp.Geometry(wp.round_metric(64, dtype=np.longdouble))
    assert g.s.dtype == np.longdouble
    assert abs(float(g.volume()) / VOL_S4 - 1) < 1e-6


def test_snapshot_round_trip(tmp_path):
    m = identity_test_metric(48)
    path = tmp_path / "m.snap"
    wp.write_snapshot(path, m, 0.125, dt=0.01)
    text = path.read_text().splitlines()
    assert text[:3] == ["N=48", f"L={m.L:.17g}", "tau=0.125"]
    m2, tau, dt = wp.read_snapshot(path)
    assert np.array_equal(m2.a, m.a) and np.array_equal(m2.f, m.f) and m2.L == m.L
    assert (tau, dt) == (0.125, 0.01)
    wp.write_snapshot(path, m, 1.0)
    assert wp.read_snapshot(path)[2] is None


def test_snapshot_rejects_truncated(tmp_path):
    path = tmp_path / "bad.snap"
    path.write_text("N=4\nL=3.14\ntau=0\n0 1 0\n")
    with pytest.raises(ValueError):
        wp.read_snapshot(path)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.floats(-0.3, 0.3), st.sampled_from([32, 48, 64]))
def test_perturbed_metrics_are_valid(mode, amp, N):
    m = wp.perturb_metric(wp.round_metric(N), mode, amp)
    g = wp.Geometry(m)
    assert np.all(np.isfinite(g.s)) and np.all(np.isfinite(g.rm_norm_sq))
    assert np.abs(g.z.trace()).max() <= 1e-10 * (1 + np.abs(g.z.rad).max())
