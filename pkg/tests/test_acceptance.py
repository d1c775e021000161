"""End-to-end acceptance criteria, one test per criterion, each reporting a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from l2flow import curvature as cv
from l2flow import experiments as ex
from l2flow import flow as fl
from l2flow import functionals as fn
from l2flow import warped as wp

Y_ROUND = 8 * math.sqrt(6) * math.pi
VOL_S4 = 8 * math.pi ** 2 / 3


@pytest.fixture(scope="module")
def convergence_run():
    m = wp.perturb_metric(wp.round_metric(96), 2, 0.05)
    t0 = time.perf_counter()
    res = fl.run_flow(fl.FlowState(m), fl.FlowConfig(stop_grad_norm=1e-6, stop_time=1e3))
    return res, time.perf_counter() - t0


def test_criterion_1_algebraic_identities(acceptance):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = {}
    for _ in range(1000):
        for k, v in cv.algebraic_residuals(cv.random_curvature(rng)).items():
            worst[k] = max(worst.get(k, 0.0), v)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-11 and elapsed < 5
    acceptance(1, "algebraic identity suite", ok,
               f"max residual {max(worst.values()):.2e}, {elapsed:.2f}s")
    assert ok


def test_criterion_2_round_calibration(acceptance):
    t0 = time.perf_counter()
    m = wp.round_metric(128)
    g = wp.Geometry(m)
    errs = {
        "s": np.abs(g.s - 12).max(),
        "vol": abs(g.volume() / VOL_S4 - 1),
        "F": abs(fn.energy_f(g) / (64 * math.pi ** 2) - 1),
        "chi": abs(fn.gauss_bonnet_chi(g) - 2),
        "sigma2": abs(fn.sigma2(g) - 2),
        "yamabe": abs(fn.estimate_yamabe(m).value / Y_ROUND - 1),
    }
    elapsed = time.perf_counter() - t0
    limits = {"s": 1e-3, "vol": 1e-4, "F": 1e-3, "chi": 1e-3, "sigma2": 1e-3, "yamabe": 1e-2}
    ok = all(errs[k] <= limits[k] for k in limits) and elapsed < 10
    acceptance(2, "round-sphere calibration at N=128", ok,
               " ".join(f"{k}={v:.1e}" for k, v in errs.items()) + f" {elapsed:.1f}s")
    assert ok


def test_criterion_3_gradient_certification(acceptance):
    t0 = time.perf_counter()
    metrics = {N: ex.identity_test_metric(N) for N in (64, 128)}
    oracle = {N: ex.gradient_oracle_errors(m, seed=3, directions=10) for N, m in metrics.items()}
    ratios = oracle[64] / oracle[128]
    tr, dv = {}, {}
    for N, m in metrics.items():
        g = wp.Geometry(m)
        E = fl.assemble_grad_f(g)
        tr[N] = np.abs(E.trace() + g.laplacian(g.s)).max()
        dv[N] = np.abs(g.divergence(E)).max()
    elapsed = time.perf_counter() - t0
    ok = (ratios.min() >= 3.5 and tr[64] / tr[128] >= 3.5 and dv[64] / dv[128] >= 3.5
          and elapsed < 60)
    acceptance(3, "gradient certification", ok,
               f"oracle ratio min {ratios.min():.2f}, trace {tr[64] / tr[128]:.2f}, "
               f"div {dv[64] / dv[128]:.2f}, {elapsed:.1f}s")
    assert ok


def test_criterion_4_convergence_run(acceptance, convergence_run):
    res, elapsed = convergence_run
    tr = res.trace
    F = tr.column("F")
    z = tr.column("z_l2sq")
    grad = math.sqrt(tr.rows[-1][3])
    fit = ex.fit_decay_rate(tr, 0.5)
    m = res.state.metric
    rho = (float(wp.Geometry(m).volume()) / VOL_S4) ** 0.25
    profile = np.abs(m.f - rho * np.sin(m.t / rho)).max()
    ok = (res.status == "converged" and grad <= 1e-6 and np.all(np.diff(F) <= 0)
          and z[-1] <= 1e-4 * z[0] and fit.eta > 0 and fit.r_squared >= 0.99
          and profile <= 1e-3 and elapsed < 600)
    acceptance(4, "convergence run N=96, 5% mode 2", ok,
               f"{len(tr)} rows, |E|={grad:.1e}, z ratio {z[-1] / z[0]:.1e}, eta={fit.eta:.3g} "
               f"R2={fit.r_squared:.5f}, profile {profile:.1e}, {elapsed:.1f}s")
    assert ok


def test_criterion_5_energy_identity(acceptance, convergence_run):
    tr = convergence_run[0].trace
    F, chi, z = tr.column("F"), tr.column("chi"), tr.column("z_l2sq")
    rel = np.abs(F - (32 * math.pi ** 2 * chi + 4 * z)) / F
    ok = bool(np.all(rel <= 1e-3))
    acceptance(5, "energy identity F = 32 pi^2 chi + 4 |z|^2", ok, f"max relative {rel.max():.1e}")
    assert ok


def test_criterion_6_coercivity(acceptance):
    amps = np.linspace(0.005, 0.05, 10)
    delta = {}
    for N in (64, 128):
        delta[N] = min(fn.coercivity_ratio(wp.perturb_metric(wp.round_metric(N), 2, A)) for A in amps)
    drift = abs(delta[64] / delta[128] - 1)
    ok = delta[64] > 0 and delta[128] > 0 and drift <= 0.2
    acceptance(6, "coercivity monitor", ok,
               f"delta*(64)={delta[64]:.4f} delta*(128)={delta[128]:.4f} drift {drift:.1%}")
    assert ok


def test_criterion_7_sigma2_conformal(acceptance):
    m = wp.round_metric(128)
    base = fn.sigma2(m)
    rng = np.random.default_rng(77)
    devs = [abs(fn.sigma2(fn.conformal_metric(m, ex.conformal_factor(128, rng))) - base)
            for _ in range(20)]
    ok = max(devs) <= 1e-3
    acceptance(7, "sigma2 conformal invariance", ok, f"max deviation {max(devs):.1e}")
    assert ok


def test_criterion_8_appendix_inequality(acceptance):
    alpha_ok = fn.sobolev_alpha(2, 8) == 4 / 5
    ratios = {}
    for N in (96, 192):
        m = wp.round_metric(N)
        m = m.scaled(float(wp.Geometry(m).volume()) ** -0.25)
        ratios[N] = np.array([fn.mult_sobolev_check(m, np.cos(np.pi * m.t / m.L) ** k, 2, 8).ratio
                              for k in range(1, 9)])
    change = np.abs(ratios[192] / ratios[96] - 1).max()
    ok = alpha_ok and change <= 0.05
    acceptance(8, "multiplicative Sobolev inequality", ok,
               f"alpha(2,8)={fn.sobolev_alpha(2, 8)}, K={ratios[192].max():.4f}, max change {change:.1e}")
    assert ok


def test_criterion_9_determinism_and_restart(acceptance, tmp_path):
    cfg = ex.ScenarioConfig(grid_n=96, perturb_amplitude=0.05, stop_time=1e3)
    ex.run_scenario(cfg, tmp_path / "a")
    ex.run_scenario(cfg, tmp_path / "b")
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("trace.csv", "summary.json", "initial.snap", "final.snap"))

    T = 0.1
    base = dict(grid_n=96, perturb_amplitude=0.05, stop_grad_norm=0.0)
    ex.run_scenario(ex.ScenarioConfig(stop_time=T, **base), tmp_path / "half")
    ex.run_scenario(ex.ScenarioConfig(stop_time=2 * T, restart=str(tmp_path / "half" / "final.snap"),
                                      **base), tmp_path / "rest")
    ex.run_scenario(ex.ScenarioConfig(stop_time=2 * T, **base), tmp_path / "full")
    full = fl.FlowTrace.from_csv(tmp_path / "full" / "trace.csv")
    half = fl.FlowTrace.from_csv(tmp_path / "half" / "trace.csv")
    rest = fl.FlowTrace.from_csv(tmp_path / "rest" / "trace.csv")
    schedule = np.array_equal(np.concatenate([half.column("tau"), rest.column("tau")[1:]]),
                              full.column("tau"))
    drift = abs(rest.rows[-1][1] - full.rows[-1][1])
    ok = same and schedule and drift <= 1e-9
    acceptance(9, "determinism and restart", ok,
               f"byte-identical={same}, same schedule={schedule}, final F drift {drift:.1e}")
    assert ok
