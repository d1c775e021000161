"""Gradient of F = int |Rm|^2 on warped metrics and its negative gradient flow.

Conventions.  Norms are full tensor norms.  E denotes

    E = -2 Delta r + Hess s + (s/3) z + 4 z o z - |z|^2 g    (W = 0 here)

and the flow is dg/dtau = -E.  With full norms the first variation of F along
dg = h is 2 <E, h>_{L2}, so along the flow dF/dtau = -2 |E|^2_{L2}.

Time stepping.  The unknowns are the lapse a and warp f on a uniform grid.  A
radial reparametrization X = zeta d/dt is added to the velocity so that the
lapse only changes by a spatially constant factor; the geometry is unchanged
because F and every diagnostic are diffeomorphism invariant.  With
g(tau) = a^2 dt^2 + f^2 g_S3 the modified velocity is

    da/dtau = c a,     df/dtau = -f E_sph / 2 + (a zeta) f'/a,
    (a zeta)' = a (E_rad/2 + c),  zeta(0) = zeta(L) = 0,

where c is fixed by the boundary condition at t = L.  The IMEX stepper treats
the flat fourth difference theta dt D4 implicitly; everything else is explicit.
After each stage the pole slopes are reset to +-1, which removes the cone
angle mode that the slope-corrected curvature formulas cannot see.  A step is
accepted only if the flow energy does not increase; otherwise dt is halved.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded

from . import functionals
from .warped import (Geometry, Sym2Field, WarpedMetric, compute_geometry, enforce_pole_regularity)

STEPPERS = ("imex", "explicit-adaptive")
GAUGES = ("none", "unit-volume", "lapse-one")

TRACE_COLUMNS = ("tau", "F", "z_l2sq", "gradF_l2sq", "chi", "s_min", "s_max", "coercivity_ratio")


class StepUnderflow(RuntimeError):
    """No step size in the allowed range decreases F."""


@dataclass
class FlowConfig:
    stepper: str = "imex"
    dt_init: float = 1e-4
    dt_max: float = 0.05
    safety: float = 0.8
    gauge_policy: str = "lapse-one"
    stop_time: float = 10.0
    stop_grad_norm: float = 1e-6
    theta: float = 2.0
    max_halvings: int = 40
    max_steps: int = 200000
    blowup_factor: float = 1e4
    stationary_tol: float = 1e-14

    def validate(self):
        if self.stepper not in STEPPERS:
            raise ValueError(f"stepper must be one of {STEPPERS}, got {self.stepper!r}")
        if self.gauge_policy not in GAUGES:
            raise ValueError(f"gauge_policy must be one of {GAUGES}, got {self.gauge_policy!r}")
        for name in ("dt_init", "dt_max", "theta", "blowup_factor", "stationary_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.safety < 1:
            raise ValueError("safety must lie in (0, 1)")
        if self.stop_time < 0 or self.stop_grad_norm < 0:
            raise ValueError("stop criteria must be non-negative")
        if self.max_halvings < 0 or self.max_steps < 1:
            raise ValueError("max_halvings must be >= 0 and max_steps >= 1")
        return self


@dataclass
class FlowState:
    metric: WarpedMetric
    tau: float = 0.0
    dt: float = None

    _geometry: Geometry = field(default=None, repr=False, compare=False)

    @property
    def geometry(self):
        if self._geometry is None or self._geometry.metric is not self.metric:
            self._geometry = Geometry(self.metric)
        return self._geometry


@dataclass
class FlowTrace:
    rows: list = field(default_factory=list)

    def append(self, row):
        self.rows.append(tuple(float(x) for x in row))

    def column(self, name):
        j = TRACE_COLUMNS.index(name)
        return np.array([r[j] for r in self.rows])

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(TRACE_COLUMNS) + "\n")
            for r in self.rows:
                fh.write(",".join(f"{x:.17g}" for x in r) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != TRACE_COLUMNS:
                raise ValueError(f"{path}: unexpected trace header {header}")
            rows = [tuple(float(x) for x in line.split(",")) for line in fh if line.strip()]
        return cls(rows)


@dataclass
class FlowResult:
    trace: FlowTrace
    state: FlowState
    status: str
    message: str = ""

    @property
    def ok(self):
        return self.status in ("converged", "stop-time")


# gradient

def grad_f_parts(m):
    """E together with the rough Laplacian of Ricci it contains."""
    g = compute_geometry(m)
    lap_r = g.rough_laplacian(g.r)
    hess_s = g.hessian(g.s)
    z = g.z
    z2 = z.density()
    alg = Sym2Field(g.s / 3 * z.rad + 4 * z.rad ** 2 - z2, g.s / 3 * z.sph + 4 * z.sph ** 2 - z2)
    E = -2 * lap_r + hess_s + alg
    return E, lap_r


def assemble_grad_f(m):
    return grad_f_parts(m)[0]


def perturb_along(m, h, eps):
    """Metric with a^2 <- a^2 (1 + eps h_rad) and f^2 <- f^2 (1 + eps h_sph)."""
    ga = 1 + eps * np.asarray(h.rad)
    gf = 1 + eps * np.asarray(h.sph)
    if np.any(ga <= 0) or np.any(gf[1:-1] <= 0):
        raise ValueError("perturbed metric is not positive definite")
    out = WarpedMetric(np.asarray(m.a) * np.sqrt(ga), np.asarray(m.f) * np.sqrt(gf), m.L)
    if not (np.all(np.isfinite(out.a)) and np.all(np.isfinite(out.f))):
        raise ValueError("perturbed metric is not finite")
    return out


def directional_derivative_f(m, h, eps=1e-4):
    """Central difference (F(m + eps h) - F(m - eps h)) / (2 eps) of the quadrature energy."""
    fp = functionals.energy_f(perturb_along(m, h, eps))
    fm = functionals.energy_f(perturb_along(m, h, -eps))
    return (fp - fm) / (2 * eps)


def first_variation(m, h):
    """First variation of F along h predicted by E: 2 <E, h>_{L2}."""
    g = compute_geometry(m)
    return 2 * g.inner_product(assemble_grad_f(g), h)


# velocity and stepping

def _cumtrapz0(q, h):
    out = np.zeros_like(q)
    out[1:] = np.cumsum((q[1:] + q[:-1]) * (h / 2))
    return out


def velocity(g, E=None):
    """Returns (c, df/dtau) for the reparametrized flow, c = dlog(a)/dtau."""
    if E is None:
        E = assemble_grad_f(g)
    a, h = g.a, g.h
    wt = np.full(len(a), h, dtype=g.dtype)
    wt[0] = wt[-1] = h / 2
    c = -0.5 * np.sum(wt * a * E.rad) / np.sum(wt * a)
    a_zeta = _cumtrapz0(a * (0.5 * E.rad + c), h)
    vf = -0.5 * g.f * E.sph + a_zeta * g.v
    vf[0] = vf[-1] = 0
    return c, vf


def fourth_difference_banded(N, h, coef):
    """Banded storage of I + coef*D4 with odd reflection at the poles and identity end rows."""
    ab = np.zeros((5, N + 1))
    k = np.arange(1, N)
    ab[2, k] = 1 + 6 * coef / h ** 4
    ab[2, 1] -= coef / h ** 4
    ab[2, N - 1] -= coef / h ** 4
    ab[2, 0] = ab[2, N] = 1
    # ab[2 + i - j, j] = A[i, j]
    ab[1, k + 1] = -4 * coef / h ** 4
    ab[3, k - 1] = -4 * coef / h ** 4
    kk = k[k + 2 <= N]
    ab[0, kk + 2] = coef / h ** 4
    kk = k[k - 2 >= 0]
    ab[4, kk - 2] = coef / h ** 4
    return ab


def _advance_imex(m, dt, cfg):
    g = Geometry(m)
    c, vf = velocity(g)
    a = np.asarray(m.a)
    coef = cfg.theta * np.max(1 / a ** 4) * dt
    ab = fourth_difference_banded(m.N, float(m.h), coef)
    df = solve_banded((2, 2), ab, dt * vf)
    f = np.asarray(m.f) + df
    f[0] = f[-1] = 0
    return WarpedMetric(a * (1 + dt * c), f, m.L)


def _advance_heun(m, dt, cfg):
    g1 = Geometry(m)
    c1, v1 = velocity(g1)
    a = np.asarray(m.a)
    f = np.asarray(m.f)
    mid = WarpedMetric(a * (1 + dt * c1), f + dt * v1, m.L)
    if np.any(mid.f[1:-1] <= 0):
        raise FloatingPointError("predictor left the admissible set")
    c2, v2 = velocity(Geometry(mid))
    fn = f + 0.5 * dt * (v1 + v2)
    fn[0] = fn[-1] = 0
    return WarpedMetric(a * (1 + 0.5 * dt * (c1 + c2)), fn, m.L)


def advance(m, dt, cfg, project=True):
    """One step of size dt without acceptance test.

    With project=True the pole slopes, the volume and the gauge are restored afterwards.
    The semi-discrete velocity moves the first two at O(h^2) rates, so restoring them
    every step adds an O(dt h^2) splitting error on top of the stepper's own order.
    """
    if cfg.stepper == "imex":
        out = _advance_imex(m, dt, cfg)
    else:
        out = _advance_heun(m, dt, cfg)
    if not (np.all(np.isfinite(out.a)) and np.all(np.isfinite(out.f))):
        raise FloatingPointError("non-finite metric")
    if np.any(out.a <= 0) or np.any(out.f[1:-1] <= 0):
        raise FloatingPointError("metric left the admissible set")
    if not project:
        return out
    out = enforce_pole_regularity(out)
    # The exact flow preserves volume (int tr E = -int Delta s = 0), but the stabilized step is
    # only first-order consistent in this F-neutral direction; restore it by an exact rescaling.
    out = out.scaled((float(Geometry(m).volume()) / float(Geometry(out).volume())) ** 0.25)
    return maintain_gauge(out, cfg.gauge_policy)


def maintain_gauge(m, policy):
    if policy == "none":
        return m
    if policy == "unit-volume":
        vol = float(Geometry(m).volume())
        return m.scaled(vol ** -0.25)
    if policy == "lapse-one":
        return _resample_arclength(m)
    raise ValueError(f"unknown gauge policy {policy!r}")


def _resample_arclength(m):
    a = np.asarray(m.a)
    if np.all(a == a[0]):
        # constant lapse: t -> a t is an exact relabelling of the same nodes
        return WarpedMetric(np.ones_like(a), np.asarray(m.f), a[0] * m.L)
    from scipy.interpolate import CubicSpline

    N = m.N
    t = np.linspace(0.0, float(m.L), N + 1)
    arc = CubicSpline(t, a, bc_type="clamped").antiderivative()(t)
    arc[0] = 0.0
    if np.any(np.diff(arc) <= 0):
        raise ValueError("arc length is not increasing")
    s_new = np.linspace(0.0, arc[-1], N + 1)
    f_new = CubicSpline(arc, np.asarray(m.f, dtype=float), bc_type="not-a-knot")(s_new)
    f_new[0] = f_new[-1] = 0.0
    if np.any(f_new[1:-1] <= 0):
        raise ValueError("interpolation failure near the poles")
    return WarpedMetric(np.ones(N + 1), f_new, arc[-1])


def _relative_gradient(m):
    """Scale-free |E|^2 Vol / F^2."""
    g = Geometry(m)
    return float(g.norm_sq(assemble_grad_f(g)) * g.volume() / functionals.energy_f(g) ** 2)


def _not_increased(e_new, e_old):
    """e_new <= e_old up to the rounding of the long double energy, and never larger in double."""
    slack = 32 * np.finfo(np.longdouble).eps * abs(e_old)
    return e_new <= e_old + slack and float(e_new) <= float(e_old)


def step(state, cfg, energy=None):
    """One accepted step.  Returns the new state; its dt is the proposal for the next step."""
    m = state.metric
    dt = state.dt if state.dt is not None else cfg.dt_init
    dt = min(dt, cfg.dt_max)
    if energy is None:
        energy = functionals.flow_energy(m)
    for _ in range(cfg.max_halvings + 1):
        try:
            cand = advance(m, dt, cfg)
            e_new = functionals.flow_energy(cand)
        except (FloatingPointError, ValueError, np.linalg.LinAlgError):
            cand, e_new = None, None
        if cand is not None and _not_increased(e_new, energy):
            nxt = min(dt / cfg.safety, cfg.dt_max)
            return FlowState(cand, state.tau + dt, nxt), e_new
        dt /= 2
    if _relative_gradient(m) <= cfg.stationary_tol:
        # A discrete critical point: E is below the mismatch between E and the gradient of the
        # discrete energy, so no step can certify a decrease.  Time advances, the metric does not.
        dt0 = min(state.dt if state.dt is not None else cfg.dt_init, cfg.dt_max)
        return FlowState(m, state.tau + dt0, min(dt0 / cfg.safety, cfg.dt_max)), energy
    raise StepUnderflow(f"no decreasing step down to dt={dt * 2:.3g} at tau={state.tau:.6g}")


def diagnostics(m, energy=None):
    """One FlowTrace row plus the gradient norm."""
    g = Geometry(m)
    E, lap_r = grad_f_parts(g)
    grad2 = g.norm_sq(E)
    z2 = g.norm_sq(g.z)
    if energy is None:
        energy = functionals.flow_energy(m)
    try:
        ratio = functionals.coercivity_from_parts(g, grad2, g.norm_sq(lap_r), z2)
    except functionals.DegenerateMetric:
        ratio = float("nan")
    chi = functionals.gauss_bonnet_chi(g)
    row = (0.0, float(energy), float(z2), float(grad2), float(chi),
           float(np.min(g.s)), float(np.max(g.s)), float(ratio))
    return row, g


def run_flow(state, cfg, on_row=None):
    cfg.validate()
    trace = FlowTrace()
    if state.dt is None:
        state = replace(state, dt=cfg.dt_init)
    energy = functionals.flow_energy(state.metric)
    rm0 = None
    steps = 0
    while True:
        row, g = diagnostics(state.metric, energy)
        row = (state.tau,) + row[1:]
        trace.append(row)
        if on_row is not None:
            on_row(row)
        rm_sup = float(np.sqrt(np.max(g.rm_norm_sq)))
        rm0 = rm_sup if rm0 is None else rm0
        if np.sqrt(row[3]) <= cfg.stop_grad_norm:
            return FlowResult(trace, state, "converged")
        if state.tau >= cfg.stop_time:
            return FlowResult(trace, state, "stop-time")
        if rm_sup > cfg.blowup_factor * rm0:
            return FlowResult(trace, state, "singular", f"sup|Rm| grew to {rm_sup:.3g}")
        if steps >= cfg.max_steps:
            return FlowResult(trace, state, "max-steps", f"stopped after {steps} steps")
        try:
            state, energy = step(state, cfg, energy)
        except StepUnderflow as exc:
            return FlowResult(trace, state, "underflow", str(exc))
        steps += 1
