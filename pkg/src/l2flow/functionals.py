"""Integral functionals of warped metrics on S^4.

Quantities computed here, for g = a^2 dt^2 + f^2 g_S3:
  * F, |z|^2 and |W|^2 in L2; W vanishes identically for these metrics;
  * the Gauss-Bonnet characteristic (1/8pi^2) int (s^2/24 + |W|^2 - |z|^2/2);
  * a Yamabe quotient estimate;
  * the coercivity ratio and the Sobolev-type checks used as diagnostics.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .warped import Geometry, WarpedMetric, _d1, _half_values, compute_geometry, node_trig, omega3

DEGENERATE_TOL = 1e-14
SOBOLEV_BOUND = 768 * math.pi ** 2
ROUND_YAMABE = 8 * math.sqrt(6) * math.pi


class DegenerateMetric(ValueError):
    """The coercivity ratio is undefined: the metric is round to machine precision."""


def energy_f(m):
    return compute_geometry(m).integrate(compute_geometry(m).rm_norm_sq)


def z_norm_sq(m):
    g = compute_geometry(m)
    return g.norm_sq(g.z)


def weyl_norm_sq(m):
    """Every metric of this form is locally conformally flat."""
    compute_geometry(m)
    return 0.0


def sigma2(m):
    """(1/8pi^2) int (s^2/24 - |z|^2/2); with W = 0 this is the Gauss-Bonnet integrand."""
    g = compute_geometry(m)
    return g.integrate(g.s ** 2 / 24 - g.z.density() / 2) / (8 * np.pi ** 2)


def gauss_bonnet_chi(m):
    return sigma2(m) + weyl_norm_sq(m) / (8 * np.pi ** 2)


def concircular_norm_sq(m):
    """int |Rm - (s/24) g o g|^2 = int (|W|^2 + 2|z|^2)."""
    return weyl_norm_sq(m) + 2 * z_norm_sq(m)


def _coarsen(m, stride):
    return WarpedMetric(np.asarray(m.a)[::stride], np.asarray(m.f)[::stride], m.L)


def flow_energy(m):
    """F extrapolated from the nested grids N, N/2, N/4 in long double.

    The quadrature energy carries an O(h^2) error whose discrete gradient is
    not exactly E.  Near a critical point that mismatch stops plain energy
    decrease from certifying steps; removing the h^2 and h^4 terms pushes the
    mismatch below the flow's own decrease.
    """
    ml = m.astype(np.longdouble)
    N = m.N

    def F(stride):
        return energy_f(_coarsen(ml, stride))

    if N % 4 == 0 and N // 4 >= 8:
        f1, f2, f4 = F(1), F(2), F(4)
        r_fine = (4 * f1 - f2) / 3
        r_coarse = (4 * f2 - f4) / 3
        return (16 * r_fine - r_coarse) / 15
    if N % 2 == 0 and N // 2 >= 8:
        return (4 * F(1) - F(2)) / 3
    return F(1)


def conformal_metric(m, u):
    """The metric u^2 g for an even positive function u sampled on the nodes."""
    u = np.asarray(u)
    if np.any(u <= 0):
        raise ValueError("conformal factor must be positive")
    return WarpedMetric(np.asarray(m.a) * u, np.asarray(m.f) * u, m.L)


# Yamabe quotient

class _YamabeForm:
    """Discrete Q(u) = (6 int |du|^2 + int s u^2) / (int u^4)^(1/2).

    The gradient energy uses one-sided differences on half cells.  Central
    differences would leave the grid-scale oscillation with zero gradient
    energy and the minimizer would exploit it.
    """

    def __init__(self, m):
        g = compute_geometry(m)
        f_half = _half_values(np.asarray(g.f), odd=True)
        self.stiff = omega3(float) * float(g.h) * f_half ** 3 / g.ah / float(g.h) ** 2
        self.stiff = np.asarray(self.stiff, dtype=float)
        self.w = np.asarray(g.weights, dtype=float)
        self.s = np.asarray(g.s, dtype=float)

    def parts(self, u):
        du = np.diff(u)
        grad = np.sum(self.stiff * du ** 2)
        return grad, np.sum(self.w * self.s * u * u), np.sum(self.w * u ** 4)

    def value(self, u):
        grad, pot, quart = self.parts(u)
        return (6 * grad + pot) / np.sqrt(quart)

    def value_and_grad(self, u):
        du = np.diff(u)
        grad, pot, quart = self.parts(u)
        num = 6 * grad + pot
        root = np.sqrt(quart)
        dnum = 2 * self.w * self.s * u
        flux = 12 * self.stiff * du
        dnum[:-1] -= flux
        dnum[1:] += flux
        dquart = 4 * self.w * u ** 3
        return num / root, dnum / root - num * dquart / (2 * root * quart)


def yamabe_quotient(m, u):
    return float(_YamabeForm(m).value(np.asarray(u, dtype=float)))


@dataclass
class YamabeEstimate:
    value: float
    converged: bool
    minimizer: np.ndarray = field(repr=False)


def _smooth_start(N, rng, modes=4, amplitude=0.3):
    u = np.ones(N + 1)
    for j in range(1, modes + 1):
        _, c = node_trig(N, j)
        u += amplitude * rng.normal() / j * c
    return np.clip(u, 0.2, None)


def estimate_yamabe(m, restarts=5, seed=0, maxiter=2000, agree_tol=1e-5):
    """Minimize the discrete quotient from u = 1 and from seeded random smooth starts.

    Near conformally round metrics the quotient is almost flat along the conformal
    group, so some starts creep along it until the iteration cap.  The estimate
    counts as converged when a run that met the gradient tolerance reached the
    best value to within agree_tol.
    """
    form = _YamabeForm(m)
    rng = np.random.default_rng(seed)
    starts = [np.ones(m.N + 1)] + [_smooth_start(m.N, rng) for _ in range(restarts)]
    runs = [minimize(form.value_and_grad, u0, jac=True, method="L-BFGS-B",
                     options={"maxiter": maxiter, "gtol": 1e-10, "ftol": 1e-14})
            for u0 in starts]
    best = min(runs, key=lambda r: r.fun)
    converged = any(r.success and r.fun <= best.fun + agree_tol * abs(best.fun) for r in runs)
    u = best.x / np.sqrt(np.sum(form.w * best.x ** 4)) ** 0.5
    return YamabeEstimate(float(best.fun), bool(converged), u)


# Sobolev-type diagnostics

@dataclass
class SobolevCheck:
    holds: bool
    concircular_l2sq: float
    chi: float
    eps: float
    yamabe: float
    bound: float
    empirical_constant: float

    @property
    def consistent(self):
        """The empirical constant never exceeds the claimed bound (only meaningful if holds)."""
        return (not self.holds) or self.empirical_constant <= self.bound


def sobolev_quotient(m, u):
    """||u||_4^2 / (||du||_2^2 + V^-1/2 ||u||_2^2)."""
    g = compute_geometry(m)
    form = _YamabeForm(g)
    grad, _, quart = form.parts(np.asarray(u, dtype=float))
    l2 = float(np.sum(form.w * u * u))
    vol = float(g.volume())
    return float(np.sqrt(quart) / (grad + l2 / np.sqrt(vol)))


def sobolev_hypothesis_check(m, eps=1 / 196, samples=50, seed=0, yamabe=None):
    """Test int |Rm - (s/24) g o g|^2 <= eps chi and Y > 0, then probe the Sobolev constant.

    The probe is a lower bound for the best constant: the largest Sobolev quotient
    over u = 1 and seeded random smooth functions.
    """
    conc = float(concircular_norm_sq(m))
    chi = float(gauss_bonnet_chi(m))
    if yamabe is None:
        yamabe = estimate_yamabe(m).value
    holds = bool(conc <= eps * chi and yamabe > 0)
    rng = np.random.default_rng(seed)
    probes = [np.ones(m.N + 1)] + [_smooth_start(m.N, rng, modes=6, amplitude=0.8)
                                   for _ in range(samples - 1)]
    emp = max(sobolev_quotient(m, u) for u in probes)
    return SobolevCheck(holds, conc, chi, eps, float(yamabe), SOBOLEV_BOUND, emp)


def coercivity_terms(m):
    """The four L2 quantities that enter the coercivity ratio."""
    from .flow import grad_f_parts

    g = compute_geometry(m)
    E, lap_r = grad_f_parts(g)
    return {
        "grad_l2sq": float(g.norm_sq(E)),
        "lap_ricci_l2sq": float(g.norm_sq(lap_r)),
        "z_l2sq": float(g.norm_sq(g.z)),
        "grad_z_l2sq": float(g.integrate(g.gradient_norm_sq(g.z))),
    }


def coercivity_from_parts(g, grad2, lap2, z2):
    if z2 <= DEGENERATE_TOL * float(np.max(g.rm_norm_sq) * g.volume()):
        raise DegenerateMetric("z vanishes to machine precision: metric is round")
    dz2 = g.integrate(g.gradient_norm_sq(g.z))
    den = float(lap2 + z2 + dz2)
    if den <= DEGENERATE_TOL:
        raise DegenerateMetric(f"denominator {den:.3g} is degenerate")
    return float(grad2) / den


def coercivity_ratio(m):
    """|E|^2 / (|Delta r|^2 + |z|^2 + |nabla z|^2)."""
    t = coercivity_terms(m)
    return coercivity_from_parts(compute_geometry(m), t["grad_l2sq"], t["lap_ricci_l2sq"], t["z_l2sq"])


def sobolev_alpha(m_exp, p):
    """alpha with 1/alpha = (1/4 - 1/p) m + 1, for p > 4 (p = inf allowed)."""
    if not p > 4:
        raise ValueError(f"need p > 4, got {p}")
    if m_exp < 0:
        raise ValueError(f"need m >= 0, got {m_exp}")
    inv_p = 0.0 if math.isinf(p) else 1.0 / p
    return 1.0 / ((0.25 - inv_p) * m_exp + 1.0)


@dataclass
class MultSobolevRecord:
    lhs: float
    rhs_factor: float
    alpha: float

    @property
    def ratio(self):
        return self.lhs / self.rhs_factor


def _lp_norm(g, u, p):
    u = np.abs(np.asarray(u, dtype=float))
    if math.isinf(p):
        return float(u.max())
    return float(g.integrate(u ** p)) ** (1.0 / p)


def mult_sobolev_check(m, u, m_exp, p, volume_tol=1e-8):
    """sup|u| against ||u||_m^(1-alpha) (||du||_p + ||u||_p)^alpha on a unit-volume metric."""
    g = Geometry(m)
    vol = float(g.volume())
    if abs(vol - 1) > volume_tol:
        raise ValueError(f"metric must have unit volume, got {vol:.12g}")
    alpha = sobolev_alpha(m_exp, p)
    u = np.asarray(u, dtype=float)
    du = np.abs(_d1(u, float(g.h)) / np.asarray(g.a, dtype=float))
    lower = _lp_norm(g, u, m_exp) if m_exp > 0 else 1.0
    rhs = lower ** (1 - alpha) * (_lp_norm(g, du, p) + _lp_norm(g, u, p)) ** alpha
    return MultSobolevRecord(float(np.abs(u).max()), float(rhs), alpha)


REPORT_KEYS = ("F", "chi", "sigma2", "z_l2sq", "weyl_l2sq", "yamabe", "sobolev_hypothesis",
               "coercivity_ratio")


def functional_report(m, eps=1 / 196, seed=0):
    g = Geometry(m)
    y = estimate_yamabe(m, seed=seed)
    sob = sobolev_hypothesis_check(g, eps=eps, seed=seed, yamabe=y.value)
    try:
        ratio = coercivity_ratio(g)
    except DegenerateMetric:
        ratio = None
    return {
        "F": float(energy_f(g)),
        "chi": float(gauss_bonnet_chi(g)),
        "sigma2": float(sigma2(g)),
        "z_l2sq": float(z_norm_sq(g)),
        "weyl_l2sq": float(weyl_norm_sq(g)),
        "yamabe": {"value": y.value, "converged": y.converged},
        "sobolev_hypothesis": {
            "holds": sob.holds,
            "eps": eps,
            "concircular_l2sq": sob.concircular_l2sq,
            "bound": sob.bound,
            "empirical_constant": sob.empirical_constant,
        },
        "coercivity_ratio": ratio,
    }
