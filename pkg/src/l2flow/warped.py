"""Cohomogeneity-one metrics a(t)^2 dt^2 + f(t)^2 g_S3 on the four-sphere.

The metric lives on a uniform grid t_k = k L / N, k = 0..N, with the poles at
the two ends.  Fields are stored by frame component: a scalar is one value per
node and an SO(4)-invariant symmetric 2-tensor is a pair (rad, sph) holding
T(e_0, e_0) and T(e_i, e_i), e_0 = a^-1 d/dt.

Pole handling:
  * ghost nodes by parity reflection (f odd, a and scalars even);
  * operators are evaluated at interior nodes and their pole values are filled
    by even extrapolation;
  * the discrete pole slope f'/a is corrected by a smooth blend so that
    1 - (f'/a)^2 does not lose its leading order to the O(dt^2) error of the
    central difference next to the pole.

All routines are dtype generic: feeding long double arrays gives long double
results, which the flow uses for step acceptance.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

MIN_NODES = 16


def pi_of(dtype):
    dtype = np.dtype(dtype)
    return dtype.type(4) * np.arctan(dtype.type(1))


def omega3(dtype=float):
    """Volume of the unit three-sphere, 2 pi^2."""
    return 2 * pi_of(dtype) ** 2


def node_trig(N, mode=1, dtype=float):
    """sin and cos of mode*pi*k/N, k = 0..N, sampled symmetrically.

    Reducing the angle by index arithmetic keeps the samples exactly
    symmetric about both ends, which the fourth-order operators need: the
    rounding asymmetry of sin(linspace) near pi would otherwise be amplified
    by dt^-4.
    """
    dtype = np.dtype(dtype)
    k = np.arange(N + 1)
    j = (mode * k) % (2 * N)
    j = np.where(j > N, j - 2 * N, j)
    m = np.minimum(np.abs(j), N - np.abs(j))
    th = pi_of(dtype) * m.astype(dtype) / dtype.type(N)
    s = np.sin(th) * np.sign(j)
    c = np.where(np.abs(j) <= N - np.abs(j), np.cos(th), -np.cos(th))
    return s.astype(dtype), c.astype(dtype)


@dataclass(frozen=True)
class WarpedMetric:
    a: np.ndarray
    f: np.ndarray
    L: float

    @property
    def N(self):
        return len(self.a) - 1

    @property
    def h(self):
        return self.L / self.N

    @property
    def t(self):
        return np.linspace(0.0, self.L, self.N + 1)

    def scaled(self, lam):
        """The metric lam^2 g."""
        return WarpedMetric(self.a, lam * self.f, lam * self.L)

    def astype(self, dtype):
        return WarpedMetric(np.asarray(self.a, dtype=dtype), np.asarray(self.f, dtype=dtype),
                            np.dtype(dtype).type(self.L))

    def validate(self):
        a = np.asarray(self.a)
        f = np.asarray(self.f)
        if a.ndim != 1 or f.shape != a.shape:
            raise ValueError("a and f must be 1-d arrays of equal length")
        if self.N < 4 or self.N % 2:
            raise ValueError(f"node count N={self.N} must be even and at least 4")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(f)) and np.isfinite(self.L)):
            raise ValueError("metric has non-finite entries")
        if self.L <= 0:
            raise ValueError("interval length must be positive")
        if np.any(a <= 0):
            raise ValueError("lapse a must be positive")
        if f[0] != 0 or f[-1] != 0:
            raise ValueError("warp f must vanish at both poles")
        if np.any(f[1:-1] <= 0):
            raise ValueError("warp f must be positive away from the poles")
        v0, vL = pole_slopes(self)
        tol = 0.5 * (np.pi / self.N) ** 2
        if abs(v0 - 1) > tol or abs(vL + 1) > tol:
            raise ValueError(f"pole regularity violated: f'/a = {float(v0):.6g}, {float(vL):.6g}")
        return self


def _ext(u, g, odd):
    sgn = -1 if odd else 1
    return np.concatenate([sgn * u[g:0:-1], u, sgn * u[-2:-2 - g:-1]])


def _d1(u, h, odd=False):
    e = _ext(u, 1, odd)
    return (e[2:] - e[:-2]) / (2 * h)


def _d1_fourth(u, h, odd=False):
    e = _ext(u, 2, odd)
    return (-e[4:] + 8 * e[3:-1] - 8 * e[1:-3] + e[:-4]) / (12 * h)


def _half_values(u, odd=False):
    e = _ext(u, 2, odd)
    k = np.arange(len(u) - 1) + 2
    return (-e[k - 1] + 9 * e[k] + 9 * e[k + 1] - e[k + 2]) / 16


def _fill_poles(u):
    """Even extrapolation to both end nodes from the first three interior nodes."""
    u = u.copy()
    u[0] = (15 * u[1] - 6 * u[2] + u[3]) / 10
    u[-1] = (15 * u[-2] - 6 * u[-3] + u[-4]) / 10
    return u


def pole_slopes(m):
    """f'/a at both poles from the fourth-order odd-reflected difference."""
    v = _d1_fourth(np.asarray(m.f), m.h, odd=True) / np.asarray(m.a)
    return v[0], v[-1]


def pole_blend(N, dtype=float):
    """w0 = (1 + cos(pi t/L))/2 (1 at t=0, 0 at t=L) and wL = 1 - w0."""
    _, c = node_trig(N, 1, dtype)
    w0 = (1 + c) / 2
    return w0, 1 - w0


def enforce_pole_regularity(m):
    """Remove the cone angle at both poles.

    Adds multiples of (L/pi) sin(pi t/L) w0 and -(L/pi) sin(pi t/L) wL, which
    are odd at both poles and have unit slope at one pole and none at the
    other, so that the fourth-order pole slopes become exactly +1 and -1.
    """
    a = np.asarray(m.a)
    f = np.asarray(m.f).copy()
    N, h = m.N, m.h
    sn, _ = node_trig(N, 1, f.dtype)
    w0, wL = pole_blend(N, f.dtype)
    p0 = sn * w0 * (m.L / pi_of(f.dtype))
    pL = -sn * wL * (m.L / pi_of(f.dtype))
    s0 = _d1_fourth(p0, h, True)[0]
    sL = _d1_fourth(pL, h, True)[-1]
    for _ in range(2):
        v = _d1_fourth(f, h, True) / a
        f = f - (v[0] - 1) * a[0] / s0 * p0 - (v[-1] + 1) * a[-1] / sL * pL
    f[0] = 0
    f[-1] = 0
    return WarpedMetric(m.a, f, m.L)


def round_metric(N, radius=1.0, dtype=float):
    """Round sphere of the given radius: a = 1, f = radius sin(t/radius), L = radius pi."""
    if N < MIN_NODES:
        raise ValueError(f"N must be at least {MIN_NODES}, got {N}")
    if N % 2:
        raise ValueError(f"N must be even, got {N}")
    s, _ = node_trig(N, 1, dtype)
    dt = np.dtype(dtype).type
    return WarpedMetric(np.ones(N + 1, dtype=dtype), dt(radius) * s, dt(radius) * pi_of(dtype))


def bump(N, mode, dtype=float):
    """sin^2(pi t/L) cos(mode pi t/L): even at both poles and vanishing to second order."""
    s, _ = node_trig(N, 1, dtype)
    _, cm = node_trig(N, mode, dtype)
    return s * s * cm


def perturb_metric(m, mode, amplitude):
    """f <- f (1 + amplitude * b) with b = sin^2(pi t/L) cos(mode pi t/L)."""
    if abs(amplitude) >= 0.5:
        raise ValueError(f"|amplitude| must be below 0.5, got {amplitude}")
    if amplitude == 0:
        return m
    f = np.asarray(m.f) * (1 + amplitude * bump(m.N, mode, np.asarray(m.f).dtype))
    return WarpedMetric(m.a, f, m.L).validate()


@dataclass
class Sym2Field:
    """SO(4)-invariant symmetric 2-tensor field in frame components."""

    rad: np.ndarray
    sph: np.ndarray

    def trace(self):
        return self.rad + 3 * self.sph

    def density(self):
        """Pointwise |T|^2."""
        return self.rad ** 2 + 3 * self.sph ** 2

    def dot(self, other):
        return self.rad * other.rad + 3 * self.sph * other.sph

    def __add__(self, other):
        return Sym2Field(self.rad + other.rad, self.sph + other.sph)

    def __sub__(self, other):
        return Sym2Field(self.rad - other.rad, self.sph - other.sph)

    def __mul__(self, c):
        return Sym2Field(c * self.rad, c * self.sph)

    __rmul__ = __mul__

    @classmethod
    def scalar(cls, u):
        """u g."""
        return cls(u.copy(), u.copy())


class Geometry:
    """Curvature fields, quadrature and differential operators of one metric."""

    def __init__(self, m):
        a = np.asarray(m.a)
        f = np.asarray(m.f)
        dtype = np.result_type(a.dtype, f.dtype)
        a = a.astype(dtype)
        f = f.astype(dtype)
        N = len(a) - 1
        L = dtype.type(m.L)
        h = L / N
        self.metric = m
        self.a, self.f, self.L, self.h, self.N = a, f, L, h, N
        self.dtype = dtype
        self.ah = _half_values(a)
        self.w0, self.wL = pole_blend(N, dtype)
        inner = slice(1, N)
        self.inner = inner

        v = _d1(f, h, odd=True) / a
        self.v = v - (v[0] - 1) * self.w0 - (v[-1] + 1) * self.wL
        self.da = _d1(a, h)
        self.hf = np.zeros(N + 1, dtype=dtype)
        self.hf[inner] = self.v[inner] / f[inner]

        vh = (f[1:] - f[:-1]) / (h * self.ah)
        k_rad = np.zeros(N + 1, dtype=dtype)
        k_sph = np.zeros(N + 1, dtype=dtype)
        k_rad[inner] = -(vh[1:] - vh[:-1]) / h / (a[inner] * f[inner])
        k_sph[inner] = (1 - self.v[inner] ** 2) / f[inner] ** 2
        self.k_rad = _fill_poles(k_rad)
        self.k_sph = _fill_poles(k_sph)
        self.s = 6 * (self.k_rad + self.k_sph)
        self.phi = self.regularize_difference(self.k_sph - self.k_rad)
        # r = (3 K_rad, K_rad + 2 K_sph) rewritten through s and phi
        k = self.s / 12
        self.r = Sym2Field(3 * (k - self.phi / 2), 3 * k + self.phi / 2)
        self.z = Sym2Field(-1.5 * self.phi, 0.5 * self.phi)
        self.rm_norm_sq = 2 * self.z.density() + self.s ** 2 / 6

        self.volume_density = a * f ** 3 * omega3(dtype)
        w = np.full(N + 1, h, dtype=dtype)
        w[0] = w[-1] = h / 2
        self.weights = w * self.volume_density

    # pole regularity of invariant tensors: rad = sph at both poles

    def regularize_difference(self, c):
        c = _fill_poles(c)
        return c - c[0] * self.w0 - c[-1] * self.wL

    def sym2(self, rad, sph):
        """Assemble a tensor from interior values, making the trace even and rad = sph at the poles."""
        tr = _fill_poles(rad + 3 * sph)
        c = self.regularize_difference(rad - sph)
        return Sym2Field((tr + 3 * c) / 4, (tr - c) / 4)

    # quadrature

    def integrate(self, u):
        return np.sum(self.weights * u)

    def inner_product(self, T, S):
        return self.integrate(T.dot(S))

    def norm_sq(self, T):
        return self.integrate(T.density())

    def volume(self):
        return np.sum(self.weights)

    # differential operators

    def d1(self, u):
        return _d1(u, self.h)

    def laplacian(self, u):
        """(1/(a f^3)) (f^3 u'/a)' in expanded form."""
        e = _ext(u, 1, False)
        a = self.a
        d2 = (e[2:] - 2 * u + e[:-2]) / self.h ** 2
        d1 = _d1(u, self.h)
        out = (d2 - self.da / a * d1) / a ** 2 + 3 * self.hf * d1 / a
        return _fill_poles(out)

    def hessian(self, u):
        """rad = (1/a)(u'/a)', sph = f' u' / (a^2 f)."""
        N, h, a, inner = self.N, self.h, self.a, self.inner
        du = (u[1:] - u[:-1]) / (h * self.ah)
        rad = np.zeros(N + 1, dtype=self.dtype)
        rad[inner] = (du[1:] - du[:-1]) / h / a[inner]
        sph = self.hf * _d1(u, h) / a
        return self.sym2(rad, sph)

    def rough_laplacian(self, T):
        """Connection Laplacian of an invariant tensor T = B g + C e0*e0, C = rad - sph.

        (Delta T)_rad = Delta B + Delta C - 6 H^2 C and (Delta T)_sph = Delta B + 2 H^2 C,
        with H = f'/(a f) the mean curvature of the orbits divided by three.
        """
        c = T.rad - T.sph
        h2c = self.hf ** 2 * c
        lb = self.laplacian(T.sph)
        lc = self.laplacian(c)
        return self.sym2(lb + lc - 6 * h2c, lb + 2 * h2c)

    def divergence(self, T):
        """Radial frame component of div T; the orbit components vanish by symmetry."""
        return _d1(T.rad, self.h) / self.a + 3 * self.hf * (T.rad - T.sph)

    def gradient_norm_sq(self, T):
        """Pointwise |nabla T|^2 = (T_rad')^2/a^2 + 3 (T_sph')^2/a^2 + 6 H^2 (T_rad - T_sph)^2."""
        dr = _d1(T.rad, self.h) / self.a
        ds = _d1(T.sph, self.h) / self.a
        return dr ** 2 + 3 * ds ** 2 + 6 * self.hf ** 2 * (T.rad - T.sph) ** 2

    def scalar_gradient_sq(self, u):
        """|du|^2 = (u'/a)^2."""
        return (_d1(u, self.h) / self.a) ** 2


def compute_geometry(m):
    return m if isinstance(m, Geometry) else Geometry(m)


def check_even(u, L=np.pi):
    """Reject scalar fields with a first-order term at a pole."""
    u = np.asarray(u)
    N = len(u) - 1
    h = L / N
    scale = np.ptp(u) / L ** 2
    for e in (u[:3], u[::-1][:3]):
        c1 = (-3 * e[0] + 4 * e[1] - e[2]) / (2 * h)
        c2 = (e[0] - 2 * e[1] + e[2]) / (2 * h * h)
        if abs(c1) * h > 0.1 * h * h * (abs(c2) + scale) + 1e-12 * (1 + np.abs(u).max()):
            raise ValueError("parity violation: field is not even at a pole")


def check_pole_condition(T):
    scale = 1 + max(np.abs(T.rad).max(), np.abs(T.sph).max())
    if abs(T.rad[0] - T.sph[0]) > 1e-8 * scale or abs(T.rad[-1] - T.sph[-1]) > 1e-8 * scale:
        raise ValueError("parity violation: invariant tensor needs rad = sph at the poles")


def laplacian_scalar(m, u):
    g = compute_geometry(m)
    check_even(u, float(g.L))
    return g.laplacian(np.asarray(u, dtype=g.dtype))


def hessian_scalar(m, u):
    g = compute_geometry(m)
    check_even(u, float(g.L))
    return g.hessian(np.asarray(u, dtype=g.dtype))


def rough_laplacian_sym2(m, T):
    g = compute_geometry(m)
    check_pole_condition(T)
    return g.rough_laplacian(T)


def divergence_sym2(m, T):
    return compute_geometry(m).divergence(T)


def integrate(m, u):
    return compute_geometry(m).integrate(np.asarray(u))


# snapshots

def write_snapshot(path, m, tau, dt=None):
    """Plain-text snapshot: N, L, tau (and the pending step size) then rows t a f."""
    lines = [f"N={m.N}", f"L={float(m.L):.17g}", f"tau={float(tau):.17g}"]
    if dt is not None:
        lines.append(f"dt={float(dt):.17g}")
    t = np.linspace(0.0, float(m.L), m.N + 1)
    for tk, ak, fk in zip(t, np.asarray(m.a, dtype=float), np.asarray(m.f, dtype=float)):
        lines.append(f"{tk:.17g} {ak:.17g} {fk:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path):
    """Returns (metric, tau, dt); dt is None when the snapshot does not carry one."""
    header = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" in line:
            key, val = line.split("=", 1)
            header[key.strip()] = val.strip()
        else:
            rows.append([float(x) for x in line.split()])
    for key in ("N", "L", "tau"):
        if key not in header:
            raise ValueError(f"snapshot {path} is missing header {key}=")
    N = int(header["N"])
    data = np.array(rows, dtype=float)
    if data.shape != (N + 1, 3):
        raise ValueError(f"snapshot {path} has {data.shape[0]} rows, expected {N + 1}")
    m = WarpedMetric(data[:, 1].copy(), data[:, 2].copy(), float(header["L"]))
    dt = float(header["dt"]) if "dt" in header else None
    return m, float(header["tau"]), dt
