"""Scenario runner: configuration, flow runs with artifacts, decay fits and identity suites."""

import json
import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import flow as fl
from . import functionals as fn
from . import warped as wp

OUTPUT_ROOT_ENV = "L2FLOW_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ABORT = 2


class ConfigError(ValueError):
    pass


_FLOW_FIELDS = [f.name for f in fields(fl.FlowConfig)]


@dataclass
class ScenarioConfig:
    grid_n: int = 96
    perturb_mode: int = 2
    perturb_amplitude: float = 0.05
    stepper: str = "imex"
    dt_init: float = 1e-4
    dt_max: float = 0.05
    safety: float = 0.8
    gauge_policy: str = "lapse-one"
    stop_time: float = 10.0
    stop_grad_norm: float = 1e-6
    theta: float = 2.0
    max_halvings: int = 40
    max_steps: int = 20000
    blowup_factor: float = 1e4
    stationary_tol: float = 1e-14
    outputs: str = ""
    seed: int = 0
    restart: str = ""

    def flow_config(self):
        return fl.FlowConfig(**{k: getattr(self, k) for k in _FLOW_FIELDS})

    def validate(self):
        if self.grid_n < wp.MIN_NODES or self.grid_n % 2:
            raise ConfigError(f"grid_n must be even and at least {wp.MIN_NODES}, got {self.grid_n}")
        if self.perturb_mode < 0:
            raise ConfigError(f"perturb_mode must be non-negative, got {self.perturb_mode}")
        if not abs(self.perturb_amplitude) < 0.5:
            raise ConfigError(f"|perturb_amplitude| must be below 0.5, got {self.perturb_amplitude}")
        try:
            self.flow_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self


def parse_config(text, source="<config>"):
    """Flat key = value lines; '#' starts a comment; keys are ScenarioConfig field names."""
    types = {f.name: f.type for f in fields(ScenarioConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, val = (x.strip() for x in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        conv = {"int": int, "float": float, "str": str}[types[key] if isinstance(types[key], str)
                                                       else types[key].__name__]
        try:
            values[key] = conv(val)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: {key} expects {conv.__name__}, got {val!r}") from None
    return ScenarioConfig(**values).validate()


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or ".")


def resolve_outputs(cfg, default_name="run"):
    out = Path(cfg.outputs or default_name)
    return out if out.is_absolute() else output_root() / out


# decay fits

@dataclass
class DecayFit:
    eta: float
    r_squared: float
    window_start: float


def fit_decay_rate(trace, window_fraction=0.5, min_rows=20, min_window=10):
    """Least-squares fit of log z_l2sq against tau over the final window_fraction of rows."""
    if isinstance(trace, fl.FlowTrace):
        tau, z = trace.column("tau"), trace.column("z_l2sq")
    else:
        tau, z = (np.asarray(x, dtype=float) for x in trace)
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must lie in (0, 1]")
    n = len(tau)
    if n < min_rows:
        raise ValueError(f"need at least {min_rows} trace rows, got {n}")
    k = max(min_window, int(math.ceil(window_fraction * n)))
    if k > n:
        raise ValueError(f"window of {k} rows exceeds trace length {n}")
    tw, zw = tau[-k:], z[-k:]
    if np.any(~(zw > 0)):
        raise ValueError("non-positive z_l2sq in the fit window")
    y = np.log(zw)
    slope, icpt = np.polyfit(tw, y, 1)
    resid = y - (slope * tw + icpt)
    sst = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / sst if sst > 0 else 1.0
    return DecayFit(float(-slope), float(min(max(r2, 0.0), 1.0)), float(tw[0]))


# runs

@dataclass
class RunOutcome:
    exit_code: int
    status: str
    outputs: Path
    message: str = ""


def initial_metric(cfg):
    if cfg.restart:
        m, tau, dt = wp.read_snapshot(cfg.restart)
        return m.validate(), tau, dt
    m = wp.round_metric(cfg.grid_n)
    return wp.perturb_metric(m, cfg.perturb_mode, cfg.perturb_amplitude), 0.0, None


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n")


def run_scenario(cfg, outputs=None, log=None):
    """Build, perturb and flow; writes trace.csv, summary.json, initial.snap and final.snap."""
    out = Path(outputs) if outputs is not None else resolve_outputs(cfg)
    if (out / "trace.csv").exists() or (out / "summary.json").exists():
        raise ConfigError(f"artifact directory {out} already holds a run; choose a fresh one")
    try:
        m0, tau0, dt0 = initial_metric(cfg)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"initial metric: {exc}") from None
    out.mkdir(parents=True, exist_ok=True)
    wp.write_snapshot(out / "initial.snap", m0, tau0, dt0)

    fcfg = cfg.flow_config()
    state = fl.FlowState(m0, tau0, dt0)
    try:
        res = fl.run_flow(state, fcfg)
    except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        res = fl.FlowResult(fl.FlowTrace(), state, "singular", f"flow failed: {exc}")
    trace, final = res.trace, res.state
    trace.to_csv(out / "trace.csv")
    wp.write_snapshot(out / "final.snap", final.metric, final.tau, final.dt)

    code = EXIT_OK if res.ok else EXIT_ABORT
    try:
        fit = asdict(fit_decay_rate(trace))
    except ValueError:
        fit = None
    try:
        report = fn.functional_report(final.metric, seed=cfg.seed)
    except (FloatingPointError, ValueError) as exc:
        report = {"error": str(exc)}
    summary = {
        "status": res.status,
        "exit_code": code,
        "message": res.message,
        "steps": max(len(trace) - 1, 0),
        "tau": float(final.tau),
        "grid_n": final.metric.N,
        "initial": {"F": trace.rows[0][1], "z_l2sq": trace.rows[0][2]} if len(trace) else None,
        "decay_fit": fit,
        **report,
    }
    write_json(out / "summary.json", summary)
    if log is not None:
        log(f"{res.status}: {len(trace)} rows, tau={float(final.tau):.6g}, artifacts in {out}")
    return RunOutcome(code, res.status, out, res.message)


# identity suite

TOLERANCE_VERSION = "v1"
REFERENCE_N = 96
MIN_ORDER = 1.9
# Below this N the measured orders are pre-asymptotic and only the scaled tolerances apply.
ORDER_CHECK_MIN_N = 64

# (tau0 at N = 96, kind).  "order" checks have truncation error: tolerance tau0 (96/N)^2 and a
# refinement order of at least MIN_ORDER.  "roundoff" checks vanish identically in the
# discretization; their budget grows like the N^4 amplification of fourth-order stencils.
# tau0 is about twice the value measured at bring-up.
TOLERANCES = {
    "round_scalar": (1.1e-3, "order"),
    "round_volume": (1e-6, "order"),  # fourth order: sized so the h^2 schedule covers N = 16
    "laplacian_eigenfunction": (1.3e-3, "order"),
    "hessian_eigenfunction": (3.2e-4, "order"),
    "round_gradient": (5e-8, "roundoff"),
    "rough_laplacian_trace": (5e-11, "roundoff"),
    "trace_identity": (3.6e-3, "order"),
    "divergence_identity": (2.6, "order"),
    "gradient_oracle": (15.0, "order"),
    "gauss_bonnet": (1.5e-4, "order"),
    "sigma2_conformal": (5e-4, "order"),
}


def check_tolerance(name, N):
    tau0, kind = TOLERANCES[name]
    if kind == "roundoff":
        return tau0 * max(1.0, (N / REFERENCE_N) ** 4)
    return tau0 * (REFERENCE_N / N) ** 2


def identity_test_metric(N, mode=2, amplitude=0.05):
    """Perturbed round metric with both a non-constant lapse and a warp perturbation."""
    m = wp.round_metric(N)
    amp = amplitude if amplitude else 0.05
    a = 1 + amp * wp.bump(N, mode + 1)
    f = np.asarray(m.f) * (1 + amp * wp.bump(N, mode))
    return wp.enforce_pole_regularity(wp.WarpedMetric(a, f, m.L)).validate()


def random_direction(N, rng, modes=4):
    """Invariant symmetric 2-tensor with even components and rad = sph at the poles."""
    h_sph = np.zeros(N + 1)
    extra = np.zeros(N + 1)
    for j in range(modes):
        _, c = wp.node_trig(N, j)
        h_sph += rng.normal() / (1 + j) * c
        extra += rng.normal() / (1 + j) * c
    s, _ = wp.node_trig(N, 1)
    return wp.Sym2Field(h_sph + s * s * extra, h_sph)


def conformal_factor(N, rng, modes=4, amplitude=0.2):
    u = np.ones(N + 1)
    for j in range(1, modes + 1):
        _, c = wp.node_trig(N, j)
        u += amplitude * rng.normal() / j * c
    return np.exp(u - 1)


def gradient_oracle_errors(m, seed=0, directions=10, eps=1e-4):
    rng = np.random.default_rng(seed)
    g = wp.Geometry(m)
    E = fl.assemble_grad_f(g)
    out = []
    for _ in range(directions):
        h = random_direction(m.N, rng)
        out.append(abs(fl.directional_derivative_f(m, h, eps) - 2 * float(g.inner_product(E, h))))
    return np.array(out)


def _measure(name, N, cfg):
    if name in ("round_scalar", "round_volume", "laplacian_eigenfunction", "hessian_eigenfunction",
                "round_gradient"):
        m = wp.round_metric(N)
        g = wp.Geometry(m)
        _, c = wp.node_trig(N, 1)
        if name == "round_scalar":
            return np.abs(g.s - 12).max()
        if name == "round_volume":
            return abs(g.volume() / (8 * np.pi ** 2 / 3) - 1)
        if name == "laplacian_eigenfunction":
            return np.abs(wp.laplacian_scalar(g, c) + 4 * c).max()
        if name == "hessian_eigenfunction":
            H = wp.hessian_scalar(g, c)
            return max(np.abs(H.rad + c).max(), np.abs(H.sph + c).max())
        E = fl.assemble_grad_f(g)
        return max(np.abs(E.rad).max(), np.abs(E.sph).max())
    m = identity_test_metric(N, cfg.perturb_mode or 2, cfg.perturb_amplitude)
    g = wp.Geometry(m)
    if name == "rough_laplacian_trace":
        rng = np.random.default_rng(cfg.seed)
        T = random_direction(N, rng)
        return np.abs(g.rough_laplacian(T).trace() - g.laplacian(T.trace())).max()
    if name == "trace_identity":
        E = fl.assemble_grad_f(g)
        return np.abs(E.trace() + g.laplacian(g.s)).max()
    if name == "divergence_identity":
        return np.abs(g.divergence(fl.assemble_grad_f(g))).max()
    if name == "gradient_oracle":
        return gradient_oracle_errors(m, cfg.seed).max()
    if name == "gauss_bonnet":
        return abs(fn.gauss_bonnet_chi(g) - 2)
    if name == "sigma2_conformal":
        u = conformal_factor(N, np.random.default_rng(cfg.seed))
        return abs(fn.sigma2(fn.conformal_metric(m, u)) - fn.sigma2(g))
    raise KeyError(name)


@dataclass
class CheckResult:
    name: str
    n: int
    value: float
    value_fine: float
    order: float
    tolerance: float
    passed: bool


def identity_suite(cfg, log=None):
    """Runs every identity check at N and 2N; returns (results, exit code)."""
    N = cfg.grid_n
    results = []
    for name, (_, kind) in TOLERANCES.items():
        v1 = float(_measure(name, N, cfg))
        v2 = float(_measure(name, 2 * N, cfg))
        order = math.log2(v1 / v2) if v1 > 0 and v2 > 0 else float("inf")
        tol = check_tolerance(name, N)
        ok = v1 <= tol and v2 <= check_tolerance(name, 2 * N)
        if kind == "order" and N >= ORDER_CHECK_MIN_N:
            ok = ok and order >= MIN_ORDER
        results.append(CheckResult(name, N, v1, v2, order, tol, bool(ok)))
    if log is not None:
        log(format_suite(results))
    failed = [r.name for r in results if not r.passed]
    if failed and log is not None:
        log("failed: " + ", ".join(failed))
    return results, (EXIT_OK if not failed else EXIT_CONFIG)


def format_suite(results):
    lines = [f"{'check':<26} {'N':>5} {'err(N)':>11} {'err(2N)':>11} {'order':>6} {'tol':>10}  result"]
    for r in results:
        lines.append(f"{r.name:<26} {r.n:>5} {r.value:>11.3e} {r.value_fine:>11.3e} {r.order:>6.2f} "
                     f"{r.tolerance:>10.2e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


def gradient_check(cfg, directions=10, log=None):
    """Oracle errors at N and 2N per direction and their ratios; exit 0 iff every ratio >= 3.5."""
    N = cfg.grid_n
    e1 = gradient_oracle_errors(identity_test_metric(N, cfg.perturb_mode or 2, cfg.perturb_amplitude),
                                cfg.seed, directions)
    e2 = gradient_oracle_errors(identity_test_metric(2 * N, cfg.perturb_mode or 2, cfg.perturb_amplitude),
                                cfg.seed, directions)
    ratios = e1 / e2
    if log is not None:
        log(f"{'dir':>3} {'err(N)':>11} {'err(2N)':>11} {'ratio':>7}")
        for i, (a, b, r) in enumerate(zip(e1, e2, ratios)):
            log(f"{i:>3} {a:>11.3e} {b:>11.3e} {r:>7.2f}")
    return ratios, (EXIT_OK if np.all(ratios >= 3.5) else EXIT_CONFIG)
