import argparse
import json
import sys
from pathlib import Path

from . import experiments as ex
from .flow import FlowTrace


def _load(path):
    return ex.load_config(path)


def cmd_run(args):
    cfg = _load(args.config)
    out = Path(args.outputs) if args.outputs else ex.resolve_outputs(cfg, Path(args.config).stem)
    outcome = ex.run_scenario(cfg, out, log=print)
    if outcome.message:
        print(outcome.message, file=sys.stderr)
    return outcome.exit_code


def cmd_check(args):
    cfg = _load(args.config)
    _, code = ex.identity_suite(cfg, log=print)
    return code


def cmd_gradcheck(args):
    cfg = _load(args.config)
    _, code = ex.gradient_check(cfg, directions=args.directions, log=print)
    return code


def cmd_fit(args):
    try:
        fit = ex.fit_decay_rate(FlowTrace.from_csv(args.trace), args.window)
    except (OSError, ValueError) as exc:
        print(f"fit: {exc}", file=sys.stderr)
        return ex.EXIT_CONFIG
    print(f"eta={fit.eta:.10g} r_squared={fit.r_squared:.10g} window_start={fit.window_start:.10g}")
    return ex.EXIT_OK


def cmd_report(args):
    d = Path(args.dir)
    try:
        summary = json.loads((d / "summary.json").read_text())
        trace = FlowTrace.from_csv(d / "trace.csv")
    except (OSError, ValueError) as exc:
        print(f"report: {exc}", file=sys.stderr)
        return ex.EXIT_CONFIG
    print(f"status      {summary['status']} (exit {summary['exit_code']})")
    print(f"steps       {summary['steps']}  tau={summary['tau']:.6g}  N={summary['grid_n']}")
    if len(trace):
        F = trace.column("F")
        z = trace.column("z_l2sq")
        print(f"F           {F[0]:.10g} -> {F[-1]:.10g}")
        print(f"z_l2sq      {z[0]:.4e} -> {z[-1]:.4e}")
    for key in ("chi", "sigma2", "coercivity_ratio"):
        if summary.get(key) is not None:
            print(f"{key:<11} {summary[key]:.10g}")
    if "yamabe" in summary:
        y = summary["yamabe"]
        print(f"yamabe      {y['value']:.10g} (converged={y['converged']})")
    if summary.get("decay_fit"):
        fit = summary["decay_fit"]
        print(f"decay       eta={fit['eta']:.6g} r_squared={fit['r_squared']:.6f}")
    return ex.EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="l2flow", description=(
        "Gradient flow of the L2 curvature energy on rotationally symmetric four-spheres. "
        f"Relative output directories are resolved against ${ex.OUTPUT_ROOT_ENV} (default: cwd)."))
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a flow scenario and write its artifacts")
    r.add_argument("config")
    r.add_argument("--outputs", help="artifact directory (overrides the config)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="identity and refinement-order suite at N and 2N")
    c.add_argument("config")
    c.set_defaults(func=cmd_check)

    g = sub.add_parser("gradcheck", help="finite-difference check of the gradient at N and 2N")
    g.add_argument("config")
    g.add_argument("--directions", type=int, default=10)
    g.set_defaults(func=cmd_gradcheck)

    f = sub.add_parser("fit", help="fit the exponential decay rate of z_l2sq in a trace")
    f.add_argument("trace")
    f.add_argument("--window", type=float, default=0.5)
    f.set_defaults(func=cmd_fit)

    rp = sub.add_parser("report", help="summarize a finished run directory")
    rp.add_argument("dir")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return ex.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
