"""``diffincl`` command line: simulate, find-bounded, check, mollify-study, verify.

Exit codes: 0 ok, 1 configuration or input error, 2 solver failure,
3 no bounded solution found, 4 hypothesis check failed, 5 verification failed.
"""

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (SublevelSet, boundedness_report, check_boundary_hessian, check_inflow,
                       check_sublevel_domain, inclusion_residual)
from .bounded import c1_distance, find_bidirectional, find_forward_bounded, h2_seminorm
from .errors import (ConfigError, DegenerateBoundaryError, DiffInclError, ExprError, FieldError,
                     SolverError)
from .field import MollifierSpec
from .integrate import StepControl, Trajectory, integrate_filippov, integrate_mollified
from .models import check_pendulum_condition, model_from_config

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_NOT_FOUND, EXIT_CHECK, EXIT_VERIFY = range(6)

_TOP_KEYS = {"description", "model", "solver", "domain", "simulate", "find_bounded", "check",
             "mollify_study", "verify"}
_SECTION_KEYS = {
    "solver": {"method", "rtol", "atol", "max_step", "event_tol", "max_steps", "k", "l"},
    "domain": {"F", "c", "box", "grid"},
    "simulate": {"t0", "t1", "ic"},
    "find_bounded": {"T", "grid", "v_grid", "cauchy_tol", "forward_only"},
    "check": {"t_window", "n_samples", "n_rays", "variant"},
    "mollify_study": {"k", "T", "ic", "t0"},
    "verify": {"tol", "x_radius"},
}


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def builtin_scenarios():
    names = [p.name[:-5] for p in resources.files("diffincl").joinpath("scenarios").iterdir()
             if p.name.endswith(".json")]
    return sorted(names)


def load_config(ref):
    """Parse a config path or ``builtin:<name>`` and validate its keys."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        res = resources.files("diffincl").joinpath("scenarios", f"{name}.json")
        if not res.is_file():
            raise ConfigError(f"no built-in scenario {name!r}; available: {builtin_scenarios()}")
        text = res.read_text(encoding="utf-8")
    else:
        try:
            text = Path(ref).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {ref!r}: {exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {ref!r}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    if "model" not in cfg:
        raise ConfigError("config needs a 'model' section")
    for sec, allowed in _SECTION_KEYS.items():
        part = cfg.get(sec, {})
        if not isinstance(part, dict):
            raise ConfigError(f"section {sec!r} must be an object")
        bad = set(part) - allowed
        if bad:
            raise ConfigError(f"unknown key(s) in {sec}: {sorted(bad)}")
    return cfg


def step_control(cfg):
    s = cfg.get("solver", {})
    try:
        return StepControl(**{k: float(s[k]) for k in ("rtol", "atol", "max_step", "event_tol",
                                                          "max_steps") if k in s})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def domain_of(cfg, model):
    d = cfg.get("domain")
    m = model.field.dim
    if d:
        if "F" not in d or "c" not in d:
            raise ConfigError("domain needs 'F' and 'c'")
        box = d.get("box", [[-2.0, 2.0]] * m)
        return SublevelSet(d["F"], float(d["c"]), box, int(d.get("grid", 41)))
    if model.F is not None:
        r = max(4.0 * math.sqrt(max(model.c, 0.0)), 1.0)
        return SublevelSet(model.F, model.c, [[-r, r]] * m)
    return None


def _floats(text, what):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {what} {text!r}") from None


def _ic(values, m):
    vals = [float(v) for v in values]
    if len(vals) != 2 * m:
        raise ConfigError(f"initial condition needs {2 * m} values (x then v), got {len(vals)}")
    return np.array(vals[:m]), np.array(vals[m:])


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _g(v):
    return format(float(v), ".17g")


def write_csv(traj, path):
    m = traj.dim
    cols = (["t"] + [f"x{i + 1}" for i in range(m)] + [f"v{i + 1}" for i in range(m)]
            + [f"a{i + 1}" for i in range(m)] + ["mode"])
    lines = [",".join(cols)]
    for i in range(len(traj)):
        row = [_g(traj.t[i])] + [_g(v) for v in traj.x[i]] + [_g(v) for v in traj.v[i]]
        row += [_g(v) for v in traj.a[i]] + [traj.mode[i]]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    if not header or header[0] != "t" or header[-1] != "mode" or (len(header) - 2) % 3:
        raise ConfigError(f"{path}: not a trajectory CSV")
    m = (len(header) - 2) // 3
    try:
        num = np.array([[float(v) for v in r[:-1]] for r in rows])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if num.size == 0 or num.shape[1] != 1 + 3 * m:
        raise ConfigError(f"{path}: malformed rows")
    return Trajectory(num[:, 0], num[:, 1:1 + m], num[:, 1 + m:1 + 2 * m], num[:, 1 + 2 * m:],
                      [r[-1] for r in rows])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def dump_json(obj):
    return json.dumps(_clean({"v": 1, **obj}), indent=2, ensure_ascii=False) + "\n"


def _emit(text, out=None):
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _run(cfg, model, state0, t_end, method=None):
    s = cfg.get("solver", {})
    method = method or s.get("method", "filippov")
    ctrl = step_control(cfg)
    if method == "filippov":
        return integrate_filippov(model.field, state0, t_end, ctrl)
    if method == "mollified":
        return integrate_mollified(model.field, MollifierSpec(float(s.get("k", 32))), state0,
                                   t_end, ctrl)
    raise ConfigError(f"unknown method {method!r}")


def cmd_simulate(args):
    cfg = load_config(args.config)
    model = model_from_config(cfg["model"])
    sim = cfg.get("simulate", {})
    t0 = float(args.t0 if args.t0 is not None else sim.get("t0", 0.0))
    t1 = float(args.t1 if args.t1 is not None else sim.get("t1", 10.0))
    ic = _floats(args.ic, "--ic") if args.ic else sim.get("ic")
    if ic is None:
        raise ConfigError("no initial condition (--ic or simulate.ic)")
    x0, v0 = _ic(ic, model.field.dim)
    traj = _run(cfg, model, (t0, x0, v0), t1, args.method)
    if args.out:
        write_csv(traj, args.out)
    sup_x = float(np.abs(traj.x).max())
    print(f"t_end={_g(traj.t1)} sup|x|={_g(sup_x)} events={traj.n_events}")
    return EXIT_OK


def _traj_csv_path(out):
    p = Path(out)
    return p.with_name(p.stem + "_trajectory.csv")


def cmd_find_bounded(args):
    cfg = load_config(args.config)
    model = model_from_config(cfg["model"])
    D = domain_of(cfg, model)
    if D is None:
        raise ConfigError("find-bounded needs a domain section")
    fb = cfg.get("find_bounded", {})
    T_list = _floats(args.T, "--T") if args.T else [float(v) for v in fb.get("T", [5, 10, 20])]
    grid, v_grid = int(fb.get("grid", 17)), int(fb.get("v_grid", 17))
    ctrl = step_control(cfg)
    forward = args.forward_only or bool(fb.get("forward_only", False))
    if forward:
        rep = find_forward_bounded(model.field, D, T_list[-1], grid, v_grid, ctrl=ctrl,
                                   seed=args.seed)
    else:
        rep = find_bidirectional(model.field, D, T_list, grid=grid, v_grid=v_grid, ctrl=ctrl,
                                 cauchy_tol=float(fb.get("cauchy_tol", 1e-4)), seed=args.seed)
    body = {"command": "find-bounded", "mode": "forward" if forward else "bidirectional",
            "model": model.field.model_hash, "T_list": T_list}
    body.update(rep.to_json())
    if rep.trajectory is not None:
        body["sup_F"] = float(D.values(rep.trajectory.x).max())
    text = dump_json(body)
    _emit(text, args.out)
    if args.out and rep.trajectory is not None:
        write_csv(rep.trajectory, _traj_csv_path(args.out))
    return EXIT_OK if rep.found else EXIT_NOT_FOUND


def cmd_check(args):
    cfg = load_config(args.config)
    model = model_from_config(cfg["model"])
    D = domain_of(cfg, model)
    if D is None:
        raise ConfigError("check needs a domain section")
    ch = cfg.get("check", {})
    reports = [check_sublevel_domain(D).to_json()]
    try:
        reports.append(check_boundary_hessian(D, int(ch.get("n_rays", 64))).to_json())
        reports.append(check_inflow(model.field, D, tuple(ch.get("t_window", (0.0, 2 * math.pi))),
                                    int(ch.get("n_samples", 256)), int(ch.get("n_rays", 64)),
                                    variant=bool(ch.get("variant", False))).to_json())
    except DegenerateBoundaryError as exc:
        reports.append({"check": "boundary", "pass": False,
                        "witness": {"point": exc.point, "grad_norm": exc.grad_norm},
                        "assumed": [], "samples": 1, "tolerance": 1e-10})
    if model.kind == "pendulum":
        reports.append(check_pendulum_condition(model.params))
    ok = all(r["pass"] for r in reports)
    _emit(dump_json({"command": "check", "pass": ok, "reports": reports}), args.out)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_mollify_study(args):
    cfg = load_config(args.config)
    model = model_from_config(cfg["model"])
    ms = cfg.get("mollify_study", {})
    ks = _floats(args.k, "--k") if args.k else [float(v) for v in ms.get("k", [8, 16, 32, 64])]
    T = float(args.T if args.T is not None else ms.get("T", 5.0))
    t0 = float(ms.get("t0", 0.0))
    ic = ms.get("ic", cfg.get("simulate", {}).get("ic"))
    if ic is None:
        raise ConfigError("no initial condition (mollify_study.ic or simulate.ic)")
    x0, v0 = _ic(ic, model.field.dim)
    ctrl = step_control(cfg)
    ref = integrate_filippov(model.field, (t0, x0, v0), t0 + T, ctrl)
    lines = ["k,c1_distance,h2_seminorm"]
    for k in ks:
        traj = integrate_mollified(model.field, MollifierSpec(k), (t0, x0, v0), t0 + T, ctrl)
        d = c1_distance(traj, ref, (t0, t0 + T))
        h = h2_seminorm(traj, (t0, t0 + T))
        lines.append(f"{k:g},{_g(d)},{_g(h)}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_verify(args):
    cfg = load_config(args.config)
    model = model_from_config(cfg["model"])
    try:
        traj = read_csv(args.traj)
    except OSError as exc:
        raise ConfigError(f"cannot read trajectory {args.traj!r}: {exc}") from None
    ver = cfg.get("verify", {})
    tol = float(args.tol if args.tol is not None else ver.get("tol", 1e-6))
    r = float(args.x_radius if args.x_radius is not None else ver.get("x_radius", 0.0))
    res = inclusion_residual(traj, model.field, r)
    D = domain_of(cfg, model)
    bnd = boundedness_report(traj, D) if D is not None else None
    ok = res["max_residual"] <= tol and (bnd is None or bnd["contained"])
    _emit(dump_json({"command": "verify", "pass": ok, "tolerance": tol, "x_radius": r,
                     "residual": res, "boundedness": bnd}), args.out)
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="diffincl",
                                description="Filippov simulation and bounded-solution search "
                                            "for second-order differential inclusions.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized sampling (default 0)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="integrate one trajectory and write CSV")
    s.add_argument("config")
    s.add_argument("--t0", type=float)
    s.add_argument("--t1", type=float)
    s.add_argument("--ic", help="comma-separated x then v")
    s.add_argument("--method", choices=["filippov", "mollified"])
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("find-bounded", help="search for a bounded solution")
    s.add_argument("config")
    s.add_argument("--T", help="comma-separated increasing windows")
    s.add_argument("--forward-only", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_find_bounded)

    s = sub.add_parser("check", help="check domain, Hessian and inflow hypotheses")
    s.add_argument("config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("mollify-study", help="C1 distance of mollified solutions to the Filippov one")
    s.add_argument("config")
    s.add_argument("--k", help="comma-separated mollifier indices")
    s.add_argument("--T", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_mollify_study)

    s = sub.add_parser("verify", help="inclusion residual and containment of a trajectory CSV")
    s.add_argument("config")
    s.add_argument("--traj", required=True)
    s.add_argument("--x-radius", type=float)
    s.add_argument("--tol", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ExprError, FieldError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except DiffInclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
