"""Command-line front end.

    qngcost evolve   CONFIG   natural-gradient run, trace CSV + manifest
    qngcost allocate CONFIG   shot plan JSON + heat-map CSV at one point
    qngcost validate CONFIG   Monte-Carlo check of the predicted error
    qngcost scan     CONFIG   N_F / N_g against qubit count
    qngcost bounds   CONFIG   exact requirements next to closed-form bounds
    qngcost inspect  CONFIG   exact metric, gradient and variances as JSON

Configs are YAML; ``--set section.key=value`` overrides single keys.
"""

from __future__ import annotations

import argparse
import copy
import datetime as dt
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .allocation import MODES, PlanOverflow, optimal_plan, overhead_report, theorem1_bounds, uniform_plan
from .estimator import estimate_metric
from .evolution import EvolutionConfig, initial_theta, qubit_scan, run
from .pauli import grouping_factor, spc_of_hamiltonian
from .propagation import propagation_coefficients, regularized_inverse
from .shots import empirical_epsilon

OUT_ENV = "QNGCOST_OUT"
DEFAULT_OUT = "qngcost-out"
EXIT_CONFIG = 2
EXIT_CHECK = 1
# validation counts as in the small-error regime below this relative error
SMALL_ERROR_REL = 0.1
SMALL_ERROR_MIN_SHOTS = 30

_NUM = (int, float)
_OPT_LIST = (list, type(None))
_OPT_INT = (int, type(None))
# section -> key -> (accepted types, default)
SCHEMA: dict = {
    "system": {"n": (int, 4)},
    "ansatz": {"pattern": (str, "B1B2B2")},
    "hamiltonian": {"kind": (str, "chain"), "j": (_NUM, 1.0), "omega_seed": (_OPT_INT, None), "omega": (_OPT_LIST, None)},
    "solver": {
        "eta": (_NUM, 0.1),
        "lambda": (_NUM, 0.2),
        "max_iters": (int, 50),
        "fisher_protocol": (str, "pure_abc"),
        "grouping": (str, "per_term"),
        "f_F": (_NUM, 2.0),
    },
    "eps": {"mode": (str, "absolute"), "value": (_NUM, 0.01)},
    "init": {
        "mode": (str, "random"),
        "theta0": (_OPT_LIST, None),
        "scale": (_NUM, 0.1),
        "pre_steps": (int, 200),
        "pre_lr": (_NUM, 0.1),
    },
    "scan": {"n_list": (list, [4, 6, 8]), "instances": (int, 10), "target": (_NUM, 0.1), "max_iters": (int, 1000)},
    "validate": {"trials": (int, 10000), "mode": (str, "uniform")},
    "seed": (int, 0),
}


class ConfigError(ValueError):
    pass


def default_config() -> dict:
    out = {}
    for key, spec in SCHEMA.items():
        if isinstance(spec, dict):
            out[key] = {k: copy.deepcopy(v[1]) for k, v in spec.items()}
        else:
            out[key] = spec[1]
    return out


def _check_type(path: str, value, types, line: int | None):
    where = f" (line {line})" if line else ""
    numeric = float in (types if isinstance(types, tuple) else (types,))
    if numeric and isinstance(value, str):
        # YAML 1.1 reads exponents without a dot (1e-5) as strings
        try:
            value = float(value)
        except ValueError:
            pass
    if isinstance(value, bool) or not isinstance(value, types):
        names = "/".join(t.__name__ for t in (types if isinstance(types, tuple) else (types,)))
        raise ConfigError(f"key '{path}'{where}: expected {names}, got {value!r}")
    if isinstance(value, int) and types is not int and float in (types if isinstance(types, tuple) else ()):
        return float(value)
    return value


def _merge(cfg: dict, node: yaml.Node, data: dict) -> None:
    if not isinstance(data, dict) or not isinstance(node, yaml.MappingNode):
        raise ConfigError("config must be a mapping of sections")
    lines = {k.value: k.start_mark.line + 1 for k, _ in node.value}
    children = {k.value: v for k, v in node.value}
    for key, value in data.items():
        line = lines.get(key)
        if key not in SCHEMA:
            raise ConfigError(f"unknown key '{key}' (line {line})")
        spec = SCHEMA[key]
        if not isinstance(spec, dict):
            cfg[key] = _check_type(key, value, spec[0], line)
            continue
        if value is None:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"section '{key}' (line {line}) must be a mapping")
        sub_lines = {k.value: k.start_mark.line + 1 for k, _ in children[key].value}
        for sub, sub_value in value.items():
            if sub not in spec:
                raise ConfigError(f"unknown key '{key}.{sub}' (line {sub_lines.get(sub)})")
            cfg[key][sub] = _check_type(f"{key}.{sub}", sub_value, spec[sub][0], sub_lines.get(sub))


def parse_config(text: str) -> dict:
    """Defaults overlaid with the YAML document; raises ConfigError with the offending line or key."""
    cfg = default_config()
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{where}{getattr(exc, 'problem', None) or exc}") from None
    if data is not None:
        _merge(cfg, node, data)
    return cfg


def apply_override(cfg: dict, assignment: str) -> None:
    key, sep, raw = assignment.partition("=")
    if not sep:
        raise ConfigError(f"override '{assignment}' is not of the form key=value")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        raise ConfigError(f"override '{assignment}': cannot parse value") from None
    parts = key.strip().split(".")
    if len(parts) == 1 and parts[0] in SCHEMA and not isinstance(SCHEMA[parts[0]], dict):
        cfg[parts[0]] = _check_type(parts[0], value, SCHEMA[parts[0]][0], None)
        return
    if len(parts) != 2 or parts[0] not in SCHEMA or not isinstance(SCHEMA[parts[0]], dict) or parts[1] not in SCHEMA[parts[0]]:
        raise ConfigError(f"unknown key '{key}'")
    cfg[parts[0]][parts[1]] = _check_type(key, value, SCHEMA[parts[0]][parts[1]][0], None)


def load_config(path: str | None, overrides=()) -> dict:
    if path is None:
        cfg = default_config()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg = parse_config(text)
    for item in overrides:
        apply_override(cfg, item)
    return cfg


def evolution_config(cfg: dict) -> EvolutionConfig:
    s, h, init = cfg["solver"], cfg["hamiltonian"], cfg["init"]
    try:
        return EvolutionConfig(
            n=cfg["system"]["n"],
            pattern=cfg["ansatz"]["pattern"],
            hamiltonian=h["kind"],
            j=h["j"],
            omega=h["omega"],
            omega_seed=h["omega_seed"],
            eta=s["eta"],
            lam=s["lambda"],
            max_iters=s["max_iters"],
            fisher_protocol=s["fisher_protocol"],
            grouping=s["grouping"],
            f_F=s["f_F"],
            eps_mode=cfg["eps"]["mode"],
            eps_value=cfg["eps"]["value"],
            seed=cfg["seed"],
            init=init["mode"],
            theta0=init["theta0"],
            init_scale=init["scale"],
            pre_steps=init["pre_steps"],
            pre_lr=init["pre_lr"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


class Session:
    """Output directory plus the manifest that lists everything written to it."""

    def __init__(self, command: str, cfg: dict, out: str | None):
        self.command = command
        self.cfg = cfg
        self.out = Path(out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.started = _now()
        self.extra: dict = {}

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        self.outputs.append(str(path))
        return path

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def finish(self) -> dict:
        path = self.out / "manifest.json"
        manifest = {
            "tool": "qngcost",
            "version": __version__,
            "command": self.command,
            "config": self.cfg,
            "seed": self.cfg["seed"],
            "started": self.started,
            "finished": _now(),
            "outputs": self.outputs + [str(path)],
            **self.extra,
        }
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _theta(args, ec: EvolutionConfig, c, h) -> np.ndarray:
    if getattr(args, "theta", None):
        raw = args.theta
        text = Path(raw).read_text() if Path(raw).is_file() else raw
        try:
            values = yaml.safe_load(text)
        except yaml.YAMLError:
            raise ConfigError("theta must be a list of numbers or a file holding one") from None
        theta = np.asarray(values, dtype=float).ravel()
        if theta.shape != (c.parameter_count,):
            raise ConfigError(f"theta has {theta.size} entries, circuit has {c.parameter_count} parameters")
        return theta
    return initial_theta(ec, c, h)


def _point(args, cfg):
    ec = evolution_config(cfg)
    c = ec.circuit()
    h = ec.build_hamiltonian()
    theta = _theta(args, ec, c, h)
    m = estimate_metric(c, theta, h, ec.fisher_protocol, workers=args.workers)
    inv = regularized_inverse(m.fisher, ec.eta)
    return ec, c, h, theta, m, inv


def _eps(args, ec: EvolutionConfig, v, g) -> tuple[float, float]:
    if getattr(args, "eps", None) is not None:
        if not args.eps > 0:
            raise ConfigError(f"eps must be positive, got {args.eps}")
        return args.eps, args.eps
    if ec.eps_mode == "absolute":
        return ec.eps_value, ec.eps_value
    return ec.eps_value * float(np.linalg.norm(v)), ec.eps_value * float(np.linalg.norm(g))


def _plan(mode, m, inv, coeffs, eps):
    try:
        if mode == "uniform":
            return uniform_plan(m, inv, eps, coeffs)
        return optimal_plan(coeffs, m.var_fisher, m.var_grad, eps, symmetric=mode == "optimal_symmetric")
    except PlanOverflow as exc:
        raise ConfigError(str(exc)) from None


def cmd_evolve(args, cfg) -> int:
    ec = evolution_config(cfg)
    session = Session("evolve", cfg, args.out)
    trace = run(ec, workers=args.workers)
    session.write("trace.csv", trace.to_csv())
    session.write("checks.csv", trace.checks_csv())
    session.extra = {"diverged": trace.diverged, "violations": trace.violations, "ground_energy": trace.ground_energy}
    session.finish()
    if trace.diverged:
        print("warning: energy rose for 20 consecutive steps (divergence flagged)", file=sys.stderr)
    return 0


def cmd_allocate(args, cfg) -> int:
    if args.eps is not None and not args.eps > 0:
        raise ConfigError(f"eps must be positive, got {args.eps}")
    ec, c, h, theta, m, inv = _point(args, cfg)
    coeffs = propagation_coefficients(inv, m.grad)
    eps, _ = _eps(args, ec, coeffs.v, m.grad)
    plan = _plan(args.mode, m, inv, coeffs, eps)
    session = Session("allocate", cfg, args.out)
    session.write_json("plan.json", {**plan.to_json(), "theta": theta.tolist()})
    session.write("heatmap.csv", plan.heatmap_csv())
    session.finish()
    print(json.dumps({"mode": plan.mode, "total": plan.total, "predicted_eps2": plan.predicted_eps2}))
    return 0


def validation_report(m, inv, plan, trials: int, seed: int, workers: int = 1) -> dict:
    coeffs = propagation_coefficients(inv, m.grad)
    est = empirical_epsilon(m, plan, inv.eta, trials=trials, seed=seed, workers=workers)
    pred = plan.predicted_eps2
    v_norm = float(np.linalg.norm(coeffs.v))
    measured = np.concatenate([plan.fisher_shots[m.var_fisher > 0 if not plan.symmetric else np.tril(m.var_fisher) > 0], plan.grad_shots[m.var_grad > 0]])
    min_shots = int(measured.min()) if measured.size else 0
    small = pred == 0 or (np.sqrt(pred) <= SMALL_ERROR_REL * v_norm and min_shots >= SMALL_ERROR_MIN_SHOTS)
    tol = 5.0 * est.stderr + 0.1 * pred
    return {
        "predicted_eps2": pred,
        "empirical_eps2": est.mean,
        "stderr": est.stderr,
        "trials": est.trials,
        "seed": est.seed,
        "mode": plan.mode,
        "total_shots": plan.total,
        "natgrad_norm": v_norm,
        "min_shots": min_shots,
        "small_error_regime": bool(small),
        "warning": None if small else "outside the small-error regime; first-order prediction is not expected to hold",
        "agrees": bool(abs(pred - est.mean) <= tol),
    }


def cmd_validate(args, cfg) -> int:
    trials = args.trials if args.trials is not None else cfg["validate"]["trials"]
    if trials < 100:
        raise ConfigError(f"need at least 100 trials, got {trials}")
    mode = args.mode or cfg["validate"]["mode"]
    if mode not in MODES:
        raise ConfigError(f"validate.mode must be one of {MODES}")
    ec, c, h, theta, m, inv = _point(args, cfg)
    coeffs = propagation_coefficients(inv, m.grad)
    eps, _ = _eps(args, ec, coeffs.v, m.grad)
    plan = _plan(mode, m, inv, coeffs, eps)
    seed = cfg["seed"] if args.seed is None else args.seed
    report = validation_report(m, inv, plan, trials, seed, args.workers)
    session = Session("validate", cfg, args.out)
    session.write_json("validate.json", report)
    session.finish()
    print(json.dumps(report))
    if report["small_error_regime"] and not report["agrees"]:
        return EXIT_CHECK
    return 0


def cmd_scan(args, cfg) -> int:
    ec = evolution_config(cfg)
    sc = cfg["scan"]
    result = qubit_scan(
        ec.hamiltonian,
        sc["n_list"],
        target=sc["target"],
        instances=sc["instances"],
        seed=ec.seed,
        pattern=ec.pattern,
        eta=ec.eta,
        lam=ec.lam,
        max_iters=sc["max_iters"],
        protocol=ec.fisher_protocol,
        workers=args.workers,
    )
    session = Session("scan", cfg, args.out)
    session.write("scan.csv", result.to_csv())
    session.write("aggregate.csv", result.aggregate_csv())
    session.extra = {"excluded": {str(k): v for k, v in result.excluded.items()}}
    session.finish()
    return 0


def bounds_report(ec: EvolutionConfig, h, m, inv, eps: float, eps_grad: float) -> dict:
    f_g = float(grouping_factor(h, ec.grouping))
    spc_h = spc_of_hamiltonian(h)
    coeffs = propagation_coefficients(inv, m.grad)
    t1 = theorem1_bounds(m, inv, eps, ec.f_F, f_g, spc_h, coeffs)
    rep = overhead_report(m, inv, eps, ec.f_F, f_g, spc_h, eps_grad=eps_grad, coeffs=coeffs)
    lo, hi = inv.spectral_bounds()
    return {
        "eps": eps,
        "eta": inv.eta,
        "nu": m.nu,
        "f_F": ec.f_F,
        "f_g": f_g,
        "spc_h": spc_h,
        "n_f": {"exact": t1.n_f_exact, "bound": t1.n_f_bound, "holds": bool(t1.n_f_holds)},
        "n_g": {"exact": t1.n_g_exact, "bound": t1.n_g_bound, "holds": bool(t1.n_g_holds)},
        "kappa": {"exact": rep.kappa_same, "bound": rep.kappa_bound, "holds": bool(rep.kappa_holds)},
        "gradient_ratio": {"exact": rep.gradient_ratio, "bound": inv.eta**-2 if inv.eta > 0 else None, "holds": bool(rep.gradient_ratio_holds)},
        "inverse_bounds": {"sigma_max": inv.sigma_max, "sigma_min": inv.sigma_min, "upper": hi if np.isfinite(hi) else None, "lower": lo, "holds": bool(inv.bounds_hold())},
        "spc_inv": rep.spc_inv,
        "y": rep.y,
        "kappa_approx": rep.kappa_approx,
        "overhead": rep.to_json(),
    }


def cmd_bounds(args, cfg) -> int:
    ec, c, h, theta, m, inv = _point(args, cfg)
    coeffs = propagation_coefficients(inv, m.grad)
    eps, eps_grad = _eps(args, ec, coeffs.v, m.grad)
    report = bounds_report(ec, h, m, inv, eps, eps_grad)
    session = Session("bounds", cfg, args.out)
    session.write_json("bounds.json", report)
    session.finish()
    print(json.dumps({k: report[k] for k in ("n_f", "n_g", "kappa")}))
    ok = report["n_f"]["holds"] and report["n_g"]["holds"] and report["kappa"]["holds"] and report["inverse_bounds"]["holds"]
    return 0 if ok else EXIT_CHECK


def cmd_inspect(args, cfg) -> int:
    ec, c, h, theta, m, inv = _point(args, cfg)
    obj = {
        **m.to_json(),
        "theta": theta.tolist(),
        "qubits": c.qubit_count,
        "hamiltonian": h.to_json(),
        "ansatz": c.to_json(),
        "spc_inv": float(np.sum(inv.matrix**2) / inv.nu),
        "singular_values": inv.singular_values.tolist(),
    }
    session = Session("inspect", cfg, args.out)
    session.write_json("metric.json", obj)
    session.finish()
    return 0


COMMANDS = {
    "evolve": cmd_evolve,
    "allocate": cmd_allocate,
    "validate": cmd_validate,
    "scan": cmd_scan,
    "bounds": cmd_bounds,
    "inspect": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qngcost", description="Shot-cost analysis for natural-gradient variational algorithms.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?", help="YAML config file (defaults are used when omitted)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        p.add_argument("--workers", type=int, default=1)
        if name in ("allocate", "validate", "bounds", "inspect"):
            p.add_argument("--theta", help="parameter vector as a YAML/JSON list, or a file holding one")
        if name in ("allocate", "validate", "bounds"):
            p.add_argument("--eps", type=float, help="absolute precision; overrides the config eps section")
        if name == "allocate":
            p.add_argument("--mode", choices=MODES, default="uniform")
        if name == "validate":
            p.add_argument("--mode", choices=MODES)
            p.add_argument("--trials", type=int)
            p.add_argument("--seed", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
