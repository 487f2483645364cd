"""Batch experiment driver.

Every subcommand reads an optional JSON config, applies flag overrides,
runs one experiment and writes its artifacts plus ``manifest.json`` to the
output directory (``--out``, else ``$NONLOCAL_CONTROL_OUT``, else
``./nonlocal_control_out``).

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import mpmath
import numpy as np
import scipy

from . import __version__
from .carleman_weights import LAMBDA_MIN, WeightParams, check_weight_inequalities, max_min_threshold
from .errors import ConfigError, ControlLabError, ZeroCouplingError
from .forward_sim import SystemParams, energy_report, simulate_linearized, simulate_simplified, solve_adjoint
from .hum_controller import HUMConfig, cost_probe, hum_solve
from .moments_engine import biorthogonal_family, synthesize_control, verify_moments
from .nonlinear_lab import fixed_point_control, simulate_nonlinear, source_weights
from .signals import FunctionControl, TimeGrid
from .spectral_analysis import check_assumption, hautus_check, hautus_report
from .spectral_core import SpectralState, Window, eigenvalue, eigenvalues

OUT_ENV = "NONLOCAL_CONTROL_OUT"
DEFAULT_OUT = "nonlocal_control_out"
SCHEMA_VERSION = 1
PARAM_NAMES = ("a", "b", "c", "d1", "d2", "kappa", "chi1", "chi2", "beta1", "beta2")

COMMANDS = ("simulate", "adjoint", "moments-control", "hum-control", "check-hautus", "check-assumption",
            "counterexample", "probe-cost", "weights-check", "nonlinear-control")


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--seed", type=int)
    for name in PARAM_NAMES:
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--window", type=float, nargs=2, metavar=("R1", "R2"))
    p.add_argument("--T", type=float)
    p.add_argument("--K", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--y0", help="comma-separated sine coefficients")
    p.add_argument("--z0", help="comma-separated sine coefficients")
    p.add_argument("--y0-mode", type=int, dest="y0_mode")
    p.add_argument("--z0-mode", type=int, dest="z0_mode")
    p.add_argument("--random-data", action="store_true", dest="random_data",
                   help="random initial data with k^-4 coefficient decay")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nonlocal-control", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="forward simulation without control")
    _add_common(p)
    p.add_argument("--system", choices=("linearized", "simplified", "nonlinear"))

    p = sub.add_parser("adjoint", help="backward adjoint solve")
    _add_common(p)
    p.add_argument("--phiT", help="comma-separated final data for phi")
    p.add_argument("--psiT", help="comma-separated final data for psi")
    p.add_argument("--psiT-mode", type=int, dest="psiT_mode")
    p.add_argument("--phiT-mode", type=int, dest="phiT_mode")
    p.add_argument("--simplified", action="store_true", default=None)

    p = sub.add_parser("moments-control", help="moments-method null control of the simplified system")
    _add_common(p)
    p.add_argument("--K-sim", type=int, dest="K_sim")

    for name, hlp in (("hum-control", "penalized HUM null control"), ("probe-cost", "control cost versus horizon")):
        p = sub.add_parser(name, help=hlp)
        _add_common(p)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--cg-tol", type=float, dest="cg_tol")
        p.add_argument("--cg-maxiter", type=int, dest="cg_maxiter")
        if name == "probe-cost":
            p.add_argument("--T-list", type=float, nargs="+", dest="T_list")

    p = sub.add_parser("check-hautus", help="truncated Fattorini-Hautus test")
    _add_common(p)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("check-assumption", help="odd-mode degeneracy test")
    _add_common(p)
    p.add_argument("--Kmax", type=int)

    p = sub.add_parser("counterexample", help="even-mode obstruction for a = 0")
    _add_common(p)
    p.add_argument("--n-controls", type=int, dest="n_controls")

    p = sub.add_parser("weights-check", help="Carleman and source weight checks")
    _add_common(p)
    p.add_argument("--lambdas", type=float, nargs="+")
    p.add_argument("--s", type=float)
    p.add_argument("--grid", type=int)
    p.add_argument("--r", type=float)

    p = sub.add_parser("nonlinear-control", help="source-term fixed-point control")
    _add_common(p)
    p.add_argument("--delta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--maxiter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--M", type=float)
    return parser


DEFAULTS = {
    "params": {"a": 1.0, "b": 1.0, "c": 0.0, "d1": 0.0, "d2": 0.0, "kappa": 1.0, "chi1": 1.0, "chi2": 1.0,
               "beta1": 0.0, "beta2": 0.0, "window": [[0.3, 0.8]]},
    "T": 1.0, "K": 8, "steps": 400, "seed": 0,
}


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if args.config:
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        user_params = user.pop("params", {})
        cfg["params"].update(user_params)
        cfg.update(user)
    for name in PARAM_NAMES:
        val = getattr(args, name, None)
        if val is not None:
            cfg["params"][name] = val
    if getattr(args, "window", None):
        cfg["params"]["window"] = [list(args.window)]
    skip = set(PARAM_NAMES) | {"config", "out", "window", "command"}
    for key, val in vars(args).items():
        if key in skip or val is None or val is False:
            continue
        cfg[key] = val
    cfg["command"] = args.command
    return cfg


def params_from(cfg: dict) -> SystemParams:
    p = dict(cfg["params"])
    try:
        window = Window(tuple(tuple(iv) for iv in p.pop("window")))
        return SystemParams(window=window, **{k: float(v) for k, v in p.items()})
    except TypeError as exc:
        raise ConfigError(f"bad params: {exc}") from exc


def _parse_coeffs(spec, K: int, rng, name: str) -> SpectralState:
    if spec is None:
        return SpectralState.zeros(K)
    if isinstance(spec, str):
        try:
            spec = [float(s) for s in spec.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad coefficient list for {name}") from exc
    if isinstance(spec, dict):
        if "mode" in spec:
            k = int(spec["mode"])
            if not 1 <= k <= K:
                raise ConfigError(f"{name} mode {k} outside 1..{K}")
            return SpectralState.mode(k, K, float(spec.get("amplitude", 1.0)))
        if "random" in spec:
            r = spec["random"] or {}
            k = np.arange(1, K + 1, dtype=float)
            return SpectralState(float(r.get("scale", 1.0)) * rng.standard_normal(K) * k ** -float(r.get("decay", 4.0)))
        raise ConfigError(f"unrecognized initial data spec for {name}")
    return SpectralState(np.asarray(spec, float)).resized(K)


def initial_data(cfg: dict, K: int, rng, names=("y0", "z0")) -> tuple[SpectralState, SpectralState]:
    out = []
    for name in names:
        spec = cfg.get(name)
        mode = cfg.get(f"{name}_mode")
        if mode is not None:
            spec = {"mode": mode}
        elif spec is None and cfg.get("random_data"):
            spec = {"random": {}}
        out.append(_parse_coeffs(spec, K, rng, name))
    return out[0], out[1]


def hum_config_from(cfg: dict, **over) -> HUMConfig:
    h = dict(cfg.get("hum", {}))
    for key in ("epsilon", "cg_tol", "cg_maxiter"):
        if key in cfg:
            h[key] = cfg[key]
    h.setdefault("K", cfg["K"])
    h.setdefault("steps", cfg["steps"])
    h.update(over)
    try:
        return HUMConfig(**h)
    except TypeError as exc:
        raise ConfigError(f"bad hum config: {exc}") from exc


class Artifacts:
    def __init__(self, out: Path):
        self.out = out
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def json(self, name: str, obj) -> None:
        with open(self.path(name), "w") as fh:
            json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)

    def csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for row in rows:
                wr.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _control_rows(ctrl, grid: TimeGrid, name: str):
    vals = ctrl.node_coefficients(grid)
    t = grid.node_times
    for n in range(grid.steps):
        for g in range(4):
            for k in range(vals.shape[2]):
                yield [float(t[n, g]), name, k + 1, float(vals[n, g, k])]


# commands ---------------------------------------------------------------

def cmd_simulate(cfg, art, rng):
    params, K, T, steps = params_from(cfg), cfg["K"], cfg["T"], cfg["steps"]
    y0, z0 = initial_data(cfg, K, rng)
    system = cfg.get("system", "linearized")
    if system == "simplified":
        tr = simulate_simplified(params, y0, z0, None, T, steps)
    elif system == "nonlinear":
        tr = simulate_nonlinear(params, y0, z0, None, None, T, steps, K)
    else:
        tr = simulate_linearized(params, y0, z0, None, None, T, steps)
    tr.write_csv(art.path("trajectory.csv"))
    rep = energy_report(tr)
    summary = tr.summary()
    summary.update({"system": system, "energy": rep.to_dict()})
    art.json("summary.json", summary)
    return summary


def cmd_adjoint(cfg, art, rng):
    params, K, T, steps = params_from(cfg), cfg["K"], cfg["T"], cfg["steps"]
    phiT = _parse_coeffs({"mode": cfg["phiT_mode"]} if "phiT_mode" in cfg else cfg.get("phiT"), K, rng, "phiT")
    psiT = _parse_coeffs({"mode": cfg["psiT_mode"]} if "psiT_mode" in cfg else cfg.get("psiT"), K, rng, "psiT")
    tr = solve_adjoint(params, phiT, psiT, T, steps, simplified=bool(cfg.get("simplified", False)))
    tr.write_csv(art.path("adjoint.csv"))
    mean_psi = tr.mean_series("psi")
    summary = tr.summary()
    summary["max_abs_mean_psi"] = float(np.max(np.abs(mean_psi)))
    art.json("summary.json", summary)
    return summary


def cmd_moments(cfg, art, rng):
    params, K, T, steps = params_from(cfg), cfg["K"], cfg["T"], cfg["steps"]
    y0, z0 = initial_data(cfg, K, rng)
    fam = biorthogonal_family(eigenvalues(K), T, jmax=1)
    ctrl = synthesize_control(y0, z0, params, K, T, fam)
    ver = verify_moments(ctrl, eigenvalues(K), ctrl.pairs, ctrl.rhs, T)
    ref = math.hypot(y0.l2_norm(), z0.l2_norm())
    tr = simulate_simplified(params, y0, z0, ctrl, T, steps)
    yT, zT = tr.terminal()
    result = {"verify": ver, "terminal_norm": math.hypot(yT.l2_norm(), zT.l2_norm()),
              "initial_norm": ref, "control_l2": ctrl.exact_l2_norm()}
    K_sim = cfg.get("K_sim")
    if K_sim:
        tr2 = simulate_simplified(params, y0.resized(K_sim), z0.resized(K_sim), ctrl, T, steps)
        y2, z2 = tr2.terminal()
        result["spillover"] = {"K_sim": K_sim, "terminal_norm": math.hypot(y2.l2_norm(), z2.l2_norm())}
    grid = TimeGrid(T, steps)
    art.csv("control.csv", ["t", "mode", "g"],
            ([r[0], r[2], r[3]] for r in _control_rows(ctrl, grid, "u")))
    art.json("control.json", ctrl.metadata())
    art.json("result.json", result)
    return result


def cmd_hum(cfg, art, rng):
    params, K, T = params_from(cfg), cfg["K"], cfg["T"]
    y0, z0 = initial_data(cfg, K, rng)
    hc = hum_config_from(cfg)
    res = hum_solve(params, y0, z0, T, hc)
    grid = TimeGrid(T, hc.steps)
    rows = list(_control_rows(res.u, grid, "u"))
    if res.v is not None:
        rows += list(_control_rows(res.v, grid, "v"))
    art.csv("controls.csv", ["t", "field", "mode", "coeff"], rows)
    out = res.to_dict()
    w = res.terminal[2]
    out["terminal_w_norm"] = w.l2_norm() if w is not None else None
    art.json("result.json", out)
    return out


def cmd_hautus(cfg, art, rng):
    params = params_from(cfg)
    entries = hautus_check(params, cfg["K"], params.window, cfg.get("tol", 1e-8))
    rep = hautus_report(entries)
    art.json("hautus.json", rep)
    return rep


def cmd_assumption(cfg, art, rng):
    params = params_from(cfg)
    rep = check_assumption(params.a, params.b, cfg.get("Kmax", cfg["K"]))
    art.json("assumption.json", rep)
    return rep


def cmd_counterexample(cfg, art, rng):
    cfg = dict(cfg)
    params, K, T, steps = params_from(cfg), cfg["K"], cfg["T"], cfg["steps"]
    if cfg.get("z0_mode") is None and cfg.get("z0") is None:
        cfg["z0_mode"] = 2
    y0, z0 = initial_data(cfg, K, rng)
    mode = int(cfg.get("z0_mode") or int(np.argmax(np.abs(z0.coeffs))) + 1)
    predicted = math.exp(-eigenvalue(mode) * T) * z0.coeffs[mode - 1]
    n = int(cfg.get("n_controls", 10))
    rows, devs = [], []
    for i in range(n):
        amp, freq = rng.standard_normal((2, K))
        u = FunctionControl(params.window, lambda t, a=amp, f=freq: np.sin(np.multiply.outer(t, f)) * a, K)
        tr = simulate_simplified(params, y0, z0, u, T, steps)
        val = float(tr.z[-1, mode - 1])
        devs.append(abs(val - predicted))
        rows.append([i, val, predicted, abs(val - predicted)])
    free = simulate_simplified(params, y0, z0, None, T, steps)
    zT = float(free.z[-1, mode - 1])
    obstructed = params.a == 0.0 and mode % 2 == 0 and max(devs) <= 1e-12
    verdict = "uncontrollable even mode" if obstructed else "no obstruction detected"
    art.csv("counterexample.csv", ["trial", "z_mode_T", "predicted", "deviation"], rows)
    rep = {"mode": mode, "z_mode_T": zT, "predicted": predicted, "max_deviation": max(devs),
           "n_controls": n, "verdict": verdict}
    art.json("counterexample.json", rep)
    print(f"z_{mode}(T) = {zT:.6f} (free decay {predicted:.6f}); verdict: {verdict}")
    return rep


def cmd_probe_cost(cfg, art, rng):
    params, K = params_from(cfg), cfg["K"]
    y0, z0 = initial_data(cfg, K, rng)
    T_list = cfg.get("T_list", [1.0, 0.5, 0.25, 0.125])
    probe = cost_probe(params, y0, z0, T_list, hum_config_from(cfg))
    art.csv("cost.csv", ["T", "cost", "terminal_norm", "iterations"],
            ([float(t), float(c), float(e), i] for t, c, e, i in
             zip(probe.horizons, probe.costs, probe.terminal_norms, probe.iterations)))
    rep = probe.to_dict()
    art.json("cost.json", rep)
    if probe.error:
        raise ControlLabError(probe.error)
    return rep


def cmd_weights(cfg, art, rng):
    params, T = params_from(cfg), cfg["T"]
    lams = cfg.get("lambdas", [LAMBDA_MIN, 4.0, 6.0])
    s = cfg.get("s", 2.0 * (T + T * T))
    n = int(cfg.get("grid", 256))
    r = float(cfg.get("r", 2.0))
    reports = [check_weight_inequalities(WeightParams(lam, s, T, params.window), n, n, r) for lam in lams]
    sw = cfg.get("source_weights", {})
    src = source_weights(T=T, **sw).verify()
    rep = {"carleman": reports, "max_min_threshold": max_min_threshold(r, lams), "source_weights": src,
           "passed": all(x["passed"] for x in reports) and src["passed"]}
    art.json("weights.json", rep)
    return rep


def cmd_nonlinear(cfg, art, rng):
    params, K, T = params_from(cfg), cfg["K"], cfg["T"]
    delta = float(cfg.get("delta", 1e-3))
    y0, z0 = initial_data(cfg, K, rng)
    size = math.hypot(y0.h1_proxy(), z0.h1_proxy())
    if size > 0 and cfg.get("scale_to_delta", True):
        y0, z0 = SpectralState(y0.coeffs * delta / size), SpectralState(z0.coeffs * delta / size)
    hc = hum_config_from(cfg)
    M = cfg.get("M")
    M_source = "config"
    if M is None:
        probe = cost_probe(params, y0, z0, [T, T / 2, T / 4, T / 8], hc)
        M = 2.0 * probe.slope if probe.slope and probe.slope > 0 else 1.0
        M_source = "2 x fitted cost slope" if probe.slope and probe.slope > 0 else "fallback 1.0"
    w = source_weights(M=M, T=T, **cfg.get("source_weights", {}))
    res = fixed_point_control(params, y0, z0, delta, w, int(cfg.get("maxiter", 15)), float(cfg.get("tol", 1e-8)),
                              hc, log_path=art.path("iterations.jsonl"))
    out = res.to_dict()
    out.update({"M": M, "M_source": M_source, "weights": w.to_dict()})
    if res.u is not None:
        grid = TimeGrid(T, hc.steps)
        rows = list(_control_rows(res.u, grid, "u"))
        if res.v is not None:
            rows += list(_control_rows(res.v, grid, "v"))
        art.csv("controls.csv", ["t", "field", "mode", "coeff"], rows)
    art.json("result.json", out)
    return out


HANDLERS = {
    "simulate": cmd_simulate, "adjoint": cmd_adjoint, "moments-control": cmd_moments, "hum-control": cmd_hum,
    "check-hautus": cmd_hautus, "check-assumption": cmd_assumption, "counterexample": cmd_counterexample,
    "probe-cost": cmd_probe_cost, "weights-check": cmd_weights, "nonlinear-control": cmd_nonlinear,
}


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    t0 = time.perf_counter()
    try:
        cfg = resolve_config(args)
        out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
        art = Artifacts(out)
        rng = np.random.default_rng(int(cfg.get("seed", 0)))
        result = HANDLERS[args.command](cfg, art, rng)
        status, code, error = "ok", 0, None
    except (ConfigError, ZeroCouplingError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        if "art" not in locals():
            return 2
        status, code, error, result = "config_error", 2, str(exc), None
    except (ControlLabError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        status, code, error, result = "numerical_failure", 3, f"{type(exc).__name__}: {exc}", None
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "config": cfg,
        "status": status,
        "error": error,
        "artifacts": art.files,
        "versions": {"package": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "mpmath": mpmath.__version__},
        "wall_time_s": time.perf_counter() - t0,
    }
    art.json("manifest.json", manifest)
    return code


def main() -> None:  # pragma: no cover
    sys.exit(run_command())
