"""Batch front end: ``parasos <task> --config run.json [--dotted.key=value ...]``.

Exit status is 0 on success, 2 when the requested conditions are infeasible
and 1 on any other error.  Every artifact carries the resolved config.
"""
from __future__ import annotations

import argparse
import copy
import csv
import functools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (backstepping_controller, controllability_condition,
                        inverse_pair_residual, sturm_liouville_bound, uncontrollable_modes)
from .opinverse import ChebFun, residual_scan
from .polycore import PdeModel, Poly1
from .sdp import BracketError, SolverOptions
from .simlab import OutputFeedback, StateFeedback, discretize, gaussian_difference, simulate
from .synthpipeline import (MODES, Infeasible, SweepMonotonicityError, SweepRow, analyze_stability,
                            check_monotone, sweep_max_lambda, synth_observer,
                            synth_output_feedback, synth_state_feedback)

log = logging.getLogger("parasos")

TASKS = ("analyze", "synth-state", "synth-observer", "synth-output", "simulate", "sweep",
         "invert-check", "baseline")

DEFAULTS = {
    "task": None,
    "model": {"a_coeffs": [1.0], "b_coeffs": [0.0], "c0_coeffs": [0.0], "lambda": 0.0},
    "degrees": {"d1": 4, "d2": 4, "dhat": None, "observer": None},
    "rates": {"eps": 1e-3, "delta": 1e-3, "mu": 1e-3, "slack": 0.5},
    "sweep": {"mode": "stability", "lo": 0.0, "hi": 50.0, "tol": 0.01, "d_list": [3, 4, 5]},
    "sim": {"m": 128, "dt": 1e-3, "T": 5.0, "n_save": 501, "grid": "uniform",
            "w0": "gaussian_difference", "gains": None, "enabled": False},
    "solver": {"backend": "ipm", "tol": 1e-10, "margin_tol": 1e-8, "eq_tol": 1e-9,
               "maxiter": 150, "dump": None},
    "restrict_diag": False,
    "invert": {"ns": [2, 3, 4, 5, 6], "cheb_deg": 6, "probe": [0.0, 0.4, -1.4, 1.0]},
    "baseline": {"lambda": 10.0, "ms": [5, 10], "log_ms": [10, 12, 13, 14, 15, 16]},
    "output": {"dir": "parasos-out"},
}


class ConfigError(ValueError):
    def __init__(self, field, msg):
        super().__init__(f"field '{field}': {msg}")
        self.field = field


# ---------------------------------------------------------------------------
# config handling


def _merge(base, upd, prefix=""):
    for k, v in upd.items():
        path = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(path, "unknown field")
        if isinstance(base[k], dict) and base[k]:
            if not isinstance(v, dict):
                raise ConfigError(path, "expected an object")
            _merge(base[k], v, path + ".")
        else:
            base[k] = v


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg, dotted, value):
    keys = dotted.split(".")
    node = cfg
    for i, k in enumerate(keys[:-1]):
        if not isinstance(node.get(k), dict):
            raise ConfigError(".".join(keys[: i + 1]), "unknown section")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(dotted, "unknown field")
    node[keys[-1]] = value


def _number_list(cfg, path):
    sec, key = path.split(".")
    v = cfg[sec][key]
    if not (isinstance(v, list) and v and all(isinstance(x, (int, float)) and not isinstance(x, bool)
                                              for x in v)):
        raise ConfigError(path, "expected a non-empty list of numbers (ascending degree)")


def _positive(cfg, path, integer=False, allow_zero=False):
    node = cfg
    for k in path.split("."):
        node = node[k]
    ok = isinstance(node, int) if integer else isinstance(node, (int, float))
    if isinstance(node, bool) or not ok or not (node >= 0 if allow_zero else node > 0):
        kind = "integer" if integer else "number"
        raise ConfigError(path, f"expected a {'non-negative' if allow_zero else 'positive'} {kind}")


def validate(cfg):
    if cfg["task"] not in TASKS:
        raise ConfigError("task", f"expected one of {', '.join(TASKS)}")
    for k in ("a_coeffs", "b_coeffs", "c0_coeffs"):
        _number_list(cfg, f"model.{k}")
    if not isinstance(cfg["model"]["lambda"], (int, float)):
        raise ConfigError("model.lambda", "expected a number")
    for k in ("d1", "d2"):
        _positive(cfg, f"degrees.{k}", integer=True, allow_zero=True)
    for key in ("dhat", "observer"):
        v = cfg["degrees"][key]
        if v is not None and not (isinstance(v, list) and len(v) == 2
                                  and all(isinstance(x, int) and x >= 0 for x in v)):
            raise ConfigError(f"degrees.{key}", "expected null or a pair of non-negative integers")
    for k in ("eps", "delta", "mu", "slack"):
        _positive(cfg, f"rates.{k}")
    sw = cfg["sweep"]
    if sw["mode"] not in MODES:
        raise ConfigError("sweep.mode", f"expected one of {', '.join(MODES)}")
    _positive(cfg, "sweep.tol")
    if not (isinstance(sw["lo"], (int, float)) and isinstance(sw["hi"], (int, float))
            and sw["hi"] > sw["lo"]):
        raise ConfigError("sweep.hi", "expected numbers with hi > lo")
    d_list = sw["d_list"]
    if not (isinstance(d_list, list) and d_list and all(isinstance(d, int) and d >= 0
                                                        for d in d_list)):
        raise ConfigError("sweep.d_list", "expected a non-empty list of non-negative integers")
    for k in ("m", "n_save"):
        _positive(cfg, f"sim.{k}", integer=True)
    for k in ("dt", "T"):
        _positive(cfg, f"sim.{k}")
    if cfg["sim"]["grid"] not in ("uniform", "log"):
        raise ConfigError("sim.grid", "expected 'uniform' or 'log'")
    w0 = cfg["sim"]["w0"]
    if not (w0 == "gaussian_difference" or (isinstance(w0, dict) and set(w0) == {"coeffs"})):
        raise ConfigError("sim.w0", "expected 'gaussian_difference' or {\"coeffs\": [...]}")
    if cfg["solver"]["backend"] not in ("ipm", "cvxopt"):
        raise ConfigError("solver.backend", "expected 'ipm' or 'cvxopt'")
    if not isinstance(cfg["restrict_diag"], bool):
        raise ConfigError("restrict_diag", "expected true or false")
    _positive(cfg, "invert.cheb_deg", integer=True)
    return cfg


def load_config(path, task=None, overrides=()):
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"not valid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigError("<file>", "top level must be an object")
        _merge(cfg, user)
    for dotted, value in overrides:
        apply_override(cfg, dotted, value)
    if task is not None:
        cfg["task"] = task
    return validate(cfg)


# ---------------------------------------------------------------------------
# builders and serializers


def model_from(cfg, lam=None):
    m = cfg["model"]
    try:
        return PdeModel.from_coeffs(m["a_coeffs"], m["b_coeffs"], m["c0_coeffs"],
                                    m["lambda"] if lam is None else lam)
    except ValueError as exc:
        raise ConfigError("model.a_coeffs", str(exc)) from exc


def solver_options(cfg, suffix=None):
    s = dict(cfg["solver"])
    if s["dump"] and suffix:
        s["dump"] = f"{s['dump']}.{suffix}"
    return SolverOptions(**s)


def certificate_dict(cert):
    return {
        "d1": cert.d1, "d2": cert.d2, "eps": cert.eps, "theta": cert.theta,
        "restrict_diag": cert.restrict_diag,
        "P": np.asarray(cert.P).tolist(),
        "loc": None if cert.loc is None else np.asarray(cert.loc).tolist(),
        "M": cert.triple.M.coeffs.tolist(),
        "K1": cert.triple.K1.coeffs.tolist(),
        "K2": cert.triple.K2.coeffs.tolist(),
    }


def gains_dict(ctrl=None, obs=None, kappa=None):
    out = {}
    if ctrl is not None:
        out.update(R1=float(ctrl.R1), R2_cheb=np.asarray(ctrl.R2.coef).tolist(),
                   Y1=float(ctrl.Y1), Y2=ctrl.Y2.coeffs.tolist(), mu=ctrl.mu)
    if obs is not None:
        out.update(L1_cheb=np.asarray(obs.L1.coef).tolist(), L2=float(obs.L2), delta=obs.delta)
    if kappa is not None:
        out["kappa"] = kappa
    out["basis"] = "Chebyshev series on [0,1] (R2, L1)"
    return out


def controller_from_gains(g):
    """Plant-side controller from a gains document (or its 'gains' entry)."""
    g = g.get("gains", g)
    if "R1" not in g:
        raise ConfigError("sim.gains", "gains file has no state-feedback part (R1, R2)")
    R2 = ChebFun(np.asarray(g["R2_cheb"], float))
    if "L1_cheb" in g:
        return OutputFeedback(float(g["R1"]), R2, ChebFun(np.asarray(g["L1_cheb"], float)),
                              float(g["L2"]))
    return StateFeedback(float(g["R1"]), R2)


def initial_profile(cfg):
    w0 = cfg["sim"]["w0"]
    return gaussian_difference if w0 == "gaussian_difference" else Poly1(w0["coeffs"])


class Run:
    def __init__(self, cfg):
        self.cfg = cfg
        self.dir = Path(cfg["output"]["dir"])
        self.dir.mkdir(parents=True, exist_ok=True)
        self.written = []

    def write_json(self, name, payload):
        path = self.dir / name
        with open(path, "w") as fh:
            json.dump({"parasos": __version__, "config": self.cfg, **payload}, fh, indent=1)
        self.written.append(str(path))
        return path

    def write_csv(self, name, header, rows):
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            fh.write("# config=" + json.dumps(self.cfg, separators=(",", ":")) + "\n")
            wr = csv.writer(fh)
            wr.writerow(header)
            wr.writerows(rows)
        self.written.append(str(path))
        return path

    def trajectory(self, ctrl, name="trajectory.csv"):
        s = self.cfg["sim"]
        d = discretize(model_from(self.cfg), s["m"], s["grid"])
        traj = simulate(d, ctrl, initial_profile(self.cfg), s["T"], s["dt"], s["n_save"])
        path = self.dir / name
        traj.to_csv(path, "config=" + json.dumps(self.cfg, separators=(",", ":")))
        self.written.append(str(path))
        summary = {"final_ratio": float(traj.norms[-1] / traj.norms[0]),
                   "T": s["T"], "m": s["m"], "dt": s["dt"]}
        if traj.est_error_norms is not None:
            summary["final_error"] = float(traj.est_error_norms[-1])
        return traj, summary


class InfeasibleRun(Exception):
    def __init__(self, payload):
        super().__init__(json.dumps(payload))
        self.payload = payload


def _infeasible(res: Infeasible):
    return InfeasibleRun({"stage": res.stage, "d1": res.d1, "d2": res.d2, "lambda": res.lam,
                          "status": res.status, "detail": res.detail})


# ---------------------------------------------------------------------------
# tasks


def _common(cfg):
    r = cfg["rates"]
    dg = cfg["degrees"]
    return r, dg, (tuple(dg["dhat"]) if dg["dhat"] else None)


def task_analyze(run):
    cfg = run.cfg
    r, dg, dhat = _common(cfg)
    rep = analyze_stability(model_from(cfg), dg["d1"], dg["d2"], r["eps"], r["delta"], dhat,
                            cfg["restrict_diag"], solver_options(cfg))
    if not rep:
        raise _infeasible(rep)
    run.write_json("certificate.json", {
        "task": "analyze", "lambda": rep.lam, "delta": rep.delta, "gamma": rep.gamma,
        "certificate": certificate_dict(rep.certificate),
        "hat_certificate": certificate_dict(rep.hat_certificate)})


def task_synth_state(run):
    cfg = run.cfg
    r, dg, dhat = _common(cfg)
    g = synth_state_feedback(model_from(cfg), dg["d1"], dg["d2"], r["eps"], r["mu"], r["slack"],
                             dhat, cfg["restrict_diag"], solver_options(cfg))
    if not g:
        raise _infeasible(g)
    run.write_json("certificate.json", {"task": "synth-state",
                                        "certificate": certificate_dict(g.certificate),
                                        "hat_certificate": certificate_dict(g.hat_certificate)})
    extra = {}
    if cfg["sim"]["enabled"]:
        _, extra["simulation"] = run.trajectory(g)
    run.write_json("gains.json", {"task": "synth-state", "gains": gains_dict(ctrl=g),
                                  "inversion_residual": g.inverse.residual_bound, **extra})


def task_synth_observer(run):
    cfg = run.cfg
    r, dg, dhat = _common(cfg)
    o = synth_observer(model_from(cfg), dg["d1"], dg["d2"], r["eps"], r["delta"], r["slack"],
                       dhat, cfg["restrict_diag"], solver_options(cfg))
    if not o:
        raise _infeasible(o)
    run.write_json("certificate.json", {"task": "synth-observer",
                                        "certificate": certificate_dict(o.certificate),
                                        "hat_certificate": certificate_dict(o.hat_certificate)})
    run.write_json("gains.json", {"task": "synth-observer", "gains": gains_dict(obs=o),
                                  "inversion_residual": o.inverse.residual_bound})


def task_synth_output(run):
    cfg = run.cfg
    r, dg, dhat = _common(cfg)
    dC = (dg["d1"], dg["d2"])
    dO = tuple(dg["observer"]) if dg["observer"] else dC
    of = synth_output_feedback(model_from(cfg), dC, dO, r["eps"], r["mu"], r["delta"], r["slack"],
                               solver_options(cfg), dhat=dhat, restrict_diag=cfg["restrict_diag"])
    if not of:
        raise _infeasible(of)
    c, o = of.controller, of.observer
    run.write_json("certificate.json", {
        "task": "synth-output",
        "controller": {"certificate": certificate_dict(c.certificate),
                       "hat_certificate": certificate_dict(c.hat_certificate)},
        "observer": {"certificate": certificate_dict(o.certificate),
                     "hat_certificate": certificate_dict(o.hat_certificate)}})
    extra = {}
    if cfg["sim"]["enabled"]:
        _, extra["simulation"] = run.trajectory(of)
    run.write_json("gains.json", {"task": "synth-output",
                                  "gains": gains_dict(c, o, of.kappa), **extra})


def task_simulate(run):
    src = run.cfg["sim"]["gains"]
    ctrl = None
    if src:
        try:
            with open(src) as fh:
                ctrl = controller_from_gains(json.load(fh))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ConfigError("sim.gains", f"cannot load gains ({exc})") from exc
    _, summary = run.trajectory(ctrl)
    run.write_json("simulation.json", {"task": "simulate", "simulation": summary})


def _sweep_one(mode, coeffs, d, kw):
    family = functools.partial(PdeModel.from_coeffs, *coeffs)
    row = sweep_max_lambda(mode, family, [d], **kw)[0]
    return SweepRow(row.d, row.lam_star, [(p.value, p.status) for p in row.probes], row.seconds)


def task_sweep(run):
    cfg = run.cfg
    sw, r = cfg["sweep"], cfg["rates"]
    rate = r["mu"] if sw["mode"] == "state_fb" else r["delta"]
    m = cfg["model"]
    coeffs = (m["a_coeffs"], m["b_coeffs"], m["c0_coeffs"])
    kw = dict(eps=r["eps"], rate=rate, lo=sw["lo"], hi=sw["hi"], tol=sw["tol"],
              restrict_diag=cfg["restrict_diag"],
              dhat=tuple(cfg["degrees"]["dhat"]) if cfg["degrees"]["dhat"] else None,
              opts=solver_options(cfg))
    threads = max(1, int(os.environ.get("PARASOS_THREADS", "1") or 1))
    jobs = sorted(set(sw["d_list"]))
    try:
        if threads > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as ex:
                rows = list(ex.map(_sweep_one, [sw["mode"]] * len(jobs), [coeffs] * len(jobs),
                                   jobs, [kw] * len(jobs)))
        else:
            rows = [_sweep_one(sw["mode"], coeffs, d, kw) for d in jobs]
    except BracketError as exc:
        raise InfeasibleRun({"stage": "sweep", "mode": sw["mode"], "lo": sw["lo"],
                             "hi": sw["hi"], "detail": str(exc)}) from exc
    run.write_csv("sweep.csv", ["d", "lambda_star", "probes", "seconds"],
                  [[r_.d, f"{r_.lam_star:.6f}", len(r_.probes), f"{r_.seconds:.3f}"]
                   for r_ in rows])
    check_monotone(rows, 2 * sw["tol"])


def task_invert_check(run):
    cfg = run.cfg
    r, dg, dhat = _common(cfg)
    rep = analyze_stability(model_from(cfg), dg["d1"], dg["d2"], r["eps"], r["delta"], dhat,
                            cfg["restrict_diag"], solver_options(cfg))
    if not rep:
        raise _infeasible(rep)
    inv = cfg["invert"]
    res = residual_scan(rep.certificate.triple, Poly1(inv["probe"]), inv["ns"], inv["cheb_deg"])
    run.write_csv("inversion.csv", ["n", "residual"],
                  [[n, f"{v:.6e}"] for n, v in zip(inv["ns"], res)])


def task_baseline(run):
    cfg = run.cfg
    b = cfg["baseline"]
    sl = sturm_liouville_bound(model_from(cfg))
    lam = b["lambda"]
    bs = backstepping_controller(lam)
    run.write_json("baseline.json", {
        "task": "baseline",
        "sturm_liouville": {"p0": sl.p0, "q1": sl.q1, "sigma1": sl.sigma1, "mu1cc": sl.mu1cc,
                            "threshold": sl.threshold},
        "backstepping": {"lambda": lam, "R1": bs.R1,
                         "inverse_pair_residual": inverse_pair_residual(lam)},
        "controllability": {str(m): controllability_condition(m) for m in b["ms"]},
        "log_grid_uncontrollable": {str(m): uncontrollable_modes(m, "log") for m in b["log_ms"]},
    })


HANDLERS = {
    "analyze": task_analyze, "synth-state": task_synth_state,
    "synth-observer": task_synth_observer, "synth-output": task_synth_output,
    "simulate": task_simulate, "sweep": task_sweep, "invert-check": task_invert_check,
    "baseline": task_baseline,
}


# ---------------------------------------------------------------------------
# entry point


def parse_args(argv):
    ap = argparse.ArgumentParser(prog="parasos", description=__doc__.split("\n\n")[0])
    ap.add_argument("task", choices=TASKS)
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("-v", "--verbose", action="store_true")
    args, rest = ap.parse_known_args(argv)
    overrides = []
    it = iter(rest)
    for tok in it:
        if not tok.startswith("--"):
            ap.error(f"unexpected argument {tok!r}")
        key, eq, val = tok[2:].partition("=")
        if not eq:
            val = next(it, None)
            if val is None:
                ap.error(f"missing value for --{key}")
        overrides.append((key, _parse_value(val)))
    return args, overrides


def run(config_path, task=None, overrides=()):
    """Run one task; returns (exit status, list of written paths)."""
    try:
        cfg = load_config(config_path, task, overrides)
    except ConfigError as exc:
        print(f"parasos: config error: {exc}", file=sys.stderr)
        return 1, []
    except OSError as exc:
        print(f"parasos: cannot read config: {exc}", file=sys.stderr)
        return 1, []
    r = Run(cfg)
    try:
        HANDLERS[cfg["task"]](r)
    except InfeasibleRun as exc:
        r.write_json("infeasible.json", {"task": cfg["task"], "infeasible": exc.payload})
        print(f"parasos: infeasible: {json.dumps(exc.payload)}", file=sys.stderr)
        return 2, r.written
    except ConfigError as exc:
        print(f"parasos: config error: {exc}", file=sys.stderr)
        return 1, r.written
    except (SweepMonotonicityError, ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"parasos: error: {exc}", file=sys.stderr)
        return 1, r.written
    for p in r.written:
        print(p)
    return 0, r.written


def main(argv=None):
    args, overrides = parse_args(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    status, _ = run(args.config, args.task, overrides)
    return status


if __name__ == "__main__":
    sys.exit(main())
