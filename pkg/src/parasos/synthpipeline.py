"""Stability analysis, state-feedback, observer and output-feedback synthesis.

Every procedure builds an SDP over Gram variables, solves it with the
feasibility driver and then re-checks the returned certificates without
trusting the solver.  Procedures return a result object on success and an
``Infeasible`` record (falsy) otherwise.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .lyapmaps import (controller_Y, flux_kernel, flux_scalar, hat_degrees, negated_hat,
                       observer_T, omega_c, omega_s)
from .opinverse import ChebFun, CollocationInverse
from .polycore import PdeModel, Poly1
from .sdp import SolverOptions, max_feasible_scalar, solve
from .sdp.bisection import BracketError
from .sdp.problem import SdpProblem
from .soscone import (KernelTriple, XiCertificate, add_xi_variable, apply_operator,
                      symbolic_triple, verify_certificate, xi_membership)

log = logging.getLogger(__name__)

DEFAULT_EPS = 1e-3
DEFAULT_RATE = 1e-3
BOUNDARY_TOL = 1e-7
HAT_MISMATCH_TOL = 1e-6
INVERSION_LIMIT = 1e-3


@dataclass(frozen=True)
class Infeasible:
    stage: str                  # stability | controller | observer | inversion | verification
    d1: int
    d2: int
    lam: float
    status: str
    detail: str = ""

    def __bool__(self):
        return False


@dataclass(frozen=True)
class StabilityReport:
    certificate: XiCertificate
    hat_certificate: XiCertificate
    delta: float
    gamma: float
    lam: float = float("nan")
    solver_info: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class ControllerGains:
    Y1: float
    Y2: Poly1
    R1: float
    R2: ChebFun
    inverse: CollocationInverse
    mu: float
    certificate: XiCertificate = None
    hat_certificate: XiCertificate = None

    def control(self, w):
        """u = R1 w(1) + <R2, w> for a callable w."""
        from .polycore import quadrature
        return self.R1 * float(w(1.0)) + quadrature(lambda x: self.R2(x) * w(x))


@dataclass(frozen=True)
class ObserverGains:
    T1: Poly1
    T2: float
    T3: Poly1
    L1: ChebFun
    L2: float
    inverse: CollocationInverse
    delta: float
    certificate: XiCertificate = None
    hat_certificate: XiCertificate = None


@dataclass(frozen=True)
class OutputFeedbackController:
    controller: ControllerGains
    observer: ObserverGains
    kappa: float


# ---------------------------------------------------------------------------
# problem assembly


def default_hat_degrees(model: PdeModel, d1, d2, mode="s"):
    """max of (d + ceil(deg a / 2) + 1) and the symbolic lower bound."""
    k = -(-max(model.a.degree, 0) // 2)
    e1, e2 = hat_degrees(model, d1, d2, mode)
    return max(d1 + k + 1, e1), max(d2 + k + 1, e2)


@dataclass
class _Built:
    problem: SdpProblem
    P: object
    Q: object
    triple: KernelTriple
    dhat: tuple


def _build(model, d1, d2, eps, rate, kind, boundary, restrict_diag, dhat, name="P"):
    if not (eps > 0 and rate > 0):
        raise ValueError("eps and the decay rate must be positive")
    prob = SdpProblem()
    P = add_xi_variable(prob, d1, d2, eps, restrict_diag, name)
    t = symbolic_triple(prob, P, d1, d2, restrict_diag)
    omega = omega_s if kind == "s" else omega_c
    hat = negated_hat(omega(t, model, eps), t, rate)
    dh = tuple(dhat) if dhat else default_hat_degrees(model, d1, d2, kind)
    Q = xi_membership(prob, hat, dh[0], dh[1], 0.0, restrict_diag, name=name + "hat")
    prob.add_equalities(np.atleast_2d(t.K2.subs(1, 0.0).coeffs), f"{name}:K2(0,x)")
    if boundary:
        prob.add_equalities(np.atleast_2d(flux_kernel(t, model).coeffs), f"{name}:flux")
        prob.add_inequality(np.asarray(flux_scalar(t, model)), f"{name}:flux(1)")
    return _Built(prob, P, Q, t, dh)


def stability_problem(model, d1, d2, eps=DEFAULT_EPS, delta=DEFAULT_RATE, dhat=None,
                      restrict_diag=False):
    return _build(model, d1, d2, eps, delta, "s", True, restrict_diag, dhat)


def controller_problem(model, d1, d2, eps=DEFAULT_EPS, mu=DEFAULT_RATE, dhat=None,
                       restrict_diag=False):
    return _build(model, d1, d2, eps, mu, "c", False, restrict_diag, dhat)


def observer_problem(model, d1, d2, eps=DEFAULT_EPS, delta=DEFAULT_RATE, dhat=None,
                     restrict_diag=False):
    return _build(model, d1, d2, eps, delta, "s", False, restrict_diag, dhat)


def _matrix(sol, var):
    return sol.matrix(var) if var is not None else None


def _certificates(b: _Built, sol, d1, d2, eps, restrict_diag):
    P = sol.matrix(b.P)
    Q = sol.matrix(b.Q)
    tol = float(sol.info.get("psd_tol", 1e-9))
    cert = XiCertificate.from_gram(P, d1, d2, eps, restrict_diag, _matrix(sol, b.P.loc), tol)
    hcert = XiCertificate.from_gram(Q, b.dhat[0], b.dhat[1], 0.0, restrict_diag,
                                    _matrix(sol, b.Q.loc), tol)
    return cert, hcert


def _rel_mismatch(t1: KernelTriple, t2: KernelTriple):
    def gap(p, q):
        a, c = np.atleast_1d(p.coeffs), np.atleast_1d(q.coeffs)
        shape = np.maximum(a.shape, c.shape)
        pa, pc = np.zeros(shape), np.zeros(shape)
        pa[tuple(slice(0, s) for s in a.shape)] = a
        pc[tuple(slice(0, s) for s in c.shape)] = c
        return float(np.max(np.abs(pa - pc), initial=0.0)), float(np.max(np.abs(pc), initial=0.0))
    gaps = [gap(t1.M, t2.M), gap(t1.K1, t2.K1), gap(t1.K2, t2.K2)]
    scale = 1.0 + max(s for _, s in gaps)
    return max(g for g, _ in gaps) / scale


def post_verify(cert, hcert, model, eps, rate, kind, boundary, psd_tol=None):
    """Independent re-check of a solved certificate pair; returns a list of
    violations (empty when everything holds)."""
    viol = []
    for label, c in (("certificate", cert), ("hat certificate", hcert)):
        rep = verify_certificate(c, n_samples=20, tol=psd_tol)
        viol += [f"{label}: {v}" for v in rep.violations]
    omega = omega_s if kind == "s" else omega_c
    want = negated_hat(omega(cert.triple, model, eps), cert.triple, rate)
    mis = _rel_mismatch(want, hcert.triple)
    if mis > HAT_MISMATCH_TOL:
        viol.append(f"hat certificate differs from the derivative triple by {mis:.3g}")
    scale = 1.0 + float(np.max(np.abs(cert.P)))
    k2 = float(np.max(np.abs(cert.triple.K2.subs(1, 0.0).coeffs), initial=0.0))
    if k2 > BOUNDARY_TOL * scale:
        viol.append(f"K2(0, x) != 0 (max coefficient {k2:.3g})")
    if boundary:
        fk = float(np.max(np.abs(flux_kernel(cert.triple, model).coeffs), initial=0.0))
        if fk > BOUNDARY_TOL * scale:
            viol.append(f"flux kernel condition violated ({fk:.3g})")
        fs = float(flux_scalar(cert.triple, model))
        if fs > BOUNDARY_TOL * scale:
            viol.append(f"flux inequality violated ({fs:.3g})")
    return viol


def _solve_and_verify(b: _Built, model, d1, d2, eps, rate, kind, boundary, restrict_diag,
                      opts, stage):
    sol = solve(b.problem, opts)
    if not sol.feasible:
        rounds = sol.info.get("rounds") or [{}]
        t = rounds[-1].get("t_upper", float("nan"))
        return Infeasible(stage, d1, d2, model.lam, sol.status,
                          f"margin upper bound {float(t):.3g} after {len(rounds)} round(s)")
    cert, hcert = _certificates(b, sol, d1, d2, eps, restrict_diag)
    viol = post_verify(cert, hcert, model, eps, rate, kind, boundary)
    if viol:
        return Infeasible("verification", d1, d2, model.lam, "rejected", "; ".join(viol))
    return cert, hcert, sol


# ---------------------------------------------------------------------------
# the four procedures


def analyze_stability(model: PdeModel, d1: int, d2: int, eps=DEFAULT_EPS, delta=DEFAULT_RATE,
                      dhat=None, restrict_diag=False, opts: SolverOptions = None):
    b = stability_problem(model, d1, d2, eps, delta, dhat, restrict_diag)
    out = _solve_and_verify(b, model, d1, d2, eps, delta, "s", True, restrict_diag, opts,
                            "stability")
    if not out:
        return out
    cert, hcert, sol = out
    return StabilityReport(cert, hcert, delta, math.sqrt(cert.theta / eps), model.lam,
                           dict(sol.info, iterations=sol.iterations))


def _invert(cert, d1, d2, lam):
    try:
        inv = CollocationInverse(cert.triple)
    except (np.linalg.LinAlgError, ValueError) as exc:
        return Infeasible("inversion", d1, d2, lam, "failed", str(exc))
    res = inv.residual_bound
    if not res <= INVERSION_LIMIT:
        return Infeasible("inversion", d1, d2, lam, "inaccurate",
                          f"inversion residual {res:.3g} > {INVERSION_LIMIT:g}")
    return inv


def controller_gains(cert: XiCertificate, inv: CollocationInverse, model: PdeModel, slack, mu,
                     hcert=None) -> ControllerGains:
    """Gains of u = R1 w(1) + <R2, w> from a controller certificate.

    The closed loop is u = Y1 (Pinv w)(1) + <Y2, Pinv w> with Pinv the inverse
    operator.  Writing (Pinv w)(1) = m1 w(1) + <k, w> and using that Pinv is
    self-adjoint gives R1 = Y1 m1 and R2 = Y1 k + Pinv Y2.
    """
    Y1, Y2 = controller_Y(cert.triple, model, slack)
    m1, k = inv.boundary_row()
    vals = Y1 * k(inv.grid.x) + inv.values(Y2)
    return ControllerGains(float(Y1), Y2, float(Y1 * m1), ChebFun.from_values(inv.grid, vals),
                           inv, mu, cert, hcert)


def observer_gains(cert: XiCertificate, inv: CollocationInverse, model: PdeModel, slack, delta,
                   hcert=None) -> ObserverGains:
    T1, T2, T3, L2 = observer_T(cert.triple, model, slack)
    return ObserverGains(T1, T2, T3, inv.solve(T1 + T3), L2, inv, delta, cert, hcert)


def synth_state_feedback(model: PdeModel, d1: int, d2: int, eps=DEFAULT_EPS, mu=DEFAULT_RATE,
                         slack=0.5, dhat=None, restrict_diag=False, opts=None):
    if not slack > 0:
        raise ValueError("slack must be positive")
    b = controller_problem(model, d1, d2, eps, mu, dhat, restrict_diag)
    out = _solve_and_verify(b, model, d1, d2, eps, mu, "c", False, restrict_diag, opts,
                            "controller")
    if not out:
        return out
    cert, hcert, _ = out
    inv = _invert(cert, d1, d2, model.lam)
    if not inv:
        return inv
    return controller_gains(cert, inv, model, slack, mu, hcert)


def synth_observer(model: PdeModel, d1: int, d2: int, eps=DEFAULT_EPS, delta=DEFAULT_RATE,
                   slack=0.5, dhat=None, restrict_diag=False, opts=None):
    if not slack > 0:
        raise ValueError("slack must be positive")
    b = observer_problem(model, d1, d2, eps, delta, dhat, restrict_diag)
    out = _solve_and_verify(b, model, d1, d2, eps, delta, "s", False, restrict_diag, opts,
                            "observer")
    if not out:
        return out
    cert, hcert, _ = out
    inv = _invert(cert, d1, d2, model.lam)
    if not inv:
        return inv
    return observer_gains(cert, inv, model, slack, delta, hcert)


def synth_output_feedback(model: PdeModel, dC, dO, eps=DEFAULT_EPS, mu=DEFAULT_RATE,
                          delta=DEFAULT_RATE, slack=0.5, opts=None, **kw):
    """Controller and observer from two decoupled SDPs.  ``dC`` and ``dO`` are
    (d1, d2) pairs or single ints."""
    if not (mu > 0 and delta > 0):
        raise ValueError("rates must be positive")
    dC = (dC, dC) if np.isscalar(dC) else tuple(dC)
    dO = (dO, dO) if np.isscalar(dO) else tuple(dO)
    ctrl = synth_state_feedback(model, *dC, eps=eps, mu=mu, slack=slack, opts=opts, **kw)
    if not ctrl:
        return ctrl
    obs = synth_observer(model, *dO, eps=eps, delta=delta, slack=slack, opts=opts, **kw)
    if not obs:
        return obs
    return OutputFeedbackController(ctrl, obs, 0.99 * min(mu, delta))


# ---------------------------------------------------------------------------
# sweeps


class SweepMonotonicityError(RuntimeError):
    pass


@dataclass
class SweepRow:
    d: int
    lam_star: float
    probes: list = field(repr=False)
    seconds: float


MODES = ("stability", "state_fb", "observer", "output_fb")


def _feasibility_check(mode, family, d, eps, rate, restrict_diag, dhat, opts):
    """lambda -> bool, deciding the SDP conditions only (no gain recovery)."""
    builders = {
        "stability": [stability_problem],
        "state_fb": [controller_problem],
        "observer": [observer_problem],
        "output_fb": [controller_problem, observer_problem],
    }[mode]

    def check(lam):
        model = family(lam)
        sols = []
        for make in builders:
            b = make(model, d, d, eps, rate, dhat, restrict_diag)
            sol = solve(b.problem, opts)
            sols.append(sol)
            if not sol.feasible:
                break
        return sols
    return check


def sweep_max_lambda(mode, family, d_list, eps=DEFAULT_EPS, rate=DEFAULT_RATE, lo=0.0, hi=50.0,
                     tol=0.01, restrict_diag=False, dhat=None, opts=None, mono_tol=None):
    """Largest lambda (within ``tol``) for which ``mode``'s conditions hold,
    one row per degree in ``d_list``.  Raises SweepMonotonicityError when
    lambda*(d) decreases by more than ``mono_tol`` (default 2 tol)."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    mono_tol = 2 * tol if mono_tol is None else mono_tol
    rows = []
    for d in d_list:
        check = _feasibility_check(mode, family, d, eps, rate, restrict_diag, dhat, opts)
        probes = []

        class _Joint:
            def __init__(self, sols):
                self.sols = sols
                self.status = "feasible" if all(s.feasible for s in sols) else sols[-1].status
                self.feasible = self.status == "feasible"
                self.info = [s.info for s in sols]

        t0 = time.perf_counter()
        lam = max_feasible_scalar(lambda v: v, lo, hi, tol, record=probes,
                                  solver=lambda v: _Joint(check(v)))
        rows.append(SweepRow(int(d), float(lam), probes, time.perf_counter() - t0))
        log.info("%s d=%d: lambda* = %.4f", mode, d, lam)
    check_monotone(rows, mono_tol)
    return rows


def check_monotone(rows, mono_tol):
    rows = sorted(rows, key=lambda r: r.d)
    for prev, row in zip(rows, rows[1:]):
        if row.d > prev.d and row.lam_star < prev.lam_star - mono_tol:
            raise SweepMonotonicityError(
                f"lambda*({row.d}) = {row.lam_star:.4f} < lambda*({prev.d}) = {prev.lam_star:.4f}")


__all__ = [
    "Infeasible", "StabilityReport", "ControllerGains", "ObserverGains",
    "OutputFeedbackController", "default_hat_degrees", "stability_problem", "controller_problem",
    "observer_problem", "post_verify", "analyze_stability", "controller_gains", "observer_gains",
    "synth_state_feedback", "synth_observer", "synth_output_feedback", "sweep_max_lambda",
    "SweepRow", "SweepMonotonicityError", "check_monotone", "BracketError", "MODES",
]
