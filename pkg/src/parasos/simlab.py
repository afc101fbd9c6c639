"""Finite-difference simulation of the boundary-controlled PDE and numeric
validators (decay rates, empirical stability margins, Lyapunov checks).

States are the values at x_1 < ... < x_m = 1; w(0) = 0 is eliminated.  The
flux condition w_x(1) = u enters through a ghost node mirrored about x = 1,
which keeps the boundary row a central (second-order) difference.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .polycore import PdeModel

log = logging.getLogger(__name__)

AMBIGUOUS_RATE = 1e-3


@dataclass(frozen=True)
class Discretization:
    m: int
    nodes: np.ndarray        # x_1 .. x_m (x_m = 1)
    A: np.ndarray
    Bvec: np.ndarray         # input column of the flux w_x(1) = u
    weights: np.ndarray      # trapezoid weights on the nodes (w(0) = 0 contributes nothing)
    grid: str = "uniform"
    model: PdeModel = None

    @property
    def full_nodes(self):
        return np.concatenate([[0.0], self.nodes])

    def norm(self, w):
        w = np.asarray(w)
        return np.sqrt(np.einsum("...i,i,...i->...", w, self.weights, w))


def grid_nodes(m, grid="uniform"):
    """Nodes x_0 = 0 < x_1 < ... < x_m = 1."""
    if grid == "uniform":
        return np.linspace(0.0, 1.0, m + 1)
    if grid == "log":
        return np.concatenate([[0.0], np.logspace(-1.0, 0.0, m)])
    raise ValueError(f"unknown grid {grid!r}; expected 'uniform' or 'log'")


def trapezoid_weights(x):
    h = np.diff(x)
    q = np.zeros_like(x)
    q[:-1] += 0.5 * h
    q[1:] += 0.5 * h
    return q


def _stencil(hm, hp):
    """Three-point weights (left, centre, right) for f'' and f'."""
    d2 = np.array([2.0 / (hm * (hm + hp)), -2.0 / (hm * hp), 2.0 / (hp * (hm + hp))])
    d1 = np.array([-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp))])
    return d2, d1


def discretize(model: PdeModel, m: int = 128, grid: str = "uniform", bc: str = "controlled",
               min_m: int = 8) -> Discretization:
    """Method-of-lines matrices for w' = A w + B u.

    ``bc="autonomous"`` sets u = 0 (B is still returned for reference).
    ``min_m`` guards the usual m >= 8; lower it only for small studies."""
    if m < min_m:
        raise ValueError(f"m must be at least {min_m}")
    if bc not in ("controlled", "autonomous"):
        raise ValueError(f"unknown bc {bc!r}")
    x = grid_nodes(m, grid)
    a, b, c = (np.asarray(p(x), float) for p in (model.a, model.b, model.c))
    A = np.zeros((m, m))
    B = np.zeros(m)
    for i in range(1, m + 1):
        r = i - 1
        hm = x[i] - x[i - 1]
        hp = x[i + 1] - x[i] if i < m else hm
        d2, d1 = _stencil(hm, hp)
        coef = a[i] * d2 + b[i] * d1
        A[r, r] += coef[1] + c[i]
        if i > 1:
            A[r, r - 1] += coef[0]
        if i < m:
            A[r, r + 1] += coef[2]
        else:
            # ghost w(1 + h) = w(1 - h) + 2 h w_x(1)
            A[r, r - 1] += coef[2]
            B[r] += coef[2] * 2.0 * hm
    q = trapezoid_weights(x)[1:]
    return Discretization(m, x[1:], A, B, q, grid, model)


# ---------------------------------------------------------------------------
# controllers on the grid


@dataclass(frozen=True)
class StateFeedback:
    R1: float
    R2: object            # callable on [0,1]

    def row(self, d: Discretization):
        """u = k . w on the grid."""
        k = d.weights * np.asarray(self.R2(d.nodes), float)
        k[-1] += self.R1
        return k


@dataclass(frozen=True)
class OutputFeedback:
    R1: float
    R2: object
    L1: object
    L2: float


def as_controller(obj):
    """Accept gains objects from the synthesis pipeline or plain controllers."""
    if obj is None or isinstance(obj, (StateFeedback, OutputFeedback)):
        return obj
    if hasattr(obj, "controller") and hasattr(obj, "observer"):
        c, o = obj.controller, obj.observer
        return OutputFeedback(c.R1, c.R2, o.L1, o.L2)
    if hasattr(obj, "R1") and hasattr(obj, "R2"):
        return StateFeedback(obj.R1, obj.R2)
    raise TypeError(f"cannot use {type(obj).__name__} as a controller")


def closed_loop(d: Discretization, controller=None):
    """System matrix of the closed loop; for output feedback the state is
    (w, w_hat)."""
    ctrl = as_controller(controller)
    if ctrl is None:
        return d.A.copy()
    if isinstance(ctrl, StateFeedback):
        return d.A + np.outer(d.Bvec, ctrl.row(d))
    m = d.m
    k = StateFeedback(ctrl.R1, ctrl.R2).row(d)
    l1 = np.asarray(ctrl.L1(d.nodes), float)
    inj = l1 + ctrl.L2 * d.Bvec          # response to v_hat - v
    top = np.hstack([d.A, np.outer(d.Bvec, k)])
    bot = np.hstack([np.zeros((m, m)), d.A + np.outer(d.Bvec, k)])
    bot[:, m - 1] -= inj                 # -(v) term, v = w(1)
    bot[:, 2 * m - 1] += inj             # +(v_hat) term
    return np.vstack([top, bot])


# ---------------------------------------------------------------------------
# time stepping


@dataclass
class Trajectory:
    times: np.ndarray
    nodes: np.ndarray
    states: np.ndarray              # (k, m)
    estimates: np.ndarray = None    # (k, m) observer states
    inputs: np.ndarray = None       # u at each snapshot
    norms: np.ndarray = None
    est_error_norms: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def to_csv(self, path, comment=None):
        """Header row holds the x grid; each row is t followed by w(t, x).
        ``comment`` goes on a leading '#' line."""
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write("# " + comment.replace("\n", " ") + "\n")
            wr = csv.writer(fh)
            wr.writerow(["t"] + [f"{x:.10g}" for x in self.nodes])
            for t, w in zip(self.times, self.states):
                wr.writerow([f"{t:.10g}"] + [f"{v:.12g}" for v in w])
            if self.estimates is not None:
                wr.writerow([])
                wr.writerow(["t (estimate)"] + [f"{x:.10g}" for x in self.nodes])
                for t, w in zip(self.times, self.estimates):
                    wr.writerow([f"{t:.10g}"] + [f"{v:.12g}" for v in w])


class SimulationError(RuntimeError):
    pass


def gaussian_difference(x, c1=0.3, c2=0.7, s=0.07):
    x = np.asarray(x, float)
    return np.exp(-(x - c1) ** 2 / (2 * s * s)) - np.exp(-(x - c2) ** 2 / (2 * s * s))


def simulate(d: Discretization, controller=None, w0=None, T: float = 5.0, dt: float = 1e-3,
             n_save: int = 501, startup: int = 4) -> Trajectory:
    """Crank-Nicolson with ``startup`` backward-Euler half steps to damp the
    stiff modes excited by non-smooth data.  The observer starts at zero."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    ctrl = as_controller(controller)
    Acl = closed_loop(d, ctrl)
    n = Acl.shape[0]
    w0 = gaussian_difference if w0 is None else w0
    w = np.asarray(w0(d.nodes) if callable(w0) else w0, float)
    if w.shape != (d.m,):
        raise ValueError(f"initial profile must have {d.m} values")
    z = np.concatenate([w, np.zeros(d.m)]) if n == 2 * d.m else w.copy()
    steps = max(1, int(round(T / dt)))
    save_every = max(1, steps // max(1, n_save - 1))
    I = np.eye(n)
    try:
        lu_cn = sla.lu_factor(I - 0.5 * dt * Acl)
        lu_be = sla.lu_factor(I - 0.5 * dt * Acl) if startup else None
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SimulationError(f"factorization failed at step 0: {exc}") from exc
    Ep = I + 0.5 * dt * Acl
    times, snaps = [0.0], [z.copy()]
    t = 0.0
    k = 0
    half = 0
    while k < steps:
        if half < 2 * startup and k < steps:
            # two backward-Euler half steps make one step
            z = sla.lu_solve(lu_be, z)
            half += 1
            if half % 2:
                continue
        else:
            z = sla.lu_solve(lu_cn, Ep @ z)
        k += 1
        t = k * dt
        if not np.all(np.isfinite(z)):
            raise SimulationError(f"non-finite state at step {k}")
        if k % save_every == 0 or k == steps:
            times.append(t)
            snaps.append(z.copy())
    Z = np.array(snaps)
    W = Z[:, :d.m]
    traj = Trajectory(np.array(times), d.nodes.copy(), W, norms=d.norm(W),
                      meta=dict(T=T, dt=dt, m=d.m, grid=d.grid, startup=startup))
    if ctrl is None:
        traj.inputs = np.zeros(len(times))
    elif isinstance(ctrl, StateFeedback):
        traj.inputs = W @ ctrl.row(d)
    else:
        What = Z[:, d.m:]
        traj.estimates = What
        traj.inputs = What @ StateFeedback(ctrl.R1, ctrl.R2).row(d)
        traj.est_error_norms = d.norm(What - W)
    return traj


# ---------------------------------------------------------------------------
# validators


def estimate_decay_rate(traj_or_norms, window: float = 0.5, times=None) -> float:
    """Decay rate -slope of log ||w|| over the trailing ``window`` fraction.

    Returns +inf when the norms underflow inside the window."""
    if isinstance(traj_or_norms, Trajectory):
        times, norms = traj_or_norms.times, traj_or_norms.norms
    else:
        norms = np.asarray(traj_or_norms, float)
        if times is None:
            raise ValueError("times are needed with a bare norm sequence")
    times = np.asarray(times, float)
    if not 0 < window <= 1:
        raise ValueError("window must lie in (0, 1]")
    t0 = times[-1] - window * (times[-1] - times[0])
    sel = times >= t0
    nv = norms[sel]
    if np.any(nv <= 1e-300):
        return math.inf
    slope = np.polyfit(times[sel], np.log(nv), 1)[0]
    return float(-slope)


def default_probe_profile(x):
    x = np.asarray(x, float)
    return np.sin(0.5 * np.pi * x) + 0.3 * x * (1.0 - x)


def autonomous_rate(model: PdeModel, m=128, T=5.0, dt=1e-3, grid="uniform"):
    d = discretize(model, m, grid, "autonomous")
    traj = simulate(d, None, default_probe_profile, T, dt, n_save=201)
    return estimate_decay_rate(traj)


def empirical_stability_margin(family, lo=0.0, hi=10.0, tol=0.01, m=128, T=5.0, dt=1e-3):
    """Largest lambda whose autonomous simulation decays, by bisection on the
    estimated rate.  A probe with |rate| <= 1e-3 sits on the margin and is
    returned directly."""
    def rate(lam):
        r = autonomous_rate(family(lam), m, T, dt)
        log.info("lambda %.5g: simulated decay rate %.4g", lam, r)
        return r

    r_lo, r_hi = rate(lo), rate(hi)
    if not r_lo > 0:
        raise ValueError(f"autonomous system already unstable at lo={lo}")
    if r_hi > 0:
        raise ValueError(f"autonomous system still stable at hi={hi}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        r = rate(mid)
        if abs(r) <= AMBIGUOUS_RATE:
            return mid
        lo, hi = (mid, hi) if r > 0 else (lo, mid)
    return 0.5 * (lo + hi)


@dataclass
class LyapunovCheck:
    ok: bool
    values: np.ndarray
    worst_index: int
    worst_excess: float
    rate: float

    def __bool__(self):
        return self.ok


def kernel_matrix(triple, d: Discretization):
    """Trapezoid discretization of X_{M,K1,K2} on the nodes (w(0) = 0)."""
    x = d.nodes
    X, S = np.meshgrid(x, x, indexing="ij")
    K = np.where(S <= X, triple.K1(X, S), triple.K2(X, S))
    return np.diag(np.asarray(triple.M(x), float)) + K * d.weights[None, :]


def lyapunov_values(triple, d: Discretization, states, inverse=False):
    """V(w) = <w, X w> per snapshot, or <w, X^{-1} w> with ``inverse``."""
    Xh = kernel_matrix(triple, d)
    W = np.atleast_2d(states)
    if inverse:
        Y = np.linalg.solve(Xh, W.T).T
    else:
        Y = W @ Xh.T
    return np.einsum("ki,i,ki->k", W, d.weights, Y)


def lyapunov_derivative_check(cert, traj: Trajectory, rate: float, d: Discretization = None,
                              inverse=False, error=False, slack=1e-6) -> LyapunovCheck:
    """V(t_{k+1}) <= V(t_k) exp(-2 rate dt) + slack V(0) along the snapshots.

    ``inverse`` uses <w, X^{-1} w> (the state-feedback functional);
    ``error`` evaluates on the observer error w_hat - w."""
    triple = getattr(cert, "triple", cert)
    if d is None:
        d = Discretization(len(traj.nodes), traj.nodes, None, None,
                           trapezoid_weights(np.concatenate([[0.0], traj.nodes]))[1:])
    states = traj.states
    if error:
        if traj.estimates is None:
            raise ValueError("trajectory has no observer states")
        states = traj.estimates - traj.states
    V = lyapunov_values(triple, d, states, inverse)
    dt = np.diff(traj.times)
    bound = V[:-1] * np.exp(-2.0 * rate * dt) + slack * abs(V[0])
    excess = V[1:] - bound
    k = int(np.argmax(excess)) if excess.size else 0
    worst = float(excess[k]) if excess.size else 0.0
    return LyapunovCheck(bool(worst <= 0.0 and np.all(V > -slack * abs(V[0]))), V, k + 1,
                         worst, rate)


__all__ = [
    "Discretization", "grid_nodes", "trapezoid_weights", "discretize", "StateFeedback",
    "OutputFeedback", "as_controller", "closed_loop", "Trajectory", "SimulationError",
    "gaussian_difference", "simulate", "estimate_decay_rate", "autonomous_rate",
    "empirical_stability_margin", "LyapunovCheck", "kernel_matrix", "lyapunov_values",
    "lyapunov_derivative_check", "default_probe_profile",
]
