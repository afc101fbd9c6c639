"""Analytic comparison oracles: a Sturm-Liouville bound for static output
feedback, backstepping kernels for the reaction-diffusion equation, and the
conditioning of finite-difference controllability matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import brentq

from .polycore import PdeModel, Poly1, gauss_nodes
from .simlab import discretize

SERIES_TERMS = 30


# ---------------------------------------------------------------------------
# Sturm-Liouville comparison


@dataclass(frozen=True)
class SturmLiouvilleBound:
    p0: float
    q1: float
    sigma1: float
    mu1cc: float
    threshold: float      # lambda at which mu1cc changes sign


def _scan_bounds(v, h):
    """min and max of samples v (spacing h) widened by a Lipschitz margin."""
    lip = float(np.max(np.abs(np.diff(v)))) / h if v.size > 1 else 0.0
    pad = 0.5 * h * lip
    return float(v.min()) - pad, float(v.max()) + pad


def _sl_terms(model: PdeModel, xs):
    a, b, c = model.a(xs), model.b(xs), model.c(xs)
    # p = a(0) exp(int_0^x b/a) turns a w_xx + b w_x into (p w_x)_x / sigma, sigma = p / a
    p = float(model.a(0.0)) * np.exp(cumulative_trapezoid(b / a, xs, initial=0.0))
    return p, c * p / a, p / a


def sturm_liouville_bound(model: PdeModel, n: int = 10_001) -> SturmLiouvilleBound:
    """First eigenvalue of the constant-coefficient comparison problem,
    mu1cc = (q1 - p0 pi^2) / sigma1 with p0 = min p, q1 = max q and
    sigma1 = max sigma; ``threshold`` is the lambda where it vanishes."""
    xs = np.linspace(0.0, 1.0, n)
    h = xs[1] - xs[0]

    def bound(m):
        p, q, sig = _sl_terms(m, xs)
        p0 = _scan_bounds(p, h)[0]
        q1 = _scan_bounds(q, h)[1]
        s1 = _scan_bounds(sig, h)[1]
        return p0, q1, s1, (q1 - p0 * math.pi ** 2) / s1

    p0, q1, s1, mu = bound(model)
    f = lambda lam: bound(model.with_lambda(lam))[3]  # noqa: E731
    lo, hi = model.lam - 1.0, model.lam + 1.0
    while f(lo) > 0:
        lo -= 2.0 * (hi - lo)
    while f(hi) < 0:
        hi += 2.0 * (hi - lo)
    thr = brentq(f, lo, hi, xtol=1e-12)
    return SturmLiouvilleBound(p0, q1, s1, mu, thr)


# ---------------------------------------------------------------------------
# backstepping


def _check_tail(u, last, out, terms):
    ratio = np.abs(u) / ((terms + 1) * (terms + 2))
    if np.any(ratio >= 0.5):
        raise ValueError("series truncated too early for this argument; lower lambda")
    tail = np.abs(last) * ratio / (1.0 - ratio)
    if np.any(tail > 1e-14 * np.maximum(1.0, np.abs(out))):
        raise ValueError("series truncated too early for this argument; lower lambda")


def _series(s, sign, terms=SERIES_TERMS, deriv=False):
    """f(s) = sum_k (sign s / 4)^k / (2 k! (k+1)!), which is I1(z)/z (sign +1)
    or J1(z)/z (sign -1) at s = z^2; with ``deriv`` the derivative f'(s)."""
    s = np.asarray(s, float)
    u = sign * s / 4.0
    if deriv:
        # f'(s) = (sign / 8) sum_j u^j / (j! (j+2)!)
        term = np.full_like(s, sign / 16.0)
        shift = 3
    else:
        term = np.full_like(s, 0.5)
        shift = 2
    out = np.zeros_like(s)
    for k in range(terms):
        out = out + term
        last = term
        term = term * u / ((k + 1) * (k + shift))
    _check_tail(u, last, out, terms)
    return out


def bessel_i1_over_z(z, terms=SERIES_TERMS):
    return _series(np.square(z), 1.0, terms)


def bessel_j1_over_z(z, terms=SERIES_TERMS):
    return _series(np.square(z), -1.0, terms)


def backstepping_kernels(lam: float, x, xi):
    """(E, F) on 0 <= xi <= x <= 1, with z^2 = lam (x^2 - xi^2)."""
    x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
    if np.any(xi < 0) or np.any(xi > x + 1e-15) or np.any(x > 1 + 1e-15):
        raise ValueError("backstepping kernels need 0 <= xi <= x <= 1")
    s = lam * (x * x - xi * xi)
    E = -lam * xi * _series(s, 1.0)
    F = -lam * xi * _series(s, -1.0)
    return (E, F) if E.ndim else (float(E), float(F))


@dataclass(frozen=True)
class BacksteppingController:
    lam: float
    R1: float

    def R2(self, x):
        x = np.asarray(x, float)
        # D1 E(1, x) = -lam x * 2 lam * f'(lam (1 - x^2))
        v = -2.0 * self.lam ** 2 * x * _series(self.lam * (1.0 - x * x), 1.0, deriv=True)
        return v if v.ndim else float(v)


def backstepping_controller(lam: float) -> BacksteppingController:
    """u = E(1,1) w(1) + int_0^1 D1E(1,x) w(x) dx for w_t = w_xx + lam w."""
    return BacksteppingController(float(lam), -0.5 * lam)


def _volterra(kernel, lam, w, xs, sign):
    """(w + sign int_0^x K(x,s) w(s) ds) at xs, by Gauss quadrature."""
    g, wg = gauss_nodes()
    out = np.empty_like(xs)
    for i, x in enumerate(xs):
        s = g * x
        K = kernel(lam, np.full_like(s, x), s)
        out[i] = np.squeeze(w(x)) + sign * x * np.dot(wg, K * w(s))
    return out


def inverse_pair_residual(lam: float, w=None, n: int = 101) -> float:
    """max |w - (I + F)(I - E) w| on an n-point grid (sup norm)."""
    w = w or Poly1([0.0, 1.3, -0.7, 0.4])
    xs = np.linspace(0.0, 1.0, n)
    E = lambda l, x, s: backstepping_kernels(l, x, s)[0]  # noqa: E731
    F = lambda l, x, s: backstepping_kernels(l, x, s)[1]  # noqa: E731

    def z(x):
        x = np.atleast_1d(np.asarray(x, float))
        return _volterra(E, lam, w, x, -1.0)

    back = _volterra(F, lam, z, xs, 1.0)
    return float(np.max(np.abs(back - w(xs))))


# ---------------------------------------------------------------------------
# collocated static feedback


def collocated_model():
    """a = 1, b = 0, c = pi^2/4: the dissipative case A + A* <= 0."""
    return PdeModel(Poly1([1.0]), Poly1([0.0]), Poly1([0.25 * math.pi ** 2]), 0.0)


@dataclass(frozen=True)
class CollocatedRate:
    kappa: float
    analytic: float       # k^2 - pi^2/4 with k in (pi/2, pi) solving k cos k = -kappa sin k
    simulated: float
    limit: float = 0.75 * math.pi ** 2


def collocated_decay_rate(kappa: float, m: int = 256, T: float = 1.0, dt: float = 1e-4):
    """Decay rate of w_t = w_xx + (pi^2/4) w under u = -kappa w(1): the slowest
    mode sin(k x) from the Sturm-Liouville boundary condition, and the rate
    fitted to a simulation of the discretized loop."""
    from .simlab import StateFeedback, estimate_decay_rate, simulate

    if not kappa > 0:
        raise ValueError("kappa must be positive")
    k = brentq(lambda k: k * math.cos(k) + kappa * math.sin(k), 0.5 * math.pi + 1e-12,
               math.pi - 1e-15)
    d = discretize(collocated_model(), m, "uniform", "controlled")
    ctrl = StateFeedback(-float(kappa), lambda x: np.zeros_like(x))
    traj = simulate(d, ctrl, lambda x: np.sin(0.5 * np.pi * x), T, dt, n_save=201)
    return CollocatedRate(float(kappa), k * k - 0.25 * math.pi ** 2,
                          estimate_decay_rate(traj, window=0.5))


# ---------------------------------------------------------------------------
# controllability of the reduced model


def controllability_model():
    return PdeModel(Poly1([1.0]), Poly1([0.0]), Poly1([0.0]), 15.0)


def controllability_matrix(A, B):
    m = B.size
    C = np.empty((m, m))
    v = B.astype(float).copy()
    for k in range(m):
        C[:, k] = v
        v = A @ v
    return C


def controllability_condition(m: int, grid: str = "uniform", model: PdeModel = None) -> float:
    """2-norm condition number of [B, AB, ..., A^(m-1) B]."""
    if m < 2:
        raise ValueError("m must be at least 2")
    d = discretize(model or controllability_model(), m, grid, "controlled", min_m=2)
    return float(np.linalg.cond(controllability_matrix(d.A, d.Bvec)))


def hautus_measures(A, B):
    """|v_i^T B| / (|v_i| |B|) for each left eigenvector v_i of A."""
    _, W = np.linalg.eig(A.T)
    return np.abs(W.T @ B) / (np.linalg.norm(W, axis=0) * np.linalg.norm(B))


def uncontrollable_modes(m: int, grid: str = "log", model: PdeModel = None, tol=None) -> int:
    """Number of modes failing the Hautus test at tolerance m * machine eps."""
    d = discretize(model or controllability_model(), m, grid, "controlled", min_m=2)
    tol = m * np.finfo(float).eps if tol is None else tol
    return int(np.sum(hautus_measures(d.A, d.Bvec) < tol))


__all__ = [
    "SturmLiouvilleBound", "sturm_liouville_bound", "bessel_i1_over_z", "bessel_j1_over_z",
    "backstepping_kernels", "BacksteppingController", "backstepping_controller",
    "inverse_pair_residual", "controllability_model", "controllability_matrix",
    "controllability_condition", "hautus_measures", "uncontrollable_modes",
    "collocated_model", "CollocatedRate", "collocated_decay_rate",
]
