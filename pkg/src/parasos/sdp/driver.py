"""Feasibility driver: problem conversion, rank reduction and margin
maximization.

The driver solves

    max t  s.t.  A(X) = b,  X - t I in K,  trace(X) <= R

and classifies by the sign of t*.  Gram-matrix problems from the Lyapunov
conditions are typically weakly feasible (the top-degree directions of every
feasible Gram matrix are forced to zero), so t* is exactly zero on the
feasible side and the classification uses a small tolerance: feasible once an iterate with negligible equality residual has
t >= -tau, infeasible once the dual bound proves t* < -tau.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import ipm
from .problem import SdpProblem, SdpSolution, check_point

log = logging.getLogger(__name__)

EQ_TOL = 1e-7
PSD_TOL = -1e-9


@dataclass
class SolverOptions:
    backend: str = "ipm"          # ipm | cvxopt
    tol: float = 1e-10            # inner interior-point tolerance
    margin_tol: float = 1e-8      # feasibility tolerance on the normalized eigenvalue margin
    eq_tol: float = 1e-9          # relative equality residual accepted for a feasible iterate
    good_margin: float = 1e-3     # stop early once the normalized margin exceeds this
    maxiter: int = 150
    trace_growth: tuple = (1.0, 1e2, 1e4)
    dump: str = None              # write the problem as sparse SDPA to this path
    verbose: bool = False


@dataclass
class _Conic:
    """Problem in cone form over shifted blocks X_k = P_k - shift E00."""

    A_s: list          # dense (m, n, n) symmetric
    A_l: np.ndarray    # (m, p)
    b: np.ndarray
    dims: list
    problem: SdpProblem
    lmap: list         # (variable offset, sign) per l column


def to_conic(problem: SdpProblem) -> _Conic:
    A, b = problem.system()
    A = sp.csc_matrix(A)
    m = A.shape[0]
    b = b.astype(float).copy()
    A_s, dims = [], []
    for v in problem.matrix_vars:
        n = v.psd_dim
        sub = A[:, v.offset:v.offset + v.nentries].tocoo()
        i, j = v.iu[sub.col], v.ju[sub.col]
        T = np.zeros((m, n, n))
        off = i != j
        np.add.at(T, (sub.row[~off], i[~off], j[~off]), sub.data[~off])
        np.add.at(T, (sub.row[off], i[off], j[off]), 0.5 * sub.data[off])
        np.add.at(T, (sub.row[off], j[off], i[off]), 0.5 * sub.data[off])
        if v.shift:
            b -= v.shift * T[:, 0, 0]
        A_s.append(T)
        dims.append(n)
    cols, lmap = [], []
    for s in problem.scalar_vars:
        col = A[:, s.offset].toarray().ravel()
        cols.append(col)
        lmap.append((s.offset, 1.0))
        if not s.nonneg:
            cols.append(-col)
            lmap.append((s.offset, -1.0))
    A_l = np.array(cols).T if cols else np.zeros((m, 0))
    return _Conic(A_s, A_l, b, dims, problem, lmap)


def _flat(con: _Conic):
    """Constraint rows over [blocks (r_k*r_k each), scalars]."""
    parts = [T.reshape(T.shape[0], -1) for T in con.A_s]
    parts.append(con.A_l)
    return np.hstack(parts)


def _row_basis(F, b, tol=1e-10):
    """Independent, normalized rows of [F | b]; reports inconsistency."""
    norms = np.linalg.norm(F, axis=1)
    bscale = 1.0 + np.max(np.abs(b), initial=0.0)
    zero = norms <= 1e-12 * (1.0 + np.max(norms, initial=0.0))
    inconsistent = bool(np.any(np.abs(b[zero]) > 1e-9 * bscale))
    keep = np.nonzero(~zero)[0]
    if keep.size == 0:
        return keep, inconsistent, 0.0
    Fk = F[keep] / norms[keep, None]
    bk = b[keep] / norms[keep]
    Q, R, piv = sla.qr(Fk.T, mode="economic", pivoting=True)
    dR = np.abs(np.diag(R))
    r = int(np.sum(dR > tol * dR[0])) if dR.size else 0
    rows = keep[np.sort(piv[:r])]
    # consistency of the dropped rows
    Fr = F[rows] / norms[rows, None]
    y, *_ = np.linalg.lstsq(Fr @ Fr.T, b[rows] / norms[rows], rcond=None)
    xls = Fr.T @ y
    res = np.max(np.abs(Fk @ xls - bk), initial=0.0)
    inconsistent = inconsistent or res > 1e-7 * (1.0 + np.max(np.abs(bk)))
    return rows, inconsistent, float(res)


@dataclass
class MarginResult:
    t: float                 # margin of the returned iterate
    t_upper: float           # dual upper bound on the margin
    X: list                  # shifted blocks (margin included)
    x: np.ndarray
    pres: float
    trace_active: bool
    status: str
    iterations: int


def _margin_problem(F, b, dims, nl, scale_R=1.0):
    """Cone data of   min -t'  s.t.  A(X' + (t' - T) I) = b,
    sum tr X' + nu t' + s = R + nu T,   with a least-norm start."""
    nu = sum(dims) + nl
    m = F.shape[0]
    A3, pos = [], 0
    for rk in dims:
        A3.append(F[:, pos:pos + rk * rk].reshape(m, rk, rk))
        pos += rk * rk
    Al = F[:, pos:pos + nl]
    g = Al.sum(axis=1)
    for T in A3:
        g = g + np.trace(T, axis1=1, axis2=2)
    if m:
        yls, *_ = np.linalg.lstsq(F @ F.T, b, rcond=None)
        xls = F.T @ yls
    else:
        xls = np.zeros(F.shape[1])
    X0, pos = [], 0
    for rk in dims:
        S = xls[pos:pos + rk * rk].reshape(rk, rk)
        X0.append(0.5 * (S + S.T))
        pos += rk * rk
    x0 = xls[pos:pos + nl]
    eigs = [np.linalg.eigvalsh(S)[0] for S in X0 if S.size] + list(x0)
    t0 = float(min(eigs)) if eigs else 0.0
    # X' = X0 - (t0 - 1) I >= I, and t = t' - Tsh with t' = 1 at the start
    Xs = [S - (t0 - 1.0) * np.eye(S.shape[0]) for S in X0]
    xs = x0 - (t0 - 1.0)
    Tsh = 2.0 - t0
    tr0 = sum(np.trace(S) for S in Xs) + float(np.sum(xs))
    R = scale_R * max(2.0 * nu, 2.0 * (tr0 + nu))
    sig0 = R + nu * Tsh - tr0 - nu
    A_s = []
    for T in A3:
        rk = T.shape[1]
        A_s.append(sp.vstack([sp.csr_matrix(T.reshape(m, -1)),
                              sp.csr_matrix(np.eye(rk).reshape(1, -1))]).tocsr())
    A_l = np.zeros((m + 1, nl + 2))
    A_l[:m, :nl] = Al
    A_l[:m, nl] = g
    A_l[m, :nl] = 1.0
    A_l[m, nl] = nu
    A_l[m, nl + 1] = 1.0
    bb = np.concatenate([b + Tsh * g, [R + nu * Tsh]])
    c_l = np.zeros(nl + 2)
    c_l[nl] = -1.0
    data = ipm.ConeData(A_s, list(dims), A_l, bb, [np.zeros((rk, rk)) for rk in dims], c_l)
    # dual start y_R = -k gives Z = k I and z = (k, k nu - 1, k)
    k = 1.0 if nu > 1 else 2.0
    y0 = np.zeros(m + 1)
    y0[m] = -k
    start = dict(X0=Xs, x0=np.concatenate([xs, [1.0, sig0]]), y0=y0,
                 Z0=[k * np.eye(rk) for rk in dims],
                 z0=np.concatenate([k * np.ones(nl), [k * nu - 1.0, k]]))
    return data, start, dict(Tsh=Tsh, R=R, nu=nu, m=m)


def _solve_margin(F, b, dims, nl, opts: SolverOptions, scale_R=1.0):
    data, start, meta = _margin_problem(F, b, dims, nl, scale_R)
    Tsh, R, nu = meta["Tsh"], meta["R"], meta["nu"]
    tau = opts.margin_tol * R / nu
    good = opts.good_margin * R / nu
    best = {}

    def unpack(Xl, xl):
        t = float(xl[nl] - Tsh)
        return t, [S + t * np.eye(S.shape[0]) for S in Xl], xl[:nl] + t

    if opts.backend == "cvxopt":
        from .cvxopt_backend import solve_cone
        res = solve_cone(data, tol=opts.tol)
        t, X, x = unpack(res.X, res.x)
        best.update(t=t, X=X, x=x, pres=res.pres)
    else:
        def stop(st):
            t, X, x = unpack(st["X"], st["x"])
            if st["pres"] < opts.eq_tol and t > best.get("t", -np.inf):
                best.update(t=t, X=[S.copy() for S in X], x=x.copy(), pres=st["pres"])
            if best.get("t", -np.inf) > good:
                return "interior"
            t_ub = -st["dobj"] - Tsh
            if st["dres"] < opts.eq_tol and t_ub < -tau and abs(st["y"][-1]) * R < tau:
                return "infeasible_bound"
            return None

        res = ipm.solve(data, **start, tol=opts.tol, maxiter=opts.maxiter, stop=stop,
                        verbose=opts.verbose)
        if not best:
            t, X, x = unpack(res.X, res.x)
            best.update(t=t, X=X, x=x, pres=res.pres)
    t_ub = float(-res.dobj - Tsh) if res.dres < opts.eq_tol else np.inf
    trace_active = abs(res.y[-1]) * R >= tau
    return MarginResult(best["t"], t_ub, best["X"], best["x"], best["pres"], trace_active,
                        res.status, res.iterations), tau


def _assemble(con: _Conic, mr: MarginResult):
    prob = con.problem
    vals = np.zeros(prob.nvars)
    for var, X in zip(prob.matrix_vars, mr.X):
        P = np.zeros((var.dim, var.dim))
        P[:var.psd_dim, :var.psd_dim] = X
        P[0, 0] += var.shift
        vals[var.offset:var.offset + var.nentries] = P[var.iu, var.ju]
    for (off, sgn), xv in zip(con.lmap, mr.x):
        vals[off] += sgn * xv
    return vals


def solve(problem: SdpProblem, opts: SolverOptions = None) -> SdpSolution:
    """Decide feasibility of ``problem`` and return the best point found."""
    opts = opts or SolverOptions()
    if opts.dump:
        from .sdpa import write_sdpa
        write_sdpa(problem, opts.dump)
    con = to_conic(problem)
    F = _flat(con)
    rows, inconsistent, res = _row_basis(F, con.b)
    info = dict(rows=int(rows.size), equalities=int(con.b.size), rounds=[])
    if inconsistent:
        info["inconsistent"] = res
        return SdpSolution(np.zeros(problem.nvars), "infeasible", float("inf"), float("-inf"),
                           float("nan"), 0, opts.backend, info)
    norms = np.linalg.norm(F[rows], axis=1)
    Fn, bn = F[rows] / norms[:, None], con.b[rows] / norms
    nl = con.A_l.shape[1]
    iters, status, mr, tau0 = 0, "inaccurate", None, None
    for growth in opts.trace_growth:
        mr, tau = _solve_margin(Fn, bn, con.dims, nl, opts, growth)
        tau0 = tau if tau0 is None else tau0
        iters += mr.iterations
        info["rounds"].append(dict(t=mr.t, t_upper=mr.t_upper, tau=tau, status=mr.status,
                                   iterations=mr.iterations, trace_active=mr.trace_active))
        log.debug("margin %.3e (bound %.3e, tau %.1e, %s)", mr.t, mr.t_upper, tau, mr.status)
        if mr.t >= -tau and mr.pres < opts.eq_tol:
            status = "feasible"
            break
        if mr.t_upper < -tau:
            if not mr.trace_active:
                status = "infeasible"
                break
            continue
        status = "inaccurate"
        break
    vals = _assemble(con, mr)
    res, mineig = check_point(problem, vals)
    # the point must meet the tolerance of the unscaled first round, so a
    # feasible verdict never rests on a grown trace bound
    psd_tol = max(-PSD_TOL, tau0 if tau0 is not None else 0.0)
    info["psd_tol"] = psd_tol
    if status == "feasible" and not (res <= EQ_TOL and mineig >= -psd_tol):
        info["verify"] = dict(eq=res, eig=mineig)
        status = "inaccurate"
    return SdpSolution(vals, status, res, mineig, mr.t, iters, opts.backend, info)
