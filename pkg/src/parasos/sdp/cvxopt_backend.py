"""Adapter running the standard-form cone problem through cvxopt.conelp.

Optional second backend, used for cross-checks; the in-tree interior-point
method is the reference.  Each PSD block is parameterized by its lower
triangle, which cvxopt's 's' cone reads directly.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .ipm import ConeData, IpmResult, _Aop, _ATop, _inner


def _lower(n):
    return np.tril_indices(n)


def solve_cone(data: ConeData, tol=1e-9, maxiter=100) -> IpmResult:
    try:
        import cvxopt
        from cvxopt import solvers
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError("the cvxopt backend needs the cvxopt package") from exc
    m, p = data.m, data.A_l.shape[1]
    cols_A, cols_c, G_rows, G_cols = [], [], [], []
    col = 0
    # orthant first (cvxopt orders cones as l, q, s)
    if p:
        cols_A.append(sp.csr_matrix(data.A_l))
        cols_c.append(data.c_l)
        G_rows += list(range(p))
        G_cols += list(range(p))
        col = p
    row = p
    Gvals = [-1.0] * len(G_rows)
    for A, n, C in zip(data.A_s, data.dims, data.C_s):
        li, lj = _lower(n)
        A = sp.csr_matrix(A)
        off = li != lj
        wt = np.where(off, 2.0, 1.0)
        # rows of A are symmetric matrices, so an off-diagonal entry counts twice
        cols_A.append(sp.csr_matrix(A[:, li * n + lj].multiply(wt[None, :])))
        cc = wt * C[li, lj]
        cols_c.append(cc)
        # column-major position of the lower entry (i, j) is j * n + i
        G_rows += (row + lj * n + li).tolist()
        G_cols += (col + np.arange(li.size)).tolist()
        Gvals += [-1.0] * li.size
        row += n * n
        col += li.size
    Afull = sp.hstack(cols_A).tocoo()
    c = np.concatenate(cols_c)
    Gc = cvxopt.spmatrix(Gvals, G_rows, G_cols, (row, col))
    Ac = cvxopt.spmatrix(Afull.data.tolist(), Afull.row.tolist(), Afull.col.tolist(), (m, col))
    dims = {"l": p, "q": [], "s": list(data.dims)}
    tol = max(tol, 1e-9)  # tighter requests only exhaust the iteration cap
    opts = dict(show_progress=False, abstol=tol, reltol=tol, feastol=tol, maxiters=maxiter)
    sol = solvers.conelp(cvxopt.matrix(c), Gc, cvxopt.matrix(np.zeros(row)), dims, Ac,
                         cvxopt.matrix(np.asarray(data.b, float)), options=opts)
    u = np.array(sol["x"]).ravel()
    zc = np.array(sol["z"]).ravel()
    y = -np.array(sol["y"]).ravel()
    x = u[:p].copy()
    X, Z = [], []
    pos, zpos = p, p
    for n in data.dims:
        li, lj = _lower(n)
        S = np.zeros((n, n))
        S[li, lj] = u[pos:pos + li.size]
        S[lj, li] = u[pos:pos + li.size]
        X.append(S)
        W = zc[zpos:zpos + n * n].reshape(n, n, order="F")
        Z.append(0.5 * (W + W.T))
        pos += li.size
        zpos += n * n
    z = zc[:p].copy()
    rp = data.b - _Aop(data, X, x)
    ATy, ATy_l = _ATop(data, y)
    bnorm = 1.0 + np.linalg.norm(data.b)
    cnorm = 1.0 + np.sqrt(sum(np.sum(C ** 2) for C in data.C_s) + np.sum(data.c_l ** 2))
    dres = np.sqrt(sum(np.sum((C - a - Zk) ** 2) for C, a, Zk in zip(data.C_s, ATy, Z))
                   + np.sum((data.c_l - ATy_l - z) ** 2)) / cnorm
    status = "optimal" if sol["status"] == "optimal" else str(sol["status"])
    return IpmResult(X, x, y, Z, z, status, int(sol.get("iterations", 0)),
                     _inner(data.C_s, data.c_l, X, x), float(data.b @ y),
                     float(np.linalg.norm(rp) / bnorm), float(dres))
