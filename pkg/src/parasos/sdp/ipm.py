"""Primal-dual path-following interior-point method with NT scaling.

Standard form over a product of PSD blocks and one nonnegative orthant:

    min  <C, X>   s.t.  A(X) = b,  X in K
    max  b'y      s.t.  A*(y) + Z = C,  Z in K

Mehrotra predictor-corrector steps.  The Newton system is solved in the
NT-scaled space as a least-squares problem: with the scaled constraint
matrix B (columns svec(G^T A_i G)) factored as B = Q R, the primal step is
u - (I - Q Q^T) v with u the least-norm solution of the primal residual.
The normal equations B^T B are never formed, so the conditioning of the
step is that of B rather than its square.  Gram-matrix feasibility problems
are degenerate and the scaling gets very ill-conditioned near the optimum,
which is where this matters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

SQRT2 = np.sqrt(2.0)


@dataclass
class ConeData:
    A_s: list            # sparse (m, n*n) per PSD block, rows are symmetric matrices
    dims: list           # block sizes
    A_l: np.ndarray      # (m, p)
    b: np.ndarray
    C_s: list            # dense (n, n)
    c_l: np.ndarray

    @property
    def m(self):
        return self.b.size


@dataclass
class IpmResult:
    X: list
    x: np.ndarray
    y: np.ndarray
    Z: list
    z: np.ndarray
    status: str
    iterations: int
    pobj: float
    dobj: float
    pres: float
    dres: float
    history: list = field(default_factory=list)


def _Aop(data, X, x):
    out = data.A_l @ x if data.A_l.shape[1] else np.zeros(data.m)
    for A, Xk in zip(data.A_s, X):
        out = out + A @ Xk.ravel()
    return out


def _ATop(data, y):
    Zs = [np.asarray(A.T @ y).reshape(n, n) for A, n in zip(data.A_s, data.dims)]
    z = data.A_l.T @ y if data.A_l.shape[1] else np.zeros(0)
    return Zs, z


def _inner(X, x, Z, z):
    return sum(float(np.vdot(a, b)) for a, b in zip(X, Z)) + float(np.dot(x, z))


def _svec_index(n):
    iu, ju = np.triu_indices(n)
    return iu, ju, np.where(iu == ju, 1.0, SQRT2)


def _svec(S, idx):
    iu, ju, w = idx
    return S[..., iu, ju] * w


def _smat(v, n, idx):
    iu, ju, w = idx
    S = np.zeros((n, n))
    S[iu, ju] = v / w
    S[ju, iu] = v / w
    return S


def _scaled_step(lam, D):
    """Largest alpha with diag(lam) + alpha D PSD."""
    if D.size == 0:
        return np.inf
    r = 1.0 / np.sqrt(lam)
    S = (D * r[:, None]) * r[None, :]
    mn = np.linalg.eigvalsh(0.5 * (S + S.T))[0]
    return np.inf if mn >= 0 else -1.0 / mn


def _max_step_l(x, dx):
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


def _nt_scaling(X, Z):
    """G with G^-1 X G^-T = G^T Z G = diag(lam), from the SVD of Lz^T Lx."""
    Lx = np.linalg.cholesky(X)
    Lz = np.linalg.cholesky(Z)
    U, lam, Vt = np.linalg.svd(Lz.T @ Lx)
    lam = np.maximum(lam, 1e-300)
    G = (Lx @ Vt.T) / np.sqrt(lam)
    Gi = (U.T @ Lz.T) / np.sqrt(lam)[:, None]
    return G, Gi, lam


def solve(data: ConeData, X0=None, x0=None, y0=None, Z0=None, z0=None, tol=1e-9,
          maxiter=100, stop=None, verbose=False) -> IpmResult:
    """Solve the primal-dual pair.  ``stop(state)`` may end the run early by
    returning a status string."""
    m = data.m
    dims = list(data.dims)
    p = data.A_l.shape[1]
    nu = sum(dims) + p
    X = [np.eye(n) for n in dims] if X0 is None else [np.array(a, float) for a in X0]
    Z = [np.eye(n) for n in dims] if Z0 is None else [np.array(a, float) for a in Z0]
    x = np.ones(p) if x0 is None else np.array(x0, float)
    z = np.ones(p) if z0 is None else np.array(z0, float)
    y = np.zeros(m) if y0 is None else np.array(y0, float)
    Adense = [np.asarray(A.todense()).reshape(m, n, n) for A, n in zip(data.A_s, dims)]
    idxs = [_svec_index(n) for n in dims]
    bnorm = 1.0 + np.linalg.norm(data.b)
    cnorm = 1.0 + np.sqrt(sum(np.sum(C ** 2) for C in data.C_s) + np.sum(data.c_l ** 2))
    hist = []
    status = "max_iter"
    it = 0
    for it in range(1, maxiter + 1):
        rp = data.b - _Aop(data, X, x)
        ATy, ATy_l = _ATop(data, y)
        Rd = [C - a - Zk for C, a, Zk in zip(data.C_s, ATy, Z)]
        rd_l = data.c_l - ATy_l - z
        mu = _inner(X, x, Z, z) / nu
        pobj = _inner(data.C_s, data.c_l, X, x)
        dobj = float(data.b @ y)
        pres = np.linalg.norm(rp) / bnorm
        dres = np.sqrt(sum(np.sum(r ** 2) for r in Rd) + np.sum(rd_l ** 2)) / cnorm
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        hist.append((pobj, dobj, pres, dres, mu))
        if verbose:
            print(f"{it:3d} p={pobj:+.6e} d={dobj:+.6e} pres={pres:.1e} dres={dres:.1e} mu={mu:.1e}")
        if stop is not None:
            s = stop(dict(X=X, x=x, y=y, Z=Z, z=z, pobj=pobj, dobj=dobj, pres=pres, dres=dres,
                          mu=mu, it=it))
            if s:
                status = s
                break
        if pres < tol and dres < tol and (gap < tol or mu < tol * 1e-2):
            status = "optimal"
            break

        try:
            scal = [_nt_scaling(Xk, Zk) for Xk, Zk in zip(X, Z)]
        except np.linalg.LinAlgError:
            status = "numerical_error"
            break
        dl = np.sqrt(x / z) if p else np.zeros(0)
        lam_l = np.sqrt(x * z) if p else np.zeros(0)
        cols = [_svec(np.matmul(G.T, np.matmul(A, G)), idx)
                for A, (G, _, _), idx in zip(Adense, scal, idxs)]
        if p:
            cols.append(data.A_l * dl)
        B = np.hstack(cols).T
        if not np.all(np.isfinite(B)):
            status = "numerical_error"
            break
        Q, R = np.linalg.qr(B)
        dR = np.abs(np.diag(R))
        if dR.min() <= 1e-15 * dR.max():
            status = "numerical_error"
            break
        Rd_v = np.concatenate([_svec(G.T @ r @ G, idx) for (G, _, _), r, idx in zip(scal, Rd, idxs)]
                              + [dl * rd_l])
        w_p = sla.solve_triangular(R, rp, trans="T", check_finite=False)
        u = Q @ w_p

        def direction(sig_mu, corr):
            # scaled complementarity: dXs + dZs = H
            Hs = []
            for k, ((G, Gi, lam), idx) in enumerate(zip(scal, idxs)):
                Rm = np.diag(2.0 * sig_mu - 2.0 * lam ** 2)
                if corr is not None:
                    Rm = Rm - corr[0][k]
                Hs.append(_svec(Rm / (lam[:, None] + lam[None, :]), idx))
            if p:
                hl = (sig_mu - lam_l ** 2) / lam_l
                if corr is not None:
                    hl = hl - corr[1] / lam_l
                Hs.append(hl)
            v = Rd_v - np.concatenate(Hs)
            Qtv = Q.T @ v
            dXs = u - (v - Q @ Qtv)
            dy = sla.solve_triangular(R, w_p + Qtv, check_finite=False)
            dX, pos = [], 0
            for (G, _, _), idx, n in zip(scal, idxs, dims):
                k = n * (n + 1) // 2
                dX.append(G @ _smat(dXs[pos:pos + k], n, idx) @ G.T)
                pos += k
            dx = dl * dXs[pos:]
            ATdy, ATdy_l = _ATop(data, dy)
            dZ = [r - a for r, a in zip(Rd, ATdy)]
            dz = rd_l - ATdy_l
            return [0.5 * (d + d.T) for d in dX], dx, dy, dZ, dz

        def scaled(dX, dZ):
            Dx = [Gi @ d @ Gi.T for (_, Gi, _), d in zip(scal, dX)]
            Dz = [G.T @ d @ G for (G, _, _), d in zip(scal, dZ)]
            return Dx, Dz

        def steps(Dx, dx, Dz, dz):
            ap = [_scaled_step(lam, d) for (_, _, lam), d in zip(scal, Dx)]
            ad = [_scaled_step(lam, d) for (_, _, lam), d in zip(scal, Dz)]
            return min(ap + [_max_step_l(x, dx)]), min(ad + [_max_step_l(z, dz)])

        dX, dx, dy, dZ, dz = direction(0.0, None)
        Dx, Dz = scaled(dX, dZ)
        ap, ad = steps(Dx, dx, Dz, dz)
        ap, ad = min(1.0, ap), min(1.0, ad)
        Xa = [a + ap * d for a, d in zip(X, dX)]
        Za = [a + ad * d for a, d in zip(Z, dZ)]
        mu_aff = _inner(Xa, x + ap * dx, Za, z + ad * dz) / nu
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        corr_s = [a @ b + b @ a for a, b in zip(Dx, Dz)]
        corr_l = dx * dz
        dX, dx, dy, dZ, dz = direction(sigma * mu, (corr_s, corr_l))
        Dx, Dz = scaled(dX, dZ)
        ap, ad = steps(Dx, dx, Dz, dz)
        gamma = 0.98 if mu > 1e-6 else 0.995
        ap = min(1.0, gamma * ap)
        ad = min(1.0, gamma * ad)
        if verbose:
            print(f"      sigma={sigma:.2e} ap={ap:.3e} ad={ad:.3e}")
        X = [a + ap * d for a, d in zip(X, dX)]
        X = [0.5 * (a + a.T) for a in X]
        x = x + ap * dx
        y = y + ad * dy
        Z = [a + ad * d for a, d in zip(Z, dZ)]
        Z = [0.5 * (a + a.T) for a in Z]
        z = z + ad * dz
        if ap < 1e-10 and ad < 1e-10:
            status = "stalled"
            break
    rp = data.b - _Aop(data, X, x)
    ATy, ATy_l = _ATop(data, y)
    dres = np.sqrt(sum(np.sum((C - a - Zk) ** 2) for C, a, Zk in zip(data.C_s, ATy, Z))
                   + np.sum((data.c_l - ATy_l - z) ** 2)) / cnorm
    return IpmResult(X, x, y, Z, z, status, it, _inner(data.C_s, data.c_l, X, x),
                     float(data.b @ y), float(np.linalg.norm(rp) / bnorm), float(dres), hist)
