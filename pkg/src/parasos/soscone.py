"""Positive semiseparable operators parameterized by a Gram matrix.

For w in L2(0,1) let

    (Zw)(x) = [ Z1(x) w(x) ;  int_0^x Z2(x,s) w(s) ds ;  int_x^1 Z2(x,s) w(s) ds ]

with Z1 the monomials of x up to degree d1 and Z2 the bivariate monomials
of total degree <= d2.  For a PSD matrix P the quadratic form
<Zw, P Zw> equals <w, X w> where X = X_{M,K1,K2} is a multiplier plus a
semiseparable integral operator.  ``gram_to_triple`` computes (M, K1, K2)
and ``xi_membership`` emits the linear constraints tying a target triple
to a fresh Gram variable.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .polycore import Poly1, Poly2, monomials1, monomials2, quadrature, gauss_nodes


@dataclass(frozen=True)
class KernelTriple:
    M: Poly1
    K1: Poly2
    K2: Poly2 = None

    def __post_init__(self):
        if self.K2 is None:
            object.__setattr__(self, "K2", self.K1.transpose())

    @classmethod
    def zero(cls):
        return cls(Poly1([0.0]), Poly2([[0.0]]))

    def __add__(self, other):
        return KernelTriple(self.M + other.M, self.K1 + other.K1, self.K2 + other.K2)

    def __sub__(self, other):
        return KernelTriple(self.M - other.M, self.K1 - other.K1, self.K2 - other.K2)

    def __neg__(self):
        return KernelTriple(-self.M, -self.K1, -self.K2)

    def scale(self, k):
        return KernelTriple(self.M.scale(k), self.K1.scale(k), self.K2.scale(k))

    def bind(self, values):
        return KernelTriple(self.M.bind(values), self.K1.bind(values), self.K2.bind(values))

    def is_symmetric(self, tol=1e-8):
        a, b = self.K2.coeffs, self.K1.transpose().coeffs
        sh = tuple(max(s, t) for s, t in zip(a.shape, b.shape))
        pa = np.zeros(sh)
        pa[tuple(slice(0, s) for s in a.shape)] = a
        pb = np.zeros(sh)
        pb[tuple(slice(0, s) for s in b.shape)] = b
        return float(np.max(np.abs(pa - pb), initial=0.0)) <= tol


# ---------------------------------------------------------------------------
# the Gram -> triple linear map


def gram_size(d1, d2):
    return d1 + 1, len(monomials2(d2))


def kernel_degree(d1, d2):
    """Largest total degree K1 can reach."""
    return max(d1 + d2, 2 * d2 + 1)


@dataclass(frozen=True)
class GramMap:
    """Sparse linear maps from vec(P) (row-major, full) to coefficients."""

    d1: int
    d2: int
    N: int
    LM: sp.csr_matrix   # (2*d1+1, N*N)
    LK: sp.csr_matrix   # ((D+1)**2, N*N), K1 coefficient (i,j) at row i*(D+1)+j
    D: int
    blocks: tuple = field(default=())

    def symmetric(self, restrict_diag=False):
        """Maps acting on the upper triangle of P (i <= j, row-major)."""
        return _sym_maps(self.d1, self.d2, restrict_diag)


@lru_cache(maxsize=None)
def gram_map(d1: int, d2: int) -> GramMap:
    n, m = gram_size(d1, d2)
    N = n + 2 * m
    D = kernel_degree(d1, d2)
    Z2 = np.array(monomials2(d2), dtype=int).reshape(-1, 2)
    b1 = np.arange(n)
    b2 = n + np.arange(m)
    b3 = n + m + np.arange(m)

    # multiplier: P11[a, b] x^(a+b)
    A, B = np.meshgrid(b1, b1, indexing="ij")
    LM = sp.coo_matrix((np.ones(n * n), ((A + B).ravel(), (A * N + B).ravel())),
                       shape=(2 * d1 + 1, N * N)).tocsr()

    rows, cols, vals = [], [], []

    def emit(i, j, col, v):
        i, j, col, v = np.broadcast_arrays(i, j, col, v)
        keep = v != 0
        rows.append((i * (D + 1) + j)[keep])
        cols.append(col[keep])
        vals.append(v[keep])

    p, q = Z2[:, 0], Z2[:, 1]
    # P12: Z1(x)^T P12 Z2(x, xi)  ->  x^(a+p) xi^q
    a = np.arange(n)[:, None]
    emit(a + p[None, :], np.broadcast_to(q[None, :], (n, m)), b1[:, None] * N + b2[None, :], 1.0)
    # P31: Z2(xi, x)^T P31 Z1(xi)  ->  x^q xi^(p+b)
    bb = np.arange(n)[None, :]
    emit(q[:, None] + 0 * bb, p[:, None] + bb, b3[:, None] * N + b1[None, :], 1.0)
    # integral terms over eta; row index (p,q) pairs with x, column (r,s) with xi
    P_, R_ = p[:, None], p[None, :]
    Q_, S_ = q[:, None], q[None, :]
    e = P_ + R_ + 1
    inv = 1.0 / e
    # P33: int_0^xi  -> x^q xi^(s+e)/e
    emit(Q_, S_ + e, b3[:, None] * N + b3[None, :], inv)
    # P32: int_xi^x  -> x^(q+e) xi^s /e  -  x^q xi^(s+e)/e
    c32 = b3[:, None] * N + b2[None, :]
    emit(Q_ + e, S_, c32, inv)
    emit(Q_, S_ + e, c32, -inv)
    # P22: int_x^1   -> x^q xi^s /e  -  x^(q+e) xi^s /e
    c22 = b2[:, None] * N + b2[None, :]
    emit(Q_, S_, c22, inv)
    emit(Q_ + e, S_, c22, -inv)

    LK = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=((D + 1) ** 2, N * N)).tocsr()
    LK.sum_duplicates()
    return GramMap(d1, d2, N, LM, LK, D, (b1, b2, b3))


def upper_index(N):
    iu, ju = np.triu_indices(N)
    return iu, ju


@lru_cache(maxsize=None)
def _sym_maps(d1, d2, restrict_diag):
    g = gram_map(d1, d2)
    N = g.N
    iu, ju = upper_index(N)
    k = iu.size
    # S: upper-triangle variables -> full row-major vec(P)
    r = np.concatenate([iu * N + ju, (ju * N + iu)[iu != ju]])
    c = np.concatenate([np.arange(k), np.arange(k)[iu != ju]])
    S = sp.coo_matrix((np.ones(r.size), (r, c)), shape=(N * N, k)).tocsr()
    LM = (g.LM @ S).tocsr()
    LK = (g.LK @ S).tocsr()
    if restrict_diag:
        n = d1 + 1
        keep = (iu < n) & (ju < n)
        LM = LM[:, keep]
        LK = LK[:, keep]
        return LM, LK, iu[keep], ju[keep]
    return LM, LK, iu, ju


@lru_cache(maxsize=None)
def localizer_map(d1):
    """Coefficients of x(1-x) Zt^T S Zt, Zt the monomials up to d1 - 1, as a
    sparse map on the upper triangle of S.

    In the diagonal-only mode the operator is a pure multiplier, and
    positivity on [0, 1] rather than on the whole line is the right notion.
    """
    n = d1
    iu, ju = np.triu_indices(n)
    w = np.where(iu == ju, 1.0, 2.0)
    e = iu + ju
    rows = np.concatenate([e + 1, e + 2])
    cols = np.concatenate([np.arange(iu.size)] * 2)
    vals = np.concatenate([w, -w])
    return sp.coo_matrix((vals, (rows, cols)), shape=(2 * d1 + 1, iu.size)).tocsr()


def gram_to_triple(P, d1: int, d2: int, loc=None) -> KernelTriple:
    """Triple of the Gram matrix P; ``loc`` is the optional localizing Gram
    matrix of the diagonal-only mode (size d1)."""
    P = np.asarray(P, dtype=float)
    g = gram_map(d1, d2)
    if P.shape != (g.N, g.N):
        raise ValueError(f"Gram matrix must be {g.N}x{g.N} for (d1, d2)=({d1}, {d2}), got {P.shape}")
    v = P.ravel()
    mc = g.LM @ v
    if loc is not None and d1 > 0:
        S = np.asarray(loc, float)
        iu, ju = np.triu_indices(d1)
        mc = mc + localizer_map(d1) @ (0.5 * (S + S.T))[iu, ju]
    M = Poly1(mc)
    K1 = Poly2((g.LK @ v).reshape(g.D + 1, g.D + 1))
    return KernelTriple(M, K1)


# ---------------------------------------------------------------------------
# operator action and quadratic forms


def _kernel_values(K, X, S):
    return K(X, S)


def apply_operator(t: KernelTriple, w, xs=None):
    """Values of (X_t w)(x) at the composite Gauss nodes (or at xs).

    ``w`` is a callable accepting arrays.
    """
    xg, wg = gauss_nodes()
    xs = xg if xs is None else np.asarray(xs, float)
    out = t.M(xs) * w(xs)
    for i, x in enumerate(np.atleast_1d(xs)):
        # int_0^x K1(x,s) w(s) ds + int_x^1 K2(x,s) w(s) ds
        s1 = x * xg
        s2 = x + (1 - x) * xg
        v = x * np.dot(wg, t.K1(x, s1) * w(s1)) + (1 - x) * np.dot(wg, t.K2(x, s2) * w(s2))
        if np.ndim(out):
            out[i] += v
        else:
            out = out + v
    return out


def quad_form(t: KernelTriple, v, w):
    """<v, X_t w> by quadrature."""
    xg, wg = gauss_nodes()
    return float(np.dot(wg, v(xg) * apply_operator(t, w)))


def z_vector(w, d1, d2, xs):
    """Stacked (Zw)(x) at the points xs; rows are points."""
    xg, wg = gauss_nodes()
    Z2 = np.array(monomials2(d2), dtype=float).reshape(-1, 2)
    rows = []
    for x in xs:
        z1 = x ** np.arange(d1 + 1) * w(x)
        s1 = x * xg
        s2 = x + (1 - x) * xg
        f1 = (x ** Z2[:, 0])[:, None] * (s1[None, :] ** Z2[:, 1][:, None]) * w(s1)[None, :]
        f2 = (x ** Z2[:, 0])[:, None] * (s2[None, :] ** Z2[:, 1][:, None]) * w(s2)[None, :]
        rows.append(np.concatenate([z1, x * f1 @ wg, (1 - x) * f2 @ wg]))
    return np.array(rows)


def gram_form(P, d1, d2, w):
    """<Zw, P Zw> by quadrature."""
    xg, wg = gauss_nodes()
    Z = z_vector(w, d1, d2, xg)
    return float(np.einsum("k,ki,ij,kj->", wg, Z, P, Z))


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class XiCertificate:
    d1: int
    d2: int
    eps: float
    P: np.ndarray
    triple: KernelTriple
    theta: float = float("nan")
    restrict_diag: bool = False
    loc: np.ndarray = None
    psd_tol: float = 1e-9       # eigenvalue tolerance the producing solve certified

    @classmethod
    def from_gram(cls, P, d1, d2, eps, restrict_diag=False, loc=None, psd_tol=1e-9):
        P = np.asarray(P, float)
        P = 0.5 * (P + P.T)
        t = gram_to_triple(P, d1, d2, loc)
        theta = estimate_theta(P, d1, d2)
        if loc is not None and np.size(loc):
            # x(1-x) <= 1/4 and each monomial is bounded by 1
            theta += 0.25 * max(float(np.linalg.eigvalsh(loc)[-1]), 0.0) * d1
        return cls(d1, d2, float(eps), P, t, theta, restrict_diag, loc, float(psd_tol))


def monomial_moment_bound(d1, d2):
    """Bound on sup ||Z-stack applied to unit-norm w||^2 integrated over x.

    Each multiplier row contributes sup_x x^(2i) = 1; each integral row is
    bounded through Cauchy-Schwarz by int_0^1 int |z(x,s)|^2 ds dx <= 1.
    """
    n, m = gram_size(d1, d2)
    return float(n + 2 * m)


def estimate_theta(P, d1, d2):
    lam = float(np.linalg.eigvalsh(0.5 * (P + P.T))[-1])
    return max(lam, 0.0) * monomial_moment_bound(d1, d2)


@dataclass
class CertificateReport:
    ok: bool
    violations: list
    min_shifted_eig: float
    triple_mismatch: float
    min_rayleigh: float

    def __bool__(self):
        return self.ok


def _random_poly(rng, deg=5):
    return Poly1(rng.standard_normal(deg + 1))


def verify_certificate(cert: XiCertificate, n_samples=50, seed=0, tol=None) -> CertificateReport:
    tol = cert.psd_tol if tol is None else tol
    viol = []
    P = np.asarray(cert.P, float)
    g = gram_map(cert.d1, cert.d2)
    if P.shape != (g.N, g.N):
        return CertificateReport(False, [f"Gram size {P.shape} != {(g.N, g.N)}"], float("nan"),
                                 float("nan"), float("nan"))
    asym = float(np.max(np.abs(P - P.T)))
    if asym > 1e-8:
        viol.append(f"Gram matrix not symmetric (max |P-P^T| = {asym:.3g})")
    Ps = 0.5 * (P + P.T)
    Ps[0, 0] -= cert.eps
    mineig = float(np.linalg.eigvalsh(Ps)[0])
    if mineig < -tol:
        viol.append(f"PSD shift violated: min eig of P - eps*e1e1^T = {mineig:.3g}")
    if cert.loc is not None and np.size(cert.loc):
        lmin = float(np.linalg.eigvalsh(0.5 * (cert.loc + cert.loc.T))[0])
        mineig = min(mineig, lmin)
        if lmin < -tol:
            viol.append(f"localizing Gram matrix not PSD (min eig {lmin:.3g})")
    t = gram_to_triple(P, cert.d1, cert.d2, cert.loc)
    mism = max(_coef_diff(t.M, cert.triple.M), _coef_diff(t.K1, cert.triple.K1),
               _coef_diff(t.K2, cert.triple.K2))
    if mism > 1e-8:
        viol.append(f"triple differs from Gram map by {mism:.3g}")
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(n_samples):
        w = _random_poly(rng)
        nrm = float(quadrature(lambda x: w(x) ** 2))
        val = quad_form(cert.triple, w, w)
        worst = min(worst, val / nrm - cert.eps)
        if val < cert.eps * nrm - 1e-8 * max(1.0, nrm) - max(0.0, -mineig) * cert_scale(cert) * nrm:
            viol.append(f"<w,Xw> = {val:.6g} below eps*||w||^2 = {cert.eps * nrm:.6g}")
            break
    return CertificateReport(not viol, viol, mineig, mism, worst)


def cert_scale(cert):
    return monomial_moment_bound(cert.d1, cert.d2)


def _coef_diff(p, q):
    a, b = p.coeffs, q.coeffs
    sh = tuple(max(s, t) for s, t in zip(a.shape, b.shape))
    pa = np.zeros(sh)
    pa[tuple(slice(0, s) for s in a.shape)] = a
    pb = np.zeros(sh)
    pb[tuple(slice(0, s) for s in b.shape)] = b
    return float(np.max(np.abs(pa - pb), initial=0.0))


# ---------------------------------------------------------------------------
# symbolic membership


def required_degrees(target: KernelTriple):
    """Smallest (d1, d2) whose Gram map can represent the target's support."""
    degM = target.M.degree
    d1 = max(0, -(-degM // 2)) if degM > 0 else 0
    degK = max(target.K1.degree, 0)
    d2 = 0
    while kernel_degree(d1, d2) < degK:
        d2 += 1
    # support check is done by the caller against the actual map rows
    return d1, d2


def check_representable(target: KernelTriple, d1, d2):
    g = gram_map(d1, d2)
    if target.M.degree > 2 * d1 or target.K1.degree > g.D:
        r1, r2 = required_degrees(target)
        raise ValueError(
            f"target degrees (M: {target.M.degree}, K1: {target.K1.degree}) exceed what "
            f"(d1, d2)=({d1}, {d2}) can represent; need at least d1={max(r1, d1)}, d2={max(r2, d2)}")


def add_xi_variable(prob, d1, d2, eps=0.0, restrict_diag=False, name="P"):
    """Declare the Gram variable of a Xi certificate.  In the diagonal-only
    mode a localizing variable ``name + ":loc"`` is declared next to it and
    attached as ``var.loc``."""
    g = gram_map(d1, d2)
    _, _, iu, ju = _sym_maps(d1, d2, restrict_diag)
    var = prob.add_matrix_var(name, g.N, shift=eps, support=(iu, ju) if restrict_diag else None)
    if restrict_diag and d1 > 0:
        var.loc = prob.add_matrix_var(f"{name}:loc", d1)
    return var


def _loc_columns(var, K, nM):
    """Dense block of the localizer contribution to M over [1, v]."""
    out = np.zeros((nM, K))
    loc = getattr(var, "loc", None)
    if loc is not None:
        L = localizer_map(loc.dim).toarray()
        out[:L.shape[0], 1 + loc.offset + np.arange(L.shape[1])] = L
    return out


def symbolic_triple(prob, var, d1, d2, restrict_diag=False) -> KernelTriple:
    """Triple of affine expressions for the Gram variable ``var`` of ``prob``."""
    LM, LK, iu, ju = _sym_maps(d1, d2, restrict_diag)
    g = gram_map(d1, d2)
    K = 1 + prob.nvars
    cols = 1 + var.offset + np.arange(LM.shape[1])
    M = np.zeros((LM.shape[0], K))
    M[:, cols] = LM.toarray()
    M += _loc_columns(var, K, LM.shape[0])
    K1 = np.zeros(((g.D + 1) ** 2, K))
    K1[:, cols] = LK.toarray()
    return KernelTriple(Poly1(M), Poly2(K1.reshape(g.D + 1, g.D + 1, K)))


def xi_membership(prob, target: KernelTriple, d1: int, d2: int, eps: float = 0.0,
                  restrict_diag: bool = False, name="P"):
    """Add a Gram variable and the equalities ``gram_to_triple(P) == target``.

    Returns the new matrix variable.  The target may mix numbers and affine
    expressions in the variables already declared in ``prob``.
    """
    check_representable(target, d1, d2)
    g = gram_map(d1, d2)
    LM, LK, iu, ju = _sym_maps(d1, d2, restrict_diag)
    var = add_xi_variable(prob, d1, d2, eps, restrict_diag, name)
    K = 1 + prob.nvars

    def rows(tc, L, shape):
        tc = np.asarray(tc, float)
        if tc.ndim == len(shape):
            tc = tc[..., None]
        full = np.zeros(shape + (K,))
        full[tuple(slice(0, s) for s in tc.shape[:len(shape)]) + (slice(0, tc.shape[-1]),)] = tc
        full = full.reshape(-1, K)
        Lc = sp.csr_matrix((L.data, L.indices + 1 + var.offset, L.indptr), shape=(L.shape[0], K))
        return sp.csr_matrix(full) - Lc

    nM = 2 * d1 + 1
    prob.add_equalities(rows(target.M.coeffs, LM, (nM,)) - sp.csr_matrix(_loc_columns(var, K, nM)),
                        tag=f"{name}:M")
    prob.add_equalities(rows(target.K1.coeffs, LK, (g.D + 1, g.D + 1)), tag=f"{name}:K1")
    if not target.is_symmetric(tol=0.0) and not target.K1.pshape and not target.K2.pshape:
        prob.add_equalities(
            rows(target.K2.coeffs, _transpose_rows(LK, g.D), (g.D + 1, g.D + 1)), tag=f"{name}:K2")
    return var


def _transpose_rows(LK, D):
    idx = np.arange((D + 1) ** 2).reshape(D + 1, D + 1).T.ravel()
    return LK[idx]
