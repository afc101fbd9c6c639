"""Inverse of a positive multiplier-plus-semiseparable operator.

For X = X_{M,K1,K2} with K1(x,s) = F(x)^T G(s) the inverse is again of
that form.  With B = (G; F), C = (F^T, -G^T) and U the fundamental matrix of
U' = -B M^{-1} C U, U(0) = I, the inverse kernels are

    K1inv(x,s) = Minv(x) C(x) U(x) (H - I) U(s)^{-1} B(s) Minv(s)
    K2inv(x,s) = Minv(x) C(x) U(x)  H      U(s)^{-1} B(s) Minv(s)

with H = [N1 + N2 U(1)]^{-1} N2 U(1).  U is built by Picard iteration.

When M is close to its lower bound and the kernel is large (the usual shape
of synthesized certificates) U grows by many orders of magnitude and the
formula above is numerically useless, although X itself is well
conditioned.  ``CollocationInverse`` applies X^{-1} to functions by solving
X v = f with spectral collocation instead; the gain formulas only ever need
X^{-1} applied to smooth functions.
Everything after the Chebyshev approximation of 1/M is carried out on a
Chebyshev-Lobatto grid: the iterates are polynomials whose degree grows by
deg(B Minv C) + 1 per step, and re-expanding them in monomials loses all
precision well before the degrees reached by synthesized certificates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from numpy.polynomial import chebyshev as C
from numpy.polynomial import legendre as Lg

from .polycore import Poly1, Poly2, gauss_nodes, lower_bound_on_interval, quadrature
from .soscone import KernelTriple, apply_operator

COND_LIMIT = 1e12


# ---------------------------------------------------------------------------
# Chebyshev grid on [0, 1]


class ChebGrid:
    """Lobatto nodes on [0,1] with interpolation and cumulative integration."""

    def __init__(self, n):
        self.n = n
        k = np.arange(n)
        self.t = -np.cos(np.pi * k / (n - 1))
        self.x = 0.5 * (self.t + 1.0)
        self.V = C.chebvander(self.t, n - 1)
        self.Vinv = np.linalg.inv(self.V)
        # int_0^x f = 0.5 * int_{-1}^{t} f dt
        integ = np.zeros((n + 1, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            integ[:, j] = 0.5 * C.chebint(e, lbnd=-1.0)
        self.J = C.chebvander(self.t, n) @ integ @ self.Vinv

    def coef(self, vals):
        return np.tensordot(self.Vinv, vals, axes=(1, 0))

    def cumint(self, vals):
        return np.tensordot(self.J, vals, axes=(1, 0))


@lru_cache(maxsize=16)
def cheb_grid(n):
    return ChebGrid(n)


def cheb_eval(coef, x):
    """Chebyshev series on [0,1]; coefficient axis first, trailing axes kept."""
    t = 2.0 * np.asarray(x, float) - 1.0
    out = C.chebval(t, coef, tensor=True)
    # chebval puts the trailing coefficient axes first; move x axes to the front
    nt = coef.ndim - 1
    return np.moveaxis(out, tuple(range(nt)), tuple(range(out.ndim - nt, out.ndim))) if nt else out


def _trim(coef, rel=1e-15):
    mag = np.abs(coef).reshape(coef.shape[0], -1).max(axis=1)
    big = np.nonzero(mag > rel * max(mag.max(initial=0.0), 1e-300))[0]
    return coef[: big[-1] + 1] if big.size else coef[:1] * 0.0


@dataclass(frozen=True)
class ChebFun:
    """Scalar function on [0,1] stored as a Chebyshev series."""

    coef: np.ndarray

    def __call__(self, x):
        v = cheb_eval(self.coef, x)
        return v if np.ndim(v) else float(v)

    @property
    def degree(self):
        return self.coef.shape[0] - 1

    @classmethod
    def from_values(cls, grid: ChebGrid, vals):
        return cls(_trim(grid.coef(np.asarray(vals, float))))

    @classmethod
    def fit(cls, f, n=96):
        g = cheb_grid(n)
        return cls.from_values(g, f(g.x))

    def to_poly1(self):
        """Monomial form; only meaningful for low degrees."""
        p = C.Chebyshev(self.coef, domain=[0.0, 1.0]).convert(
            kind=np.polynomial.Polynomial, domain=[0.0, 1.0], window=[0.0, 1.0])
        return Poly1(p.coef)


@dataclass(frozen=True)
class SeparableKernel:
    """K(x, s) = f(x)^T W g(s) with f, g vector Chebyshev series."""

    fcoef: np.ndarray    # (nf, r)
    W: np.ndarray        # (r, r)
    gcoef: np.ndarray    # (ng, r)

    def __call__(self, x, s):
        x, s = np.broadcast_arrays(np.asarray(x, float), np.asarray(s, float))
        r = self.W.shape[0]
        if r == 0:
            out = np.zeros(x.shape)
        else:
            F = cheb_eval(self.fcoef, x)
            G = cheb_eval(self.gcoef, s)
            out = np.einsum("...i,ij,...j->...", F, self.W, G)
        return out if out.ndim else float(out)

    def transpose(self):
        return SeparableKernel(self.gcoef, self.W.T, self.fcoef)

    def subs(self, var, value):
        """Fix one variable; returns a ChebFun in the other."""
        if self.W.shape[0] == 0:
            return ChebFun(np.zeros(1))
        if var == 1:
            v = cheb_eval(self.fcoef, float(value)) @ self.W
            return ChebFun(_trim(self.gcoef @ v))
        v = self.W @ cheb_eval(self.gcoef, float(value))
        return ChebFun(_trim(self.fcoef @ v))

    @property
    def degree(self):
        return max(self.fcoef.shape[0], self.gcoef.shape[0]) - 1


# ---------------------------------------------------------------------------
# factorization and the pieces of the inverse


@dataclass(frozen=True)
class SemisepFactorization:
    F: tuple      # Poly1 entries
    G: tuple

    @property
    def r(self):
        return len(self.F)

    def values(self, x):
        F = np.array([f(x) for f in self.F]).T if self.r else np.zeros((np.size(x), 0))
        G = np.array([g(x) for g in self.G]).T if self.r else np.zeros((np.size(x), 0))
        return F.reshape(np.size(x), self.r), G.reshape(np.size(x), self.r)


def factor_semiseparable(K1: Poly2) -> SemisepFactorization:
    """K1(x,s) = sum_i x^i G_i(s), keeping only powers of x that occur."""
    c = np.asarray(K1.coeffs, float)
    if c.ndim != 2:
        raise ValueError("kernel must have numeric coefficients")
    F, G = [], []
    for i in range(c.shape[0]):
        if np.any(c[i] != 0):
            F.append(Poly1.monomial(i))
            G.append(Poly1(c[i]))
    return SemisepFactorization(tuple(F), tuple(G))


def cheb_inverse(M: Poly1, deg: int):
    """Degree-``deg`` Chebyshev interpolant of 1/M on [0,1] and its sup error."""
    if deg < 0:
        raise ValueError("degree must be nonnegative")
    if not lower_bound_on_interval(M) > 0:
        raise ValueError("M is not positive on [0,1]; cannot invert the multiplier")
    k = np.arange(deg + 1)
    t = np.cos(np.pi * (2 * k + 1) / (2 * deg + 2))
    coef = C.chebfit(t, 1.0 / M(0.5 * (t + 1.0)), deg)
    q = ChebFun(coef).to_poly1()
    xs = np.linspace(0.0, 1.0, 1001)
    err = float(np.max(np.abs(q(xs) - 1.0 / M(xs))))
    return q, err


@dataclass
class PicardResult:
    grid: ChebGrid
    U: np.ndarray            # (N, 2r, 2r) values on the grid
    changes: list            # sup-norm change between successive iterates
    n: int                   # index of the returned iterate


def _grid_size(fact, Minv, n):
    dF = max((f.degree for f in fact.F), default=0)
    dG = max((max(g.degree, 0) for g in fact.G), default=0)
    step = 2 * max(dF, dG) + max(Minv.degree, 0) + 1
    return int(min(512, max(64, n * step + 16)))


def picard_U(fact: SemisepFactorization, Minv: Poly1, n: int, tol=1e-10, grid=None):
    """U_n from U_1 = I, U_{k+1}(x) = I - int_0^x B Minv C U_k."""
    if n < 1:
        raise ValueError("n must be >= 1")
    r2 = 2 * fact.r
    grid = grid or cheb_grid(_grid_size(fact, Minv, n))
    Ieye = np.eye(r2)
    U = np.broadcast_to(Ieye, (grid.n, r2, r2)).copy()
    if r2 == 0:
        return PicardResult(grid, U, [], n)
    F, G = fact.values(grid.x)
    B = np.concatenate([G, F], axis=1)
    Cm = np.concatenate([F, -G], axis=1)
    BMC = B[:, :, None] * (Minv(grid.x)[:, None, None] * Cm[:, None, :])
    changes = []
    k = 1
    while k < n:
        Unew = Ieye - grid.cumint(BMC @ U)
        changes.append(float(np.max(np.abs(Unew - U))))
        U = Unew
        k += 1
        if changes[-1] < tol:
            break
    return PicardResult(grid, U, changes, k)


# ---------------------------------------------------------------------------
# the inverse triple


@dataclass
class InverseTriple:
    Minv: Poly1
    K1inv: SeparableKernel
    K2inv: SeparableKernel
    n_picard: int
    cheb_deg: int
    U1: np.ndarray
    H: np.ndarray
    residual_bound: float = float("nan")
    cheb_error: float = float("nan")
    picard_changes: list = field(default_factory=list)
    cond: float = 1.0

    # duck-typing with KernelTriple for operator application
    @property
    def M(self):
        return self.Minv

    @property
    def K1(self):
        return self.K1inv

    @property
    def K2(self):
        return self.K2inv


def invert_operator(t: KernelTriple, n: int = 6, cheb_deg: int = 6, tol=1e-10,
                    check=True) -> InverseTriple:
    Minv, err = cheb_inverse(t.M, cheb_deg)
    fact = factor_semiseparable(t.K1)
    r2 = 2 * fact.r
    if r2 == 0:
        z = SeparableKernel(np.zeros((1, 0)), np.zeros((0, 0)), np.zeros((1, 0)))
        inv = InverseTriple(Minv, z, z, 1, cheb_deg, np.zeros((0, 0)), np.zeros((0, 0)),
                            cheb_error=err)
    else:
        pic = picard_U(fact, Minv, n, tol)
        g = pic.grid
        U = pic.U
        U1 = U[-1]
        N1 = np.zeros((r2, r2))
        N1[: fact.r, : fact.r] = np.eye(fact.r)
        N2 = np.eye(r2) - N1
        S = N1 + N2 @ U1
        cond = float(np.linalg.cond(S))
        if not cond < COND_LIMIT:
            raise np.linalg.LinAlgError(
                f"N1 + N2 U(1) is numerically singular (cond {cond:.3g}); operator not invertible")
        H = np.linalg.solve(S, N2 @ U1)
        F, G = fact.values(g.x)
        mv = Minv(g.x)
        Bv = np.concatenate([G, F], axis=1)
        Cv = np.concatenate([F, -G], axis=1)
        f = mv[:, None] * np.einsum("ki,kij->kj", Cv, U)
        gv = np.linalg.solve(U, (Bv * mv[:, None])[:, :, None])[:, :, 0]
        fc = _trim(g.coef(f))
        gc = _trim(g.coef(gv))
        inv = InverseTriple(Minv, SeparableKernel(fc, H - np.eye(r2), gc),
                            SeparableKernel(fc, H, gc), pic.n, cheb_deg, U1, H,
                            cheb_error=err, picard_changes=pic.changes, cond=cond)
    if check:
        inv.residual_bound = max(inversion_residual(t, inv, w) for w in _probe_functions())
    return inv


# ---------------------------------------------------------------------------
# inverse action by collocation


def collocation_matrix(t: KernelTriple, n: int):
    """Matrix of X on Chebyshev-Lobatto values of size n: row i maps the
    interpolant's node values to (X v)(x_i), exactly for kernels that are
    polynomials."""
    g = cheb_grid(n)
    degK = max(t.K1.degree, t.K2.degree, 0)
    q = (degK + n) // 2 + 2
    s, w = Lg.leggauss(q)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    A = np.diag(np.asarray(t.M(g.x), float))
    x = g.x[:, None]
    lo, hi = s[None, :] * x, x + s[None, :] * (1.0 - x)
    wl, wh = w[None, :] * x, w[None, :] * (1.0 - x)
    X = np.broadcast_to(x, lo.shape)
    Kl = np.asarray(t.K1(X, lo), float) * wl
    Kh = np.asarray(t.K2(X, hi), float) * wh
    Ll = C.chebvander(2.0 * lo - 1.0, n - 1) @ g.Vinv      # (n, q, n)
    Lh = C.chebvander(2.0 * hi - 1.0, n - 1) @ g.Vinv
    A += np.einsum("iq,iqj->ij", Kl, Ll) + np.einsum("iq,iqj->ij", Kh, Lh)
    return g, A


class CollocationInverse:
    """v = X^{-1} f for smooth f.

    The grid is doubled from ``n`` until the Chebyshev tails of the probe
    solutions fall below ``tail_tol`` (relative) or ``n_max`` is reached.
    """

    def __init__(self, t: KernelTriple, n=48, n_max=384, tail_tol=1e-11):
        self.triple = t
        if not lower_bound_on_interval(t.M) > 0:
            raise ValueError("M is not positive on [0,1]; cannot invert the multiplier")
        while True:
            g, A = collocation_matrix(t, n)
            lu = _lu(A)
            tails = [_tail(g, _lu_solve(lu, p(g.x))) for p in _probe_functions()]
            if max(tails) < tail_tol or n >= n_max:
                break
            n *= 2
        self.grid, self.lu, self.n, self.tail = g, lu, n, max(tails)
        self.cond = float(np.linalg.cond(A))

    def values(self, f):
        f = f if callable(f) else (lambda x, c=float(f): np.full(np.shape(x), c))
        return _lu_solve(self.lu, np.asarray(f(self.grid.x), float))

    def solve(self, f) -> ChebFun:
        return ChebFun.from_values(self.grid, self.values(f))

    def residual(self, f) -> float:
        """||f - X v|| in L2 for v = solve(f)."""
        v = self.solve(f)
        xg, wg = gauss_nodes()
        r = f(xg) - apply_operator(self.triple, v, xg)
        return float(np.sqrt(np.dot(wg, r * r)))

    @property
    def residual_bound(self):
        return max(self.residual(p) for p in _probe_functions())

    def boundary_row(self):
        """(m1, k) with (X^{-1} w)(1) = m1 w(1) + <k, w>.

        From M(1) v(1) + int_0^1 K1(1,s) v(s) ds = w(1) and self-adjointness,
        m1 = 1/M(1) and k = -X^{-1} K1(1, .) / M(1).
        """
        M1 = float(self.triple.M(1.0))
        k1 = self.triple.K1.subs(1, 1.0)
        kv = self.values(k1)
        return 1.0 / M1, ChebFun.from_values(self.grid, -kv / M1)


def _lu(A):
    return sla.lu_factor(A)


def _lu_solve(lu, b):
    return sla.lu_solve(lu, b)


def _tail(g, v):
    c = np.abs(g.coef(v))
    return float(c[-4:].max() / max(c.max(), 1e-300))


def _probe_functions():
    return [Poly1([0.0, 0.4, -1.4, 1.0]), Poly1([1.0]), Poly1([0.3, -2.0, 0.0, 1.5, -0.2])]


def _as_callable(v, n=96):
    return ChebFun.fit(v, n)


def apply(t, w, n=96):
    """X_t w as a ChebFun (t may be a KernelTriple or an InverseTriple)."""
    g = cheb_grid(n)
    return ChebFun.from_values(g, apply_operator(t, w, g.x))


def inversion_residual(t: KernelTriple, inv: InverseTriple, w, reverse=False) -> float:
    """||w - X_t X_inv w|| (or ||w - X_inv X_t w|| with ``reverse``) in L2."""
    first, second = (t, inv) if reverse else (inv, t)
    v = apply(first, w)
    xg, wg = gauss_nodes()
    r = w(xg) - apply_operator(second, v, xg)
    return float(np.sqrt(np.dot(wg, r * r)))


def residual_scan(t: KernelTriple, w, ns=range(2, 7), cheb_deg=6):
    """Inversion residual as a function of the Picard index."""
    out = []
    for n in ns:
        inv = invert_operator(t, n=n, cheb_deg=cheb_deg, tol=0.0, check=False)
        out.append(inversion_residual(t, inv, w))
    return out


def l2_inner(v, w):
    return quadrature(lambda x: v(x) * w(x))
