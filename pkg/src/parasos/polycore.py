"""Dense polynomials in one and two variables on [0, 1].

Coefficients live in the monomial basis.  Every polynomial may carry trailing
"parameter" axes on its coefficient array, so the same code handles plain
numeric polynomials and polynomials whose coefficients are affine
expressions in SDP decision variables (the trailing axis then indexes
``[constant, v1, v2, ...]``).  Products are only defined when at least one
factor is purely numeric.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

TRUNC = 1e-13


def _clean(arr, nvar):
    arr = np.array(arr, dtype=float)
    arr[np.abs(arr) < TRUNC] = 0.0
    # trim trailing all-zero slices along the polynomial axes
    for ax in range(nvar):
        other = tuple(i for i in range(arr.ndim) if i != ax)
        nz = np.nonzero(np.any(arr != 0.0, axis=other))[0] if other else np.nonzero(arr)[0]
        n = int(nz[-1]) + 1 if nz.size else 1
        if n < arr.shape[ax]:
            arr = np.take(arr, np.arange(n), axis=ax)
    arr.setflags(write=False)
    return arr


def _lift(c, npoly, pshape):
    """Embed coefficients into the parameter space of another operand.

    A numeric polynomial added to a parametric one is a constant term, so it
    goes to parameter index 0.  Parametric arrays of different lengths (made
    before and after new variables were declared) are zero padded.
    """
    if c.shape[npoly:] == tuple(pshape):
        return c
    if c.ndim == npoly:
        out = np.zeros(c.shape + tuple(pshape))
        out[(Ellipsis,) + (0,) * len(pshape)] = c
        return out
    return _pad_to(c, c.shape[:npoly] + tuple(pshape))


def _join_pshape(p, q):
    if p == q or not q:
        return p
    if not p:
        return q
    if len(p) != len(q):
        raise ValueError("incompatible parameter shapes")
    return tuple(max(a, b) for a, b in zip(p, q))


def _pad_to(arr, shape):
    if arr.shape == tuple(shape):
        return arr
    out = np.zeros(shape)
    out[tuple(slice(0, s) for s in arr.shape)] = arr
    return out


class Poly1:
    """Univariate polynomial, ``coeffs[i]`` multiplies ``x**i``."""

    __slots__ = ("coeffs",)
    nvar = 1

    def __init__(self, coeffs=()):
        c = np.asarray(coeffs, dtype=float)
        if c.size == 0:
            c = np.zeros((1,) + c.shape[1:])
        if c.ndim == 0:
            c = c.reshape(1)
        self.coeffs = _clean(c, 1)

    @classmethod
    def const(cls, v, pshape=()):
        c = np.zeros((1,) + tuple(pshape))
        c[(0,) + (0,) * len(pshape)] = v
        return cls(c)

    @classmethod
    def monomial(cls, k):
        c = np.zeros(k + 1)
        c[k] = 1.0
        return cls(c)

    @property
    def pshape(self):
        return self.coeffs.shape[1:]

    @property
    def degree(self):
        nz = np.nonzero(np.any(self.coeffs.reshape(self.coeffs.shape[0], -1) != 0, axis=1))[0]
        return int(nz[-1]) if nz.size else -1

    def is_zero(self):
        return not np.any(self.coeffs)

    # arithmetic -------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Poly1):
            return other
        if isinstance(other, Poly2):
            raise TypeError("arity mismatch: Poly1 with Poly2")
        return Poly1.const(other)

    def __add__(self, other):
        other = self._coerce(other)
        ps = _join_pshape(self.pshape, other.pshape)
        n = max(self.coeffs.shape[0], other.coeffs.shape[0])
        a = _pad_to(_lift(self.coeffs, 1, ps), (n,) + ps)
        b = _pad_to(_lift(other.coeffs, 1, ps), (n,) + ps)
        return Poly1(a + b)

    __radd__ = __add__

    def __neg__(self):
        return Poly1(-self.coeffs)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def scale(self, k):
        return Poly1(self.coeffs * k)

    def __mul__(self, other):
        if np.isscalar(other):
            return self.scale(other)
        other = self._coerce(other)
        if self.pshape and other.pshape:
            raise ValueError("product of two parametric polynomials is not affine")
        a, b = (self, other) if other.pshape else (other, self)
        # b may be parametric, a is numeric
        ca = a.coeffs
        cb = b.coeffs
        out = np.zeros((ca.shape[0] + cb.shape[0] - 1,) + cb.shape[1:])
        for i, v in enumerate(ca):
            if v != 0.0:
                out[i:i + cb.shape[0]] += v * cb
        return Poly1(out)

    __rmul__ = __mul__

    # calculus ---------------------------------------------------------
    def diff(self, var=1):
        if var != 1:
            raise ValueError("Poly1 has a single variable")
        c = self.coeffs
        if c.shape[0] == 1:
            return Poly1(np.zeros_like(c))
        k = np.arange(1, c.shape[0]).reshape((-1,) + (1,) * (c.ndim - 1))
        return Poly1(c[1:] * k)

    def antiderivative(self):
        c = self.coeffs
        k = np.arange(1, c.shape[0] + 1).reshape((-1,) + (1,) * (c.ndim - 1))
        return Poly1(np.concatenate([np.zeros((1,) + c.shape[1:]), c / k]))

    def integrate(self, lo=0.0, hi=1.0):
        F = self.antiderivative()
        return F(hi) - F(lo)

    def __call__(self, x):
        c = self.coeffs
        x = np.asarray(x, dtype=float)
        if c.ndim == 1:
            out = np.zeros_like(x) + c[-1]
            for v in c[-2::-1]:
                out = out * x + v
            return out if out.ndim else float(out)
        # parametric: only scalar points
        pw = float(x) ** np.arange(c.shape[0])
        return np.tensordot(pw, c, axes=(0, 0))

    def bind(self, values):
        """Substitute decision-variable values into a parametric polynomial."""
        if not self.pshape:
            return self
        v = np.concatenate([[1.0], np.asarray(values, float)])
        k = self.pshape[0]
        return Poly1(self.coeffs @ _pad_to(v, (max(k, v.size),))[:k])

    def as_poly2(self, var=1):
        c = self.coeffs
        if var == 1:
            return Poly2(c[:, None])
        return Poly2(c[None, :])

    def __repr__(self):
        if self.pshape:
            return f"Poly1(deg={self.degree}, pshape={self.pshape})"
        return f"Poly1({np.array2string(self.coeffs, precision=6)})"


class Poly2:
    """Bivariate polynomial, ``coeffs[i, j]`` multiplies ``x**i * xi**j``."""

    __slots__ = ("coeffs",)
    nvar = 2

    def __init__(self, coeffs=((0.0,),)):
        c = np.asarray(coeffs, dtype=float)
        if c.ndim < 2:
            c = c.reshape((-1, 1))
        if c.size == 0:
            c = np.zeros((1, 1) + c.shape[2:])
        self.coeffs = _clean(c, 2)

    @classmethod
    def const(cls, v, pshape=()):
        c = np.zeros((1, 1) + tuple(pshape))
        c[(0, 0) + (0,) * len(pshape)] = v
        return cls(c)

    @classmethod
    def monomial(cls, i, j):
        c = np.zeros((i + 1, j + 1))
        c[i, j] = 1.0
        return cls(c)

    @property
    def pshape(self):
        return self.coeffs.shape[2:]

    @property
    def degree(self):
        """Total degree."""
        c = self.coeffs.reshape(self.coeffs.shape[:2] + (-1,))
        i, j = np.nonzero(np.any(c != 0, axis=2))
        return int((i + j).max()) if i.size else -1

    def is_zero(self):
        return not np.any(self.coeffs)

    def _coerce(self, other):
        if isinstance(other, Poly2):
            return other
        if isinstance(other, Poly1):
            raise TypeError("arity mismatch: Poly2 with Poly1")
        return Poly2.const(other)

    def __add__(self, other):
        other = self._coerce(other)
        ps = _join_pshape(self.pshape, other.pshape)
        sh = (max(self.coeffs.shape[0], other.coeffs.shape[0]),
              max(self.coeffs.shape[1], other.coeffs.shape[1])) + ps
        a = _pad_to(_lift(self.coeffs, 2, ps), sh)
        b = _pad_to(_lift(other.coeffs, 2, ps), sh)
        return Poly2(a + b)

    __radd__ = __add__

    def __neg__(self):
        return Poly2(-self.coeffs)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def scale(self, k):
        return Poly2(self.coeffs * k)

    def __mul__(self, other):
        if np.isscalar(other):
            return self.scale(other)
        other = self._coerce(other)
        if self.pshape and other.pshape:
            raise ValueError("product of two parametric polynomials is not affine")
        a, b = (self, other) if other.pshape else (other, self)
        ca, cb = a.coeffs, b.coeffs
        n0, n1 = cb.shape[:2]
        out = np.zeros((ca.shape[0] + n0 - 1, ca.shape[1] + n1 - 1) + cb.shape[2:])
        for i, j in zip(*np.nonzero(ca)):
            out[i:i + n0, j:j + n1] += ca[i, j] * cb
        return Poly2(out)

    __rmul__ = __mul__

    def bind(self, values):
        if not self.pshape:
            return self
        v = np.concatenate([[1.0], np.asarray(values, float)])
        k = self.pshape[0]
        return Poly2(self.coeffs @ _pad_to(v, (max(k, v.size),))[:k])

    def transpose(self):
        """K(x, xi) -> K(xi, x)."""
        return Poly2(np.swapaxes(self.coeffs, 0, 1))

    @property
    def T(self):
        return self.transpose()

    def diff(self, var=1):
        c = self.coeffs
        ax = var - 1
        if c.shape[ax] == 1:
            return Poly2(np.zeros_like(c))
        k = np.arange(1, c.shape[ax]).reshape([-1 if i == ax else 1 for i in range(c.ndim)])
        return Poly2(np.take(c, np.arange(1, c.shape[ax]), axis=ax) * k)

    def antiderivative(self, var=1):
        c = self.coeffs
        ax = var - 1
        k = np.arange(1, c.shape[ax] + 1).reshape([-1 if i == ax else 1 for i in range(c.ndim)])
        zshape = list(c.shape)
        zshape[ax] = 1
        return Poly2(np.concatenate([np.zeros(zshape), c / k], axis=ax))

    def subs(self, var, value):
        """Substitute a number for one variable; returns Poly1 in the other."""
        c = self.coeffs
        ax = var - 1
        pw = float(value) ** np.arange(c.shape[ax])
        return Poly1(np.tensordot(pw, c, axes=(0, ax)))

    def diag(self):
        """Restriction to xi = x."""
        c = self.coeffs
        n0, n1 = c.shape[:2]
        out = np.zeros((n0 + n1 - 1,) + c.shape[2:])
        for i in range(n0):
            out[i:i + n1] += c[i]
        return Poly1(out)

    def __call__(self, x, xi):
        c = self.coeffs
        if c.ndim > 2:
            px = float(x) ** np.arange(c.shape[0])
            pxi = float(xi) ** np.arange(c.shape[1])
            return np.tensordot(px, np.tensordot(pxi, c, axes=(0, 1)), axes=(0, 0))
        x, xi = np.broadcast_arrays(np.asarray(x, float), np.asarray(xi, float))
        rows = np.zeros((c.shape[0],) + x.shape)
        for i in range(c.shape[0]):
            r = np.zeros_like(xi) + c[i, -1]
            for v in c[i, -2::-1]:
                r = r * xi + v
            rows[i] = r
        out = np.zeros_like(x) + rows[-1]
        for r in rows[-2::-1]:
            out = out * x + r
        return out if out.ndim else float(out)

    def __repr__(self):
        if self.pshape:
            return f"Poly2(deg={self.degree}, pshape={self.pshape})"
        return f"Poly2({np.array2string(self.coeffs, precision=6)})"


# ---------------------------------------------------------------------------
# the operations as free functions


def poly_arith(p, q, op, k=None):
    if op == "add":
        return p + q
    if op == "mul":
        if type(p) is not type(q):
            raise TypeError("arity mismatch")
        return p * q
    if op == "scale":
        return p.scale(k)
    raise ValueError(f"unknown op {op!r}")


def poly_diff(p, var=1):
    return p.diff(var)


def poly_eval(p, *point):
    return p(*point)


_BOUND_NAMES = ("x", "xi")


def _at_bound(F, var, bound):
    """Evaluate antiderivative F (Poly2, integrated in ``var``) at a bound.

    The remaining variable is relabelled x; a bound 'xi' introduces a new
    second variable.  Returns Poly2 in (x, xi).
    """
    c = F.coeffs
    if var == 1:
        c = np.swapaxes(c, 0, 1)  # now axis 0 = remaining, axis 1 = dummy
    if isinstance(bound, str):
        if bound == "x":
            return Poly2(Poly2(c).diag().coeffs[:, None])
        if bound == "xi":
            return Poly2(c)
        raise ValueError(f"unsupported bound {bound!r}")
    if isinstance(bound, Poly1):
        if bound.degree <= 0:
            bound = float(bound.coeffs[0])
        else:
            raise ValueError("polynomial bounds other than x or xi are not supported")
    pw = float(bound) ** np.arange(c.shape[1])
    return Poly2(np.tensordot(c, pw, axes=(1, 0))[:, None])


def poly_int(p, var, lower, upper):
    """Definite integral of ``p(s, t)`` over variable ``var`` (1 -> s, 2 -> t).

    The variable left over is renamed x.  Bounds are numbers, ``'x'`` (the
    leftover variable) or ``'xi'`` (a fresh second variable).  The result is
    a Poly1 in x unless a bound is ``'xi'``, in which case it is a Poly2.
    """
    if isinstance(p, Poly1):
        p = p.as_poly2(1)
    for b in (lower, upper):
        if isinstance(b, str) and b not in _BOUND_NAMES:
            raise ValueError(f"unsupported bound {b!r}")
    F = p.antiderivative(var)
    out = _at_bound(F, var, upper) - _at_bound(F, var, lower)
    if "xi" in (lower, upper):
        return out
    return Poly1(out.coeffs[:, 0])


# ---------------------------------------------------------------------------
# monomial vectors


@lru_cache(maxsize=None)
def monomials1(d):
    return tuple((i,) for i in range(d + 1))


@lru_cache(maxsize=None)
def monomials2(d):
    """Exponent pairs (i, j) with i + j <= d, in increasing lexicographic order."""
    return tuple(sorted((i, j) for i, j in product(range(d + 1), repeat=2) if i + j <= d))


def monomial_vector(nvars, d):
    return monomials1(d) if nvars == 1 else monomials2(d)


# ---------------------------------------------------------------------------
# bounds and quadrature


def lower_bound_on_interval(p: Poly1, margin=1e-12):
    """Certified lower bound of p on [0, 1] from critical points and endpoints."""
    c = p.coeffs
    cands = [0.0, 1.0]
    dp = p.diff()
    if dp.degree >= 1:
        try:
            roots = np.roots(dp.coeffs[::-1])
            for r in roots:
                if abs(r.imag) < 1e-9 and -1e-12 <= r.real <= 1 + 1e-12:
                    cands.append(min(max(r.real, 0.0), 1.0))
            vals = p(np.array(cands))
            if not np.all(np.isfinite(vals)):
                raise np.linalg.LinAlgError
            return float(vals.min()) - margin
        except np.linalg.LinAlgError:
            pass
    elif dp.degree < 1:
        return float(min(p(0.0), p(1.0))) - margin
    # fallback: dense sampling with a Lipschitz margin
    xs = np.linspace(0.0, 1.0, 10001)
    lip = float(np.max(np.abs(dp(xs))))
    return float(p(xs).min()) - lip * 0.5e-4 - margin


@lru_cache(maxsize=None)
def gauss_nodes(panels=10, order=8):
    g, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    h = np.diff(edges)
    x = (edges[:-1, None] + 0.5 * h[:, None] * (g[None, :] + 1.0)).ravel()
    wt = (0.5 * h[:, None] * w[None, :]).ravel()
    x.setflags(write=False)
    wt.setflags(write=False)
    return x, wt


def quadrature(f, domain="interval"):
    """Integrate f over [0,1] or over the triangle 0 <= xi <= x <= 1.

    f must accept numpy arrays (one array for the interval, two for the
    triangle).
    """
    x, w = gauss_nodes()
    if domain == "interval":
        return float(np.dot(w, f(x)))
    if domain == "triangle":
        X = x[:, None]
        XI = X * x[None, :]
        W = w[:, None] * w[None, :] * X
        return float(np.sum(W * f(X, XI)))
    raise ValueError(f"unknown domain {domain!r}")


# ---------------------------------------------------------------------------
# the plant


@dataclass(frozen=True)
class PdeModel:
    """w_t = a w_xx + b w_x + (c0 + lambda) w on (0,1), w(0)=0, w_x(1)=u."""

    a: Poly1
    b: Poly1
    c0: Poly1
    lam: float = 0.0
    alpha: float = None

    def __post_init__(self):
        for name in ("a", "b", "c0"):
            v = getattr(self, name)
            if not isinstance(v, Poly1):
                object.__setattr__(self, name, Poly1(v))
        if self.alpha is None:
            object.__setattr__(self, "alpha", lower_bound_on_interval(self.a))
        if not self.alpha > 0:
            raise ValueError(f"a(x) is not bounded away from zero on [0,1] (alpha={self.alpha:g})")

    @property
    def c(self) -> Poly1:
        return self.c0 + self.lam

    def with_lambda(self, lam):
        return PdeModel(self.a, self.b, self.c0, float(lam), self.alpha)

    @classmethod
    def from_coeffs(cls, a, b, c0, lam=0.0):
        return cls(Poly1(a), Poly1(b), Poly1(c0), float(lam))


def example1(lam=0.0):
    """Constant-coefficient reaction-diffusion: a=1, b=0, c=lambda."""
    return PdeModel.from_coeffs([1.0], [0.0], [0.0], lam)


def example2(lam=0.0):
    """Spatially varying coefficients used in the numerical tests."""
    return PdeModel.from_coeffs([2.0, 0.0, -1.0, 1.0], [0.0, -2.0, 3.0],
                                [0.7, -1.5, 1.3, -0.5], lam)


def ceil_half(k):
    return int(math.ceil(k / 2))
