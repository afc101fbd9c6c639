"""Derivative-bound maps for quadratic Lyapunov functionals V(w) = <w, X w>.

``omega_s`` bounds dV/dt along w_t = a w_xx + b w_x + c w with w(0)=0 and
a homogeneous flux condition at x=1 (up to boundary terms collected in
``stability_boundary``).  ``omega_c`` is the dual version used for
controller synthesis, where the derivatives land on the kernels and the
coefficients stay outside.  Both are affine in the triple and work on
triples whose coefficients are affine SDP expressions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .polycore import PdeModel, Poly1, Poly2
from .soscone import KernelTriple

HatTriple = KernelTriple


def _wirtinger(model: PdeModel, eps):
    return 0.5 * math.pi ** 2 * model.alpha * eps


def omega_s(t: KernelTriple, model: PdeModel, eps: float) -> HatTriple:
    a, b, c = model.a, model.b, model.c
    M, K1, K2 = t.M, t.K1, t.K2
    ax, bx, cx = a.as_poly2(1), b.as_poly2(1), c.as_poly2(1)
    axi, bxi, cxi = a.as_poly2(2), b.as_poly2(2), c.as_poly2(2)
    Mhat = ((a * M).diff() - b * M).diff()
    Mhat = Mhat + (ax * (K1 - K2)).diff(1).diag().scale(2.0)
    Mhat = Mhat + (c * M).scale(2.0) - _wirtinger(model, eps)
    K1hat = ((ax * K1).diff(1) - bx * K1).diff(1) \
        + ((axi * K1).diff(2) - bxi * K1).diff(2) \
        + (cx + cxi) * K1
    return KernelTriple(Mhat, K1hat)


def omega_c(t: KernelTriple, model: PdeModel, eps: float) -> HatTriple:
    a, b, c = model.a, model.b, model.c
    M, K1, K2 = t.M, t.K1, t.K2
    ax, bx, cx = a.as_poly2(1), b.as_poly2(1), c.as_poly2(1)
    axi, bxi, cxi = a.as_poly2(2), b.as_poly2(2), c.as_poly2(2)
    Mhat = (a.diff().diff() - b.diff()) * M + b * M.diff() + a * M.diff().diff() \
        + (c * M).scale(2.0) - _wirtinger(model, eps) \
        + a * (K1 - K2).diff(1).diag().scale(2.0)
    K1hat = ax * K1.diff(1).diff(1) + bx * K1.diff(1) \
        + axi * K1.diff(2).diff(2) + bxi * K1.diff(2) + (cx + cxi) * K1
    return KernelTriple(Mhat, K1hat)


def negated_hat(hat: HatTriple, t: KernelTriple, rate: float) -> KernelTriple:
    """(-Mhat - 2 rate M, -K1hat - 2 rate K1, -K2hat - 2 rate K2)."""
    return KernelTriple(-hat.M - t.M.scale(2 * rate), -hat.K1 - t.K1.scale(2 * rate),
                        -hat.K2 - t.K2.scale(2 * rate))


@dataclass
class BoundaryConstraints:
    poly_equalities: list = field(default_factory=list)       # Poly1, each must vanish
    scalar_inequalities: list = field(default_factory=list)   # (expression, "<=")


def _bvals(model):
    a, b = model.a, model.b
    return float(a(1.0)), float(a.diff()(1.0)), float(b(1.0))


def flux_kernel(t: KernelTriple, model: PdeModel) -> Poly1:
    """(b(1) - a_x(1)) K1(1,x) - a(1) (D1 K1)(1,x)."""
    a1, ax1, b1 = _bvals(model)
    return t.K1.subs(1, 1.0).scale(b1 - ax1) - t.K1.diff(1).subs(1, 1.0).scale(a1)


def flux_scalar(t: KernelTriple, model: PdeModel):
    """(b(1) - a_x(1)) M(1) - a(1) M_x(1)."""
    a1, ax1, b1 = _bvals(model)
    return (b1 - ax1) * t.M(1.0) - a1 * t.M.diff()(1.0)


def stability_boundary(t: KernelTriple, model: PdeModel) -> BoundaryConstraints:
    return BoundaryConstraints(
        poly_equalities=[flux_kernel(t, model), t.K2.subs(1, 0.0)],
        scalar_inequalities=[(flux_scalar(t, model), "<=")],
    )


def controller_Y(t: KernelTriple, model: PdeModel, slack: float = 0.5):
    """Boundary gains of the dual closed loop: u = Y1 y(1) + <Y2, y>."""
    if not slack > 0:
        raise ValueError("slack must be positive")
    a1, ax1, b1 = _bvals(model)
    Y2 = t.K1.diff(1).subs(1, 1.0)
    Y1 = 0.5 * t.M.diff()(1.0) + (ax1 - b1) / (2 * a1) * t.M(1.0) - slack
    return Y1, Y2


def observer_T(t: KernelTriple, model: PdeModel, slack: float = 0.5):
    """Observer gain precursors (T1, T2, T3, L2).

    T1 cancels the boundary cross term 2 e(1) <flux_kernel, e> of the error
    derivative, T2 makes the e(1)^2 coefficient negative and T3 absorbs the
    kernel part of the flux injection.
    """
    if not slack > 0:
        raise ValueError("slack must be positive")
    a1, _, _ = _bvals(model)
    T1 = -flux_kernel(t, model)
    T2 = -0.5 * flux_scalar(t, model) - slack
    M1 = t.M(1.0)
    if not abs(a1 * M1) > 0:
        raise ValueError("corrupted certificate: a(1) M(1) = 0")
    L2 = T2 / (a1 * M1)
    T3 = t.K1.subs(1, 1.0).scale(-L2 * a1)
    return T1, float(T2), T3, float(L2)


def hat_degrees(model: PdeModel, d1: int, d2: int, mode: str = "s"):
    """Smallest Gram degrees able to represent the negated hat triple.

    Multiplier degree is at most 2 d1 + max(deg a, deg b + 1, deg c) (the
    kernel diagonal term has the same bound); kernel total degree is at most
    kernel_degree(d1, d2) + max(deg a - 2, deg b - 1, deg c, 0).
    """
    from .soscone import kernel_degree
    da, db, dc = (max(p.degree, 0) for p in (model.a, model.b, model.c))
    degM = 2 * d1 + max(da, db + 1 if model.b.degree >= 0 else 0, dc, 0)
    # the diagonal term carries deg(a) + kernel degree - 1
    degM = max(degM, da + kernel_degree(d1, d2) - 1)
    degK = kernel_degree(d1, d2) + max(da - 2, db - 1, dc, 0)
    e1 = -(-degM // 2)
    e2 = 0
    while max(e1 + e2, 2 * e2 + 1) < degK:
        e2 += 1
    return e1, e2
