import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parasos.opinverse import (ChebFun, CollocationInverse, apply, cheb_inverse, invert_operator,
                               inversion_residual, l2_inner, residual_scan)
from parasos.polycore import Poly1, Poly2, gauss_nodes, quadrature
from parasos.soscone import KernelTriple, XiCertificate, apply_operator, gram_map, gram_to_triple


def certificate(seed, d1=1, d2=1, eps=1.0):
    rng = np.random.default_rng(seed)
    N = gram_map(d1, d2).N
    A = rng.standard_normal((N, N)) * 0.5
    P = A @ A.T / N
    P[0, 0] += eps
    return XiCertificate.from_gram(P, d1, d2, eps)


def l2(f):
    return np.sqrt(quadrature(lambda x: f(x) ** 2))


def test_multiplier_only():
    inv = invert_operator(KernelTriple(Poly1([2.0]), Poly2([[0.0]])))
    assert inv.Minv(0.4) == pytest.approx(0.5, abs=1e-12)


def test_cheb_inverse_accuracy():
    M = Poly1([1.0, 0.5, 0.25])
    Minv, err = cheb_inverse(M, 10)
    xs = np.linspace(0, 1, 101)
    assert np.max(np.abs(Minv(xs) * M(xs) - 1)) < 1e-6 and err < 1e-6


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 1000))
def test_composition_both_ways(seed):
    cert = certificate(seed)
    inv = invert_operator(cert.triple, n=6, cheb_deg=6)
    bound = max(1e-4, 10 * inv.residual_bound)
    rng = np.random.default_rng(seed)
    for _ in range(20):
        w = Poly1(rng.standard_normal(4))
        assert inversion_residual(cert.triple, inv, w) <= bound * max(1.0, l2(w))
        assert inversion_residual(cert.triple, inv, w, reverse=True) <= bound * max(1.0, l2(w))


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 1000))
def test_coercivity_transfer(seed):
    cert = certificate(seed)
    inv = invert_operator(cert.triple)
    rng = np.random.default_rng(seed)
    xg, wg = gauss_nodes()
    for _ in range(5):
        w = Poly1(rng.standard_normal(4))
        nw = l2(w) ** 2
        q = float(np.dot(wg, w(xg) * apply_operator(inv, w, xg)))
        assert nw / cert.theta - 1e-8 <= q <= nw / cert.eps + 1e-8


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 1000))
def test_inverse_self_adjoint(seed):
    inv = invert_operator(certificate(seed).triple)
    rng = np.random.default_rng(seed)
    v, w = Poly1(rng.standard_normal(4)), Poly1(rng.standard_normal(4))
    xg, wg = gauss_nodes()
    a = np.dot(wg, v(xg) * apply_operator(inv, w, xg))
    b = np.dot(wg, w(xg) * apply_operator(inv, v, xg))
    assert a == pytest.approx(b, abs=1e-8)


@pytest.mark.parametrize("seed", range(4))
def test_residual_scan_random_grams(seed):
    """Residual at n=5 meets 1e-4; the scan decreases until it reaches the
    floor set by the Chebyshev degree, where it may settle from below."""
    res = residual_scan(certificate(seed).triple, Poly1([0.0, 0.4, -1.4, 1.0]), range(2, 7), 5)
    floor = residual_scan(certificate(seed).triple, Poly1([0.0, 0.4, -1.4, 1.0]), [12], 5)[0]
    assert res[3] <= 1e-4
    for a, b in zip(res, res[1:]):
        assert b <= a or b <= 1.02 * floor


@pytest.mark.parametrize("seed", range(3))
def test_collocation_inverse(seed):
    t = certificate(seed, 2, 2, eps=0.05).triple
    inv = CollocationInverse(t)
    assert inv.residual_bound < 1e-10
    f = Poly1([0.2, -1.0, 0.5])
    v = inv.solve(f)
    xg, _ = gauss_nodes()
    assert np.allclose(apply_operator(t, v, xg), f(xg), atol=1e-10)
    m1, k = inv.boundary_row()
    # (X^{-1} f)(1) through the boundary row
    assert v(1.0) == pytest.approx(m1 * f(1.0) + l2_inner(k, f), abs=1e-9)


def test_collocation_rejects_nonpositive_multiplier():
    with pytest.raises(ValueError):
        CollocationInverse(KernelTriple(Poly1([-1.0, 0.5]), Poly2([[0.0]])))


def test_chebfun_round_trip():
    f = ChebFun.fit(lambda x: np.exp(x))
    assert f(0.3) == pytest.approx(np.exp(0.3), abs=1e-13)
    assert np.allclose(apply(KernelTriple(Poly1([1.0]), Poly2([[0.0]])), f)(np.array([0.5])),
                       np.exp(0.5))
