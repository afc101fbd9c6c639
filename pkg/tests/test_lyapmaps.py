import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parasos.lyapmaps import controller_Y, hat_degrees, negated_hat, observer_T, omega_c, omega_s
from parasos.polycore import Poly1, Poly2, example1, example2
from parasos.soscone import KernelTriple


def rand_triple(rng, dm=4, dk=3):
    K1 = Poly2(rng.standard_normal((dk, dk)))
    return KernelTriple(Poly1(rng.standard_normal(dm)), K1)


def lin(a, x, b, y):
    return KernelTriple(a.M.scale(x) + b.M.scale(y), a.K1.scale(x) + b.K1.scale(y),
                        a.K2.scale(x) + b.K2.scale(y))


def close(a, b, tol=1e-9):
    for p, q in ((a.M, b.M), (a.K1, b.K1), (a.K2, b.K2)):
        d = (p - q).coeffs
        if np.max(np.abs(d), initial=0.0) > tol * (1 + np.max(np.abs(p.coeffs))):
            return False
    return True


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3),
       st.sampled_from([omega_s, omega_c]), st.sampled_from([example1, example2]))
def test_omega_affine(seed, al, be, omega, family):
    rng = np.random.default_rng(seed)
    model, eps = family(2.0), 0.01
    ta, tb = rand_triple(rng), rand_triple(rng)
    z = omega(KernelTriple.zero(), model, eps)
    lhs = lin(omega(lin(ta, al, tb, be), model, eps), 1.0, z, -1.0)
    rhs = lin(lin(omega(ta, model, eps), 1.0, z, -1.0), al,
              lin(omega(tb, model, eps), 1.0, z, -1.0), be)
    assert close(lhs, rhs)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([omega_s, omega_c]))
def test_hat_kernel_symmetry(seed, omega):
    rng = np.random.default_rng(seed)
    h = omega(rand_triple(rng), example2(1.0), 0.01)
    x, s = rng.random((2, 8))
    assert np.allclose(h.K2(x, s), h.K1(s, x))


def test_negated_hat_includes_rate():
    rng = np.random.default_rng(0)
    t = rand_triple(rng)
    h = omega_s(t, example1(0.0), 0.0)
    n = negated_hat(h, t, 0.5)
    assert np.allclose(n.M(0.3), -h.M(0.3) - t.M(0.3))


def test_lambda_enters_as_two_lambda_M():
    rng = np.random.default_rng(1)
    t = rand_triple(rng)
    a = omega_s(t, example2(0.0), 0.01)
    b = omega_s(t, example2(1.5), 0.01)
    assert np.allclose((b.M - a.M).coeffs, t.M.scale(3.0).coeffs)


def test_gain_polynomials_shapes():
    rng = np.random.default_rng(2)
    t = rand_triple(rng)
    Y1, Y2 = controller_Y(t, example2(0.0))
    assert np.isscalar(Y1) or np.ndim(Y1) == 0
    assert isinstance(Y2, Poly1)
    T1, T2, T3, L2 = observer_T(t, example2(0.0))
    assert isinstance(T1, Poly1) and isinstance(T3, Poly1)
    with pytest.raises(ValueError):
        controller_Y(t, example2(0.0), slack=0.0)


def test_hat_degrees_cover_derivative():
    d1, d2 = hat_degrees(example2(0.0), 3, 3)
    assert d1 >= 3 and d2 >= 3
