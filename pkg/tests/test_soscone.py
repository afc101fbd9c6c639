import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parasos.polycore import Poly1
from parasos.soscone import (XiCertificate, gram_form, gram_map, gram_to_triple, quad_form,
                             verify_certificate)

degs = st.tuples(st.integers(0, 2), st.integers(0, 2))


def random_gram(seed, d1, d2, eps=0.1):
    rng = np.random.default_rng(seed)
    N = gram_map(d1, d2).N
    A = rng.standard_normal((N, N))
    P = A @ A.T / N
    P[0, 0] += eps
    return P


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), degs)
def test_round_trip(seed, d):
    cert = XiCertificate.from_gram(random_gram(seed, *d), *d, 0.1)
    assert verify_certificate(cert, n_samples=10)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), degs)
def test_quadratic_form_matches_gram_form(seed, d):
    P = random_gram(seed, *d)
    t = gram_to_triple(P, *d)
    rng = np.random.default_rng(seed + 1)
    for _ in range(20):
        w = Poly1(rng.standard_normal(5))
        a = quad_form(t, w, w)
        assert a == pytest.approx(gram_form(P, *d, w), rel=1e-8, abs=1e-8)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), degs)
def test_self_adjoint(seed, d):
    t = gram_to_triple(random_gram(seed, *d), *d)
    rng = np.random.default_rng(seed)
    v, w = Poly1(rng.standard_normal(4)), Poly1(rng.standard_normal(4))
    assert quad_form(t, v, w) == pytest.approx(quad_form(t, w, v), rel=1e-9, abs=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 10_000), degs)
def test_cone_closure(s1, s2, d):
    Pa, Pb = random_gram(s1, *d), random_gram(s2, *d)
    ta, tb = gram_to_triple(Pa, *d), gram_to_triple(Pb, *d)
    tc = gram_to_triple(Pa + Pb, *d)
    assert np.allclose((ta.M + tb.M).coeffs, tc.M.coeffs)
    assert np.allclose((ta.K1 + tb.K1).coeffs, tc.K1.coeffs)
    assert verify_certificate(XiCertificate.from_gram(Pa + Pb, *d, 0.2), n_samples=5)


def test_symmetry_of_kernels():
    t = gram_to_triple(random_gram(3, 1, 2), 1, 2)
    xs, ss = np.random.default_rng(0).random((2, 6))
    assert np.allclose(t.K2(xs, ss), t.K1(ss, xs))


def test_verify_rejects_non_psd():
    P = random_gram(1, 1, 1)
    P[0, 0] -= 5.0
    rep = verify_certificate(XiCertificate.from_gram(P, 1, 1, 0.1))
    assert not rep and any("PSD" in v for v in rep.violations)


def test_localizer_term_is_checked():
    P = random_gram(2, 1, 1)
    loc = -np.eye(2)
    cert = XiCertificate.from_gram(P, 1, 1, 0.1, restrict_diag=True, loc=loc)
    assert not verify_certificate(cert, n_samples=5)
