import math

import numpy as np
import pytest
from scipy.special import iv, jv

from parasos.baselines import (backstepping_controller, backstepping_kernels, bessel_i1_over_z,
                               bessel_j1_over_z, collocated_decay_rate, controllability_condition,
                               hautus_measures, inverse_pair_residual, sturm_liouville_bound,
                               uncontrollable_modes)
from parasos.polycore import example1, example2
from parasos.simlab import discretize, estimate_decay_rate, gaussian_difference, simulate


def reference(z, sign, terms=60):
    s = np.square(z) / 4.0
    return sum(0.5 * (sign * s) ** k / (math.factorial(k) * math.factorial(k + 1))
               for k in range(terms))


def test_bessel_series_against_long_series():
    z = np.linspace(0.0, 8.0, 81)
    assert np.max(np.abs(bessel_i1_over_z(z) - reference(z, 1.0))) < 1e-12 * np.max(reference(z, 1))
    assert np.max(np.abs(bessel_j1_over_z(z) - reference(z, -1.0))) < 1e-12
    nz = z[1:]
    assert np.allclose(bessel_i1_over_z(nz), iv(1, nz) / nz, rtol=1e-12)
    assert np.allclose(bessel_j1_over_z(nz), jv(1, nz) / nz, atol=1e-13)


def test_series_guard():
    with pytest.raises(ValueError):
        bessel_i1_over_z(80.0)


@pytest.mark.parametrize("lam", [1.0, 5.0, 10.0])
def test_inverse_pair(lam):
    assert inverse_pair_residual(lam) < 1e-6


def test_kernel_domain():
    with pytest.raises(ValueError):
        backstepping_kernels(1.0, 0.2, 0.5)
    E, F = backstepping_kernels(4.0, 1.0, 1.0)
    assert E == pytest.approx(-2.0) and F == pytest.approx(-2.0)


def test_backstepping_gain_is_kernel_derivative():
    c = backstepping_controller(10.0)
    assert c.R1 == -5.0
    h = 1e-6
    for x in (0.1, 0.5, 0.9):
        fd = (backstepping_kernels(10.0, 1.0, x)[0] - backstepping_kernels(10.0, 1.0 - h, x)[0]) / h
        assert c.R2(x) == pytest.approx(fd, rel=1e-4)


@pytest.mark.parametrize("lam", [0.0, 3.0, 12.0])
def test_sturm_liouville_example1_exact(lam):
    b = sturm_liouville_bound(example1(lam))
    assert b.mu1cc == pytest.approx(lam - math.pi ** 2, abs=1e-12)
    assert b.threshold == pytest.approx(math.pi ** 2, abs=1e-9)


def test_sturm_liouville_example2():
    b = sturm_liouville_bound(example2(0.0))
    assert b.threshold == pytest.approx(17.58, abs=0.05)
    assert b.mu1cc == pytest.approx(0.0 - b.threshold, abs=1e-6 * b.threshold)


def test_controllability_orders():
    assert 1e6 <= controllability_condition(5) <= 1e8
    assert 1e23 <= controllability_condition(10) <= 1e27
    with pytest.raises(ValueError):
        controllability_condition(1)


def test_log_grid_rank_deficiency():
    assert [uncontrollable_modes(m, "log") for m in (12, 13)] == [0, 0]
    assert all(uncontrollable_modes(m, "log") >= 1 for m in (14, 16, 18))
    assert all(uncontrollable_modes(m, "uniform") == 0 for m in (14, 18))


def test_hautus_measures_unit_range():
    A = np.diag([-1.0, -2.0])
    h = hautus_measures(A, np.array([1.0, 0.0]))
    assert sorted(np.round(h, 12)) == [0.0, 1.0]


@pytest.mark.parametrize("kappa", [1.0, 100.0, 1000.0])
def test_collocated_rate_below_three_quarters_pi2(kappa):
    r = collocated_decay_rate(kappa)
    assert r.simulated == pytest.approx(r.analytic, rel=1e-3)
    assert r.analytic < r.limit


def test_collocated_rate_increases_with_gain():
    rates = [collocated_decay_rate(k, m=64).analytic for k in (1.0, 10.0, 100.0)]
    assert rates == sorted(rates)


@pytest.mark.parametrize("lam", [5.0, 15.0])
def test_backstepping_stabilizes_example1(lam):
    d = discretize(example1(lam), 128)
    open_loop = simulate(d, None, gaussian_difference, T=1.0)
    closed = simulate(d, backstepping_controller(lam), gaussian_difference, T=1.0)
    assert open_loop.norms[-1] > open_loop.norms[0]
    assert estimate_decay_rate(closed) > 1.0
