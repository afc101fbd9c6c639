"""Acceptance gate.  Each test records one PASS/FAIL line, printed in the
terminal summary (and when the file is run as a script)."""
from __future__ import annotations

import math
import time

import numpy as np
import pytest

import _cases as C
from parasos.baselines import (controllability_condition, inverse_pair_residual,
                               sturm_liouville_bound, uncontrollable_modes)
from parasos.lyapmaps import omega_c, omega_s
from parasos.opinverse import residual_scan
from parasos.polycore import Poly1, Poly2, example1, example2, quadrature
from parasos.simlab import lyapunov_derivative_check, simulate, discretize
from parasos.soscone import KernelTriple, apply_operator, gram_form, quad_form, verify_certificate
from parasos.synthpipeline import analyze_stability

RESULTS: dict = {}
ROUNDING = 1e-14


def record(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def test_criterion_1_ex1_stability_margin():
    lam, seconds = C.ex1_stability_sweep()
    ok = (2.0 <= lam[4] <= 2.4674 and 2.40 <= lam[5] <= 2.4674
          and max(lam.values()) <= C.PI2_4 + C.SWEEP_TOL and seconds < 600)
    record(1, ok, f"lambda*(3,4,5) = {lam[3]:.4f}, {lam[4]:.4f}, {lam[5]:.4f} "
                  f"(pi^2/4 = {C.PI2_4:.4f}), {seconds:.0f} s")
    assert ok


def test_criterion_2_ex2_stability_margin():
    lam = C.ex2_stability_sweep()[4]
    emp = C.ex2_empirical_margin()
    ok = 4.4 <= lam <= 4.76 and abs(lam - emp) <= 0.15
    record(2, ok, f"lambda*(4) = {lam:.4f}, simulated margin {emp:.4f}")
    assert ok


def test_criterion_3_degree_monotonicity():
    sweeps = {"ex1 stability": C.ex1_stability_sweep()[0], "ex2 stability": C.ex2_stability_sweep(),
              "ex1 restricted state_fb": C.restricted_sweep()}
    bad = []
    for name, lam in sweeps.items():
        ds = sorted(lam)
        bad += [f"{name} d={b}" for a, b in zip(ds, ds[1:]) if lam[b] < lam[a] - C.SWEEP_TOL]
    ok = not bad
    record(3, ok, "all sweeps non-decreasing in d" if ok else "violations: " + ", ".join(bad))
    assert ok


def test_criterion_4_state_feedback_ex1():
    d, g, disc, traj = C.ex1_state_feedback()
    if d is None:
        record(4, False, "no feasible degree d <= 8 at lambda = 10")
        pytest.fail("state-feedback synthesis infeasible for every d <= 8")
    ratio = traj.norms[-1] / traj.norms[0]
    ok = ratio <= 1e-3
    record(4, ok, f"feasible at d = {d}; ||w(5)||/||w(0)|| = {ratio:.2e}")
    assert ok


def test_criterion_5_output_feedback_ex2():
    of, disc, traj = C.ex2_output_feedback()
    if not of:
        record(5, False, f"synthesis failed: {of}")
        pytest.fail(str(of))
    e0, w0 = traj.est_error_norms[0], traj.norms[0]
    w_mono, w_up, _ = C.monotone_after(traj.times, traj.norms)
    e_mono, e_up, e_rise = C.monotone_after(traj.times, traj.est_error_norms)
    k5 = np.searchsorted(traj.times, 5.0 - 1e-9)
    small = traj.norms[k5] <= 1e-3 * w0 and traj.est_error_norms[k5] <= 1e-3 * e0
    ok = w_mono and e_mono and small
    record(5, ok, f"synthesis ok; ||w|| monotone after 0.5: {w_mono}; ||w_hat - w|| monotone: "
                  f"{e_mono} ({e_up} increasing steps, max relative rise {e_rise:.2f}); "
                  f"both below 1e-3 of initial at t=5: {small}")
    assert ok


def test_criterion_6_operator_inversion():
    w = Poly1([0.0, 0.4, -1.4, 1.0])
    lines, ok = [], True
    for lam in (0.0, 1.0, 2.0):
        rep = analyze_stability(example1(lam), 1, 1, eps=1.0)
        assert rep, rep
        res = residual_scan(rep.certificate.triple, w, range(2, 7), cheb_deg=5)
        mono = all(b <= a + ROUNDING for a, b in zip(res, res[1:]))
        ok &= res[3] <= 1e-4 and mono
        lines.append(f"lambda={lam:g}: r(5)={res[3]:.1e} monotone={mono}")
    record(6, ok, "; ".join(lines))
    assert ok


def test_criterion_7_restricted_kernels():
    lam = C.restricted_sweep()
    full = C.unrestricted_d7()
    inside = all(4.3 <= v <= 5.4 for v in lam.values())
    ok = inside and full >= 2.0 * max(lam.values())
    record(7, ok, "restricted lambda*(3..6) = " + ", ".join(f"{lam[d]:.3f}" for d in sorted(lam))
           + f"; unrestricted lambda*(7) = {full:.2f}")
    assert ok


def test_criterion_8_baselines():
    sl1 = sturm_liouville_bound(example1(3.0))
    sl2 = sturm_liouville_bound(example2(3.0))
    checks = {
        "SL ex1 = lambda - pi^2": abs(sl1.mu1cc - (3.0 - math.pi ** 2)) < 1e-9,
        "SL ex2 threshold 17.58": abs(sl2.threshold - 17.58) <= 0.05,
        "backstepping pair": inverse_pair_residual(10.0) < 1e-6,
        "cond m=5": 1e6 <= controllability_condition(5) <= 1e8,
        "cond m=10": 1e23 <= controllability_condition(10) <= 1e27,
        "log grid": all(uncontrollable_modes(m, "log") == 0 for m in range(5, 14))
        and all(uncontrollable_modes(m, "log") > 0 for m in range(14, 20)),
    }
    ok = all(checks.values())
    record(8, ok, ", ".join(f"{k}: {'ok' if v else 'FAIL'}" for k, v in checks.items()))
    assert ok


# ---------------------------------------------------------------------------
# criterion 9: properties on the certificates of criteria 1-5


def _certificates():
    out = []
    lam1 = C.ex1_stability_sweep()[0]
    lam2 = C.ex2_stability_sweep()
    for name, fam, d, lam in (("ex1", example1, 5, lam1[5]), ("ex2", example2, 4, lam2[4])):
        rep = C.stability_report(name, d, lam)
        assert rep, rep
        out.append((f"{name} stability d={d}", rep.certificate, fam(lam), "s", rep))
    d, g, _, _ = C.ex1_state_feedback()
    if g:
        out.append((f"ex1 controller d={d}", g.certificate, example1(10.0), "c", g))
    of, _, _ = C.ex2_output_feedback()
    if of:
        out.append(("ex2 controller d=6", of.controller.certificate, example2(35.0), "c",
                    of.controller))
        out.append(("ex2 observer d=6", of.observer.certificate, example2(35.0), "s",
                    of.observer))
    return out


def _lyapunov(name, cert, model, kind, obj):
    if name.startswith("ex") and "stability" in name:
        disc = discretize(model, 128, bc="autonomous")
        traj = simulate(disc, None, lambda x: np.sin(math.pi * x / 2), T=2.0, dt=1e-3)
        return lyapunov_derivative_check(cert, traj, obj.delta, disc)
    if "controller" in name and name.startswith("ex1"):
        _, _, disc, traj = C.ex1_state_feedback()
        return lyapunov_derivative_check(cert, traj, obj.mu, disc, inverse=True)
    of, disc, traj = C.ex2_output_feedback()
    if "controller" in name:
        # the controller certificate covers the full-state loop with the same gains
        sf = simulate(disc, of.controller, None, T=5.0, dt=1e-3)
        return lyapunov_derivative_check(cert, sf, obj.mu, disc, inverse=True)
    return lyapunov_derivative_check(cert, traj, obj.delta, disc, error=True)


def test_criterion_9_property_suites():
    rng = np.random.default_rng(9)
    fails = []
    certs = _certificates()
    for name, cert, model, kind, obj in certs:
        if not verify_certificate(cert, n_samples=20):
            fails.append(f"{name}: round trip")
        for _ in range(5):
            v, w = (Poly1(rng.standard_normal(4)) for _ in range(2))
            a, b = quad_form(cert.triple, w, w), gram_form(cert.P, cert.d1, cert.d2, w)
            if abs(a - b) > 1e-8 * max(1.0, abs(a)):
                fails.append(f"{name}: quadratic form {a:.6g} vs {b:.6g}")
                break
            l, r = quad_form(cert.triple, v, w), quad_form(cert.triple, w, v)
            if abs(l - r) > 1e-8 * max(1.0, abs(l)):
                fails.append(f"{name}: self-adjointness")
                break
        omega = omega_s if kind == "s" else omega_c
        t2 = KernelTriple(Poly1(rng.standard_normal(3)), Poly2(rng.standard_normal((2, 2))))
        z = omega(KernelTriple.zero(), model, cert.eps)
        lhs = omega(_comb(cert.triple, 0.7, t2, -1.3), model, cert.eps)
        rhs = _comb(_diff(omega(cert.triple, model, cert.eps), z), 0.7,
                    _diff(omega(t2, model, cert.eps), z), -1.3)
        if _dist(_diff(lhs, z), rhs) > 1e-8 * max(1.0, _norm(rhs)):
            fails.append(f"{name}: Omega affinity")
        w = Poly1(rng.standard_normal(5))
        K, P = cert.triple.K1, cert.triple.K2
        if not _order_swap_ok(K, P, w):
            fails.append(f"{name}: order swap")
        lc = _lyapunov(name, cert, model, kind, obj)
        if lc is not None and not lc:
            fails.append(f"{name}: Lyapunov derivative (excess {lc.worst_excess:.2e} "
                         f"at snapshot {lc.worst_index})")
    for _ in range(10):
        zc = rng.standard_normal(6)
        zc[0] = 0.0
        z = Poly1(zc)
        if quadrature(lambda x: z(x) ** 2) > 4 / math.pi ** 2 * quadrature(lambda x: z.diff()(x) ** 2):
            fails.append("Wirtinger")
    ok = not fails
    record(9, ok, f"{len(certs)} certificates checked" + ("" if ok else ": " + "; ".join(fails)))
    assert ok


def _comb(a, x, b, y):
    return KernelTriple(a.M.scale(x) + b.M.scale(y), a.K1.scale(x) + b.K1.scale(y),
                        a.K2.scale(x) + b.K2.scale(y))


def _diff(a, b):
    return _comb(a, 1.0, b, -1.0)


def _coefs(t):
    return [t.M.coeffs.ravel(), t.K1.coeffs.ravel(), t.K2.coeffs.ravel()]


def _norm(t):
    return max(float(np.max(np.abs(c), initial=0.0)) for c in _coefs(t))


def _dist(a, b):
    d = _diff(a, b)
    return _norm(d)


def _order_swap_ok(K, P, w, tol=1e-9):
    lhs = quadrature(lambda x: w(x) * _split_apply(K, P, w, x))
    low = quadrature(lambda x, s: w(x) * 0.5 * (K(x, s) + P(s, x)) * w(s), "triangle")
    # upper triangle written with swapped names: x in (s, 1), so s <= x after relabeling
    up = quadrature(lambda x, s: w(s) * 0.5 * (P(s, x) + K(x, s)) * w(x), "triangle")
    return abs(lhs - (low + up)) <= tol * max(1.0, abs(lhs))


def _split_apply(K, P, w, xs):
    t = KernelTriple(Poly1([0.0]), K, P)
    return apply_operator(t, w, xs)


if __name__ == "__main__":
    import sys
    t0 = time.perf_counter()
    for fn in [v for k, v in sorted(globals().items()) if k.startswith("test_criterion")]:
        try:
            fn()
        except Exception as exc:  # noqa: BLE001
            if fn.__name__ not in str(RESULTS):
                print(f"{fn.__name__}: FAIL  {type(exc).__name__}: {exc}")
    print(f"done in {time.perf_counter() - t0:.0f} s")
    sys.exit(0 if RESULTS and all(ok for ok, _ in RESULTS.values()) else 1)
