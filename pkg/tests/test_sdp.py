import importlib.util

import numpy as np
import pytest

from parasos.sdp import (BracketError, SdpProblem, SolverOptions, check_point, max_feasible_scalar,
                         solve, write_sdpa)


def corr_problem(a):
    """[[1, a], [a, 1]] >= 0: feasible iff |a| <= 1."""
    p = SdpProblem()
    X = p.add_matrix_var("X", 2)
    rows = []
    for (i, j), v in (((0, 0), 1.0), ((1, 1), 1.0), ((0, 1), a)):
        r = np.zeros(1 + p.nvars)
        r[0] = -v
        r[1 + X.index(i, j)] = 1.0
        rows.append(r)
    p.add_equalities(np.array(rows), "entries")
    return p, X


@pytest.mark.parametrize("a,feasible", [(0.3, True), (0.999, True), (1.2, False), (-3.0, False)])
def test_small_feasibility(a, feasible):
    p, X = corr_problem(a)
    sol = solve(p)
    assert sol.feasible is feasible
    if feasible:
        res, mins = check_point(p, sol.values)
        assert res < 1e-7 and mins > -1e-7
        assert sol.matrix(X)[0, 1] == pytest.approx(a, abs=1e-7)


def test_scalar_inequality():
    p = SdpProblem()
    s = p.add_scalar_var("s")
    p.add_inequality(p.expr(s, 1.0) + np.eye(1 + p.nvars)[0] * -2.0, "s<=2")
    p.add_equality_exprs([p.expr(s) - np.eye(1 + p.nvars)[0] * 3.0], "s=3")
    assert not solve(p).feasible


def test_deterministic():
    p, _ = corr_problem(0.5)
    a, b = solve(p), solve(p)
    assert a.status == b.status and np.array_equal(a.values, b.values)


def test_bisection_down_closed():
    rec = []
    v = max_feasible_scalar(lambda a: corr_problem(a)[0], lo=0.0, hi=4.0, tol=1e-3, record=rec)
    assert 1.0 - 1e-3 <= v <= 1.0 + 1e-6
    feas = [r.value for r in rec if r.status == "feasible"]
    infeas = [r.value for r in rec if r.status != "feasible"]
    assert max(feas) < min(infeas)


def test_bisection_bracket_error():
    with pytest.raises(BracketError):
        max_feasible_scalar(lambda a: corr_problem(a)[0], lo=2.0, hi=4.0)


def test_sdpa_dump(tmp_path):
    p, _ = corr_problem(0.2)
    path = tmp_path / "p.dat-s"
    write_sdpa(p, path)
    lines = [ln for ln in path.read_text().splitlines() if ln and ln[0] not in "\"*"]
    assert lines[:3] == ["3", "1", "2"]
    solve(p, SolverOptions(dump=str(tmp_path / "q.dat-s")))
    assert (tmp_path / "q.dat-s").exists()


@pytest.mark.skipif(importlib.util.find_spec("cvxopt") is None, reason="cvxopt not installed")
@pytest.mark.parametrize("a", [0.4, 1.5])
def test_cvxopt_backend_agrees(a):
    p, _ = corr_problem(a)
    assert solve(p, SolverOptions(backend="cvxopt")).feasible == solve(p).feasible
