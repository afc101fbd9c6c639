"""Bisection for the largest parameter with a feasible problem."""
from __future__ import annotations

import logging
from dataclasses import dataclass

from .driver import SolverOptions, solve

log = logging.getLogger(__name__)


class BracketError(ValueError):
    pass


@dataclass
class Probe:
    value: float
    status: str
    solution: object
    problem: object


def max_feasible_scalar(builder, lo=0.0, hi=50.0, tol=0.01, opts: SolverOptions = None,
                        record=None, solver=None):
    """Largest value in [lo, hi] (to within ``tol``) whose problem is feasible.

    ``builder(v)`` returns an SdpProblem.  Anything other than a feasible
    status counts as infeasible, so the answer errs on the certified side.
    Feasible sets are assumed to be down-closed in the parameter.  ``record``
    (a list) receives every probe.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not hi > lo:
        raise ValueError("need lo < hi")
    solver = solver or (lambda p: solve(p, opts))

    def probe(v):
        prob = builder(v)
        sol = solver(prob)
        log.info("probe %.6g: %s", v, sol.status)
        if record is not None:
            record.append(Probe(v, sol.status, sol, prob))
        return sol.feasible

    if not probe(lo):
        raise BracketError(f"lower bracket infeasible at {lo}")
    if probe(hi):
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if probe(mid):
            lo = mid
        else:
            hi = mid
        if not lo < hi:
            raise BracketError("bisection bracket collapsed")
    return lo
