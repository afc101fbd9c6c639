"""Sparse SDPA export of a feasibility problem.

The problem is written in standard form after the epsilon shift: find
blocks X_k >= 0 and a nonnegative vector x with <A_i, X> + a_i.x = b_i.
In SDPA terms this is the dual side, with F_i = A_i, c_i = b_i and F_0 = 0;
free scalars appear as a difference of two nonnegative entries.
"""
from __future__ import annotations

import numpy as np


def write_sdpa(problem, path):
    from .driver import to_conic
    con = to_conic(problem)
    m = con.b.size
    nl = con.A_l.shape[1]
    blocks = list(con.dims) + ([-nl] if nl else [])
    lines = [f'"parasos feasibility problem: {len(problem.matrix_vars)} Gram blocks"',
             str(m), str(len(blocks)), " ".join(str(b) for b in blocks),
             " ".join(repr(float(v)) for v in con.b)]
    for i in range(m):
        for k, T in enumerate(con.A_s):
            r, c = np.nonzero(np.triu(T[i]))
            for a, b_ in zip(r, c):
                lines.append(f"{i + 1} {k + 1} {a + 1} {b_ + 1} {T[i, a, b_]!r}")
        if nl:
            for j in np.nonzero(con.A_l[i])[0]:
                lines.append(f"{i + 1} {len(con.dims) + 1} {j + 1} {j + 1} {con.A_l[i, j]!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
