"""Feasibility problems over symmetric matrix variables.

Variables are the upper-triangular entries (row-major) of each matrix
variable followed by scalar variables.  Affine expressions are numpy arrays
whose entry 0 is the constant and entry 1 + k multiplies variable k; arrays
shorter than ``1 + nvars`` are implicitly zero padded.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

MAX_GRAM_DIM = 2000


@dataclass
class MatrixVar:
    name: str
    dim: int
    shift: float
    offset: int
    iu: np.ndarray
    ju: np.ndarray
    psd_dim: int            # PSD block size (leading principal block when restricted)
    loc: "MatrixVar" = None  # companion localizing variable, if any

    @property
    def nentries(self):
        return self.iu.size

    def matrix(self, values):
        """Full symmetric matrix from the global variable vector."""
        v = np.asarray(values)[self.offset:self.offset + self.nentries]
        X = np.zeros((self.dim, self.dim))
        X[self.iu, self.ju] = v
        X[self.ju, self.iu] = v
        return X

    def index(self, i, j):
        i, j = min(i, j), max(i, j)
        hit = np.nonzero((self.iu == i) & (self.ju == j))[0]
        if not hit.size:
            raise KeyError((i, j))
        return self.offset + int(hit[0])


@dataclass
class ScalarVar:
    name: str
    offset: int
    nonneg: bool


@dataclass
class SdpProblem:
    matrix_vars: list = field(default_factory=list)
    scalar_vars: list = field(default_factory=list)
    eq_blocks: list = field(default_factory=list)   # csr rows over [1, v]
    eq_tags: list = field(default_factory=list)
    nvars: int = 0

    # declarations -------------------------------------------------------
    def add_matrix_var(self, name, dim, shift=0.0, support=None):
        if dim > MAX_GRAM_DIM:
            raise ValueError(f"Gram variable {name!r} has dimension {dim} > {MAX_GRAM_DIM}; "
                             "lower the monomial degrees")
        if support is None:
            iu, ju = np.triu_indices(dim)
            psd = dim
        else:
            iu, ju = (np.asarray(s) for s in support)
            psd = int(max(iu.max(), ju.max())) + 1
            ref = np.triu_indices(psd)
            if iu.size != ref[0].size or np.any(iu != ref[0]) or np.any(ju != ref[1]):
                raise ValueError("restricted support must be a leading principal block")
        v = MatrixVar(name, dim, float(shift or 0.0), self.nvars, iu, ju, psd)
        self.matrix_vars.append(v)
        self.nvars += v.nentries
        return v

    def add_scalar_var(self, name, nonneg=False):
        s = ScalarVar(name, self.nvars, nonneg)
        self.scalar_vars.append(s)
        self.nvars += 1
        return s

    def expr(self, var, coeff=1.0):
        """Affine expression for a scalar variable."""
        e = np.zeros(1 + self.nvars)
        e[1 + var.offset] = coeff
        return e

    # constraints --------------------------------------------------------
    def add_equalities(self, rows, tag=""):
        """Each row r means r . [1, v] == 0."""
        rows = sp.csr_matrix(rows)
        if rows.shape[0] == 0:
            return
        nnz_var = np.diff(rows[:, 1:].tocsr().indptr) if rows.shape[1] > 1 else np.zeros(rows.shape[0])
        const = rows[:, 0].toarray().ravel()
        empty = nnz_var == 0
        if np.any(empty & (np.abs(const) > 1e-11)):
            bad = float(np.max(np.abs(const[empty])))
            self.eq_blocks.append(rows[np.nonzero(empty)[0]])
            self.eq_tags.append(f"{tag} (constant mismatch {bad:.3g})")
        keep = np.nonzero(~empty)[0]
        if keep.size:
            self.eq_blocks.append(rows[keep])
            self.eq_tags.append(tag)

    def add_equality_exprs(self, exprs, tag=""):
        exprs = [np.atleast_1d(np.asarray(e, float)) for e in exprs]
        width = max(e.size for e in exprs)
        R = np.zeros((len(exprs), width))
        for i, e in enumerate(exprs):
            R[i, :e.size] = e
        self.add_equalities(R, tag)

    def add_inequality(self, expr, tag=""):
        """expr . [1, v] <= 0, realized with a nonnegative slack."""
        s = self.add_scalar_var(f"slack:{tag}", nonneg=True)
        e = np.zeros(1 + self.nvars)
        expr = np.asarray(expr, float)
        e[:expr.size] += expr
        e[1 + s.offset] = 1.0
        self.add_equality_exprs([e], tag=f"ineq:{tag}")
        return s

    # assembly -----------------------------------------------------------
    def system(self):
        """(A, b) with A v = b over all variables."""
        K = 1 + self.nvars
        blocks = []
        for B in self.eq_blocks:
            B = sp.csr_matrix(B)
            if B.shape[1] < K:
                B = sp.hstack([B, sp.csr_matrix((B.shape[0], K - B.shape[1]))]).tocsr()
            blocks.append(B)
        if not blocks:
            return sp.csr_matrix((0, self.nvars)), np.zeros(0)
        R = sp.vstack(blocks).tocsr()
        return R[:, 1:].tocsr(), -R[:, 0].toarray().ravel()

    def n_equalities(self):
        return sum(B.shape[0] for B in self.eq_blocks)


@dataclass
class SdpSolution:
    values: np.ndarray
    status: str                      # feasible | infeasible | inaccurate
    max_eq_residual: float
    min_psd_eig: float
    margin: float = float("nan")     # largest uniform eigenvalue margin found
    iterations: int = 0
    solver: str = ""
    info: dict = field(default_factory=dict)

    @property
    def feasible(self):
        return self.status == "feasible"

    def matrix(self, var: MatrixVar):
        return var.matrix(self.values)

    def scalar(self, var: ScalarVar):
        return float(self.values[var.offset])

    def assignments(self, problem: SdpProblem):
        out = {v.name: v.matrix(self.values) for v in problem.matrix_vars}
        out.update({s.name: float(self.values[s.offset]) for s in problem.scalar_vars})
        return out


def check_point(problem: SdpProblem, values):
    """Equality residual and smallest shifted eigenvalue of a candidate point."""
    A, b = problem.system()
    res = float(np.max(np.abs(A @ values - b), initial=0.0))
    mins = np.inf
    for v in problem.matrix_vars:
        X = v.matrix(values)[:v.psd_dim, :v.psd_dim].copy()
        X[0, 0] -= v.shift
        mins = min(mins, float(np.linalg.eigvalsh(X)[0]))
    for s in problem.scalar_vars:
        if s.nonneg:
            mins = min(mins, float(values[s.offset]))
    return res, (mins if np.isfinite(mins) else 0.0)
