"""Numeric foundations: datasets, polyhedra, and residual projections.

Everything downstream works with a response ``y``, a high-dimensional block
``X`` whose columns compete for selection, and external covariates ``Z``
(plus an optional intercept).  Selection events are polyhedra in y-space,
and the reference distributions live in the residual subspace orthogonal
to Z.
"""

import numpy as np

from .errors import (
    ConstantColumn, DataError, DimensionMismatch, NonFinite, RankDeficient,
)

# relative tolerance for rank decisions in orthogonal decompositions
RANK_RTOL = 1e-10


def standardize(matrix):
    """Center each column to mean 0 and scale to unit variance (divisor n-1).

    Parameters
    ----------
    matrix : (n, p) array

    Returns
    -------
    (n, p) array, a standardized copy.

    Raises
    ------
    NonFinite : if any entry is NaN or Inf.
    ConstantColumn : if some column has zero sample variance.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    if m.shape[0] < 2:
        raise DimensionMismatch("standardize needs at least 2 rows")
    if not np.all(np.isfinite(m)):
        raise NonFinite("input contains NaN or Inf")
    mu = m.mean(axis=0)
    sd = m.std(axis=0, ddof=1)
    bad = np.where(sd == 0)[0]
    if bad.size:
        raise ConstantColumn(int(bad[0]))
    return (m - mu) / sd


class Dataset:
    """Response y (n,), selection block X (n, p_x), external covariates Z (n, p_z).

    ``intercept`` controls whether an all-ones column is prepended to Z when
    building projections; it is on by default.  ``standardized_x`` and
    ``standardized_z`` record whether the blocks were standardized at
    construction; row subsets inherit their parent's columns unchanged and
    clear the flags.
    """

    def __init__(self, y, X, Z=None, intercept=True,
                 standardized_x=False, standardized_z=False):
        self.y = np.asarray(y, dtype=float).ravel()
        self.X = np.asarray(X, dtype=float)
        n = self.y.shape[0]
        if Z is None:
            Z = np.empty((n, 0))
        self.Z = np.asarray(Z, dtype=float)
        if self.Z.ndim == 1:
            self.Z = self.Z[:, None]
        self.intercept = bool(intercept)
        self.standardized_x = bool(standardized_x)
        self.standardized_z = bool(standardized_z)
        if self.X.shape[0] != n or self.Z.shape[0] != n:
            raise DimensionMismatch(
                f"row counts differ: y={n} X={self.X.shape[0]} Z={self.Z.shape[0]}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Z))
                and np.all(np.isfinite(self.y))):
            raise NonFinite("dataset contains NaN or Inf")
        if n < self.p_z + 2:
            raise DimensionMismatch(f"need n >= p_z + 2, got n={n}, p_z={self.p_z}")
        if self.standardized_x:
            _check_standardized(self.X, "X")
        if self.standardized_z and self.p_z:
            _check_standardized(self.Z, "Z")

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p_x(self):
        return self.X.shape[1]

    @property
    def p_z(self):
        return self.Z.shape[1]

    def zfull(self):
        """Z with the intercept column prepended when enabled."""
        if self.intercept:
            return np.column_stack([np.ones(self.n), self.Z])
        return self.Z

    def residual_op(self):
        """ResidualOperator for this dataset's Z block (with intercept)."""
        return projector(self.zfull())

    def subset(self, rows):
        """Dataset restricted to the given rows, columns untouched."""
        rows = np.asarray(rows)
        return Dataset(self.y[rows], self.X[rows], self.Z[rows],
                       intercept=self.intercept)

    def replace_y(self, y):
        """Same design, different response; used when rebuilding responses
        from sampled residuals."""
        return Dataset(y, self.X, self.Z, intercept=self.intercept)


def _check_standardized(m, label):
    if np.abs(m.mean(axis=0)).max() > 1e-8:
        raise DataError(f"{label} flagged standardized but has nonzero column mean")
    if np.abs(m.std(axis=0, ddof=1) - 1.0).max() > 1e-8:
        raise DataError(f"{label} flagged standardized but has non-unit variance")


class Polyhedron:
    """The selection event {v : A v <= b}."""

    def __init__(self, A, b):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.asarray(b, dtype=float).ravel()
        if self.A.shape[0] != self.b.shape[0]:
            raise DimensionMismatch(
                f"A has {self.A.shape[0]} rows but b has {self.b.shape[0]}")

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def dim(self):
        return self.A.shape[1]

    def contains(self, v, tol=1e-9):
        v = np.asarray(v, dtype=float).ravel()
        if self.m == 0:
            return True
        return bool(np.all(self.A @ v <= self.b + tol))

    def slack(self, v):
        """b - A v; nonnegative entries mean satisfied rows."""
        return self.b - self.A @ np.asarray(v, dtype=float).ravel()

    @classmethod
    def whole_space(cls, dim):
        return cls(np.empty((0, dim)), np.empty(0))


class ResidualOperator:
    """Projection machinery for the subspace orthogonal to span(Z).

    Attributes
    ----------
    P : (n, n) projection onto span(Z).
    Q : (n, n - rank(Z)) orthonormal basis of the orthogonal complement,
        so that Q Q' = I - P.
    """

    def __init__(self, P, Q):
        self.P = P
        self.Q = Q

    @property
    def n(self):
        return self.P.shape[0]

    @property
    def dim(self):
        """Dimension of the residual subspace."""
        return self.Q.shape[1]

    def residual(self, v):
        """(I - P) v."""
        v = np.asarray(v, dtype=float)
        return v - self.P @ v

    def coords(self, v):
        """Coefficients Q' v of a residual-space vector."""
        return self.Q.T @ np.asarray(v, dtype=float)


def orthonormal_columns(M, rtol=RANK_RTOL):
    """Orthonormal basis U of the column space of M, with its rank.

    Uses an SVD with relative singular-value cutoff; returns (U, rank) where
    U has exactly ``rank`` columns.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[1] == 0:
        return np.empty((M.shape[0], 0)), 0
    u, sv, _ = np.linalg.svd(M, full_matrices=False)
    if sv.size == 0 or sv[0] == 0:
        return np.empty((M.shape[0], 0)), 0
    rank = int(np.sum(sv > rtol * sv[0]))
    return u[:, :rank], rank


def projector(Z):
    """Build the ResidualOperator for covariate matrix Z.

    Parameters
    ----------
    Z : (n, k) array; k may be 0 (no covariates: P = 0, Q = I).

    Raises
    ------
    RankDeficient : if Z's columns are linearly dependent.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n, k = Z.shape
    if k == 0:
        return ResidualOperator(np.zeros((n, n)), np.eye(n))
    U, rank = orthonormal_columns(Z)
    if rank < k:
        raise RankDeficient(f"Z has {k} columns but rank {rank}")
    P = U @ U.T
    # complement basis from the full SVD of U: the trailing left-singular
    # vectors of [U | 0] span the orthogonal complement
    full, _, _ = np.linalg.svd(U, full_matrices=True)
    Q = full[:, rank:]
    return ResidualOperator(P, Q)


def residualize(y, offset, op):
    """(I - P_Z)(y - offset): the residual after removing an offset and Z.

    The offset is theta0 * yhat when testing the internal predictor's
    coefficient, or X_E beta0 when testing the selected columns.
    """
    y = np.asarray(y, dtype=float).ravel()
    offset = np.asarray(offset, dtype=float).ravel()
    if y.shape[0] != offset.shape[0] or y.shape[0] != op.n:
        raise DimensionMismatch(
            f"lengths differ: y={y.shape[0]} offset={offset.shape[0]} op={op.n}")
    return op.residual(y - offset)
