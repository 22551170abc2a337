"""F-statistics for linear hypotheses on per-variable regressions.

Each variable (a length-n vector) is regressed on an r x n basis whose rows
are the retained principal components, optionally rotated.  The hypothesis
is expressed as one of three constraint forms:

* ``FullNull``       -- all r coefficients zero;
* ``SubsetNull``     -- the coefficients of a chosen subset of components
  are zero, the remaining components act as adjustment covariates;
* ``LinearConstraint`` -- gamma @ C == a for an r x q constraint matrix C.

The model has no intercept: variables are row-centered before fitting.
Least squares goes through QR factorizations for conditioning; an explicit
normal-equations oracle lives in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import InvalidIndex, InvalidRotation, SingularBasis

# Relative residual below which a fit counts as perfect (F = +inf sentinel).
PERFECT_FIT_RTOL = 1e-12

_ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class FullNull:
    """Test every coefficient against zero."""


@dataclass(frozen=True)
class SubsetNull:
    """Test the coefficients of ``tested`` (1-based component indices),
    adjusting for the remaining components."""

    tested: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tested", tuple(int(t) for t in self.tested))
        if not self.tested:
            raise InvalidIndex("SubsetNull needs at least one tested component")
        if len(set(self.tested)) != len(self.tested):
            raise InvalidIndex("SubsetNull indices must be distinct")


@dataclass(frozen=True)
class LinearConstraint:
    """Null space {gamma : gamma @ c_matrix == a_vector}."""

    c_matrix: np.ndarray
    a_vector: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.c_matrix, dtype=np.float64))
        a = np.atleast_1d(np.asarray(self.a_vector, dtype=np.float64))
        if c.shape[1] != a.shape[0]:
            raise InvalidIndex(
                f"constraint matrix has {c.shape[1]} columns but offset has {a.shape[0]} entries"
            )
        object.__setattr__(self, "c_matrix", c)
        object.__setattr__(self, "a_vector", a)


Constraint = Union[FullNull, SubsetNull, LinearConstraint]


@dataclass(frozen=True)
class HypothesisSpec:
    """Total component count, optional rotation, and the constraint under test."""

    r: int
    constraint: Constraint = FullNull()
    rotation: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.r < 1:
            raise InvalidIndex(f"r must be >= 1, got {self.r}")
        if self.rotation is not None:
            rot = np.asarray(self.rotation, dtype=np.float64)
            validate_rotation(rot, self.r)
            object.__setattr__(self, "rotation", rot)
        c = self.constraint
        if isinstance(c, SubsetNull):
            if any(t < 1 or t > self.r for t in c.tested):
                raise InvalidIndex(f"tested components {c.tested} outside 1..{self.r}")
        elif isinstance(c, LinearConstraint):
            if c.c_matrix.shape[0] != self.r:
                raise InvalidIndex(
                    f"constraint matrix has {c.c_matrix.shape[0]} rows, expected r={self.r}"
                )
            if c.c_matrix.shape[1] > self.r:
                raise InvalidIndex("constraint matrix has more columns than r")
            if np.linalg.matrix_rank(c.c_matrix) < c.c_matrix.shape[1]:
                raise InvalidIndex("constraint matrix must have full column rank")

    @property
    def df_num(self) -> int:
        c = self.constraint
        if isinstance(c, FullNull):
            return self.r
        if isinstance(c, SubsetNull):
            return len(c.tested)
        return c.c_matrix.shape[1]

    def tested_indices0(self) -> tuple[int, ...]:
        """0-based tested component indices (all of them for FullNull)."""
        c = self.constraint
        if isinstance(c, FullNull):
            return tuple(range(self.r))
        if isinstance(c, SubsetNull):
            return tuple(t - 1 for t in c.tested)
        raise TypeError("LinearConstraint has no index subset")

    def adjustment_indices0(self) -> tuple[int, ...]:
        c = self.constraint
        if isinstance(c, FullNull):
            return ()
        if isinstance(c, SubsetNull):
            tested = set(self.tested_indices0())
            return tuple(k for k in range(self.r) if k not in tested)
        raise TypeError("LinearConstraint has no index subset")


@dataclass(frozen=True)
class FStatResult:
    f_value: float
    df_num: int
    df_den: int
    rss_constrained: float
    rss_unconstrained: float

    @property
    def perfect_fit(self) -> bool:
        return math.isinf(self.f_value)


def validate_rotation(rotation: np.ndarray, r: int) -> None:
    """Orthonormal with determinant one, within 1e-8."""
    rot = np.asarray(rotation, dtype=np.float64)
    if rot.shape != (r, r):
        raise InvalidRotation(f"rotation must be {r} x {r}, got {rot.shape}")
    if not np.allclose(rot.T @ rot, np.eye(r), atol=_ORTHO_TOL):
        raise InvalidRotation("rotation is not orthonormal")
    if abs(np.linalg.det(rot) - 1.0) > _ORTHO_TOL:
        raise InvalidRotation(f"rotation determinant {np.linalg.det(rot):.6g} != 1")


def apply_rotation(basis: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """Re-express an r x n basis as rotation @ basis (same row space)."""
    basis = np.asarray(basis, dtype=np.float64)
    validate_rotation(rotation, basis.shape[0])
    return np.asarray(rotation, dtype=np.float64) @ basis


def _qr_checked(design: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR of an n x k design; raises SingularBasis on rank deficiency."""
    q, rr = np.linalg.qr(design)
    diag = np.abs(np.diag(rr))
    if diag.size and diag.min() <= max(design.shape) * np.finfo(np.float64).eps * max(
        diag.max(), 1e-300
    ):
        raise SingularBasis("basis rows are linearly dependent")
    return q, rr


def fit_coefficients(y: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Least-squares coefficients of y on the rows of ``basis`` (QR based)."""
    y = np.asarray(y, dtype=np.float64)
    basis = np.atleast_2d(np.asarray(basis, dtype=np.float64))
    if basis.shape[1] != y.shape[0]:
        raise InvalidIndex(f"basis has {basis.shape[1]} columns, y has {y.shape[0]}")
    q, rr = _qr_checked(basis.T)
    return np.linalg.solve(rr, q.T @ y)


def _rss_on(y: np.ndarray, design: np.ndarray) -> float:
    """Residual sum of squares of y regressed on the n x k design."""
    if design.shape[1] == 0:
        return float(y @ y)
    q, _ = _qr_checked(design)
    proj = q.T @ y
    return max(float(y @ y - proj @ proj), 0.0)


def f_statistic(y: np.ndarray, basis: np.ndarray, spec: HypothesisSpec) -> FStatResult:
    """Nested-model F comparing the unconstrained fit to the constrained one.

    F = [(RSS0 - RSS1) / df_num] / [RSS1 / (n - r)].  The denominator df is
    always n - r, the unconstrained model's residual df.  A perfect
    unconstrained fit (RSS1 ~ 0 relative to ||y||^2) yields f_value = +inf;
    the sentinel orders above every finite statistic.
    """
    y = np.asarray(y, dtype=np.float64)
    basis = np.atleast_2d(np.asarray(basis, dtype=np.float64))
    r, n = basis.shape
    if r != spec.r:
        raise InvalidIndex(f"basis has {r} rows but spec.r={spec.r}")
    if n - r < 1:
        raise InvalidIndex(f"need n - r >= 1, got n={n}, r={r}")

    design = basis.T
    sst = float(y @ y)
    rss1 = _rss_on(y, design)

    c = spec.constraint
    if isinstance(c, FullNull):
        rss0 = sst
    elif isinstance(c, SubsetNull):
        keep = list(spec.adjustment_indices0())
        rss0 = _rss_on(y, design[:, keep])
    else:
        rss0 = _constrained_rss(y, design, c)
    rss0 = max(rss0, rss1)

    df_num = spec.df_num
    df_den = n - r
    if rss1 <= PERFECT_FIT_RTOL * sst:
        f = math.inf
    else:
        f = ((rss0 - rss1) / df_num) / (rss1 / df_den)
    return FStatResult(
        f_value=f,
        df_num=df_num,
        df_den=df_den,
        rss_constrained=rss0,
        rss_unconstrained=rss1,
    )


def _constrained_rss(y: np.ndarray, design: np.ndarray, c: LinearConstraint) -> float:
    """RSS of the equality-constrained fit (null-space parameterization)."""
    r = design.shape[1]
    q = c.c_matrix.shape[1]
    q_full, r_full = np.linalg.qr(c.c_matrix, mode="complete")
    r_tri = r_full[:q, :]
    # Minimum-norm particular solution of gamma @ C == a.
    gamma_p = q_full[:, :q] @ np.linalg.solve(r_tri.T, c.a_vector)
    y_adj = y - design @ gamma_p
    if q == r:
        return float(y_adj @ y_adj)
    nullspace = q_full[:, q:]
    return _rss_on(y_adj, design @ nullspace)


def constraint_projection(spec: HypothesisSpec) -> tuple[np.ndarray, np.ndarray]:
    """(proj, offset) such that for an orthonormal basis with coefficient
    vector g = basis @ y, RSS0 - RSS1 == ||proj @ g - offset||^2.

    proj is q x r with orthonormal rows.  Backs the vectorized engine path;
    equivalence with :func:`f_statistic` is asserted in the tests.
    """
    r = spec.r
    c = spec.constraint
    if isinstance(c, FullNull):
        return np.eye(r), np.zeros(r)
    if isinstance(c, SubsetNull):
        idx = spec.tested_indices0()
        proj = np.zeros((len(idx), r))
        for row, k in enumerate(idx):
            proj[row, k] = 1.0
        return proj, np.zeros(len(idx))
    q_c, r_c = np.linalg.qr(c.c_matrix)
    offset = np.linalg.solve(r_c.T, c.a_vector)
    return q_c.T.copy(), offset
