"""Data matrix container, row centering, thin-SVD PCA and variance accounting.

The central object is :class:`DataMatrix`: an m x n array of m variables
(rows) measured over n observations (columns), with unique row and column
identifiers.  PCA is computed on row-centered values via a thin SVD; a
deterministic sign convention makes repeated decompositions bit-identical.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DecompositionFailure, InvalidData, InvalidRank, MatrixParseError

# Relative tolerance below which a row mean counts as already centered.
_CENTER_TOL = 1e-12


@dataclass(frozen=True)
class DataMatrix:
    """Immutable m x n matrix of m variables observed over n samples.

    Invariants checked at construction: m >= 2, n >= 3, all entries finite,
    row and column ids unique.  The value array is copied and frozen so
    instances can be shared across threads.
    """

    values: np.ndarray
    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, order="C")
        if values.ndim != 2:
            raise InvalidData(f"expected a 2-d matrix, got ndim={values.ndim}")
        m, n = values.shape
        if m < 2 or n < 3:
            raise InvalidData(f"matrix must be at least 2 x 3, got {m} x {n}")
        if not np.isfinite(values).all():
            bad = np.argwhere(~np.isfinite(values))[0]
            raise InvalidData(f"non-finite entry at row {bad[0]}, column {bad[1]}")
        row_ids = tuple(str(r) for r in self.row_ids)
        col_ids = tuple(str(c) for c in self.col_ids)
        if len(row_ids) != m:
            raise InvalidData(f"{len(row_ids)} row ids for {m} rows")
        if len(col_ids) != n:
            raise InvalidData(f"{len(col_ids)} column ids for {n} columns")
        if len(set(row_ids)) != m:
            raise InvalidData("duplicate row ids")
        if len(set(col_ids)) != n:
            raise InvalidData("duplicate column ids")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_ids", row_ids)
        object.__setattr__(self, "col_ids", col_ids)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def from_values(cls, values, prefix: str = "v") -> "DataMatrix":
        """Wrap a bare array, generating sequential row/column ids."""
        values = np.asarray(values, dtype=np.float64)
        m, n = values.shape
        return cls(
            values=values,
            row_ids=tuple(f"{prefix}{i}" for i in range(m)),
            col_ids=tuple(f"obs{j}" for j in range(n)),
        )

    def digest(self) -> str:
        """SHA-256 over values and identifiers; keys provenance records."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.values).tobytes())
        h.update("\x1f".join(self.row_ids).encode())
        h.update("\x1f".join(self.col_ids).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class PcaDecomposition:
    """Thin SVD of a row-centered matrix plus derived variance fractions.

    ``u`` is m x k with orthonormal columns, ``d`` the k singular values
    (nonincreasing), ``vt`` the k x n right singular vectors (orthonormal
    rows), where k = min(m, n).  ``r`` is the retained component count and
    ``pct_variance`` the k fractions d_k^2 / sum(d^2).
    """

    u: np.ndarray
    d: np.ndarray
    vt: np.ndarray
    r: int
    pct_variance: np.ndarray
    centered_internally: bool = field(default=False)


def degenerate_rows(mat: DataMatrix) -> list[str]:
    """Row ids whose values are constant (zero variance)."""
    spread = np.ptp(mat.values, axis=1)
    return [mat.row_ids[i] for i in np.nonzero(spread == 0.0)[0]]


def row_center(mat: DataMatrix) -> DataMatrix:
    """Subtract each row's mean; idempotent and dimension preserving."""
    centered = mat.values - mat.values.mean(axis=1, keepdims=True)
    return DataMatrix(values=centered, row_ids=mat.row_ids, col_ids=mat.col_ids)


def is_row_centered(values: np.ndarray, tol: float = _CENTER_TOL) -> bool:
    scale = np.abs(values).max(axis=1)
    means = np.abs(values.mean(axis=1))
    return bool(np.all(means <= tol * np.maximum(scale, 1.0)))


def _apply_sign_convention(u: np.ndarray, vt: np.ndarray) -> None:
    """Flip each right singular vector so its largest-|entry| element is
    positive (ties broken by lowest index); u columns flipped to match."""
    for k in range(vt.shape[0]):
        row = vt[k]
        j = int(np.argmax(np.abs(row)))  # argmax takes the first maximum
        if row[j] < 0:
            vt[k] = -row
            u[:, k] = -u[:, k]


def compute_pca(mat: DataMatrix, r: int) -> PcaDecomposition:
    """Thin SVD of the row-centered matrix, retaining ``r`` components.

    Centering is applied internally when the input is not already centered
    and recorded in ``centered_internally``.  Requires
    ``1 <= r <= min(m, n - 1)`` (one column rank is consumed by centering).

    Raises
    ------
    InvalidRank
        ``r`` out of range.
    InvalidData
        Constant (zero-variance) rows present, or the centered matrix is
        identically zero.
    DecompositionFailure
        The underlying SVD did not converge.
    """
    m, n = mat.shape
    if not (1 <= r <= min(m, n - 1)):
        raise InvalidRank(f"r={r} outside [1, {min(m, n - 1)}] for a {m} x {n} matrix")
    bad = degenerate_rows(mat)
    if bad:
        raise InvalidData(f"zero-variance rows: {', '.join(bad)}")

    centered_internally = not is_row_centered(mat.values)
    yc = mat.values - mat.values.mean(axis=1, keepdims=True) if centered_internally else mat.values

    try:
        u, d, vt = np.linalg.svd(yc, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise DecompositionFailure(str(exc)) from exc

    u = np.ascontiguousarray(u)
    vt = np.ascontiguousarray(vt)
    _apply_sign_convention(u, vt)

    total = float(np.sum(d**2))
    if total == 0.0:
        raise InvalidData("matrix is zero after centering; variance fractions undefined")
    pct = (d**2) / total

    for arr in (u, d, vt, pct):
        arr.flags.writeable = False
    return PcaDecomposition(
        u=u, d=d, vt=vt, r=r, pct_variance=pct, centered_internally=centered_internally
    )


def top_pcs(dec: PcaDecomposition) -> np.ndarray:
    """First ``dec.r`` right singular vectors as an r x n array."""
    return dec.vt[: dec.r]


def scree_data(dec: PcaDecomposition) -> list[tuple[int, float]]:
    """(component index, variance fraction) pairs, 1-based, nonincreasing."""
    return [(k + 1, float(p)) for k, p in enumerate(dec.pct_variance)]


# ---------------------------------------------------------------------------
# Delimited text I/O.  First header cell is a corner label, remaining header
# cells are column ids; each data line starts with its row id.  Values are
# printed with 17 significant digits so a write/read cycle is bit exact.
# ---------------------------------------------------------------------------

def _delimiter_for(path: str) -> str:
    return "," if str(path).lower().endswith(".csv") else "\t"


def format_float(x: float) -> str:
    return format(x, ".17g")


def read_matrix(path: str) -> DataMatrix:
    """Read a TSV/CSV matrix with a column-id header and row-id first column."""
    sep = _delimiter_for(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise MatrixParseError(f"{path}: empty file")
        cols = header.rstrip("\n").split(sep)
        if len(cols) < 2:
            raise MatrixParseError(f"{path}: header has no column ids")
        col_ids = cols[1:]
        row_ids: list[str] = []
        rows: list[list[float]] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split(sep)
            if len(fields) != len(col_ids) + 1:
                raise MatrixParseError(
                    f"{path}:{lineno}: expected {len(col_ids) + 1} fields, got {len(fields)}"
                )
            row_ids.append(fields[0])
            try:
                rows.append([float(v) for v in fields[1:]])
            except ValueError as exc:
                for j, v in enumerate(fields[1:], start=2):
                    try:
                        float(v)
                    except ValueError:
                        raise MatrixParseError(
                            f"{path}:{lineno}: column {j}: not a number: {v!r}"
                        ) from exc
                raise
    try:
        return DataMatrix(values=np.array(rows), row_ids=tuple(row_ids), col_ids=tuple(col_ids))
    except InvalidData as exc:
        raise MatrixParseError(f"{path}: {exc}") from exc


def write_matrix(mat: DataMatrix, path: str, corner: str = "id") -> None:
    sep = _delimiter_for(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(corner + sep + sep.join(mat.col_ids) + "\n")
        for rid, row in zip(mat.row_ids, mat.values):
            fh.write(rid + sep + sep.join(format_float(v) for v in row) + "\n")
