"""Pure-numpy implementation of the resampling hot loop.

This is the fallback backend and the behavioral reference for the compiled
kernel: both consume identical pre-drawn resampling indices and must produce
matching null F-statistics (asserted in the test suite).
"""

from __future__ import annotations

import numpy as np

PERFECT_FIT_RTOL = 1e-12


def _sign_fix_rows(basis: np.ndarray) -> np.ndarray:
    """Flip rows so the largest-|entry| element is positive (first max wins)."""
    for k in range(basis.shape[0]):
        row = basis[k]
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            basis[k] = -row
    return basis


def null_fstats_chunk(
    fit: np.ndarray,
    resid: np.ndarray,
    base_rows: np.ndarray,
    gram: np.ndarray,
    row_sel: np.ndarray,
    gather: np.ndarray,
    demean: bool,
    adjust_basis,
    r: int,
    rotation,
    proj: np.ndarray,
    offset: np.ndarray,
    out: np.ndarray,
) -> int:
    """Compute null F-statistics for a chunk of resampling iterations.

    For each iteration: rebuild the s selected rows from ``fit`` plus
    resampled ``resid`` entries (orthogonalized against ``adjust_basis``
    when given, so scrambling cannot leak signal back into the adjustment
    subspace), update the Gram matrix of the data with the old rows swapped
    for the synthetic ones, eigendecompose it for the new top-r right
    singular vectors, and form the constraint F-statistic of every synthetic
    row against that (optionally rotated) basis.

    Returns -1 on success, else the chunk-local index of the iteration whose
    eigendecomposition failed.
    """
    n_iter, s = row_sel.shape
    n = base_rows.shape[1]
    df_num = proj.shape[0]
    df_den = n - r

    for t in range(n_iter):
        rows = row_sel[t]
        gathered = np.take_along_axis(resid[rows], gather[t], axis=1)
        if demean:
            gathered = gathered - gathered.mean(axis=1, keepdims=True)
        if adjust_basis is not None:
            gathered = gathered - (gathered @ adjust_basis.T) @ adjust_basis
        ys = fit[rows] + gathered

        old = base_rows[rows]
        gwork = gram - old.T @ old + ys.T @ ys
        try:
            _, vec = np.linalg.eigh(gwork)
        except np.linalg.LinAlgError:
            return t

        basis = np.ascontiguousarray(vec[:, ::-1][:, :r].T)  # top r, descending
        _sign_fix_rows(basis)
        w = rotation @ basis if rotation is not None else basis

        g = ys @ w.T
        sst = np.einsum("ij,ij->i", ys, ys)
        rss1 = np.maximum(sst - np.einsum("ij,ij->i", g, g), 0.0)
        h = g @ proj.T - offset
        delta = np.einsum("ij,ij->i", h, h)

        perfect = rss1 <= PERFECT_FIT_RTOL * sst
        with np.errstate(divide="ignore", invalid="ignore"):
            f = (delta / df_num) / (rss1 / df_den)
        f[perfect] = np.inf
        out[t] = f
    return -1
