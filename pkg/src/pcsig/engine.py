"""Permutation resampling engine for PC-association significance.

The main entry point :func:`run_jackstraw` implements the permute-s scheme:
replace a few rows of the matrix with synthetic null rows, recompute the
principal components, collect the synthetic rows' association F-statistics
as an empirical null, and convert observed statistics to p-values by
counting.  :func:`run_delete_s` is the hold-out variant kept as a negative
control; its p-values come from the parametric F reference distribution.

Iterations are independent: each draws from an RNG stream derived from
(seed, iteration), so results are identical for any worker count.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import null_space
from scipy.stats import f as f_dist

from . import backend
from .errors import (
    ConfigError,
    DecompositionFailure,
    InvalidData,
    InvalidIndex,
    InvalidMode,
    InvalidRank,
    NumericError,
    RefuseResume,
)
from .linmod import (
    FullNull,
    HypothesisSpec,
    LinearConstraint,
    SubsetNull,
    constraint_projection,
)
from .matrix import (
    DataMatrix,
    _apply_sign_convention,
    compute_pca,
    degenerate_rows,
    format_float,
    is_row_centered,
    row_center,
    top_pcs,
)

PERFECT_FIT_RTOL = 1e-12

NULL_POOL_QUANTILES = (0.25, 0.5, 0.75, 0.9, 0.99)


class NullMode(enum.Enum):
    FULL_PERMUTE = "full-permute"
    RESIDUAL_PERMUTE = "residual-permute"
    RESIDUAL_BOOTSTRAP = "residual-bootstrap"


@dataclass(frozen=True)
class JackstrawConfig:
    """Resampling parameters: s rows per iteration, b iterations, RNG seed,
    null synthesis mode, and the hypothesis under test."""

    s: int
    b: int
    seed: int
    spec: HypothesisSpec
    null_mode: NullMode = NullMode.FULL_PERMUTE
    pseudocount: bool = False


def default_config(m: int, spec: HypothesisSpec, seed: int, **overrides) -> JackstrawConfig:
    """s = ceil(0.10 m); b sized so the null pool has >= max(10 m, 10^4)."""
    s = overrides.pop("s", None) or math.ceil(0.10 * m)
    b = overrides.pop("b", None) or math.ceil(max(10 * m, 10_000) / s)
    return JackstrawConfig(s=s, b=b, seed=seed, spec=spec, **overrides)


def validate_config(
    config: JackstrawConfig, m: int, n: int, require_pool: bool = True
) -> None:
    if not (1 <= config.s <= m // 2):
        raise ConfigError(f"s={config.s} outside [1, m/2] for m={m}")
    if require_pool:
        if config.b < 1:
            raise ConfigError(f"b={config.b} must be >= 1")
        if config.s * config.b < 100:
            raise ConfigError(f"null pool s*b = {config.s * config.b} < 100 is too coarse")
        if config.s * config.b < 10 * m:
            warnings.warn(
                f"null pool s*b = {config.s * config.b} below 10*m = {10 * m}; "
                "p-value resolution may be coarse",
                stacklevel=3,
            )
    if not (1 <= config.spec.r <= min(m, n - 1)):
        raise InvalidRank(f"spec.r={config.spec.r} outside [1, {min(m, n - 1)}]")
    if config.null_mode is not NullMode.FULL_PERMUTE and isinstance(
        config.spec.constraint, FullNull
    ):
        raise InvalidMode(f"{config.null_mode.value} needs an adjustment subspace")


# ---------------------------------------------------------------------------
# RNG protocol: one independent stream per iteration, derived from
# (seed, iteration[, retry]).  Aggregation order therefore never matters.
# ---------------------------------------------------------------------------

def iteration_rng(seed: int, b_index: int, retry: int = 0) -> np.random.Generator:
    key = (b_index,) if retry == 0 else (b_index, retry)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def draw_row_indices(rng: np.random.Generator, m: int, s: int) -> np.ndarray:
    return rng.choice(m, size=s, replace=False).astype(np.int64)


def draw_gather_indices(rng: np.random.Generator, s: int, n: int, mode: NullMode) -> np.ndarray:
    if mode is NullMode.RESIDUAL_BOOTSTRAP:
        return rng.integers(0, n, size=(s, n), dtype=np.int64)
    # One uniform permutation per row via random-key sort.
    return np.argsort(rng.random((s, n)), axis=1).astype(np.int64)


def derive_seed(root_seed: int, *key: int) -> int:
    """64-bit child seed for nested components (per study, per method...)."""
    ss = np.random.SeedSequence(entropy=root_seed, spawn_key=tuple(key))
    return int(ss.generate_state(2, np.uint64)[0])


# ---------------------------------------------------------------------------
# Synthetic null rows.
# ---------------------------------------------------------------------------

def constrained_fit_matrix(
    yc: np.ndarray, basis_w: np.ndarray, proj: np.ndarray, offset: np.ndarray
) -> np.ndarray:
    """Fitted values of every row under the constrained (null) model.

    For an orthonormal basis, the constrained coefficients are the
    unconstrained ones minus their component violating the constraint.
    """
    g = yc @ basis_w.T
    h = g @ proj.T - offset
    g_con = g - h @ proj
    return g_con @ basis_w


def adjustment_basis(basis_w: np.ndarray, proj: np.ndarray) -> Optional[np.ndarray]:
    """Orthonormal rows spanning the adjustment subspace in data space.

    These are the directions the constrained model is free to fit; residual
    scrambling is orthogonalized against them so the adjustment projections
    of a synthetic row match its fit exactly.
    """
    nullsp = null_space(proj)  # r x (r - q), orthonormal columns
    if nullsp.shape[1] == 0:
        return None
    return np.ascontiguousarray(nullsp.T @ basis_w)


def synthesize_null_rows(
    mat: DataMatrix,
    row_indices,
    mode: NullMode,
    rng: np.random.Generator,
    constrained_fit: Optional[np.ndarray] = None,
    adjust_basis: Optional[np.ndarray] = None,
) -> DataMatrix:
    """Replace the selected rows with synthetic null versions.

    ``FULL_PERMUTE`` permutes each selected row's entries independently.
    The residual modes keep each selected row's constrained-model fit and
    permute (or bootstrap, with re-centering) only the residual; they
    require ``constrained_fit`` holding the fit of every row, and the
    scrambled residual is orthogonalized against ``adjust_basis`` so the
    adjustment-subspace projection of a synthetic row equals its fit's.
    All other rows are returned bit-identical.
    """
    rows = np.asarray(row_indices, dtype=np.int64)
    m, n = mat.shape
    if rows.size == 0 or rows.min() < 0 or rows.max() >= m:
        raise InvalidIndex(f"row indices outside 0..{m - 1}")
    if np.unique(rows).size != rows.size:
        raise InvalidIndex("row indices must be distinct")
    if mode is not NullMode.FULL_PERMUTE and constrained_fit is None:
        raise InvalidMode(f"{mode.value} requires the constrained-model fit")

    if mode is NullMode.FULL_PERMUTE:
        fit_rows = np.zeros((rows.size, n))
        resid_rows = mat.values[rows]
    else:
        fit_rows = constrained_fit[rows]
        resid_rows = mat.values[rows] - fit_rows

    gather = draw_gather_indices(rng, rows.size, n, mode)
    gathered = np.take_along_axis(resid_rows, gather, axis=1)
    if mode is NullMode.RESIDUAL_BOOTSTRAP:
        # Re-center so resampling with replacement keeps rows mean-zero.
        gathered -= gathered.mean(axis=1, keepdims=True)
    if mode is not NullMode.FULL_PERMUTE and adjust_basis is not None:
        gathered -= (gathered @ adjust_basis.T) @ adjust_basis

    new_values = mat.values.copy()
    new_values[rows] = fit_rows + gathered
    return DataMatrix(values=new_values, row_ids=mat.row_ids, col_ids=mat.col_ids)


# ---------------------------------------------------------------------------
# Results.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NullPoolSummary:
    count: int
    minimum: float
    maximum: float
    quantiles: dict[float, float]


@dataclass(frozen=True)
class JackstrawResult:
    observed_f: np.ndarray
    p_values: np.ndarray
    null_pool_summary: Optional[NullPoolSummary]
    provenance: dict
    negative_control: bool = False


def batched_f_stats(
    rows_matrix: np.ndarray,
    basis_w: np.ndarray,
    proj: np.ndarray,
    offset: np.ndarray,
    df_num: int,
    df_den: int,
) -> np.ndarray:
    """Constraint F-statistics of many rows against one orthonormal basis.

    Vectorized equivalent of ``linmod.f_statistic`` row by row (asserted in
    tests); perfect fits become +inf sentinels.
    """
    g = rows_matrix @ basis_w.T
    sst = np.einsum("ij,ij->i", rows_matrix, rows_matrix)
    rss1 = np.maximum(sst - np.einsum("ij,ij->i", g, g), 0.0)
    h = g @ proj.T - offset
    delta = np.einsum("ij,ij->i", h, h)
    perfect = rss1 <= PERFECT_FIT_RTOL * sst
    with np.errstate(divide="ignore", invalid="ignore"):
        f = (delta / df_num) / (rss1 / df_den)
    f[perfect] = np.inf
    return f


def empirical_pvalues(
    observed: np.ndarray, null_pool: np.ndarray, pseudocount: bool = False
) -> np.ndarray:
    """p_i = #{null >= F_i} / pool size (optionally (count+1)/(size+1)).

    +inf sentinels participate in the ordering: inf >= inf counts.
    """
    if np.isnan(null_pool).any() or np.isnan(observed).any():
        raise NumericError("NaN statistic in p-value counting")
    pool = np.sort(null_pool, kind="stable")
    total = pool.size
    count = total - np.searchsorted(pool, observed, side="left")
    if pseudocount:
        return (count + 1) / (total + 1)
    return count / total


def _summarize_pool(pool: np.ndarray) -> NullPoolSummary:
    finite = pool[np.isfinite(pool)]
    quantiles = {
        q: (float(np.quantile(finite, q)) if finite.size else math.inf)
        for q in NULL_POOL_QUANTILES
    }
    return NullPoolSummary(
        count=int(pool.size),
        minimum=float(pool.min()),
        maximum=float(pool.max()),
        quantiles=quantiles,
    )


def _constraint_payload(spec: HypothesisSpec):
    c = spec.constraint
    if isinstance(c, FullNull):
        return {"type": "full"}
    if isinstance(c, SubsetNull):
        return {"type": "subset", "tested": list(c.tested)}
    assert isinstance(c, LinearConstraint)
    return {
        "type": "linear",
        "c_matrix": [[format_float(v) for v in row] for row in c.c_matrix],
        "a_vector": [format_float(v) for v in c.a_vector],
    }


def config_digest(config: JackstrawConfig) -> str:
    """Digest of the statistical configuration (execution knobs excluded)."""
    payload = {
        "s": config.s,
        "b": config.b,
        "seed": config.seed,
        "null_mode": config.null_mode.value,
        "pseudocount": config.pseudocount,
        "r": config.spec.r,
        "constraint": _constraint_payload(config.spec),
        "rotation": (
            None
            if config.spec.rotation is None
            else [[format_float(v) for v in row] for row in config.spec.rotation]
        ),
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Checkpointing: resumable snapshot keyed by input + config digests.
# ---------------------------------------------------------------------------

def _save_checkpoint(path, null_f, b_done, input_digest, cfg_digest):
    # Write through a handle so numpy does not append ".npz" to the path.
    with open(path, "wb") as fh:
        np.savez(
            fh,
            null_f=null_f[:b_done],
            b_done=np.int64(b_done),
            input_digest=np.bytes_(input_digest.encode()),
            config_digest=np.bytes_(cfg_digest.encode()),
        )


def _load_checkpoint(path, input_digest, cfg_digest, b, s):
    data = np.load(path)
    stored_input = data["input_digest"].item().decode()
    stored_cfg = data["config_digest"].item().decode()
    if stored_input != input_digest or stored_cfg != cfg_digest:
        raise RefuseResume(
            "checkpoint belongs to a different input or configuration "
            f"(input {stored_input[:12]}..., config {stored_cfg[:12]}...)"
        )
    b_done = int(data["b_done"])
    null_f = np.empty((b, s))
    null_f[:b_done] = data["null_f"]
    return null_f, b_done


# ---------------------------------------------------------------------------
# Main algorithm.
# ---------------------------------------------------------------------------

def _prepare(mat: DataMatrix, config: JackstrawConfig, require_pool: bool = True):
    m, n = mat.shape
    validate_config(config, m, n, require_pool=require_pool)
    bad = degenerate_rows(mat)
    if bad:
        raise InvalidData(f"zero-variance rows: {', '.join(bad)}")

    centered = mat if is_row_centered(mat.values) else row_center(mat)
    dec = compute_pca(centered, config.spec.r)
    basis = np.ascontiguousarray(top_pcs(dec))
    if config.spec.rotation is not None:
        basis_w = np.ascontiguousarray(config.spec.rotation @ basis)
    else:
        basis_w = basis
    proj, offset = constraint_projection(config.spec)
    return centered, dec, basis_w, np.ascontiguousarray(proj), np.ascontiguousarray(offset)


def run_jackstraw(
    mat: DataMatrix,
    config: JackstrawConfig,
    threads: Optional[int] = None,
    checkpoint_path: Optional[str] = None,
    checkpoint_every: Optional[int] = None,
) -> JackstrawResult:
    """Permute-s resampling significance for every row of ``mat``.

    Observed F-statistics come from the matrix's own top-r PCs (rotated when
    the hypothesis carries a rotation); each of the ``config.b`` iterations
    replaces ``config.s`` rows with synthetic nulls, recomputes the PCs and
    contributes the synthetic rows' F-statistics to the null pool.  p-values
    count pool statistics at least as large as each observed one.

    Deterministic for a fixed (matrix, config) regardless of ``threads``.
    An iteration whose eigendecomposition fails is retried once with a fresh
    draw before the run aborts.
    """
    m, n = mat.shape
    if checkpoint_every is not None and checkpoint_every < 1:
        raise ConfigError(f"checkpoint_every must be >= 1, got {checkpoint_every}")
    centered, _, basis_w, proj, offset = _prepare(mat, config)
    yc = np.ascontiguousarray(centered.values)
    spec = config.spec
    df_num, df_den = proj.shape[0], n - spec.r

    observed = batched_f_stats(yc, basis_w, proj, offset, df_num, df_den)

    if config.null_mode is NullMode.FULL_PERMUTE:
        fit = np.zeros_like(yc)
        resid = yc
        adjust = None
    else:
        fit = np.ascontiguousarray(constrained_fit_matrix(yc, basis_w, proj, offset))
        resid = np.ascontiguousarray(yc - fit)
        adjust = adjustment_basis(basis_w, proj)
    demean = config.null_mode is NullMode.RESIDUAL_BOOTSTRAP
    gram = np.ascontiguousarray(yc.T @ yc)
    rotation = spec.rotation

    s, b = config.s, config.b
    row_sel = np.empty((b, s), dtype=np.int64)
    gather = np.empty((b, s, n), dtype=np.int64)
    for t in range(b):
        rng = iteration_rng(config.seed, t)
        row_sel[t] = draw_row_indices(rng, m, s)
        gather[t] = draw_gather_indices(rng, s, n, config.null_mode)

    input_digest = mat.digest()
    cfg_digest = config_digest(config)

    null_f = np.empty((b, s))
    b_start = 0
    if checkpoint_path is not None and os.path.exists(checkpoint_path):
        null_f, b_start = _load_checkpoint(checkpoint_path, input_digest, cfg_digest, b, s)

    if threads is None:
        threads = os.cpu_count() or 1
    threads = max(1, int(threads))

    def retry_iteration(t: int) -> None:
        rng = iteration_rng(config.seed, t, retry=1)
        row_sel[t] = draw_row_indices(rng, m, s)
        gather[t] = draw_gather_indices(rng, s, n, config.null_mode)
        failed = backend.null_fstats_chunk(
            fit, resid, yc, gram, row_sel[t : t + 1], gather[t : t + 1],
            demean, adjust, spec.r, rotation, proj, offset, null_f[t : t + 1],
        )
        if failed >= 0:
            raise DecompositionFailure(
                f"eigendecomposition failed twice at iteration {t} "
                "(fresh permutation was retried)"
            )

    def run_span(lo: int, hi: int) -> None:
        start = lo
        while start < hi:
            failed = backend.null_fstats_chunk(
                fit, resid, yc, gram, row_sel[start:hi], gather[start:hi],
                demean, adjust, spec.r, rotation, proj, offset, null_f[start:hi],
            )
            if failed < 0:
                return
            retry_iteration(start + failed)
            start = start + failed + 1

    group = checkpoint_every if checkpoint_every else b
    done = b_start
    while done < b:
        group_end = min(done + group, b)
        chunk = max(1, math.ceil((group_end - done) / (threads * 4)))
        bounds = [(lo, min(lo + chunk, group_end)) for lo in range(done, group_end, chunk)]
        if threads == 1 or len(bounds) == 1:
            for lo, hi in bounds:
                run_span(lo, hi)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(lambda span: run_span(*span), bounds))
        done = group_end
        if checkpoint_path is not None and done < b:
            _save_checkpoint(checkpoint_path, null_f, done, input_digest, cfg_digest)

    pool_stats = null_f.reshape(-1)
    p_values = empirical_pvalues(observed, pool_stats, config.pseudocount)

    provenance = {
        "engine": "jackstraw",
        "s": s,
        "b": b,
        "seed": config.seed,
        "null_mode": config.null_mode.value,
        "pseudocount": config.pseudocount,
        "r": spec.r,
        "constraint": _constraint_payload(spec),
        "input_digest": input_digest,
        "config_digest": cfg_digest,
        "backend": backend.BACKEND,
    }
    return JackstrawResult(
        observed_f=observed,
        p_values=p_values,
        null_pool_summary=_summarize_pool(pool_stats),
        provenance=provenance,
    )


def run_delete_s(mat: DataMatrix, config: JackstrawConfig) -> JackstrawResult:
    """Hold-out variant: each disjoint block of s rows is tested against the
    PCs of the remaining rows, with p-values from the parametric F
    distribution.  The blocks partition the rows in index order, so every
    row is tested exactly once; ``config.b`` is ignored.  Known to violate
    joint calibration; kept as a negative control and flagged as such.
    """
    m, n = mat.shape
    centered, _, _, proj, offset = _prepare(mat, config, require_pool=False)
    yc = np.ascontiguousarray(centered.values)
    spec = config.spec
    df_num, df_den = proj.shape[0], n - spec.r
    if spec.r > min(m - config.s, n - 1):
        raise InvalidRank(f"r={spec.r} too large once {config.s} rows are held out")

    observed = np.empty(m)
    s = config.s
    blocks = [np.arange(lo, min(lo + s, m)) for lo in range(0, m, s)]
    for block in blocks:
        keep = np.setdiff1d(np.arange(m), block, assume_unique=True)
        try:
            u_sub, _, vt_sub = np.linalg.svd(yc[keep], full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise DecompositionFailure(f"SVD failed for block at row {block[0]}") from exc
        u_sub = np.ascontiguousarray(u_sub)
        vt_sub = np.ascontiguousarray(vt_sub)
        _apply_sign_convention(u_sub, vt_sub)
        basis = vt_sub[: spec.r]
        basis_w = spec.rotation @ basis if spec.rotation is not None else basis
        observed[block] = batched_f_stats(yc[block], basis_w, proj, offset, df_num, df_den)

    p_values = np.asarray(f_dist.sf(observed, df_num, df_den))

    provenance = {
        "engine": "delete-s",
        "s": s,
        "blocks": len(blocks),
        "seed": config.seed,
        "r": spec.r,
        "constraint": _constraint_payload(spec),
        "input_digest": mat.digest(),
        "config_digest": config_digest(config),
        "backend": backend.BACKEND,
    }
    return JackstrawResult(
        observed_f=observed,
        p_values=p_values,
        null_pool_summary=None,
        provenance=provenance,
        negative_control=True,
    )
