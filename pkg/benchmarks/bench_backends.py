"""Benchmark: compiled resampling kernel vs the pure-numpy fallback.

Times the null-statistic chunk function on representative workloads and
verifies that both backends agree.  Run as:

    python benchmarks/bench_backends.py
"""

import time

import numpy as np

from pcsig.backend import chunk_fn
from pcsig.engine import draw_gather_indices, draw_row_indices, iteration_rng
from pcsig.linmod import HypothesisSpec, constraint_projection
from pcsig.engine import NullMode

SHAPES = [
    # (m, n, r, s, iterations)
    (1000, 20, 1, 50, 200),
    (1000, 20, 2, 100, 100),
    (5000, 20, 2, 250, 100),
]


def build_workload(m, n, r, s, b, seed=0):
    rng = np.random.default_rng(seed)
    yc = rng.normal(size=(m, n))
    yc -= yc.mean(axis=1, keepdims=True)
    yc = np.ascontiguousarray(yc)
    spec = HypothesisSpec(r=r)
    proj, offset = constraint_projection(spec)
    row_sel = np.empty((b, s), dtype=np.int64)
    gather = np.empty((b, s, n), dtype=np.int64)
    for t in range(b):
        it_rng = iteration_rng(seed, t)
        row_sel[t] = draw_row_indices(it_rng, m, s)
        gather[t] = draw_gather_indices(it_rng, s, n, NullMode.FULL_PERMUTE)
    return (
        np.zeros_like(yc), yc, yc, np.ascontiguousarray(yc.T @ yc),
        row_sel, gather, False, None, r, None,
        np.ascontiguousarray(proj), np.ascontiguousarray(offset),
    )


def time_backend(fn, args, b, s, repeats=3):
    out = np.empty((b, s))
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        rc = fn(*args, out)
        elapsed = time.perf_counter() - t0
        assert rc == -1
        best = min(best, elapsed)
    return best, out


def main():
    backends = {}
    for name in ("python", "compiled"):
        try:
            backends[name] = chunk_fn(name)
        except (ImportError, ValueError):
            print(f"backend {name!r} unavailable, skipping")
    print(f"{'workload':>28s} {'python':>10s} {'compiled':>10s} {'speedup':>8s}")
    for m, n, r, s, b in SHAPES:
        args = build_workload(m, n, r, s, b)
        row = {}
        outs = {}
        for name, fn in backends.items():
            elapsed, out = time_backend(fn, args, b, s)
            row[name] = elapsed
            outs[name] = out.copy()
        label = f"m={m} n={n} r={r} s={s} B={b}"
        py = row.get("python")
        cy = row.get("compiled")
        if py and cy:
            rel = np.max(
                np.abs(outs["python"] - outs["compiled"])
                / np.maximum(np.abs(outs["python"]), 1e-300)
            )
            assert rel <= 1e-9, f"backends disagree: rel err {rel:.2e}"
            print(
                f"{label:>28s} {py * 1e3:>8.1f}ms {cy * 1e3:>8.1f}ms {py / cy:>7.1f}x"
            )
        else:
            only = py or cy
            print(f"{label:>28s} {only * 1e3:>8.1f}ms (single backend)")


if __name__ == "__main__":
    main()
