"""Command-line interface.

Subcommands: ``pca`` (decompose a matrix), ``jackstraw`` (resampling
significance), ``delete-s`` (hold-out negative control), ``simulate``
(materialize synthetic studies), ``evaluate`` (joint calibration scoring,
optionally the full 16-scenario grid or the two-PC subset design), and
``enrich`` (permutation rank-sum gene-set style enrichment).

Exit codes: 0 success, 2 data/parse errors, 3 numeric failures, 4
configuration errors.  Every run writes ``provenance.json`` with the input
digest, configuration digest, seed and package version; repeated runs with
identical provenance produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .engine import (
    JackstrawConfig,
    NullMode,
    config_digest,
    default_config,
    run_delete_s,
    run_jackstraw,
)
from .errors import ConfigError, DataError, NumericError, PcsigError
from .linmod import FullNull, HypothesisSpec, SubsetNull
from .matrix import compute_pca, format_float, read_matrix, scree_data, top_pcs
from .sim import (
    ConventionalF,
    DeleteSMethod,
    JackstrawMethod,
    generate_study,
    qq_coordinates,
    run_joint_null_evaluation,
    run_two_pc_evaluation,
    scenario_by_id,
    scenario_grid,
    scenario_label,
    two_factor_config,
)
from .stats import estimate_pi0, q_values, rank_sum_enrichment

EXIT_OK = 0
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_CONFIG = 4

THREAD_ENV_VAR = "PCSIG_MAX_THREADS"


def _thread_count(requested) -> int:
    cap = os.environ.get(THREAD_ENV_VAR)
    if requested is not None:
        return max(1, int(requested))
    if cap is not None:
        return max(1, int(cap))
    return os.cpu_count() or 1


def _sanitize(obj):
    """Make floats JSON-safe (non-finite values become strings)."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else format(obj, "g")
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.generic):
        return _sanitize(obj.item())
    return obj


def dump_json(obj, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_sanitize(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_provenance(outdir, command, cfg_payload, input_digest=None, seed=None):
    blob = json.dumps(_sanitize(cfg_payload), sort_keys=True, separators=(",", ":"))
    prov = {
        "command": command,
        "config_digest": hashlib.sha256(blob.encode()).hexdigest(),
        "input_digest": input_digest,
        "seed": seed,
        "version": __version__,
    }
    dump_json(prov, os.path.join(outdir, "provenance.json"))


def _load_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def _opt(args, file_cfg, name, default=None):
    """CLI flag wins over config file over default."""
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    if name in file_cfg:
        return file_cfg[name]
    return default


def _build_spec(r, tested_pcs, rotation_path) -> HypothesisSpec:
    rotation = None
    if rotation_path:
        try:
            rotation = np.loadtxt(rotation_path, ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read rotation matrix {rotation_path}: {exc}") from exc
    if tested_pcs:
        if isinstance(tested_pcs, str):
            tested = tuple(int(t) for t in tested_pcs.split(",") if t.strip())
        else:
            tested = tuple(int(t) for t in tested_pcs)
        if len(tested) < r:
            return HypothesisSpec(r=r, constraint=SubsetNull(tested), rotation=rotation)
    return HypothesisSpec(r=r, constraint=FullNull(), rotation=rotation)


def _write_table(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(row) + "\n")


# ---------------------------------------------------------------------------
# pca
# ---------------------------------------------------------------------------

def cmd_pca(args) -> int:
    file_cfg = _load_config_file(args.config) if args.config else {}
    r = int(_opt(args, file_cfg, "r", 2))
    outdir = _opt(args, file_cfg, "output-dir", ".")
    os.makedirs(outdir, exist_ok=True)

    mat = read_matrix(args.input)
    dec = compute_pca(mat, r)
    vt_r = top_pcs(dec)

    _write_table(
        os.path.join(outdir, "vt_r.tsv"),
        ["id"] + list(mat.col_ids),
        ((f"PC{k + 1}", *[format_float(v) for v in vt_r[k]]) for k in range(r)),
    )
    _write_table(
        os.path.join(outdir, "u_r.tsv"),
        ["id"] + [f"PC{k + 1}" for k in range(r)],
        (
            (mat.row_ids[i], *[format_float(v) for v in dec.u[i, :r]])
            for i in range(mat.shape[0])
        ),
    )
    _write_table(
        os.path.join(outdir, "scree.tsv"),
        ["pc_index", "pct_variance"],
        ((str(k), format_float(v)) for k, v in scree_data(dec)),
    )
    _write_provenance(outdir, "pca", {"command": "pca", "r": r}, _file_digest(args.input))
    return EXIT_OK


# ---------------------------------------------------------------------------
# jackstraw / delete-s
# ---------------------------------------------------------------------------

def _engine_config(args, file_cfg, m) -> tuple[JackstrawConfig, float, int]:
    r = int(_opt(args, file_cfg, "r", 2))
    seed = int(_opt(args, file_cfg, "seed", 0))
    spec = _build_spec(
        r,
        _opt(args, file_cfg, "tested-pcs"),
        _opt(args, file_cfg, "rotation-path"),
    )
    null_mode = NullMode(_opt(args, file_cfg, "null-mode", "full-permute"))
    overrides = {"null_mode": null_mode}
    if getattr(args, "pseudocount", False) or file_cfg.get("pseudocount"):
        overrides["pseudocount"] = True
    s = _opt(args, file_cfg, "s")
    b = _opt(args, file_cfg, "b")
    config = default_config(
        m,
        spec,
        seed,
        s=int(s) if s is not None else None,
        b=int(b) if b is not None else None,
        **overrides,
    )
    fdr_threshold = float(_opt(args, file_cfg, "fdr-threshold", 0.01))
    if not (0.0 < fdr_threshold < 1.0):
        raise ConfigError(f"fdr-threshold {fdr_threshold} outside (0, 1)")
    threads = _thread_count(_opt(args, file_cfg, "threads"))
    return config, fdr_threshold, threads


def _write_significance_outputs(outdir, mat, result, fdr_threshold):
    pvals = result.p_values
    pi0 = estimate_pi0(pvals)
    qvals = q_values(pvals, pi0)
    _write_table(
        os.path.join(outdir, "pvalues.tsv"),
        ["row_id", "f", "p", "q"],
        (
            (
                mat.row_ids[i],
                format_float(result.observed_f[i]),
                format_float(pvals[i]),
                format_float(qvals[i]),
            )
            for i in range(mat.shape[0])
        ),
    )
    summary = {
        "pi0_hat": pi0,
        "fdr_threshold": fdr_threshold,
        "n_significant": int((qvals <= fdr_threshold).sum()),
        "negative_control": result.negative_control,
        "config": {
            k: v
            for k, v in result.provenance.items()
            if k not in ("input_digest", "config_digest", "backend")
        },
        "null_pool": (
            None
            if result.null_pool_summary is None
            else {
                "count": result.null_pool_summary.count,
                "min": result.null_pool_summary.minimum,
                "max": result.null_pool_summary.maximum,
                "quantiles": {
                    format(k, "g"): v for k, v in result.null_pool_summary.quantiles.items()
                },
            }
        ),
    }
    dump_json(summary, os.path.join(outdir, "summary.json"))
    return summary


def cmd_jackstraw(args) -> int:
    file_cfg = _load_config_file(args.config) if args.config else {}
    outdir = _opt(args, file_cfg, "output-dir", ".")
    os.makedirs(outdir, exist_ok=True)
    mat = read_matrix(args.input)
    config, fdr_threshold, threads = _engine_config(args, file_cfg, mat.shape[0])

    result = run_jackstraw(
        mat,
        config,
        threads=threads,
        checkpoint_path=_opt(args, file_cfg, "checkpoint-path"),
        checkpoint_every=(
            int(_opt(args, file_cfg, "checkpoint-every"))
            if _opt(args, file_cfg, "checkpoint-every") is not None
            else None
        ),
    )
    _write_significance_outputs(outdir, mat, result, fdr_threshold)
    _write_provenance(
        outdir,
        "jackstraw",
        {"command": "jackstraw", "config_digest": config_digest(config)},
        result.provenance["input_digest"],
        config.seed,
    )
    return EXIT_OK


def cmd_delete_s(args) -> int:
    file_cfg = _load_config_file(args.config) if args.config else {}
    outdir = _opt(args, file_cfg, "output-dir", ".")
    os.makedirs(outdir, exist_ok=True)
    mat = read_matrix(args.input)
    config, fdr_threshold, _ = _engine_config(args, file_cfg, mat.shape[0])

    result = run_delete_s(mat, config)
    _write_significance_outputs(outdir, mat, result, fdr_threshold)
    _write_provenance(
        outdir,
        "delete-s",
        {"command": "delete-s", "config_digest": config_digest(config)},
        result.provenance["input_digest"],
        config.seed,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate / evaluate
# ---------------------------------------------------------------------------

def _scenario_from_args(args, studies, seed):
    if getattr(args, "two_pc", False):
        return two_factor_config(seed=seed, studies=studies)
    return scenario_by_id(int(args.scenario), seed=seed, studies=studies)


def cmd_simulate(args) -> int:
    from .matrix import write_matrix

    outdir = args.output_dir or "."
    os.makedirs(outdir, exist_ok=True)
    studies = int(args.studies or 1)
    seed = int(args.seed or 0)
    cfg = _scenario_from_args(args, studies, seed)
    for k in range(studies):
        study = generate_study(cfg, k)
        write_matrix(study.y, os.path.join(outdir, f"study_{k:03d}_y.tsv"))
        _write_table(
            os.path.join(outdir, f"study_{k:03d}_truth.tsv"),
            ["row_id"]
            + [f"b{j + 1}" for j in range(study.b_true.shape[1])]
            + ["is_null"],
            (
                (
                    study.y.row_ids[i],
                    *[format_float(v) for v in study.b_true[i]],
                    str(int(study.true_null_mask[i])),
                )
                for i in range(cfg.m)
            ),
        )
    dump_json(
        {"scenario": scenario_label(cfg), "studies": studies, "seed": seed},
        os.path.join(outdir, "scenario.json"),
    )
    _write_provenance(
        outdir,
        "simulate",
        {"command": "simulate", "scenario": scenario_label(cfg), "studies": studies},
        seed=seed,
    )
    return EXIT_OK


def _parse_methods(names, spec, s, b, threads):
    methods = []
    for name in names:
        name = name.strip()
        if name == "conventional-f":
            methods.append(ConventionalF(spec))
        elif name == "jackstraw":
            methods.append(JackstrawMethod(spec, s=s, b=b, threads=threads))
        elif name == "delete-s":
            methods.append(DeleteSMethod(spec, s=s))
        else:
            raise ConfigError(f"unknown method {name!r}")
    return methods


def _emit_report(outdir, report) -> None:
    os.makedirs(outdir, exist_ok=True)
    dump_json(report.to_dict(), os.path.join(outdir, "report.json"))
    header = ["study"] + [
        f"{rep.label}_{side}" for rep in report.methods for side in ("one_sided", "two_sided")
    ]
    rows = []
    for i in range(max((len(r.ks_one_sided) for r in report.methods), default=0)):
        row = [str(i)]
        for rep in report.methods:
            row.append(format_float(rep.ks_one_sided[i]) if i < len(rep.ks_one_sided) else "")
            row.append(format_float(rep.ks_two_sided[i]) if i < len(rep.ks_two_sided) else "")
        rows.append(row)
    _write_table(os.path.join(outdir, "per_study_ks.tsv"), header, rows)
    for rep in report.methods:
        safe = rep.label.replace("(", "_").replace(")", "").replace("=", "")
        coords = qq_coordinates(rep.ks_one_sided) if rep.ks_one_sided else np.empty((0, 2))
        _write_table(
            os.path.join(outdir, f"qq_{safe}.tsv"),
            ["expected", "observed"],
            ((format_float(a), format_float(b)) for a, b in coords),
        )


def _evaluate_single(cfg, args, outdir, two_pc, threads):
    s = int(args.s) if args.s else max(1, math.ceil(0.05 * cfg.m))
    b = int(args.b) if args.b else math.ceil(max(10 * cfg.m, 10_000) / s)
    if two_pc:
        spec = HypothesisSpec(r=2, constraint=SubsetNull((1,)))
        names = (args.methods or "conventional-f,jackstraw").split(",")
        methods = _parse_methods(names, spec, s, b, threads)
        report = run_two_pc_evaluation(cfg, methods)
    else:
        spec = HypothesisSpec(r=cfg.r, constraint=FullNull())
        names = (args.methods or "conventional-f,jackstraw").split(",")
        methods = _parse_methods(names, spec, s, b, threads)
        report = run_joint_null_evaluation(cfg, methods)
    _emit_report(outdir, report)
    return report


def cmd_evaluate(args) -> int:
    outdir = args.output_dir or "."
    os.makedirs(outdir, exist_ok=True)
    studies = int(args.studies or 100)
    seed = int(args.seed or 0)
    threads = _thread_count(args.threads)

    if args.all_16:
        for sid, cfg in enumerate(scenario_grid(seed, studies), start=1):
            _evaluate_single(cfg, args, os.path.join(outdir, f"scenario_{sid:02d}"), False, threads)
    else:
        cfg = _scenario_from_args(args, studies, seed)
        _evaluate_single(cfg, args, outdir, bool(args.two_pc), threads)
    _write_provenance(
        outdir,
        "evaluate",
        {
            "command": "evaluate",
            "scenario": "all-16" if args.all_16 else ("two-pc" if args.two_pc else args.scenario),
            "studies": studies,
            "methods": args.methods,
            "s": args.s,
            "b": args.b,
        },
        seed=seed,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# enrich
# ---------------------------------------------------------------------------

def _read_scores(path):
    scores = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'id<TAB>score'")
            try:
                scores[parts[0]] = float(parts[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: not a number: {parts[1]!r}") from exc
    if not scores:
        raise DataError(f"{path}: no scores")
    return scores


def cmd_enrich(args) -> int:
    outdir = args.output_dir or "."
    os.makedirs(outdir, exist_ok=True)
    scores = _read_scores(args.scores)
    with open(args.members, "r", encoding="utf-8") as fh:
        members = {line.strip() for line in fh if line.strip()}
    member_stats = [v for k, v in scores.items() if k in members]
    nonmember_stats = [v for k, v in scores.items() if k not in members]
    if not member_stats or not nonmember_stats:
        raise ConfigError("membership list must split the scores into two nonempty groups")
    permutations = int(args.permutations or 1000)
    seed = int(args.seed or 0)
    p = rank_sum_enrichment(member_stats, nonmember_stats, permutations, seed)
    dump_json(
        {
            "p_value": p,
            "n_members": len(member_stats),
            "n_nonmembers": len(nonmember_stats),
            "permutations": permutations,
            "seed": seed,
        },
        os.path.join(outdir, "enrichment.json"),
    )
    _write_provenance(
        outdir,
        "enrich",
        {"command": "enrich", "permutations": permutations},
        _file_digest(args.scores),
        seed,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcsig",
        description="Significance of variables driving principal components.",
    )
    parser.add_argument("--version", action="version", version=f"pcsig {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON file with option defaults")
        p.add_argument("--output-dir", help="directory for output files")

    p_pca = sub.add_parser("pca", help="thin-SVD PCA of a matrix")
    p_pca.add_argument("--input", required=True)
    p_pca.add_argument("--r", type=int)
    add_common(p_pca)
    p_pca.set_defaults(func=cmd_pca)

    for name, fn in (("jackstraw", cmd_jackstraw), ("delete-s", cmd_delete_s)):
        p = sub.add_parser(name, help=f"{name} significance run")
        p.add_argument("--input", required=True)
        p.add_argument("--r", type=int)
        p.add_argument("--s", type=int)
        if name == "jackstraw":
            p.add_argument("--b", type=int)
            p.add_argument(
                "--null-mode",
                choices=[m.value for m in NullMode],
            )
            p.add_argument("--pseudocount", action="store_true")
            p.add_argument("--checkpoint-path")
            p.add_argument("--checkpoint-every", type=int)
            p.add_argument("--threads", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--tested-pcs", help="comma-separated 1-based PC indices to test")
        p.add_argument("--rotation-path", help="headerless numeric r x r rotation file")
        p.add_argument("--fdr-threshold", type=float)
        add_common(p)
        p.set_defaults(func=fn)

    p_sim = sub.add_parser("simulate", help="materialize synthetic studies")
    group = p_sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--scenario", type=int, help="scenario id 1..16")
    group.add_argument("--two-pc", action="store_true")
    p_sim.add_argument("--studies", type=int)
    p_sim.add_argument("--seed", type=int)
    add_common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_eval = sub.add_parser("evaluate", help="joint null calibration scoring")
    group = p_eval.add_mutually_exclusive_group(required=True)
    group.add_argument("--scenario", type=int)
    group.add_argument("--all-16", action="store_true")
    group.add_argument("--two-pc", action="store_true")
    p_eval.add_argument("--studies", type=int)
    p_eval.add_argument("--seed", type=int)
    p_eval.add_argument("--methods", help="comma list: conventional-f,jackstraw,delete-s")
    p_eval.add_argument("--s", type=int)
    p_eval.add_argument("--b", type=int)
    p_eval.add_argument("--threads", type=int)
    add_common(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_enr = sub.add_parser("enrich", help="rank-sum enrichment with permutation p-value")
    p_enr.add_argument("--scores", required=True, help="TSV: row_id<TAB>score")
    p_enr.add_argument("--members", required=True, help="file with one member id per line")
    p_enr.add_argument("--permutations", type=int)
    p_enr.add_argument("--seed", type=int)
    add_common(p_enr)
    p_enr.set_defaults(func=cmd_enrich)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"pcsig: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"pcsig: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"pcsig: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PcsigError as exc:
        print(f"pcsig: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
