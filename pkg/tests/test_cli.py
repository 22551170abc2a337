import json
import math
import subprocess
import sys

import numpy as np
import pytest

from pcsig.cli import main
from pcsig.matrix import DataMatrix, read_matrix, write_matrix
from pcsig.sim import LatentShape, make_latent_basis


def run_cli(args):
    return main([str(a) for a in args])


def write_noise_matrix(path, m, n, seed=0):
    rng = np.random.default_rng(seed)
    mat = DataMatrix.from_values(rng.normal(size=(m, n)))
    write_matrix(mat, str(path))
    return mat


# ---------------------------------------------------------------------------
# pca
# ---------------------------------------------------------------------------

def test_pca_outputs(tmp_path):
    inp = tmp_path / "toy.tsv"
    rng = np.random.default_rng(2)
    write_matrix(DataMatrix.from_values(rng.normal(size=(5, 4))), str(inp))
    out = tmp_path / "out"
    assert run_cli(["pca", "--input", inp, "--r", 2, "--output-dir", out]) == 0

    scree = (out / "scree.tsv").read_text().strip().splitlines()[1:]
    fracs = [float(line.split("\t")[1]) for line in scree]
    assert len(fracs) == 4
    assert abs(sum(fracs) - 1.0) <= 1e-12

    vt = read_matrix(str(out / "vt_r.tsv"))
    assert vt.shape == (2, 4)
    assert vt.row_ids == ("PC1", "PC2")

    u_lines = (out / "u_r.tsv").read_text().strip().splitlines()
    assert u_lines[0] == "id\tPC1\tPC2"
    assert len(u_lines) == 6

    prov = json.loads((out / "provenance.json").read_text())
    assert prov["command"] == "pca"
    assert prov["version"]


def test_pca_rank_one_scree(tmp_path):
    inp = tmp_path / "rank1.tsv"
    vals = np.outer([1.0, 2.0, -1.5, 0.25], [1.0, -1.0, 2.0, 0.0, -2.0])
    write_matrix(DataMatrix.from_values(vals), str(inp))
    out = tmp_path / "out"
    assert run_cli(["pca", "--input", inp, "--r", 1, "--output-dir", out]) == 0
    first = float((out / "scree.tsv").read_text().splitlines()[1].split("\t")[1])
    assert first == pytest.approx(1.0, abs=1e-12)


def test_pca_vt_roundtrip_bit_exact(tmp_path):
    inp = tmp_path / "toy.tsv"
    write_noise_matrix(inp, 8, 5, seed=5)
    out = tmp_path / "out"
    run_cli(["pca", "--input", inp, "--r", 3, "--output-dir", out])

    from pcsig.matrix import compute_pca, top_pcs

    mat = read_matrix(str(inp))
    want = top_pcs(compute_pca(mat, 3))
    got = read_matrix(str(out / "vt_r.tsv"))
    assert np.array_equal(got.values, want)


# ---------------------------------------------------------------------------
# jackstraw
# ---------------------------------------------------------------------------

def test_jackstraw_pure_noise_pi0(tmp_path):
    inp = tmp_path / "noise.tsv"
    write_noise_matrix(inp, 500, 20, seed=11)
    out = tmp_path / "out"
    rc = run_cli(
        ["jackstraw", "--input", inp, "--r", 2, "--seed", 4, "--output-dir", out]
    )
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["pi0_hat"] >= 0.9
    assert summary["config"]["s"] == 50
    assert summary["null_pool"]["count"] == summary["config"]["s"] * summary["config"]["b"]

    lines = (out / "pvalues.tsv").read_text().strip().splitlines()
    assert lines[0] == "row_id\tf\tp\tq"
    assert len(lines) == 501
    pvals = np.array([float(l.split("\t")[2]) for l in lines[1:]])
    assert pvals.min() >= 0.0 and pvals.max() <= 1.0


def test_jackstraw_subset_recovers_first_factor(tmp_path):
    # strong, well-separated factors: testing PC1 while adjusting PC2 must
    # rank first-factor rows far ahead of the rest
    basis = make_latent_basis(LatentShape.TWO_FACTOR, 20)
    rng = np.random.default_rng(3)
    m = 600
    b = np.zeros((m, 2))
    b[:100, 0] = rng.uniform(3.0, 5.0, 100)
    b[80:140, 1] = rng.uniform(1.5, 2.5, 60)
    vals = b @ basis + rng.normal(size=(m, 20))
    inp = tmp_path / "two_factor.tsv"
    write_matrix(DataMatrix.from_values(vals), str(inp))
    out = tmp_path / "out"
    rc = run_cli(
        [
            "jackstraw", "--input", inp, "--r", 2, "--tested-pcs", "1",
            "--s", 50, "--b", 200, "--seed", 5, "--output-dir", out,
        ]
    )
    assert rc == 0
    lines = (tmp_path / "out" / "pvalues.tsv").read_text().strip().splitlines()[1:]
    pvals = np.array([float(l.split("\t")[2]) for l in lines])

    from scipy.stats import rankdata

    truth = b[:, 0] != 0
    ranks = rankdata(pvals)
    n1, n0 = truth.sum(), (~truth).sum()
    auc = 1.0 - (ranks[truth].sum() - n1 * (n1 + 1) / 2) / (n1 * n0)
    assert auc > 0.9


def test_jackstraw_threads_do_not_change_bytes(tmp_path):
    inp = tmp_path / "noise.tsv"
    write_noise_matrix(inp, 80, 12, seed=3)
    outputs = []
    for threads in (1, 2):
        out = tmp_path / f"t{threads}"
        rc = run_cli(
            [
                "jackstraw", "--input", inp, "--r", 1, "--s", 8, "--b", 50,
                "--seed", 9, "--threads", threads, "--output-dir", out,
            ]
        )
        assert rc == 0
        outputs.append(
            (
                (out / "pvalues.tsv").read_bytes(),
                (out / "summary.json").read_bytes(),
                (out / "provenance.json").read_bytes(),
            )
        )
    assert outputs[0] == outputs[1]


def test_thread_cap_env_var(tmp_path, monkeypatch):
    # the cap only changes scheduling, never bytes
    inp = tmp_path / "noise.tsv"
    write_noise_matrix(inp, 60, 10, seed=4)
    out1 = tmp_path / "env"
    monkeypatch.setenv("PCSIG_MAX_THREADS", "2")
    assert (
        run_cli(["jackstraw", "--input", inp, "--r", 1, "--s", 6, "--b", 40,
                 "--seed", 2, "--output-dir", out1])
        == 0
    )
    monkeypatch.delenv("PCSIG_MAX_THREADS")
    out2 = tmp_path / "plain"
    run_cli(["jackstraw", "--input", inp, "--r", 1, "--s", 6, "--b", 40,
             "--seed", 2, "--threads", 1, "--output-dir", out2])
    assert (out1 / "pvalues.tsv").read_bytes() == (out2 / "pvalues.tsv").read_bytes()


def test_jackstraw_checkpoint_resume(tmp_path):
    inp = tmp_path / "noise.tsv"
    write_noise_matrix(inp, 60, 10, seed=6)
    ckpt = tmp_path / "run.ckpt"
    args = ["jackstraw", "--input", inp, "--r", 1, "--s", 6, "--b", 40,
            "--seed", 8, "--checkpoint-path", ckpt, "--checkpoint-every", 15]
    out1 = tmp_path / "first"
    assert run_cli(args + ["--output-dir", out1]) == 0
    assert ckpt.exists()  # intermediate snapshot left behind
    out2 = tmp_path / "resumed"
    assert run_cli(args + ["--output-dir", out2]) == 0
    assert (out1 / "pvalues.tsv").read_bytes() == (out2 / "pvalues.tsv").read_bytes()


def test_jackstraw_rotation_file(tmp_path):
    inp = tmp_path / "noise.tsv"
    write_noise_matrix(inp, 60, 10, seed=8)
    rot = tmp_path / "rot.tsv"
    theta = math.pi / 6
    rot.write_text(
        f"{math.cos(theta)}\t{-math.sin(theta)}\n{math.sin(theta)}\t{math.cos(theta)}\n"
    )
    out = tmp_path / "out"
    rc = run_cli(
        [
            "jackstraw", "--input", inp, "--r", 2, "--rotation-path", rot,
            "--s", 6, "--b", 50, "--seed", 1, "--output-dir", out,
        ]
    )
    assert rc == 0


def test_config_file_merging(tmp_path):
    inp = tmp_path / "noise.tsv"
    write_noise_matrix(inp, 60, 10, seed=8)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"r": 1, "s": 6, "b": 40, "seed": 3}))
    out1 = tmp_path / "o1"
    out2 = tmp_path / "o2"
    assert run_cli(["jackstraw", "--input", inp, "--config", cfg, "--output-dir", out1]) == 0
    # explicit flag overrides the config file
    assert (
        run_cli(
            ["jackstraw", "--input", inp, "--config", cfg, "--seed", 4, "--output-dir", out2]
        )
        == 0
    )
    s1 = json.loads((out1 / "summary.json").read_text())
    s2 = json.loads((out2 / "summary.json").read_text())
    assert s1["config"]["seed"] == 3
    assert s2["config"]["seed"] == 4


# ---------------------------------------------------------------------------
# delete-s
# ---------------------------------------------------------------------------

def test_delete_s_command(tmp_path):
    inp = tmp_path / "noise.tsv"
    write_noise_matrix(inp, 60, 10, seed=2)
    out = tmp_path / "out"
    rc = run_cli(
        ["delete-s", "--input", inp, "--r", 1, "--s", 10, "--seed", 0, "--output-dir", out]
    )
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["negative_control"] is True
    assert summary["null_pool"] is None


# ---------------------------------------------------------------------------
# simulate / evaluate
# ---------------------------------------------------------------------------

def test_simulate_writes_study_files(tmp_path):
    out = tmp_path / "sim"
    rc = run_cli(
        ["simulate", "--scenario", 1, "--studies", 2, "--seed", 7, "--output-dir", out]
    )
    assert rc == 0
    y = read_matrix(str(out / "study_000_y.tsv"))
    assert y.shape == (1000, 20)
    truth = (out / "study_000_truth.tsv").read_text().strip().splitlines()
    assert len(truth) == 1001
    n_null = sum(line.split("\t")[-1] == "1" for line in truth[1:])
    assert n_null == 950


def test_evaluate_scenario_smoke(tmp_path):
    out = tmp_path / "eval"
    rc = run_cli(
        [
            "evaluate", "--scenario", 1, "--studies", 5, "--seed", 3,
            "--methods", "conventional-f", "--output-dir", out,
        ]
    )
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["studies"] == 5
    method = report["methods"][0]
    assert method["label"] == "conventional-f"
    assert len(method["ks_one_sided"]) == 5
    assert (out / "qq_conventional-f.tsv").exists()
    per_study = (out / "per_study_ks.tsv").read_text().strip().splitlines()
    assert len(per_study) == 6


def test_evaluate_all_16_grid(tmp_path):
    out = tmp_path / "grid"
    rc = run_cli(
        [
            "evaluate", "--all-16", "--studies", 2, "--seed", 1,
            "--methods", "conventional-f", "--output-dir", out,
        ]
    )
    assert rc == 0
    dirs = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert dirs == [f"scenario_{i:02d}" for i in range(1, 17)]
    for d in dirs:
        assert (out / d / "report.json").exists()


def test_evaluate_two_pc_smoke(tmp_path):
    out = tmp_path / "twopc"
    rc = run_cli(
        [
            "evaluate", "--two-pc", "--studies", 2, "--seed", 2,
            "--methods", "conventional-f", "--output-dir", out,
        ]
    )
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["null_rows_per_study"] == 900


def test_evaluate_unknown_scenario_is_config_error(tmp_path):
    rc = run_cli(
        ["evaluate", "--scenario", 99, "--studies", 2, "--output-dir", tmp_path / "x"]
    )
    assert rc == 4


# ---------------------------------------------------------------------------
# enrich
# ---------------------------------------------------------------------------

def test_enrich_command(tmp_path):
    scores = tmp_path / "scores.tsv"
    scores.write_text("".join(f"g{i}\t{v}\n" for i, v in enumerate([9.0, 8.5, 7.0, 1.0, 0.5, 0.2])))
    members = tmp_path / "members.txt"
    members.write_text("g0\ng1\ng2\n")
    out = tmp_path / "out"
    rc = run_cli(
        [
            "enrich", "--scores", scores, "--members", members,
            "--permutations", 2000, "--seed", 5, "--output-dir", out,
        ]
    )
    assert rc == 0
    result = json.loads((out / "enrichment.json").read_text())
    assert result["n_members"] == 3
    assert 1 / 2001 <= result["p_value"] <= 0.2


# ---------------------------------------------------------------------------
# error classes map to exit codes
# ---------------------------------------------------------------------------

def test_parse_error_exit_code(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("id\ta\tb\tc\nrow\t1\tnope\t3\n")
    assert run_cli(["pca", "--input", bad, "--output-dir", tmp_path / "o"]) == 2


def test_config_error_exit_code(tmp_path):
    inp = tmp_path / "noise.tsv"
    write_noise_matrix(inp, 20, 6, seed=0)
    rc = run_cli(
        ["jackstraw", "--input", inp, "--r", 99, "--s", 2, "--b", 60,
         "--seed", 0, "--output-dir", tmp_path / "o"]
    )
    assert rc == 4


def test_console_script_version():
    out = subprocess.run(
        [sys.executable, "-m", "pcsig.cli", "--version"],
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.startswith("pcsig ")
