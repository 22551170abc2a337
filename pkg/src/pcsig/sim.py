"""Simulation harness: latent-factor study generation and joint calibration
scoring.

Studies are drawn from y_i = b_i L + e_i with a small latent basis L, a
controlled fraction of truly null rows, and unit Gaussian noise.  Competing
p-value methods run on each study; the p-values at the truly null rows are
tested for uniformity per study (KS), and the per-study KS p-values are
aggregated with a one-sided double KS test that flags systematic
anti-conservative calibration failure.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import f as f_dist

from .engine import (
    JackstrawConfig,
    NullMode,
    derive_seed,
    run_delete_s,
    run_jackstraw,
)
from .errors import ConfigError
from .linmod import HypothesisSpec, SubsetNull
from .matrix import DataMatrix
from .stats import KsSide, double_ks, ks_uniform


class LatentShape(enum.Enum):
    DICHOTOMOUS = "dichotomous"
    SINUSOIDAL = "sinusoidal"
    TWO_FACTOR = "two-factor"


class EffectDist(enum.Enum):
    UNIFORM01 = "uniform01"
    # Read as a fixed unit effect: a drawn zero would contradict non-null
    # status, so non-null coefficients are 1 exactly.
    BERNOULLI = "bernoulli"


@dataclass(frozen=True)
class ScenarioConfig:
    l_shape: LatentShape
    b_dist: EffectDist
    m: int
    pi0: float
    seed: int
    n: int = 20
    noise_sd: float = 1.0
    studies: int = 100
    # Two-factor association counts (rows tied to L1, to L2, and to both).
    assoc_l1: int = 100
    assoc_l2: int = 60
    assoc_both: int = 40

    def __post_init__(self):
        if self.l_shape is not LatentShape.TWO_FACTOR:
            if not (0.0 < self.pi0 < 1.0):
                raise ConfigError(f"pi0={self.pi0} outside (0, 1)")
            if round(self.m * (1.0 - self.pi0)) < 1:
                raise ConfigError("scenario has no non-null rows")
        if self.n < 4:
            raise ConfigError(f"n={self.n} too small")
        if self.l_shape is LatentShape.TWO_FACTOR:
            distinct = self.assoc_l1 + self.assoc_l2 - self.assoc_both
            if self.assoc_both > min(self.assoc_l1, self.assoc_l2) or distinct >= self.m:
                raise ConfigError("inconsistent two-factor association counts")

    @property
    def r(self) -> int:
        return 2 if self.l_shape is LatentShape.TWO_FACTOR else 1


@dataclass(frozen=True)
class StudyData:
    y: DataMatrix
    true_null_mask: np.ndarray
    l_true: np.ndarray
    b_true: np.ndarray


def make_latent_basis(shape: LatentShape, n: int) -> np.ndarray:
    """Unit-norm latent row basis.

    Dichotomous: first half +1, second half -1, scaled by 1/sqrt(n).
    Sinusoidal: one full period of sin over the index grid, normalized.
    Two-factor: the dichotomous row plus an alternating-quarters row; the
    two are exactly orthogonal (n must be divisible by 4).
    """
    if shape is LatentShape.DICHOTOMOUS:
        row = np.ones(n)
        row[n // 2 :] = -1.0
        return (row / math.sqrt(n)).reshape(1, n)
    if shape is LatentShape.SINUSOIDAL:
        row = np.sin(2.0 * np.pi * np.arange(n) / n)
        return (row / np.linalg.norm(row)).reshape(1, n)
    if n % 4 != 0:
        raise ConfigError(f"two-factor basis needs n divisible by 4, got n={n}")
    l1 = np.ones(n)
    l1[n // 2 :] = -1.0
    quarter = n // 4
    l2 = np.ones(n)
    for k in range(4):
        l2[k * quarter : (k + 1) * quarter] = 1.0 if k % 2 == 0 else -1.0
    return np.vstack([l1, l2]) / math.sqrt(n)


def _study_rng(cfg: ScenarioConfig, study_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(study_index,))
    )


def _draw_effects(rng: np.random.Generator, size: int, dist: EffectDist) -> np.ndarray:
    if dist is EffectDist.BERNOULLI:
        return np.ones(size)
    draws = rng.uniform(0.0, 1.0, size=size)
    while np.any(draws == 0.0):  # measure-zero; redrawn for contract clarity
        zero = draws == 0.0
        draws[zero] = rng.uniform(0.0, 1.0, size=int(zero.sum()))
    return draws


def generate_study(cfg: ScenarioConfig, study_index: int) -> StudyData:
    """One synthetic study, deterministic per (cfg.seed, study_index).

    Coefficients are drawn first, then the noise matrix, so the draw order
    is part of the reproducibility contract.
    """
    rng = _study_rng(cfg, study_index)
    l_true = make_latent_basis(cfg.l_shape, cfg.n)
    r = l_true.shape[0]
    b_true = np.zeros((cfg.m, r))

    if cfg.l_shape is LatentShape.TWO_FACTOR:
        n_l1, n_both = cfg.assoc_l1, cfg.assoc_both
        n_l2_only = cfg.assoc_l2 - n_both
        b_true[:n_both, 0] = _draw_effects(rng, n_both, cfg.b_dist)
        b_true[:n_both, 1] = _draw_effects(rng, n_both, cfg.b_dist)
        b_true[n_both:n_l1, 0] = _draw_effects(rng, n_l1 - n_both, cfg.b_dist)
        b_true[n_l1 : n_l1 + n_l2_only, 1] = _draw_effects(rng, n_l2_only, cfg.b_dist)
    else:
        n_null = round(cfg.pi0 * cfg.m)
        b_true[: cfg.m - n_null, 0] = _draw_effects(rng, cfg.m - n_null, cfg.b_dist)

    noise = rng.normal(0.0, cfg.noise_sd, size=(cfg.m, cfg.n))
    values = b_true @ l_true + noise
    width = len(str(cfg.m - 1))
    y = DataMatrix(
        values=values,
        row_ids=tuple(f"v{i:0{width}d}" for i in range(cfg.m)),
        col_ids=tuple(f"obs{j}" for j in range(cfg.n)),
    )
    return StudyData(
        y=y,
        true_null_mask=np.all(b_true == 0.0, axis=1),
        l_true=l_true,
        b_true=b_true,
    )


# ---------------------------------------------------------------------------
# Competing p-value methods.  A method is any object with a ``label`` and a
# ``run(y, seed) -> m p-values``; the built-ins cover the conventional
# parametric F-test, the permute-s resampler, and the delete-s control.
# ---------------------------------------------------------------------------

class ConventionalF:
    """Parametric F-test of each row against the matrix's own top PCs.

    Ignores that the PCs were estimated from the rows themselves, which is
    exactly the over-fitting failure mode the resampling method corrects.
    """

    def __init__(self, spec: HypothesisSpec):
        self.spec = spec
        self.label = "conventional-f"

    def run(self, y: DataMatrix, seed: int) -> np.ndarray:
        from .engine import _prepare, batched_f_stats

        cfg = JackstrawConfig(s=1, b=1, seed=seed, spec=self.spec)
        centered, _, basis_w, proj, offset = _prepare(y, cfg, require_pool=False)
        n = y.shape[1]
        df_num, df_den = proj.shape[0], n - self.spec.r
        f_obs = batched_f_stats(
            np.ascontiguousarray(centered.values), basis_w, proj, offset, df_num, df_den
        )
        return np.asarray(f_dist.sf(f_obs, df_num, df_den))


class JackstrawMethod:
    def __init__(
        self,
        spec: HypothesisSpec,
        s: int,
        b: int,
        null_mode: NullMode = NullMode.FULL_PERMUTE,
        threads: int = 1,
    ):
        self.spec = spec
        self.s = s
        self.b = b
        self.null_mode = null_mode
        self.threads = threads
        self.label = f"jackstraw(s={s})"

    def run(self, y: DataMatrix, seed: int) -> np.ndarray:
        cfg = JackstrawConfig(
            s=self.s, b=self.b, seed=seed, spec=self.spec, null_mode=self.null_mode
        )
        return run_jackstraw(y, cfg, threads=self.threads).p_values


class DeleteSMethod:
    def __init__(self, spec: HypothesisSpec, s: int):
        self.spec = spec
        self.s = s
        self.label = f"delete-s(s={s})"

    def run(self, y: DataMatrix, seed: int) -> np.ndarray:
        cfg = JackstrawConfig(s=self.s, b=1, seed=seed, spec=self.spec)
        return run_delete_s(y, cfg).p_values


@dataclass
class MethodReport:
    label: str
    ks_one_sided: list[float] = field(default_factory=list)
    ks_two_sided: list[float] = field(default_factory=list)
    ks_one_sided_stats: list[float] = field(default_factory=list)
    failed_studies: list[int] = field(default_factory=list)
    double_ks_p: float = math.nan
    double_ks_stat: float = math.nan

    @property
    def mean_d_plus(self) -> float:
        return float(np.mean(self.ks_one_sided_stats)) if self.ks_one_sided_stats else math.nan


@dataclass
class EvaluationReport:
    scenario_label: str
    studies: int
    null_rows_per_study: int
    methods: list[MethodReport]

    def method(self, label: str) -> MethodReport:
        for rep in self.methods:
            if rep.label == label:
                return rep
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario_label,
            "studies": self.studies,
            "null_rows_per_study": self.null_rows_per_study,
            "methods": [
                {
                    "label": rep.label,
                    "double_ks_p": rep.double_ks_p,
                    "double_ks_stat": rep.double_ks_stat,
                    "mean_d_plus": rep.mean_d_plus,
                    "ks_one_sided": rep.ks_one_sided,
                    "ks_two_sided": rep.ks_two_sided,
                    "failed_studies": rep.failed_studies,
                }
                for rep in self.methods
            ],
        }


def _score_methods(
    cfg: ScenarioConfig,
    methods: Sequence,
    scenario_label: str,
    null_mask_fn,
) -> EvaluationReport:
    reports = [MethodReport(label=meth.label) for meth in methods]
    null_rows = 0
    for study_index in range(cfg.studies):
        study = generate_study(cfg, study_index)
        mask = null_mask_fn(study)
        null_rows = int(mask.sum())
        for j, meth in enumerate(methods):
            seed = derive_seed(cfg.seed, study_index, 1000 + j)
            try:
                pvals = np.asarray(meth.run(study.y, seed))
            except Exception:  # noqa: BLE001 -- flagged, never silently dropped
                reports[j].failed_studies.append(study_index)
                continue
            null_p = np.clip(pvals[mask], 0.0, 1.0)
            one = ks_uniform(null_p, KsSide.ONE_SIDED_ANTI_CONSERVATIVE)
            two = ks_uniform(null_p, KsSide.TWO_SIDED)
            reports[j].ks_one_sided.append(one.p_value)
            reports[j].ks_one_sided_stats.append(one.statistic)
            reports[j].ks_two_sided.append(two.p_value)
    for rep in reports:
        if rep.ks_one_sided:
            agg = double_ks(rep.ks_one_sided)
            rep.double_ks_p = agg.p_value
            rep.double_ks_stat = agg.statistic
    return EvaluationReport(
        scenario_label=scenario_label,
        studies=cfg.studies,
        null_rows_per_study=null_rows,
        methods=reports,
    )


def run_joint_null_evaluation(cfg: ScenarioConfig, methods: Sequence) -> EvaluationReport:
    """Score each method's null p-value calibration across repeated studies.

    Null rows are identified from the generating truth (all-zero
    coefficient rows), never from estimated loadings.
    """
    if not methods:
        raise ConfigError("need at least one method")
    label = scenario_label(cfg)
    return _score_methods(cfg, methods, label, lambda st: st.true_null_mask)


def run_two_pc_evaluation(
    cfg: ScenarioConfig,
    methods: Optional[Sequence] = None,
    s: int = 50,
    b: int = 200,
) -> EvaluationReport:
    """Subset-test calibration on the two-factor scenario.

    Tests association with the first PC while adjusting for the second; a
    row counts as null when it has no first-factor association (it may still
    carry second-factor signal).
    """
    if cfg.l_shape is not LatentShape.TWO_FACTOR:
        raise ConfigError("two-PC evaluation needs a two-factor scenario")
    spec = HypothesisSpec(r=2, constraint=SubsetNull((1,)))
    if methods is None:
        methods = [ConventionalF(spec), JackstrawMethod(spec, s=s, b=b)]
    return _score_methods(
        cfg, methods, scenario_label(cfg), lambda st: st.b_true[:, 0] == 0.0
    )


# ---------------------------------------------------------------------------
# The scenario grid: {dichotomous, sinusoidal} x {uniform01, bernoulli}
# x {m=1000, m=5000} x {pi0=0.95, pi0=0.75}, numbered 1..16.
# ---------------------------------------------------------------------------

def scenario_grid(seed: int, studies: int = 100) -> list[ScenarioConfig]:
    grid = []
    for l_shape in (LatentShape.DICHOTOMOUS, LatentShape.SINUSOIDAL):
        for b_dist in (EffectDist.UNIFORM01, EffectDist.BERNOULLI):
            for m in (1000, 5000):
                for pi0 in (0.95, 0.75):
                    grid.append(
                        ScenarioConfig(
                            l_shape=l_shape,
                            b_dist=b_dist,
                            m=m,
                            pi0=pi0,
                            seed=seed,
                            studies=studies,
                        )
                    )
    return grid


def scenario_by_id(scenario_id: int, seed: int, studies: int = 100) -> ScenarioConfig:
    grid = scenario_grid(seed, studies)
    if not (1 <= scenario_id <= len(grid)):
        raise ConfigError(f"scenario id must be in 1..{len(grid)}, got {scenario_id}")
    return grid[scenario_id - 1]


def two_factor_config(seed: int, studies: int = 100, m: int = 1000) -> ScenarioConfig:
    return ScenarioConfig(
        l_shape=LatentShape.TWO_FACTOR,
        b_dist=EffectDist.UNIFORM01,
        m=m,
        pi0=0.9,  # unused for two-factor; association counts drive the truth
        seed=seed,
        studies=studies,
    )


def scenario_label(cfg: ScenarioConfig) -> str:
    if cfg.l_shape is LatentShape.TWO_FACTOR:
        return f"two-factor(m={cfg.m},n={cfg.n})"
    return (
        f"{cfg.l_shape.value},{cfg.b_dist.value},m={cfg.m},pi0={cfg.pi0}"
    )


def qq_coordinates(p_values) -> np.ndarray:
    """(expected uniform quantile, observed p) pairs for QQ plotting."""
    obs = np.sort(np.asarray(p_values, dtype=np.float64))
    expected = (np.arange(1, obs.size + 1) - 0.5) / obs.size
    return np.column_stack([expected, obs])
