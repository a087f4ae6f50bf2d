"""
BIC model selection over the three pi parameterizations and the two replicate treatments.
"""
import multiprocessing as mp
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from tqdm import tqdm

from erv_mixture.config import FitCfg, PiModel, RankBy, ReplicateMode
from erv_mixture.dataset import CohortMetadata, CountMatrix
from erv_mixture.fitter import FitResult, fit
from erv_mixture.prior import get_prior
from erv_mixture.utils.errors import FitError, ValidationError
from erv_mixture.utils.types import Dims


@dataclass(frozen=True)
class ModelScore:
    pi_model: PiModel
    replicate_mode: ReplicateMode
    d: int
    loglik: float
    bic_paper: float
    bic_standard: float

    def bic(self, rank_by: RankBy) -> float:
        return self.bic_paper if RankBy(rank_by) == RankBy.PAPER else self.bic_standard


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """
    Parameters
    ----------
    scores : dict[ReplicateMode, list[ModelScore]]
        Scores of each replicate treatment, best first
    best : dict[ReplicateMode, FitResult]
        Fit of the winning model of each replicate treatment
    rank_by : RankBy
    """

    scores: Dict[ReplicateMode, List[ModelScore]]
    best: Dict[ReplicateMode, FitResult]
    rank_by: RankBy = RankBy.PAPER


def count_parameters(cfg: FitCfg, dims: Dims) -> int:
    """alpha's + r's + p's + pi's"""
    m, n, K = dims
    if min(m, n, K) < 1:
        raise ValidationError(f"dims must be positive, got {dims}")
    return m + n + K + get_prior(cfg.pi_model).num_params(m, n)


def bic(loglik: float, d: int, dims: Tuple[int, int]) -> Tuple[float, float]:
    """
    Returns:
        (-2 loglik + mn log d, -2 loglik + d log mn)
    """
    m, n = dims
    mn = m * n
    if d < 1 or mn < 1:
        raise ValidationError(f"bic needs d >= 1 and mn >= 1, got d={d}, mn={mn}")
    return -2.0 * loglik + mn * np.log(d), -2.0 * loglik + d * np.log(mn)


def score_fit(result: FitResult, cm: CountMatrix, meta: CohortMetadata) -> ModelScore:
    cfg = result.cfg
    d = count_parameters(cfg, (cm.m, cm.n, meta.K))
    bic_paper, bic_standard = bic(result.loglik, d, (cm.m, cm.n))
    return ModelScore(
        pi_model=cfg.pi_model,
        replicate_mode=cfg.replicate_mode,
        d=d,
        loglik=result.loglik,
        bic_paper=float(bic_paper),
        bic_standard=float(bic_standard),
    )


def rank_scores(scores: Sequence[ModelScore], rank_by: RankBy = RankBy.PAPER) -> List[ModelScore]:
    """Ascending BIC, ties broken by smaller d"""
    return sorted(scores, key=lambda s: (s.bic(rank_by), s.d))


def _fit_one(args) -> FitResult:
    cm, meta, cfg = args
    try:
        return fit(cm, meta, cfg)
    except FitError as e:
        raise FitError(f"{cfg.pi_model.value}/{cfg.replicate_mode.value}: {e}") from e


def select_model(
    cm: CountMatrix,
    meta: CohortMetadata,
    base_cfg: FitCfg,
    replicate_modes: Sequence[ReplicateMode] = (ReplicateMode.INDEPENDENT, ReplicateMode.IDENTICAL),
    pi_models: Sequence[PiModel] = (PiModel.SHARED, PiModel.PER_VIRUS, PiModel.PER_ANIMAL),
    rank_by: RankBy = RankBy.PAPER,
    threads: Optional[int] = 1,
) -> SelectionResult:
    """
    Fit every (replicate mode, pi model) combination and rank the models of each mode by BIC

    Args:
        threads: worker processes, None for all cores. Each fit is serial, so the result
            does not depend on it
    """
    jobs = [
        base_cfg.replace(pi_model=PiModel(pi_model), replicate_mode=ReplicateMode(mode))
        for mode in replicate_modes
        for pi_model in pi_models
    ]
    threads = mp.cpu_count() if threads is None else max(1, int(threads))
    args = [(cm, meta, cfg) for cfg in jobs]

    if threads == 1 or len(jobs) == 1:
        results = [_fit_one(it) for it in tqdm(args, desc="models")]
    else:
        ctx = mp.get_context("spawn")
        with ctx.Pool(processes=min(threads, len(jobs))) as pool:
            results = list(tqdm(pool.imap(_fit_one, args), total=len(args), desc="models"))

    scores: Dict[ReplicateMode, List[ModelScore]] = {}
    best: Dict[ReplicateMode, FitResult] = {}
    for mode in replicate_modes:
        mode = ReplicateMode(mode)
        mode_results = [r for r in results if r.cfg.replicate_mode == mode]
        ranked = rank_scores([score_fit(r, cm, meta) for r in mode_results], rank_by)
        scores[mode] = ranked
        winner = ranked[0]
        best[mode] = next(r for r in mode_results if r.cfg.pi_model == winner.pi_model)
        logger.info(
            f"{mode.value}: best model {winner.pi_model.value} "
            f"(bic_{RankBy(rank_by).value} {winner.bic(rank_by):.2f}, d={winner.d})"
        )
    return SelectionResult(scores=scores, best=best, rank_by=RankBy(rank_by))


def scores_table(selection: SelectionResult) -> pd.DataFrame:
    """One row per model and replicate mode, rank 1 is the best model of its mode"""
    rows = []
    for mode, ranked in selection.scores.items():
        for rank, s in enumerate(ranked, start=1):
            rows.append(
                {
                    "replicate_mode": mode.value,
                    "pi_model": s.pi_model.value,
                    "d": s.d,
                    "loglik": s.loglik,
                    "bic_paper": s.bic_paper,
                    "bic_standard": s.bic_standard,
                    "rank": rank,
                }
            )
    return pd.DataFrame(rows)
