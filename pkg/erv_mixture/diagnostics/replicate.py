"""
Replicate validation: how often do the columns of one physical animal agree on a virus call,
as a function of how many calls are positive overall.

A case is one (virus, replicated animal) pair. A case is consistent under a classification when
all replicate columns receive the same call.
"""
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger

from erv_mixture.config import ReplicateMode, SweepCfg
from erv_mixture.dataset import CohortMetadata, CountMatrix
from erv_mixture.diagnostics.classify import posterior_classify, threshold_classify
from erv_mixture.fitter import PosteriorMatrix
from erv_mixture.utils.errors import ValidationError


class MethodTag(str, Enum):
    COUNT_THRESHOLD = "count-threshold"
    POSTERIOR_CUTOFF = "posterior-cutoff"


@dataclass(frozen=True, eq=False)
class ConsistencyCurve:
    """
    Parameters
    ----------
    method_tag : MethodTag
    sweep : np.ndarray
        thresholds or cutoffs, one per point
    points : np.ndarray
        k×2 (overall positive proportion, consistency proportion) over the sensitive cases
    sensitive_case_count : int
    """

    method_tag: MethodTag
    sweep: np.ndarray
    points: np.ndarray
    sensitive_case_count: int


@dataclass(frozen=True)
class CasePartition:
    """Number of cases consistent at every threshold, at none and at some"""

    always_consistent: int
    always_inconsistent: int
    sensitive: int

    @property
    def total(self) -> int:
        return self.always_consistent + self.always_inconsistent + self.sensitive

    def summary(self) -> str:
        return (
            f"cases: {self.total}\n"
            f"always consistent: {self.always_consistent}\n"
            f"always inconsistent: {self.always_inconsistent}\n"
            f"sensitive: {self.sensitive}\n"
        )


@dataclass(frozen=True, eq=False)
class ReplicateValidation:
    """
    ``gaps[t]`` is the cutoff-curve consistency interpolated at the overall positive proportion
    of threshold point t, minus that point's consistency
    """

    threshold_curve: ConsistencyCurve
    cutoff_curve: ConsistencyCurve
    partition: CasePartition
    gaps: np.ndarray


def replicated_groups(meta: CohortMetadata) -> List[Tuple[int, ...]]:
    return [group for group in meta.replicate_groups if len(group) > 1]


def _consistent(y: np.ndarray, groups: List[Tuple[int, ...]]) -> np.ndarray:
    """m×(replicated groups) True where all members of a group share the call"""
    out = np.empty((y.shape[0], len(groups)), dtype=bool)
    for g, group in enumerate(groups):
        block = y[:, list(group)]
        out[:, g] = np.all(block == block[:, :1], axis=1)
    return out


def _curve_point(
    y: np.ndarray, groups: List[Tuple[int, ...]], sensitive: np.ndarray
) -> Tuple[float, float]:
    positive = []
    for g, group in enumerate(groups):
        positive.append(y[sensitive[:, g]][:, list(group)].ravel())
    positive = np.concatenate(positive)
    consistency = _consistent(y, groups)[sensitive]
    return float(positive.mean()), float(consistency.mean())


def replicate_consistency(
    cm: CountMatrix,
    meta: CohortMetadata,
    zhat: PosteriorMatrix,
    sweep: Optional[SweepCfg] = None,
) -> ReplicateValidation:
    """
    Compare count-threshold and posterior-cutoff calls on the sensitive cases

    ``zhat`` must come from a fit that ignored the replicate structure, otherwise replicate
    columns agree by construction.
    """
    sweep = sweep or SweepCfg()
    if zhat.replicate_mode == ReplicateMode.IDENTICAL and meta.has_replicates:
        raise ValidationError(
            "posterior was fitted with identical replicates, refit with --replicates independent"
        )
    groups = replicated_groups(meta)
    if not groups:
        raise ValidationError("metadata has no replicate group with two or more columns")
    if zhat.z.shape != (cm.m, cm.n):
        raise ValidationError(f"posterior shape {zhat.z.shape} does not match counts {cm.m}×{cm.n}")

    threshold_calls = [threshold_classify(cm, t) for t in sweep.thresholds]
    per_threshold = np.stack([_consistent(y, groups) for y in threshold_calls])
    always_consistent = per_threshold.all(axis=0)
    always_inconsistent = (~per_threshold).all(axis=0)
    sensitive = ~(always_consistent | always_inconsistent)
    partition = CasePartition(
        always_consistent=int(always_consistent.sum()),
        always_inconsistent=int(always_inconsistent.sum()),
        sensitive=int(sensitive.sum()),
    )
    logger.info(
        f"{partition.total} cases: {partition.always_consistent} always consistent, "
        f"{partition.always_inconsistent} always inconsistent, {partition.sensitive} sensitive"
    )

    if partition.sensitive == 0:
        logger.warning("No sensitive case, consistency curves are empty")
        empty = np.empty((0, 2))
        return ReplicateValidation(
            ConsistencyCurve(MethodTag.COUNT_THRESHOLD, np.array(sweep.thresholds), empty, 0),
            ConsistencyCurve(MethodTag.POSTERIOR_CUTOFF, np.array(sweep.cutoffs), empty, 0),
            partition,
            np.empty(0),
        )

    threshold_points = np.array([_curve_point(y, groups, sensitive) for y in threshold_calls])
    cutoff_points = np.array(
        [_curve_point(posterior_classify(zhat, c), groups, sensitive) for c in sweep.cutoffs]
    )

    # np.interp needs increasing abscissae
    order = np.lexsort((cutoff_points[:, 1], cutoff_points[:, 0]))
    matched = np.interp(
        threshold_points[:, 0], cutoff_points[order, 0], cutoff_points[order, 1]
    )
    gaps = matched - threshold_points[:, 1]

    return ReplicateValidation(
        threshold_curve=ConsistencyCurve(
            MethodTag.COUNT_THRESHOLD, np.array(sweep.thresholds), threshold_points, partition.sensitive
        ),
        cutoff_curve=ConsistencyCurve(
            MethodTag.POSTERIOR_CUTOFF, np.array(sweep.cutoffs), cutoff_points, partition.sensitive
        ),
        partition=partition,
        gaps=gaps,
    )
