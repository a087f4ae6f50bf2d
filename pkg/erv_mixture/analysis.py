"""
Summaries of a fit: estimate tables, posterior histogram, PCA of the posterior columns and
their similarity alignment to geography.
"""
import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from sklearn.decomposition import PCA

from erv_mixture.dataset import CohortMetadata, CountMatrix
from erv_mixture.fitter import FitResult, PosteriorMatrix
from erv_mixture.utils.errors import ValidationError

# posterior histogram covers [LOW, HIGH], the rest is reported as two fractions
POSTERIOR_LOW = 0.01
POSTERIOR_HIGH = 0.99
POSTERIOR_BINS = 49


@dataclass(frozen=True, eq=False)
class FitSummary:
    """
    Parameters
    ----------
    viruses : pd.DataFrame
        virus_id, mean_nonzero, log_alpha
    animals : pd.DataFrame
        column_id, experiment_id, mean_nonzero, log_r
    posterior_by_count : pd.DataFrame
        experiment_id, count, cells, mean_z over the cells with that nonzero count
    posterior_histogram : pd.DataFrame
        bin_left, bin_right, cells of the posteriors in [0.01, 0.99]
    fraction_low : float
        fraction of posteriors below 0.01
    fraction_high : float
        fraction of posteriors above 0.99
    """

    viruses: pd.DataFrame
    animals: pd.DataFrame
    posterior_by_count: pd.DataFrame
    posterior_histogram: pd.DataFrame
    fraction_low: float
    fraction_high: float


@dataclass(frozen=True, eq=False)
class ProcrustesFit:
    """aligned = scale * points @ rotation + translation"""

    aligned: np.ndarray
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    residual: float


@dataclass(frozen=True, eq=False)
class PcaResult:
    """
    Parameters
    ----------
    scores : np.ndarray
        n'×2 scores of the scored columns
    explained_variance : np.ndarray
        variance along the two directions, descending
    components : np.ndarray
        2×m unit directions in virus space
    columns : tuple[int, ...]
        scored column indices
    column_ids : tuple[str, ...]
    population : tuple[str, ...]
        population label of each scored column, if known
    alignment : ProcrustesFit
        scores aligned to the columns' coordinates, if computed
    """

    scores: np.ndarray
    explained_variance: np.ndarray
    components: np.ndarray
    columns: Tuple[int, ...]
    column_ids: Tuple[str, ...] = ()
    population: Optional[Tuple[str, ...]] = None
    alignment: Optional[ProcrustesFit] = None

    @property
    def aligned_scores(self) -> Optional[np.ndarray]:
        return None if self.alignment is None else self.alignment.aligned

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(
            {
                "column_id": list(self.column_ids) or list(self.columns),
                "pc1": self.scores[:, 0],
                "pc2": self.scores[:, 1],
            }
        )
        if self.population is not None:
            df["population"] = list(self.population)
        if self.alignment is not None:
            df["aligned_x"] = self.alignment.aligned[:, 0]
            df["aligned_y"] = self.alignment.aligned[:, 1]
        return df


def _mean_nonzero(x: np.ndarray, axis: int) -> np.ndarray:
    nonzero = (x > 0).sum(axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(nonzero > 0, x.sum(axis=axis) / nonzero, np.nan)


def fit_summary_tables(
    cm: CountMatrix, result: FitResult, meta: Optional[CohortMetadata] = None
) -> FitSummary:
    x = cm.counts
    z = result.posterior.z
    if z.shape != x.shape:
        raise ValidationError(f"posterior shape {z.shape} does not match counts {x.shape}")

    viruses = pd.DataFrame(
        {
            "virus_id": list(cm.virus_ids),
            "mean_nonzero": _mean_nonzero(x, axis=1),
            "log_alpha": np.log(result.params.alpha),
        }
    )

    if meta is not None:
        experiment = np.array([meta.experiment_labels[k] for k in meta.experiment_of_column])
    else:
        experiment = np.full(cm.n, "all")
    animals = pd.DataFrame(
        {
            "column_id": list(cm.animal_column_ids),
            "experiment_id": experiment,
            "mean_nonzero": _mean_nonzero(x, axis=0),
            "log_r": np.log(result.params.r),
        }
    )

    nonzero = x > 0
    cells = pd.DataFrame(
        {
            "experiment_id": np.broadcast_to(experiment[None, :], x.shape)[nonzero],
            "count": x[nonzero],
            "z": z[nonzero],
        }
    )
    posterior_by_count = (
        cells.groupby(["experiment_id", "count"], sort=True)["z"]
        .agg(cells="size", mean_z="mean")
        .reset_index()
    )

    edges = np.linspace(POSTERIOR_LOW, POSTERIOR_HIGH, POSTERIOR_BINS + 1)
    inside = (z >= POSTERIOR_LOW) & (z <= POSTERIOR_HIGH)
    hist, _ = np.histogram(z[inside], bins=edges)
    posterior_histogram = pd.DataFrame(
        {"bin_left": edges[:-1], "bin_right": edges[1:], "cells": hist}
    )

    return FitSummary(
        viruses=viruses,
        animals=animals,
        posterior_by_count=posterior_by_count,
        posterior_histogram=posterior_histogram,
        fraction_low=float(np.mean(z < POSTERIOR_LOW)),
        fraction_high=float(np.mean(z > POSTERIOR_HIGH)),
    )


def pca_scores(
    zhat: PosteriorMatrix,
    columns: Optional[Sequence[int]] = None,
    column_ids: Optional[Sequence[str]] = None,
    population: Optional[Sequence[str]] = None,
) -> PcaResult:
    """
    Covariance PCA of the posterior columns, each animal is one observation over m viruses

    Args:
        columns: column indices to score, all columns if None. Pass the unique animals to drop replicates
        column_ids: ids of all n columns
        population: population labels of all n columns
    """
    n = zhat.z.shape[1]
    columns = tuple(range(n)) if columns is None else tuple(int(j) for j in columns)
    if len(columns) < 3:
        raise ValidationError(f"PCA needs at least 3 columns, got {len(columns)}")

    data = zhat.z[:, list(columns)].T
    centered = data - data.mean(axis=0)
    if not np.any(np.abs(centered) > 1e-12):
        raise ValidationError("posterior columns have zero variance")

    pca = PCA(n_components=2, svd_solver="full")
    scores = pca.fit_transform(data)
    components = pca.components_.copy()

    # largest-magnitude entry of each direction positive
    for k in range(2):
        if components[k, np.argmax(np.abs(components[k]))] < 0:
            components[k] *= -1
            scores[:, k] *= -1

    logger.info(
        f"PCA on {len(columns)} columns, explained variance ratio {pca.explained_variance_ratio_}"
    )
    return PcaResult(
        scores=scores,
        explained_variance=pca.explained_variance_.copy(),
        components=components,
        columns=columns,
        column_ids=tuple(column_ids[j] for j in columns) if column_ids is not None else (),
        population=tuple(population[j] for j in columns) if population is not None else None,
    )


def align_to_geography(scores: np.ndarray, geo: np.ndarray) -> ProcrustesFit:
    """
    Similarity transform (rotation or reflection, isotropic scale, translation) of ``scores``
    minimizing the summed squared distance to ``geo``
    """
    scores = np.asarray(scores, dtype=float)
    geo = np.asarray(geo, dtype=float)
    if geo.shape != scores.shape or scores.ndim != 2 or scores.shape[1] != 2:
        raise ValidationError(f"scores {scores.shape} and geo {geo.shape} must both be n×2")
    if not np.all(np.isfinite(geo)):
        raise ValidationError("geographic coordinates missing for some columns")

    mean_x = geo.mean(axis=0)
    mean_y = scores.mean(axis=0)
    xc = geo - mean_x
    yc = scores - mean_y
    norm_y = float(np.sum(yc ** 2))
    if norm_y == 0:
        raise ValidationError("scores are all identical")

    u, s, vt = np.linalg.svd(yc.T @ xc)
    rotation = u @ vt
    scale = float(s.sum() / norm_y)
    translation = mean_x - scale * mean_y @ rotation
    aligned = scale * scores @ rotation + translation
    residual = float(np.sum((aligned - geo) ** 2))
    return ProcrustesFit(aligned, scale, rotation, translation, residual)


def align_pca(result: PcaResult, meta: CohortMetadata) -> PcaResult:
    """Attach the alignment of the scores to the scored columns' coordinates"""
    if not meta.has_complete_geo(result.columns):
        raise ValidationError("geographic coordinates missing for some scored columns")
    fit = align_to_geography(result.scores, meta.geo[list(result.columns)])
    logger.info(f"Procrustes residual {fit.residual:.4g}, scale {fit.scale:.4g}")
    return dataclasses.replace(result, alignment=fit)
