"""
Row/column count models fitted on the large counts only, used to show that the counts are
overdispersed relative to the Poisson.

Poisson: x_ij ~ Poisson(a_i b_j). Negative binomial: x_ij ~ NB(r_j, alpha_i).
Only cells with x_ij > cutoff enter the fits, rows and columns without such cells are dropped.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Tuple

import numpy as np
from loguru import logger
from scipy.special import gammaln
from scipy.stats import norm

from erv_mixture.dataset import CountMatrix
from erv_mixture.distributions import nb_log_pmf_unchecked, poisson_log_pmf
from erv_mixture.utils.errors import ValidationError
from erv_mixture.utils.math_utils import maximize_on_log_scale


class ModelTag(str, Enum):
    POISSON_ROWCOL = "poisson-rowcol"
    NB_ROWCOL = "nb-rowcol"


@dataclass(frozen=True, eq=False)
class RowColFit:
    """
    Parameters
    ----------
    model_tag : ModelTag
    row_params : np.ndarray
        a_i (Poisson) or alpha_i (NB) of the kept rows
    col_params : np.ndarray
        b_j (Poisson) or r_j (NB) of the kept columns
    rows : np.ndarray
        indices of the kept rows in the input matrix
    cols : np.ndarray
        indices of the kept columns in the input matrix
    mask : np.ndarray
        qualifying cells of the kept rows × kept columns
    cutoff : int
    input_shape : tuple[int, int]
        (m, n) of the input matrix
    loglik_trace : list[float]
        log-likelihood over the qualifying cells after every sweep
    """

    model_tag: ModelTag
    row_params: np.ndarray
    col_params: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    mask: np.ndarray
    cutoff: int
    input_shape: Tuple[int, int]
    loglik_trace: List[float] = field(default_factory=list)

    @property
    def dropped_rows(self) -> int:
        return self.input_shape[0] - len(self.rows)

    @property
    def dropped_cols(self) -> int:
        return self.input_shape[1] - len(self.cols)

    def moments(self) -> Tuple[np.ndarray, np.ndarray]:
        """Fitted (mean, variance) of every kept cell"""
        if self.model_tag == ModelTag.POISSON_ROWCOL:
            mean = self.row_params[:, None] * self.col_params[None, :]
            return mean, mean
        alpha = self.row_params[:, None]
        r = self.col_params[None, :]
        mean = r * (1.0 - alpha) / alpha
        return mean, mean / alpha

    def fitted_params(self) -> Dict[str, List[float]]:
        if self.model_tag == ModelTag.POISSON_ROWCOL:
            return {"a": self.row_params.tolist(), "b": self.col_params.tolist()}
        return {"alpha": self.row_params.tolist(), "r": self.col_params.tolist()}


@dataclass(frozen=True, eq=False)
class ResidualReport:
    """
    Pearson residuals of the qualifying cells, in row-major order of the kept cells

    ``qq_pairs`` is N×2: (standard normal quantile at (k - 0.5) / N, k-th smallest residual)
    """

    model_tag: ModelTag
    residuals: np.ndarray
    qq_pairs: np.ndarray
    fitted_params: Dict[str, List[float]]


@dataclass(frozen=True)
class DispersionSummary:
    count: int
    mean: float
    variance: float


def _qualifying(cm: CountMatrix, cutoff: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    mask = cm.counts > cutoff
    if not mask.any():
        raise ValidationError(f"no cell with count > {cutoff}")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    dropped = (cm.m - len(rows), cm.n - len(cols))
    if dropped[0] or dropped[1]:
        logger.info(
            f"Drop {dropped[0]} rows and {dropped[1]} columns without counts > {cutoff}"
        )
    return rows, cols, mask[np.ix_(rows, cols)]


def fit_poisson_rowcol(
    cm: CountMatrix, cutoff: int = 9, rtol: float = 1e-10, max_iters: int = 10000
) -> RowColFit:
    """
    Alternate a_i = sum'_j x_ij / sum'_j b_j and b_j = sum'_i x_ij / sum'_i a_i over the
    qualifying cells, with sum_j b_j = n' fixing the scale
    """
    rows, cols, mask = _qualifying(cm, cutoff)
    x = np.where(mask, cm.counts[np.ix_(rows, cols)], 0).astype(float)
    w = mask.astype(float)

    b = np.ones(len(cols))
    a = x.sum(axis=1) / (w @ b)
    trace = []
    for _ in range(max_iters):
        a_old, b_old = a, b
        b = x.sum(axis=0) / (a @ w)
        scale = len(cols) / b.sum()
        b = b * scale
        a = x.sum(axis=1) / (w @ b)
        trace.append(float(poisson_log_pmf(x, np.outer(a, b))[mask].sum()))
        change = max(
            np.max(np.abs(a - a_old) / a_old), np.max(np.abs(b - b_old) / b_old)
        )
        if change < rtol:
            break
    else:
        logger.warning(f"Poisson row/column fit not converged after {max_iters} iterations")

    return RowColFit(
        ModelTag.POISSON_ROWCOL, a, b, rows, cols, mask, cutoff, (cm.m, cm.n), trace
    )


def _nb_alpha(x: np.ndarray, w: np.ndarray, r: np.ndarray) -> np.ndarray:
    return (w @ r) / ((x + r[None, :]) * w).sum(axis=1)


def _nb_loglik(x: np.ndarray, mask: np.ndarray, r: np.ndarray, alpha: np.ndarray) -> float:
    return float(nb_log_pmf_unchecked(x, r[None, :], alpha[:, None])[mask].sum())


def _nb_rescale(
    x: np.ndarray, w: np.ndarray, mask: np.ndarray, r: np.ndarray, r_bounds: Tuple[float, float]
) -> np.ndarray:
    """
    Best common scale of all r_j, alpha profiled out. The fitted means do not change along
    this direction.
    """
    lower = r_bounds[0] / r.min()
    upper = r_bounds[1] / r.max()
    if not lower < 1.0 < upper:
        return r

    def objective(s: float) -> float:
        scaled = r * s
        return _nb_loglik(x, mask, scaled, _nb_alpha(x, w, scaled))

    s, value, _ = maximize_on_log_scale(objective, lower, upper)
    if value <= objective(1.0):
        return r
    return r * s


def fit_nb_rowcol(
    cm: CountMatrix,
    cutoff: int = 9,
    rtol: float = 1e-8,
    max_sweeps: int = 500,
    r_bounds: Tuple[float, float] = (1e-6, 1e7),
    init_r: float = 10.0,
) -> RowColFit:
    """
    Coordinate ascent over the qualifying cells: each sweep maximizes every r_j
    numerically, rescales all r_j jointly, then sets every alpha_i to its closed form
    sum' r_j / sum' (x_ij + r_j)
    """
    rows, cols, mask = _qualifying(cm, cutoff)
    x = np.where(mask, cm.counts[np.ix_(rows, cols)], 0).astype(float)
    w = mask.astype(float)

    r = np.full(len(cols), float(init_r))
    alpha = _nb_alpha(x, w, r)
    loglik = _nb_loglik(x, mask, r, alpha)
    trace = [loglik]
    for _ in range(max_sweeps):
        log_alpha = np.log(alpha)
        for j in range(len(cols)):
            xj = x[mask[:, j], j]
            slope = float(log_alpha[mask[:, j]].sum())

            def objective(rj: float, xj=xj, slope=slope) -> float:
                return float(np.sum(gammaln(xj + rj) - gammaln(rj))) + rj * slope

            best, value, at_boundary = maximize_on_log_scale(objective, *r_bounds)
            if objective(r[j]) > value:
                continue
            r[j] = best
            if at_boundary:
                logger.debug(f"NB row/column fit: r of column {cols[j]} at bracket end")
        r = _nb_rescale(x, w, mask, r, r_bounds)
        alpha = _nb_alpha(x, w, r)
        new_loglik = _nb_loglik(x, mask, r, alpha)
        trace.append(new_loglik)
        if abs(new_loglik - loglik) <= rtol * abs(loglik):
            break
        loglik = new_loglik
    else:
        logger.warning(f"NB row/column fit not converged after {max_sweeps} sweeps")

    return RowColFit(
        ModelTag.NB_ROWCOL, alpha, r, rows, cols, mask, cutoff, (cm.m, cm.n), trace
    )


def pearson_residuals(cm: CountMatrix, fit: RowColFit) -> ResidualReport:
    x = cm.counts[np.ix_(fit.rows, fit.cols)].astype(float)
    mean, variance = fit.moments()
    residuals = ((x - mean) / np.sqrt(variance))[fit.mask]

    n = len(residuals)
    theoretical = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    qq_pairs = np.column_stack([theoretical, np.sort(residuals)])
    return ResidualReport(fit.model_tag, residuals, qq_pairs, fit.fitted_params())


def dispersion_summary(report: ResidualReport) -> DispersionSummary:
    ddof = 1 if len(report.residuals) > 1 else 0
    return DispersionSummary(
        count=len(report.residuals),
        mean=float(np.mean(report.residuals)),
        variance=float(np.var(report.residuals, ddof=ddof)),
    )
