"""
ECM fitting of the two-component negative binomial mixture.

Carrier component (virus i present in animal column j)::

    f_ij(x) = NB(x; r_j, alpha_i)

Background component::

    g_ij(x) = NB(x; r_j, p_k(j))

A replicate group S contributes one mixture factor per virus,
``pi * prod_{j in S} f_ij + (1 - pi) * prod_{j in S} g_ij``. Everything is computed in log space.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from tqdm import tqdm

from erv_mixture.config import FitCfg, PiModel, ReplicateMode
from erv_mixture.dataset import CohortMetadata, CountMatrix
from erv_mixture.distributions import nb_log_pmf_unchecked
from erv_mixture.prior import get_prior
from erv_mixture.utils.errors import FitError, ValidationError
from erv_mixture.utils.math_utils import log_mix, maximize_on_log_scale
from scipy.special import gammaln


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """
    Parameters
    ----------
    pi_model : PiModel
    pi : np.ndarray
        0-d (shared), length m (per-virus) or length n (per-animal, constant within replicate groups)
    r : np.ndarray
        length n, r_j > 0
    alpha : np.ndarray
        length m, carrier success probabilities in (0, 1)
    p : np.ndarray
        length K, background success probabilities in (0, 1)
    replicate_mode : ReplicateMode
        Whether replicate groups share one carrier status
    """

    pi_model: PiModel
    pi: np.ndarray
    r: np.ndarray
    alpha: np.ndarray
    p: np.ndarray
    replicate_mode: ReplicateMode = ReplicateMode.IDENTICAL

    def validate(self, cm: CountMatrix, meta: CohortMetadata):
        expected_pi = {
            PiModel.SHARED: (),
            PiModel.PER_VIRUS: (cm.m,),
            PiModel.PER_ANIMAL: (cm.n,),
        }[self.pi_model]
        if np.shape(self.pi) != expected_pi:
            raise ValidationError(
                f"{self.pi_model.value} pi must have shape {expected_pi}, got {np.shape(self.pi)}"
            )
        if np.shape(self.r) != (cm.n,) or np.shape(self.alpha) != (cm.m,):
            raise ValidationError("r must have length n and alpha length m")
        if np.shape(self.p) != (meta.K,):
            raise ValidationError(f"p must have length K={meta.K}")
        if np.any(~(self.r > 0)):
            raise ValidationError("r must be positive")
        for name, values in (("alpha", self.alpha), ("p", self.p)):
            if np.any(~((values > 0) & (values < 1))):
                raise ValidationError(f"{name} must lie in (0, 1)")
        if np.any(~((self.pi >= 0) & (self.pi <= 1))):
            raise ValidationError("pi must lie in [0, 1]")
        if self.pi_model == PiModel.PER_ANIMAL and self.replicate_mode == ReplicateMode.IDENTICAL:
            for group in meta.replicate_groups:
                if np.ptp(self.pi[list(group)]) != 0:
                    raise ValidationError(
                        f"pi differs within replicate group {group}"
                    )

    def to_dict(self) -> Dict:
        return {
            "pi_model": self.pi_model.value,
            "replicate_mode": self.replicate_mode.value,
            "pi": np.asarray(self.pi).tolist(),
            "r": self.r.tolist(),
            "alpha": self.alpha.tolist(),
            "p": self.p.tolist(),
        }


@dataclass(frozen=True, eq=False)
class PosteriorMatrix:
    """
    m×n posterior carrier probabilities Z_ij.

    ``vanished_cells`` counts virus/group cells whose two component masses both underflowed,
    their posterior fell back to the prior.
    """

    z: np.ndarray
    replicate_mode: ReplicateMode = ReplicateMode.IDENTICAL
    vanished_cells: int = 0


@dataclass(frozen=True)
class AlphaUpdate:
    smoothed: np.ndarray
    exact: np.ndarray
    clamps: int = 0


@dataclass
class FitCounters:
    alpha_clamps: int = 0
    p_clamps: int = 0
    r_boundary_hits: int = 0
    vanished_cells: int = 0
    ascent_guard_activations: int = 0

    def add(self, other: "FitCounters"):
        self.alpha_clamps += other.alpha_clamps
        self.p_clamps += other.p_clamps
        self.r_boundary_hits += other.r_boundary_hits
        self.vanished_cells += other.vanished_cells


@dataclass(frozen=True, eq=False)
class FitResult:
    params: MixtureParams
    posterior: PosteriorMatrix
    loglik_trace: Tuple[float, ...]
    iterations: int
    converged: bool
    constraint_ok: bool
    ascent_guard_activations: int
    counters: FitCounters = field(default_factory=FitCounters)
    cfg: Optional[FitCfg] = None
    input_digest: str = ""

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    def report(self) -> Dict:
        return {
            "loglik": self.loglik,
            "loglik_trace": list(self.loglik_trace),
            "iterations": self.iterations,
            "converged": self.converged,
            "constraint_ok": self.constraint_ok,
            "max_alpha": float(self.params.alpha.max()),
            "min_p": float(self.params.p.min()),
            "alpha_clamps": self.counters.alpha_clamps,
            "p_clamps": self.counters.p_clamps,
            "r_boundary_hits": self.counters.r_boundary_hits,
            "vanished_cells": self.counters.vanished_cells,
            "ascent_guard_activations": self.ascent_guard_activations,
            "config": self.cfg.to_dict() if self.cfg is not None else None,
            "input_digest": self.input_digest,
        }


def effective_metadata(meta: CohortMetadata, replicate_mode: ReplicateMode) -> CohortMetadata:
    if ReplicateMode(replicate_mode) == ReplicateMode.INDEPENDENT:
        return meta.as_independent()
    return meta


def group_sum(a: np.ndarray, meta: CohortMetadata) -> np.ndarray:
    """Sum the columns of an m×n array within replicate groups, m×G"""
    if not meta.has_replicates:
        return a[:, list(meta.unique_set)]
    order = [j for group in meta.replicate_groups for j in group]
    starts = np.cumsum([0] + [len(group) for group in meta.replicate_groups[:-1]])
    return np.add.reduceat(a[:, order], starts, axis=1)


def component_log_pmfs(
    cm: CountMatrix, meta: CohortMetadata, params: MixtureParams
) -> Tuple[np.ndarray, np.ndarray]:
    """m×n log f_ij and log g_ij at the observed counts"""
    x = cm.counts.astype(float)
    r = params.r[None, :]
    log_f = nb_log_pmf_unchecked(x, r, params.alpha[:, None])
    log_g = nb_log_pmf_unchecked(x, r, params.p[meta.experiment_of_column][None, :])
    return log_f, log_g


def _group_log_terms(
    cm: CountMatrix, meta: CohortMetadata, params: MixtureParams
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(log pi, log prod f, log prod g) per virus and replicate group, each m×G"""
    log_f, log_g = component_log_pmfs(cm, meta, params)
    pi = get_prior(params.pi_model).group_grid(params.pi, cm.m, meta)
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    return log_pi, group_sum(log_f, meta), group_sum(log_g, meta)


def init_state(
    cm: CountMatrix, meta: CohortMetadata, cfg: FitCfg
) -> Tuple[MixtureParams, PosteriorMatrix]:
    """
    Z_ij = min(1, x_ij / c), r_j = r0, then alpha, p and pi from one M-step on that Z.

    Under the identical treatment the initial Z of a replicate group is the mean over its columns.
    """
    meta_eff = effective_metadata(meta, cfg.replicate_mode)
    _check_experiments(meta_eff)
    z = np.minimum(1.0, cm.counts / cfg.init_c)
    if meta_eff.has_replicates:
        sizes = np.array([len(group) for group in meta_eff.replicate_groups], dtype=float)
        z = (group_sum(z, meta_eff) / sizes[None, :])[:, meta_eff.group_of_column]

    r = np.full(cm.n, float(cfg.init_r0))
    alpha = cm_step_alpha(cm, z, r, cfg.alpha_smoothing, cfg.clamp_eps).smoothed
    p, _ = cm_step_p(cm, z, r, meta_eff, cfg.clamp_eps)
    pi = cm_step_pi(z, meta, cfg)
    params = MixtureParams(
        pi_model=cfg.pi_model,
        pi=pi,
        r=r,
        alpha=alpha,
        p=p,
        replicate_mode=cfg.replicate_mode,
    )
    return params, PosteriorMatrix(z, cfg.replicate_mode)


def e_step(cm: CountMatrix, meta: CohortMetadata, params: MixtureParams) -> PosteriorMatrix:
    """
    Posterior carrier probability of every virus/replicate-group pair, broadcast to the group's columns
    """
    meta_eff = effective_metadata(meta, params.replicate_mode)
    log_pi, log_f, log_g = _group_log_terms(cm, meta_eff, params)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_num = log_pi + log_f
        log_den = log_mix(log_pi, log_f, log_g)
        zg = np.exp(log_num - log_den)

    # both components vanished: fall back to the prior
    vanished = ~np.isfinite(log_den)
    n_vanished = int(vanished.sum())
    if n_vanished:
        pi = np.exp(log_pi)
        zg[vanished] = pi[vanished]
        logger.warning(f"{n_vanished} cells with vanishing component masses, posterior set to prior")

    zg = np.clip(zg, 0.0, 1.0)
    return PosteriorMatrix(
        z=zg[:, meta_eff.group_of_column],
        replicate_mode=params.replicate_mode,
        vanished_cells=n_vanished,
    )


def cm_step_alpha(
    cm: CountMatrix,
    z: np.ndarray,
    r: np.ndarray,
    smoothing: Tuple[float, float] = (0.05, 0.1),
    eps: float = 1e-12,
) -> AlphaUpdate:
    """
    alpha_i = (sum_j Z_ij r_j + a) / (sum_j Z_ij (x_ij + r_j) + b), (a, b) = smoothing.

    The exact update uses a = b = 0, viruses with no carrier weight keep the smoothed value there.
    """
    a, b = smoothing
    num = (z * r[None, :]).sum(axis=1)
    den = (z * (cm.counts + r[None, :])).sum(axis=1)
    smoothed = (num + a) / (den + b)

    exact = smoothed.copy()
    ok = den > 0
    exact[ok] = num[ok] / den[ok]

    smoothed, clamps_s = _clamp(smoothed, eps)
    exact, _ = _clamp(exact, eps)
    return AlphaUpdate(smoothed=smoothed, exact=exact, clamps=clamps_s)


def cm_step_p(
    cm: CountMatrix,
    z: np.ndarray,
    r: np.ndarray,
    meta: CohortMetadata,
    eps: float = 1e-12,
) -> Tuple[np.ndarray, int]:
    """
    p_k = sum (1 - Z_ij) r_j / sum (1 - Z_ij)(x_ij + r_j), over all viruses and the columns of experiment k

    Returns:
        (p, number of clamped experiments). An experiment without background weight gets 1 - eps.
    """
    w = 1.0 - z
    num_col = (w * r[None, :]).sum(axis=0)
    den_col = (w * (cm.counts + r[None, :])).sum(axis=0)
    num = np.bincount(meta.experiment_of_column, weights=num_col, minlength=meta.K)
    den = np.bincount(meta.experiment_of_column, weights=den_col, minlength=meta.K)

    p = np.full(meta.K, 1.0 - eps)
    ok = den > 0
    p[ok] = num[ok] / den[ok]
    p, clamps = _clamp(p, eps)
    clamps += int((~ok).sum())
    if clamps:
        logger.warning(f"p clamped for {clamps} experiment(s): {p}")
    return p, clamps


def r_objective(
    x: np.ndarray, z: np.ndarray, alpha: np.ndarray, p_k: float, r: float
) -> float:
    """
    Conditional objective of one column's r:
    sum_i log C(x_i + r - 1, x_i) + r * sum_i [Z_i log alpha_i + (1 - Z_i) log p_k]
    """
    slope = float(np.sum(z * np.log(alpha) + (1.0 - z) * np.log(p_k)))
    return _log_binom_sum(x, r) + r * slope


def _log_binom_sum(x: np.ndarray, r: float) -> float:
    # zero counts contribute log C(r - 1, 0) = 0
    x = x[x > 0]
    return float(np.sum(gammaln(x + r) - gammaln(r) - gammaln(x + 1.0)))


def cm_step_r(
    cm: CountMatrix,
    z: np.ndarray,
    alpha: np.ndarray,
    p: np.ndarray,
    meta: CohortMetadata,
    r_init: Optional[np.ndarray] = None,
    bounds: Tuple[float, float] = (1e-6, 1e7),
    xtol: float = 1e-8,
) -> Tuple[np.ndarray, int]:
    """
    Maximize each column's r objective over ``bounds``

    Args:
        r_init: incoming r, a column keeps it when the search does not improve on it

    Returns:
        (r, number of columns whose maximizer sits on a bracket end)
    """
    log_alpha = np.log(alpha)
    log_p = np.log(p)
    r_new = np.empty(cm.n)
    boundary_hits = 0
    for j in range(cm.n):
        x = cm.counts[:, j].astype(float)
        zj = z[:, j]
        slope = float(np.sum(zj * log_alpha + (1.0 - zj) * log_p[meta.experiment_of_column[j]]))

        def objective(r: float, x=x, slope=slope) -> float:
            return _log_binom_sum(x, r) + r * slope

        best, value, at_boundary = maximize_on_log_scale(objective, bounds[0], bounds[1], xtol)
        if r_init is not None and objective(r_init[j]) > value:
            best, at_boundary = r_init[j], False
        if at_boundary:
            boundary_hits += 1
            logger.debug(f"r of column {cm.animal_column_ids[j]} at bracket end {best:.3g}")
        r_new[j] = best
    return r_new, boundary_hits


def cm_step_pi(z: np.ndarray, meta: CohortMetadata, cfg: FitCfg) -> np.ndarray:
    """Average Z over unique animals (identical treatment) or all columns (independent)"""
    meta_eff = effective_metadata(meta, cfg.replicate_mode)
    zg = z[:, list(meta_eff.unique_set)]
    return get_prior(cfg.pi_model).update(zg, meta_eff)


def cell_log_likelihood(
    cm: CountMatrix, meta: CohortMetadata, params: MixtureParams
) -> np.ndarray:
    """m×G log mixture factor of every virus and replicate group"""
    meta_eff = effective_metadata(meta, params.replicate_mode)
    log_pi, log_f, log_g = _group_log_terms(cm, meta_eff, params)
    return log_mix(log_pi, log_f, log_g)


def observed_log_likelihood(
    cm: CountMatrix, meta: CohortMetadata, params: MixtureParams
) -> float:
    return float(cell_log_likelihood(cm, meta, params).sum())


def _checked_log_likelihood(
    cm: CountMatrix, meta: CohortMetadata, params: MixtureParams
) -> float:
    cell = cell_log_likelihood(cm, meta, params)
    if not np.all(np.isfinite(cell)):
        meta_eff = effective_metadata(meta, params.replicate_mode)
        i, g = np.argwhere(~np.isfinite(cell))[0]
        j = meta_eff.unique_set[g]
        raise FitError(
            f"non-finite log-likelihood at virus {cm.virus_ids[i]}, column {cm.animal_column_ids[j]} "
            f"(count {cm.counts[i, j]})"
        )
    return float(cell.sum())


def _clamp(values: np.ndarray, eps: float) -> Tuple[np.ndarray, int]:
    clamped = np.clip(values, eps, 1.0 - eps)
    return clamped, int(np.count_nonzero(clamped != values))


def _check_experiments(meta: CohortMetadata):
    sizes = np.bincount(meta.experiment_of_column, minlength=meta.K)
    if np.any(sizes == 0):
        raise ValidationError(f"experiments without columns: {np.flatnonzero(sizes == 0)}")


def _m_step(
    cm: CountMatrix,
    meta: CohortMetadata,
    z: np.ndarray,
    params: MixtureParams,
    loglik: float,
    cfg: FitCfg,
    exact_alpha: bool,
) -> Tuple[MixtureParams, FitCounters, bool]:
    """
    CM-steps alpha, p, r, pi in that order, each using the newest values of the others

    Returns:
        (params, counters, True if the smoothed alpha lowered the log-likelihood and the exact one was used)
    """
    meta_eff = effective_metadata(meta, cfg.replicate_mode)
    counters = FitCounters()

    update = cm_step_alpha(cm, z, params.r, cfg.alpha_smoothing, cfg.clamp_eps)
    alpha = update.exact if exact_alpha else update.smoothed
    counters.alpha_clamps += update.clamps
    swapped = False
    if not exact_alpha:
        trial = _replace(params, alpha=alpha)
        if observed_log_likelihood(cm, meta, trial) < loglik - cfg.loglik_slack:
            alpha = update.exact
            swapped = True

    p, counters.p_clamps = cm_step_p(cm, z, params.r, meta_eff, cfg.clamp_eps)
    r, counters.r_boundary_hits = cm_step_r(
        cm, z, alpha, p, meta_eff, params.r, cfg.r_bounds, cfg.r_xtol
    )
    pi = cm_step_pi(z, meta, cfg)
    return _replace(params, pi=pi, r=r, alpha=alpha, p=p), counters, swapped


def _replace(params: MixtureParams, **kwargs) -> MixtureParams:
    values = dict(
        pi_model=params.pi_model,
        pi=params.pi,
        r=params.r,
        alpha=params.alpha,
        p=params.p,
        replicate_mode=params.replicate_mode,
    )
    values.update(kwargs)
    return MixtureParams(**values)


def fit(cm: CountMatrix, meta: CohortMetadata, cfg: FitCfg) -> FitResult:
    """
    Alternate E-step and CM-steps until the summed absolute change of Z drops below ``cfg.tol``.

    If the smoothed alpha update lowers the observed log-likelihood, the iteration is redone
    with the exact alpha update.
    """
    if meta.n != cm.n:
        raise ValidationError(f"metadata describes {meta.n} columns, matrix has {cm.n}")

    params, posterior = init_state(cm, meta, cfg)
    loglik = _checked_log_likelihood(cm, meta, params)
    trace: List[float] = [loglik]
    counters = FitCounters()
    z_prev = posterior.z
    converged = False
    iterations = 0

    logger.info(
        f"Fit {cfg.pi_model.value}/{cfg.replicate_mode.value} on {cm.m}×{cm.n}, initial loglik {loglik:.4f}"
    )
    for it in range(1, cfg.max_iters + 1):
        posterior = e_step(cm, meta, params)
        counters.vanished_cells += posterior.vanished_cells
        change = float(np.abs(posterior.z - z_prev).sum())
        if change < cfg.tol:
            converged = True
            break

        new_params, step_counters, swapped = _m_step(
            cm, meta, posterior.z, params, loglik, cfg, exact_alpha=False
        )
        new_loglik = _checked_log_likelihood(cm, meta, new_params)
        if swapped or new_loglik < loglik - cfg.loglik_slack:
            counters.ascent_guard_activations += 1
            if not swapped:
                new_params, step_counters, _ = _m_step(
                    cm, meta, posterior.z, params, loglik, cfg, exact_alpha=True
                )
                new_loglik = _checked_log_likelihood(cm, meta, new_params)
            logger.debug(f"iteration {it}: ascent guard, exact alpha update used")
            if new_loglik < loglik - cfg.loglik_slack:
                logger.warning(
                    f"iteration {it}: log-likelihood decreased by {loglik - new_loglik:.3g}"
                )

        counters.add(step_counters)
        params, loglik = new_params, new_loglik
        trace.append(loglik)
        z_prev = posterior.z
        iterations = it
        logger.debug(f"iteration {it}: loglik {loglik:.6f}, |dZ| {change:.6f}")
    else:
        posterior = e_step(cm, meta, params)
        logger.warning(f"Not converged after {cfg.max_iters} iterations")

    constraint_ok = bool(params.alpha.max() < params.p.min())
    if not constraint_ok:
        logger.warning(
            f"max alpha {params.alpha.max():.4g} >= min p {params.p.min():.4g}: "
            f"carrier means are not all above background means"
        )
    logger.info(
        f"Finish fit after {iterations} iterations, loglik {loglik:.4f}, converged: {converged}"
    )
    return FitResult(
        params=params,
        posterior=posterior,
        loglik_trace=tuple(trace),
        iterations=iterations,
        converged=converged,
        constraint_ok=constraint_ok,
        ascent_guard_activations=counters.ascent_guard_activations,
        counters=counters,
        cfg=cfg,
        input_digest=cm.digest(),
    )


@dataclass(frozen=True)
class StartSweep:
    """
    Fits of one dataset from several starting values

    Parameters
    ----------
    starts : list[tuple[float, float]]
        (init_c, init_r0) of every fit
    logliks : list[float]
        Final log-likelihood of every fit
    max_z_diff : float
        Largest entrywise difference between any final posterior and the first one
    """

    starts: Tuple[Tuple[float, float], ...]
    logliks: Tuple[float, ...]
    max_z_diff: float


def fit_from_starts(
    cm: CountMatrix,
    meta: CohortMetadata,
    cfg: FitCfg,
    init_cs: Sequence[float],
    init_r0s: Sequence[float],
) -> StartSweep:
    starts = [(float(c), float(r0)) for c in init_cs for r0 in init_r0s]
    logliks = []
    reference = None
    max_diff = 0.0
    for c, r0 in tqdm(starts, desc="starting values"):
        result = fit(cm, meta, cfg.replace(init_c=c, init_r0=r0))
        logliks.append(result.loglik)
        if reference is None:
            reference = result.posterior.z
        else:
            max_diff = max(max_diff, float(np.abs(result.posterior.z - reference).max()))
    logger.info(f"{len(starts)} starting values, max |dZ| between solutions: {max_diff:.4g}")
    return StartSweep(tuple(starts), tuple(logliks), max_diff)
