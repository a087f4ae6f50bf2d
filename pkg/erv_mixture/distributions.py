r"""
Log mass functions of the count families used by the mixture and its diagnostics.

All functions accept numpy arrays and broadcast. The negative binomial takes a
continuous shape r, the binomial coefficient is generalized through log-Gamma:

.. math::

    \log P(X=x) = \log\Gamma(x+r) - \log\Gamma(r) - \log\Gamma(x+1) + r\log\theta + x\log(1-\theta)

with mean :math:`r(1-\theta)/\theta` and variance :math:`r(1-\theta)/\theta^2`.
"""
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from erv_mixture.utils.errors import DomainError

ArrayLike = Union[float, int, np.ndarray]


@dataclass(frozen=True)
class NBParams:
    """
    Parameters
    ----------
    r : float
        shape, > 0
    theta : float
        success probability in (0, 1)
    """

    r: float
    theta: float

    def __post_init__(self):
        _check_nb(self.r, self.theta)


def _check_nb(r: ArrayLike, theta: ArrayLike):
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(~(r > 0)) or np.any(~np.isfinite(r)):
        raise DomainError(f"negative binomial shape must be positive and finite, got {r}")
    if np.any(~((theta > 0) & (theta < 1))):
        raise DomainError(f"success probability must be in (0, 1), got {theta}")


def _check_counts(x: ArrayLike) -> np.ndarray:
    x = np.asarray(x)
    if np.any(x < 0):
        raise DomainError("counts must be non-negative")
    return x.astype(float)


def nb_log_pmf(x: ArrayLike, r: ArrayLike, theta: ArrayLike) -> np.ndarray:
    """
    Log mass of NB(r, theta) at x, see module docstring

    Args:
        x: non-negative integer counts
        r: shape, > 0
        theta: success probability in (0, 1)
    """
    _check_nb(r, theta)
    return nb_log_pmf_unchecked(_check_counts(x), r, theta)


def nb_log_pmf_unchecked(x: np.ndarray, r: ArrayLike, theta: ArrayLike) -> np.ndarray:
    """nb_log_pmf without argument validation, for the inner loops of the fitter"""
    return (
        gammaln(x + r)
        - gammaln(r)
        - gammaln(x + 1.0)
        + r * np.log(theta)
        + xlog1py(x, -np.asarray(theta, dtype=float))
    )


def nb_moments(params: NBParams) -> Tuple[float, float]:
    """
    Returns:
        (mean, variance), variance / mean = 1 / theta
    """
    q = 1.0 - params.theta
    mean = params.r * q / params.theta
    variance = params.r * q / params.theta ** 2
    return mean, variance


def geometric_log_pmf(x: ArrayLike, p: ArrayLike) -> np.ndarray:
    """
    Log mass of the geometric distribution counting failures before the first success,
    the negative binomial with r = 1
    """
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError(f"geometric probability must be in (0, 1), got {p}")
    x = _check_counts(x)
    return np.log(p) + xlog1py(x, -p)


def poisson_log_pmf(x: ArrayLike, lam: ArrayLike) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if np.any(~(lam > 0)):
        raise DomainError(f"poisson mean must be positive, got {lam}")
    x = _check_counts(x)
    return xlogy(x, lam) - lam - gammaln(x + 1.0)
