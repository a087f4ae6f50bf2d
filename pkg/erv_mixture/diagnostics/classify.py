from typing import Union

import numpy as np

from erv_mixture.dataset import CountMatrix
from erv_mixture.fitter import PosteriorMatrix
from erv_mixture.utils.errors import ValidationError


def threshold_classify(cm: CountMatrix, t: int) -> np.ndarray:
    """Y_ij = 1 iff x_ij >= t"""
    if int(t) != t or t < 1:
        raise ValidationError(f"count threshold must be a positive integer, got {t}")
    return (cm.counts >= t).astype(np.int8)


def posterior_classify(zhat: Union[PosteriorMatrix, np.ndarray], c: float) -> np.ndarray:
    """Y_ij = 1 iff Z_ij > c"""
    if not 0.0 <= c <= 1.0:
        raise ValidationError(f"posterior cutoff must be in [0, 1], got {c}")
    z = zhat.z if isinstance(zhat, PosteriorMatrix) else np.asarray(zhat)
    return (z > c).astype(np.int8)
