import importlib.util
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, Sequence, Tuple

import numpy as np
from loguru import logger

from erv_mixture.utils.errors import ValidationError


class PiModel(str, Enum):
    """
    Parameterization of the prior carrier probabilities pi_ij
    """

    SHARED = "shared"
    PER_VIRUS = "per-virus"
    PER_ANIMAL = "per-animal"


class ReplicateMode(str, Enum):
    """
    Treatment of columns sequenced from the same physical animal
    """

    # every column is its own animal
    INDEPENDENT = "independent"
    # replicate columns share one carrier status
    IDENTICAL = "identical"


class RankBy(str, Enum):
    PAPER = "paper"
    STANDARD = "standard"


# noinspection PyUnresolvedReferences
@dataclass
class FitCfg:
    """
    Parameters
    ----------
    pi_model : PiModel
        shared (pi_ij = pi), per-virus (pi_ij = pi_i) or per-animal (pi_ij = pi_j)
    replicate_mode : ReplicateMode
        independent: replicate groups are ignored.
        identical: columns of one replicate group share a carrier status
    init_c : float
        Initial posterior is min(1, x_ij / init_c)
    init_r0 : float
        Initial value of every r_j
    tol : float
        Stop when the sum of absolute changes of all Z_ij falls below tol
    max_iters : int
        Stop after this many ECM iterations, the fit is then reported as not converged
    alpha_smoothing : tuple[float, float]
        (numerator_add, denominator_add) of the smoothed alpha update
    r_bounds : tuple[float, float]
        Bracket of the numerical r_j maximization
    r_xtol : float
        Relative tolerance of the r_j maximization
    clamp_eps : float
        alpha and p are clamped into [clamp_eps, 1 - clamp_eps]
    loglik_slack : float
        Largest log-likelihood decrease per iteration tolerated before the ascent guard fires
    """

    pi_model: PiModel = PiModel.PER_VIRUS
    replicate_mode: ReplicateMode = ReplicateMode.IDENTICAL
    init_c: float = 10.0
    init_r0: float = 100.0
    tol: float = 0.01
    max_iters: int = 2000
    alpha_smoothing: Tuple[float, float] = (0.05, 0.1)
    r_bounds: Tuple[float, float] = (1e-6, 1e7)
    r_xtol: float = 1e-8
    clamp_eps: float = 1e-12
    loglik_slack: float = 1e-8

    def __post_init__(self):
        self.pi_model = PiModel(self.pi_model)
        self.replicate_mode = ReplicateMode(self.replicate_mode)
        self.alpha_smoothing = tuple(self.alpha_smoothing)
        self.r_bounds = tuple(self.r_bounds)

        if self.init_c <= 0:
            raise ValidationError(f"init_c must be positive, got {self.init_c}")
        if self.init_r0 <= 0:
            raise ValidationError(f"init_r0 must be positive, got {self.init_r0}")
        if self.tol <= 0:
            raise ValidationError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")
        if len(self.alpha_smoothing) != 2 or min(self.alpha_smoothing) < 0:
            raise ValidationError(
                f"alpha_smoothing must be two non-negative numbers, got {self.alpha_smoothing}"
            )
        if not 0 < self.r_bounds[0] < self.r_bounds[1]:
            raise ValidationError(f"invalid r_bounds: {self.r_bounds}")
        if not 0 < self.clamp_eps < 0.5:
            raise ValidationError(f"clamp_eps must be in (0, 0.5), got {self.clamp_eps}")

    def replace(self, **kwargs) -> "FitCfg":
        values = self.to_dict()
        values.update(kwargs)
        return FitCfg(**values)

    def to_dict(self) -> Dict:
        out = asdict(self)
        out["pi_model"] = self.pi_model.value
        out["replicate_mode"] = self.replicate_mode.value
        out["alpha_smoothing"] = list(self.alpha_smoothing)
        out["r_bounds"] = list(self.r_bounds)
        return out


# noinspection PyUnresolvedReferences
@dataclass
class SweepCfg:
    """
    Hard-classification sweep used by the replicate validation

    Parameters
    ----------
    thresholds : Sequence[int]
        Count thresholds, a read count >= threshold is a positive call
    cutoffs : Sequence[float]
        Posterior cutoffs c, Z > c is a positive call
    """

    thresholds: Sequence[int] = tuple(range(1, 11))
    cutoffs: Sequence[float] = field(
        default_factory=lambda: tuple(np.round(np.linspace(0, 1, 101), 10))
    )

    def __post_init__(self):
        self.thresholds = tuple(int(t) for t in self.thresholds)
        self.cutoffs = tuple(float(c) for c in self.cutoffs)
        if len(self.thresholds) == 0 or min(self.thresholds) < 1:
            raise ValidationError(f"thresholds must be >= 1: {self.thresholds}")
        if len(self.cutoffs) == 0 or min(self.cutoffs) < 0 or max(self.cutoffs) > 1:
            raise ValidationError("cutoffs must lie in [0, 1]")


def get_cfg(config_file: str, name: str = "spec"):
    """
    Load a config object from a python file

    Args:
        config_file: full path of a config file
        name: module level variable holding the config

    Returns:
        value of the variable ``name`` in the config file
    """
    module = import_module_from_file(config_file)
    cfg = getattr(module, name, None)
    if cfg is None:
        raise ValidationError(f"Load config failed, no '{name}' in {config_file}")
    return cfg


def import_module_from_file(full_path_to_module):
    """
    Import a module given the full path/filename of the .py file
    """
    if not os.path.exists(full_path_to_module):
        raise ValidationError(f"config file not exists: {full_path_to_module}")

    module_dir, module_file = os.path.split(full_path_to_module)
    module_name, module_ext = os.path.splitext(module_file)

    spec = importlib.util.spec_from_file_location(module_name, full_path_to_module)
    module = importlib.util.module_from_spec(spec)
    try:
        spec.loader.exec_module(module)
    except Exception as e:
        logger.exception(e)
        raise ValidationError(f"Load config failed: {full_path_to_module}") from e
    return module
