from abc import abstractmethod
from typing import Dict

import numpy as np

from erv_mixture.config import PiModel
from erv_mixture.dataset import CohortMetadata


class Prior:
    """
    Base class of the pi_ij parameterizations.

    Subclasses know their parameter count, their CM-step and how their values spread over
    the virus × animal grid. Updates always average over unique animals: under the independent
    treatment every column is its own animal, so U is the full column set.
    """

    kind: PiModel

    @abstractmethod
    def num_params(self, m: int, n: int) -> int:
        pass

    @abstractmethod
    def update(self, zg: np.ndarray, meta: CohortMetadata) -> np.ndarray:
        """
        Parameters
        ----------
        zg : np.ndarray
            m×G posterior of the replicate groups (one column per unique animal)
        meta : CohortMetadata

        Returns
        -------
        np.ndarray
            pi values: 0-d, length m or length n
        """
        pass

    @abstractmethod
    def group_grid(self, values: np.ndarray, m: int, meta: CohortMetadata) -> np.ndarray:
        """m×G prior of the replicate groups"""
        pass


class SharedPrior(Prior):
    """pi_ij = pi"""

    kind = PiModel.SHARED

    def num_params(self, m: int, n: int) -> int:
        return 1

    def update(self, zg: np.ndarray, meta: CohortMetadata) -> np.ndarray:
        return np.asarray(zg.mean())

    def group_grid(self, values: np.ndarray, m: int, meta: CohortMetadata) -> np.ndarray:
        return np.full((m, len(meta.unique_set)), float(values))


class PerVirusPrior(Prior):
    """pi_ij = pi_i"""

    kind = PiModel.PER_VIRUS

    def num_params(self, m: int, n: int) -> int:
        return m

    def update(self, zg: np.ndarray, meta: CohortMetadata) -> np.ndarray:
        return zg.mean(axis=1)

    def group_grid(self, values: np.ndarray, m: int, meta: CohortMetadata) -> np.ndarray:
        return np.repeat(np.asarray(values)[:, None], len(meta.unique_set), axis=1)


class PerAnimalPrior(Prior):
    """
    pi_ij = pi_j

    Stored per column, replicate columns carry the value of their group.
    """

    kind = PiModel.PER_ANIMAL

    def num_params(self, m: int, n: int) -> int:
        return n

    def update(self, zg: np.ndarray, meta: CohortMetadata) -> np.ndarray:
        return zg.mean(axis=0)[meta.group_of_column]

    def group_grid(self, values: np.ndarray, m: int, meta: CohortMetadata) -> np.ndarray:
        values = np.asarray(values)[list(meta.unique_set)]
        return np.repeat(values[None, :], m, axis=0)


PRIORS: Dict[PiModel, Prior] = {
    PiModel.SHARED: SharedPrior(),
    PiModel.PER_VIRUS: PerVirusPrior(),
    PiModel.PER_ANIMAL: PerAnimalPrior(),
}


def get_prior(kind: PiModel) -> Prior:
    return PRIORS[PiModel(kind)]
