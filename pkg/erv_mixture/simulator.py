"""
Synthetic cohorts drawn from the mixture model with known carrier status.

Counts are sampled through the Gamma-Poisson composition,
``x ~ Poisson(Gamma(shape=r, scale=(1 - theta) / theta))``, which is NB(r, theta) for any
continuous r > 0.
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from erv_mixture.config import PiModel, ReplicateMode
from erv_mixture.dataset import CohortMetadata, CountMatrix, metadata_frame
from erv_mixture.fitter import MixtureParams
from erv_mixture.output import OutputDir
from erv_mixture.prior import get_prior
from erv_mixture.utils.errors import ValidationError

Range = Tuple[float, float]


# noinspection PyUnresolvedReferences
@dataclass
class SimSpec:
    """
    Parameters
    ----------
    m : int
        Number of viruses
    n : int
        Number of columns, including replicate columns
    K : int
        Number of experiments. Unique animal a is sequenced in experiment a % K
    n_replicated : int
        The first n_replicated animals get a second column, placed in the next experiment
    pi_model : PiModel
    pi : float or Sequence[float]
        True prior, a scalar (shared), length m (per-virus) or one value per unique animal
        (per-animal). Drawn when None
    pi_range : tuple[float, float]
        Uniform range pi is drawn from
    pi_choices : Sequence[float]
        If set, per-virus or per-animal pi values are drawn uniformly from these levels instead
    alpha : Sequence[float]
        True carrier success probabilities, drawn log-uniformly from alpha_range when None
    alpha_range : tuple[float, float]
    p : Sequence[float]
        True background success probabilities, drawn uniformly from p_range when None
    p_range : tuple[float, float]
    r : Sequence[float]
        True column shapes, drawn uniformly from r_range when None
    r_range : tuple[float, float]
    geo_box : tuple[tuple[float, float], tuple[float, float]]
        (longitude range, latitude range) animal locations are drawn from, None for no coordinates
    seed : int
        Seed of the Philox bit generator, the only source of randomness
    """

    m: int = 200
    n: int = 40
    K: int = 2
    n_replicated: int = 4
    pi_model: PiModel = PiModel.PER_VIRUS
    pi: Optional[Union[float, Sequence[float]]] = None
    pi_range: Range = (0.1, 0.9)
    pi_choices: Optional[Sequence[float]] = None
    alpha: Optional[Sequence[float]] = None
    alpha_range: Range = (0.005, 0.3)
    p: Optional[Sequence[float]] = None
    p_range: Range = (0.95, 0.99)
    r: Optional[Sequence[float]] = None
    r_range: Range = (5.0, 50.0)
    geo_box: Optional[Tuple[Range, Range]] = field(
        default_factory=lambda: ((-125.0, -104.0), (41.0, 49.0))
    )
    seed: int = 0

    def __post_init__(self):
        self.pi_model = PiModel(self.pi_model)
        if min(self.m, self.n, self.K) < 1:
            raise ValidationError(f"m, n, K must be positive, got {self.m}, {self.n}, {self.K}")
        if not 0 <= self.n_replicated <= self.n_unique:
            raise ValidationError(
                f"n_replicated must be in [0, {self.n_unique}], got {self.n_replicated}"
            )
        if self.n_replicated > 0 and self.K < 2:
            raise ValidationError("replicate columns need at least two experiments")
        if self.n_unique < self.K:
            raise ValidationError(f"{self.n_unique} unique animals cannot cover {self.K} experiments")

        _check_range("pi_range", self.pi_range, 0.0, 1.0, closed=True)
        _check_range("alpha_range", self.alpha_range, 0.0, 1.0)
        _check_range("p_range", self.p_range, 0.0, 1.0)
        _check_range("r_range", self.r_range, 0.0, np.inf)
        if self.pi_choices is not None:
            self.pi_choices = tuple(float(it) for it in self.pi_choices)
            if not self.pi_choices or min(self.pi_choices) < 0 or max(self.pi_choices) > 1:
                raise ValidationError(f"pi_choices must lie in [0, 1]: {self.pi_choices}")

        expected_pi = {
            PiModel.SHARED: (),
            PiModel.PER_VIRUS: (self.m,),
            PiModel.PER_ANIMAL: (self.n_unique,),
        }[self.pi_model]
        for name, value, shape, low, high in (
            ("pi", self.pi, expected_pi, 0.0, 1.0),
            ("alpha", self.alpha, (self.m,), 0.0, 1.0),
            ("p", self.p, (self.K,), 0.0, 1.0),
            ("r", self.r, (self.n,), 0.0, np.inf),
        ):
            if value is None:
                continue
            value = np.asarray(value, dtype=float)
            if value.shape != shape:
                raise ValidationError(f"{name} must have shape {shape}, got {value.shape}")
            if name == "pi":
                ok = (value >= low) & (value <= high)
            else:
                ok = (value > low) & (value < high)
            if not np.all(ok):
                raise ValidationError(f"{name} out of range")

    @property
    def n_unique(self) -> int:
        return self.n - self.n_replicated


@dataclass(frozen=True, eq=False)
class SimulatedData:
    """
    ``truth`` is m×(unique animals), ordered like ``meta.replicate_groups``
    """

    cm: CountMatrix
    meta: CohortMetadata
    truth: np.ndarray
    params: MixtureParams
    spec: SimSpec

    @property
    def truth_columns(self) -> np.ndarray:
        """m×n carrier status of every column"""
        return self.truth[:, self.meta.group_of_column]


def _check_range(name: str, value: Range, low: float, high: float, closed: bool = False):
    if len(value) != 2 or value[0] > value[1]:
        raise ValidationError(f"{name} must be (low, high), got {value}")
    if closed:
        ok = low <= value[0] and value[1] <= high
    else:
        ok = low < value[0] and value[1] < high
    if not ok:
        raise ValidationError(f"{name} must lie within ({low}, {high}), got {value}")


def default_spec(seed: int = 0) -> SimSpec:
    return SimSpec(seed=seed)


def _cohort(spec: SimSpec, geo: Optional[np.ndarray]) -> CohortMetadata:
    n_unique = spec.n_unique
    experiment_of_animal = np.arange(n_unique) % spec.K
    animal_of_column = np.concatenate([np.arange(n_unique), np.arange(spec.n_replicated)])
    experiment_of_column = np.concatenate(
        [experiment_of_animal, (experiment_of_animal[: spec.n_replicated] + 1) % spec.K]
    )
    groups = tuple(
        tuple(int(j) for j in np.flatnonzero(animal_of_column == a)) for a in range(n_unique)
    )
    return CohortMetadata(
        experiment_of_column=experiment_of_column,
        replicate_groups=groups,
        unique_set=tuple(group[0] for group in groups),
        animal_labels=tuple(f"A{a + 1:03d}" for a in animal_of_column),
        experiment_labels=tuple(f"E{k + 1}" for k in range(spec.K)),
        geo=None if geo is None else geo[animal_of_column],
    )


def simulate(spec: SimSpec) -> SimulatedData:
    rng = np.random.Generator(np.random.Philox(spec.seed))
    m, n, n_unique = spec.m, spec.n, spec.n_unique

    if spec.alpha is not None:
        alpha = np.asarray(spec.alpha, dtype=float)
    else:
        alpha = np.exp(rng.uniform(*np.log(spec.alpha_range), size=m))
    p = np.asarray(spec.p, dtype=float) if spec.p is not None else rng.uniform(*spec.p_range, size=spec.K)
    r = np.asarray(spec.r, dtype=float) if spec.r is not None else rng.uniform(*spec.r_range, size=n)

    if spec.pi is not None:
        pi = np.asarray(spec.pi, dtype=float)
    elif spec.pi_model == PiModel.SHARED:
        pi = np.asarray(rng.uniform(*spec.pi_range))
    else:
        size = m if spec.pi_model == PiModel.PER_VIRUS else n_unique
        if spec.pi_choices is not None:
            pi = rng.choice(np.asarray(spec.pi_choices), size=size)
        else:
            pi = rng.uniform(*spec.pi_range, size=size)

    geo = None
    if spec.geo_box is not None:
        (lon_low, lon_high), (lat_low, lat_high) = spec.geo_box
        geo = np.column_stack(
            [rng.uniform(lon_low, lon_high, n_unique), rng.uniform(lat_low, lat_high, n_unique)]
        )
    meta = _cohort(spec, geo)

    column_pi = pi if spec.pi_model != PiModel.PER_ANIMAL else pi[meta.group_of_column]
    # carrier status per virus and unique animal, replicate columns inherit it
    prob = get_prior(spec.pi_model).group_grid(column_pi, m, meta)
    truth = (rng.uniform(size=(m, n_unique)) < prob).astype(np.int8)
    carrier = truth[:, meta.group_of_column].astype(bool)

    theta = np.where(carrier, alpha[:, None], p[meta.experiment_of_column][None, :])
    lam = rng.gamma(shape=np.broadcast_to(r[None, :], (m, n)), scale=(1.0 - theta) / theta)
    counts = rng.poisson(lam)

    cm = CountMatrix(
        virus_ids=tuple(f"v{i + 1:04d}" for i in range(m)),
        animal_column_ids=tuple(f"col{j + 1:03d}" for j in range(n)),
        counts=counts,
    )
    params = MixtureParams(
        pi_model=spec.pi_model,
        pi=np.asarray(column_pi, dtype=float),
        r=r,
        alpha=alpha,
        p=p,
        replicate_mode=ReplicateMode.IDENTICAL,
    )
    if alpha.max() >= p.min():
        logger.warning("simulated max alpha >= min p, carriers are not separated from background")
    logger.info(
        f"Simulate {m}×{n} counts ({n_unique} animals, {spec.n_replicated} replicated), "
        f"carrier fraction {truth.mean():.3f}"
    )
    return SimulatedData(cm=cm, meta=meta, truth=truth, params=params, spec=spec)


def truth_frame(sim: SimulatedData) -> pd.DataFrame:
    animals = [sim.meta.animal_labels[j] for j in sim.meta.unique_set]
    df = pd.DataFrame(sim.truth, columns=animals)
    df.insert(0, "virus_id", list(sim.cm.virus_ids))
    return df


def write_simulation(sim: SimulatedData, out: OutputDir):
    """counts.csv, meta.csv, truth.csv and params.json"""
    out.write_bytes("counts.csv", sim.cm.to_csv_bytes())
    out.write_csv("meta.csv", metadata_frame(sim.meta, sim.cm))
    out.write_csv("truth.csv", truth_frame(sim))
    out.write_json("params.json", sim.params.to_dict())
