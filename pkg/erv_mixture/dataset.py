"""
Read-count matrix and cohort metadata: types, CSV ingestion and emission, summaries.

Matrix file layout (first line is the header)::

    virus_id,deer01,deer02,...
    v0001,0,5,...
    v0002,3,0,...

Metadata file layout, longitude/latitude/population are optional::

    column_id,animal_id,experiment_id,longitude,latitude,population
    deer01,A01,1,-120.5,44.1,OR
"""
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from erv_mixture.utils.errors import ParseError, ValidationError
from erv_mixture.utils.types import Matrix
from erv_mixture.utils.utils import sha256_bytes

VIRUS_ID_HEADER = "virus_id"
META_REQUIRED = ("column_id", "animal_id", "experiment_id")
META_GEO = ("longitude", "latitude")
META_POPULATION = "population"

PathLike = Union[str, Path]

INT64_MAX = np.iinfo(np.int64).max


@dataclass(frozen=True, eq=False)
class CountMatrix:
    """
    m×n read counts, ``counts[i, j]`` is the number of reads of animal column j assigned to virus i
    """

    virus_ids: Tuple[str, ...]
    animal_column_ids: Tuple[str, ...]
    counts: Matrix

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValidationError(f"counts must be 2-D, got shape {counts.shape}")
        m, n = counts.shape
        if m < 1 or n < 1:
            raise ValidationError(f"count matrix must be at least 1×1, got {m}×{n}")
        if len(self.virus_ids) != m or len(self.animal_column_ids) != n:
            raise ValidationError(
                f"ids ({len(self.virus_ids)}, {len(self.animal_column_ids)}) do not match counts shape {counts.shape}"
            )
        _check_unique(self.virus_ids, "virus id")
        _check_unique(self.animal_column_ids, "column id")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.mod(counts, 1) == 0):
                raise ValidationError("counts must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts < 0):
            i, j = np.argwhere(counts < 0)[0]
            raise ValidationError(
                f"negative count {counts[i, j]}", location=f"{self.virus_ids[i]}/{self.animal_column_ids[j]}"
            )
        counts.setflags(write=False)
        object.__setattr__(self, "virus_ids", tuple(str(it) for it in self.virus_ids))
        object.__setattr__(
            self, "animal_column_ids", tuple(str(it) for it in self.animal_column_ids)
        )
        object.__setattr__(self, "counts", counts)

    @property
    def m(self) -> int:
        return self.counts.shape[0]

    @property
    def n(self) -> int:
        return self.counts.shape[1]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.counts, columns=list(self.animal_column_ids))
        df.insert(0, VIRUS_ID_HEADER, list(self.virus_ids))
        return df

    def to_csv_bytes(self) -> bytes:
        buf = io.StringIO()
        self.to_frame().to_csv(buf, index=False, lineterminator="\n")
        return buf.getvalue().encode("utf-8")

    def digest(self) -> str:
        """sha256 of the canonical CSV form"""
        return sha256_bytes(self.to_csv_bytes())

    def filter_rows(self, min_animals: int = 2, min_count: int = 5) -> "CountMatrix":
        """
        Keep viruses with at least ``min_animals`` columns holding ``min_count`` or more reads
        """
        keep = (self.counts >= min_count).sum(axis=1) >= min_animals
        if not np.any(keep):
            raise ValidationError(
                f"no virus has {min_animals} columns with >= {min_count} reads"
            )
        logger.info(f"Keep {int(keep.sum())}/{self.m} viruses")
        return CountMatrix(
            virus_ids=tuple(np.asarray(self.virus_ids)[keep]),
            animal_column_ids=self.animal_column_ids,
            counts=self.counts[keep],
        )


@dataclass(frozen=True, eq=False)
class CohortMetadata:
    """
    Per-column cohort information, all indices are 0-based column indices of the CountMatrix

    Parameters
    ----------
    experiment_of_column : np.ndarray
        k(j), experiment index in 0..K-1 of each column
    replicate_groups : tuple[tuple[int, ...], ...]
        S_j, columns from the same physical animal. Ordered by their lowest column index
    unique_set : tuple[int, ...]
        U, the lowest column index of each replicate group
    animal_labels : tuple[str, ...]
        Animal id of each column
    experiment_labels : tuple[str, ...]
        Experiment id of each experiment index, in order of first appearance
    geo : np.ndarray
        n×2 (longitude, latitude) in degrees, NaN where unknown. None if the file had no geo columns
    population : tuple[str, ...]
        Optional population label of each column
    """

    experiment_of_column: np.ndarray
    replicate_groups: Tuple[Tuple[int, ...], ...]
    unique_set: Tuple[int, ...]
    animal_labels: Tuple[str, ...]
    experiment_labels: Tuple[str, ...]
    geo: Optional[np.ndarray] = None
    population: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        experiments = np.array(self.experiment_of_column, dtype=np.int64)
        n = len(experiments)
        K = len(self.experiment_labels)
        if K < 1 or set(experiments.tolist()) != set(range(K)):
            raise ValidationError(f"experiment indices must cover 0..{K - 1}")

        seen = sorted(j for group in self.replicate_groups for j in group)
        if seen != list(range(n)):
            raise ValidationError(
                "every column must appear in exactly one replicate group"
            )
        for group, rep in zip(self.replicate_groups, self.unique_set):
            if rep not in group:
                raise ValidationError(f"representative {rep} not in its group {group}")
        if len(self.unique_set) != len(self.replicate_groups):
            raise ValidationError("unique_set needs one member per replicate group")

        if self.geo is not None:
            geo = np.array(self.geo, dtype=np.float64)
            if geo.shape != (n, 2):
                raise ValidationError(f"geo must be {n}×2, got {geo.shape}")
            geo.setflags(write=False)
            object.__setattr__(self, "geo", geo)

        experiments.setflags(write=False)
        object.__setattr__(self, "experiment_of_column", experiments)

    @property
    def n(self) -> int:
        return len(self.experiment_of_column)

    @property
    def K(self) -> int:
        return len(self.experiment_labels)

    @property
    def group_of_column(self) -> np.ndarray:
        out = np.empty(self.n, dtype=np.int64)
        for g, group in enumerate(self.replicate_groups):
            out[list(group)] = g
        return out

    @property
    def has_replicates(self) -> bool:
        return any(len(group) > 1 for group in self.replicate_groups)

    def as_independent(self) -> "CohortMetadata":
        """Same cohort with every column its own animal"""
        return CohortMetadata(
            experiment_of_column=self.experiment_of_column,
            replicate_groups=tuple((j,) for j in range(self.n)),
            unique_set=tuple(range(self.n)),
            animal_labels=self.animal_labels,
            experiment_labels=self.experiment_labels,
            geo=self.geo,
            population=self.population,
        )

    def has_complete_geo(self, columns: Optional[Sequence[int]] = None) -> bool:
        if self.geo is None:
            return False
        geo = self.geo if columns is None else self.geo[list(columns)]
        return bool(np.all(np.isfinite(geo)))


@dataclass(frozen=True)
class CountSummary:
    zero_fraction: float
    low_fraction: float
    mean_nonzero: float
    dims: Tuple[int, int]

    def to_dict(self) -> Dict:
        return {
            "zero_fraction": self.zero_fraction,
            "low_fraction": self.low_fraction,
            "mean_nonzero": self.mean_nonzero,
            "m": self.dims[0],
            "n": self.dims[1],
        }


def _check_unique(ids: Sequence[str], what: str):
    seen = set()
    for it in ids:
        if it in seen:
            raise ValidationError(f"duplicate {what}: {it}")
        seen.add(it)


def _read_raw(path: PathLike) -> pd.DataFrame:
    if not Path(path).exists():
        raise ValidationError(f"file not exists: {path}")
    try:
        raw = pd.read_csv(
            str(path),
            header=None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=True,
            encoding="utf-8",
        )
    except pd.errors.ParserError as e:
        raise ValidationError(f"malformed csv: {e}", location=str(path)) from e
    except pd.errors.EmptyDataError as e:
        raise ValidationError("empty file", location=str(path)) from e
    # short rows are padded with NaN
    return raw.fillna("")


def load_count_matrix(path: PathLike) -> CountMatrix:
    """
    Read a count matrix CSV, first row holds column ids, first column virus ids

    Raises:
        ParseError: a body cell is not a non-negative integer
        ValidationError: duplicate or missing identifiers
    """
    raw = _read_raw(path)
    if raw.shape[0] < 2 or raw.shape[1] < 2:
        raise ValidationError(f"{path} needs a header row, an id column and at least one cell")

    column_ids = [it.strip() for it in raw.iloc[0, 1:].tolist()]
    virus_ids = [it.strip() for it in raw.iloc[1:, 0].tolist()]
    for j, it in enumerate(column_ids):
        if it == "":
            raise ParseError("empty column id", str(path), 1, j + 2)
    for i, it in enumerate(virus_ids):
        if it == "":
            raise ParseError("empty virus id", str(path), i + 2, 1)
    _check_unique(column_ids, "column id")
    _check_unique(virus_ids, "virus id")

    body = raw.iloc[1:, 1:].apply(lambda col: col.str.strip())
    valid = body.apply(lambda col: col.str.fullmatch(r"\d+")).to_numpy(dtype=bool)
    if not valid.all():
        i, j = np.argwhere(~valid)[0]
        cell = body.iat[i, j]
        reason = "negative count" if cell.startswith("-") else "not a non-negative integer"
        raise ParseError(f"{reason}: '{cell}'", str(path), int(i) + 2, int(j) + 2)

    too_large = body.apply(lambda col: col.map(lambda it: int(it) > INT64_MAX))
    too_large = too_large.to_numpy(dtype=bool)
    if too_large.any():
        i, j = np.argwhere(too_large)[0]
        raise ParseError(
            f"count out of range: '{body.iat[i, j]}'", str(path), int(i) + 2, int(j) + 2
        )

    counts = body.to_numpy().astype(np.int64)
    cm =CountMatrix(tuple(virus_ids), tuple(column_ids), counts)
    logger.info(f"Load {cm.m}×{cm.n} count matrix from {path}")
    return cm


def save_count_matrix(cm: CountMatrix, path: PathLike):
    with open(str(path), "wb") as f:
        f.write(cm.to_csv_bytes())


def load_metadata(path: PathLike, cm: CountMatrix) -> CohortMetadata:
    """
    Read the cohort metadata of ``cm``'s columns

    Replicate groups are the sets of columns sharing an animal_id, the representative of
    each group is its lowest column index.
    """
    raw = _read_raw(path)
    if raw.shape[0] < 1:
        raise ValidationError(f"{path} is empty")
    header = [it.strip() for it in raw.iloc[0].tolist()]
    for name in META_REQUIRED:
        if name not in header:
            raise ValidationError(f"missing metadata column '{name}'", location=str(path))
    _check_unique(header, "metadata column")
    body = raw.iloc[1:].copy()
    body.columns = header
    body = body.apply(lambda col: col.str.strip())

    index_of = {cid: j for j, cid in enumerate(cm.animal_column_ids)}
    rows: Dict[int, int] = {}
    for line, cid in enumerate(body["column_id"].tolist(), start=2):
        if cid not in index_of:
            raise ValidationError(
                f"unknown column '{cid}'", location=f"{path}:{line}"
            )
        j = index_of[cid]
        if j in rows:
            raise ValidationError(f"duplicate column '{cid}'", location=f"{path}:{line}")
        rows[j] = line - 2
    missing = [cm.animal_column_ids[j] for j in range(cm.n) if j not in rows]
    if missing:
        raise ValidationError(f"columns without metadata: {missing}", location=str(path))

    ordered = body.iloc[[rows[j] for j in range(cm.n)]].reset_index(drop=True)
    for name in ("animal_id", "experiment_id"):
        empty = ordered[name] == ""
        if empty.any():
            j = int(np.argmax(empty.to_numpy()))
            raise ValidationError(
                f"column '{cm.animal_column_ids[j]}' has no {name}", location=str(path)
            )

    experiment_labels: List[str] = []
    for label in ordered["experiment_id"]:
        if label not in experiment_labels:
            experiment_labels.append(label)
    experiment_of_column = np.array(
        [experiment_labels.index(label) for label in ordered["experiment_id"]]
    )

    animal_labels = tuple(ordered["animal_id"].tolist())
    groups: Dict[str, List[int]] = {}
    for j, animal in enumerate(animal_labels):
        groups.setdefault(animal, []).append(j)
    replicate_groups = tuple(
        sorted((tuple(sorted(it)) for it in groups.values()), key=lambda g: g[0])
    )
    unique_set = tuple(group[0] for group in replicate_groups)

    geo = None
    if all(name in header for name in META_GEO):
        geo = np.full((cm.n, 2), np.nan)
        for k, name in enumerate(META_GEO):
            values = pd.to_numeric(
                ordered[name].replace("", np.nan), errors="coerce"
            ).to_numpy(dtype=float)
            bad = ordered[name].ne("") & np.isnan(values)
            if bad.any():
                j = int(np.argmax(bad.to_numpy()))
                raise ValidationError(
                    f"invalid {name} '{ordered[name].iat[j]}' for column '{cm.animal_column_ids[j]}'",
                    location=str(path),
                )
            geo[:, k] = values

    population = None
    if META_POPULATION in header:
        population = tuple(ordered[META_POPULATION].tolist())

    meta = CohortMetadata(
        experiment_of_column=experiment_of_column,
        replicate_groups=replicate_groups,
        unique_set=unique_set,
        animal_labels=animal_labels,
        experiment_labels=tuple(experiment_labels),
        geo=geo,
        population=population,
    )
    logger.info(
        f"Load metadata from {path}: {len(replicate_groups)} animals, {meta.K} experiments"
    )
    return meta


def metadata_frame(meta: CohortMetadata, cm: CountMatrix) -> pd.DataFrame:
    df = pd.DataFrame(
        {
            "column_id": list(cm.animal_column_ids),
            "animal_id": list(meta.animal_labels),
            "experiment_id": [meta.experiment_labels[k] for k in meta.experiment_of_column],
        }
    )
    if meta.geo is not None:
        df["longitude"] = meta.geo[:, 0]
        df["latitude"] = meta.geo[:, 1]
    if meta.population is not None:
        df[META_POPULATION] = list(meta.population)
    return df


def save_metadata(meta: CohortMetadata, cm: CountMatrix, path: PathLike):
    metadata_frame(meta, cm).to_csv(str(path), index=False, lineterminator="\n")


def summarize_counts(cm: CountMatrix) -> CountSummary:
    x = cm.counts
    total = x.size
    nonzero = x[x > 0]
    return CountSummary(
        zero_fraction=float(np.count_nonzero(x == 0) / total),
        low_fraction=float(np.count_nonzero((x >= 1) & (x <= 10)) / total),
        mean_nonzero=float(nonzero.mean()) if nonzero.size else 0.0,
        dims=(cm.m, cm.n),
    )
