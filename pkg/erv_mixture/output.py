"""
Output directories of the command line runs.

Every file goes through an :class:`OutputDir`, which records it and writes ``manifest.json`` on close:

.. code-block:: bash

    {
        "command": "fit",
        "config": {...},
        "inputs": {"counts.csv": {"path": "...", "sha256": "..."}},
        "outputs": {"zhat.csv": "sha256 hex"},
        "elapsed_seconds": 1.2,
        "version": "0.1.0"
    }
"""
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd
from loguru import logger

from erv_mixture import __version__
from erv_mixture.config import FitCfg, PiModel
from erv_mixture.dataset import CohortMetadata, CountMatrix
from erv_mixture.fitter import FitCounters, FitResult, MixtureParams, PosteriorMatrix
from erv_mixture.utils.errors import ValidationError
from erv_mixture.utils.utils import sha256_bytes, sha256_file

MANIFEST_NAME = "manifest.json"
REPORT_NAME = "report.json"


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any] = field(default_factory=dict)
    inputs: Dict[str, Dict[str, str]] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    elapsed_seconds: float = 0.0
    version: str = ""

    def to_dict(self) -> Dict:
        return {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "elapsed_seconds": self.elapsed_seconds,
            "version": self.version,
        }


def _to_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False, default=_json_default) + "\n"


def _json_default(obj: Any):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


class OutputDir:
    """
    Output directory of one run, use as a context manager

    Args:
        out_dir: created if missing
        command: subcommand name recorded in the manifest
        config: config echo recorded in the manifest
    """

    def __init__(self, out_dir: Union[str, Path], command: str, config: Optional[Dict] = None):
        self.out_dir = Path(out_dir)
        if not os.path.exists(self.out_dir):
            os.makedirs(self.out_dir)
        self.manifest = RunManifest(command=command, config=config or {}, version=__version__)
        self._start = time.time()

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def add_input(self, name: str, path: Union[str, Path]):
        self.manifest.inputs[name] = {"path": str(path), "sha256": sha256_file(path)}

    def write_bytes(self, name: str, data: bytes) -> Path:
        path = self.path(name)
        with open(path, "wb") as f:
            f.write(data)
        self.manifest.outputs[name] = sha256_bytes(data)
        logger.debug(f"Write {path}")
        return path

    def write_text(self, name: str, text: str) -> Path:
        return self.write_bytes(name, text.encode("utf-8"))

    def write_json(self, name: str, obj: Any) -> Path:
        return self.write_text(name, _to_json(obj))

    def write_csv(self, name: str, df: pd.DataFrame) -> Path:
        return self.write_text(name, df.to_csv(index=False, lineterminator="\n"))

    def close(self):
        self.manifest.elapsed_seconds = round(time.time() - self._start, 3)
        with open(self.path(MANIFEST_NAME), "w", encoding="utf-8") as f:
            f.write(_to_json(self.manifest.to_dict()))
        logger.info(f"Write {len(self.manifest.outputs)} files to {self.out_dir}")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        # a failed run leaves no manifest behind
        if exc_type is None:
            self.close()


def _pi_frame(params: MixtureParams, cm: CountMatrix) -> pd.DataFrame:
    if params.pi_model == PiModel.SHARED:
        return pd.DataFrame({"pi": [float(params.pi)]})
    if params.pi_model == PiModel.PER_VIRUS:
        return pd.DataFrame({"virus_id": list(cm.virus_ids), "pi": params.pi})
    return pd.DataFrame({"column_id": list(cm.animal_column_ids), "pi": params.pi})


def write_fit(out: OutputDir, result: FitResult, cm: CountMatrix, meta: CohortMetadata):
    """alpha.csv, r.csv, p.csv, pi.csv, zhat.csv and report.json"""
    params = result.params
    out.write_csv("alpha.csv", pd.DataFrame({"virus_id": list(cm.virus_ids), "alpha": params.alpha}))
    out.write_csv("r.csv", pd.DataFrame({"column_id": list(cm.animal_column_ids), "r": params.r}))
    out.write_csv(
        "p.csv", pd.DataFrame({"experiment_id": list(meta.experiment_labels), "p": params.p})
    )
    out.write_csv("pi.csv", _pi_frame(params, cm))

    zhat = pd.DataFrame(result.posterior.z, columns=list(cm.animal_column_ids))
    zhat.insert(0, "virus_id", list(cm.virus_ids))
    out.write_csv("zhat.csv", zhat)

    report = result.report()
    report["vanished_cells_last_e_step"] = result.posterior.vanished_cells
    out.write_json(REPORT_NAME, report)


def load_fit(fit_dir: Union[str, Path]) -> FitResult:
    """Read a fit written by :func:`write_fit`"""
    fit_dir = Path(fit_dir)
    for name in ("alpha.csv", "r.csv", "p.csv", "pi.csv", "zhat.csv", REPORT_NAME):
        if not (fit_dir / name).exists():
            raise ValidationError(f"missing {name}", location=str(fit_dir))

    with open(fit_dir / REPORT_NAME, "r", encoding="utf-8") as f:
        report = json.load(f)
    cfg = FitCfg(**report["config"])

    zhat = pd.read_csv(fit_dir / "zhat.csv", dtype={"virus_id": str})
    pi = pd.read_csv(fit_dir / "pi.csv")["pi"].to_numpy(dtype=float)
    params = MixtureParams(
        pi_model=cfg.pi_model,
        pi=np.asarray(pi[0]) if cfg.pi_model == PiModel.SHARED else pi,
        r=pd.read_csv(fit_dir / "r.csv")["r"].to_numpy(dtype=float),
        alpha=pd.read_csv(fit_dir / "alpha.csv")["alpha"].to_numpy(dtype=float),
        p=pd.read_csv(fit_dir / "p.csv")["p"].to_numpy(dtype=float),
        replicate_mode=cfg.replicate_mode,
    )
    posterior = PosteriorMatrix(
        z=zhat.drop(columns="virus_id").to_numpy(dtype=float),
        replicate_mode=cfg.replicate_mode,
        vanished_cells=report.get("vanished_cells_last_e_step", 0),
    )
    counters = FitCounters(
        alpha_clamps=report["alpha_clamps"],
        p_clamps=report["p_clamps"],
        r_boundary_hits=report["r_boundary_hits"],
        vanished_cells=report["vanished_cells"],
        ascent_guard_activations=report["ascent_guard_activations"],
    )
    return FitResult(
        params=params,
        posterior=posterior,
        loglik_trace=tuple(report["loglik_trace"]),
        iterations=report["iterations"],
        converged=report["converged"],
        constraint_ok=report["constraint_ok"],
        ascent_guard_activations=report["ascent_guard_activations"],
        counters=counters,
        cfg=cfg,
        input_digest=report["input_digest"],
    )
