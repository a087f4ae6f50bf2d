import dataclasses
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional

import pandas as pd
import typer
from loguru import logger
from rich import print
from rich.table import Table
from typer import Option

from erv_mixture import __version__
from erv_mixture.analysis import align_pca, fit_summary_tables, pca_scores
from erv_mixture.config import FitCfg, PiModel, RankBy, ReplicateMode, SweepCfg, get_cfg
from erv_mixture.dataset import CountMatrix, load_count_matrix, load_metadata, summarize_counts
from erv_mixture.diagnostics import (
    dispersion_summary,
    fit_nb_rowcol,
    fit_poisson_rowcol,
    pearson_residuals,
    posterior_classify,
    replicate_consistency,
)
from erv_mixture.fitter import FitResult, fit
from erv_mixture.output import OutputDir, load_fit, write_fit
from erv_mixture.selection import scores_table, select_model
from erv_mixture.simulator import SimSpec, default_spec, simulate, write_simulation
from erv_mixture.utils.errors import DomainError, FitError, ValidationError

ENV_PREFIX = "ERVMIX_"

app = typer.Typer(add_completion=False, help="Negative binomial mixture for ERV presence calls")


def _env(name: str) -> str:
    return ENV_PREFIX + name


@contextmanager
def _exit_on_error():
    try:
        yield
    except (ValidationError, FitError, DomainError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        raise typer.Exit(1)


def _version_callback(value: bool):
    if value:
        print(__version__)
        raise typer.Exit()


@app.callback()
def main(
    log_level: str = Option("INFO", envvar=_env("LOG_LEVEL"), help="loguru level"),
    version: bool = Option(
        False, "--version", callback=_version_callback, is_eager=True, help="Show version and exit"
    ),
):
    logger.remove()
    logger.add(sys.stderr, level=log_level.upper())


def _fit_cfg(
    pi_model: PiModel,
    replicates: ReplicateMode,
    init_c: float,
    init_r0: float,
    tol: float,
    max_iters: int,
) -> FitCfg:
    return FitCfg(
        pi_model=pi_model,
        replicate_mode=replicates,
        init_c=init_c,
        init_r0=init_r0,
        tol=tol,
        max_iters=max_iters,
    )


def _load(out: OutputDir, counts: Path, meta: Optional[Path]):
    cm = load_count_matrix(counts)
    out.add_input("counts", counts)
    if meta is None:
        return cm, None
    cohort = load_metadata(meta, cm)
    out.add_input("meta", meta)
    return cm, cohort


def _load_fit(out: OutputDir, fit_dir: Path, cm: CountMatrix, input_file: str) -> FitResult:
    """Load a fit made on ``cm``, recording ``input_file`` of it as a run input"""
    result = load_fit(fit_dir)
    out.add_input(Path(input_file).stem, fit_dir / input_file)
    if result.input_digest != cm.digest():
        raise ValidationError(f"fit in {fit_dir} was made on a different count matrix")
    return result


COUNTS = Option(
..., "--counts", envvar=_env("COUNTS"), help="count matrix csv")
META = Option(..., "--meta", envvar=_env("META"), help="cohort metadata csv")
OUT = Option(..., "--out", envvar=_env("OUT"), help="output directory")
PI_MODEL = Option(PiModel.PER_VIRUS, "--pi-model", envvar=_env("PI_MODEL"))
INIT_C = Option(10.0, "--init-c", envvar=_env("INIT_C"))
INIT_R0 = Option(100.0, "--init-r0", envvar=_env("INIT_R0"))
TOL = Option(0.01, "--tol", envvar=_env("TOL"))
MAX_ITERS = Option(2000, "--max-iters", envvar=_env("MAX_ITERS"))


@app.command("fit")
def fit_command(
    counts: Path = COUNTS,
    meta: Path = META,
    out: Path = OUT,
    pi_model: PiModel = PI_MODEL,
    replicates: ReplicateMode = Option(
        ReplicateMode.IDENTICAL, "--replicates", envvar=_env("REPLICATES")
    ),
    init_c: float = INIT_C,
    init_r0: float = INIT_R0,
    tol: float = TOL,
    max_iters: int = MAX_ITERS,
    cutoff_c: float = Option(0.5, "--cutoff-c", envvar=_env("CUTOFF_C"), help="Z > c is a positive call"),
):
    """Fit one model, write parameters, posterior and calls"""
    with _exit_on_error():
        cfg = _fit_cfg(pi_model, replicates, init_c, init_r0, tol, max_iters)
        with OutputDir(out, "fit", {**cfg.to_dict(), "cutoff_c": cutoff_c}) as od:
            cm, cohort = _load(od, counts, meta)
            result = fit(cm, cohort, cfg)
            write_fit(od, result, cm, cohort)
            calls = pd.DataFrame(
                posterior_classify(result.posterior, cutoff_c), columns=list(cm.animal_column_ids)
            )
            calls.insert(0, "virus_id", list(cm.virus_ids))
            od.write_csv("calls.csv", calls)

    table = Table(title=f"{pi_model.value} / {replicates.value}")
    table.add_column("loglik")
    table.add_column("iterations")
    table.add_column("converged")
    table.add_column("max alpha < min p")
    table.add_row(
        f"{result.loglik:.4f}", str(result.iterations), str(result.converged), str(result.constraint_ok)
    )
    print(table)


@app.command("select")
def select_command(
    counts: Path = COUNTS,
    meta: Path = META,
    out: Path = OUT,
    replicates: List[ReplicateMode] = Option(
        [ReplicateMode.INDEPENDENT, ReplicateMode.IDENTICAL], "--replicates", envvar=_env("REPLICATES")
    ),
    rank_by: RankBy = Option(RankBy.PAPER, "--rank-by", envvar=_env("RANK_BY")),
    threads: Optional[int] = Option(None, "--threads", envvar=_env("THREADS"), help="default: all cores"),
    init_c: float = INIT_C,
    init_r0: float = INIT_R0,
    tol: float = TOL,
    max_iters: int = MAX_ITERS,
):
    """Fit the three pi models and rank them by BIC"""
    with _exit_on_error():
        cfg = _fit_cfg(PiModel.PER_VIRUS, ReplicateMode.IDENTICAL, init_c, init_r0, tol, max_iters)
        config = {
            **cfg.to_dict(),
            "replicate_modes": [it.value for it in replicates],
            "rank_by": rank_by.value,
        }
        config.pop("pi_model")
        config.pop("replicate_mode")
        with OutputDir(out, "select", config) as od:
            cm, cohort = _load(od, counts, meta)
            selection = select_model(
                cm, cohort, cfg, replicate_modes=replicates, rank_by=rank_by, threads=threads
            )
            df = scores_table(selection)
            od.write_csv("scores.csv", df)

    table = Table(title="BIC")
    for name in df.columns:
        table.add_column(name)
    for row in df.itertuples(index=False):
        table.add_row(*[f"{it:.2f}" if isinstance(it, float) else str(it) for it in row])
    print(table)


@app.command("validate")
def validate_command(
    counts: Path = COUNTS,
    meta: Path = META,
    out: Path = OUT,
    fit_dir: Optional[Path] = Option(
        None, "--fit-dir", envvar=_env("FIT_DIR"), help="fit fitted with --replicates independent, refit if not given"
    ),
    pi_model: PiModel = PI_MODEL,
    init_c: float = INIT_C,
    init_r0: float = INIT_R0,
    tol: float = TOL,
    max_iters: int = MAX_ITERS,
):
    """Replicate consistency of count-threshold and posterior-cutoff calls"""
    with _exit_on_error():
        cfg = _fit_cfg(pi_model, ReplicateMode.INDEPENDENT, init_c, init_r0, tol, max_iters)
        config = cfg.to_dict() if fit_dir is None else {"fit_dir": str(fit_dir)}
        with OutputDir(out, "validate", config) as od:
            cm, cohort = _load(od, counts, meta)
            if fit_dir is None:
                posterior = fit(cm, cohort, cfg).posterior
            else:
                posterior = _load_fit(od, fit_dir, cm, "zhat.csv").posterior
            validation = replicate_consistency(cm, cohort, posterior, SweepCfg())

            for curve, name in (
                (validation.threshold_curve, "threshold_curve.csv"),
                (validation.cutoff_curve, "cutoff_curve.csv"),
            ):
                od.write_csv(
                    name,
                    pd.DataFrame(
                        {
                            "sweep": curve.sweep[: len(curve.points)],
                            "positive_proportion": curve.points[:, 0],
                            "consistency": curve.points[:, 1],
                        }
                    ),
                )
            od.write_csv(
                "gaps.csv",
                pd.DataFrame(
                    {
                        "threshold": validation.threshold_curve.sweep[: len(validation.gaps)],
                        "gap": validation.gaps,
                    }
                ),
            )
            od.write_text("cases.txt", validation.partition.summary())
    print(validation.partition.summary())


@app.command("diagnose")
def diagnose_command(
    counts: Path = COUNTS,
    out: Path = OUT,
    cutoff: int = Option(9, "--cutoff", envvar=_env("CUTOFF"), help="cells with counts > cutoff enter the fits"),
):
    """Poisson and negative binomial Pearson residuals of the large counts"""
    with _exit_on_error():
        with OutputDir(out, "diagnose", {"cutoff": cutoff}) as od:
            cm, _ = _load(od, counts, None)
            summaries = {}
            for fitter in (fit_poisson_rowcol, fit_nb_rowcol):
                row_col = fitter(cm, cutoff)
                report = pearson_residuals(cm, row_col)
                tag = report.model_tag.value
                od.write_csv(f"residuals_{tag}.csv", pd.DataFrame({"residual": report.residuals}))
                od.write_csv(
                    f"qq_{tag}.csv",
                    pd.DataFrame(report.qq_pairs, columns=["theoretical", "observed"]),
                )
                summary = dispersion_summary(report)
                summaries[tag] = {
                    **dataclasses.asdict(summary),
                    "dropped_rows": row_col.dropped_rows,
                    "dropped_cols": row_col.dropped_cols,
                }
            od.write_json("dispersion.json", summaries)

    table = Table(title=f"Pearson residuals, counts > {cutoff}")
    table.add_column("model")
    table.add_column("cells")
    table.add_column("mean")
    table.add_column("variance")
    for tag, s in summaries.items():
        table.add_row(tag, str(s["count"]), f"{s['mean']:.3f}", f"{s['variance']:.3f}")
    print(table)


@app.command("pca")
def pca_command(
    counts: Path = COUNTS,
    meta: Path = META,
    out: Path = OUT,
    fit_dir: Path = Option(..., "--fit-dir", envvar=_env("FIT_DIR")),
    all_columns: bool = Option(False, "--all-columns", help="score replicate columns too"),
    align: bool = Option(True, "--align/--no-align", help="align scores to geography when known"),
):
    """PCA of the posterior columns"""
    with _exit_on_error():
        with OutputDir(out, "pca", {"all_columns": all_columns, "align": align}) as od:
            cm, cohort = _load(od, counts, meta)
            result = _load_fit(od, fit_dir, cm, "zhat.csv")
            columns = None if all_columns else cohort.unique_set
            pca = pca_scores(result.posterior, columns, cm.animal_column_ids, cohort.population)
            if align:
                if cohort.has_complete_geo(pca.columns):
                    pca = align_pca(pca, cohort)
                else:
                    logger.warning("Skip geographic alignment, coordinates incomplete")
            od.write_csv("pca.csv", pca.to_frame())
            info = {"explained_variance": pca.explained_variance.tolist()}
            if pca.alignment is not None:
                info.update(
                    scale=pca.alignment.scale,
                    rotation=pca.alignment.rotation.tolist(),
                    translation=pca.alignment.translation.tolist(),
                    residual=pca.alignment.residual,
                )
            od.write_json("pca.json", info)
    print(info)


@app.command("simulate")
def simulate_command(
    out: Path = OUT,
    spec: str = Option("default", "--spec", envvar=_env("SPEC"), help="'default' or a python file defining `spec`"),
    seed: Optional[int] = Option(None, "--seed", envvar=_env("SEED"), help="overrides the seed of the spec"),
):
    """Draw a synthetic cohort with known carrier status"""
    with _exit_on_error():
        if spec == "default":
            sim_spec = default_spec()
        else:
            sim_spec = get_cfg(spec)
            if not isinstance(sim_spec, SimSpec):
                raise ValidationError(f"`spec` in {spec} is not a SimSpec")
        if seed is not None:
            sim_spec = dataclasses.replace(sim_spec, seed=seed)
        config = dataclasses.asdict(sim_spec)
        config["pi_model"] = sim_spec.pi_model.value
        with OutputDir(out, "simulate", config) as od:
            if spec != "default":
                od.add_input("spec", spec)
            sim = simulate(sim_spec)
            write_simulation(sim, od)
    print(f"{sim.cm.m}×{sim.cm.n} counts written to {out}")


@app.command("summarize")
def summarize_command(
    counts: Path = COUNTS,
    out: Path = OUT,
    meta: Optional[Path] = Option(None, "--meta", envvar=_env("META")),
    fit_dir: Optional[Path] = Option(None, "--fit-dir", envvar=_env("FIT_DIR")),
):
    """Count statistics, and estimate and posterior tables of a fit"""
    with _exit_on_error():
        with OutputDir(out, "summarize") as od:
            cm, cohort = _load(od, counts, meta)
            summary = summarize_counts(cm).to_dict()
            if fit_dir is not None:
                result = _load_fit(od, fit_dir, cm, "report.json")
                tables = fit_summary_tables(cm, result, cohort)
                od.write_csv("viruses.csv", tables.viruses)
                od.write_csv("animals.csv", tables.animals)
                od.write_csv("posterior_by_count.csv", tables.posterior_by_count)
                od.write_csv("posterior_histogram.csv", tables.posterior_histogram)
                summary.update(
                    posterior_below_001=tables.fraction_low, posterior_above_099=tables.fraction_high
                )
            od.write_json("summary.json", summary)

    table = Table(title=str(counts))
    table.add_column("statistic")
    table.add_column("value")
    for k, v in summary.items():
        table.add_row(k, f"{v:.4g}" if isinstance(v, float) else str(v))
    print(table)


if __name__ == "__main__":
    app()
