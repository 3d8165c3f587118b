from __future__ import annotations

from pathlib import Path
from typing import Annotated, Optional

import pandas as pd
import typer
from loguru import logger

from legforge.analytics import (
    aggregate_progression,
    convergence_generation,
    cross_evaluate,
    diagonal_dominance,
    jaccard_matrix,
    morphology_summary,
    plot_progress,
    render_progress_ascii,
    similarity_matrix,
    similarity_pattern,
)
from legforge.config import default_log_level, load_config
from legforge.errors import LegforgeError
from legforge.experiment import (
    FLOAT_FORMAT,
    evaluation_mapper,
    export_leg,
    legs_by_environment,
    load_best_legs,
    run_experiment,
    shared_evaluation,
)
from legforge.genome import read_genome
from legforge.log import configure_logging
from legforge.simulation import ENVIRONMENTS, EnvironmentKind, evaluate_leg, write_trace_csv

app = typer.Typer(help="Evolve 3D-printable robot legs for soil, gravel and fluid.", no_args_is_help=True)

IMAGE_SUFFIXES = {".png", ".svg", ".pdf", ".jpg", ".jpeg"}


def _fail(exc: Exception) -> typer.Exit:
    typer.echo(f"error: {exc}", err=True)
    return typer.Exit(code=1)


def _check_env(kind: str) -> EnvironmentKind:
    if kind not in ENVIRONMENTS:
        raise typer.BadParameter(f"must be one of {', '.join(ENVIRONMENTS)}", param_hint="--env")
    return kind  # type: ignore[return-value]


@app.callback()
def main(
    log_level: Annotated[
        Optional[str], typer.Option("--log-level", help="Log level; defaults to LEGFORGE_LOG_LEVEL or INFO.")
    ] = None,
    log_json: Annotated[bool, typer.Option("--log-json", help="Write stderr log records as JSON lines.")] = False,
    log_file: Annotated[Optional[Path], typer.Option("--log-file", help="Also write JSON log records here.")] = None,
) -> None:
    configure_logging(log_level or default_log_level(), json=log_json, logfile=log_file)


@app.command()
def evolve(
    config_path: Annotated[Optional[Path], typer.Option("--config", help="Experiment TOML file.")] = None,
    env: Annotated[Optional[str], typer.Option("--env", help="Override the configured environment.")] = None,
    output_dir: Annotated[Optional[Path], typer.Option("--output-dir", help="Override the output directory.")] = None,
) -> None:
    """Run the configured experiment: one run directory per repeat."""
    try:
        config = load_config(config_path)
        if env is not None:
            config = config.for_environment(_check_env(env))
        if output_dir is not None:
            config = config.with_output_dir(output_dir)
        summaries = run_experiment(config)
    except LegforgeError as exc:
        raise _fail(exc) from exc
    for summary in summaries:
        typer.echo(
            f"{summary.run_dir}\tbest={summary.best_fitness!r}\tevaluations={summary.evaluations}"
            f"\tgenerations={summary.generations}"
        )


@app.command("eval")
def evaluate(
    genome_path: Annotated[Path, typer.Option("--genome", help="Genome JSON file.")],
    env: Annotated[str, typer.Option("--env", help="soil, gravel or fluid.")],
    config_path: Annotated[Optional[Path], typer.Option("--config", help="Experiment TOML file.")] = None,
    trace: Annotated[Optional[Path], typer.Option("--trace", help="Write per-step joint torques as CSV.")] = None,
) -> None:
    """Evaluate one genome and print fitness, torque per step, delta and the rejection flag."""
    kind = _check_env(env)
    try:
        config = load_config(config_path).for_environment(kind)
        evaluation = config.evaluation
        if trace is not None:
            simulation = evaluation.simulation.model_copy(update={"record_trace": True})
            evaluation = evaluation.model_copy(update={"simulation": simulation})
        result = evaluate_leg(read_genome(genome_path), config.environment, evaluation)
        if trace is not None and not result.rejected:
            write_trace_csv(result, trace)
    except (LegforgeError, OSError) as exc:
        raise _fail(exc) from exc
    typer.echo(f"fitness={result.fitness!r}")
    typer.echo(f"tau_per_step={result.tau_per_step!r}")
    typer.echo(f"delta={result.delta!r}")
    typer.echo(f"rejected={str(result.rejected).lower()}")
    if result.reason:
        typer.echo(f"reason={result.reason}")


@app.command()
def export(
    genome_path: Annotated[Path, typer.Option("--genome", help="Genome JSON file.")],
    obj: Annotated[Path, typer.Option("--obj", help="OBJ output path.")],
    stl: Annotated[Optional[Path], typer.Option("--stl", help="Binary STL output path.")] = None,
    smooth_iterations: Annotated[int, typer.Option("--smooth", min=0, help="Laplacian smoothing passes.")] = 0,
    config_path: Annotated[Optional[Path], typer.Option("--config", help="Experiment TOML file.")] = None,
) -> None:
    """Write the printable mesh of a genome."""
    try:
        config = load_config(config_path)
        mesh = export_leg(
            read_genome(genome_path),
            obj,
            stl,
            smooth_iterations=smooth_iterations,
            voxelizer=config.voxelizer,
            structural=config.structural,
        )
    except (LegforgeError, OSError) as exc:
        raise _fail(exc) from exc
    typer.echo(f"vertices={mesh.n_vertices} triangles={mesh.n_triangles}")


@app.command("cross-eval")
def cross_eval(
    runs: Annotated[Path, typer.Option("--runs", help="Directory holding run directories.")],
    out: Annotated[Path, typer.Option("--out", help="CSV output path.")],
    concurrency: Annotated[int, typer.Option("--concurrency", min=1)] = 1,
) -> None:
    """Mean fitness of each environment's best legs in every environment.

    Legs are evaluated with the coefficients and settings recorded in their runs' manifests.
    """
    try:
        legs = load_best_legs(runs)
        if not legs:
            raise LegforgeError(f"no completed runs with a best leg under {runs}")
        template, evaluation = shared_evaluation(legs)
        grouped = legs_by_environment(legs)
        envs = [template.model_copy(update={"kind": kind}) for kind in ENVIRONMENTS if kind in grouped]
        with evaluation_mapper(concurrency) as mapper:
            matrix = cross_evaluate(grouped, envs, evaluation, mapper=mapper)
        out.parent.mkdir(parents=True, exist_ok=True)
        matrix.to_csv(out, float_format=FLOAT_FORMAT)
    except (LegforgeError, OSError) as exc:
        raise _fail(exc) from exc
    typer.echo(matrix.to_string())
    for column, native_best in diagonal_dominance(matrix).items():
        typer.echo(f"{column}: native legs {'best' if native_best else 'not best'}")


@app.command()
def similarity(
    runs: Annotated[Path, typer.Option("--runs", help="Directory holding run directories.")],
    out: Annotated[Path, typer.Option("--out", help="CSV output path.")],
    metric: Annotated[str, typer.Option("--metric", help="agreement or jaccard.")] = "agreement",
) -> None:
    """Pairwise voxel similarity between the best legs of all runs."""
    if metric not in ("agreement", "jaccard"):
        raise typer.BadParameter("must be agreement or jaccard", param_hint="--metric")
    try:
        legs = load_best_legs(runs)
        genomes = [leg.genome for leg in legs]
        matrix = jaccard_matrix(genomes) if metric == "jaccard" else similarity_matrix(genomes)
        labels = [f"{leg.environment}:{leg.run_dir.name}" for leg in legs]
        frame = pd.DataFrame(matrix, index=labels, columns=labels)
        out.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out, float_format=FLOAT_FORMAT)
    except (LegforgeError, ValueError, OSError) as exc:
        raise _fail(exc) from exc
    pattern = similarity_pattern([leg.environment for leg in legs], matrix)
    typer.echo(f"within={pattern.within:.4f} cross={pattern.cross:.4f}")


@app.command()
def plot(
    stats: Annotated[list[Path], typer.Option("--stats", help="stats.csv of one or more runs.")],
    out: Annotated[str, typer.Option("--out", help="Image path, text path, or '-' for the terminal.")],
    tolerance: Annotated[
        float, typer.Option("--tolerance", min=0.0, help="Best-fitness band that counts as converged.")
    ] = 0.0,
) -> None:
    """Fitness progression; several stats files are averaged with standard-error bands."""
    try:
        frames = [pd.read_csv(path) for path in stats]
    except OSError as exc:
        raise _fail(exc) from exc
    if len(frames) == 1:
        table = frames[0]
        generations, best = table["generation"].to_numpy(), table["best"]
    else:
        table = aggregate_progression(frames)
        generations, best = table.index.to_numpy(), table["best_mean"]
    converged = int(generations[convergence_generation(best, tolerance)])
    suffix = Path(out).suffix.lower()
    if out != "-" and suffix in IMAGE_SUFFIXES:
        plot_progress(table, Path(out))
        typer.echo(f"wrote {out}")
        typer.echo(f"convergence_generation={converged}")
        return
    if len(frames) > 1:
        table = table.rename(columns={"best_mean": "best", "mean_mean": "mean", "worst_mean": "worst"})
        table = table.reset_index()
    text = render_progress_ascii(table)
    if out == "-":
        typer.echo(text, nl=False)
    else:
        Path(out).write_text(text, encoding="utf-8")
        typer.echo(f"wrote {out}")
    typer.echo(f"convergence_generation={converged}")


@app.command()
def morphology(
    runs: Annotated[Path, typer.Option("--runs", help="Directory holding run directories.")],
    out: Annotated[Optional[Path], typer.Option("--out", help="Optional CSV output path.")] = None,
) -> None:
    """Occupied-voxel count of the best legs, summarised per environment."""
    counts: dict[str, list[int]] = {}
    for leg in load_best_legs(runs):
        if leg.voxel_count is not None:
            counts.setdefault(leg.environment, []).append(int(leg.voxel_count))
    if not counts:
        raise _fail(LegforgeError(f"no completed runs with a best leg under {runs}"))
    summary = morphology_summary(counts)
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        summary.to_csv(out, float_format=FLOAT_FORMAT)
    logger.debug("morphology environments={}", list(summary.index))
    typer.echo(summary.to_string())


if __name__ == "__main__":
    app()
