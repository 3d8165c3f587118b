"""Experiment harness: run directories, the evaluation pool and everything written to disk."""

from __future__ import annotations

import json
from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from itertools import repeat
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from loguru import logger
from sqlalchemy.exc import SQLAlchemyError

from legforge import __version__
from legforge.analytics import GenerationStats, best_individual, generation_stats
from legforge.config import ExperimentConfig, parse_config
from legforge.errors import (
    ConfigError,
    DegenerateGenomeError,
    EmptyPhenotypeError,
    ExportError,
    LegforgeError,
    RunAbortedError,
)
from legforge.ga import GAState, Individual, evolve
from legforge.genome import LegGenome, read_genome, write_genome
from legforge.log import add_run_sink
from legforge.mesh import TriangleMesh, extract_surface, smooth, write_obj, write_stl
from legforge.run_store import RunLedger
from legforge.simulation import EnvironmentModel, EvaluationConfig, EvaluationResult, evaluate_or_reject
from legforge.structcheck import StructuralConfig, check_structure
from legforge.voxelizer import VoxelizerConfig, phenotype

MANIFEST = "manifest.json"
INCOMPLETE_MARKER = "INCOMPLETE"
STATS_CSV = "stats.csv"
FINAL_POPULATION_CSV = "final_population.csv"
BEST_LEG = "best_leg.json"
FLOAT_FORMAT = "%.10g"


# ---------------------------------------------------------------------------
# Evaluation pool
# ---------------------------------------------------------------------------


class PoolEvaluator:
    """Evaluates batches of genomes in-process (concurrency 1) or on a process pool; order is preserved."""

    def __init__(self, env: EnvironmentModel, config: EvaluationConfig, concurrency: int = 1) -> None:
        self.env = env
        self.config = config
        self.concurrency = concurrency
        self.evaluations = 0
        self._executor: ProcessPoolExecutor | None = None

    def __enter__(self) -> PoolEvaluator:
        if self.concurrency > 1:
            self._executor = ProcessPoolExecutor(max_workers=self.concurrency)
        return self

    def __exit__(self, *exc_info: object) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True, cancel_futures=True)
            self._executor = None

    def __call__(self, genomes: Sequence[LegGenome]) -> list[EvaluationResult]:
        if self._executor is None:
            results = [evaluate_or_reject(genome, self.env, self.config) for genome in genomes]
        else:
            results = list(self._executor.map(evaluate_or_reject, genomes, repeat(self.env), repeat(self.config)))
        self.evaluations += len(results)
        return results


@contextmanager
def evaluation_mapper(concurrency: int) -> Iterator[Callable[..., Any]]:
    """A ``map`` replacement backed by a process pool when concurrency > 1."""
    if concurrency <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=concurrency) as executor:
        yield executor.map


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def leg_mesh(
    genome: LegGenome,
    *,
    voxelizer: VoxelizerConfig | None = None,
    structural: StructuralConfig | None = None,
    smooth_iterations: int = 0,
) -> TriangleMesh:
    """Printable surface of the leg that the simulator sees (after the structural filter)."""
    grid, _ = check_structure(phenotype(genome, voxelizer), structural)
    return smooth(extract_surface(grid), smooth_iterations)


def export_leg(
    genome: LegGenome,
    obj_path: Path | None = None,
    stl_path: Path | None = None,
    *,
    smooth_iterations: int = 0,
    voxelizer: VoxelizerConfig | None = None,
    structural: StructuralConfig | None = None,
) -> TriangleMesh:
    mesh = leg_mesh(genome, voxelizer=voxelizer, structural=structural, smooth_iterations=smooth_iterations)
    if obj_path is not None:
        write_obj(mesh, obj_path)
    if stl_path is not None:
        write_stl(mesh, stl_path)
    return mesh


# ---------------------------------------------------------------------------
# Run directories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunSummary:
    run_dir: Path
    environment: str
    repeat: int
    generations: int
    evaluations: int
    best_id: str | None
    best_fitness: float | None
    best_voxel_count: int | None


def run_dir_name(kind: str, repeat_index: int) -> str:
    return f"{kind}-r{repeat_index:02d}"


def prepare_output_dir(path: Path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        marker = path / ".legforge-write-test"
        marker.write_text("", encoding="utf-8")
        marker.unlink()
    except OSError as exc:
        raise ExportError(path, exc.strerror or str(exc)) from exc
    return path


def write_manifest(run_dir: Path, payload: dict[str, Any]) -> Path:
    path = run_dir / MANIFEST
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(run_dir: Path) -> dict[str, Any]:
    return json.loads((Path(run_dir) / MANIFEST).read_text(encoding="utf-8"))


def _write_stats_row(path: Path, stats: GenerationStats) -> None:
    frame = pd.DataFrame([stats.as_row()])
    first = stats.generation == 0
    frame.to_csv(path, mode="w" if first else "a", header=first, index=False, float_format=FLOAT_FORMAT)


def _population_frame(population: Sequence[Individual]) -> pd.DataFrame:
    rows = []
    for ind in population:
        result = ind.result
        rows.append(
            {
                "id": ind.id,
                "fitness": result.fitness if result else np.nan,
                "tau_per_step": result.tau_per_step if result else np.nan,
                "delta": result.delta if result else np.nan,
                "voxel_count": result.voxel_count if result else 0,
                "rejected": ind.rejected,
                "reason": result.reason if result else "",
                "born": ind.born,
                "lineage": " ".join(ind.genome.lineage),
            }
        )
    return pd.DataFrame(rows)


def _export_population(run_dir: Path, state: GAState, config: ExperimentConfig) -> None:
    for ind in state.population:
        write_genome(ind.genome, run_dir / "genomes" / f"{ind.id}.json")
        if not config.experiment.export_meshes:
            continue
        try:
            export_leg(
                ind.genome,
                run_dir / "meshes" / f"{ind.id}.obj",
                run_dir / "meshes" / f"{ind.id}.stl",
                smooth_iterations=config.experiment.smooth_iterations,
                voxelizer=config.voxelizer,
                structural=config.structural,
            )
        except (DegenerateGenomeError, EmptyPhenotypeError) as exc:
            logger.warning("no mesh for genome={}: {}", ind.id, exc)
    _population_frame(state.population).to_csv(
        run_dir / FINAL_POPULATION_CSV, index=False, float_format=FLOAT_FORMAT
    )
    best = best_individual(state.population)
    if best is not None:
        write_genome(best.genome, run_dir / BEST_LEG)


def run_single(config: ExperimentConfig, repeat_index: int) -> RunSummary:
    env = config.environment
    run_dir = Path(config.experiment.output_dir) / run_dir_name(env.kind, repeat_index)
    log = logger.bind(run=run_dir.name, repeat=repeat_index)
    manifest: dict[str, Any] = {
        "software": "legforge",
        "version": __version__,
        "environment": env.kind,
        "repeat": repeat_index,
        "master_seed": config.ga.master_seed,
        # every individual draws from SeedSequence([master_seed, repeat, generation, index])
        "rng_key": [config.ga.master_seed, repeat_index],
        "status": "running",
        "generations_completed": 0,
        "evaluations": 0,
        "config": config.dump(),
    }
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / INCOMPLETE_MARKER).write_text("run in progress or aborted\n", encoding="utf-8")
        write_manifest(run_dir, manifest)
    except OSError as exc:
        raise RunAbortedError(run_dir, exc.strerror or str(exc)) from exc

    sink = add_run_sink(run_dir / "run.log")
    ledger = RunLedger.in_run_dir(run_dir)
    stats_path = run_dir / STATS_CSV

    def on_generation(state: GAState) -> None:
        stats = generation_stats(state.population, state.generation)
        ledger.record_individuals(state.generation, state.evaluated)
        ledger.record_stats(stats)
        _write_stats_row(stats_path, stats)
        log.info(
            "generation={} best={:.6g} mean={:.6g} worst={:.6g} rejects={}",
            stats.generation,
            stats.best,
            stats.mean,
            stats.worst,
            stats.reject_count,
        )

    log.info("run start env={} generations={} pop={}", env.kind, config.ga.generations, config.ga.pop_size)
    try:
        with PoolEvaluator(env, config.evaluation, config.experiment.concurrency) as evaluator:
            state = evolve(config.ga, evaluator, repeat=repeat_index, on_generation=on_generation)
        _export_population(run_dir, state, config)
    except (OSError, SQLAlchemyError, LegforgeError) as exc:
        manifest["status"] = "aborted"
        manifest["error"] = str(exc)
        try:
            write_manifest(run_dir, manifest)
        except OSError:
            pass
        log.error("run aborted: {}", exc)
        raise RunAbortedError(run_dir, str(exc)) from exc
    finally:
        ledger.dispose()
        logger.remove(sink)

    best = best_individual(state.population)
    summary = RunSummary(
        run_dir=run_dir,
        environment=env.kind,
        repeat=repeat_index,
        generations=state.generation,
        evaluations=state.evaluations,
        best_id=best.id if best else None,
        best_fitness=best.fitness if best else None,
        best_voxel_count=best.result.voxel_count if best and best.result else None,
    )
    manifest.update(
        status="complete",
        generations_completed=state.generation,
        evaluations=state.evaluations,
        best_id=summary.best_id,
        best_fitness=summary.best_fitness,
        best_voxel_count=summary.best_voxel_count,
    )
    write_manifest(run_dir, manifest)
    (run_dir / INCOMPLETE_MARKER).unlink(missing_ok=True)
    log.info("run complete best={} evaluations={}", summary.best_fitness, summary.evaluations)
    return summary


def run_experiment(config: ExperimentConfig) -> list[RunSummary]:
    """One run directory per repeat under ``config.experiment.output_dir``."""
    prepare_output_dir(config.experiment.output_dir)
    logger.info(
        "experiment start env={} repeats={} concurrency={}",
        config.environment.kind,
        config.experiment.repeats,
        config.experiment.concurrency,
    )
    summaries = [run_single(config, index) for index in range(config.experiment.repeats)]
    logger.info("experiment complete runs={}", len(summaries))
    return summaries


# ---------------------------------------------------------------------------
# Reading finished runs
# ---------------------------------------------------------------------------


def discover_runs(runs_dir: Path) -> list[Path]:
    """Completed run directories below ``runs_dir``, sorted by name."""
    runs_dir = Path(runs_dir)
    found = []
    for manifest_path in sorted(runs_dir.glob(f"*/{MANIFEST}")):
        run_dir = manifest_path.parent
        if (run_dir / INCOMPLETE_MARKER).exists():
            continue
        if read_manifest(run_dir).get("status") == "complete":
            found.append(run_dir)
    return found


@dataclass(frozen=True)
class BestLeg:
    environment: str
    run_dir: Path
    genome: LegGenome
    fitness: float | None
    voxel_count: int | None
    # configuration the run was trained with, as recorded in its manifest
    config: ExperimentConfig


def load_best_legs(runs_dir: Path) -> list[BestLeg]:
    legs = []
    for run_dir in discover_runs(runs_dir):
        if not (run_dir / BEST_LEG).exists():
            continue
        manifest = read_manifest(run_dir)
        legs.append(
            BestLeg(
                environment=str(manifest["environment"]),
                run_dir=run_dir,
                genome=read_genome(run_dir / BEST_LEG),
                fitness=manifest.get("best_fitness"),
                voxel_count=manifest.get("best_voxel_count"),
                config=parse_config(manifest.get("config", {})),
            )
        )
    return legs


def _coefficients(config: ExperimentConfig) -> EnvironmentModel:
    return config.environment.model_copy(update={"kind": "soil"})


def shared_evaluation(legs: Sequence[BestLeg]) -> tuple[EnvironmentModel, EvaluationConfig]:
    """The environment coefficients and evaluation settings all runs were trained with.

    Raises ``ConfigError`` when two runs differ in either.
    """
    if not legs:
        raise LegforgeError("no best legs to evaluate")
    reference = legs[0]
    for leg in legs[1:]:
        same_medium = _coefficients(leg.config) == _coefficients(reference.config)
        if not same_medium or leg.config.evaluation != reference.config.evaluation:
            raise ConfigError(
                f"{leg.run_dir.name} and {reference.run_dir.name} were trained with different environment "
                "coefficients or evaluation settings"
            )
    return reference.config.environment, reference.config.evaluation


def legs_by_environment(legs: Sequence[BestLeg]) -> dict[str, list[LegGenome]]:
    grouped: dict[str, list[LegGenome]] = {}
    for leg in legs:
        grouped.setdefault(leg.environment, []).append(leg.genome)
    return grouped
