from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest

from legforge.analytics import (
    STATS_COLUMNS,
    aggregate_progression,
    best_individual,
    convergence_generation,
    cross_evaluate,
    diagonal_dominance,
    generation_stats,
    jaccard_matrix,
    morphology_summary,
    plot_progress,
    render_progress_ascii,
    similarity_matrix,
    similarity_pattern,
    stats_frame,
)
from legforge.ga import Individual
from legforge.genome import random_genome
from legforge.simulation import SENTINEL, EnvironmentModel, EvaluationResult
from legforge.voxelizer import GRID_SHAPE, VoxelGrid

_PENALTY = {("soil", "soil"): 1.0, ("soil", "fluid"): 5.0, ("fluid", "soil"): 4.0, ("fluid", "fluid"): 2.0}


def _individual(fitness: float, index: int, *, rejected: bool = False, voxels: int = 0) -> Individual:
    genome = random_genome(np.random.default_rng(index), genome_id=f"leg-{index:02d}")
    if rejected:
        return Individual(genome, EvaluationResult.reject("disconnected", 10))
    result = EvaluationResult(tau=fitness, delta=0.0, fitness=fitness, rejected=False, n_steps=10, voxel_count=voxels)
    return Individual(genome, result)


def _fake_mapper(fn, genomes, envs, configs):  # noqa: ANN001
    for genome, env, _ in zip(genomes, envs, configs):
        trained = genome.id.split("-")[0]
        fitness = _PENALTY[(trained, env.kind)]
        yield EvaluationResult(tau=fitness, delta=0.0, fitness=fitness, rejected=False, n_steps=1)


def _column_grid(ix: int, iz: int) -> VoxelGrid:
    occupancy = np.zeros(GRID_SHAPE, dtype=bool)
    occupancy[ix, :, iz] = True
    return VoxelGrid(occupancy)


def test_generation_stats_basic() -> None:
    population = [_individual(f, i, voxels=100 + i) for i, f in enumerate([8.0, 9.0, 10.0])]
    stats = generation_stats(population, generation=4)
    assert (stats.generation, stats.best, stats.mean, stats.worst) == (4, 8.0, 9.0, 10.0)
    assert stats.stddev == pytest.approx(math.sqrt(2.0 / 3.0))
    assert stats.reject_count == 0
    assert stats.best_voxel_count == 100


def test_generation_stats_excludes_rejected() -> None:
    population = [_individual(8.0, 0), _individual(SENTINEL, 1, rejected=True)]
    stats = generation_stats(population)
    assert stats.best == 8.0
    assert stats.worst == 8.0
    assert stats.reject_count == 1


def test_generation_stats_all_rejected() -> None:
    stats = generation_stats([_individual(SENTINEL, i, rejected=True) for i in range(3)])
    assert stats.all_rejected
    assert math.isnan(stats.best)
    assert stats.reject_count == 3
    assert best_individual([_individual(SENTINEL, 0, rejected=True)]) is None


def test_stats_frame_columns() -> None:
    frame = stats_frame([generation_stats([_individual(1.0, 0)], g) for g in range(3)])
    assert tuple(frame.columns) == STATS_COLUMNS
    assert list(frame["generation"]) == [0, 1, 2]


def test_cross_evaluate_matrix() -> None:
    legs = {
        "soil": [random_genome(np.random.default_rng(i), genome_id=f"soil-{i}") for i in range(2)],
        "fluid": [random_genome(np.random.default_rng(9), genome_id="fluid-0")],
    }
    envs = [EnvironmentModel.preset("soil"), EnvironmentModel.preset("fluid")]
    matrix = cross_evaluate(legs, envs, mapper=_fake_mapper)
    assert matrix.index.name == "trained_in"
    assert matrix.loc["soil", "fluid"] == 5.0
    assert matrix.loc["fluid", "soil"] == 4.0
    assert diagonal_dominance(matrix) == {"soil": True, "fluid": True}


def test_diagonal_dominance_detects_a_better_foreign_leg() -> None:
    matrix = pd.DataFrame([[3.0, 1.0], [2.0, 4.0]], index=["soil", "gravel"], columns=["soil", "gravel"])
    assert diagonal_dominance(matrix) == {"soil": False, "gravel": False}


def test_similarity_matrix_is_symmetric_with_full_diagonal() -> None:
    grids = [_column_grid(1, 1), _column_grid(1, 2), _column_grid(1, 1)]
    matrix = similarity_matrix(grids)
    assert np.allclose(matrix, matrix.T)
    assert np.all(np.diag(matrix) == 100.0)
    assert matrix[0, 2] == 100.0
    assert matrix[0, 1] == pytest.approx(100.0 * (8192 - 64) / 8192)
    assert jaccard_matrix(grids)[0, 1] == 0.0


def test_similarity_needs_two_legs() -> None:
    with pytest.raises(ValueError, match="at least 2"):
        similarity_matrix([_column_grid(0, 0)])


def test_similarity_pattern_within_versus_cross() -> None:
    matrix = np.array(
        [
            [100.0, 95.0, 80.0],
            [95.0, 100.0, 70.0],
            [80.0, 70.0, 100.0],
        ]
    )
    pattern = similarity_pattern(["soil", "soil", "gravel"], matrix)
    assert pattern.within == 95.0
    assert pattern.cross == 75.0
    assert pattern.holds


def test_morphology_summary() -> None:
    frame = morphology_summary({"soil": [400, 450], "gravel": [2000], "fluid": []})
    assert list(frame.index) == ["soil", "gravel"]
    assert frame.loc["soil", "mean"] == 425.0
    assert frame.loc["gravel", "count"] == 1


def test_aggregate_progression_mean_and_stderr() -> None:
    a = pd.DataFrame({"generation": [0, 1], "best": [4.0, 2.0], "mean": [5.0, 3.0], "worst": [6.0, 4.0]})
    b = pd.DataFrame({"generation": [0, 1], "best": [6.0, 2.0], "mean": [7.0, 3.0], "worst": [8.0, 4.0]})
    out = aggregate_progression([a, b])
    assert out.loc[0, "best_mean"] == 5.0
    assert out.loc[0, "best_stderr"] == pytest.approx(1.0)
    assert out.loc[1, "best_stderr"] == 0.0
    single = aggregate_progression([a])
    assert (single["best_stderr"] == 0.0).all()


def test_convergence_generation() -> None:
    assert convergence_generation([9.0, 5.0, 3.0, 3.0, 3.0]) == 2
    assert convergence_generation([3.0, 3.0]) == 0
    assert convergence_generation([9.0, 3.1, 3.0], tolerance=0.2) == 1


def test_render_progress_ascii() -> None:
    stats = pd.DataFrame(
        {"generation": [0, 1, 2], "best": [5.0, 4.0, 3.0], "mean": [6.0, 5.0, 4.0], "worst": [9.0, 8.0, 7.0]}
    )
    text = render_progress_ascii(stats, width=30, height=8)
    assert "b" in text
    assert "w" in text
    assert "gen 0" in text
    assert "gen 2" in text
    assert render_progress_ascii(stats.assign(best=np.nan, mean=np.nan, worst=np.nan)) == "no finite fitness values\n"


def test_plot_progress_writes_png(tmp_path) -> None:
    stats = pd.DataFrame(
        {"generation": [0, 1, 2], "best": [5.0, 4.0, 3.0], "mean": [6.0, 5.0, 4.0], "worst": [9.0, 8.0, 7.0]}
    )
    path = plot_progress(stats, tmp_path / "plots" / "progress.png")
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    aggregated = aggregate_progression([stats, stats])
    assert plot_progress(aggregated, tmp_path / "agg.png").exists()
