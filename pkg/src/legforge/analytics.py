from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from matplotlib.figure import Figure

from legforge.ga import Individual
from legforge.genome import LegGenome
from legforge.simulation import EnvironmentModel, EvaluationConfig, EvaluationResult, evaluate_or_reject
from legforge.voxelizer import (
    VoxelGrid,
    VoxelizerConfig,
    jaccard_similarity,
    phenotype,
    voxel_similarity,
)

STATS_COLUMNS = ("generation", "best", "mean", "worst", "stddev", "reject_count", "best_voxel_count")

Mapper = Callable[..., Iterable[EvaluationResult]]


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best: float
    mean: float
    worst: float
    stddev: float
    reject_count: int
    best_voxel_count: int
    all_rejected: bool = False

    def as_row(self) -> dict[str, float | int]:
        row = asdict(self)
        return {column: row[column] for column in STATS_COLUMNS}


def generation_stats(population: Sequence[Individual], generation: int = 0) -> GenerationStats:
    """Order statistics over non-rejected fitnesses; rejected individuals are only counted."""
    accepted = [ind for ind in population if not ind.rejected]
    reject_count = len(population) - len(accepted)
    if not accepted:
        nan = math.nan
        return GenerationStats(generation, nan, nan, nan, nan, reject_count, 0, all_rejected=True)
    fitness = np.array([ind.fitness for ind in accepted])
    best = min(accepted, key=Individual.rank_key)
    return GenerationStats(
        generation=generation,
        best=float(fitness.min()),
        mean=float(fitness.mean()),
        worst=float(fitness.max()),
        stddev=float(fitness.std(ddof=0)),
        reject_count=reject_count,
        best_voxel_count=best.result.voxel_count if best.result is not None else 0,
    )


def stats_frame(stats: Iterable[GenerationStats]) -> pd.DataFrame:
    return pd.DataFrame([record.as_row() for record in stats], columns=list(STATS_COLUMNS))


def best_individual(population: Sequence[Individual]) -> Individual | None:
    """Minimum-fitness non-rejected individual, or None when everything was rejected."""
    accepted = [ind for ind in population if not ind.rejected]
    return min(accepted, key=Individual.rank_key) if accepted else None


# ---------------------------------------------------------------------------
# Cross-environment evaluation
# ---------------------------------------------------------------------------


def cross_evaluate(
    best_legs: Mapping[str, Sequence[LegGenome]],
    envs: Sequence[EnvironmentModel],
    config: EvaluationConfig | None = None,
    *,
    mapper: Mapper = map,
) -> pd.DataFrame:
    """Mean fitness of each row environment's best legs when run in each column environment.

    ``mapper`` has the signature of ``map`` so cells can be computed by an executor.
    """
    config = config or EvaluationConfig()
    labels = [env.kind for env in envs]
    jobs = [(row, col, genome) for row in labels for col in envs for genome in best_legs.get(row, ())]
    results = list(
        mapper(evaluate_or_reject, [job[2] for job in jobs], [job[1] for job in jobs], [config] * len(jobs))
    )
    matrix = pd.DataFrame(np.nan, index=pd.Index(labels, name="trained_in"), columns=labels)
    for row in labels:
        for col in labels:
            cell = [res.fitness for (r, c, _), res in zip(jobs, results) if r == row and c.kind == col]
            if cell:
                matrix.loc[row, col] = float(np.mean(cell))
    return matrix


def diagonal_dominance(matrix: pd.DataFrame) -> dict[str, bool]:
    """Per column: whether the native (diagonal) entry is the column minimum."""
    return {col: bool(matrix.loc[col, col] <= matrix[col].min()) for col in matrix.columns if col in matrix.index}


# ---------------------------------------------------------------------------
# Morphology and similarity
# ---------------------------------------------------------------------------


def _as_grid(leg: LegGenome | VoxelGrid, voxelizer: VoxelizerConfig | None) -> VoxelGrid:
    return leg if isinstance(leg, VoxelGrid) else phenotype(leg, voxelizer)


def similarity_matrix(
    legs: Sequence[LegGenome | VoxelGrid],
    *,
    metric: Callable[[VoxelGrid, VoxelGrid], float] = voxel_similarity,
    voxelizer: VoxelizerConfig | None = None,
) -> np.ndarray:
    if len(legs) < 2:
        raise ValueError(f"similarity needs at least 2 legs, got {len(legs)}")
    grids = [_as_grid(leg, voxelizer) for leg in legs]
    n = len(grids)
    matrix = np.full((n, n), 100.0)
    for i in range(n):
        for j in range(i + 1, n):
            matrix[i, j] = matrix[j, i] = metric(grids[i], grids[j])
    return matrix


def jaccard_matrix(legs: Sequence[LegGenome | VoxelGrid], *, voxelizer: VoxelizerConfig | None = None) -> np.ndarray:
    return similarity_matrix(legs, metric=jaccard_similarity, voxelizer=voxelizer)


@dataclass(frozen=True)
class SimilarityPattern:
    within: float
    cross: float

    @property
    def holds(self) -> bool:
        return self.within >= self.cross


def similarity_pattern(labels: Sequence[str], matrix: np.ndarray) -> SimilarityPattern:
    """Mean off-diagonal similarity between legs of the same environment versus different environments."""
    labels_array = np.asarray(labels)
    same = labels_array[:, None] == labels_array[None, :]
    off_diagonal = ~np.eye(len(labels_array), dtype=bool)
    within = matrix[same & off_diagonal]
    cross = matrix[~same]
    return SimilarityPattern(
        within=float(within.mean()) if within.size else math.nan,
        cross=float(cross.mean()) if cross.size else math.nan,
    )


def morphology_summary(voxel_counts: Mapping[str, Sequence[int]]) -> pd.DataFrame:
    rows = {
        env: {"count": len(counts), "mean": float(np.mean(counts)), "std": float(np.std(counts, ddof=0))}
        for env, counts in voxel_counts.items()
        if len(counts)
    }
    frame = pd.DataFrame.from_dict(rows, orient="index", columns=["count", "mean", "std"])
    frame.index.name = "environment"
    return frame


# ---------------------------------------------------------------------------
# Fitness progression
# ---------------------------------------------------------------------------


def aggregate_progression(frames: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """Mean and standard error across repeats of best/mean/worst fitness per generation."""
    if not frames:
        raise ValueError("no stats frames to aggregate")
    stacked = pd.concat(frames, ignore_index=True)
    grouped = stacked.groupby("generation")[["best", "mean", "worst"]]
    mean = grouped.mean()
    stderr = (grouped.std(ddof=1) / np.sqrt(grouped.count())).fillna(0.0)
    out = pd.concat([mean.add_suffix("_mean"), stderr.add_suffix("_stderr")], axis=1)
    return out[[f"{col}_{stat}" for col in ("best", "mean", "worst") for stat in ("mean", "stderr")]]


def convergence_generation(best_series: Sequence[float], tolerance: float = 0.0) -> int:
    """First index after which every value stays within ``tolerance`` of the final value."""
    values = np.asarray(best_series, dtype=float)
    if values.size == 0:
        raise ValueError("empty series")
    outside = np.flatnonzero(np.abs(values - values[-1]) > tolerance)
    return int(outside[-1] + 1) if outside.size else 0


def render_progress_ascii(stats: pd.DataFrame, *, width: int = 60, height: int = 16) -> str:
    """Text chart of best (b), mean (m) and worst (w) fitness over generations."""
    series = {"w": stats["worst"], "m": stats["mean"], "b": stats["best"]}
    values = np.concatenate([np.asarray(s, dtype=float) for s in series.values()])
    values = values[np.isfinite(values)]
    if values.size == 0:
        return "no finite fitness values\n"
    low, high = float(values.min()), float(values.max())
    span = high - low or 1.0
    n = len(stats)
    canvas = [[" "] * width for _ in range(height)]
    for mark, column in series.items():
        for i, value in enumerate(np.asarray(column, dtype=float)):
            if not math.isfinite(value):
                continue
            x = 0 if n == 1 else round(i * (width - 1) / (n - 1))
            y = round((value - low) / span * (height - 1))
            canvas[height - 1 - y][x] = mark
    lines = [f"{high:>12.5g} |" + "".join(canvas[0])]
    lines += ["             |" + "".join(row) for row in canvas[1:-1]]
    lines.append(f"{low:>12.5g} |" + "".join(canvas[-1]))
    first, last = int(stats["generation"].iloc[0]), int(stats["generation"].iloc[-1])
    lines.append("             +" + "-" * width)
    lines.append(f"              gen {first}{' ' * max(1, width - 12 - len(str(last)))}gen {last}")
    return "\n".join(lines) + "\n"


def plot_progress(stats: pd.DataFrame, path: Path, *, title: str = "fitness progression") -> Path:
    """PNG plot of per-generation fitness; aggregated frames also get standard-error bands."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig = Figure(figsize=(7, 4))
    ax = fig.subplots()
    generations = stats.index if "generation" not in stats.columns else stats["generation"]
    for name, colour in (("best", "tab:green"), ("mean", "tab:blue"), ("worst", "tab:red")):
        if f"{name}_mean" in stats.columns:
            centre = stats[f"{name}_mean"]
            band = stats[f"{name}_stderr"]
            ax.plot(generations, centre, color=colour, label=name)
            ax.fill_between(generations, centre - band, centre + band, color=colour, alpha=0.2)
        else:
            ax.plot(generations, stats[name], color=colour, label=name)
    ax.set_xlabel("generation")
    ax.set_ylabel("fitness")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    return path
