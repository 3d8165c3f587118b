"""Elitist GA over leg genomes: tournament selection, spline-level two-point crossover, Gaussian plus
structural mutation and mu+lambda survival.

Every child draws from its own generator keyed by (master_seed, repeat, generation, index), so a run is
reproducible no matter how evaluations are scheduled.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from legforge.errors import ConfigError
from legforge.genome import BOUNDS, BezierSpline, ControlPoint, LegGenome, random_genome, random_spline
from legforge.simulation import SENTINEL, EvaluationResult

Evaluator = Callable[[Sequence[LegGenome]], list[EvaluationResult]]
GenerationCallback = Callable[["GAState"], None]


class GAConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    pop_size: int = Field(default=20, ge=1)
    children_per_gen: int = Field(default=20, ge=1)
    generations: int = Field(default=100, ge=0)
    tournament_size: int = Field(default=4, ge=1)
    sigma_fraction: float = Field(default=0.10, ge=0.0, le=1.0)
    p_thickness: float = Field(default=0.2, ge=0.0, le=1.0)
    p_cp_structural: float = Field(default=0.2, ge=0.0, le=1.0)
    p_spline_structural: float = Field(default=0.1, ge=0.0, le=1.0)
    p_add_given_structural: float = Field(default=0.5, ge=0.0, le=1.0)
    master_seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _tournament_fits(self) -> GAConfig:
        if self.tournament_size > self.pop_size:
            raise ValueError(f"tournament_size {self.tournament_size} exceeds pop_size {self.pop_size}")
        return self


def individual_rng(master_seed: int, repeat: int, generation: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, repeat, generation, index]))


def individual_id(repeat: int, generation: int, index: int) -> str:
    return f"r{repeat:02d}-g{generation:03d}-i{index:02d}"


@dataclass(frozen=True)
class Individual:
    genome: LegGenome
    result: EvaluationResult | None = None
    born: int = 0

    @property
    def id(self) -> str:
        return self.genome.id

    @property
    def evaluated(self) -> bool:
        return self.result is not None

    @property
    def fitness(self) -> float:
        if self.result is None:
            raise ValueError(f"individual {self.id} has not been evaluated")
        return self.result.fitness

    @property
    def rejected(self) -> bool:
        return self.result is not None and self.result.rejected

    def rank_key(self) -> tuple[float, int, str]:
        return (self.fitness, self.born, self.id)


@dataclass(frozen=True)
class GAState:
    generation: int
    population: tuple[Individual, ...]
    repeat: int = 0
    evaluations: int = 0
    history: tuple[tuple[Individual, ...], ...] = field(default=())
    # individuals evaluated to reach this state: the initial population, or the newest children
    evaluated: tuple[Individual, ...] = field(default=())

    @property
    def best(self) -> Individual:
        return min(self.population, key=Individual.rank_key)


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def tournament_select(
    population: Sequence[Individual],
    rng: np.random.Generator,
    tournament_size: int = 4,
) -> Individual:
    if len(population) < tournament_size:
        raise ConfigError(f"population of {len(population)} is smaller than tournament size {tournament_size}")
    picks = sorted(int(i) for i in rng.choice(len(population), size=tournament_size, replace=False))
    # min keeps the first of equal keys, so ties go to the lower index
    return population[min(picks, key=lambda i: population[i].fitness)]


def splice(p1: LegGenome, p2: LegGenome, c1: int, c2: int) -> LegGenome:
    m = min(len(p1.splines), len(p2.splines))
    if not 0 <= c1 <= c2 <= m:
        raise ValueError(f"crossover points must satisfy 0 <= c1 <= c2 <= {m}, got ({c1}, {c2})")
    splines = p1.splines[:c1] + p2.splines[c1:c2] + p1.splines[c2:]
    return LegGenome(splines, p1.id, p1.lineage)


def crossover(p1: LegGenome, p2: LegGenome, rng: np.random.Generator) -> LegGenome:
    m = min(len(p1.splines), len(p2.splines))
    c1, c2 = sorted(int(c) for c in rng.integers(0, m + 1, size=2))
    return splice(p1, p2, c1, c2)


StructuralChange = Literal["add", "remove", "skipped"] | None


@dataclass(frozen=True)
class MutationRecord:
    thickness_redrawn: bool = False
    control_point_change: StructuralChange = None
    spline_change: StructuralChange = None


def _perturb(spline: BezierSpline, rng: np.random.Generator, sigma: np.ndarray) -> BezierSpline:
    points = spline.points_array()
    points = np.clip(points + rng.normal(0.0, sigma, size=points.shape), 0.0, BOUNDS.upper)
    return BezierSpline.from_array(points, spline.thickness)


def _random_point(rng: np.random.Generator) -> ControlPoint:
    return ControlPoint.clamped(*rng.uniform(0.0, BOUNDS.upper))


def mutate_with_record(
    genome: LegGenome,
    rng: np.random.Generator,
    config: GAConfig | None = None,
) -> tuple[LegGenome, MutationRecord]:
    config = config or GAConfig()
    sigma = config.sigma_fraction * BOUNDS.upper
    splines = [_perturb(spline, rng, sigma) for spline in genome.splines]

    thickness_redrawn = False
    if rng.random() < config.p_thickness:
        target = int(rng.integers(len(splines)))
        thickness = int(rng.integers(BOUNDS.min_thickness, BOUNDS.max_thickness + 1))
        splines[target] = BezierSpline(splines[target].control_points, thickness)
        thickness_redrawn = True

    cp_change: StructuralChange = None
    if rng.random() < config.p_cp_structural:
        target = int(rng.integers(len(splines)))
        points = list(splines[target].control_points)
        if rng.random() < config.p_add_given_structural:
            if len(points) < BOUNDS.max_control_points:
                points.insert(int(rng.integers(len(points) + 1)), _random_point(rng))
                cp_change = "add"
            else:
                cp_change = "skipped"
        elif len(points) > BOUNDS.min_control_points:
            del points[int(rng.integers(len(points)))]
            cp_change = "remove"
        else:
            cp_change = "skipped"
        splines[target] = BezierSpline(tuple(points), splines[target].thickness)

    spline_change: StructuralChange = None
    if rng.random() < config.p_spline_structural:
        if rng.random() < config.p_add_given_structural:
            if len(splines) < BOUNDS.max_splines:
                splines.append(random_spline(rng))
                spline_change = "add"
            else:
                spline_change = "skipped"
        elif len(splines) > BOUNDS.min_splines:
            del splines[int(rng.integers(len(splines)))]
            spline_change = "remove"
        else:
            spline_change = "skipped"

    mutated = LegGenome(tuple(splines), genome.id, genome.lineage)
    return mutated, MutationRecord(thickness_redrawn, cp_change, spline_change)


def mutate(genome: LegGenome, rng: np.random.Generator, config: GAConfig | None = None) -> LegGenome:
    return mutate_with_record(genome, rng, config)[0]


def survivors(combined: Sequence[Individual], pop_size: int) -> tuple[Individual, ...]:
    """Best ``pop_size`` by fitness, then age (earlier birth first), then id."""
    return tuple(sorted(combined, key=Individual.rank_key)[:pop_size])


# ---------------------------------------------------------------------------
# Loop
# ---------------------------------------------------------------------------


def _evaluate(evaluator: Evaluator, genomes: Sequence[LegGenome], born: int) -> tuple[Individual, ...]:
    results = evaluator(genomes)
    if len(results) != len(genomes):
        raise RuntimeError(f"evaluator returned {len(results)} results for {len(genomes)} genomes")
    return tuple(Individual(genome, result, born) for genome, result in zip(genomes, results))


def initialize_population(config: GAConfig, evaluator: Evaluator, *, repeat: int = 0) -> GAState:
    genomes = [
        random_genome(individual_rng(config.master_seed, repeat, 0, index), genome_id=individual_id(repeat, 0, index))
        for index in range(config.pop_size)
    ]
    population = _evaluate(evaluator, genomes, born=0)
    return GAState(
        generation=0,
        population=population,
        repeat=repeat,
        evaluations=len(population),
        history=(population,),
        evaluated=population,
    )


def make_children(state: GAState, config: GAConfig) -> list[LegGenome]:
    generation = state.generation + 1
    children: list[LegGenome] = []
    for index in range(config.children_per_gen):
        rng = individual_rng(config.master_seed, state.repeat, generation, index)
        mother = tournament_select(state.population, rng, config.tournament_size)
        father = tournament_select(state.population, rng, config.tournament_size)
        child = mutate(crossover(mother.genome, father.genome, rng), rng, config)
        children.append(child.with_id(individual_id(state.repeat, generation, index), (mother.id, father.id)))
    return children


def run_generation(state: GAState, config: GAConfig, evaluator: Evaluator) -> GAState:
    generation = state.generation + 1
    children = _evaluate(evaluator, make_children(state, config), born=generation)
    population = survivors(state.population + children, config.pop_size)
    return replace(
        state,
        generation=generation,
        population=population,
        evaluations=state.evaluations + len(children),
        history=state.history + (population,),
        evaluated=children,
    )


def evolve(
    config: GAConfig,
    evaluator: Evaluator,
    *,
    repeat: int = 0,
    on_generation: GenerationCallback | None = None,
) -> GAState:
    """Run ``config.generations`` generations after the initial population; the callback sees every state."""
    log = logger.bind(repeat=repeat)
    state = initialize_population(config, evaluator, repeat=repeat)
    if on_generation is not None:
        on_generation(state)
    for _ in range(config.generations):
        state = run_generation(state, config, evaluator)
        best = state.best
        log.debug("generation={} best={} id={}", state.generation, best.fitness, best.id)
        if on_generation is not None:
            on_generation(state)
    if state.best.fitness >= SENTINEL:
        log.warning("every individual of the final population was rejected")
    return state
