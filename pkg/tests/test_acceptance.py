"""Pattern checks over the full protocol: 10 seeded runs of 20 legs for 100 generations in each medium.

These take hours; run them with ``pytest -m acceptance``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from legforge.analytics import cross_evaluate, diagonal_dominance, similarity_matrix, similarity_pattern
from legforge.config import load_config
from legforge.experiment import (
    STATS_CSV,
    evaluation_mapper,
    legs_by_environment,
    load_best_legs,
    run_experiment,
    shared_evaluation,
)
from legforge.simulation import ENVIRONMENTS

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(scope="module")
def runs(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("protocol")
    base = load_config(CONFIGS / "soil.toml").with_output_dir(root)
    for kind in ENVIRONMENTS:
        run_experiment(base.for_environment(kind))
    return root


def test_every_medium_improves_on_its_first_generation(runs) -> None:
    for kind in ENVIRONMENTS:
        improved = 0
        for run_dir in sorted(runs.glob(f"{kind}-r*")):
            best = pd.read_csv(run_dir / STATS_CSV)["best"]
            improved += int(best.iloc[-1] < best.iloc[0])
        assert improved >= 8, f"{kind}: only {improved} of 10 runs improved"


def test_native_legs_win_their_own_medium(runs) -> None:
    legs = load_best_legs(runs)
    template, evaluation = shared_evaluation(legs)
    envs = [template.model_copy(update={"kind": kind}) for kind in ENVIRONMENTS]
    with evaluation_mapper(4) as mapper:
        matrix = cross_evaluate(legs_by_environment(legs), envs, evaluation, mapper=mapper)
    assert all(diagonal_dominance(matrix).values()), matrix.to_string()


def test_soil_legs_are_leaner_than_gravel_legs(runs) -> None:
    counts: dict[str, list[int]] = {}
    for leg in load_best_legs(runs):
        counts.setdefault(leg.environment, []).append(int(leg.voxel_count))
    assert np.mean(counts["soil"]) < np.mean(counts["gravel"])


def test_legs_resemble_their_own_medium_most(runs) -> None:
    legs = load_best_legs(runs)
    assert len(legs) == 30
    pattern = similarity_pattern([leg.environment for leg in legs], similarity_matrix([leg.genome for leg in legs]))
    assert pattern.holds, pattern
