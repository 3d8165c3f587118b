from __future__ import annotations

import numpy as np
import pytest

from legforge.errors import DegenerateGenomeError
from legforge.genome import BezierSpline, ControlPoint, LegGenome, random_genome, sample_spline
from legforge.voxelizer import (
    BITSET_BYTES,
    GRID_SHAPE,
    N_CELLS,
    VoxelGrid,
    VoxelizerConfig,
    grid_from_bitset,
    grid_to_ascii,
    grid_to_bitset,
    jaccard_similarity,
    occupancy_stats,
    phenotype,
    rasterize,
    read_bitset,
    rescale_to_full_length,
    voxel_similarity,
    write_bitset,
)


def _line(start: tuple[float, float, float], end: tuple[float, float, float], thickness: int = 1) -> BezierSpline:
    mid = tuple((a + b) / 2.0 for a, b in zip(start, end))
    return BezierSpline((ControlPoint(*start), ControlPoint(*mid), ControlPoint(*end)), thickness)


def _bundle(spline: BezierSpline, n: int = 5) -> LegGenome:
    return LegGenome(tuple(spline for _ in range(n)), "leg-bundle")


def _brute_force(genome: LegGenome, n_samples: int = 256) -> np.ndarray:
    ix, iy, iz = np.meshgrid(*(np.arange(n) for n in GRID_SHAPE), indexing="ij")
    centers = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3) + 0.5
    occupancy = np.zeros(N_CELLS, dtype=bool)
    upper = np.array(GRID_SHAPE) - 1
    for spline in genome.splines:
        points = sample_spline(spline, n_samples)
        distance_sq = ((centers[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1)
        occupancy |= (distance_sq <= (spline.thickness / 2.0) ** 2).any(axis=1)
        containing = np.clip(np.floor(points).astype(int), 0, upper)
        flat = np.ravel_multi_index(containing.T, GRID_SHAPE)
        occupancy[flat] = True
    return occupancy.reshape(GRID_SHAPE)


def test_straight_spline_thickness_one_marks_one_column() -> None:
    grid = rasterize(_bundle(_line((8, 0, 8), (8, 32, 8))))
    expected = np.zeros(GRID_SHAPE, dtype=bool)
    expected[8, :, 8] = True
    assert grid.count == 32
    assert np.array_equal(grid.occupancy, expected)


def test_thicker_spline_is_a_superset() -> None:
    thin = rasterize(_bundle(_line((8, 0, 8), (8, 32, 8), thickness=1)))
    thick = rasterize(_bundle(_line((8, 0, 8), (8, 32, 8), thickness=3)))
    assert np.all(thick.occupancy[thin.occupancy])
    assert thick.count > thin.count


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_rasterize_matches_brute_force_oracle(seed: int) -> None:
    genome = random_genome(np.random.default_rng(seed))
    config = VoxelizerConfig(n_samples=64)
    assert np.array_equal(rasterize(genome, config).occupancy, _brute_force(genome, 64))


@pytest.mark.slow
def test_rasterize_matches_brute_force_oracle_on_200_genomes() -> None:
    rng = np.random.default_rng(2024)
    config = VoxelizerConfig(n_samples=256)
    for _ in range(200):
        genome = random_genome(rng)
        assert np.array_equal(rasterize(genome, config).occupancy, _brute_force(genome, 256))


def test_rasterize_is_deterministic() -> None:
    genome = random_genome(np.random.default_rng(11))
    assert rasterize(genome) == rasterize(genome)


def test_upper_boundary_samples_clamp_into_last_index() -> None:
    grid = rasterize(_bundle(_line((16, 0, 16), (16, 32, 16))))
    assert grid.occupancy[15, 31, 15]
    assert grid.occupancy[15, 0, 15]


def test_rescale_stretches_y_to_full_length() -> None:
    spline = BezierSpline((ControlPoint(4, 4, 4), ControlPoint(4, 12, 4), ControlPoint(4, 20, 4)), 1)
    rescaled = rescale_to_full_length(_bundle(spline))
    ys = [point.y for point in rescaled.splines[0].control_points]
    assert ys == pytest.approx([0.0, 16.0, 32.0])
    assert [point.x for point in rescaled.splines[0].control_points] == [4.0, 4.0, 4.0]


def test_rescale_is_identity_on_full_length_genome() -> None:
    genome = _bundle(_line((3, 0, 5), (9, 32, 7)))
    rescaled = rescale_to_full_length(genome)
    for before, after in zip(genome.splines, rescaled.splines):
        np.testing.assert_allclose(after.points_array(), before.points_array(), atol=1e-9)


def test_rescale_rejects_zero_extent() -> None:
    genome = _bundle(_line((2, 7, 2), (14, 7, 14)))
    with pytest.raises(DegenerateGenomeError, match="degenerate length"):
        rescale_to_full_length(genome)
    with pytest.raises(DegenerateGenomeError):
        phenotype(genome)


def test_phenotype_always_spans_both_ends() -> None:
    rng = np.random.default_rng(21)
    for _ in range(20):
        grid = phenotype(random_genome(rng), VoxelizerConfig(n_samples=64))
        layers = grid.layer_counts()
        assert layers[0] > 0
        assert layers[-1] > 0


def test_occupancy_stats_delta() -> None:
    grid = rasterize(_bundle(_line((8, 0, 8), (8, 32, 8))))
    stats = occupancy_stats(grid)
    assert stats.occupied_count == 32
    assert stats.delta == pytest.approx(0.390625)
    assert occupancy_stats(VoxelGrid.empty()).delta == 0.0
    assert occupancy_stats(VoxelGrid.full()).delta == 100.0


def test_voxel_similarity() -> None:
    grid = phenotype(random_genome(np.random.default_rng(4)))
    complement = VoxelGrid(~grid.occupancy)
    assert voxel_similarity(grid, grid) == 100.0
    assert voxel_similarity(grid, complement) == 0.0

    occupancy = np.zeros(GRID_SHAPE, dtype=bool)
    occupancy.reshape(-1)[:100] = True
    assert voxel_similarity(VoxelGrid(occupancy), VoxelGrid.empty()) == pytest.approx(100.0 * 8092 / 8192)


def test_voxel_similarity_is_symmetric() -> None:
    rng = np.random.default_rng(8)
    a = phenotype(random_genome(rng))
    b = phenotype(random_genome(rng))
    assert voxel_similarity(a, b) == voxel_similarity(b, a)
    assert jaccard_similarity(a, b) == jaccard_similarity(b, a)


def test_jaccard_similarity() -> None:
    assert jaccard_similarity(VoxelGrid.empty(), VoxelGrid.empty()) == 100.0
    a = np.zeros(GRID_SHAPE, dtype=bool)
    b = np.zeros(GRID_SHAPE, dtype=bool)
    a[0, :4, 0] = True
    b[0, 2:6, 0] = True
    assert jaccard_similarity(VoxelGrid(a), VoxelGrid(b)) == pytest.approx(100.0 * 2 / 6)


def test_voxel_grid_is_read_only() -> None:
    grid = VoxelGrid.empty()
    with pytest.raises(ValueError):
        grid.occupancy[0, 0, 0] = True
    with pytest.raises(ValueError, match="shape"):
        VoxelGrid(np.zeros((4, 4, 4), dtype=bool))


def test_bitset_dump(tmp_path) -> None:
    grid = phenotype(random_genome(np.random.default_rng(6)))
    raw = grid_to_bitset(grid)
    assert len(raw) == BITSET_BYTES
    assert grid_from_bitset(raw) == grid
    assert read_bitset(write_bitset(grid, tmp_path / "leg.bits")) == grid
    with pytest.raises(ValueError, match="bytes"):
        grid_from_bitset(raw[:-1])


def test_bitset_order_is_x_fastest() -> None:
    occupancy = np.zeros(GRID_SHAPE, dtype=bool)
    occupancy[1, 0, 0] = True
    raw = grid_to_bitset(VoxelGrid(occupancy))
    assert raw[0] == 0b10
    assert not any(raw[1:])


def test_ascii_dump_has_one_block_per_layer() -> None:
    text = grid_to_ascii(rasterize(_bundle(_line((8, 0, 8), (8, 32, 8)))))
    assert text.count("layer iy=") == 32
    assert text.count("#") == 32
