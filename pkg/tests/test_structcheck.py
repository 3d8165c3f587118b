from __future__ import annotations

from collections import deque

import numpy as np
import pytest

from legforge.structcheck import StructuralConfig, check_structure, connectivity_gate, layer_stress, stress_filter
from legforge.voxelizer import GRID_SHAPE, VoxelGrid


def _column(ix: int = 8, iz: int = 8) -> np.ndarray:
    occupancy = np.zeros(GRID_SHAPE, dtype=bool)
    occupancy[ix, :, iz] = True
    return occupancy


def _bfs_connected(occupancy: np.ndarray) -> bool:
    seen = np.zeros_like(occupancy)
    queue = deque()
    for ix, iz in np.argwhere(occupancy[:, 0, :]):
        seen[ix, 0, iz] = True
        queue.append((int(ix), 0, int(iz)))
    while queue:
        cell = queue.popleft()
        if cell[1] == GRID_SHAPE[1] - 1:
            return True
        for axis in range(3):
            for step in (-1, 1):
                nxt = list(cell)
                nxt[axis] += step
                if not 0 <= nxt[axis] < GRID_SHAPE[axis]:
                    continue
                key = tuple(nxt)
                if occupancy[key] and not seen[key]:
                    seen[key] = True
                    queue.append(key)
    return False


def test_single_voxel_layer_at_threshold_is_kept() -> None:
    occupancy = _column()
    grid = VoxelGrid(occupancy)
    assert layer_stress(grid, 50.0)[0] == pytest.approx(2.0)
    assert stress_filter(grid, 50.0, sigma_max=2.0) == grid


def test_overloaded_layers_are_emptied() -> None:
    occupancy = _column()
    occupancy[7:9, :16, 7:9] = True
    filtered = stress_filter(VoxelGrid(occupancy), 60.0, sigma_max=2.0)
    layers = filtered.layer_counts()
    assert np.all(layers[:16] == 4)
    assert np.all(layers[16:] == 0)


def test_zero_load_returns_grid_unchanged() -> None:
    grid = VoxelGrid(_column())
    assert stress_filter(grid, 0.0) is grid
    assert np.all(layer_stress(grid, 0.0) == 0.0)


def test_stress_filter_never_adds_voxels() -> None:
    rng = np.random.default_rng(3)
    for _ in range(10):
        grid = VoxelGrid(rng.random(GRID_SHAPE) < 0.05)
        filtered = stress_filter(grid, 60.0)
        assert not np.any(filtered.occupancy & ~grid.occupancy)


def test_full_column_passes() -> None:
    assert connectivity_gate(VoxelGrid(_column()))


def test_severed_column_is_rejected() -> None:
    occupancy = _column()
    occupancy[8, 10, 8] = False
    assert not connectivity_gate(VoxelGrid(occupancy))


def test_two_columns_one_spanning_passes() -> None:
    occupancy = _column(2, 2)
    occupancy[12, 3:20, 12] = True
    assert connectivity_gate(VoxelGrid(occupancy))


def test_edge_contact_does_not_connect() -> None:
    occupancy = np.zeros(GRID_SHAPE, dtype=bool)
    occupancy[4, :16, 4] = True
    occupancy[5, 16:, 5] = True
    assert not connectivity_gate(VoxelGrid(occupancy))


def test_empty_grid_is_rejected() -> None:
    assert not connectivity_gate(VoxelGrid.empty())


@pytest.mark.parametrize("density", [0.25, 0.3, 0.35])
def test_gate_matches_breadth_first_search(density: float) -> None:
    rng = np.random.default_rng(int(density * 100))
    for _ in range(10):
        occupancy = rng.random(GRID_SHAPE) < density
        assert connectivity_gate(VoxelGrid(occupancy)) == _bfs_connected(occupancy)


@pytest.mark.slow
def test_gate_matches_breadth_first_search_on_100_grids() -> None:
    rng = np.random.default_rng(7)
    for density in np.linspace(0.15, 0.45, 100):
        occupancy = rng.random(GRID_SHAPE) < density
        assert connectivity_gate(VoxelGrid(occupancy)) == _bfs_connected(occupancy)


def test_check_structure_uses_config() -> None:
    grid = VoxelGrid(_column())
    filtered, passed = check_structure(grid, StructuralConfig(load_newtons=50.0))
    assert passed
    assert filtered == grid
    filtered, passed = check_structure(grid)
    assert not passed
    assert filtered.count == 0
