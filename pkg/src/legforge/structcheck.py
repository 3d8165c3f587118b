"""Conservative structural gate standing in for a finite-element check.

Layers whose cross-section is too small to carry the design load are treated as broken; the leg
survives only if material still joins the actuator layer to the foot-tip layer.
"""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage

from legforge.voxelizer import GRID_SHAPE, VoxelGrid

VOXEL_FACE_AREA_MM2 = 25.0
TOP_LAYER = GRID_SHAPE[1] - 1
BOTTOM_LAYER = 0

# face adjacency only
FACE_CONNECTIVITY = ndimage.generate_binary_structure(3, 1)


class StructuralConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    load_newtons: float = Field(default=60.0, ge=0.0)
    sigma_max: float = Field(default=2.0, gt=0.0, description="Allowed layer stress in N/mm^2.")


def layer_stress(grid: VoxelGrid, load_newtons: float) -> np.ndarray:
    """Stress per horizontal layer in N/mm^2; empty layers report infinity under a nonzero load."""
    area = grid.layer_counts().astype(float) * VOXEL_FACE_AREA_MM2
    with np.errstate(divide="ignore", invalid="ignore"):
        stress = np.where(area > 0, load_newtons / np.where(area > 0, area, 1.0), np.inf)
    if load_newtons == 0:
        stress[:] = 0.0
    return stress


def stress_filter(grid: VoxelGrid, load_newtons: float, sigma_max: float = 2.0) -> VoxelGrid:
    if load_newtons == 0:
        return grid
    overloaded = layer_stress(grid, load_newtons) > sigma_max
    if not overloaded.any():
        return grid
    occupancy = grid.occupancy.copy()
    occupancy[:, overloaded, :] = False
    return VoxelGrid(occupancy)


def connectivity_gate(grid: VoxelGrid) -> bool:
    """True when a face-connected path of material joins the top layer to the bottom layer."""
    labels, count = ndimage.label(grid.occupancy, structure=FACE_CONNECTIVITY)
    if count == 0:
        return False
    top = np.unique(labels[:, TOP_LAYER, :])
    bottom = np.unique(labels[:, BOTTOM_LAYER, :])
    shared = np.intersect1d(top[top > 0], bottom[bottom > 0])
    return shared.size > 0


def check_structure(grid: VoxelGrid, config: StructuralConfig | None = None) -> tuple[VoxelGrid, bool]:
    config = config or StructuralConfig()
    filtered = stress_filter(grid, config.load_newtons, config.sigma_max)
    return filtered, connectivity_gate(filtered)
