from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from legforge.errors import DegenerateGenomeError
from legforge.genome import BOUNDS, BezierSpline, LegGenome, sample_spline

GRID_SHAPE = (16, 32, 16)
N_CELLS = GRID_SHAPE[0] * GRID_SHAPE[1] * GRID_SHAPE[2]
VOXEL_EDGE_M = 0.005
BITSET_BYTES = N_CELLS // 8

_UPPER_INDEX = np.array(GRID_SHAPE) - 1
_r = np.arange(-2, 3)
_OFFSETS = np.stack(np.meshgrid(_r, _r, _r, indexing="ij"), axis=-1).reshape(-1, 3)


class VoxelizerConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_samples: int = Field(default=256, ge=2, description="Curve samples per spline.")


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Read-only 16x32x16 occupancy, indexed [ix, iy, iz]; iy = 0 is the foot tip."""

    occupancy: np.ndarray
    voxel_edge: float = VOXEL_EDGE_M

    def __post_init__(self) -> None:
        array = np.array(self.occupancy, dtype=bool, copy=True)
        if array.shape != GRID_SHAPE:
            raise ValueError(f"voxel grid must have shape {GRID_SHAPE}, got {array.shape}")
        array.flags.writeable = False
        object.__setattr__(self, "occupancy", array)

    @classmethod
    def empty(cls) -> VoxelGrid:
        return cls(np.zeros(GRID_SHAPE, dtype=bool))

    @classmethod
    def full(cls) -> VoxelGrid:
        return cls(np.ones(GRID_SHAPE, dtype=bool))

    @property
    def dims(self) -> tuple[int, int, int]:
        return GRID_SHAPE

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    def layer_counts(self) -> np.ndarray:
        return self.occupancy.sum(axis=(0, 2))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return bool(np.array_equal(self.occupancy, other.occupancy))

    def __hash__(self) -> int:
        return hash(self.occupancy.tobytes())


@dataclass(frozen=True)
class OccupancyStats:
    occupied_count: int
    delta: float


# ---------------------------------------------------------------------------
# Genotype -> phenotype
# ---------------------------------------------------------------------------


def _sampled_y_range(samples: list[np.ndarray]) -> tuple[float, float]:
    stacked = np.concatenate(samples)
    y_min = float(stacked[:, 1].min())
    y_max = float(stacked[:, 1].max())
    if y_max - y_min < 1e-9:
        raise DegenerateGenomeError()
    return y_min, y_max


def _rescale_y(values: np.ndarray, y_min: float, y_max: float) -> np.ndarray:
    return (values - y_min) * (BOUNDS.y_max / (y_max - y_min))


def rescale_to_full_length(genome: LegGenome, config: VoxelizerConfig | None = None) -> LegGenome:
    """Stretch y so the sampled leg spans the whole grid length; x and z are untouched."""
    config = config or VoxelizerConfig()
    samples = [sample_spline(spline, config.n_samples) for spline in genome.splines]
    y_min, y_max = _sampled_y_range(samples)
    splines: list[BezierSpline] = []
    for spline in genome.splines:
        points = spline.points_array()
        points[:, 1] = _rescale_y(points[:, 1], y_min, y_max)
        if points[:, 1].min() < -1e-9 or points[:, 1].max() > BOUNDS.y_max + 1e-9:
            logger.debug("rescale clamps interior control points genome={}", genome.id)
        splines.append(BezierSpline.from_array(points, spline.thickness))
    return LegGenome(tuple(splines), genome.id, genome.lineage)


def rescaled_samples(genome: LegGenome, config: VoxelizerConfig | None = None) -> list[tuple[np.ndarray, int]]:
    """Curve samples after the full-length affine map, paired with each spline's thickness.

    Mapping the samples is equivalent to sampling the affinely mapped control polygon before any clamping,
    so the sampled leg always reaches both ends of the grid.
    """
    config = config or VoxelizerConfig()
    samples = [sample_spline(spline, config.n_samples) for spline in genome.splines]
    y_min, y_max = _sampled_y_range(samples)
    mapped: list[tuple[np.ndarray, int]] = []
    for points, spline in zip(samples, genome.splines):
        points = points.copy()
        points[:, 1] = np.clip(_rescale_y(points[:, 1], y_min, y_max), 0.0, BOUNDS.y_max)
        mapped.append((points, spline.thickness))
    return mapped


def rasterize_samples(samples: list[tuple[np.ndarray, int]]) -> VoxelGrid:
    occupancy = np.zeros(GRID_SHAPE, dtype=bool)
    for points, thickness in samples:
        base = np.clip(np.floor(points).astype(int), 0, _UPPER_INDEX)
        occupancy[base[:, 0], base[:, 1], base[:, 2]] = True
        candidates = base[:, None, :] + _OFFSETS[None, :, :]
        distance_sq = ((candidates + 0.5 - points[:, None, :]) ** 2).sum(axis=-1)
        inside = np.all((candidates >= 0) & (candidates <= _UPPER_INDEX), axis=-1)
        hits = candidates[inside & (distance_sq <= (thickness / 2.0) ** 2)]
        occupancy[hits[:, 0], hits[:, 1], hits[:, 2]] = True
    return VoxelGrid(occupancy)


def rasterize(genome: LegGenome, config: VoxelizerConfig | None = None) -> VoxelGrid:
    config = config or VoxelizerConfig()
    return rasterize_samples([(sample_spline(spline, config.n_samples), spline.thickness) for spline in genome.splines])


def phenotype(genome: LegGenome, config: VoxelizerConfig | None = None) -> VoxelGrid:
    return rasterize_samples(rescaled_samples(genome, config))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def occupancy_stats(grid: VoxelGrid) -> OccupancyStats:
    count = grid.count
    return OccupancyStats(occupied_count=count, delta=100.0 * count / N_CELLS)


def voxel_similarity(a: VoxelGrid, b: VoxelGrid) -> float:
    """Percentage of cells on which both grids agree, occupied or empty."""
    return 100.0 * int(np.count_nonzero(a.occupancy == b.occupancy)) / N_CELLS


def jaccard_similarity(a: VoxelGrid, b: VoxelGrid) -> float:
    union = int(np.count_nonzero(a.occupancy | b.occupancy))
    if union == 0:
        return 100.0
    return 100.0 * int(np.count_nonzero(a.occupancy & b.occupancy)) / union


# ---------------------------------------------------------------------------
# Debug dumps
# ---------------------------------------------------------------------------


def grid_to_ascii(grid: VoxelGrid, *, filled: str = "#", empty: str = ".") -> str:
    blocks: list[str] = []
    for iy in range(GRID_SHAPE[1] - 1, -1, -1):
        rows = [
            "".join(filled if grid.occupancy[ix, iy, iz] else empty for ix in range(GRID_SHAPE[0]))
            for iz in range(GRID_SHAPE[2])
        ]
        blocks.append(f"layer iy={iy:02d}\n" + "\n".join(rows))
    return "\n\n".join(blocks) + "\n"


def grid_to_bitset(grid: VoxelGrid) -> bytes:
    # ix fastest, then iz, then iy; least significant bit first within a byte.
    ordered = grid.occupancy.transpose(1, 2, 0).ravel()
    return np.packbits(ordered, bitorder="little").tobytes()


def grid_from_bitset(raw: bytes) -> VoxelGrid:
    if len(raw) != BITSET_BYTES:
        raise ValueError(f"bitset must be {BITSET_BYTES} bytes, got {len(raw)}")
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little").astype(bool)
    return VoxelGrid(bits.reshape(GRID_SHAPE[1], GRID_SHAPE[2], GRID_SHAPE[0]).transpose(2, 0, 1))


def write_bitset(grid: VoxelGrid, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(grid_to_bitset(grid))
    return path


def read_bitset(path: Path) -> VoxelGrid:
    return grid_from_bitset(Path(path).read_bytes())
