"""Spline-bundle genotype of an evolvable tibia.

A leg is a variable-length bundle of thickened Bezier curves living in the continuous box
[0, 16] x [0, 32] x [0, 16] (grid units, y along the leg). Values are immutable, so genomes can be
shared freely between worker processes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from scipy.special import comb

from legforge.errors import GenomeFormatError

GENOME_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GenomeBounds:
    x_max: float = 16.0
    y_max: float = 32.0
    z_max: float = 16.0
    min_control_points: int = 3
    max_control_points: int = 8
    min_thickness: int = 1
    max_thickness: int = 3
    min_splines: int = 5
    max_splines: int = 10

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.x_max, self.y_max, self.z_max])


BOUNDS = GenomeBounds()


@dataclass(frozen=True)
class ControlPoint:
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        for name, limit in (("x", BOUNDS.x_max), ("y", BOUNDS.y_max), ("z", BOUNDS.z_max)):
            value = getattr(self, name)
            if not math.isfinite(value) or not 0.0 <= value <= limit:
                raise GenomeFormatError(name, f"out of range [0, {limit:g}]: {value!r}")
            object.__setattr__(self, name, float(value))

    @classmethod
    def clamped(cls, x: float, y: float, z: float) -> ControlPoint:
        return cls(
            min(max(float(x), 0.0), BOUNDS.x_max),
            min(max(float(y), 0.0), BOUNDS.y_max),
            min(max(float(z), 0.0), BOUNDS.z_max),
        )

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class BezierSpline:
    control_points: tuple[ControlPoint, ...]
    thickness: int

    def __post_init__(self) -> None:
        points = tuple(self.control_points)
        object.__setattr__(self, "control_points", points)
        if not BOUNDS.min_control_points <= len(points) <= BOUNDS.max_control_points:
            raise GenomeFormatError("control_points", f"count out of range: {len(points)}")
        if isinstance(self.thickness, bool) or not BOUNDS.min_thickness <= self.thickness <= BOUNDS.max_thickness:
            raise GenomeFormatError("thickness", f"out of range: {self.thickness!r}")

    @property
    def degree(self) -> int:
        return len(self.control_points) - 1

    def points_array(self) -> np.ndarray:
        return np.array([point.as_tuple() for point in self.control_points], dtype=float)

    @classmethod
    def from_array(cls, points: np.ndarray, thickness: int) -> BezierSpline:
        return cls(tuple(ControlPoint.clamped(*row) for row in np.asarray(points, dtype=float)), int(thickness))


@dataclass(frozen=True)
class LegGenome:
    splines: tuple[BezierSpline, ...]
    id: str
    lineage: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        splines = tuple(self.splines)
        object.__setattr__(self, "splines", splines)
        object.__setattr__(self, "lineage", tuple(self.lineage))
        if not BOUNDS.min_splines <= len(splines) <= BOUNDS.max_splines:
            raise GenomeFormatError("splines", f"count out of range: {len(splines)}")
        if not self.id:
            raise GenomeFormatError("id", "must be a non-empty string")

    def with_id(self, genome_id: str, lineage: Iterable[str] | None = None) -> LegGenome:
        return LegGenome(self.splines, genome_id, self.lineage if lineage is None else tuple(lineage))

    @property
    def control_point_count(self) -> int:
        return sum(len(spline.control_points) for spline in self.splines)


def random_spline(rng: np.random.Generator) -> BezierSpline:
    n_points = int(rng.integers(BOUNDS.min_control_points, BOUNDS.max_control_points + 1))
    coords = rng.uniform(0.0, BOUNDS.upper, size=(n_points, 3))
    thickness = int(rng.integers(BOUNDS.min_thickness, BOUNDS.max_thickness + 1))
    return BezierSpline.from_array(coords, thickness)


def random_genome(rng: np.random.Generator, *, genome_id: str | None = None) -> LegGenome:
    """Draw a genome uniformly within the allowed ranges from a seeded generator."""
    n_splines = int(rng.integers(BOUNDS.min_splines, BOUNDS.max_splines + 1))
    splines = tuple(random_spline(rng) for _ in range(n_splines))
    if genome_id is None:
        genome_id = f"leg-{int(rng.integers(0, 2**32)):08x}"
    return LegGenome(splines, genome_id)


def bernstein_basis(degree: int, ts: np.ndarray) -> np.ndarray:
    ts = np.asarray(ts, dtype=float)[:, None]
    i = np.arange(degree + 1)[None, :]
    return comb(degree, i) * ts**i * (1.0 - ts) ** (degree - i)


def sample_spline(spline: BezierSpline, n_samples: int) -> np.ndarray:
    ts = np.linspace(0.0, 1.0, n_samples)
    return bernstein_basis(spline.degree, ts) @ spline.points_array()


def evaluate_bezier(spline: BezierSpline, t: float) -> tuple[float, float, float]:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t!r}")
    point = bernstein_basis(spline.degree, np.array([t])) @ spline.points_array()
    return (float(point[0, 0]), float(point[0, 1]), float(point[0, 2]))


# ---------------------------------------------------------------------------
# Text record
# ---------------------------------------------------------------------------


def genome_to_dict(genome: LegGenome) -> dict[str, Any]:
    return {
        "version": GENOME_FORMAT_VERSION,
        "id": genome.id,
        "lineage": list(genome.lineage),
        "splines": [
            {
                "thickness": spline.thickness,
                "control_points": [list(point.as_tuple()) for point in spline.control_points],
            }
            for spline in genome.splines
        ],
    }


def serialize(genome: LegGenome) -> str:
    # json writes floats with repr(), which round-trips exactly.
    return json.dumps(genome_to_dict(genome), indent=2) + "\n"


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _parse_spline(raw: Any, path: str) -> BezierSpline:
    if not isinstance(raw, dict):
        raise GenomeFormatError(path, "must be an object")
    thickness = raw.get("thickness")
    if not isinstance(thickness, int) or isinstance(thickness, bool):
        raise GenomeFormatError(f"{path}.thickness", f"must be an integer, got {thickness!r}")
    if not BOUNDS.min_thickness <= thickness <= BOUNDS.max_thickness:
        raise GenomeFormatError(f"{path}.thickness", f"out of range: {thickness}")
    points_raw = raw.get("control_points")
    if not isinstance(points_raw, list):
        raise GenomeFormatError(f"{path}.control_points", "must be a list")
    if not BOUNDS.min_control_points <= len(points_raw) <= BOUNDS.max_control_points:
        raise GenomeFormatError(f"{path}.control_points", f"count out of range: {len(points_raw)}")
    points: list[ControlPoint] = []
    for index, triple in enumerate(points_raw):
        point_path = f"{path}.control_points[{index}]"
        if not isinstance(triple, list) or len(triple) != 3 or not all(_is_number(v) for v in triple):
            raise GenomeFormatError(point_path, "must be an [x, y, z] triple of numbers")
        for axis, value, limit in zip("xyz", triple, BOUNDS.upper):
            if not math.isfinite(value) or not 0.0 <= value <= limit:
                raise GenomeFormatError(f"{point_path}.{axis}", f"out of range [0, {limit:g}]: {value!r}")
        points.append(ControlPoint(*(float(v) for v in triple)))
    return BezierSpline(tuple(points), thickness)


def genome_from_dict(payload: Any) -> LegGenome:
    if not isinstance(payload, dict):
        raise GenomeFormatError("record", "must be an object")
    version = payload.get("version")
    if version != GENOME_FORMAT_VERSION:
        raise GenomeFormatError("version", f"unsupported: {version!r}")
    genome_id = payload.get("id")
    if not isinstance(genome_id, str) or not genome_id:
        raise GenomeFormatError("id", "must be a non-empty string")
    lineage = payload.get("lineage", [])
    if not isinstance(lineage, list) or not all(isinstance(item, str) for item in lineage):
        raise GenomeFormatError("lineage", "must be a list of ids")
    splines_raw = payload.get("splines")
    if not isinstance(splines_raw, list):
        raise GenomeFormatError("splines", "must be a list")
    if not BOUNDS.min_splines <= len(splines_raw) <= BOUNDS.max_splines:
        raise GenomeFormatError("splines", f"count out of range: {len(splines_raw)}")
    splines = tuple(_parse_spline(raw, f"splines[{index}]") for index, raw in enumerate(splines_raw))
    return LegGenome(splines, genome_id, tuple(lineage))


def deserialize(text: str) -> LegGenome:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GenomeFormatError("record", f"is not valid JSON: {exc.msg}") from exc
    return genome_from_dict(payload)


def write_genome(genome: LegGenome, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize(genome), encoding="utf-8")
    return path


def read_genome(path: Path) -> LegGenome:
    return deserialize(Path(path).read_text(encoding="utf-8"))
