"""Surrogate stride simulation.

One commanded stride moves the coxa/femur/tibia chain through the medium for ``n_steps`` steps. Every surface
voxel of the tibia body is a contact element: it feels a resistive force opposing its velocity while it is below
the medium surface, and the joint torques of those forces are accumulated into the fitness.

World frame: Z up, container floor at Z = 0. The coxa yaws about +Z at the hip; the leg points along
u(c) = (sin c, -cos c, 0) and femur/tibia pitch about p = u x Z.
"""

from __future__ import annotations

import math
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from legforge.errors import DegenerateGenomeError, EmptyPhenotypeError, ExportError
from legforge.genome import LegGenome
from legforge.structcheck import StructuralConfig, check_structure
from legforge.voxelizer import GRID_SHAPE, VOXEL_EDGE_M, VoxelGrid, VoxelizerConfig, occupancy_stats, phenotype

SENTINEL = 1e9
JOINTS = ("coxa", "femur", "tibia")

EnvironmentKind = Literal["soil", "gravel", "fluid"]
ENVIRONMENTS: tuple[EnvironmentKind, ...] = ("soil", "gravel", "fluid")

_Z = np.array([0.0, 0.0, 1.0])
# Grid face directions in order +x, -x, +y, -y, +z, -z.
_FACE_STEPS = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])
# steps evaluated together; bounds the (steps, voxels, 3) working arrays
_STEP_CHUNK = 128


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


class EnvironmentModel(BaseModel):
    """Medium in the container and the coefficients of its resistive force law."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: EnvironmentKind = "soil"
    medium_depth: float = Field(default=0.07, gt=0.0, description="Surface height above the floor in metres.")
    k_soil: float = Field(default=5e5, ge=0.0)
    c_soil: float = Field(default=2e4, ge=0.0)
    k_grav: float = Field(default=2e5, ge=0.0)
    support_load: float = Field(default=2.0, ge=0.0, description="Leg load the gravel must carry, newtons.")
    rho: float = Field(default=1000.0, ge=0.0)
    drag_coefficient: float = Field(default=1.0, ge=0.0)
    v_eps: float = Field(default=1e-6, gt=0.0)

    @classmethod
    def preset(cls, kind: EnvironmentKind) -> EnvironmentModel:
        return cls(kind=kind)

    def scaled(self, factor: float) -> EnvironmentModel:
        """Copy with every force-law coefficient multiplied by ``factor``."""
        if factor <= 0:
            raise ValueError(f"factor must be > 0, got {factor}")
        names = ("k_soil", "c_soil", "k_grav", "support_load", "rho")
        return self.model_copy(update={name: getattr(self, name) * factor for name in names})


class KinematicChain(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    coxa_link: float = Field(default=0.05, gt=0.0)
    femur_link: float = Field(default=0.10, gt=0.0)
    hip_height: float = Field(default=0.18, gt=0.0)

    @property
    def tibia_length(self) -> float:
        return GRID_SHAPE[1] * VOXEL_EDGE_M


class SimulationConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_steps: int = Field(default=3000, ge=1)
    dt: float = Field(default=0.001, gt=0.0)
    coxa_sweep_deg: float = Field(default=30.0, ge=0.0, le=90.0)
    femur_lift_deg: float = Field(default=30.0, ge=0.0, le=90.0)
    record_trace: bool = False

    @property
    def trajectory(self) -> JointTrajectory:
        return JointTrajectory(
            n_steps=self.n_steps,
            dt=self.dt,
            coxa_sweep=math.radians(self.coxa_sweep_deg),
            femur_lift=math.radians(self.femur_lift_deg),
        )


class EvaluationConfig(BaseModel):
    """Everything evaluate_leg needs besides the genome and the environment."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    chain: KinematicChain = Field(default_factory=KinematicChain)
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)
    voxelizer: VoxelizerConfig = Field(default_factory=VoxelizerConfig)
    structural: StructuralConfig = Field(default_factory=StructuralConfig)


# ---------------------------------------------------------------------------
# Commanded stride
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JointTrajectory:
    """Piecewise-linear stride: coxa sweeps +a -> -a, femur lifts +b -> 0 -> +b, tibia mirrors the femur."""

    n_steps: int = 3000
    dt: float = 0.001
    coxa_sweep: float = math.radians(30.0)
    femur_lift: float = math.radians(30.0)

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt


def _check_step(traj: JointTrajectory, step: int) -> None:
    if not 0 <= step <= traj.n_steps:
        raise ValueError(f"step must lie in [0, {traj.n_steps}], got {step}")


def trajectory_at(traj: JointTrajectory, step: int) -> tuple[float, float, float]:
    _check_step(traj, step)
    half = traj.n_steps / 2.0
    coxa = traj.coxa_sweep * (1.0 - 2.0 * step / traj.n_steps)
    femur = traj.femur_lift * abs(step - half) / half
    return (coxa, femur, -femur)


def trajectory_rates(traj: JointTrajectory, step: int) -> tuple[float, float, float]:
    """Joint rates in rad/s over the step that begins at ``step``; the last step reuses the final segment."""
    _check_step(traj, step)
    coxa_rate = -2.0 * traj.coxa_sweep / traj.duration
    femur_rate = traj.femur_lift / (traj.duration / 2.0)
    if step < traj.n_steps / 2.0:
        femur_rate = -femur_rate
    return (coxa_rate, femur_rate, -femur_rate)


def stride_profile(traj: JointTrajectory) -> tuple[np.ndarray, np.ndarray]:
    """Angles and rates of every simulated step (0 .. n_steps - 1), each of shape (n_steps, 3)."""
    steps = np.arange(traj.n_steps, dtype=float)
    half = traj.n_steps / 2.0
    coxa = traj.coxa_sweep * (1.0 - 2.0 * steps / traj.n_steps)
    femur = traj.femur_lift * np.abs(steps - half) / half
    angles = np.column_stack([coxa, femur, -femur])
    femur_rate = np.where(steps < half, -1.0, 1.0) * (traj.femur_lift / (traj.duration / 2.0))
    coxa_rate = np.full(traj.n_steps, -2.0 * traj.coxa_sweep / traj.duration)
    rates = np.column_stack([coxa_rate, femur_rate, -femur_rate])
    return angles, rates


# ---------------------------------------------------------------------------
# Forward kinematics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChainPose:
    """Joint frames of one pose, shape (3,), or of a batch of poses, shape (n, 3)."""

    hip: np.ndarray
    femur_joint: np.ndarray
    tibia_joint: np.ndarray
    pitch_axis: np.ndarray
    # tibia body basis: grid x -> pitch_axis, grid y -> -down, grid z -> forward
    down: np.ndarray
    forward: np.ndarray


def chain_pose(chain: KinematicChain, angles: tuple[float, float, float] | np.ndarray) -> ChainPose:
    angles = np.asarray(angles, dtype=float)
    coxa, femur, tibia = angles[..., 0], angles[..., 1, None], angles[..., 2, None]
    u = np.stack([np.sin(coxa), -np.cos(coxa), np.zeros_like(coxa)], axis=-1)
    pitch = np.cross(u, _Z)
    hip = np.array([0.0, 0.0, chain.hip_height])
    femur_joint = hip + chain.coxa_link * u
    tibia_joint = femur_joint + chain.femur_link * (u * np.cos(femur) + _Z * np.sin(femur))
    phi = femur + tibia
    down = -_Z * np.cos(phi) + u * np.sin(phi)
    forward = u * np.cos(phi) + _Z * np.sin(phi)
    return ChainPose(hip, femur_joint, tibia_joint, pitch, down, forward)


@dataclass(frozen=True, eq=False)
class LegBody:
    """Surface voxels of a phenotype in tibia-local coordinates."""

    indices: np.ndarray
    # metres along (pitch axis, down, forward) from the tibia joint
    local: np.ndarray
    # exposed-face mask per surface voxel, face order as _FACE_STEPS
    exposed: np.ndarray
    voxel_edge: float = VOXEL_EDGE_M

    @property
    def n_voxels(self) -> int:
        return len(self.indices)


def leg_body(grid: VoxelGrid) -> LegBody:
    occupancy = grid.occupancy
    if not occupancy.any():
        raise EmptyPhenotypeError()
    padded = np.pad(occupancy, 1)
    exposed_all = np.stack(
        [occupancy & ~np.roll(padded, tuple(-step), axis=(0, 1, 2))[1:-1, 1:-1, 1:-1] for step in _FACE_STEPS],
        axis=-1,
    )
    surface = occupancy & exposed_all.any(axis=-1)
    indices = np.argwhere(surface)
    e = grid.voxel_edge
    centre = np.array(GRID_SHAPE) / 2.0
    local = np.column_stack(
        [
            (indices[:, 0] + 0.5 - centre[0]) * e,
            (GRID_SHAPE[1] - indices[:, 1] - 0.5) * e,
            (indices[:, 2] + 0.5 - centre[2]) * e,
        ]
    )
    exposed = exposed_all[indices[:, 0], indices[:, 1], indices[:, 2]]
    return LegBody(indices, local, exposed, e)


def _face_normals(pose: ChainPose) -> np.ndarray:
    up_grid = -pose.down
    return np.stack(
        [pose.pitch_axis, -pose.pitch_axis, up_grid, -up_grid, pose.forward, -pose.forward],
        axis=-2,
    )


def _body_kinematics(
    body: LegBody,
    pose: ChainPose,
    rates: tuple[float, float, float] | np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    basis = np.stack([pose.pitch_axis, pose.down, pose.forward], axis=-2)
    positions = pose.tibia_joint[..., None, :] + np.einsum("vk,...kj->...vj", body.local, basis)
    rates = np.asarray(rates, dtype=float)
    coxa_rate, femur_rate, tibia_rate = (rates[..., i, None, None] for i in range(3))
    pitch = pose.pitch_axis[..., None, :]
    velocities = (
        coxa_rate * np.cross(_Z, positions - pose.hip)
        + femur_rate * np.cross(pitch, positions - pose.femur_joint[..., None, :])
        + tibia_rate * np.cross(pitch, positions - pose.tibia_joint[..., None, :])
    )
    return positions, velocities


def surface_voxel_kinematics(
    chain: KinematicChain,
    grid: VoxelGrid | LegBody,
    angles: tuple[float, float, float],
    angular_rates: tuple[float, float, float],
) -> tuple[np.ndarray, np.ndarray]:
    """World positions (m) and velocities (m/s) of the surface voxels, one row per voxel."""
    body = grid if isinstance(grid, LegBody) else leg_body(grid)
    return _body_kinematics(body, chain_pose(chain, angles), angular_rates)


# ---------------------------------------------------------------------------
# Medium
# ---------------------------------------------------------------------------


def force_magnitudes(env: EnvironmentModel, depths: np.ndarray, speeds: np.ndarray, areas: np.ndarray) -> np.ndarray:
    if env.kind == "soil":
        magnitude = env.k_soil * depths * areas + env.c_soil * areas * speeds
    elif env.kind == "gravel":
        magnitude = env.k_grav * depths * areas
    else:
        magnitude = 0.5 * env.rho * env.drag_coefficient * areas * speeds**2
    return np.where((depths > 0.0) & (speeds >= env.v_eps), magnitude, 0.0)


def medium_forces(
    env: EnvironmentModel,
    depths: np.ndarray,
    velocities: np.ndarray,
    areas: np.ndarray,
) -> np.ndarray:
    """Resistive forces (N) opposing each velocity; rows with depth <= 0 or a negligible speed get zero.

    Works on one row per voxel or on a batch of steps, with the voxel axis second to last in ``velocities``.
    """
    speeds = np.linalg.norm(velocities, axis=-1)
    magnitude = force_magnitudes(env, depths, speeds, areas)
    direction = np.divide(
        velocities, speeds[..., None], out=np.zeros_like(velocities), where=speeds[..., None] > 0
    )
    return -magnitude[..., None] * direction


def medium_force(
    env: EnvironmentModel,
    position: np.ndarray,
    velocity: np.ndarray,
    voxel_exposed_area: float,
) -> np.ndarray:
    position = np.asarray(position, dtype=float)
    depth = np.array([env.medium_depth - position[2]])
    return medium_forces(env, depth, np.asarray(velocity, dtype=float)[None, :], np.array([voxel_exposed_area]))[0]


def _sinkage_batch(
    env: EnvironmentModel,
    depths: np.ndarray,
    down_areas: np.ndarray,
    floor_clearance: np.ndarray,
) -> np.ndarray:
    cap = np.maximum(floor_clearance, 0.0)
    if env.support_load <= 0.0:
        return np.zeros_like(cap)
    if env.k_grav <= 0.0:
        return cap
    need = env.support_load / env.k_grav
    order = np.argsort(-depths, axis=-1, kind="stable")
    sorted_depths = np.take_along_axis(depths, order, axis=-1)
    sorted_areas = np.take_along_axis(down_areas, order, axis=-1)
    # supported volume is piecewise linear in s with a breakpoint where each voxel enters the gravel
    slope = np.cumsum(sorted_areas, axis=-1)
    intercept = np.cumsum(sorted_areas * sorted_depths, axis=-1)
    starts = -sorted_depths
    ends = np.concatenate([starts[..., 1:], np.full(starts.shape[:-1] + (1,), np.inf)], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        candidate = (need - intercept) / slope
    solved = (slope > 0.0) & (candidate <= ends)
    first = np.argmax(solved, axis=-1)[..., None]
    picked = np.take_along_axis(candidate, first, axis=-1)[..., 0]
    start = np.take_along_axis(starts, first, axis=-1)[..., 0]
    sinkage = np.minimum(np.maximum(np.maximum(picked, 0.0), start), cap)
    return np.where(solved.any(axis=-1), sinkage, cap)


def gravel_sinkage(env: EnvironmentModel, depths: np.ndarray, down_areas: np.ndarray, floor_clearance: float) -> float:
    """Smallest extra sinkage s >= 0 at which the gravel carries the leg load.

    Solves k_grav * sum(A_down * max(0, depth + s)) >= support_load over the sorted contact breakpoints and caps
    the result at ``floor_clearance``.
    """
    depths = np.asarray(depths, dtype=float)
    down_areas = np.asarray(down_areas, dtype=float)
    return float(_sinkage_batch(env, depths[None, :], down_areas[None, :], np.array([floor_clearance]))[0])


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EvaluationResult:
    tau: float
    delta: float
    fitness: float
    rejected: bool
    n_steps: int
    voxel_count: int = 0
    reason: str = ""
    trace: np.ndarray | None = None

    @property
    def tau_per_step(self) -> float:
        return self.tau / self.n_steps

    @classmethod
    def reject(cls, reason: str, n_steps: int, *, delta: float = 0.0, voxel_count: int = 0) -> EvaluationResult:
        return cls(
            tau=0.0,
            delta=delta,
            fitness=SENTINEL,
            rejected=True,
            n_steps=n_steps,
            voxel_count=voxel_count,
            reason=reason,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EvaluationResult):
            return NotImplemented
        same_trace = (self.trace is None and other.trace is None) or (
            self.trace is not None and other.trace is not None and np.array_equal(self.trace, other.trace)
        )
        fields = ("tau", "delta", "fitness", "rejected", "n_steps", "voxel_count", "reason")
        return same_trace and all(getattr(self, name) == getattr(other, name) for name in fields)


def fitness_from(tau: float, n_steps: int, delta: float) -> float:
    return (tau / n_steps) * (1.0 + delta / 5.0)


def joint_torques(pose: ChainPose, positions: np.ndarray, forces: np.ndarray) -> np.ndarray:
    """Net torque about each joint axis (coxa, femur, tibia), signed; a batched pose gives one row per step."""
    coxa = np.cross(positions - pose.hip, forces).sum(axis=-2) @ _Z
    femur = np.cross(positions - pose.femur_joint[..., None, :], forces).sum(axis=-2)
    tibia = np.cross(positions - pose.tibia_joint[..., None, :], forces).sum(axis=-2)
    return np.stack(
        [
            coxa,
            np.einsum("...j,...j->...", femur, pose.pitch_axis),
            np.einsum("...j,...j->...", tibia, pose.pitch_axis),
        ],
        axis=-1,
    )


@dataclass(frozen=True, eq=False)
class _StrideWindow:
    steps: slice
    pose: ChainPose
    positions: np.ndarray
    velocities: np.ndarray
    # medium depth of every voxel, gravel sinkage included
    depths: np.ndarray
    contact: np.ndarray
    sinkage: np.ndarray


def _stride_windows(
    body: LegBody,
    env: EnvironmentModel,
    chain: KinematicChain,
    simulation: SimulationConfig,
) -> Iterator[_StrideWindow]:
    angles, rates = stride_profile(simulation.trajectory)
    exposed = body.exposed.astype(float)
    for start in range(0, len(angles), _STEP_CHUNK):
        steps = slice(start, start + _STEP_CHUNK)
        pose = chain_pose(chain, angles[steps])
        positions, velocities = _body_kinematics(body, pose, rates[steps])
        depths = env.medium_depth - positions[..., 2]
        contact = (depths > 0.0).any(axis=-1)
        sinkage = np.zeros(len(contact))
        if env.kind == "gravel" and contact.any():
            facing_down = np.clip(-_face_normals(pose)[..., 2], 0.0, None)
            down_areas = body.voxel_edge**2 * (facing_down @ exposed.T)
            clearance = positions[..., 2].min(axis=-1)
            sinkage = np.where(contact, _sinkage_batch(env, depths, down_areas, clearance), 0.0)
            depths = depths + sinkage[:, None]
        yield _StrideWindow(steps, pose, positions, velocities, depths, contact, sinkage)


def sinkage_profile(
    body: LegBody,
    env: EnvironmentModel,
    chain: KinematicChain,
    simulation: SimulationConfig,
) -> np.ndarray:
    """Gravel sinkage (m) at every step; zero outside gravel and on steps without contact."""
    return np.concatenate([window.sinkage for window in _stride_windows(body, env, chain, simulation)])


def simulate_stride(
    body: LegBody,
    env: EnvironmentModel,
    chain: KinematicChain,
    simulation: SimulationConfig,
) -> np.ndarray:
    """Per-step torque magnitudes, shape (n_steps, 3)."""
    trace = np.zeros((simulation.n_steps, len(JOINTS)))
    face_area = body.voxel_edge**2
    exposed = body.exposed.astype(float)
    for window in _stride_windows(body, env, chain, simulation):
        if not window.contact.any():
            continue
        speeds = np.linalg.norm(window.velocities, axis=-1, keepdims=True)
        unit = np.divide(window.velocities, speeds, out=np.zeros_like(window.velocities), where=speeds > 0)
        facing = np.clip(np.einsum("svj,sfj->svf", unit, _face_normals(window.pose)), 0.0, None)
        areas = face_area * (exposed * facing).sum(axis=-1)
        forces = medium_forces(env, window.depths, window.velocities, areas)
        trace[window.steps] = np.abs(joint_torques(window.pose, window.positions, forces))
    return trace


def evaluate_leg(genome: LegGenome, env: EnvironmentModel, config: EvaluationConfig | None = None) -> EvaluationResult:
    config = config or EvaluationConfig()
    n_steps = config.simulation.n_steps
    try:
        grid = phenotype(genome, config.voxelizer)
    except DegenerateGenomeError as exc:
        logger.debug("rejected genome={} reason={}", genome.id, exc)
        return EvaluationResult.reject(str(exc), n_steps)
    filtered, connected = check_structure(grid, config.structural)
    stats = occupancy_stats(filtered)
    if not connected:
        logger.debug("rejected genome={} reason=disconnected", genome.id)
        return EvaluationResult.reject("disconnected", n_steps, delta=stats.delta, voxel_count=stats.occupied_count)

    trace = simulate_stride(leg_body(filtered), env, config.chain, config.simulation)
    tau = float(trace.sum())
    return EvaluationResult(
        tau=tau,
        delta=stats.delta,
        fitness=fitness_from(tau, n_steps, stats.delta),
        rejected=False,
        n_steps=n_steps,
        voxel_count=stats.occupied_count,
        trace=trace if config.simulation.record_trace else None,
    )


def write_trace_csv(result: EvaluationResult, path: Path) -> Path:
    if result.trace is None:
        raise ValueError("result has no torque trace; evaluate with record_trace enabled")
    frame = pd.DataFrame(result.trace, columns=list(JOINTS))
    frame.insert(0, "step", np.arange(len(frame)))
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.10g")
    except OSError as exc:
        raise ExportError(path, exc.strerror or str(exc)) from exc
    return path


def evaluate_or_reject(
    genome: LegGenome,
    env: EnvironmentModel,
    config: EvaluationConfig | None = None,
) -> EvaluationResult:
    """evaluate_leg that never raises; any failure becomes a rejected result carrying the error text."""
    config = config or EvaluationConfig()
    try:
        return evaluate_leg(genome, env, config)
    except Exception as exc:
        logger.warning("evaluation failed genome={} error={!r}", genome.id, exc)
        return EvaluationResult.reject(f"{type(exc).__name__}: {exc}", config.simulation.n_steps)
