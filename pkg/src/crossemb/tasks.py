"""Synthetic desk-scale tasks for the rollout harness and experiments.

The reach task mirrors the grid-placement evaluation: goals live on a
3x3 grid of 10 cm cells; robot demonstrations cover only two cells while
human-style demonstrations cover all nine, with a wider start
distribution and 4x faster motion (slowed down at ingestion).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry, retiming, unified_space
from .dataset import DemonstrationEpisode
from .geometry import Pose
from .kinematics import (
    EmbodimentConfig,
    IkParams,
    RobotCommand,
    embed_robot_state,
    forward_kinematics,
    hand_fingertips,
    retarget_action,
)
from .retiming import Trajectory

# Natural elbow-bent home configurations (radians); artifact defaults.
HOME_ARM_Q_7 = np.array([-1.7, -0.2, 0.0, 2.1, 0.6, 0.0, 0.0])
HOME_ARM_Q_5 = np.array([-1.7, -0.2, 0.0, 2.1, 0.0])
HAND_REST = np.array([0.25, 0.2, 0.2, 0.2, 0.2, 0.5])

GRID_ORIGIN = np.array([0.10, -0.37, 0.15])  # lower corner of cell (0, 0)
GRID_CELL = 0.10


@dataclass(frozen=True)
class GoalGrid:
    """Row-major 3x3 grid of square cells on the table plane."""

    origin: np.ndarray = field(default_factory=lambda: GRID_ORIGIN.copy())
    cell_size: float = GRID_CELL
    rows: int = 3
    cols: int = 3

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def cell_corner(self, cell: int) -> np.ndarray:
        r, c = divmod(cell, self.cols)
        return self.origin + np.array([c * self.cell_size, r * self.cell_size, 0.0])

    def cell_center(self, cell: int) -> np.ndarray:
        return self.cell_corner(cell) + np.array([self.cell_size / 2, self.cell_size / 2, 0.0])

    def sample_goal(self, cell: int, rng: np.random.Generator) -> np.ndarray:
        # Keep samples off the cell border so neighbouring cells stay distinct.
        u = 0.15 + 0.7 * rng.random(2)
        return self.cell_corner(cell) + np.array(
            [u[0] * self.cell_size, u[1] * self.cell_size, 0.0]
        )


class FeatureCodec:
    """Random-Fourier goal encoding plus observation noise.

    Stands in for visual features: smooth in the goal position but not
    linearly extrapolatable, so training coverage matters.
    """

    def __init__(self, dim: int = 12, lengthscale: float = 0.12, noise: float = 0.02,
                 seed: int = 1234):
        rng = np.random.Generator(np.random.PCG64(seed))
        self.dim = dim
        self.noise = noise
        self._W = rng.standard_normal((dim, 3)) / lengthscale
        self._phase = rng.random(dim) * 2.0 * np.pi

    def encode(self, goal: np.ndarray) -> np.ndarray:
        return np.cos(self._W @ np.asarray(goal, dtype=float) + self._phase)

    def observe(self, goal: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.encode(goal) + self.noise * rng.standard_normal(self.dim)


def _min_jerk(tau: np.ndarray) -> np.ndarray:
    tau = np.clip(tau, 0.0, 1.0)
    return 10 * tau**3 - 15 * tau**4 + 6 * tau**5


def _smooth_noise(rng, n_frames: int, dim: int, amplitude: float, times: np.ndarray):
    """Sum of two random-phase sinusoids per channel; smooth and bounded."""
    out = np.zeros((n_frames, dim))
    for _ in range(2):
        freq = 0.3 + 1.2 * rng.random(dim)
        phase = rng.random(dim) * 2 * np.pi
        amp = amplitude * (0.5 + rng.random(dim))
        out += amp * np.sin(2 * np.pi * freq[None, :] * times[:, None] + phase[None, :])
    return out


@dataclass(frozen=True)
class ReachTask:
    """Right-arm reach to a goal point on the table grid."""

    name: str
    config_name: str
    grid: GoalGrid
    robot_cells: tuple[int, ...]
    goal_tolerance: float
    rate: float                 # robot control rate, Hz
    move_duration: float        # robot-speed move time, seconds
    hold_duration: float
    human_capture_rate: float
    alpha: float
    codec: FeatureCodec
    home_right_q: np.ndarray
    home_left_q: np.ndarray
    jitter: float = 0.002       # positional jitter amplitude, meters

    @property
    def ood_cells(self) -> tuple[int, ...]:
        return tuple(c for c in range(self.grid.n_cells) if c not in self.robot_cells)

    def home_command(self, config: EmbodimentConfig) -> RobotCommand:
        return RobotCommand(
            left_arm_q=self.home_left_q,
            right_arm_q=self.home_right_q,
            neck_q=np.zeros(2),
            left_hand=HAND_REST.copy(),
            right_hand=HAND_REST.copy(),
        )

    def goal_reached(self, state_vec: np.ndarray, goal: np.ndarray) -> bool:
        wrist = state_vec[unified_space.RIGHT_WRIST_POS]
        return float(np.linalg.norm(wrist - goal)) <= self.goal_tolerance


def make_reach_task(
    config: EmbodimentConfig,
    feature_dim: int = 12,
    feature_noise: float = 0.02,
    rate: float = 10.0,
    move_duration: float = 2.4,
    hold_duration: float = 0.4,
    alpha: float = 4.0,
    goal_tolerance: float = 0.02,
    robot_cells: tuple[int, ...] = (4, 5),
    codec_seed: int = 1234,
) -> ReachTask:
    n = config.right_arm.n_joints
    home = HOME_ARM_Q_7 if n == 7 else HOME_ARM_Q_5
    return ReachTask(
        name="reach",
        config_name=config.name,
        grid=GoalGrid(),
        robot_cells=robot_cells,
        goal_tolerance=goal_tolerance,
        rate=rate,
        move_duration=move_duration,
        hold_duration=hold_duration,
        human_capture_rate=30.0,
        alpha=alpha,
        codec=FeatureCodec(dim=feature_dim, noise=feature_noise, seed=codec_seed),
        home_right_q=home.copy(),
        home_left_q=home.copy(),
    )


def ideal_reach_trajectory(
    task: ReachTask,
    config: EmbodimentConfig,
    goal: np.ndarray,
    rng: np.random.Generator,
    capture_rate: float,
    move_duration: float,
    hold_duration: float,
    embodiment_tag: str,
    start_spread: float = 0.0,
) -> Trajectory:
    """Minimum-jerk right-wrist reach with smooth pose jitter everywhere."""
    right_home = forward_kinematics(config.right_arm, task.home_right_q)
    left_home = forward_kinematics(config.left_arm, task.home_left_q)
    p0 = right_home.translation + start_spread * rng.uniform(-1.0, 1.0, size=3)
    total = move_duration + hold_duration
    n = int(round(total * capture_rate)) + 1
    times = np.arange(n) / capture_rate
    s = _min_jerk(times / move_duration)
    wrist_path = p0[None, :] + s[:, None] * (np.asarray(goal) - p0)[None, :]

    jit = task.jitter
    # Smooth drift plus white sensor noise; the white part doubles as
    # augmentation (it carries no phase information).
    pos_noise = _smooth_noise(rng, n, 3, jit, times) + jit * rng.standard_normal((n, 3))
    left_noise = _smooth_noise(rng, n, 3, jit, times) + jit * rng.standard_normal((n, 3))
    rot_noise = _smooth_noise(rng, n, 9, 0.01, times) + 0.005 * rng.standard_normal((n, 9))
    hand_noise = _smooth_noise(rng, n, 12, 0.01, times) + 0.005 * rng.standard_normal((n, 12))

    states = np.empty((n, unified_space.STATE_DIM))
    head_positions = np.zeros((n, 3))
    head_positions[:, 2] = config.canonical_frame_offset
    head_positions += _smooth_noise(rng, n, 3, jit, times)
    for i in range(n):
        Rr = right_home.rotation @ geometry.rotation_about_axis(
            _unit(rot_noise[i, 0:3]), np.linalg.norm(rot_noise[i, 0:3])
        )
        Rl = left_home.rotation @ geometry.rotation_about_axis(
            _unit(rot_noise[i, 3:6]), np.linalg.norm(rot_noise[i, 3:6])
        )
        Rh = geometry.rotation_about_axis(_unit(rot_noise[i, 6:9]), np.linalg.norm(rot_noise[i, 6:9]))
        right_pos = wrist_path[i] + pos_noise[i]
        left_pos = left_home.translation + left_noise[i]
        left_act = np.clip(HAND_REST + hand_noise[i, :6], 0.0, 1.0)
        right_act = np.clip(HAND_REST + hand_noise[i, 6:], 0.0, 1.0)
        tips = np.concatenate(
            [
                hand_fingertips(left_act, Pose(Rl, left_pos), config.hand_model),
                hand_fingertips(right_act, Pose(Rr, right_pos), config.hand_model),
            ]
        )
        state = unified_space.UnifiedState(
            head_rot=geometry.encode_rot6d(Rh),
            left_wrist_rot=geometry.encode_rot6d(Rl),
            right_wrist_rot=geometry.encode_rot6d(Rr),
            left_wrist_pos=left_pos,
            right_wrist_pos=right_pos,
            fingertips=tips.reshape(10, 3),
        )
        states[i] = unified_space.encode_state(state)
    return Trajectory(
        times=times,
        states=states,
        embodiment_tag=embodiment_tag,
        nominal_rate=capture_rate,
        head_positions=head_positions,
    )


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class DemoBundle:
    """Episode plus the per-frame joint-state view (robot demos only)."""

    episode: DemonstrationEpisode
    joint_states: np.ndarray | None = None  # (N, 54), zero-padded joint form


def joint_state_vector(cmd: RobotCommand) -> np.ndarray:
    """Joint-position state padded to 54 dims (used by the state-space ablation)."""
    parts = np.concatenate(
        [cmd.left_arm_q, cmd.right_arm_q, cmd.neck_q, cmd.left_hand, cmd.right_hand]
    )
    out = np.zeros(unified_space.STATE_DIM)
    out[: parts.shape[0]] = parts
    return out


def teleop_simulate(
    reference: Trajectory,
    config: EmbodimentConfig,
    home_cmd: RobotCommand,
    ik_params: IkParams = IkParams(),
) -> tuple[np.ndarray, np.ndarray]:
    """Track a unified-space reference with IK; return achieved states and
    the joint-form view of the executed commands."""
    cmd = home_cmd
    achieved = np.empty_like(reference.states)
    joint_view = np.empty((len(reference), unified_space.STATE_DIM))
    for i in range(len(reference)):
        cmd, _ = retarget_action(reference.states[i], config, cmd, ik_params)
        achieved[i] = unified_space.encode_state(embed_robot_state(cmd, config))
        joint_view[i] = joint_state_vector(cmd)
    return achieved, joint_view


def generate_robot_demo(
    task: ReachTask,
    config: EmbodimentConfig,
    goal: np.ndarray,
    seed: int,
    demo_id: str,
    ik_params: IkParams = IkParams(),
) -> DemoBundle:
    """Teleoperation-style demo: the robot tracks an ideal robot-speed reach."""
    rng = np.random.Generator(np.random.PCG64(seed))
    reference = ideal_reach_trajectory(
        task,
        config,
        goal,
        rng,
        capture_rate=task.rate,
        move_duration=task.move_duration,
        hold_duration=task.hold_duration,
        embodiment_tag="robot",
        start_spread=0.01,
    )
    states, joint_view = teleop_simulate(reference, config, task.home_command(config), ik_params)
    feats = np.stack(
        [task.codec.observe(goal, rng) for _ in range(len(reference))]
    )
    episode = DemonstrationEpisode(
        id=demo_id,
        embodiment_tag="robot",
        instruction=f"reach the point in cell {goal_cell(task, goal)}",
        times=reference.times,
        states=states,
        features=feats,
        metadata={
            "device": "teleop-sim",
            "scene": "grid-table",
            "duration_s": float(reference.times[-1]),
            "retimed": False,
            "alpha_applied": 1.0,
            "goal": np.asarray(goal).tolist(),
        },
    )
    return DemoBundle(episode=episode, joint_states=joint_view)


def generate_human_demo(
    task: ReachTask,
    config: EmbodimentConfig,
    goal: np.ndarray,
    seed: int,
    demo_id: str,
    retime_demo: bool = True,
) -> DemoBundle:
    """Egocentric-capture-style demo: faster, wider start spread, retimed
    to robot speed unless `retime_demo` is False (speed ablation)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    # Without retiming the episode keeps its real-time duration, so pad
    # the post-reach hold to leave enough frames for chunk extraction.
    hold = task.hold_duration / task.alpha if retime_demo else task.hold_duration
    raw = ideal_reach_trajectory(
        task,
        config,
        goal,
        rng,
        capture_rate=task.human_capture_rate,
        move_duration=task.move_duration / task.alpha,
        hold_duration=hold,
        embodiment_tag="human",
        start_spread=0.04,
    )
    alpha = task.alpha if retime_demo else 1.0
    resampled = retiming.retime(raw, alpha, task.rate)
    feats = np.stack(
        [task.codec.observe(goal, rng) for _ in range(len(resampled))]
    )
    episode = DemonstrationEpisode(
        id=demo_id,
        embodiment_tag="human",
        instruction=f"reach the point in cell {goal_cell(task, goal)}",
        times=resampled.times,
        states=resampled.states,
        features=feats,
        metadata={
            "device": "vr-sim",
            "scene": "grid-table",
            "duration_s": float(resampled.times[-1] - resampled.times[0]),
            "retimed": retime_demo,
            "alpha_applied": alpha,
            "goal": np.asarray(goal).tolist(),
        },
    )
    return DemoBundle(episode=episode)


def goal_cell(task: ReachTask, goal: np.ndarray) -> int:
    rel = (np.asarray(goal)[:2] - task.grid.origin[:2]) / task.grid.cell_size
    c = int(np.clip(np.floor(rel[0]), 0, task.grid.cols - 1))
    r = int(np.clip(np.floor(rel[1]), 0, task.grid.rows - 1))
    return r * task.grid.cols + c
