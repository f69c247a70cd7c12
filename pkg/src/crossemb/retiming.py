"""Temporal alignment: slow-down resampling and stream synchronization.

Human demonstrations run roughly four times faster than teleoperated
robot motion, so they are stretched by a slow-down factor and resampled
uniformly at the robot control rate. Robot trajectories are never
retimed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from . import geometry, unified_space
from .errors import DegenerateTrajectory, EmptyStream

DEFAULT_BODY_MOTION_THRESHOLD_M = 0.15


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped unified-state sequence for one embodiment.

    `head_positions` carries the canonical-frame head translation per
    frame when known (human captures); the 54-dim state itself holds no
    head position.
    """

    times: np.ndarray   # (N,), seconds, strictly increasing
    states: np.ndarray  # (N, 54)
    embodiment_tag: str
    nominal_rate: float
    head_positions: np.ndarray | None = None  # (N, 3) or None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if times.ndim != 1 or times.shape[0] < 2:
            raise DegenerateTrajectory("trajectory needs at least 2 frames")
        if np.any(np.diff(times) <= 0):
            raise DegenerateTrajectory("timestamps must be strictly increasing")
        if states.shape != (times.shape[0], unified_space.STATE_DIM):
            raise DegenerateTrajectory(
                f"states must be (N, 54) matching times, got {states.shape}"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        if self.head_positions is not None:
            hp = np.asarray(self.head_positions, dtype=float)
            if hp.shape != (times.shape[0], 3):
                raise DegenerateTrajectory(f"head_positions must be (N, 3), got {hp.shape}")
            object.__setattr__(self, "head_positions", hp)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def __len__(self) -> int:
        return int(self.times.shape[0])


@dataclass(frozen=True)
class SlowdownFactor:
    """Temporal stretch applied to human demonstrations."""

    alpha: float

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha <= 1.0:
            raise ValueError(f"slow-down factor must be finite and > 1, got {self.alpha}")


def interpolate_states(s0: np.ndarray, s1: np.ndarray, u: float) -> np.ndarray:
    """Blend two 54-vectors: positions lerp, rotation blocks slerp."""
    out = (1.0 - u) * s0 + u * s1
    for sl in unified_space.ROTATION_SLICES:
        q0 = geometry.quat_from_matrix(geometry.decode_rot6d(s0[sl]))
        q1 = geometry.quat_from_matrix(geometry.decode_rot6d(s1[sl]))
        out[sl] = geometry.encode_rot6d(geometry.quat_to_matrix(geometry.slerp(q0, q1, u)))
    return out


def retime(
    traj: Trajectory, alpha: float | SlowdownFactor, out_rate: float
) -> Trajectory:
    """Stretch a trajectory by `alpha` and resample uniformly at `out_rate`.

    Output duration equals alpha * input duration to within one output
    frame period; the first and last output states equal the input
    endpoints exactly.
    """
    a = alpha.alpha if isinstance(alpha, SlowdownFactor) else float(alpha)
    if not np.isfinite(a) or a < 1.0:
        raise ValueError(f"alpha must be finite and >= 1, got {a}")
    if out_rate <= 0:
        raise ValueError(f"out_rate must be positive, got {out_rate}")
    t0 = traj.times[0]
    stretched = a * traj.duration
    n_intervals = max(1, int(round(stretched * out_rate)))
    out_times = t0 + np.arange(n_intervals + 1) / out_rate

    have_head = traj.head_positions is not None
    out_states = np.empty((n_intervals + 1, unified_space.STATE_DIM))
    out_head = np.empty((n_intervals + 1, 3)) if have_head else None
    for k in range(n_intervals + 1):
        if k == 0:
            src = traj.times[0]
        elif k == n_intervals:
            src = traj.times[-1]
        else:
            src = min(t0 + (out_times[k] - t0) / a, traj.times[-1])
        j = int(np.searchsorted(traj.times, src, side="right")) - 1
        j = min(max(j, 0), len(traj) - 2)
        span = traj.times[j + 1] - traj.times[j]
        u = float(np.clip((src - traj.times[j]) / span, 0.0, 1.0))
        if u == 0.0:
            out_states[k] = traj.states[j]
        elif u == 1.0:
            out_states[k] = traj.states[j + 1]
        else:
            out_states[k] = interpolate_states(traj.states[j], traj.states[j + 1], u)
        if have_head:
            out_head[k] = (1.0 - u) * traj.head_positions[j] + u * traj.head_positions[j + 1]
    return Trajectory(
        times=out_times,
        states=out_states,
        embodiment_tag=traj.embodiment_tag,
        nominal_rate=out_rate,
        head_positions=out_head,
    )


@dataclass(frozen=True)
class SyncResult:
    pairs: tuple  # ((proprio_record, visual_record), ...)
    dropped: int


def sync_streams(
    proprio: Sequence[tuple[float, Any]],
    visual: Sequence[tuple[float, Any]],
    max_skew: float,
) -> SyncResult:
    """Pair every proprio record with the closest-timestamp visual frame.

    Pairs whose skew exceeds `max_skew` are dropped and counted; ties go
    to the earlier visual frame. Both inputs must be timestamp-sorted.
    """
    if len(proprio) == 0 or len(visual) == 0:
        raise EmptyStream("both streams must be nonempty")
    vis_times = np.array([t for t, _ in visual], dtype=float)
    pairs = []
    dropped = 0
    for t, payload in proprio:
        i = int(np.searchsorted(vis_times, t, side="left"))
        # Candidates: the frame at/after t and the one before it.
        best = None
        for j in (i - 1, i):
            if 0 <= j < len(visual):
                dt = abs(vis_times[j] - t)
                # Strict < keeps the earlier frame on ties.
                if best is None or dt < best[0]:
                    best = (dt, j)
        if best[0] > max_skew:
            dropped += 1
            continue
        pairs.append(((t, payload), visual[best[1]]))
    return SyncResult(pairs=tuple(pairs), dropped=dropped)


@dataclass(frozen=True)
class BodyMotionReport:
    excursion_m: float
    threshold_m: float
    passed: bool

    def to_json_dict(self, episode_id: str = "") -> dict:
        return {
            "episode_id": episode_id,
            "excursion_m": self.excursion_m,
            "pass": self.passed,
        }


def body_motion_check(
    traj: Trajectory, threshold: float = DEFAULT_BODY_MOTION_THRESHOLD_M
) -> BodyMotionReport:
    """Flag episodes whose head drifts too far from its initial position.

    Trajectories without head-position metadata (robot logs) are treated
    as stationary.
    """
    if traj.head_positions is None:
        excursion = 0.0
    else:
        deltas = traj.head_positions - traj.head_positions[0]
        excursion = float(np.max(np.linalg.norm(deltas, axis=1)))
    return BodyMotionReport(
        excursion_m=excursion, threshold_m=threshold, passed=excursion <= threshold
    )
