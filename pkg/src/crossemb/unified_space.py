"""The 54-dimensional state-action space shared by humans and humanoids.

Layout of the flat vector (indices, all float64):
    0:6    head rotation, 6D code
    6:12   left wrist rotation, 6D code
    12:18  right wrist rotation, 6D code
    18:21  left wrist position, meters
    21:24  right wrist position, meters
    24:54  fingertip positions, meters: left thumb..pinky, right
           thumb..pinky, 3 values each

Positions are expressed in the episode's canonical base frame (see
`dataset.canonical_frame`). Actions use the identical layout.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import geometry
from .errors import (
    DegenerateRotation6D,
    EmptyDataset,
    InsufficientFrames,
    InvalidComponent,
    UnknownEmbodimentTag,
)

STATE_DIM = 54
HEAD_ROT = slice(0, 6)
LEFT_WRIST_ROT = slice(6, 12)
RIGHT_WRIST_ROT = slice(12, 18)
LEFT_WRIST_POS = slice(18, 21)
RIGHT_WRIST_POS = slice(21, 24)
FINGERTIPS = slice(24, 54)
ROTATION_SLICES = (HEAD_ROT, LEFT_WRIST_ROT, RIGHT_WRIST_ROT)

FINGERS_PER_HAND = 5
# Anatomical sanity bound on wrist-to-fingertip distance, meters.
DEFAULT_MAX_HAND_REACH = 0.35

SHARED_KEY = "shared"
MODE_SHARED = "shared"
MODE_PER_EMBODIMENT = "per_embodiment"


def eef_indices() -> np.ndarray:
    """Indices of the left and right wrist translation entries."""
    return np.arange(18, 24)


@dataclass(frozen=True)
class UnifiedState:
    """Structured view of one 54-dim state (or action) vector."""

    head_rot: np.ndarray        # (6,)
    left_wrist_rot: np.ndarray  # (6,)
    right_wrist_rot: np.ndarray # (6,)
    left_wrist_pos: np.ndarray  # (3,)
    right_wrist_pos: np.ndarray # (3,)
    fingertips: np.ndarray      # (10, 3) left thumb..pinky, right thumb..pinky

    def __post_init__(self):
        shapes = {
            "head_rot": (6,),
            "left_wrist_rot": (6,),
            "right_wrist_rot": (6,),
            "left_wrist_pos": (3,),
            "right_wrist_pos": (3,),
            "fingertips": (10, 3),
        }
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise InvalidComponent(f"{name} must have shape {shape}, got {arr.shape}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def encode_state(state: UnifiedState) -> np.ndarray:
    """Flatten to the canonical 54-vector; inverse of `decode_state`."""
    for name in ("head_rot", "left_wrist_rot", "right_wrist_rot"):
        try:
            geometry.decode_rot6d(getattr(state, name))
        except DegenerateRotation6D as exc:
            raise InvalidComponent(f"{name}: {exc}") from exc
    for name in ("left_wrist_pos", "right_wrist_pos", "fingertips"):
        if not np.all(np.isfinite(getattr(state, name))):
            raise InvalidComponent(f"{name} contains non-finite values")
    out = np.empty(STATE_DIM)
    out[HEAD_ROT] = state.head_rot
    out[LEFT_WRIST_ROT] = state.left_wrist_rot
    out[RIGHT_WRIST_ROT] = state.right_wrist_rot
    out[LEFT_WRIST_POS] = state.left_wrist_pos
    out[RIGHT_WRIST_POS] = state.right_wrist_pos
    out[FINGERTIPS] = state.fingertips.reshape(-1)
    return out


def decode_state(vec: np.ndarray) -> UnifiedState:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (STATE_DIM,):
        raise InvalidComponent(f"state vector must have shape (54,), got {vec.shape}")
    return UnifiedState(
        head_rot=vec[HEAD_ROT],
        left_wrist_rot=vec[LEFT_WRIST_ROT],
        right_wrist_rot=vec[RIGHT_WRIST_ROT],
        left_wrist_pos=vec[LEFT_WRIST_POS],
        right_wrist_pos=vec[RIGHT_WRIST_POS],
        fingertips=vec[FINGERTIPS].reshape(10, 3),
    )


def hand_reach_violations(
    vec: np.ndarray, max_reach: float = DEFAULT_MAX_HAND_REACH
) -> list[str]:
    """Return messages for fingertips farther than `max_reach` from their wrist."""
    vec = np.asarray(vec, dtype=float)
    tips = vec[FINGERTIPS].reshape(10, 3)
    problems = []
    for side, wrist_slice, rows in (
        ("left", LEFT_WRIST_POS, range(0, 5)),
        ("right", RIGHT_WRIST_POS, range(5, 10)),
    ):
        wrist = vec[wrist_slice]
        for i in rows:
            d = float(np.linalg.norm(tips[i] - wrist))
            if d > max_reach:
                problems.append(f"{side} fingertip {i % 5} is {d:.3f} m from wrist")
    return problems


def validate_state_vector(
    vec: np.ndarray,
    max_reach: float = DEFAULT_MAX_HAND_REACH,
    check_reach: bool = True,
) -> None:
    """Raise InvalidComponent unless `vec` satisfies the state invariants."""
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (STATE_DIM,):
        raise InvalidComponent(f"state vector must have shape (54,), got {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise InvalidComponent("state vector contains non-finite values")
    for sl in ROTATION_SLICES:
        try:
            geometry.decode_rot6d(vec[sl])
        except DegenerateRotation6D as exc:
            raise InvalidComponent(str(exc)) from exc
    if check_reach:
        problems = hand_reach_violations(vec, max_reach)
        if problems:
            raise InvalidComponent("; ".join(problems))


def identity_state_vector() -> np.ndarray:
    """All-identity rotations, all-zero positions."""
    ident = geometry.encode_rot6d(np.eye(3))
    out = np.zeros(STATE_DIM)
    for sl in ROTATION_SLICES:
        out[sl] = ident
    return out


@dataclass(frozen=True)
class StatsEntry:
    mean: np.ndarray  # (54,)
    std: np.ndarray   # (54,), clamped below by epsilon

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        std = np.array(self.std, dtype=float)
        if mean.shape != (STATE_DIM,) or std.shape != (STATE_DIM,):
            raise InvalidComponent("stats entries must be 54-vectors")
        mean.flags.writeable = False
        std.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


@dataclass(frozen=True)
class NormalizationStats:
    """Per-dimension mean/std, either one shared entry or one per tag."""

    mode: str
    epsilon: float
    entries: Mapping[str, StatsEntry] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in (MODE_SHARED, MODE_PER_EMBODIMENT):
            raise ValueError(f"unknown normalization mode {self.mode!r}")
        object.__setattr__(self, "entries", dict(self.entries))

    def resolve(self, tag: str | None) -> StatsEntry:
        if self.mode == MODE_SHARED:
            return self.entries[SHARED_KEY]
        if tag is None or tag not in self.entries:
            raise UnknownEmbodimentTag(f"tag {tag!r} not present in per-embodiment stats")
        return self.entries[tag]

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "epsilon": self.epsilon,
            "entries": {
                tag: {"mean": entry.mean.tolist(), "std": entry.std.tolist()}
                for tag, entry in sorted(self.entries.items())
            },
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "NormalizationStats":
        entries = {
            tag: StatsEntry(np.array(e["mean"]), np.array(e["std"]))
            for tag, e in doc["entries"].items()
        }
        return NormalizationStats(mode=doc["mode"], epsilon=float(doc["epsilon"]), entries=entries)

    def digest(self) -> str:
        payload = json.dumps(self.to_json_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


def _entry_from_frames(frames: np.ndarray, epsilon: float) -> StatsEntry:
    mean = frames.mean(axis=0)
    # Population (1/N) convention.
    std = np.sqrt(np.mean((frames - mean) ** 2, axis=0))
    return StatsEntry(mean=mean, std=np.maximum(std, epsilon))


def compute_stats(
    frames_by_tag: Mapping[str, np.ndarray],
    mode: str = MODE_SHARED,
    epsilon: float = 1e-6,
) -> NormalizationStats:
    """Mean/std over flattened 54-vectors, grouped according to `mode`."""
    if mode not in (MODE_SHARED, MODE_PER_EMBODIMENT):
        raise ValueError(f"unknown normalization mode {mode!r}")
    arrays = {
        tag: np.asarray(frames, dtype=float).reshape(-1, STATE_DIM)
        for tag, frames in frames_by_tag.items()
        if len(frames) > 0
    }
    total = sum(a.shape[0] for a in arrays.values())
    if total == 0:
        raise EmptyDataset("no frames to compute statistics over")
    if mode == MODE_SHARED:
        stacked = np.concatenate(list(arrays[tag] for tag in sorted(arrays)), axis=0)
        entries = {SHARED_KEY: _entry_from_frames(stacked, epsilon)}
    else:
        for tag, arr in sorted(arrays.items()):
            if arr.shape[0] < 2:
                raise InsufficientFrames(tag, arr.shape[0])
        entries = {tag: _entry_from_frames(arr, epsilon) for tag, arr in sorted(arrays.items())}
    return NormalizationStats(mode=mode, epsilon=epsilon, entries=entries)


def normalize(x: np.ndarray, stats: NormalizationStats, tag: str | None = None) -> np.ndarray:
    """(x - mean) / std elementwise; works on (54,) or (..., 54)."""
    entry = stats.resolve(tag)
    return (np.asarray(x, dtype=float) - entry.mean) / entry.std


def denormalize(y: np.ndarray, stats: NormalizationStats, tag: str | None = None) -> np.ndarray:
    entry = stats.resolve(tag)
    return np.asarray(y, dtype=float) * entry.std + entry.mean
