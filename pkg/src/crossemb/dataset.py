"""Capture-log ingestion, processed-dataset storage, and co-training sampling.

Raw captures are JSON Lines (one frame per line) plus a meta.json sidecar.
Human frames carry world-frame head/wrist poses and ten fingertips; robot
frames carry joint readings and require an embodiment config. Processed
episodes are little-endian float64 blocks indexed by manifest.json, so
write/read round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import geometry, retiming, unified_space
from .errors import (
    BodyMotionRejected,
    ChecksumMismatch,
    DegenerateTrajectory,
    EmptySource,
    EpisodeTooShort,
    FrameSyncExhausted,
    ParseError,
    VersionUnsupported,
)
from .geometry import Pose
from .kinematics import EmbodimentConfig, RobotCommand, embed_robot_state
from .retiming import Trajectory, sync_streams

FORMAT_VERSION = 1
EPISODE_MAGIC = b"CEEPISO1"
DEFAULT_ALPHA = 4.0
DEFAULT_OUT_RATE = 30.0


@dataclass(frozen=True)
class RawCapture:
    """Parsed raw log: per-line records plus the meta sidecar."""

    device: str
    embodiment_tag: str
    instruction: str
    records: tuple  # dicts, timestamp-sorted
    episode_id: str = ""
    scene: str = ""
    kind: str = "human"  # "human" | "robot"


@dataclass(frozen=True)
class DemonstrationEpisode:
    id: str
    embodiment_tag: str
    instruction: str
    times: np.ndarray     # (N,)
    states: np.ndarray    # (N, 54)
    features: np.ndarray  # (N, F)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.ascontiguousarray(self.times, dtype="<f8")
        states = np.ascontiguousarray(self.states, dtype="<f8")
        features = np.ascontiguousarray(self.features, dtype="<f8")
        n = times.shape[0]
        if states.shape != (n, unified_space.STATE_DIM):
            raise DegenerateTrajectory("states shape must be (N, 54)")
        if features.ndim != 2 or features.shape[0] != n:
            raise DegenerateTrajectory("features shape must be (N, F)")
        if n >= 2 and np.any(np.diff(times) <= 0):
            raise DegenerateTrajectory("timestamps must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "features", features)

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return int(self.times.shape[0])


@dataclass(frozen=True)
class IngestOptions:
    alpha: float = DEFAULT_ALPHA
    out_rate: float = DEFAULT_OUT_RATE
    max_skew: float | None = None  # default: half the median visual period
    feature_dim: int = 16          # for synthesized features from image refs
    torso_offset: float = 0.60     # canonical-frame drop below the head, meters
    body_motion_threshold: float = retiming.DEFAULT_BODY_MOTION_THRESHOLD_M


def synthetic_features(key: str, dim: int) -> np.ndarray:
    """Deterministic stand-in feature vector for an image reference."""
    digest = hashlib.sha256(key.encode()).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.standard_normal(dim)


def _pose_from_record(doc: dict, line_no: int, key: str) -> Pose:
    try:
        entry = doc[key]
        t = np.array(entry["translation"], dtype=float)
        q = np.array(entry["rotation_quaternion"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(line_no, f"bad pose field {key!r}: {exc}") from exc
    if t.shape != (3,) or q.shape != (4,):
        raise ParseError(line_no, f"pose field {key!r} has wrong arity")
    return Pose(geometry.quat_to_matrix(q), t)


def load_raw_capture(path: str | Path) -> RawCapture:
    """Read <dir>/meta.json and <dir>/frames.jsonl."""
    root = Path(path)
    meta = json.loads((root / "meta.json").read_text())
    records = []
    with open(root / "frames.jsonl") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc}") from exc
            if "t" not in doc:
                raise ParseError(line_no, "record missing timestamp 't'")
            doc["_line"] = line_no
            records.append(doc)
    records.sort(key=lambda d: d["t"])
    kind = meta.get("kind", "robot" if any("joints" in r for r in records) else "human")
    return RawCapture(
        device=meta.get("device", "unknown"),
        embodiment_tag=meta["embodiment_tag"],
        instruction=meta.get("instruction", ""),
        records=tuple(records),
        episode_id=meta.get("id", root.name),
        scene=meta.get("scene", ""),
        kind=kind,
    )


def canonical_frame(head_pose: Pose, torso_offset: float) -> Pose:
    """Gravity-aligned frame anchored at the episode's first head pose.

    x-axis: the head's forward (+x) direction projected to horizontal;
    origin: the head position dropped by `torso_offset` along world z.
    """
    fwd = head_pose.rotation[:, 0].copy()
    fwd[2] = 0.0
    n = np.linalg.norm(fwd)
    if n < 1e-9:
        # Head looking straight up/down; keep the world x direction.
        fwd = np.array([1.0, 0.0, 0.0])
    else:
        fwd /= n
    z = np.array([0.0, 0.0, 1.0])
    y = np.cross(z, fwd)
    R = np.stack([fwd, y, z], axis=1)
    origin = head_pose.translation - np.array([0.0, 0.0, torso_offset])
    return Pose(R, origin)


def _split_streams(records: Sequence[dict], pose_keys: tuple[str, ...]):
    proprio, visual = [], []
    for doc in records:
        line_no = doc.get("_line", 0)
        if all(k in doc for k in pose_keys):
            proprio.append((float(doc["t"]), doc))
        if "feature_vector" in doc or "image_ref" in doc:
            visual.append((float(doc["t"]), doc))
    return proprio, visual


def _visual_feature(doc: dict, feature_dim: int) -> np.ndarray:
    if "feature_vector" in doc:
        return np.array(doc["feature_vector"], dtype=float)
    return synthetic_features(str(doc["image_ref"]), feature_dim)


def _default_skew(visual: Sequence[tuple[float, dict]]) -> float:
    if len(visual) < 2:
        return np.inf
    periods = np.diff([t for t, _ in visual])
    return float(np.median(periods)) / 2.0


def _ingest_human(raw: RawCapture, options: IngestOptions) -> DemonstrationEpisode:
    pose_keys = ("head_pose", "left_wrist_pose", "right_wrist_pose", "fingertips")
    proprio, visual = _split_streams(raw.records, pose_keys)
    if len(proprio) < 2:
        raise FrameSyncExhausted("fewer than two pose records in the capture")
    if not visual:
        raise FrameSyncExhausted("no visual records in the capture")

    first_head = _pose_from_record(proprio[0][1], proprio[0][1]["_line"], "head_pose")
    base = canonical_frame(first_head, options.torso_offset)
    base_inv = base.inverse()

    max_skew = options.max_skew if options.max_skew is not None else _default_skew(visual)
    sync = sync_streams(proprio, visual, max_skew)
    if len(sync.pairs) < 2:
        raise FrameSyncExhausted(
            f"synchronization left {len(sync.pairs)} frame(s); dropped {sync.dropped}"
        )

    times, states, feats, head_pos = [], [], [], []
    for (t, doc), (_, vdoc) in sync.pairs:
        line_no = doc["_line"]
        head = base_inv.compose(_pose_from_record(doc, line_no, "head_pose"))
        left = base_inv.compose(_pose_from_record(doc, line_no, "left_wrist_pose"))
        right = base_inv.compose(_pose_from_record(doc, line_no, "right_wrist_pose"))
        tips = np.array(doc["fingertips"], dtype=float)
        if tips.shape != (10, 3):
            raise ParseError(line_no, f"fingertips must be 10x3, got {tips.shape}")
        tips = base_inv.apply(tips)
        state = unified_space.UnifiedState(
            head_rot=geometry.encode_rot6d(head.rotation),
            left_wrist_rot=geometry.encode_rot6d(left.rotation),
            right_wrist_rot=geometry.encode_rot6d(right.rotation),
            left_wrist_pos=left.translation,
            right_wrist_pos=right.translation,
            fingertips=tips,
        )
        times.append(t)
        states.append(unified_space.encode_state(state))
        feats.append(_visual_feature(vdoc, options.feature_dim))
        head_pos.append(head.translation)

    traj = Trajectory(
        times=np.array(times),
        states=np.array(states),
        embodiment_tag=raw.embodiment_tag,
        nominal_rate=options.out_rate,
        head_positions=np.array(head_pos),
    )
    report = retiming.body_motion_check(traj, options.body_motion_threshold)
    if not report.passed:
        raise BodyMotionRejected(report.excursion_m, report.threshold_m)

    retimed = retiming.retime(traj, options.alpha, options.out_rate)
    # Visual features cannot be interpolated; each output frame takes the
    # nearest source frame's feature under the stretched time map.
    feats = np.array(feats)
    src_times = (retimed.times - retimed.times[0]) / options.alpha + traj.times[0]
    idx = np.clip(np.searchsorted(traj.times, src_times, side="left"), 0, len(traj) - 1)
    left_ok = idx > 0
    nearer_left = np.zeros_like(idx, dtype=bool)
    nearer_left[left_ok] = np.abs(traj.times[idx[left_ok] - 1] - src_times[left_ok]) <= np.abs(
        traj.times[idx[left_ok]] - src_times[left_ok]
    )
    idx[nearer_left] -= 1
    out_feats = feats[idx]

    return DemonstrationEpisode(
        id=raw.episode_id,
        embodiment_tag=raw.embodiment_tag,
        instruction=raw.instruction,
        times=retimed.times,
        states=retimed.states,
        features=out_feats,
        metadata={
            "device": raw.device,
            "scene": raw.scene,
            "duration_s": float(retimed.times[-1] - retimed.times[0]),
            "retimed": True,
            "alpha_applied": options.alpha,
            "dropped_frames": sync.dropped,
            "head_excursion_m": report.excursion_m,
        },
    )


def _ingest_robot(
    raw: RawCapture, config: EmbodimentConfig, options: IngestOptions
) -> DemonstrationEpisode:
    proprio, visual = _split_streams(raw.records, ("joints",))
    if len(proprio) < 2:
        raise FrameSyncExhausted("fewer than two joint records in the capture")
    if not visual:
        raise FrameSyncExhausted("no visual records in the capture")
    max_skew = options.max_skew if options.max_skew is not None else _default_skew(visual)
    sync = sync_streams(proprio, visual, max_skew)
    if len(sync.pairs) < 2:
        raise FrameSyncExhausted(
            f"synchronization left {len(sync.pairs)} frame(s); dropped {sync.dropped}"
        )
    times, states, feats = [], [], []
    for (t, doc), (_, vdoc) in sync.pairs:
        line_no = doc["_line"]
        joints = doc["joints"]
        try:
            cmd = RobotCommand(
                left_arm_q=np.array(joints["left_arm"], dtype=float),
                right_arm_q=np.array(joints["right_arm"], dtype=float),
                neck_q=np.array(joints["neck"], dtype=float),
                left_hand=np.array(joints["left_hand"], dtype=float),
                right_hand=np.array(joints["right_hand"], dtype=float),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(line_no, f"bad joints record: {exc}") from exc
        state = embed_robot_state(cmd, config)
        times.append(t)
        states.append(unified_space.encode_state(state))
        feats.append(_visual_feature(vdoc, options.feature_dim))
    return DemonstrationEpisode(
        id=raw.episode_id,
        embodiment_tag=raw.embodiment_tag,
        instruction=raw.instruction,
        times=np.array(times),
        states=np.array(states),
        features=np.array(feats),
        metadata={
            "device": raw.device,
            "scene": raw.scene,
            "duration_s": float(times[-1] - times[0]),
            "retimed": False,
            "alpha_applied": 1.0,
            "dropped_frames": sync.dropped,
        },
    )


def ingest(
    raw: RawCapture,
    config: EmbodimentConfig | None = None,
    options: IngestOptions = IngestOptions(),
) -> DemonstrationEpisode:
    """Convert a raw capture into a processed episode.

    Human captures are re-expressed in the canonical base frame, stream
    synchronized, checked for body motion, and retimed; robot captures
    are embedded frame by frame and never retimed.
    """
    if raw.kind == "robot":
        if config is None:
            raise ValueError("robot captures require an EmbodimentConfig")
        return _ingest_robot(raw, config, options)
    return _ingest_human(raw, options)


# --------------------------------------------------------------------------
# Processed dataset storage
# --------------------------------------------------------------------------


def _episode_bytes(ep: DemonstrationEpisode) -> bytes:
    n, f = len(ep), ep.feature_dim
    header = EPISODE_MAGIC + struct.pack("<II", n, f)
    return (
        header
        + ep.times.tobytes()
        + ep.states.tobytes()
        + ep.features.tobytes()
    )


def _episode_from_bytes(blob: bytes, entry: dict) -> DemonstrationEpisode:
    if blob[:8] != EPISODE_MAGIC:
        raise VersionUnsupported(f"bad episode magic {blob[:8]!r}")
    n, f = struct.unpack("<II", blob[8:16])
    off = 16
    times = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
    off += 8 * n
    states = np.frombuffer(blob, dtype="<f8", count=n * unified_space.STATE_DIM, offset=off)
    off += 8 * n * unified_space.STATE_DIM
    features = np.frombuffer(blob, dtype="<f8", count=n * f, offset=off)
    return DemonstrationEpisode(
        id=entry["id"],
        embodiment_tag=entry["embodiment_tag"],
        instruction=entry.get("instruction", ""),
        times=times.copy(),
        states=states.reshape(n, unified_space.STATE_DIM).copy(),
        features=features.reshape(n, f).copy(),
        metadata=dict(entry.get("metadata", {})),
    )


def write_dataset(
    episodes: Sequence[DemonstrationEpisode],
    directory: str | Path,
    stats_files: Mapping[str, str] | None = None,
) -> dict:
    """Write episodes plus manifest.json; returns the manifest dict."""
    root = Path(directory)
    (root / "episodes").mkdir(parents=True, exist_ok=True)
    dims = {ep.feature_dim for ep in episodes}
    if len(dims) > 1:
        raise DegenerateTrajectory(f"feature dims differ across episodes: {sorted(dims)}")
    entries = []
    for ep in episodes:
        blob = _episode_bytes(ep)
        rel = f"episodes/{ep.id}.bin"
        (root / rel).write_bytes(blob)
        entries.append(
            {
                "id": ep.id,
                "embodiment_tag": ep.embodiment_tag,
                "frame_count": len(ep),
                "file": rel,
                "sha256": hashlib.sha256(blob).hexdigest(),
                "instruction": ep.instruction,
                "metadata": ep.metadata,
            }
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "feature_dim": dims.pop() if dims else 0,
        "episodes": entries,
        "stats_files": dict(stats_files) if stats_files else None,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def read_dataset(directory: str | Path) -> tuple[dict, list[DemonstrationEpisode]]:
    """Load manifest + episodes, verifying version and checksums."""
    root = Path(directory)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionUnsupported(
            f"dataset format_version {manifest.get('format_version')!r} unsupported"
        )
    episodes = []
    for entry in manifest["episodes"]:
        blob = (root / entry["file"]).read_bytes()
        digest = hashlib.sha256(blob).hexdigest()
        if digest != entry["sha256"]:
            raise ChecksumMismatch(f"episode {entry['id']}: checksum mismatch")
        episodes.append(_episode_from_bytes(blob, entry))
    return manifest, episodes


# --------------------------------------------------------------------------
# Training pairs and the mixed-embodiment sampler
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingPair:
    pair_id: str
    embodiment_tag: str
    state: np.ndarray        # (54,)
    feature: np.ndarray      # (F,)
    action_chunk: np.ndarray # (K, 54)


def extract_pairs(
    episode: DemonstrationEpisode, chunk_length: int, stride: int = 1
) -> list[TrainingPair]:
    """Pairs (state_i, actions i+1..i+K); tails shorter than K are dropped."""
    if chunk_length < 1 or stride < 1:
        raise ValueError("chunk_length and stride must be positive")
    n = len(episode)
    if n < chunk_length + 1:
        raise EpisodeTooShort(
            f"episode {episode.id} has {n} frames; needs >= {chunk_length + 1}"
        )
    pairs = []
    count = (n - 1 - chunk_length) // stride + 1
    for i in range(count):
        start = i * stride
        pairs.append(
            TrainingPair(
                pair_id=f"{episode.id}#{start}",
                embodiment_tag=episode.embodiment_tag,
                state=episode.states[start],
                feature=episode.features[start],
                action_chunk=episode.states[start + 1 : start + 1 + chunk_length],
            )
        )
    return pairs


class MixedSampler:
    """Deterministic interleaved pair stream over multiple embodiments.

    The tag schedule realizes the weight ratio exactly at every prefix
    (largest-remainder apportionment, ties to the lexicographically first
    tag); within a tag, pairs follow a seeded permutation reshuffled per
    epoch. Single-owner iterator: not safe to share across consumers.
    """

    def __init__(
        self,
        pairs_by_tag: Mapping[str, Sequence[TrainingPair]],
        ratio: Mapping[str, float],
        seed: int = 0,
    ):
        self.tags = sorted(ratio.keys())
        if not self.tags:
            raise EmptySource("<no tags>")
        for tag in self.tags:
            if ratio[tag] <= 0:
                raise ValueError(f"weight for tag {tag!r} must be positive")
            if tag not in pairs_by_tag or len(pairs_by_tag[tag]) == 0:
                raise EmptySource(tag)
        self._pairs = {tag: list(pairs_by_tag[tag]) for tag in self.tags}
        total = float(sum(ratio[t] for t in self.tags))
        self._share = {t: ratio[t] / total for t in self.tags}
        self.seed = seed

    def _tag_rng(self, tag: str) -> np.random.Generator:
        idx = self.tags.index(tag)
        return np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=self.seed, spawn_key=(idx,)))
        )

    def stream(self, skip: int = 0) -> Iterable[TrainingPair]:
        """Infinite deterministic pair stream; `skip` fast-forwards."""
        emitted = {t: 0 for t in self.tags}
        rngs = {t: self._tag_rng(t) for t in self.tags}
        perms = {t: rngs[t].permutation(len(self._pairs[t])) for t in self.tags}
        cursor = {t: 0 for t in self.tags}
        step = 0
        while True:
            step += 1
            # Largest-remainder pick: most under-served tag wins.
            tag = max(
                self.tags,
                key=lambda t: (self._share[t] * step - emitted[t], -self.tags.index(t)),
            )
            emitted[tag] += 1
            if cursor[tag] >= len(perms[tag]):
                perms[tag] = rngs[tag].permutation(len(self._pairs[tag]))
                cursor[tag] = 0
            pair = self._pairs[tag][perms[tag][cursor[tag]]]
            cursor[tag] += 1
            if step > skip:
                yield pair

    def __iter__(self):
        return iter(self.stream())


def pair_stream_digest(sampler: MixedSampler, n: int = 10_000) -> str:
    """SHA-256 over the first n pair ids; stable for a fixed seed."""
    h = hashlib.sha256()
    stream = sampler.stream()
    for _ in range(n):
        h.update(next(stream).pair_id.encode())
        h.update(b"\n")
    return h.hexdigest()


def episodes_to_pairs_by_tag(
    episodes: Sequence[DemonstrationEpisode], chunk_length: int, stride: int = 1
) -> dict[str, list[TrainingPair]]:
    out: dict[str, list[TrainingPair]] = {}
    for ep in episodes:
        out.setdefault(ep.embodiment_tag, []).extend(extract_pairs(ep, chunk_length, stride))
    return out


def default_ratio(pairs_by_tag: Mapping[str, Sequence[TrainingPair]]) -> dict[str, float]:
    """Proportional-to-size mixing weights."""
    return {tag: float(len(pairs)) for tag, pairs in pairs_by_tag.items() if len(pairs) > 0}


def stats_from_episodes(
    episodes: Sequence[DemonstrationEpisode],
    mode: str = unified_space.MODE_SHARED,
    epsilon: float = 1e-6,
    kind: str = "state",
    chunk_length: int | None = None,
) -> unified_space.NormalizationStats:
    """State stats use every frame; action stats use frames 1..N (targets)."""
    frames: dict[str, list[np.ndarray]] = {}
    for ep in episodes:
        arr = ep.states if kind == "state" else ep.states[1:]
        frames.setdefault(ep.embodiment_tag, []).append(arr)
    stacked = {tag: np.concatenate(chunks, axis=0) for tag, chunks in frames.items()}
    return unified_space.compute_stats(stacked, mode=mode, epsilon=epsilon)
