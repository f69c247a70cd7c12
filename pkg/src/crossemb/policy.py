"""Chunked-action behavior cloning with hand-written gradients.

The model is an MLP over the concatenated (normalized proprio, feature)
input producing a K x 54 action chunk in normalized space. The training
loss is an L1 term over the whole chunk plus a weighted L1 term over the
wrist-translation entries:

    total = mean|pred - target| + lambda_eef * mean|pred_EEF - target_EEF|

With `smoothing_delta` > 0 the absolute value is replaced by its Huber
smoothing near zero (used by gradient checks only).
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import geometry, unified_space
from .dataset import TrainingPair
from .errors import DimensionMismatch, NonFiniteLoss, VersionUnsupported
from .unified_space import STATE_DIM, NormalizationStats

CHECKPOINT_MAGIC = b"CEPOLIC1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PolicyConfig:
    feature_dim: int
    chunk_length: int
    proprio_dim: int = STATE_DIM
    hidden_layers: tuple[int, ...] = (256, 256)
    lambda_eef: float = 2.0
    learning_rate: float = 1e-3
    batch_size: int = 64
    grad_clip: float = 1.0
    seed: int = 0
    smoothing_delta: float = 0.0
    action_includes_head: bool = True

    def __post_init__(self):
        if self.feature_dim < 1 or self.chunk_length < 1 or self.proprio_dim < 1:
            raise ValueError("dimensions must be positive")
        if self.lambda_eef < 0:
            raise ValueError("lambda_eef must be >= 0")
        if self.smoothing_delta < 0:
            raise ValueError("smoothing_delta must be >= 0")
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))


@dataclass
class PolicyModel:
    config: PolicyConfig
    weights: list[np.ndarray]  # per layer, (fan_in, fan_out)
    biases: list[np.ndarray]   # per layer, (fan_out,)
    state_stats: NormalizationStats | None = None
    action_stats: NormalizationStats | None = None
    steps_completed: int = 0

    @property
    def output_dim(self) -> int:
        return self.config.chunk_length * STATE_DIM


def init_model(
    config: PolicyConfig,
    state_stats: NormalizationStats | None = None,
    action_stats: NormalizationStats | None = None,
) -> PolicyModel:
    """Seeded init; the output layer starts at zero so the initial policy
    predicts the (normalized) dataset mean."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    dims = [config.proprio_dim + config.feature_dim, *config.hidden_layers,
            config.chunk_length * STATE_DIM]
    weights, biases = [], []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        if i == len(dims) - 2:
            W = np.zeros((fan_in, fan_out))
        else:
            W = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return PolicyModel(
        config=config,
        weights=weights,
        biases=biases,
        state_stats=state_stats,
        action_stats=action_stats,
    )


def _forward_cached(model: PolicyModel, x: np.ndarray):
    """x: (B, in_dim) -> (activations per layer, output (B, out_dim))."""
    acts = [x]
    h = x
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return acts, h


def forward(model: PolicyModel, state: np.ndarray, feature: np.ndarray) -> np.ndarray:
    """Normalized-space chunk prediction, shape (K, 54)."""
    state = np.asarray(state, dtype=float)
    feature = np.asarray(feature, dtype=float)
    if state.shape != (model.config.proprio_dim,):
        raise DimensionMismatch(f"state must be ({model.config.proprio_dim},)")
    if feature.shape != (model.config.feature_dim,):
        raise DimensionMismatch(f"feature must be ({model.config.feature_dim},)")
    x = np.concatenate([state, feature])[None, :]
    _, out = _forward_cached(model, x)
    return out[0].reshape(model.config.chunk_length, STATE_DIM)


def _eef_mask(chunk_length: int) -> np.ndarray:
    mask = np.zeros((chunk_length, STATE_DIM), dtype=bool)
    mask[:, unified_space.eef_indices()] = True
    return mask


def _include_mask(config: PolicyConfig) -> np.ndarray:
    mask = np.ones((config.chunk_length, STATE_DIM), dtype=bool)
    if not config.action_includes_head:
        mask[:, unified_space.HEAD_ROT] = False
    return mask


def _abs_smoothed(r: np.ndarray, delta: float) -> np.ndarray:
    if delta <= 0.0:
        return np.abs(r)
    out = np.abs(r).astype(float)
    small = out < delta
    out[small] = r[small] * r[small] / (2.0 * delta) + delta / 2.0
    return out


def _abs_smoothed_grad(r: np.ndarray, delta: float) -> np.ndarray:
    if delta <= 0.0:
        return np.sign(r)
    g = np.sign(r).astype(float)
    small = np.abs(r) < delta
    g[small] = r[small] / delta
    return g


def loss(
    pred: np.ndarray,
    target: np.ndarray,
    lambda_eef: float,
    smoothing_delta: float = 0.0,
    include_mask: np.ndarray | None = None,
) -> tuple[float, float, float]:
    """Returns (total, base, eef). Arrays may be (K, 54) or (B, K, 54)."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape or pred.shape[-1] != STATE_DIM:
        raise DimensionMismatch(f"pred {pred.shape} vs target {target.shape}")
    r = _abs_smoothed(pred - target, smoothing_delta)
    eef_mask = _eef_mask(pred.shape[-2])
    if include_mask is None:
        base = float(r.mean())
    else:
        base = float(r[..., include_mask].mean())
    eef = float(r[..., eef_mask].mean())
    total = base + lambda_eef * eef
    return total, base, eef


@dataclass
class TrainReport:
    steps: list[int] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    base: list[float] = field(default_factory=list)
    eef: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    wall_time_s: float = 0.0

    def to_json_dict(self) -> dict:
        return asdict(self)


def _normalize_rows(
    vectors: np.ndarray, tags: Sequence[str], stats: NormalizationStats | None
) -> np.ndarray:
    if stats is None:
        return np.asarray(vectors, dtype=float)
    out = np.empty_like(np.asarray(vectors, dtype=float))
    for i, tag in enumerate(tags):
        entry = stats.resolve(tag)
        out[i] = (vectors[i] - entry.mean) / entry.std
    return out


def assemble_batch(model: PolicyModel, pairs: Sequence[TrainingPair]):
    """Stack pairs into (x, target) arrays in normalized space."""
    cfg = model.config
    tags = [p.embodiment_tag for p in pairs]
    states = _normalize_rows(np.stack([p.state for p in pairs]), tags, model.state_stats)
    feats = np.stack([p.feature for p in pairs]).astype(float)
    x = np.concatenate([states, feats], axis=1)
    chunks = np.stack([p.action_chunk for p in pairs])  # (B, K, 54)
    flat = chunks.reshape(len(pairs) * cfg.chunk_length, STATE_DIM)
    flat_tags = [t for t in tags for _ in range(cfg.chunk_length)]
    target = _normalize_rows(flat, flat_tags, model.action_stats)
    return x, target.reshape(len(pairs), cfg.chunk_length, STATE_DIM)


def backward(model: PolicyModel, x: np.ndarray, target: np.ndarray):
    """Loss and gradients for one batch; matches central finite differences.

    x: (B, in_dim), target: (B, K, 54) in normalized space.
    Returns (total, base, eef, grad_weights, grad_biases).
    """
    cfg = model.config
    B = x.shape[0]
    acts, out = _forward_cached(model, x)
    pred = out.reshape(B, cfg.chunk_length, STATE_DIM)
    r = pred - target
    total, base, eef = loss(
        pred, target, cfg.lambda_eef, cfg.smoothing_delta, _include_mask(cfg)
    )
    if not np.isfinite(total):
        raise NonFiniteLoss(f"loss is {total}")
    g = _abs_smoothed_grad(r, cfg.smoothing_delta)
    include = _include_mask(cfg)
    eef_mask = _eef_mask(cfg.chunk_length)
    dpred = np.zeros_like(g)
    n_base = B * int(include.sum())
    n_eef = B * int(eef_mask.sum())
    dpred[:, include] += g[:, include] / n_base
    dpred[:, eef_mask] += cfg.lambda_eef * g[:, eef_mask] / n_eef
    delta = dpred.reshape(B, -1)

    grad_w = [np.empty_like(W) for W in model.weights]
    grad_b = [np.empty_like(b) for b in model.biases]
    for i in range(len(model.weights) - 1, -1, -1):
        h_in = acts[i]
        grad_w[i] = h_in.T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (1.0 - acts[i] ** 2)
    return total, base, eef, grad_w, grad_b


def _global_norm(grads_w, grads_b) -> float:
    total = 0.0
    for g in (*grads_w, *grads_b):
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def train(
    model: PolicyModel,
    pair_stream: Iterator[TrainingPair],
    steps: int,
    report_every: int = 50,
) -> tuple[PolicyModel, TrainReport]:
    """Plain SGD with global gradient-norm clipping; deterministic."""
    cfg = model.config
    report = TrainReport()
    t_start = time.perf_counter()
    for step in range(1, steps + 1):
        pairs = [next(pair_stream) for _ in range(cfg.batch_size)]
        x, target = assemble_batch(model, pairs)
        total, base, eef, grad_w, grad_b = backward(model, x, target)
        norm = _global_norm(grad_w, grad_b)
        scale = 1.0
        if cfg.grad_clip > 0 and norm > cfg.grad_clip:
            scale = cfg.grad_clip / norm
        lr = cfg.learning_rate * scale
        for i in range(len(model.weights)):
            model.weights[i] -= lr * grad_w[i]
            model.biases[i] -= lr * grad_b[i]
        model.steps_completed += 1
        if step % report_every == 0 or step == steps:
            report.steps.append(model.steps_completed)
            report.total.append(total)
            report.base.append(base)
            report.eef.append(eef)
            report.grad_norm.append(norm)
    report.wall_time_s = time.perf_counter() - t_start
    return model, report


def predict(
    model: PolicyModel,
    state: np.ndarray,
    feature: np.ndarray,
    tag: str | None = None,
) -> np.ndarray:
    """Physical-units action chunk (K, 54), rotations re-orthogonalized."""
    raw_state = np.asarray(state, dtype=float)
    state_in = raw_state
    if model.state_stats is not None:
        state_in = unified_space.normalize(raw_state, model.state_stats, tag)
    chunk = forward(model, state_in, feature)
    if model.action_stats is not None:
        chunk = unified_space.denormalize(chunk, model.action_stats, tag)
    chunk = np.array(chunk)
    if not model.config.action_includes_head:
        # Head excluded from the action: carry the current head rotation.
        chunk[:, unified_space.HEAD_ROT] = raw_state[unified_space.HEAD_ROT]
    out = np.empty_like(chunk)
    out[:] = chunk
    for k in range(chunk.shape[0]):
        for sl in unified_space.ROTATION_SLICES:
            R = geometry.decode_rot6d(chunk[k, sl])
            out[k, sl] = geometry.encode_rot6d(R)
    return out


def penultimate_activations(model: PolicyModel, x: np.ndarray) -> np.ndarray:
    """Last hidden-layer activations for a (B, in_dim) batch."""
    acts, _ = _forward_cached(model, x)
    return acts[-2]


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def _config_to_dict(cfg: PolicyConfig) -> dict:
    doc = asdict(cfg)
    doc["hidden_layers"] = list(cfg.hidden_layers)
    return doc


def _config_from_dict(doc: dict) -> PolicyConfig:
    doc = dict(doc)
    doc["hidden_layers"] = tuple(doc["hidden_layers"])
    return PolicyConfig(**doc)


def save_checkpoint(model: PolicyModel, path: str | Path) -> None:
    """JSON header plus a raw float64 parameter block; reloads bit-exactly."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": _config_to_dict(model.config),
        "steps_completed": model.steps_completed,
        "eef_indices": unified_space.eef_indices().tolist(),
        "param_shapes": [list(W.shape) for W in model.weights],
        "state_stats": model.state_stats.to_json_dict() if model.state_stats else None,
        "action_stats": model.action_stats.to_json_dict() if model.action_stats else None,
        "stats_digests": {
            "state": model.state_stats.digest() if model.state_stats else None,
            "action": model.action_stats.digest() if model.action_stats else None,
        },
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    blocks = [CHECKPOINT_MAGIC, struct.pack("<Q", len(header_bytes)), header_bytes]
    for W, b in zip(model.weights, model.biases):
        blocks.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        blocks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(blocks))


def load_checkpoint(path: str | Path) -> PolicyModel:
    blob = Path(path).read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise VersionUnsupported(f"bad checkpoint magic {blob[:8]!r}")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + header_len].decode())
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise VersionUnsupported(f"checkpoint version {header.get('format_version')!r}")
    config = _config_from_dict(header["config"])
    weights, biases = [], []
    off = 16 + header_len
    for shape in header["param_shapes"]:
        fan_in, fan_out = shape
        n = fan_in * fan_out
        W = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(fan_in, fan_out)
        off += 8 * n
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(W.copy())
        biases.append(b.copy())
    state_stats = (
        NormalizationStats.from_json_dict(header["state_stats"])
        if header.get("state_stats")
        else None
    )
    action_stats = (
        NormalizationStats.from_json_dict(header["action_stats"])
        if header.get("action_stats")
        else None
    )
    return PolicyModel(
        config=config,
        weights=weights,
        biases=biases,
        state_stats=state_stats,
        action_stats=action_stats,
        steps_completed=int(header["steps_completed"]),
    )


def checkpoint_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
