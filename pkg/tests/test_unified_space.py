import numpy as np
import pytest

from crossemb import geometry, unified_space
from crossemb.errors import (
    EmptyDataset,
    InsufficientFrames,
    InvalidComponent,
    UnknownEmbodimentTag,
)
from crossemb.unified_space import (
    MODE_PER_EMBODIMENT,
    MODE_SHARED,
    NormalizationStats,
    UnifiedState,
    compute_stats,
    decode_state,
    denormalize,
    eef_indices,
    encode_state,
    identity_state_vector,
    normalize,
)


def two_pass_stats_oracle(frames):
    """Brute-force two-pass mean/population-variance."""
    frames = np.asarray(frames, dtype=float)
    mean = frames.sum(axis=0) / len(frames)
    var = ((frames - mean) ** 2).sum(axis=0) / len(frames)
    return mean, np.sqrt(var)


def make_state(rng):
    ident = geometry.encode_rot6d(np.eye(3))
    wrist_l = rng.normal(scale=0.1, size=3)
    wrist_r = rng.normal(scale=0.1, size=3)
    tips = np.concatenate(
        [wrist_l + rng.normal(scale=0.05, size=(5, 3)), wrist_r + rng.normal(scale=0.05, size=(5, 3))]
    )
    return UnifiedState(
        head_rot=ident,
        left_wrist_rot=geometry.encode_rot6d(geometry.rotation_about_axis(np.array([0.0, 0, 1]), rng.random())),
        right_wrist_rot=ident,
        left_wrist_pos=wrist_l,
        right_wrist_pos=wrist_r,
        fingertips=tips,
    )


def test_identity_state_layout():
    vec = identity_state_vector()
    assert vec.shape == (54,)
    expected_head = [1, 0, 0, 0, 1, 0]
    np.testing.assert_allclose(vec[:6], expected_head)
    np.testing.assert_allclose(vec[6:12], expected_head)
    np.testing.assert_allclose(vec[12:18], expected_head)
    np.testing.assert_allclose(vec[18:], 0)


def test_roundtrip_bit_exact():
    rng = np.random.default_rng(0)
    state = make_state(rng)
    vec = encode_state(state)
    back = decode_state(vec)
    assert np.array_equal(encode_state(back), vec)


def test_layout_indices_for_left_wrist():
    rng = np.random.default_rng(1)
    state = make_state(rng)
    state = UnifiedState(
        head_rot=state.head_rot,
        left_wrist_rot=state.left_wrist_rot,
        right_wrist_rot=state.right_wrist_rot,
        left_wrist_pos=np.array([0.3, 0.2, 1.0]),
        right_wrist_pos=state.right_wrist_pos,
        fingertips=state.fingertips,
    )
    vec = encode_state(state)
    np.testing.assert_allclose(vec[18:21], [0.3, 0.2, 1.0])


def test_encode_rejects_bad_rotation_and_nonfinite():
    rng = np.random.default_rng(2)
    state = make_state(rng)
    bad_rot = UnifiedState(
        head_rot=np.zeros(6),
        left_wrist_rot=state.left_wrist_rot,
        right_wrist_rot=state.right_wrist_rot,
        left_wrist_pos=state.left_wrist_pos,
        right_wrist_pos=state.right_wrist_pos,
        fingertips=state.fingertips,
    )
    with pytest.raises(InvalidComponent):
        encode_state(bad_rot)
    bad_pos = UnifiedState(
        head_rot=state.head_rot,
        left_wrist_rot=state.left_wrist_rot,
        right_wrist_rot=state.right_wrist_rot,
        left_wrist_pos=np.array([np.inf, 0, 0]),
        right_wrist_pos=state.right_wrist_pos,
        fingertips=state.fingertips,
    )
    with pytest.raises(InvalidComponent):
        encode_state(bad_pos)


def test_eef_indices_exact():
    idx = eef_indices()
    assert set(idx.tolist()) == {18, 19, 20, 21, 22, 23}
    assert len(idx) == 6
    complement = set(range(54)) - set(idx.tolist())
    assert len(complement) == 48
    assert set(idx.tolist()).isdisjoint(set(range(24, 54)))


def test_hand_reach_validation():
    vec = identity_state_vector()
    vec[24:27] = [1.0, 0, 0]  # left thumb 1 m from wrist at origin
    with pytest.raises(InvalidComponent):
        unified_space.validate_state_vector(vec)
    unified_space.validate_state_vector(vec, check_reach=False)


# --- statistics ----------------------------------------------------------

def test_constant_dataset_stats():
    vec = identity_state_vector()
    frames = np.tile(vec, (5, 1))
    stats = compute_stats({"human": frames}, mode=MODE_SHARED, epsilon=1e-6)
    entry = stats.resolve("human")
    np.testing.assert_allclose(entry.mean, vec)
    np.testing.assert_allclose(entry.std, 1e-6)


def test_population_convention():
    frames = np.stack([np.zeros(54), np.full(54, 2.0)])
    stats = compute_stats({"x": frames}, mode=MODE_SHARED, epsilon=1e-6)
    entry = stats.resolve(None)
    np.testing.assert_allclose(entry.mean, 1.0)
    np.testing.assert_allclose(entry.std, 1.0)


def test_stats_match_two_pass_oracle():
    rng = np.random.default_rng(4)
    frames = rng.normal(size=(1000, 54))
    stats = compute_stats({"human": frames}, mode=MODE_SHARED, epsilon=1e-12)
    mean, std = two_pass_stats_oracle(frames)
    entry = stats.resolve(None)
    np.testing.assert_allclose(entry.mean, mean, atol=1e-10)
    np.testing.assert_allclose(entry.std, std, atol=1e-10)


def test_per_embodiment_mode_and_errors():
    rng = np.random.default_rng(5)
    human = rng.normal(size=(10, 54))
    robot = rng.normal(loc=3.0, size=(10, 54))
    stats = compute_stats(
        {"human": human, "robot": robot}, mode=MODE_PER_EMBODIMENT, epsilon=1e-6
    )
    x = rng.normal(size=54)
    assert not np.allclose(normalize(x, stats, "human"), normalize(x, stats, "robot"))
    with pytest.raises(UnknownEmbodimentTag):
        normalize(x, stats, "alien")
    with pytest.raises(InsufficientFrames):
        compute_stats({"human": human[:1]}, mode=MODE_PER_EMBODIMENT)
    with pytest.raises(EmptyDataset):
        compute_stats({}, mode=MODE_SHARED)


def test_per_embodiment_identical_data_degrades_to_shared():
    rng = np.random.default_rng(6)
    frames = rng.normal(size=(50, 54))
    per = compute_stats(
        {"human": frames, "robot": frames}, mode=MODE_PER_EMBODIMENT, epsilon=1e-6
    )
    shared = compute_stats({"all": frames}, mode=MODE_SHARED, epsilon=1e-6)
    np.testing.assert_array_equal(per.resolve("human").mean, shared.resolve(None).mean)
    np.testing.assert_array_equal(per.resolve("robot").std, shared.resolve(None).std)


def test_normalize_roundtrip_and_zero_at_mean():
    rng = np.random.default_rng(7)
    frames = rng.normal(size=(100, 54))
    stats = compute_stats({"h": frames}, mode=MODE_SHARED, epsilon=1e-6)
    entry = stats.resolve(None)
    np.testing.assert_allclose(normalize(entry.mean, stats), 0.0, atol=1e-12)
    x = rng.normal(size=54)
    np.testing.assert_allclose(denormalize(normalize(x, stats), stats), x, atol=1e-10)


def test_normalized_dataset_is_standardized():
    rng = np.random.default_rng(8)
    frames = rng.normal(loc=2.0, scale=3.0, size=(500, 54))
    stats = compute_stats({"h": frames}, mode=MODE_SHARED, epsilon=1e-6)
    normed = normalize(frames, stats)
    assert np.max(np.abs(normed.mean(axis=0))) <= 1e-8
    assert np.max(np.abs(normed.std(axis=0) - 1.0)) <= 1e-6


def test_stats_json_roundtrip_and_digest():
    rng = np.random.default_rng(9)
    frames = rng.normal(size=(20, 54))
    stats = compute_stats(
        {"human": frames, "robot": frames + 1}, mode=MODE_PER_EMBODIMENT, epsilon=1e-5
    )
    doc = stats.to_json_dict()
    assert doc["mode"] == MODE_PER_EMBODIMENT
    assert set(doc["entries"].keys()) == {"human", "robot"}
    back = NormalizationStats.from_json_dict(doc)
    assert back.digest() == stats.digest()
    np.testing.assert_array_equal(back.resolve("human").mean, stats.resolve("human").mean)
