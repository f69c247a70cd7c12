import numpy as np
import pytest

from crossemb import unified_space
from crossemb.dataset import MixedSampler, TrainingPair
from crossemb.errors import DimensionMismatch, NonFiniteLoss
from crossemb.policy import (
    PolicyConfig,
    assemble_batch,
    backward,
    forward,
    init_model,
    load_checkpoint,
    loss,
    predict,
    save_checkpoint,
    train,
)
from crossemb.unified_space import compute_stats, eef_indices


def eq1_loss_oracle(pred, target, lam):
    """One-line independent evaluation of the training loss."""
    r = np.abs(np.asarray(pred) - np.asarray(target))
    base = r.mean()
    eef = r[..., eef_indices()].mean()
    return base + lam * eef, base, eef


def make_pairs(tag, count, K=3, F=4, seed=0, constant_action=False):
    rng = np.random.default_rng(seed)
    base = unified_space.identity_state_vector()
    pairs = []
    const_chunk = np.tile(base, (K, 1))
    for i in range(count):
        state = base + np.concatenate([np.zeros(18), rng.normal(scale=0.1, size=36)])
        chunk = (
            const_chunk
            if constant_action
            else np.tile(base, (K, 1))
            + np.concatenate([np.zeros(18), rng.normal(scale=0.1, size=36)])
        )
        pairs.append(
            TrainingPair(
                pair_id=f"{tag}-{i}",
                embodiment_tag=tag,
                state=state,
                feature=rng.normal(size=F),
                action_chunk=np.asarray(chunk, dtype=float),
            )
        )
    return pairs


def small_model(K=2, F=3, hidden=(6,), seed=0, delta=0.0, lam=2.0, lr=1e-2):
    cfg = PolicyConfig(
        feature_dim=F,
        chunk_length=K,
        hidden_layers=hidden,
        lambda_eef=lam,
        learning_rate=lr,
        batch_size=4,
        seed=seed,
        smoothing_delta=delta,
    )
    return init_model(cfg)


# --- forward ----------------------------------------------------------------

def test_zero_final_layer_predicts_zero_chunk():
    model = small_model()
    out = forward(model, np.zeros(54), np.zeros(3))
    assert out.shape == (2, 54)
    np.testing.assert_array_equal(out, 0.0)


def test_forward_shape_and_determinism():
    model = small_model(K=5, F=4, hidden=(16, 8), seed=3)
    # give the output layer nonzero weights
    rng = np.random.default_rng(0)
    model.weights[-1][:] = rng.normal(size=model.weights[-1].shape)
    x_state, x_feat = rng.normal(size=54), rng.normal(size=4)
    out1 = forward(model, x_state, x_feat)
    out2 = forward(model, x_state, x_feat)
    assert out1.shape == (5, 54)
    np.testing.assert_array_equal(out1, out2)


def test_seed_determinism_of_init():
    a = small_model(seed=7, hidden=(32, 16))
    b = small_model(seed=7, hidden=(32, 16))
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)
    c = small_model(seed=8, hidden=(32, 16))
    assert any(not np.array_equal(wa, wc) for wa, wc in zip(a.weights, c.weights))


def test_forward_dimension_mismatch():
    model = small_model()
    with pytest.raises(DimensionMismatch):
        forward(model, np.zeros(53), np.zeros(3))
    with pytest.raises(DimensionMismatch):
        forward(model, np.zeros(54), np.zeros(4))


# --- loss ---------------------------------------------------------------------

def test_loss_zero_for_equal():
    pred = np.ones((3, 54))
    total, base, eef = loss(pred, pred, 2.0)
    assert total == base == eef == 0.0


def test_loss_single_residual_frozen_value():
    K = 1
    pred = np.zeros((K, 54))
    target = np.zeros((K, 54))
    pred[0, 18] = 0.1  # left wrist x
    total, base, eef = loss(pred, target, 2.0)
    assert abs(base - 0.1 / 54) <= 1e-15
    assert abs(eef - 0.1 / 6) <= 1e-15
    assert abs(total - (0.1 / 54 + 2 * 0.1 / 6)) <= 1e-15
    assert abs(total - 0.035185185185185187) <= 1e-12


def test_loss_matches_oracle_random():
    rng = np.random.default_rng(1)
    for _ in range(20):
        K = int(rng.integers(1, 6))
        pred = rng.normal(size=(K, 54))
        target = rng.normal(size=(K, 54))
        lam = float(rng.random() * 4)
        got = loss(pred, target, lam)
        want = eq1_loss_oracle(pred, target, lam)
        for g, w in zip(got, want):
            assert abs(g - w) <= 1e-12


def test_loss_decomposition_and_lambda_scaling():
    rng = np.random.default_rng(2)
    pred = rng.normal(size=(4, 54))
    target = rng.normal(size=(4, 54))
    total, base, eef = loss(pred, target, 2.0)
    assert abs(total - base - 2.0 * eef) <= 1e-12
    total4, _, _ = loss(pred, target, 4.0)
    assert total4 > total  # nonzero EEF residual


def test_loss_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        loss(np.zeros((2, 54)), np.zeros((3, 54)), 2.0)


# --- gradients -------------------------------------------------------------

def flatten_params(model):
    return np.concatenate([p.ravel() for p in (*model.weights, *model.biases)])


def set_params(model, flat):
    off = 0
    for arr in (*model.weights, *model.biases):
        n = arr.size
        arr[:] = flat[off : off + n].reshape(arr.shape)
        off += n


def batch_loss(model, x, target):
    total, *_ = backward(model, x, target)
    return total


def test_zero_residual_zero_gradients_with_smoothing():
    model = small_model(delta=1e-2)
    rng = np.random.default_rng(3)
    model.weights[-1][:] = 0.0
    x = rng.normal(size=(4, 57))
    target = np.zeros((4, 2, 54))
    total, base, eef, gw, gb = backward(model, x, target)
    assert total == pytest.approx(model.config.smoothing_delta / 2 * 3, abs=1e-9)
    # residuals are exactly zero at the quadratic floor: gradient vanishes
    for g in (*gw, *gb):
        np.testing.assert_array_equal(g, 0.0)


def test_single_parameter_sign():
    model = small_model(K=1, hidden=(4,), delta=0.0)
    rng = np.random.default_rng(4)
    for W in model.weights:
        W[:] = rng.normal(scale=0.3, size=W.shape)
    x = rng.normal(size=(2, 57))
    target = rng.normal(size=(2, 1, 54))
    base_val = batch_loss(model, x, target)
    _, _, _, gw, _ = backward(model, x, target)
    i, j = np.unravel_index(np.argmax(np.abs(gw[0])), gw[0].shape)
    h = 1e-4
    model.weights[0][i, j] += h
    up = batch_loss(model, x, target)
    model.weights[0][i, j] -= 2 * h
    down = batch_loss(model, x, target)
    # loss decreases against the gradient direction
    if gw[0][i, j] > 0:
        assert down < up
    else:
        assert up < down


def test_gradients_match_central_differences():
    model = small_model(K=2, F=3, hidden=(5,), seed=5, delta=1e-3)
    rng = np.random.default_rng(5)
    for W, b in zip(model.weights, model.biases):
        W[:] = rng.normal(scale=0.4, size=W.shape)
        b[:] = rng.normal(scale=0.1, size=b.shape)
    x = rng.normal(size=(3, 57))
    # keep residuals away from the Huber kink at |r| = delta
    target = rng.normal(size=(3, 2, 54)) + 0.5
    _, _, _, gw, gb = backward(model, x, target)
    analytic = np.concatenate([g.ravel() for g in (*gw, *gb)])
    flat0 = flatten_params(model)
    h = 1e-5
    numeric = np.empty_like(analytic)
    for k in range(flat0.size):
        flat = flat0.copy()
        flat[k] += h
        set_params(model, flat)
        up = batch_loss(model, x, target)
        flat[k] -= 2 * h
        set_params(model, flat)
        down = batch_loss(model, x, target)
        numeric[k] = (up - down) / (2 * h)
    set_params(model, flat0)
    denom = np.maximum(np.abs(numeric), 1e-6)
    rel = np.max(np.abs(analytic - numeric) / denom)
    assert rel < 1e-4


def test_nonfinite_loss_raises():
    model = small_model()
    x = np.full((2, 57), np.nan)
    with pytest.raises(NonFiniteLoss):
        backward(model, x, np.zeros((2, 2, 54)))


# --- training ----------------------------------------------------------------

def build_sampler(pairs, seed=0):
    return MixedSampler({"human": pairs}, {"human": 1.0}, seed=seed)


def make_stats(pairs, epsilon=1e-3):
    states = np.stack([p.state for p in pairs])
    actions = np.concatenate([p.action_chunk for p in pairs])
    return (
        compute_stats({"human": states}, epsilon=epsilon),
        compute_stats({"human": actions}, epsilon=epsilon),
    )


def test_zero_learning_rate_keeps_parameters():
    pairs = make_pairs("human", 30)
    state_stats, action_stats = make_stats(pairs)
    cfg = PolicyConfig(feature_dim=4, chunk_length=3, hidden_layers=(8,),
                       learning_rate=0.0, batch_size=4, seed=0)
    model = init_model(cfg, state_stats, action_stats)
    before = [W.copy() for W in model.weights]
    model, _ = train(model, build_sampler(pairs).stream(), steps=20)
    for W0, W1 in zip(before, model.weights):
        np.testing.assert_array_equal(W0, W1)


def test_constant_action_dataset_converges():
    pairs = make_pairs("human", 40, K=3, constant_action=True)
    state_stats, action_stats = make_stats(pairs)
    cfg = PolicyConfig(feature_dim=4, chunk_length=3, hidden_layers=(16,),
                       learning_rate=0.05, batch_size=8, seed=1)
    model = init_model(cfg, state_stats, action_stats)
    model, report = train(model, build_sampler(pairs).stream(), steps=2000,
                          report_every=100)
    assert report.total[-1] < 1e-3
    assert all(np.isfinite(v) and v >= 0 for v in report.total)


def test_training_seed_determinism_and_checkpoint_roundtrip(tmp_path):
    pairs = make_pairs("human", 30)
    state_stats, action_stats = make_stats(pairs)

    def run():
        cfg = PolicyConfig(feature_dim=4, chunk_length=3, hidden_layers=(8, 8),
                           learning_rate=0.02, batch_size=4, seed=9)
        model = init_model(cfg, state_stats, action_stats)
        model, _ = train(model, build_sampler(pairs, seed=9).stream(), steps=50)
        return model

    m1, m2 = run(), run()
    save_checkpoint(m1, tmp_path / "a.ckpt")
    save_checkpoint(m2, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    loaded = load_checkpoint(tmp_path / "a.ckpt")
    for W0, W1 in zip(m1.weights, loaded.weights):
        np.testing.assert_array_equal(W0, W1)
    assert loaded.config == m1.config
    assert loaded.steps_completed == 50
    assert loaded.state_stats.digest() == state_stats.digest()
    # bit-exact re-save
    save_checkpoint(loaded, tmp_path / "c.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "c.ckpt").read_bytes()


def test_resumed_training_equals_uninterrupted(tmp_path):
    pairs = make_pairs("human", 30)
    state_stats, action_stats = make_stats(pairs)
    cfg = PolicyConfig(feature_dim=4, chunk_length=3, hidden_layers=(8,),
                       learning_rate=0.02, batch_size=4, seed=2)

    full = init_model(cfg, state_stats, action_stats)
    full, _ = train(full, build_sampler(pairs, seed=2).stream(), steps=100)

    half = init_model(cfg, state_stats, action_stats)
    half, _ = train(half, build_sampler(pairs, seed=2).stream(), steps=60)
    save_checkpoint(half, tmp_path / "half.ckpt")
    resumed = load_checkpoint(tmp_path / "half.ckpt")
    skip = resumed.steps_completed * cfg.batch_size
    resumed, _ = train(
        resumed, build_sampler(pairs, seed=2).stream(skip=skip), steps=40
    )
    for W0, W1 in zip(full.weights, resumed.weights):
        np.testing.assert_array_equal(W0, W1)
    for b0, b1 in zip(full.biases, resumed.biases):
        np.testing.assert_array_equal(b0, b1)


# --- predict -----------------------------------------------------------------

def test_predict_equals_forward_with_identity_stats():
    rng = np.random.default_rng(11)
    model = small_model(K=2, F=3, hidden=(6,))
    model.weights[-1][:] = rng.normal(scale=0.05, size=model.weights[-1].shape)
    # no stats attached: predict = forward + re-orthogonalization
    state = unified_space.identity_state_vector()
    feature = rng.normal(size=3)
    raw = forward(model, state, feature)
    out = predict(model, state, feature)
    np.testing.assert_allclose(
        out[:, 18:], raw[:, 18:], atol=1e-12
    )  # non-rotation dims untouched


def test_predict_rotation_blocks_orthonormal():
    rng = np.random.default_rng(12)
    pairs = make_pairs("human", 40)
    state_stats, action_stats = make_stats(pairs)
    cfg = PolicyConfig(feature_dim=4, chunk_length=3, hidden_layers=(16,),
                       learning_rate=0.05, batch_size=8, seed=3)
    model = init_model(cfg, state_stats, action_stats)
    model, _ = train(model, build_sampler(pairs).stream(), steps=300)
    from crossemb.geometry import decode_rot6d

    for p in pairs[:10]:
        chunk = predict(model, p.state, p.feature, tag="human")
        for k in range(chunk.shape[0]):
            for sl in unified_space.ROTATION_SLICES:
                R = decode_rot6d(chunk[k, sl])  # must not raise
                assert np.max(np.abs(R.T @ R - np.eye(3))) <= 1e-9


def test_normalize_denormalize_consistency():
    pairs = make_pairs("human", 20)
    state_stats, action_stats = make_stats(pairs)
    x = pairs[0].state
    from crossemb.unified_space import denormalize, normalize

    np.testing.assert_allclose(
        denormalize(normalize(x, state_stats, "human"), state_stats, "human"), x,
        atol=1e-10,
    )


def test_action_excluding_head_carries_state_head():
    pairs = make_pairs("human", 30, K=2)
    state_stats, action_stats = make_stats(pairs)
    cfg = PolicyConfig(feature_dim=4, chunk_length=2, hidden_layers=(8,),
                       learning_rate=0.02, batch_size=4, seed=4,
                       action_includes_head=False)
    model = init_model(cfg, state_stats, action_stats)
    model, _ = train(model, build_sampler(pairs).stream(), steps=50)
    p = pairs[0]
    chunk = predict(model, p.state, p.feature, tag="human")
    for k in range(chunk.shape[0]):
        np.testing.assert_allclose(chunk[k, :6], p.state[:6], atol=1e-12)
