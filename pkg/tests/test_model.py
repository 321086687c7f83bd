import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdcheck import numeric_grad, rel_error
from uavmtl import model as M
from uavmtl.errors import NonFiniteActivation, ShapeMismatch, StaleCache

TINY = M.ArchConfig(shared_units=4, second_units=3, cls_dense_units=2, traj_td_units=2, ws=4, hs=2, n_features=6)


def tiny_model(seed=0, **kw):
    arch = M.ArchConfig(**{**TINY.to_dict(), **kw})
    m = M.build_model(arch, seed)
    m.traj_td.b[...] = 0.5  # keep the small relu layer alive for gradient checks
    return m


def tiny_batch(rng, b=3, arch=TINY):
    x = rng.normal(size=(b, arch.ws, arch.n_features))
    yt = rng.normal(size=(b, arch.hs, 3))
    ys = (rng.uniform(size=(b, 5)) < 0.4).astype(float)
    return x, yt, ys


def total_loss(m, x, yt, ys, w=M.LossWeights()):
    traj, probs, _ = M.forward(m, x, "train")
    return M.combined_loss(traj, yt, probs, ys, w)[0]


def model_grads(m, x, yt, ys, w=M.LossWeights()):
    traj, probs, cache = M.forward(m, x, "train")
    d_traj, d_probs = M.loss_gradients(traj, yt, probs, ys, w)
    return M.backward(m, cache, d_traj, d_probs)


@pytest.mark.parametrize("mode", ["relu_post", "tanh_gated"])
@pytest.mark.parametrize("embedding", [True, False])
def test_full_model_gradients(mode, embedding):
    rng = np.random.default_rng(0)
    m = tiny_model(lstm_output_mode=mode, horizon_embedding=embedding)
    x, yt, ys = tiny_batch(rng)
    grads = model_grads(m, x, yt, ys)
    tensors = M.named_tensors(m)
    assert set(grads) == set(tensors)
    worst = 0.0
    for name, t in tensors.items():
        num = numeric_grad(lambda: total_loss(m, x, yt, ys), t)
        worst = max(worst, rel_error(grads[name], num))
        assert np.any(grads[name] != 0) or np.all(num == 0), name
    assert worst < 1e-3


def test_position_skip_gradients_and_offset():
    rng = np.random.default_rng(1)
    m = tiny_model(position_skip=(0, 1, 2))
    x, yt, ys = tiny_batch(rng)
    base = tiny_model(position_skip=None)
    t_skip, _, _ = M.forward(m, x, "train")
    t_base, _, _ = M.forward(base, x, "train")
    np.testing.assert_allclose(t_skip - t_base, np.broadcast_to(x[:, -1, None, :3], t_skip.shape), atol=1e-14)
    grads = model_grads(m, x, yt, ys)
    for name, t in M.named_tensors(m).items():
        assert rel_error(grads[name], numeric_grad(lambda: total_loss(m, x, yt, ys), t)) < 1e-3, name


def test_param_count_closed_form():
    for arch in (M.ArchConfig(), TINY, M.ArchConfig(horizon_embedding=False)):
        assert M.param_count(M.build_model(arch)) == M.expected_param_count(arch)
    a = M.ArchConfig(horizon_embedding=False)
    # hand sum for the default layer sizes without the horizon embedding
    lstm1 = 4 * (256 * 21 + 256 * 256 + 256)
    lstm2 = 4 * (128 * 256 + 128 * 128 + 128)
    heads = 2 * 128 + (64 * 128 + 64) + (5 * 64 + 5) + (64 * 128 + 64) + (3 * 64 + 3)
    assert M.expected_param_count(a) == lstm1 + lstm2 + heads
    assert M.expected_param_count(M.ArchConfig()) == lstm1 + lstm2 + heads + 30 * 128


def test_build_is_seeded():
    a, b, c = M.build_model(TINY, 1), M.build_model(TINY, 1), M.build_model(TINY, 2)
    ta, tb, tc = M.named_tensors(a), M.named_tensors(b), M.named_tensors(c)
    assert all(np.array_equal(ta[k], tb[k]) for k in ta)
    assert any(not np.array_equal(ta[k], tc[k]) for k in ta)


def test_forward_shapes_and_ranges():
    rng = np.random.default_rng(2)
    m = tiny_model()
    for b in (1, 5):
        traj, probs, _ = M.forward(m, rng.normal(size=(b, 4, 6)), "train")
        assert traj.shape == (b, 2, 3) and probs.shape == (b, 5)
        assert np.all((probs > 0) & (probs < 1))


def test_infer_duplicates_identical():
    rng = np.random.default_rng(3)
    m = tiny_model()
    x = rng.normal(size=(4, 4, 6))
    _, _, cache = M.forward(m, x, "train")
    M.commit_running_stats(m, cache)
    traj, probs, _ = M.forward(m, np.concatenate([x, x[:1]]), "infer")
    np.testing.assert_array_equal(traj[0], traj[-1])
    np.testing.assert_array_equal(probs[0], probs[-1])


def test_forward_rejects_bad_input():
    m = tiny_model()
    with pytest.raises(ShapeMismatch):
        M.forward(m, np.zeros((2, 5, 6)), "train")
    bad = np.zeros((2, 4, 6))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ShapeMismatch):
        M.forward(m, bad, "train")


def test_non_finite_activation():
    m = tiny_model()
    m.traj_out.b[...] = np.inf
    with pytest.raises(NonFiniteActivation):
        M.forward(m, np.zeros((2, 4, 6)), "train")


def test_loss_examples():
    rng = np.random.default_rng(4)
    yt = rng.normal(size=(3, 2, 3))
    ys = (rng.uniform(size=(3, 5)) < 0.5).astype(float)
    total, mse, bce = M.combined_loss(yt, yt, ys, ys)
    assert mse == 0.0 and 0 < total < 1e-6
    _, _, bce = M.combined_loss(yt, yt, np.full((3, 5), 0.5), ys)
    assert bce == pytest.approx(math.log(2), abs=1e-12)
    pred = yt + 1.0
    total, mse, _ = M.combined_loss(pred, yt, np.full((3, 5), 0.3), ys, M.LossWeights(2.0, 0.0))
    assert mse == pytest.approx(1.0) and total == 2.0 * mse
    with pytest.raises(ShapeMismatch):
        M.combined_loss(yt, yt[:, :1], ys, ys)


@settings(max_examples=40)
@given(seed=st.integers(0, 10_000), wt=st.floats(0, 3), wc=st.floats(0.1, 3))
def test_loss_gradients_match_fd(seed, wt, wc):
    rng = np.random.default_rng(seed)
    yt = rng.normal(size=(2, 2, 3))
    pred = rng.normal(size=(2, 2, 3))
    ys = (rng.uniform(size=(2, 5)) < 0.5).astype(float)
    p = rng.uniform(0.05, 0.95, size=(2, 5))
    w = M.LossWeights(wt, wc)
    d_traj, d_probs = M.loss_gradients(pred, yt, p, ys, w)
    f = lambda: M.combined_loss(pred, yt, p, ys, w)[0]  # noqa: E731
    assert rel_error(d_traj, numeric_grad(f, pred)) < 1e-4
    assert rel_error(d_probs, numeric_grad(f, p)) < 1e-4


def test_clamped_probabilities_get_no_gradient():
    ys = np.array([[1.0, 0.0]])
    _, d = M.loss_gradients(np.zeros((1, 1, 3)), np.zeros((1, 1, 3)), np.array([[1.0, 0.0]]), ys)
    assert np.all(d == 0)


def test_dead_classification_branch_without_cls_weight():
    rng = np.random.default_rng(5)
    m = tiny_model()
    x, yt, ys = tiny_batch(rng)
    g = model_grads(m, x, yt, ys, M.LossWeights(1.0, 0.0))
    for k in ("cls_bn.gamma", "cls_bn.beta", "cls_dense.W", "cls_dense.b", "cls_out.W", "cls_out.b"):
        assert np.all(g[k] == 0), k


def test_doubling_traj_weight_doubles_traj_output_gradient():
    rng = np.random.default_rng(6)
    m = tiny_model()
    x, yt, ys = tiny_batch(rng)
    g1 = model_grads(m, x, yt, ys, M.LossWeights(1.0, 1.0))
    g2 = model_grads(m, x, yt, ys, M.LossWeights(2.0, 1.0))
    np.testing.assert_array_equal(g2["traj_out.W"], 2.0 * g1["traj_out.W"])


def test_trunk_gradient_is_sum_of_heads():
    rng = np.random.default_rng(7)
    m = tiny_model()
    x, yt, ys = tiny_batch(rng)
    both = model_grads(m, x, yt, ys, M.LossWeights(1.0, 1.0))
    traj = model_grads(m, x, yt, ys, M.LossWeights(1.0, 0.0))
    cls = model_grads(m, x, yt, ys, M.LossWeights(0.0, 1.0))
    for k in both:
        if k.startswith(("shared_lstm", "second_lstm")):
            assert rel_error(both[k], traj[k] + cls[k]) < 1e-10, k


def test_loss_permutation_invariant():
    rng = np.random.default_rng(8)
    m = tiny_model()
    x, yt, ys = tiny_batch(rng, b=5)
    perm = rng.permutation(5)
    a = total_loss(m, x, yt, ys)
    b = total_loss(m, x[perm], yt[perm], ys[perm])
    assert a == pytest.approx(b, rel=1e-12)


def test_stale_cache_after_version_bump():
    rng = np.random.default_rng(9)
    m = tiny_model()
    x, yt, ys = tiny_batch(rng)
    traj, probs, cache = M.forward(m, x, "train")
    d = M.loss_gradients(traj, yt, probs, ys)
    m.version += 1
    with pytest.raises(StaleCache):
        M.backward(m, cache, *d)


def test_predict_batches_match_single_pass():
    rng = np.random.default_rng(10)
    m = tiny_model()
    _, _, cache = M.forward(m, rng.normal(size=(8, 4, 6)), "train")
    M.commit_running_stats(m, cache)
    x = rng.normal(size=(7, 4, 6))
    t1, p1 = M.predict(m, x, batch_size=3)
    t2, p2, _ = M.forward(m, x, "infer")
    np.testing.assert_allclose(t1, t2, rtol=1e-12)
    np.testing.assert_allclose(p1, p2, rtol=1e-12)


def test_arch_validation():
    with pytest.raises(ValueError):
        M.ArchConfig(num_states=4)
    with pytest.raises(ValueError):
        M.ArchConfig(shared_units=0)
    with pytest.raises(ValueError):
        M.ArchConfig(position_skip=(0, 1))
    with pytest.raises(ValueError):
        M.LossWeights(0.0, 0.0)
