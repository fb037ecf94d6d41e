import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import layer_errors, max_rel_error, network_error, numeric_grad
from streetctx import nn
from streetctx.errors import ShapeError, StreetCtxError
from streetctx.fixtures import SIX_CLASSES
from streetctx.imagery import RgbImage, synth_render
from streetctx.labeler import StreetContext

CATALOG6 = [c.name for c in SIX_CLASSES]


def test_conv_sliding_window_example():
    x = np.arange(1, 10, dtype=float).reshape(1, 1, 3, 3)
    out = nn.conv2d_forward(x, np.ones((1, 1, 2, 2)), np.zeros(1))
    assert out[0, 0].tolist() == [[12, 16], [24, 28]]


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    ker = np.zeros((3, 3, 1, 1))
    ker[[0, 1, 2], [0, 1, 2]] = 1.0
    np.testing.assert_array_equal(nn.conv2d_forward(x, ker, np.zeros(3)), x)


def test_conv_zero_input_gives_bias():
    out = nn.conv2d_forward(np.zeros((1, 2, 5, 5)), np.ones((3, 2, 3, 3)), np.array([1.0, -2.0, 0.5]), pad=1)
    for o, b in enumerate([1.0, -2.0, 0.5]):
        assert np.all(out[0, o] == b)


def _naive_conv(x, ker, bias, s, p):
    n, c, h, w = x.shape
    o, _, k, _ = ker.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
    out = np.zeros((n, o, ho, wo))
    for a in range(n):
        for q in range(o):
            for y in range(ho):
                for xx in range(wo):
                    acc = bias[q]
                    for ch in range(c):
                        for i in range(k):
                            for j in range(k):
                                acc += xp[a, ch, y * s + i, xx * s + j] * ker[q, ch, i, j]
                    out[a, q, y, xx] = acc
    return out


@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (1, 2)])
def test_conv_matches_naive_loop(rng, stride, pad):
    x = rng.normal(size=(2, 3, 6, 5))
    ker = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    np.testing.assert_allclose(nn.conv2d_forward(x, ker, b, stride, pad), _naive_conv(x, ker, b, stride, pad),
                               rtol=0, atol=1e-12)


def test_conv_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\(1, 2, 4, 4\).*\(1, 3, 3, 3\)"):
        nn.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))
    with pytest.raises(ShapeError, match="too small"):
        nn.conv2d_forward(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)), np.zeros(1))


def test_simple_layers():
    assert nn.relu_forward(np.array([-1.0, 0.0, 2.0])).tolist() == [0, 0, 2]
    assert nn.global_avg_pool_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))[0, 0] == 2.5
    out, _ = nn.maxpool_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert out.tolist() == [[[[4.0]]]]
    with pytest.raises(ShapeError):
        nn.linear_forward(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(4))


def test_relu_passes_positive_gradient(rng):
    x = rng.uniform(0.1, 2.0, size=(3, 4))
    d = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(nn.relu_backward(d, x), d)


def test_softmax_ce_examples():
    loss, d = nn.softmax_cross_entropy(np.zeros((1, 3)), np.array([0]))
    assert loss == pytest.approx(math.log(3), abs=1e-12)
    np.testing.assert_allclose(nn.softmax(np.zeros((1, 3))), [[1 / 3] * 3])
    loss, d = nn.softmax_cross_entropy(np.array([[1000.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(d))
    with pytest.raises(StreetCtxError, match="out of range"):
        nn.softmax_cross_entropy(np.zeros((1, 3)), np.array([3]))


def test_softmax_ce_gradient_4x5(rng):
    logits = rng.normal(size=(4, 5))
    labels = np.array([0, 4, 2, 2])
    _, d = nn.softmax_cross_entropy(logits, labels)
    num = numeric_grad(lambda: nn.softmax_cross_entropy(logits, labels)[0], logits)
    assert max_rel_error(d, num) <= 1e-6


def test_conv_gradient_on_1x2x5x5(rng):
    x = rng.normal(size=(1, 2, 5, 5))
    ker = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    r = rng.normal(size=(1, 3, 5, 5))
    f = lambda: float((nn.conv2d_forward(x, ker, b, 1, 1) * r).sum())  # noqa: E731
    dx, dk, db = nn.conv2d_backward(r, x, ker, 1, 1)
    for a, v in [(dx, x), (dk, ker), (db, b)]:
        assert max_rel_error(a, numeric_grad(f, v)) <= 1e-6


def test_linear_gradient(rng):
    x, w, b, r = rng.normal(size=(3, 4)), rng.normal(size=(2, 4)), rng.normal(size=2), rng.normal(size=(3, 2))
    f = lambda: float((nn.linear_forward(x, w, b) * r).sum())  # noqa: E731
    dx, dw, db = nn.linear_backward(r, x, w)
    for a, v in [(dx, x), (dw, w), (db, b)]:
        assert max_rel_error(a, numeric_grad(f, v)) <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_every_layer_gradient_randomized(seed):
    errs = layer_errors(np.random.default_rng(seed))
    assert max(errs.values()) <= 1e-6, errs


def test_network_backprop_matches_finite_differences():
    assert network_error(np.random.default_rng(3)) <= 1e-6


def test_backward_without_forward_is_contract_error():
    layer = nn.ReLULayer(nn.ReLU())
    with pytest.raises(StreetCtxError, match="without a cached forward"):
        layer.backward(np.zeros(3))


def test_sgd_examples():
    p = [np.zeros(1)]
    v = [np.zeros(1)]
    nn.sgd_step(p, [np.ones(1)], 0.1, 0.0, v)
    assert p[0][0] == pytest.approx(-0.1)

    p = [np.array([1.0, 2.0])]
    nn.sgd_step(p, [np.array([5.0, 5.0])], 0.0, 0.9, [np.zeros(2)])
    assert p[0].tolist() == [1.0, 2.0]


def test_sgd_two_momentum_steps_hand_unrolled():
    lr, mu, p0, g1, g2 = 0.1, 0.9, 1.0, 0.5, -0.25
    # v1 = -lr g1; p1 = p0 + v1; v2 = mu v1 - lr g2; p2 = p1 + v2
    v1 = -lr * g1
    p2 = p0 + v1 + (mu * v1 - lr * g2)
    p = [np.array([p0])]
    v = [np.zeros(1)]
    nn.sgd_step(p, [np.array([g1])], lr, mu, v)
    nn.sgd_step(p, [np.array([g2])], lr, mu, v)
    assert p[0][0] == pytest.approx(p2, abs=1e-15)


def test_sgd_shape_mismatch():
    with pytest.raises(ShapeError):
        nn.sgd_step([np.zeros(2)], [np.zeros(3)], 0.1, 0.0, [np.zeros(2)])


def _corpus(n, size=16, seed=0):
    labels = [i % 6 for i in range(n)]
    return [synth_render(StreetContext[CATALOG6[y]], seed + i, size, size) for i, y in enumerate(labels)], labels


def test_overfit_one_sample():
    im = synth_render(StreetContext.Park, 1, 16, 16)
    cfg = nn.TrainConfig(epochs=200, batch_size=1, learning_rate=0.05, seed=0, input_size=(16, 16))
    _, hist = nn.train([im], [CATALOG6.index("Park")], nn.streetnet(6), cfg, CATALOG6)
    losses = [h.loss for h in hist]
    assert losses[-1] < 1e-2
    assert all(b <= a for a, b in zip(losses[10:], losses[11:]))


def test_training_determinism_and_seed_sensitivity():
    ims, ys = _corpus(12)
    cfg = nn.TrainConfig(epochs=3, batch_size=4, seed=7, input_size=(16, 16))
    a, ha = nn.train(ims, ys, nn.streetnet(6), cfg, CATALOG6)
    b, hb = nn.train(ims, ys, nn.streetnet(6), cfg, CATALOG6)
    assert nn.save_model(a) == nn.save_model(b)
    assert ha == hb
    _, hc = nn.train(ims, ys, nn.streetnet(6), nn.TrainConfig(epochs=3, batch_size=4, seed=8, input_size=(16, 16)),
                     CATALOG6)
    assert [h.loss for h in hc] != [h.loss for h in ha]


def test_training_input_errors():
    ims, ys = _corpus(4)
    cfg = nn.TrainConfig(epochs=1, batch_size=2, input_size=(16, 16))
    with pytest.raises(StreetCtxError, match="empty"):
        nn.train([], [], nn.streetnet(6), cfg, CATALOG6)
    with pytest.raises(StreetCtxError, match="inconsistent sizes"):
        nn.train(ims[:1] + [synth_render(StreetContext.Park, 0, 8, 8)], [0, 1], nn.streetnet(6), cfg, CATALOG6)
    with pytest.raises(StreetCtxError, match="outside catalog"):
        nn.train(ims, [0, 1, 2, 6], nn.streetnet(6), cfg, CATALOG6)
    with pytest.raises(StreetCtxError, match="exceeds dataset"):
        nn.train(ims, ys, nn.streetnet(6), nn.TrainConfig(batch_size=5), CATALOG6)


def test_glorot_init_bounds_and_zero_bias():
    net = nn.Network(nn.streetnet(6), CATALOG6, (3, 16, 16), np.random.default_rng(0))
    conv = net.layers[0].params
    assert np.abs(conv[0]).max() <= math.sqrt(6 / (27 + 144))
    assert not conv[1].any()


def test_history_csv():
    text = nn.history_to_csv([nn.EpochStats(1, 0.5, 0.25)])
    assert text == "epoch,loss,train_acc\n1,0.5,0.25\n"


def test_predict_zeroed_linear_is_uniform():
    net = nn.Network(nn.streetnet(6), CATALOG6, (3, 16, 16), np.random.default_rng(0))
    net.layers[-1].params[0][...] = 0
    pred = nn.predict(net, synth_render(StreetContext.Park, 3, 16, 16))
    np.testing.assert_allclose(pred.probabilities, np.full(6, 1 / 6), atol=1e-15)
    assert pred.last_conv.shape == (64, 4, 4)
    np.testing.assert_allclose(pred.penultimate, pred.last_conv.mean(axis=(1, 2)))
    assert pred.last_conv.min() >= 0


def test_predict_probabilities_and_argmax(rng):
    net = nn.Network(nn.streetnet(6), CATALOG6, (3, 8, 8), np.random.default_rng(1))
    ims = [RgbImage(rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)) for _ in range(100)]
    for p in nn.predict_batch(net, ims):
        assert abs(p.probabilities.sum() - 1) <= 1e-9
        assert p.class_index == int(np.argmax(p.probabilities))


def test_predict_size_mismatch():
    net = nn.Network(nn.streetnet(6), CATALOG6, (3, 8, 8))
    with pytest.raises(ShapeError, match="does not match model input"):
        nn.predict(net, synth_render(StreetContext.Park, 0, 16, 16))


def test_model_file_round_trip():
    net = nn.Network(nn.streetnet(6), CATALOG6, (3, 8, 8), np.random.default_rng(5))
    blob = nn.save_model(net)
    assert blob[:4] == b"SCTX" and blob[4] == 1
    back = nn.load_model(blob)
    assert back.catalog == net.catalog and back.arch == net.arch
    for a, b in zip(net.params, back.params):
        np.testing.assert_array_equal(a, b)
    assert nn.save_model(back) == blob
    with pytest.raises(StreetCtxError, match="truncated"):
        nn.load_model(blob[:-8])
    with pytest.raises(StreetCtxError, match="bad magic"):
        nn.load_model(b"XXXX" + blob[4:])


_layer = st.one_of(
    st.builds(nn.Conv, st.integers(1, 4), st.integers(1, 3), st.integers(1, 2), st.integers(0, 1)),
    st.just(nn.ReLU()),
    st.builds(nn.MaxPool, st.integers(1, 2), st.integers(1, 2)),
)


@settings(max_examples=40, deadline=None)
@given(st.lists(_layer, min_size=1, max_size=4), st.integers(4, 9), st.integers(4, 9), st.integers(1, 3))
def test_forward_shape_matches_symbolic_propagation(layers, h, w, c):
    arch = [*layers, nn.GlobalAvgPool(), nn.Linear(3)]
    try:
        expected = nn.output_shape(arch, (c, h, w))
    except ShapeError:
        return
    net = nn.Network(arch, ["a", "b", "c"], (c, h, w), np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(2, c, h, w))
    out = net.forward(x)
    assert out.shape == (2, *expected)
    assert np.all(np.isfinite(out))
