import numpy as np
import pytest
from scipy.special import erf

from fgsa import layers as L
from fgsa.tensor import Tensor


def naive_conv2d(x, w, b, stride, pad):
    h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    ho, wo = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            for o in range(cout):
                patch = xp[i * stride:i * stride + kh, j * stride:j * stride + kw, :]
                out[i, j, o] = (patch * w[..., o]).sum() + b[o]
    return out


def test_identity_1x1_conv_is_noop(rng):
    x = rng.standard_normal((5, 6, 3))
    w = np.eye(3).reshape(1, 1, 3, 3)
    np.testing.assert_array_equal(L.conv2d(Tensor(x), Tensor(w)).data, x)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_matches_loop_oracle(rng, stride, pad):
    x, w, b = rng.standard_normal((7, 6, 2)), rng.standard_normal((3, 3, 2, 4)), rng.standard_normal(4)
    got = L.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad).data
    np.testing.assert_allclose(got, naive_conv2d(x, w, b, stride, pad), atol=1e-12)


def test_depthwise_matches_per_channel_conv(rng):
    x, w = rng.standard_normal((6, 5, 3)), rng.standard_normal((3, 3, 3))
    got = L.depthwise_conv2d(Tensor(x), Tensor(w), pad=1).data
    for c in range(3):
        ref = naive_conv2d(x[..., c:c + 1], w[..., c:c + 1, None], np.zeros(1), 1, 1)
        np.testing.assert_allclose(got[..., c], ref[..., 0], atol=1e-12)


def test_softmax_of_uniform_vector():
    np.testing.assert_allclose(L.softmax(Tensor(np.full(7, 3.2))).data, np.full(7, 1 / 7), atol=1e-15)


def test_gelu_is_exact_erf_form(rng):
    x = rng.standard_normal(20)
    np.testing.assert_allclose(L.gelu(Tensor(x)).data, 0.5 * x * (1 + erf(x / np.sqrt(2))), atol=1e-14)


def test_sigmoid_is_stable_at_extremes():
    s = L.sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).data
    np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])


def test_layer_norm_standardizes_rows(rng):
    x = rng.standard_normal((4, 16)) * 3 + 1
    y = L.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.std(axis=-1), 1, atol=1e-5)


def test_maxpool_ties_route_to_first_in_scan_order():
    x = Tensor(np.ones((2, 2, 1)), requires_grad=True)
    L.maxpool2d(x, 2, 2).sum().backward()
    np.testing.assert_array_equal(x.grad[..., 0], [[1, 0], [0, 0]])


def test_maxpool_padding_never_wins():
    x = Tensor(-np.ones((4, 4, 1)) * 5)
    assert np.all(L.maxpool2d(x, 3, 2, 1).data == -5)


def test_channel_and_global_pools(rng):
    x = rng.standard_normal((3, 4, 5))
    np.testing.assert_allclose(L.channel_avg_pool(Tensor(x)).data[..., 0], x.mean(-1))
    np.testing.assert_array_equal(L.channel_max_pool(Tensor(x)).data[..., 0], x.max(-1))
    np.testing.assert_allclose(L.global_avg_pool(Tensor(x)).data.ravel(), x.mean((0, 1)))


def naive_bilinear(x, oh, ow):
    h, w = x.shape[:2]
    out = np.zeros((oh, ow) + x.shape[2:])
    for i in range(oh):
        for j in range(ow):
            sy = min(max((i + 0.5) * h / oh - 0.5, 0), h - 1)
            sx = min(max((j + 0.5) * w / ow - 0.5, 0), w - 1)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[i, j] = ((1 - fy) * (1 - fx) * x[y0, x0] + (1 - fy) * fx * x[y0, x1]
                         + fy * (1 - fx) * x[y1, x0] + fy * fx * x[y1, x1])
    return out


@pytest.mark.parametrize("shape,out", [((2, 2, 1), (8, 8)), ((4, 3, 2), (7, 9)), ((8, 8, 1), (4, 4))])
def test_bilinear_matches_half_pixel_oracle(rng, shape, out):
    x = rng.standard_normal(shape)
    np.testing.assert_allclose(L.bilinear_resize(Tensor(x), *out).data, naive_bilinear(x, *out), atol=1e-12)


def test_linear_shapes_and_values(rng):
    x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2)), rng.standard_normal(2)
    np.testing.assert_allclose(L.linear(Tensor(x), Tensor(w), Tensor(b)).data, x @ w + b)
