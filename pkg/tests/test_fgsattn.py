import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgsa import fft as F
from fgsa.fgsattn import (FGSAttn, FgsAttnParams, build_ring_partition, channel_pool,
                          fgsattn_forward, fgsattn_tokens, minmax, recalibrate, ring_group,
                          ring_scatter)
from fgsa.suite import randomize
from fgsa.tensor import Tensor


def force_fc(params: FgsAttnParams, value: float):
    """Make the FC output ``value`` for every ring regardless of input."""
    params.fc2.weight.data[...] = 0.0
    params.fc2.bias.data[...] = value


def random_params(rng, n_rings):
    p = FgsAttnParams(rng, n_rings)
    randomize(p, rng, 0.5)
    return p


# -- channel pool ------------------------------------------------------------

def test_channel_pool_single_channel_doubles(rng):
    x = rng.standard_normal((3, 3, 1))
    np.testing.assert_array_equal(channel_pool(Tensor(x)).data, 2 * x)


def test_channel_pool_mean_plus_max():
    assert channel_pool(Tensor(np.array([[[1.0, 3.0]]]))).data.item() == 5.0


def test_channel_pool_loop_oracle(rng):
    x = rng.standard_normal((4, 4, 8))
    ref = np.zeros((4, 4, 1))
    for i in range(4):
        for j in range(4):
            ref[i, j, 0] = sum(x[i, j]) / 8 + max(x[i, j])
    np.testing.assert_allclose(channel_pool(Tensor(x)).data, ref, atol=1e-15)


# -- ring partition ----------------------------------------------------------

def ring_oracle(h, w, d):
    """Float-distance ring membership, bin by bin."""
    r = min(h, w) // 2
    n = max(1, r // d)
    ring = np.zeros((h, w), dtype=int)
    for i in range(h):
        for j in range(w):
            dist = np.sqrt((i - h // 2) ** 2 + (j - w // 2) ** 2)
            k = int(np.floor(dist / d + 1e-12))
            ring[i, j] = min(k, n - 1)
    return n, ring


def test_eight_by_eight_unit_rings():
    p = build_ring_partition(8, 8, 1)
    assert p.n_rings == 4
    assert p.ring_index[4, 4] == 0


def test_single_ring_covers_everything():
    p = build_ring_partition(8, 8, 4)
    assert p.n_rings == 1 and p.ring_counts[0] == 64


def check_partition(h, w, d):
    p = build_ring_partition(h, w, d)
    n, ref = ring_oracle(h, w, d)
    assert p.n_rings == n
    np.testing.assert_array_equal(p.ring_index, ref)
    seen = np.concatenate(p.members)
    assert np.array_equal(np.sort(seen), np.arange(h * w))  # disjoint and covering
    assert p.ring_counts.sum() == h * w
    for k, m in enumerate(p.members):
        assert np.all(p.ring_index.ravel()[m] == k)


@pytest.mark.parametrize("d", [1, 2, 4])
def test_partition_exhaustive_even_sizes(d):
    for h in range(4, 33, 2):
        for w in range(4, 33, 2):
            check_partition(h, w, d)


def test_partition_rejects_bad_inputs():
    with pytest.raises(ValueError):
        build_ring_partition(8, 8, 0)
    with pytest.raises(ValueError):
        build_ring_partition(1, 8, 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.integers(2, 40), st.integers(1, 8))
def test_partition_property_any_size(h, w, d):
    check_partition(h, w, d)


# -- grouping / recalibration ------------------------------------------------

def test_constant_amplitude_groups(rng):
    p = build_ring_partition(8, 10, 1)
    groups = ring_group(Tensor(np.full((8, 10), 2.5)), p)
    assert all(np.all(g.data == 2.5) for g in groups)


def test_widest_ring_is_flattened_amplitude(rng):
    amp = rng.uniform(size=(8, 8))
    (g,) = ring_group(Tensor(amp), build_ring_partition(8, 8, 4))
    np.testing.assert_array_equal(g.data, amp.ravel())


def test_group_scatter_round_trip(rng):
    amp = rng.uniform(size=(12, 10))
    p = build_ring_partition(12, 10, 2)
    np.testing.assert_array_equal(ring_scatter(ring_group(Tensor(amp), p), p).data, amp)


@pytest.mark.parametrize("value", [1.0, 0.0])
def test_forced_fc_output(rng, value):
    p = build_ring_partition(8, 8, 1)
    params = FgsAttnParams(rng, p.n_rings)
    force_fc(params, value)
    groups = ring_group(Tensor(rng.uniform(size=(8, 8))), p)
    new, _ = recalibrate(groups, params)
    for g, n in zip(groups, new):
        np.testing.assert_array_equal(n.data, value * g.data)


def test_fresh_params_are_identity(rng):
    params = FgsAttnParams(rng, 4)
    out = params(Tensor(rng.standard_normal(4)))
    np.testing.assert_array_equal(out.data, np.ones(4))


def test_per_ring_ratio_is_constant(rng):
    p = build_ring_partition(16, 16, 2)
    params = random_params(rng, p.n_rings)
    groups = ring_group(Tensor(rng.uniform(0.5, 1.5, size=(16, 16))), p)
    new, weights = recalibrate(groups, params)
    for k, (g, n) in enumerate(zip(groups, new)):
        np.testing.assert_allclose(n.data / g.data, weights.data[k], rtol=1e-13)


# -- full forward ------------------------------------------------------------

def test_identity_fc_reproduces_amplitude_and_minmax_map(rng):
    feat = Tensor(rng.standard_normal((8, 8, 4)))
    p = build_ring_partition(8, 8, 1)
    params = FgsAttnParams(rng, p.n_rings)
    force_fc(params, 1.0)
    tr = {}
    _, attn = fgsattn_forward(feat, params, p, tr)
    assert np.abs(tr["amp_new"].data - tr["amp"].data).max() <= 1e-10
    fg = channel_pool(feat).data[..., 0]
    ref = (fg - fg.min()) / (fg.max() - fg.min())
    assert np.abs(attn.data[..., 0] - ref).max() <= 1e-10


def test_zeroed_attention_is_exact_identity(rng):
    feat = Tensor(rng.standard_normal((8, 8, 4)))
    p = build_ring_partition(8, 8, 1)
    params = FgsAttnParams(rng, p.n_rings)
    force_fc(params, 0.0)
    out, attn = fgsattn_forward(feat, params, p)
    assert not attn.data.any()
    assert np.array_equal(out.data, feat.data)


@pytest.mark.parametrize("seed", range(5))
def test_range_residual_and_phase(seed):
    rng = np.random.default_rng(seed)
    feat = rng.standard_normal((8, 8, 4))
    p = build_ring_partition(8, 8, 1)
    params = random_params(rng, p.n_rings)
    tr = {}
    out, attn = fgsattn_forward(Tensor(feat), params, p, tr)
    m = attn.data
    assert m.min() == 0.0 and m.max() == 1.0
    assert np.array_equal(out.data, feat + m * feat)
    np.testing.assert_allclose(out.data - feat, m * feat, rtol=0, atol=1e-14)
    # phase is extracted once from F_g and reused unchanged
    _, ref_phase = F.amp_phase(F.fftshift(F.fft2(Tensor(tr["f_g"].data))))
    assert np.array_equal(tr["phase"].data, ref_phase.data)
    spectrum = F.ifftshift(F.from_polar(tr["amp_new"], tr["phase"], centered=True))
    F.ifft2(spectrum, check_real=True)  # imaginary residue stays below tolerance


def test_minmax_constant_map_is_zero():
    assert not minmax(Tensor(np.full((3, 3), 4.0))).data.any()


def test_module_size_checks_and_bypass(rng):
    m = FGSAttn(rng, 8, 8)
    with pytest.raises(ValueError):
        m(Tensor(np.zeros((4, 4, 2))))
    tiny = FGSAttn(rng, 1, 1)
    x = Tensor(rng.standard_normal((1, 1, 3)))
    out, attn = tiny(x)
    assert out is x and attn.data.shape == (1, 1, 1) and tiny.n_params() == 0


def test_wide_ring_width_is_allowed(rng):
    m = FGSAttn(rng, 4, 4, d=4)
    assert m.part.n_rings == 1


# -- token path --------------------------------------------------------------

def test_token_shape_contract(rng):
    m = FGSAttn(rng, 8, 8)
    assert fgsattn_tokens(Tensor(rng.standard_normal((64, 16))), (8, 8), m).shape == (64, 16)


def test_token_path_identity_under_zero_attention(rng):
    m = FGSAttn(rng, 8, 8)
    force_fc(m.params, 0.0)
    tok = Tensor(rng.standard_normal((64, 16)))
    assert np.array_equal(fgsattn_tokens(tok, (8, 8), m).data, tok.data)


def test_token_grid_mismatch(rng):
    with pytest.raises(ValueError, match="grid"):
        fgsattn_tokens(Tensor(np.zeros((10, 4))), (3, 3), FGSAttn(rng, 3, 3))
