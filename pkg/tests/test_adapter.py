import numpy as np
import pytest

from fgsa.adapter import (FBFE, FBNM, AdapterConfig, ConvStem, CrossAttention, FeaturePyramid,
                          cross_attention, fbfe_step, flatten_levels, unflatten_levels)
from fgsa.backbone import TokenSequence
from fgsa.fgsattn import fgsattn_tokens
from fgsa.head import weighted_bce_iou_loss
from fgsa.model import ForwardTrace, full_forward
from fgsa.suite import randomize
from fgsa.tensor import Tensor, no_grad


def test_stem_output_size(rng):
    stem = ConvStem(rng, 16)
    assert stem(Tensor(rng.uniform(size=(64, 64, 3)))).shape == (16, 16, 16)
    with pytest.raises(ValueError, match="divisible by 32"):
        stem(Tensor(np.zeros((48, 40, 3))))


def test_stem_zero_image_zero_bias(rng):
    stem = ConvStem(rng, 8)
    for conv in (stem.conv1, stem.conv2, stem.conv3):
        conv.bias.data[...] = 0.0
    assert not stem(Tensor(np.zeros((32, 32, 3)))).data.any()


def test_pyramid_levels_halve(rng):
    fbnm = FBNM(rng, AdapterConfig(), 64, 64)
    pyr = fbnm.pyramid(fbnm.stem(Tensor(rng.uniform(size=(64, 64, 3)))))
    assert [lv.shape for lv in pyr.levels] == [(8, 8, 32), (4, 4, 64), (2, 2, 64)]


def test_project_flatten_shape_and_round_trip(rng):
    cfg = AdapterConfig(D=32)
    fbnm = FBNM(rng, cfg, 64, 32)
    pyr = fbnm.project_flatten(fbnm.pyramid(fbnm.stem(Tensor(rng.uniform(size=(64, 64, 3))))))
    assert pyr.flat.shape == (84, 32) and pyr.rows == 84
    for a, b in zip(unflatten_levels(pyr.flat, pyr.shapes), pyr.levels):
        assert np.array_equal(a.data, b.data)


def test_flatten_is_bijective(rng):
    levels = [Tensor(rng.standard_normal(s)) for s in [(4, 4, 3), (2, 2, 3), (1, 1, 3)]]
    flat = flatten_levels(levels)
    back = unflatten_levels(flat, [(4, 4), (2, 2), (1, 1)])
    assert all(np.array_equal(a.data, b.data) for a, b in zip(levels, back))
    assert np.array_equal(flatten_levels(back).data, flat.data)
    with pytest.raises(ValueError):
        unflatten_levels(flat, [(4, 4)])


def test_width_mismatch_is_rejected(rng):
    with pytest.raises(ValueError, match="must equal"):
        FBNM(rng, AdapterConfig(D=32), 64, 64)


def naive_cross_attention(q_in, kv_in, ca):
    d, h = ca.dim, ca.heads
    q = q_in @ ca.q.weight.data + ca.q.bias.data
    k = kv_in @ ca.k.weight.data + ca.k.bias.data
    v = kv_in @ ca.v.weight.data + ca.v.bias.data
    dh = d // h
    ctx = np.zeros_like(q)
    for head in range(h):
        sl = slice(head * dh, (head + 1) * dh)
        for i in range(q.shape[0]):
            s = np.array([q[i, sl] @ k[j, sl] for j in range(k.shape[0])]) / np.sqrt(dh)
            p = np.exp(s - s.max())
            p /= p.sum()
            ctx[i, sl] = p @ v[:, sl]
    return ctx @ ca.out.weight.data + ca.out.bias.data


def test_cross_attention_matches_loop(rng):
    ca = CrossAttention(rng, 8, 2, zero_out=False)
    q, kv = rng.standard_normal((4, 8)), rng.standard_normal((6, 8))
    probs = []
    got = cross_attention(Tensor(q), Tensor(kv), ca, probs).data
    assert np.abs(got - naive_cross_attention(q, kv, ca)).max() < 1e-12
    assert np.abs(probs[0].data.sum(-1) - 1).max() < 1e-12


def test_cross_attention_single_key(rng):
    ca = CrossAttention(rng, 8, 2, zero_out=False)
    kv = rng.standard_normal((1, 8))
    got = ca(Tensor(rng.standard_normal((5, 8))), Tensor(kv)).data
    v = kv @ ca.v.weight.data + ca.v.bias.data
    expected = v @ ca.out.weight.data + ca.out.bias.data
    np.testing.assert_allclose(got, np.repeat(expected, 5, axis=0), atol=1e-12)


def test_zero_init_injection_is_identity(rng):
    fbnm = FBNM(rng, AdapterConfig(D=16, heads=2, stem_channels=4), 32, 16)
    tok = Tensor(rng.standard_normal((16, 16)))
    pyr = FeaturePyramid([], flat=Tensor(rng.standard_normal((21, 16))), shapes=[(4, 4), (2, 2), (1, 1)])
    out = fbnm.inject_tokens(TokenSequence(tok, (4, 4)), pyr)
    assert np.array_equal(out.tokens.data, tok.data) and out.grid == (4, 4)


def _fbfe_inputs(rng, d=16):
    tok = Tensor(rng.standard_normal((16, d)))
    levels = [Tensor(rng.standard_normal(s + (d,))) for s in [(4, 4), (2, 2), (1, 1)]]
    flat = flatten_levels(levels)
    return TokenSequence(tok, (4, 4)), FeaturePyramid(levels, flat=flat)


@pytest.mark.parametrize("is_last", [False, True])
def test_zero_init_fbfe_only_applies_fgsattn(rng, is_last):
    cfg = AdapterConfig(D=16, heads=2)
    m = FBFE(rng, cfg, (4, 4), is_last)
    seq, pyr = _fbfe_inputs(rng)
    new_seq, new_pyr = fbfe_step(seq, pyr, m, is_last=is_last)
    assert np.array_equal(new_pyr.flat.data, pyr.flat.data)
    assert new_pyr.shapes == pyr.shapes
    if is_last:
        assert new_seq is None
    else:
        ref = fgsattn_tokens(seq.tokens, (4, 4), m.fgsattn).data
        assert np.array_equal(new_seq.tokens.data, ref)
    with pytest.raises(ValueError):
        fbfe_step(seq, pyr, m, is_last=not is_last)


def test_random_fbfe_preserves_counts(rng):
    m = FBFE(rng, AdapterConfig(D=16, heads=2), (4, 4), False)
    randomize(m, rng)
    seq, pyr = _fbfe_inputs(rng)
    s2, p2 = m(seq, pyr)
    assert s2.tokens.shape == seq.tokens.shape and p2.flat.shape == pyr.flat.shape
    assert not np.array_equal(p2.flat.data, pyr.flat.data)


def test_full_forward_shapes(toy_model, rng):
    trace = ForwardTrace([], [])
    pyr = full_forward(rng.uniform(size=(64, 64, 3)), toy_model, trace)
    assert [lv.shape for lv in pyr.levels] == [(8, 8, 64), (4, 4, 64), (2, 2, 64)]
    assert len(trace.attention_maps()) == 3 + 4


def test_zero_init_network_equals_fbnm_baseline(toy_model, rng):
    img = Tensor(rng.uniform(size=(64, 64, 3)))
    with no_grad():
        pred = toy_model(img).probs.data
        fbnm = toy_model.adapter.fbnm
        base = fbnm.project_flatten(fbnm.pyramid(fbnm.stem(img)))
        ref = toy_model.head(base, (64, 64)).probs.data
    assert np.array_equal(pred, ref)


def test_gradients_reach_every_adapter_parameter(micro_model, rng):
    randomize(micro_model.adapter, rng, 0.1)
    randomize(micro_model.head, rng, 0.1)
    ps = micro_model.param_set()
    yy, xx = np.mgrid[0:32, 0:32]
    gt = ((yy - 14) ** 2 + (xx - 17) ** 2 < 70).astype(float)
    loss = weighted_bce_iou_loss(micro_model(rng.uniform(size=(32, 32, 3))), gt)
    assert loss.item() > 0
    loss.backward()
    dead = [k for k, v in ps.trainable().items() if v.grad is None or not np.any(v.grad)]
    assert dead == []
    assert all(v.grad is None for v in ps.frozen().values())
