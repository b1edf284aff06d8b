import numpy as np
import pytest

from dronedet.nnblocks.archive import MAGIC, dumps, load, loads, save
from dronedet.nnblocks.cbam import CbamParams, cbam_forward, channel_attention, sigmoid
from dronedet.nnblocks.encoder import (
    EncoderParams,
    attention_weights,
    encode_feature_map,
    multi_head_attention,
    transformer_encoder_forward,
)
from dronedet.nnblocks.gradcheck import (
    cbam_block,
    decode_block,
    encoder_block,
    grad_check,
    grad_check_report,
    linear_block,
)
from dronedet.nnblocks.heads import HeadSpec, decode_dense, default_heads, yolo_head_decode
from dronedet.nnblocks.schedule import cosine_lr


@pytest.fixture
def enc(rng):
    return EncoderParams.init(8, 2, rng)


# -- attention / encoder ------------------------------------------------------------

def test_attention_rows_sum_to_one(rng, enc):
    for n in (1, 3, 17):
        a = attention_weights(rng.normal(size=(n, 8)), enc)
        assert a.shape == (2, n, n)
        assert np.max(np.abs(a.sum(axis=-1) - 1.0)) <= 1e-9


def test_attention_equal_tokens_uniform(rng, enc):
    x = np.tile(rng.normal(size=(1, 8)), (2, 1))
    assert np.allclose(attention_weights(x, enc), 0.5, atol=1e-15)


def test_attention_single_token_is_value_projection(rng, enc):
    x = rng.normal(size=(1, 8))
    expected = (x @ enc.wv + enc.bv) @ enc.wo + enc.bo
    assert np.allclose(multi_head_attention(x, enc), expected, atol=1e-12)


def test_encoder_shape(rng, enc):
    assert transformer_encoder_forward(rng.normal(size=(5, 8)), enc).shape == (5, 8)


def test_encoder_zero_weights_residual_identity(rng):
    p = EncoderParams.zeros_like_block(8, 2)
    x = rng.normal(size=(6, 8))
    assert np.array_equal(transformer_encoder_forward(x, p), x)


@pytest.mark.parametrize("pre_norm", [True, False])
def test_encoder_permutation_equivariant(rng, enc, pre_norm):
    x = rng.normal(size=(7, 8))
    perm = rng.permutation(7)
    a = transformer_encoder_forward(x, enc, pre_norm=pre_norm)[perm]
    b = transformer_encoder_forward(x[perm], enc, pre_norm=pre_norm)
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_encoder_dropout_only_in_train_mode(rng, enc):
    x = rng.normal(size=(4, 8))
    ev = transformer_encoder_forward(x, enc, dropout=0.5)
    assert np.array_equal(ev, transformer_encoder_forward(x, enc))
    tr = transformer_encoder_forward(x, enc, train_mode=True, dropout=0.5, rng=np.random.default_rng(0))
    assert not np.allclose(tr, ev)


def test_encoder_rejects_bad_width(rng, enc):
    with pytest.raises(ValueError):
        transformer_encoder_forward(rng.normal(size=(3, 5)), enc)


def test_encode_feature_map_shape(rng, enc):
    f = rng.normal(size=(8, 3, 4))
    assert encode_feature_map(f, enc).shape == (8, 3, 4)


# -- CBAM ---------------------------------------------------------------------------

def test_cbam_zero_weights_quarter_input(rng):
    f = rng.normal(size=(16, 5, 6))
    out = cbam_forward(f, CbamParams.zeros(16))
    assert np.allclose(out, 0.25 * f, atol=1e-15)


def test_cbam_magnitude_bound(rng):
    p = CbamParams.init(32, rng, reduction=8, kernel_size=7)
    for _ in range(10):
        f = rng.normal(scale=5, size=(32, 9, 7))
        assert np.all(np.abs(cbam_forward(f, p)) <= np.abs(f))


def test_channel_attention_spatial_permutation_invariant(rng):
    p = CbamParams.init(16, rng, reduction=4)
    f = rng.normal(size=(16, 4, 5))
    flat = f.reshape(16, -1)[:, rng.permutation(20)].reshape(16, 4, 5)
    assert np.allclose(channel_attention(f, p), channel_attention(flat, p), atol=1e-14)


def test_cbam_shape_preserved(rng):
    p = CbamParams.init(16, rng, reduction=4, kernel_size=3)
    assert cbam_forward(rng.normal(size=(16, 2, 3)), p).shape == (16, 2, 3)


def test_sigmoid_stable():
    with np.errstate(over="raise", invalid="raise"):
        v = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert v.tolist() == [0.0, 0.5, 1.0]


def test_cbam_validation(rng):
    with pytest.raises(ValueError):
        CbamParams.init(10, rng, reduction=4)


# -- heads --------------------------------------------------------------------------

def test_default_heads():
    heads = default_heads(10)
    assert [h.stride for h in heads] == [4, 8, 16, 32]
    assert all(h.num_classes == 10 and h.num_anchors == 3 for h in heads)


def test_head_bad_stride():
    with pytest.raises(ValueError):
        HeadSpec(64, ((1, 1),), 3)


def test_decode_zero_logits_cell_center_anchor_size():
    spec = HeadSpec(8, ((10, 13), (16, 30)), 3)
    d = decode_dense(np.zeros((2, 3, 4, 8)), spec)
    # sigma(0) = 0.5 -> centre (cell + 0.5) * stride, size = anchor
    assert d[0, 0, 0, :4].tolist() == [4.0, 4.0, 10.0, 13.0]
    assert d[1, 2, 3, :4].tolist() == [28.0, 20.0, 16.0, 30.0]
    assert (d[..., 4:] == 0.5).all()


def test_decode_center_range_bound(rng):
    for spec in default_heads(2):
        raw = rng.normal(scale=6, size=(3, 5, 4, 7))
        d = decode_dense(raw, spec)
        gx = np.arange(4)[None, None, :]
        gy = np.arange(5)[None, :, None]
        s = spec.stride
        assert np.all(d[..., 0] >= (gx - 0.5) * s) and np.all(d[..., 0] <= (gx + 1.5) * s)
        assert np.all(d[..., 1] >= (gy - 0.5) * s) and np.all(d[..., 1] <= (gy + 1.5) * s)
        anchors = np.asarray(spec.anchors)
        assert np.all(d[..., 2] <= 4 * anchors[:, 0, None, None])


def test_decode_low_objectness_no_boxes(rng):
    spec = HeadSpec(16, ((30, 61),), 4)
    raw = rng.normal(size=(1, 3, 3, 9))
    raw[..., 4] = -40
    assert yolo_head_decode(raw, spec) == []


def test_decode_confident_box():
    spec = HeadSpec(4, ((5, 6),), 2)
    raw = np.full((1, 1, 1, 7), -40.0)
    raw[..., :4] = 0
    raw[..., 4] = 40
    raw[..., 6] = 40
    (b,) = yolo_head_decode(raw, spec)
    assert b.class_id == 1 and b.score == pytest.approx(1.0)
    assert b.box.as_tuple() == (-0.5, -1.0, 4.5, 5.0)


def test_decode_bad_shape():
    with pytest.raises(ValueError):
        decode_dense(np.zeros((2, 2, 2, 8)), HeadSpec(8, ((1, 1),), 3))


# -- gradient checks -------------------------------------------------------------------

def test_grad_check_linear(rng):
    op = linear_block(rng.normal(size=(4, 3)), rng.normal(size=3))
    assert grad_check(op, rng.normal(size=(5, 4))) < 1e-6


@pytest.mark.parametrize("pre_norm", [True, False])
def test_grad_check_encoder(rng, pre_norm):
    p = EncoderParams.init(8, 2, rng)
    w = rng.normal(size=(5, 8))
    report = grad_check_report(encoder_block(p, pre_norm), rng.normal(size=(5, 8)), 1e-5, w)
    assert set(report) == set(p.arrays()) | {"input"}
    assert max(report.values()) < 1e-4


def test_grad_check_cbam(rng):
    p = CbamParams.init(8, rng, reduction=2, kernel_size=3)
    x = rng.normal(size=(8, 4, 5))
    assert grad_check(cbam_block(p), x, 1e-5, rng.normal(size=x.shape)) < 1e-4


def test_grad_check_decode(rng):
    spec = HeadSpec(8, ((10, 13), (16, 30)), 2)
    x = rng.normal(size=(2, 2, 3, 7))
    assert grad_check(decode_block(spec), x, 1e-5, rng.normal(size=x.shape)) < 1e-4


def test_grad_check_catches_wrong_backward(rng):
    w, b = rng.normal(size=(4, 3)), rng.normal(size=3)
    good = linear_block(w, b)
    bad = type(good)(good.forward, lambda d, x: (2 * d @ w.T, {"w": x.T @ d, "b": d.sum(0)}), good.params)
    assert grad_check(bad, rng.normal(size=(2, 4))) > 0.1


# -- schedule -------------------------------------------------------------------------

def test_cosine_lr_endpoints_exact():
    for total in (2, 3, 50, 300):
        assert cosine_lr(0, total, 0.01) == 0.01
        assert cosine_lr(total - 1, total, 0.01) == 0.12 * 0.01


def test_cosine_lr_midpoint():
    assert abs(cosine_lr(150, 301, 1.0) - 0.56) <= 1e-12


def test_cosine_lr_monotone():
    lrs = [cosine_lr(e, 100, 1.0) for e in range(100)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_cosine_lr_validation():
    with pytest.raises(ValueError):
        cosine_lr(5, 5, 1.0)
    with pytest.raises(ValueError):
        cosine_lr(0, 1, 1.0)


# -- archive ----------------------------------------------------------------------------

def test_archive_round_trip(rng, tmp_path, enc):
    arrays = dict(enc.arrays())
    arrays["scalar"] = np.array(3.5)
    data = dumps(arrays)
    assert data.startswith(MAGIC)
    back = loads(data)
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].shape == arrays[k].shape
        assert back[k].tobytes() == arrays[k].astype(np.float64).tobytes()
    save(tmp_path / "m.bin", arrays)
    restored = EncoderParams.from_arrays(2, {k: v for k, v in load(tmp_path / "m.bin").items() if k != "scalar"})
    x = rng.normal(size=(3, 8))
    assert np.array_equal(transformer_encoder_forward(x, restored), transformer_encoder_forward(x, enc))


def test_archive_rejects_garbage():
    with pytest.raises(ValueError):
        loads(b"NOTANARC")
    with pytest.raises(ValueError):
        loads(dumps({"a": np.ones(3)})[:-4])
