import numpy as np
import pytest

from surgidepth.autodiff import constant, layer_norm
from surgidepth.errors import ConfigError, ShapeError
from surgidepth.vit import (
    BlockWeights,
    EncoderConfig,
    add_pos_and_class,
    attention,
    block_forward,
    encoder_forward,
    init_encoder,
    patchify_embed,
)


def zero_block(d, hidden=None):
    hidden = hidden or 4 * d
    shapes = dict(ln1_g=(d,), ln1_b=(d,), wq=(d, d), bq=(d,), wk=(d, d), bk=(d,), wv=(d, d),
                  bv=(d,), wo=(d, d), bo=(d,), ln2_g=(d,), ln2_b=(d,), w1=(hidden, d),
                  b1=(hidden,), w2=(d, hidden), b2=(d,))
    return BlockWeights.from_arrays({k: np.zeros(s) for k, s in shapes.items()})


def test_config_validation():
    assert EncoderConfig().n_patches == 16
    assert EncoderConfig(img_h=224, img_w=224).n_patches == 256
    with pytest.raises(ConfigError):
        EncoderConfig(img_h=50)
    with pytest.raises(ConfigError):
        EncoderConfig(dim=63)
    with pytest.raises(ConfigError):
        EncoderConfig(extract_layers=(0, 4))
    with pytest.raises(ConfigError):
        EncoderConfig(extract_layers=(5,))


def test_patch_token_count():
    d, p = 8, 14
    w = constant(np.random.default_rng(0).normal(size=(d, p * p * 3)))
    tokens = patchify_embed(np.zeros((224, 224, 3)), w, constant(np.zeros(d)), p)
    assert tokens.shape == (256, d)
    assert np.array_equal(tokens.data, np.zeros((256, d)))
    with pytest.raises(ShapeError):
        patchify_embed(np.zeros((30, 28, 3)), w, None, p)


def test_patchify_identity_projection_returns_raw_patches():
    p = 14
    img = np.random.default_rng(1).random((28, 28, 1))
    tokens = patchify_embed(img, constant(np.eye(p * p)), None, p).data
    expected = [img[r:r + p, c:c + p, 0].reshape(-1) for r in (0, p) for c in (0, p)]
    assert np.array_equal(tokens, np.array(expected))


def test_add_pos_and_class():
    rng = np.random.default_rng(2)
    patches = constant(rng.normal(size=(4, 6)))
    out = add_pos_and_class(patches, constant(np.zeros((5, 6))), constant(np.zeros(6)))
    assert np.array_equal(out.data[1:], patches.data)
    pos, cls = rng.normal(size=(5, 6)), rng.normal(size=6)
    out = add_pos_and_class(constant(np.zeros((4, 6))), constant(pos), constant(cls))
    assert np.array_equal(out.data, pos + np.vstack([cls, np.zeros((4, 6))]))
    out = add_pos_and_class(patches, constant(pos), constant(cls)).data
    assert np.allclose(out, np.vstack([cls, patches.data]) + pos, rtol=0, atol=1e-15)
    with pytest.raises(ShapeError):
        add_pos_and_class(patches, constant(np.zeros((4, 6))), constant(cls))


def test_zero_block_is_identity():
    x = constant(np.random.default_rng(3).normal(size=(5, 8)))
    assert np.array_equal(block_forward(x, zero_block(8), 2).data, x.data)
    outs = encoder_forward(x, [zero_block(8)] * 3, 2)
    assert len(outs) == 3 and all(np.array_equal(o.data, x.data) for o in outs)


def test_single_token_attention():
    rng = np.random.default_rng(4)
    q, k, v = (constant(rng.normal(size=(1, 8))) for _ in range(3))
    out, w = attention(q, k, v, heads=2, return_weights=True)
    assert np.array_equal(w.data, np.ones((2, 1, 1)))
    assert np.array_equal(out.data, v.data)

    blk = zero_block(8)
    d = {k: t.data for k, t in blk.named()}
    d.update(wv=rng.normal(size=(8, 8)), wo=rng.normal(size=(8, 8)), ln1_g=np.ones(8))
    blk = BlockWeights.from_arrays(d)
    x = constant(rng.normal(size=(1, 8)))
    ln = layer_norm(x, blk.ln1_g, blk.ln1_b).data
    expected = x.data + ln @ d["wv"].T @ d["wo"].T
    assert np.allclose(block_forward(x, blk, 2).data, expected, rtol=0, atol=1e-12)


def test_identical_query_key_rows_average_values():
    rng = np.random.default_rng(5)
    qrow = rng.normal(size=(1, 4))
    q = constant(np.vstack([qrow, qrow]))
    v = constant(rng.normal(size=(2, 4)))
    out = attention(q, q, v, heads=1).data
    assert np.allclose(out, np.broadcast_to(v.data.mean(0), (2, 4)), atol=1e-15)


def test_attention_rows_sum_to_one_and_bias_hook():
    rng = np.random.default_rng(6)
    q, k, v = (constant(rng.normal(size=(7, 12))) for _ in range(3))
    _, w = attention(q, k, v, heads=3, return_weights=True)
    assert np.allclose(w.data.sum(-1), 1.0, atol=1e-12)
    bias = np.full((7, 7), -np.inf)
    np.fill_diagonal(bias, 0.0)
    out = attention(q, k, v, heads=3, attn_bias=bias).data
    assert np.allclose(out, v.data, atol=1e-15)
    with pytest.raises(ConfigError):
        attention(q, k, v, heads=5)


def test_encoder_shapes_and_determinism():
    cfg = EncoderConfig()
    enc = init_encoder(cfg, 0)
    tokens = constant(np.random.default_rng(7).normal(size=(cfg.n_patches + 1, cfg.dim)))
    a = encoder_forward(tokens, enc.blocks, cfg.heads)
    b = encoder_forward(tokens, enc.blocks, cfg.heads)
    assert len(a) == cfg.depth
    assert all(o.shape == (17, 64) for o in a)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a, b))
    single = encoder_forward(tokens, enc.blocks[:1], cfg.heads)[0]
    assert np.array_equal(single.data, block_forward(tokens, enc.blocks[0], cfg.heads).data)
    with pytest.raises(ConfigError):
        encoder_forward(tokens, [], cfg.heads)
    with pytest.raises(ConfigError):
        block_forward(tokens, enc.blocks[0], 3)
