import numpy as np
import pytest

from replay_forge.dctg import (
    DctgParams,
    attention_weights,
    build_prompt,
    dctg_forward,
    image_tokens,
    layer_norm,
    load_params,
    mha_cross_attention,
    random_params,
    save_params,
    softmax,
)
from replay_forge.errors import HeadDivisibility, ShapeMismatch

from .oracles import attention_oracle, dctg_oracle, layer_norm_oracle


def as_lists(p: DctgParams) -> dict:
    out = {}
    for name in ("w_text", "w_img", "pos", "w_q", "w_k", "w_v", "w_o", "ln_img_gain", "ln_img_bias",
                 "ln_out_gain", "ln_out_bias", "b_text", "b_img", "b_q", "b_k", "b_v", "b_o"):
        v = getattr(p, name)
        out[name] = None if v is None else v.tolist()
    return out


def small(rng, C=4, d=4, h=2, dims=(2, 2, 2), n_t=3, E=6, biases=False):
    p = random_params(rng, C, d, h, int(np.prod(dims)), text_dim=E, scale=0.5)
    if biases:
        p = DctgParams(**{**p.__dict__, **{b: rng.normal(size=d) for b in ("b_text", "b_img", "b_q", "b_k", "b_v")},
                          "b_o": rng.normal(size=C)})
    f = rng.normal(size=(C,) + dims)
    t = rng.normal(size=(n_t, E))
    return f, t, p


class TestLayerNorm:
    def test_constant(self):
        assert not layer_norm(np.full(5, 3.0)).any()

    def test_hand_value(self):
        out = layer_norm([1.0, 2.0, 3.0], epsilon=0.0)
        assert out == pytest.approx([-1.224745, 0.0, 1.224745], abs=1e-5)

    def test_zero_gain(self, rng):
        bias = rng.normal(size=4)
        assert np.array_equal(layer_norm(rng.normal(size=4), np.zeros(4), bias), bias)

    def test_oracle(self, rng):
        x, g, b = rng.normal(size=(3, 7))
        assert layer_norm(x, g, b) == pytest.approx(layer_norm_oracle(list(x), list(g), list(b)), abs=1e-12)


class TestAttention:
    def test_rows_stochastic(self, rng):
        _, _, p = small(rng, d=8, h=4)
        w = attention_weights(rng.normal(size=(5, 8)), rng.normal(size=(6, 8)), p)
        assert w.shape == (4, 5, 6)
        assert (w >= 0).all()
        assert np.abs(w.sum(axis=-1) - 1).max() <= 1e-12

    def test_single_text_token(self, rng):
        _, _, p = small(rng, d=4, h=2)
        t = rng.normal(size=(1, 4))
        x = rng.normal(size=(3, 4))
        assert np.array_equal(attention_weights(x, t, p), np.ones((2, 3, 1)))
        v = t @ p.w_v
        assert np.array_equal(mha_cross_attention(x, t, p), np.repeat(v, 3, axis=0))

    def test_permutation(self, rng):
        _, _, p = small(rng, d=8, h=2)
        x, t = rng.normal(size=(4, 8)), rng.normal(size=(5, 8))
        perm = rng.permutation(5)
        assert np.abs(mha_cross_attention(x, t, p) - mha_cross_attention(x, t[perm], p)).max() <= 1e-12

    def test_single_head_plain(self, rng):
        _, _, p = small(rng, d=4, h=1)
        x, t = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
        q, k, v = x @ p.w_q, t @ p.w_k, t @ p.w_v
        plain = softmax(q @ k.T / 2.0) @ v
        assert np.array_equal(mha_cross_attention(x, t, p), plain)

    def test_oracle_fixed_example(self, rng):
        _, _, p = small(rng, d=4, h=2)
        x, t = rng.normal(size=(2, 4)), rng.normal(size=(3, 4))
        ref, weights = attention_oracle(x.tolist(), t.tolist(), p.w_q.tolist(), p.w_k.tolist(), p.w_v.tolist(), 2)
        assert np.abs(mha_cross_attention(x, t, p) - np.asarray(ref)).max() <= 1e-12
        assert np.abs(attention_weights(x, t, p) - np.asarray(weights)).max() <= 1e-12

    def test_extreme_logits_finite(self, rng):
        _, _, p = small(rng, d=4, h=2)
        out = mha_cross_attention(rng.normal(size=(2, 4)) * 1e4, rng.normal(size=(3, 4)) * 1e4, p)
        assert np.isfinite(out).all()

    def test_token_shape(self, rng):
        _, _, p = small(rng, d=4, h=2)
        with pytest.raises(ShapeMismatch):
            mha_cross_attention(np.zeros((2, 3)), np.zeros((2, 4)), p)


class TestForward:
    def test_shape(self, rng):
        f, t, p = small(rng, C=8, d=8, h=2, dims=(3, 3, 3), n_t=4)
        out = dctg_forward(f, t, p)
        assert out.shape == f.shape and np.isfinite(out).all()

    def test_zero_output_projection(self, rng):
        f, t, p = small(rng)
        p.w_o = np.zeros_like(p.w_o)
        out = dctg_forward(f, t, p)
        expected = layer_norm(image_tokens(f), p.ln_out_gain, p.ln_out_bias).T.reshape(f.shape)
        assert np.array_equal(out, expected)
        assert np.array_equal(out, dctg_forward(f, rng.normal(size=(5, t.shape[1])), p))

    @pytest.mark.parametrize("biases", [False, True])
    def test_oracle(self, rng, biases):
        f, t, p = small(rng, C=4, d=4, h=2, dims=(2, 2, 2), n_t=3, biases=biases)
        ref = np.asarray(dctg_oracle(f.tolist(), t.tolist(), as_lists(p), 2))
        assert np.abs(dctg_forward(f, t, p) - ref).max() <= 1e-6

    def test_text_permutation(self, rng):
        f, t, p = small(rng, n_t=6)
        out = dctg_forward(f, t, p)
        assert np.abs(out - dctg_forward(f, t[::-1], p)).max() <= 1e-5

    def test_token_order(self):
        f = np.arange(2 * 2 * 1 * 3).reshape(2, 2, 1, 3)
        tok = image_tokens(f)
        assert tok.shape == (6, 2)
        assert list(tok[4]) == [f[0, 1, 0, 1], f[1, 1, 0, 1]]

    def test_shape_errors(self, rng):
        f, t, p = small(rng)
        with pytest.raises(ShapeMismatch):
            dctg_forward(f[:3], t, p)
        with pytest.raises(ShapeMismatch):
            dctg_forward(f, t[:, :4], p)
        with pytest.raises(ShapeMismatch):
            dctg_forward(np.zeros((4, 3, 2, 2)), t, p)

    def test_param_validation(self, rng):
        with pytest.raises(HeadDivisibility):
            random_params(rng, 4, 6, 4, 2)
        _, _, p = small(rng)
        with pytest.raises(ShapeMismatch):
            DctgParams(**{**p.__dict__, "w_o": np.zeros((4, 5)), "w_img": np.zeros((4, 4))})
        with pytest.raises(ValueError):
            DctgParams(**{**p.__dict__, "w_q": np.full((4, 4), np.nan)})

    def test_save_load(self, rng, tmp_path):
        _, _, p = small(rng, biases=True)
        save_params(p, tmp_path)
        q = load_params(tmp_path)
        for name, v in p.__dict__.items():
            if isinstance(v, np.ndarray):
                assert np.array_equal(getattr(q, name), v.astype(np.float32).astype(np.float64))
        assert (q.heads, q.epsilon) == (p.heads, p.epsilon)


class TestPrompt:
    def test_examples(self):
        assert (build_prompt("brain tumor", ["T1", "T1c", "T2", "FLAIR"])
                == "A brain tumor case acquired with modalities: T1, T1c, T2, FLAIR.")
        assert build_prompt("stroke", ["DWI"]) == "A stroke case acquired with modalities: DWI."
        assert build_prompt("stroke", ["DWI"]) == build_prompt("stroke", ["DWI"])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            build_prompt("", ["T1"])
        with pytest.raises(ValueError):
            build_prompt("stroke", [])
