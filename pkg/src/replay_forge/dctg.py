"""Forward pass of the domain-conditioned text guidance block.

Image path: flatten [C, H, W, D] to N_i tokens of width C, project to d, add
the positional table, layer-norm. Text path: project precomputed token
embeddings (N_t x E, E = 768 for BERT-family encoders) to d. Image tokens
query the text tokens through h-head scaled dot-product attention; the result
is projected back to C, added to the original tokens and layer-normed.

Everything runs in float64 with batch size 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import HeadDivisibility, SchemaMismatch, ShapeMismatch
from .formats import read_vol1_file, write_vol1_file

DESCRIPTOR_VERSION = "1.0"

_MATRICES = ("w_text", "w_img", "pos", "w_q", "w_k", "w_v", "w_o")
_VECTORS = ("ln_img_gain", "ln_img_bias", "ln_out_gain", "ln_out_bias")
_BIASES = ("b_text", "b_img", "b_q", "b_k", "b_v", "b_o")


@dataclass
class DctgParams:
    w_text: np.ndarray  # E x d
    w_img: np.ndarray  # C x d
    pos: np.ndarray  # N_i x d
    w_q: np.ndarray  # d x d
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray  # d x C
    heads: int
    ln_img_gain: np.ndarray | None = None
    ln_img_bias: np.ndarray | None = None
    ln_out_gain: np.ndarray | None = None
    ln_out_bias: np.ndarray | None = None
    b_text: np.ndarray | None = None
    b_img: np.ndarray | None = None
    b_q: np.ndarray | None = None
    b_k: np.ndarray | None = None
    b_v: np.ndarray | None = None
    b_o: np.ndarray | None = None
    epsilon: float = 1e-5

    def __post_init__(self):
        for name in _MATRICES + _VECTORS + _BIASES:
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.float64)
                if not np.isfinite(v).all():
                    raise ValueError(f"{name} contains non-finite values")
                setattr(self, name, v)
        d = self.d
        if d % self.heads:
            raise HeadDivisibility(f"d={d} is not divisible by heads={self.heads}")
        expect = {
            "w_img": (self.channels, d),
            "w_q": (d, d),
            "w_k": (d, d),
            "w_v": (d, d),
            "w_o": (d, self.channels),
        }
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise ShapeMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.pos.ndim != 2 or self.pos.shape[1] != d:
            raise ShapeMismatch(f"pos has shape {self.pos.shape}, expected (N_i, {d})")
        sizes = {
            "ln_img_gain": d, "ln_img_bias": d, "ln_out_gain": self.channels,
            "ln_out_bias": self.channels, "b_text": d, "b_img": d, "b_q": d,
            "b_k": d, "b_v": d, "b_o": self.channels,
        }
        for name, n in sizes.items():
            v = getattr(self, name)
            if v is not None and v.shape != (n,):
                raise ShapeMismatch(f"{name} has shape {v.shape}, expected ({n},)")

    @property
    def d(self) -> int:
        return self.w_text.shape[1]

    @property
    def channels(self) -> int:
        return self.w_o.shape[1]

    @property
    def text_dim(self) -> int:
        return self.w_text.shape[0]


def layer_norm(x, gain=None, bias=None, epsilon: float = 1e-5) -> np.ndarray:
    """Normalize over the last axis with population variance."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    y = (x - mean) / np.sqrt(var + epsilon)
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return y


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _linear(x, w, b=None):
    y = x @ w
    return y if b is None else y + b


def attention_weights(x_tok, t_tok, params: DctgParams) -> np.ndarray:
    """Per-head attention matrices, shape [h, N_i, N_t]."""
    q, k, _ = _qkv(x_tok, t_tok, params)
    dh = params.d // params.heads
    return softmax(q @ k.transpose(0, 2, 1) / np.sqrt(dh))


def _qkv(x_tok, t_tok, params: DctgParams):
    h, d = params.heads, params.d
    if d % h:
        raise HeadDivisibility(f"d={d} is not divisible by heads={h}")
    dh = d // h

    def split(a):
        return a.reshape(a.shape[0], h, dh).transpose(1, 0, 2)

    q = split(_linear(x_tok, params.w_q, params.b_q))
    k = split(_linear(t_tok, params.w_k, params.b_k))
    v = split(_linear(t_tok, params.w_v, params.b_v))
    return q, k, v


def mha_cross_attention(x_tok, t_tok, params: DctgParams) -> np.ndarray:
    x_tok = np.asarray(x_tok, dtype=np.float64)
    t_tok = np.asarray(t_tok, dtype=np.float64)
    if x_tok.ndim != 2 or t_tok.ndim != 2 or x_tok.shape[1] != params.d or t_tok.shape[1] != params.d:
        raise ShapeMismatch(f"token shapes {x_tok.shape}, {t_tok.shape} do not match d={params.d}")
    q, k, v = _qkv(x_tok, t_tok, params)
    dh = params.d // params.heads
    attn = softmax(q @ k.transpose(0, 2, 1) / np.sqrt(dh))
    y = attn @ v
    return y.transpose(1, 0, 2).reshape(x_tok.shape[0], params.d)


def image_tokens(features: np.ndarray) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 4:
        raise ShapeMismatch(f"bottleneck features must be [C, H, W, D], got {f.shape}")
    return f.reshape(f.shape[0], -1).T


def dctg_forward(features, text, params: DctgParams) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    t = np.asarray(text, dtype=np.float64)
    if f.ndim != 4 or f.shape[0] != params.channels:
        raise ShapeMismatch(f"features {f.shape} do not have C={params.channels} channels")
    if t.ndim != 2 or t.shape[0] < 1 or t.shape[1] != params.text_dim:
        raise ShapeMismatch(f"text embedding {t.shape} is not N_t x {params.text_dim}")
    x = image_tokens(f)
    if params.pos.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"pos has {params.pos.shape[0]} rows, feature map has {x.shape[0]} tokens")

    x_q = layer_norm(
        _linear(x, params.w_img, params.b_img) + params.pos,
        params.ln_img_gain, params.ln_img_bias, params.epsilon,
    )
    t_kv = _linear(t, params.w_text, params.b_text)
    y = mha_cross_attention(x_q, t_kv, params)
    out = layer_norm(
        _linear(y, params.w_o, params.b_o) + x,
        params.ln_out_gain, params.ln_out_bias, params.epsilon,
    )
    return out.T.reshape(f.shape)


def build_prompt(lesion_type: str, modalities) -> str:
    lesion_type = str(lesion_type).strip()
    mods = [str(m).strip() for m in modalities]
    if not lesion_type or not mods or not all(mods):
        raise ValueError("prompt needs a lesion type and at least one modality")
    return f"A {lesion_type} case acquired with modalities: {', '.join(mods)}."


def random_params(rng: np.random.Generator, channels: int, d: int, heads: int,
                  n_tokens: int, text_dim: int = 768, scale: float = 0.2) -> DctgParams:
    """Random parameter set, handy for smoke runs and fixtures."""
    def m(*shape):
        return rng.normal(0.0, scale, size=shape)

    return DctgParams(
        w_text=m(text_dim, d), w_img=m(channels, d), pos=m(n_tokens, d),
        w_q=m(d, d), w_k=m(d, d), w_v=m(d, d), w_o=m(d, channels), heads=heads,
        ln_img_gain=1.0 + m(d), ln_img_bias=m(d),
        ln_out_gain=1.0 + m(channels), ln_out_bias=m(channels),
    )


def save_params(params: DctgParams, directory: str | Path) -> Path:
    """Write every tensor as float32 VOL1 plus a ``dctg.json`` descriptor."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for f in fields(DctgParams):
        v = getattr(params, f.name)
        if isinstance(v, np.ndarray):
            tensors[f.name] = f"{f.name}.vol1"
            write_vol1_file(directory / tensors[f.name], v.astype(np.float32))
    desc = {
        "version": DESCRIPTOR_VERSION,
        "d": params.d,
        "h": params.heads,
        "C": params.channels,
        "epsilon": params.epsilon,
        "tensors": tensors,
    }
    path = directory / "dctg.json"
    path.write_text(json.dumps(desc, indent=2, sort_keys=True) + "\n")
    return path


def load_params(path: str | Path) -> DctgParams:
    """Load from a ``dctg.json`` descriptor (or the directory holding one)."""
    path = Path(path)
    if path.is_dir():
        path = path / "dctg.json"
    desc = json.loads(path.read_text())
    if str(desc.get("version", "")).split(".")[0] != DESCRIPTOR_VERSION.split(".")[0]:
        raise SchemaMismatch(f"unsupported DCTG descriptor version {desc.get('version')!r}")
    kwargs = {}
    for name, fname in desc["tensors"].items():
        arr, _ = read_vol1_file(path.parent / fname)
        kwargs[name] = arr.astype(np.float64)
    missing = [n for n in _MATRICES if n not in kwargs]
    if missing:
        raise ShapeMismatch(f"descriptor lacks tensors: {missing}")
    params = DctgParams(heads=int(desc["h"]), epsilon=float(desc.get("epsilon", 1e-5)), **kwargs)
    if params.d != desc["d"] or params.channels != desc["C"]:
        raise ShapeMismatch("descriptor d/C disagree with tensor shapes")
    return params
