"""Toy pre-norm transformer encoder with a tied masked-LM decoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .optim import Parameter
from .pvp import CapacityError
from .rng import SplitMix64
from .tensor import PRECISIONS, Tensor

INIT_STD = 0.02
LN_EPS = 1e-5
_NEG = -1e9


class ConfigError(ValueError):
    pass


@dataclass
class EncoderConfig:
    vocab_size: int
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 256
    max_len: int = 128
    dropout: float = 0.0

    def validate(self) -> None:
        for name in ("vocab_size", "hidden", "layers", "heads", "ffn_dim", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden {self.hidden} is not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def to_dict(self) -> dict:
        return asdict(self)


class EncoderModel:
    """Encoder weights held in a flat, ordered name -> Parameter registry."""

    def __init__(self, config: EncoderConfig, precision: str = "f32"):
        self.config = config
        self.precision = precision
        self.params: dict[str, Parameter] = {}
        self.peft = None  # set by peft.inject

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def add(self, name: str, data: np.ndarray, trainable: bool = True) -> Parameter:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name}")
        p = Parameter(name, np.ascontiguousarray(data, dtype=self.dtype), trainable)
        self.params[name] = p
        return p

    def remove(self, name: str) -> None:
        del self.params[name]

    def w(self, name: str) -> Tensor:
        return self.params[name].tensor

    def get(self, name: str) -> Tensor | None:
        p = self.params.get(name)
        return None if p is None else p.tensor

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def copy(self) -> "EncoderModel":
        other = EncoderModel(EncoderConfig(**self.config.to_dict()), self.precision)
        for name, p in self.params.items():
            other.add(name, p.data.copy(), p.trainable)
        other.peft = self.peft
        return other


def _shapes(cfg: EncoderConfig):
    h, f = cfg.hidden, cfg.ffn_dim
    yield "embed.tokens", (cfg.vocab_size, h), "normal"
    yield "embed.positions", (cfg.max_len, h), "normal"
    for i in range(cfg.layers):
        pre = f"layer{i}"
        yield f"{pre}.ln1.gamma", (h,), "ones"
        yield f"{pre}.ln1.beta", (h,), "zeros"
        for mat in ("wq", "wk", "wv", "wo"):
            yield f"{pre}.attn.{mat}", (h, h), "normal"
            if mat != "wk":  # a key bias shifts whole softmax rows: no effect, zero gradient
                yield f"{pre}.attn.b{mat[1]}", (h,), "zeros"
        yield f"{pre}.ln2.gamma", (h,), "ones"
        yield f"{pre}.ln2.beta", (h,), "zeros"
        yield f"{pre}.ffn.w1", (f, h), "normal"
        yield f"{pre}.ffn.b1", (f,), "zeros"
        yield f"{pre}.ffn.w2", (h, f), "normal"
        yield f"{pre}.ffn.b2", (h,), "zeros"
    yield "final_ln.gamma", (h,), "ones"
    yield "final_ln.beta", (h,), "zeros"
    yield "mlm.bias", (cfg.vocab_size,), "zeros"


def init_model(config: EncoderConfig, seed: int, precision: str = "f32", std: float = INIT_STD) -> EncoderModel:
    config.validate()
    if precision not in PRECISIONS:
        raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}")
    rng = SplitMix64(seed)
    model = EncoderModel(config, precision)
    for name, shape, kind in _shapes(config):
        if kind == "normal":
            data = rng.normal(int(np.prod(shape)), std).reshape(shape)
        elif kind == "ones":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        model.add(name, data)
    return model


def _proj(model: EncoderModel, x: Tensor, site: str, bias: str | None) -> Tensor:
    """Linear projection with an optional LoRA bypass registered at ``site``."""
    y = T.linear(x, model.w(site), model.w(bias) if bias else None)
    a = model.get(site + ".lora_a")
    if a is not None:
        b = model.w(site + ".lora_b")
        low = T.linear(T.linear(x, a), b)
        y = y + low * model.peft.lora_scale
    return y


def _attention(model: EncoderModel, x: Tensor, key_bias: np.ndarray, pre: str, rng, capture=None) -> Tensor:
    cfg = model.config
    bsz, length, h = x.shape
    nh, d = cfg.heads, cfg.head_dim
    q = _proj(model, x, f"{pre}.wq", f"{pre}.bq")
    k = _proj(model, x, f"{pre}.wk", None)
    v = _proj(model, x, f"{pre}.wv", f"{pre}.bv")
    lk = model.get(f"{pre}.ia3_k")
    if lk is not None:
        k = k * lk
        v = v * model.w(f"{pre}.ia3_v")

    def heads(t):
        return T.transpose(T.reshape(t, (bsz, length, nh, d)), (0, 2, 1, 3))

    scores = T.matmul(heads(q), T.swap_last(heads(k))) * (1.0 / math.sqrt(d))
    probs = T.softmax(scores + key_bias, axis=-1)
    if capture is not None:
        capture.append(probs.data)
    probs = T.dropout(probs, cfg.dropout, rng)
    ctx = T.matmul(probs, heads(v))
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (bsz, length, h))
    return _proj(model, ctx, f"{pre}.wo", f"{pre}.bo")


def _ffn(model: EncoderModel, x: Tensor, pre: str, rng) -> Tensor:
    inner = T.gelu(T.linear(x, model.w(f"{pre}.w1"), model.w(f"{pre}.b1")))
    lf = model.get(f"{pre}.ia3_ff")
    if lf is not None:
        inner = inner * lf
    inner = T.dropout(inner, model.config.dropout, rng)
    return T.linear(inner, model.w(f"{pre}.w2"), model.w(f"{pre}.b2"))


def attention_bias(attn_mask: np.ndarray, dtype) -> np.ndarray:
    """Additive key bias [B, 1, 1, L]: 0 for real tokens, -1e9 for padding."""
    return np.where(attn_mask, 0.0, _NEG).astype(dtype)[:, None, None, :]


def encode(
    model: EncoderModel, ids: np.ndarray, attn_mask: np.ndarray | None = None, rng=None, capture=None
) -> Tensor:
    """Hidden states [B, L, h] for a padded id batch [B, L]."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    if attn_mask is None:
        attn_mask = np.ones(ids.shape, dtype=bool)
    attn_mask = np.asarray(attn_mask, dtype=bool).reshape(ids.shape)
    cfg = model.config
    bsz, length = ids.shape
    if length > cfg.max_len:
        raise CapacityError(f"input length {length} exceeds max_len {cfg.max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ValueError(f"token ids must lie in [0, {cfg.vocab_size})")
    x = T.take(model.w("embed.tokens"), ids) + T.take(model.w("embed.positions"), np.arange(length))
    x = T.dropout(x, cfg.dropout, rng)
    key_bias = attention_bias(attn_mask, model.dtype)
    for i in range(cfg.layers):
        pre = f"layer{i}"
        a = T.layer_norm(x, model.w(f"{pre}.ln1.gamma"), model.w(f"{pre}.ln1.beta"), LN_EPS)
        x = x + T.dropout(_attention(model, a, key_bias, f"{pre}.attn", rng, capture), cfg.dropout, rng)
        f = T.layer_norm(x, model.w(f"{pre}.ln2.gamma"), model.w(f"{pre}.ln2.beta"), LN_EPS)
        x = x + T.dropout(_ffn(model, f, f"{pre}.ffn", rng), cfg.dropout, rng)
        down = model.get(f"{pre}.adapter.down")
        if down is not None:
            z = T.gelu(T.linear(x, down, model.w(f"{pre}.adapter.down_b")))
            x = x + T.linear(z, model.w(f"{pre}.adapter.up"), model.w(f"{pre}.adapter.up_b"))
    return T.layer_norm(x, model.w("final_ln.gamma"), model.w("final_ln.beta"), LN_EPS)


def attention_probs(model: EncoderModel, ids: np.ndarray, attn_mask: np.ndarray | None = None) -> list[np.ndarray]:
    """Per-layer attention distributions [B, heads, L, L]."""
    captured: list[np.ndarray] = []
    encode(model, ids, attn_mask, capture=captured)
    return captured


def mlm_logits(model: EncoderModel, hidden: Tensor) -> Tensor:
    """hidden @ token_embeddings.T + decoder bias (decoder tied to embeddings)."""
    return T.matmul(hidden, T.swap_last(model.w("embed.tokens"))) + model.w("mlm.bias")


def pad_batch(seqs: list[list[int]], pad_id: int = 0) -> tuple[np.ndarray, np.ndarray]:
    length = max((len(s) for s in seqs), default=0)
    ids = np.full((len(seqs), length), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), length), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask
