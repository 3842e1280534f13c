"""Classification heads and the verbalizer scoring path.

The PETapter head maps the hidden state at each mask position to one logit
per sub-vocabulary token; a label's score is the sum of its tokens' logits
over the mask positions, its pseudo-probability the softmax of the scores.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .encoder import LN_EPS, EncoderModel, mlm_logits
from .optim import Parameter
from .pvp import SubVocabulary
from .rng import SplitMix64
from .tensor import ContractError, Tensor


class Head:
    kind = "head"

    def __init__(self, dtype=np.float32):
        self.dtype = dtype
        self.params: dict[str, Parameter] = {}

    def _add(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Parameter(name, np.ascontiguousarray(data, dtype=self.dtype), True)

    def w(self, name: str) -> Tensor:
        return self.params[name].tensor

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def dims(self) -> dict:
        raise NotImplementedError


class PetapterHead(Head):
    """h -> h linear, GELU, LayerNorm, h -> t linear."""

    kind = "petapter"

    def __init__(self, hidden: int, t: int, seed: int = 0, dtype=np.float32, std: float = 0.02):
        super().__init__(dtype)
        rng = SplitMix64(seed)
        self.hidden, self.t = hidden, t
        self._add("head.w1", rng.normal(hidden * hidden, std).reshape(hidden, hidden))
        self._add("head.b1", np.zeros(hidden))
        self._add("head.ln.gamma", np.ones(hidden))
        self._add("head.ln.beta", np.zeros(hidden))
        self._add("head.w2", rng.normal(t * hidden, std).reshape(t, hidden))
        self._add("head.b2", np.zeros(t))

    def dims(self) -> dict:
        return {"kind": self.kind, "hidden": self.hidden, "out": self.t}


class LinearHead(Head):
    """First-token pooler: h -> h linear, tanh, h -> c linear."""

    kind = "linear"

    def __init__(self, hidden: int, c: int, seed: int = 0, dtype=np.float32, std: float = 0.02):
        super().__init__(dtype)
        rng = SplitMix64(seed)
        self.hidden, self.c = hidden, c
        self._add("head.w1", rng.normal(hidden * hidden, std).reshape(hidden, hidden))
        self._add("head.b1", np.zeros(hidden))
        self._add("head.w2", rng.normal(c * hidden, std).reshape(c, hidden))
        self._add("head.b2", np.zeros(c))

    def dims(self) -> dict:
        return {"kind": self.kind, "hidden": self.hidden, "out": self.c}


def make_head(dims: dict, dtype=np.float32, seed: int = 0) -> Head | None:
    if dims is None or dims.get("kind") in (None, "mlm"):
        return None
    cls = {"petapter": PetapterHead, "linear": LinearHead}[dims["kind"]]
    return cls(dims["hidden"], dims["out"], seed=seed, dtype=dtype)


def gather_positions(hidden: Tensor, positions: np.ndarray) -> Tensor:
    """hidden [B, L, h], positions [B, m] -> [B, m, h]."""
    positions = np.asarray(positions, dtype=np.int64)
    if positions.ndim == 1:
        positions = positions[None, :]
    if positions.shape[-1] == 0:
        raise ContractError("at least one mask position is required")
    if hidden.data.ndim == 2:
        hidden = T.reshape(hidden, (1,) + hidden.shape)
    rows = np.arange(positions.shape[0])[:, None]
    return T.take(hidden, (rows, positions))


def petapter_mask_logits(head: PetapterHead, hidden: Tensor, mask_positions) -> Tensor:
    """[B, m, t] logits over the sub-vocabulary at every mask position."""
    z = gather_positions(hidden, mask_positions)
    z = T.gelu(T.linear(z, head.w("head.w1"), head.w("head.b1")))
    z = T.layer_norm(z, head.w("head.ln.gamma"), head.w("head.ln.beta"), LN_EPS)
    return T.linear(z, head.w("head.w2"), head.w("head.b2"))


def score_labels(mask_logits, sub_vocab: SubVocabulary) -> Tensor:
    """s[b, l] = sum_i mask_logits[b, i, index[l, i]] on raw logits.

    Accepts [m, t] or [B, m, t]; returns [c] or [B, c] accordingly.
    """
    x = T.as_tensor(mask_logits)
    single = x.data.ndim == 2
    if single:
        x = T.reshape(x, (1,) + x.shape)
    index = sub_vocab.index
    c, m = index.shape
    if x.shape[1] != m:
        raise ContractError(f"logits have {x.shape[1]} mask rows, verbalizers need {m}")
    if index.size and index.max() >= x.shape[2]:
        raise ContractError(f"verbalizer index {index.max()} out of range for t={x.shape[2]}")
    rows = np.broadcast_to(np.arange(m), (c, m))
    picked = T.take(x, (slice(None), rows, index))  # [B, c, m]
    s = T.sum(picked, axis=-1)
    return T.reshape(s, (c,)) if single else s


def pseudo_probs(s) -> np.ndarray:
    """Softmax over the last axis, shifted by the max for stability."""
    s = np.asarray(s.data if isinstance(s, Tensor) else s, dtype=np.float64)
    z = np.exp(s - s.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def ce_loss(s: Tensor, gold) -> Tensor:
    """Sum over the batch of -log q(gold | x), via log-sum-exp."""
    s = T.as_tensor(s)
    if s.data.ndim == 1:
        s = T.reshape(s, (1,) + s.shape)
    gold = np.atleast_1d(np.asarray(gold, dtype=np.int64))
    if s.shape[0] == 0:
        raise ContractError("cross-entropy over an empty batch")
    if gold.shape != (s.shape[0],):
        raise ContractError(f"{gold.shape[0]} gold labels for a batch of {s.shape[0]}")
    c = s.shape[1]
    if gold.min() < 0 or gold.max() >= c:
        raise ContractError(f"gold label out of range [0, {c})")
    picked = T.take(s, (np.arange(s.shape[0]), gold))
    return T.sum(T.logsumexp(s, axis=-1) - picked)


def linear_head_logits(head: LinearHead, hidden: Tensor) -> Tensor:
    """[B, c] logits from the first-token hidden state."""
    if hidden.data.ndim == 2:
        hidden = T.reshape(hidden, (1,) + hidden.shape)
    first = T.take(hidden, (slice(None), 0))
    z = T.tanh(T.linear(first, head.w("head.w1"), head.w("head.b1")))
    return T.linear(z, head.w("head.w2"), head.w("head.b2"))


def pet_mask_logits(model: EncoderModel, hidden: Tensor, mask_positions, sub_vocab: SubVocabulary) -> Tensor:
    """MLM logits at the mask rows, restricted to the sub-vocabulary columns: [B, m, t]."""
    rows = mlm_logits(model, gather_positions(hidden, mask_positions))
    cols = np.asarray(sub_vocab.token_ids, dtype=np.int64)
    return T.take(rows, (slice(None), slice(None), cols))


def pet_score(model: EncoderModel, hidden: Tensor, mask_positions, sub_vocab: SubVocabulary) -> Tensor:
    return score_labels(pet_mask_logits(model, hidden, mask_positions, sub_vocab), sub_vocab)

