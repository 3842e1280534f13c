"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .optim import Parameter, zero_grads
from .rng import SplitMix64
from .tensor import ContractError, NumericError, Tensor


def _coordinates(size: int, limit: int, rng: SplitMix64) -> list[int]:
    if size <= limit:
        return list(range(size))
    return sorted(rng.choice(size, limit))


def grad_check(
    model_fn: Callable[[], Tensor],
    params: list[Parameter],
    eps: float = 1e-5,
    coords_per_param: int = 64,
    seed: int = 0,
) -> float:
    """Max relative error between backprop gradients and central differences.

    Only trainable parameters are checked. Per parameter, up to
    ``coords_per_param`` coordinates are drawn from ``SplitMix64(seed)`` in
    registry order, so a failing coordinate can be reproduced. The relative
    error denominator is ``max(|analytic|, |numeric|, 1e-8)``.
    """
    checked = [p for p in params if p.trainable]
    for p in checked:
        if p.data.dtype != np.float64:
            raise ContractError(f"grad_check needs f64 parameters, {p.name} is {p.data.dtype}")
    zero_grads(checked)
    loss = model_fn()
    if not np.isfinite(loss.data).all():
        raise NumericError(f"non-finite loss {loss.data}")
    loss.backward()

    rng = SplitMix64(seed)
    worst = 0.0
    for p in checked:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in _coordinates(flat.size, coords_per_param, rng):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = model_fn().item()
            flat[i] = orig - eps
            f_minus = model_fn().item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite loss while perturbing {p.name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(aflat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    zero_grads(checked)
    return worst


# ---------------------------------------------------------------- full pipeline

PIPELINE_CASES = (
    ("none", "petapter"),
    ("lora", "petapter"),
    ("ia3", "petapter"),
    ("pfeiffer", "petapter"),
    ("none", "linear"),
    ("lora", "linear"),
    ("ia3", "linear"),
    ("pfeiffer", "linear"),
    ("none", "pet"),
)


def pipeline_check(variant: str, head_kind: str, seed: int = 0, hidden: int = 16, layers: int = 2, **kw) -> float:
    """grad_check on encoder + PEFT module + head + loss for a toy f64 model.

    Weights are drawn with std 0.3 and adapters are pushed off their identity
    initialisation, so gradients sit well above the finite-difference noise.
    """
    from .encoder import EncoderConfig, encode, init_model
    from .heads import LinearHead, PetapterHead, ce_loss, linear_head_logits, pet_score
    from .heads import petapter_mask_logits, score_labels
    from .peft import PeftConfig, inject
    from .pvp import SubVocabulary

    rng = SplitMix64(seed)
    cfg = EncoderConfig(vocab_size=24, hidden=hidden, layers=layers, heads=2, ffn_dim=2 * hidden, max_len=16)
    model = init_model(cfg, seed=seed, precision="f64", std=0.3)
    if variant != "none":
        inject(model, PeftConfig(variant, r=4, alpha=8.0, c_rate=4), seed=seed + 1)
        for p in model.parameters():
            if p.trainable:
                p.tensor.data = p.data + rng.normal(p.data.size, 0.3).reshape(p.data.shape)
    ids = np.array([[2, 7, 4, 9, 4, 11, 3], [2, 4, 8, 4, 13, 0, 0], [2, 15, 4, 6, 4, 3, 0]])
    mask = ids != 0
    positions = np.array([[2, 4], [1, 3], [2, 4]])
    sub = SubVocabulary((10, 12, 14, 16, 17), np.array([[0, 1], [2, 3], [4, 0]]))
    gold = [0, 2, 1]
    if head_kind == "pet":
        params = model.parameters()

        def loss_fn():
            return ce_loss(pet_score(model, encode(model, ids, mask), positions, sub), gold)

    elif head_kind == "petapter":
        head = PetapterHead(hidden, sub.t, seed=seed + 2, dtype=np.float64, std=0.3)
        params = model.parameters() + head.parameters()

        def loss_fn():
            h = encode(model, ids, mask)
            return ce_loss(score_labels(petapter_mask_logits(head, h, positions), sub), gold)

    elif head_kind == "linear":
        head = LinearHead(hidden, 3, seed=seed + 2, dtype=np.float64, std=0.3)
        params = model.parameters() + head.parameters()

        def loss_fn():
            return ce_loss(linear_head_logits(head, encode(model, ids, mask)), gold)

    else:
        raise ValueError(f"unknown head {head_kind!r}")
    if head_kind != "pet":
        model.params["mlm.bias"].trainable = False
    return grad_check(loss_fn, params, **kw)
