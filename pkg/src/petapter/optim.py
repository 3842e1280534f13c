"""Named parameters and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, Tensor


class Parameter:
    """A named tensor. ``trainable`` toggles whether it collects gradients."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, data: np.ndarray, trainable: bool = True):
        self.name = name
        self.tensor = Tensor(data, requires_grad=trainable)

    @property
    def trainable(self) -> bool:
        return self.tensor.requires_grad

    @trainable.setter
    def trainable(self, value: bool) -> None:
        self.tensor.requires_grad = bool(value)
        if not value:
            self.tensor.grad = None

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    @property
    def size(self) -> int:
        return int(self.tensor.data.size)

    def __repr__(self) -> str:
        flag = "" if self.trainable else ", frozen"
        return f"Parameter({self.name!r}, shape={self.tensor.shape}{flag})"


@dataclass
class AdamState:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: list[Parameter]) -> None:
    """One bias-corrected Adam update over the trainable params, then zero their grads.

    Frozen parameters are skipped entirely, so their buffers are never written.
    """
    trainable = [p for p in params if p.trainable]
    for p in trainable:
        if p.grad is None:
            raise ContractError(f"parameter {p.name} has no gradient; call backward() first")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p in trainable:
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.tensor.data -= update.astype(p.data.dtype, copy=False)
        p.tensor.grad = None


def zero_grads(params: list[Parameter]) -> None:
    for p in params:
        p.tensor.grad = None
