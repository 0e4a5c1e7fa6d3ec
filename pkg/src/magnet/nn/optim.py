"""AdamW with decoupled weight decay, plus the cosine epoch schedule."""

from __future__ import annotations

import math

import numpy as np

from ..errors import InputError, NumericError
from .tensor import Tensor


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr=5e-4, weight_decay=1e-4,
                 betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        b1, b2 = self.betas
        t = self.step_count + 1
        bc1 = 1.0 - b1**t
        bc2 = 1.0 - b2**t
        # validate before mutating anything so a bad batch aborts cleanly
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient for parameter '{name}'")
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= self.lr * update
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
        self.step_count = t

    def state(self) -> dict:
        return {
            "step": self.step_count,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "m": self.m,
            "v": self.v,
        }

    def load_state(self, state: dict):
        self.step_count = state["step"]
        self.lr = state["lr"]
        self.weight_decay = state["weight_decay"]
        for k in self.m:
            self.m[k][...] = state["m"][k]
            self.v[k][...] = state["v"][k]


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    """Half-cosine decay from base_lr at epoch 0 toward 0 at total_epochs."""
    if not 0 <= epoch < total_epochs:
        raise InputError(f"epoch {epoch} outside [0, {total_epochs})")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))
