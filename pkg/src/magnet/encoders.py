"""Context encoders: user, vibration, acceleration, and target, plus the
context-aware weighting head that turns the concatenated embedding into
expert fusion weights.

Layout of the 384-d context vector is fixed: [0:64] user, [64:192]
vibration, [192:320] acceleration, [320:384] target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError
from .gaussian import TargetState
from .nn import (
    BatchNorm1d,
    BiGRU,
    Dropout,
    LeakyReLU,
    Linear,
    Module,
    MultiHeadSelfAttention,
    Tensor,
    softmax_t,
    tensor,
)
from .records import GENDERS, GESTURES, UserProfile

D_HIDDEN = 64
ATTN_DIM = 128
ATTN_HEADS = 8

H_USER = slice(0, 64)
H_VIB = slice(64, 192)
H_ACC = slice(192, 320)
H_TARGET = slice(320, 384)
D_CONTEXT = 384


def user_features(u: UserProfile, age_range: tuple[float, float]) -> np.ndarray:
    """7 features: min-max age, one-hot gender, one-hot gesture."""
    if u.gesture not in GESTURES:
        raise InputError(f"unknown gesture '{u.gesture}'; vocabulary: {GESTURES}")
    if u.gender not in GENDERS:
        raise InputError(f"unknown gender '{u.gender}'; vocabulary: {GENDERS}")
    lo, hi = age_range
    if hi <= lo:
        raise ConfigurationError(f"bad age range {age_range}")
    age = np.clip((u.age - lo) / (hi - lo), 0.0, 1.0)
    gender = np.eye(len(GENDERS))[GENDERS.index(u.gender)]
    gesture = np.eye(len(GESTURES))[GESTURES.index(u.gesture)]
    return np.concatenate([[age], gender, gesture])


def target_features(t: TargetState, bounds) -> np.ndarray:
    """Per-target features: center min-maxed into [0,1] per axis, size and
    speed scaled by the mean scene extent, raw unit direction."""
    lo = np.array([b[0] for b in bounds], dtype=np.float64)
    hi = np.array([b[1] for b in bounds], dtype=np.float64)
    if len(lo) != t.dim:
        raise InputError(f"{len(lo)} bounds for target dim {t.dim}")
    extent = hi - lo
    center = (t.center - lo) / extent
    scale = float(extent.mean())
    return np.concatenate([center, [t.size / scale, t.speed / scale], t.direction])


def target_feature_dim(dim: int) -> int:
    return 2 * dim + 2


class MLPEncoder(Module):
    """Two linear layers with a LeakyReLU between (user and target encoders)."""

    def __init__(self, d_in: int, rng: np.random.Generator, d_out: int = D_HIDDEN, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(d_in, D_HIDDEN, rng, dtype=dtype)
        self.act = LeakyReLU()
        self.fc2 = Linear(D_HIDDEN, d_out, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.act(self.fc1(x)))


@dataclass
class SeriesStats:
    """Frozen per-channel standardization statistics from the train split."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, windows: list[np.ndarray]) -> "SeriesStats":
        if not windows:
            raise InputError("no windows to fit standardization statistics")
        stacked = np.concatenate([np.asarray(w) for w in windows], axis=0)
        std = stacked.std(axis=0)
        return cls(mean=stacked.mean(axis=0), std=np.where(std > 0, std, 1.0))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


class SeriesEncoder(Module):
    """Standardized series -> linear lift to the attention width -> temporal
    self-attention -> bidirectional GRU final states (128-vector)."""

    def __init__(self, d_in: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.d_in = d_in
        self.lift = Linear(d_in, ATTN_DIM, rng, dtype=dtype)
        self.attn = MultiHeadSelfAttention(rng, dim=ATTN_DIM, heads=ATTN_HEADS, dtype=dtype)
        self.gru = BiGRU(ATTN_DIM, D_HIDDEN, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[-1] != self.d_in:
            raise InputError(
                f"series has {x.data.shape[-1]} channels, encoder expects {self.d_in}"
            )
        return self.gru(self.attn(self.lift(x)))


class CawHead(Module):
    """384 -> 128 (batch norm, LeakyReLU, dropout) -> 64 -> k logits."""

    def __init__(self, k: int, rng: np.random.Generator, dropout: float = 0.1, dtype=np.float32):
        super().__init__()
        if k < 1:
            raise ConfigurationError(f"need at least one expert, got k={k}")
        self.k = k
        self.fc1 = Linear(D_CONTEXT, 128, rng, dtype=dtype)
        self.bn = BatchNorm1d(128, dtype=dtype)
        self.act = LeakyReLU()
        self.drop = Dropout(dropout, rng)
        self.fc2 = Linear(128, 64, rng, dtype=dtype)
        self.fc3 = Linear(64, k, rng, dtype=dtype)

    def logits(self, h_con: Tensor) -> Tensor:
        h = self.drop(self.act(self.bn(self.fc1(h_con))))
        return self.fc3(self.act(self.fc2(h)))

    def __call__(self, h_con: Tensor, tau: float) -> Tensor:
        return softmax_t(self.logits(h_con), tau)


class ContextEncoder(Module):
    """The four encoders plus CAW; produces per-trial fusion weights and the
    pieces downstream adaptation needs (h_con and per-target h_t)."""

    def __init__(
        self,
        dim: int,
        k: int,
        rng: np.random.Generator,
        bounds,
        age_range: tuple[float, float] = (18.0, 60.0),
        dropout: float = 0.1,
        dtype=np.float32,
    ):
        super().__init__()
        self.dim = dim
        self.bounds = tuple(tuple(b) for b in bounds)
        self.age_range = tuple(age_range)
        self.user_enc = MLPEncoder(7, rng, dtype=dtype)
        self.vib_enc = SeriesEncoder(12, rng, dtype=dtype)
        self.acc_enc = SeriesEncoder(3, rng, dtype=dtype)
        self.target_enc = MLPEncoder(target_feature_dim(dim), rng, dtype=dtype)
        self.caw = CawHead(k, rng, dropout=dropout, dtype=dtype)
        self.set_buffer("vib_mean", np.zeros(12))
        self.set_buffer("vib_std", np.ones(12))
        self.set_buffer("acc_mean", np.zeros(3))
        self.set_buffer("acc_std", np.ones(3))

    def set_series_stats(self, vib: SeriesStats, acc: SeriesStats):
        self.set_buffer("vib_mean", vib.mean)
        self.set_buffer("vib_std", vib.std)
        self.set_buffer("acc_mean", acc.mean)
        self.set_buffer("acc_std", acc.std)

    def standardize(self, vib: np.ndarray, acc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        b = dict(self.named_buffers())
        return (vib - b["vib_mean"]) / b["vib_std"], (acc - b["acc_mean"]) / b["acc_std"]
