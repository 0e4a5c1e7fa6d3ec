"""Context-gated mixture of adapted ternary-Gaussian experts.

Pipeline per trial: encode user/vibration/acceleration/targets, gate the k
base experts with temperature-softmax fusion weights, perturb each expert's
coefficients per target through a bounded adaptation head, evaluate each
adapted Gaussian at the endpoint in the target's local frame, and fuse into
a per-target mixture log density that ranks the candidates.

Adaptation keeps experts interpretable: mean coefficients shift by at most
rho_mu of the matching spread coefficient (tanh envelope), and spread
coefficients scale by at most exp(+-rho_sigma), staying positive.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np

from .encoders import (
    D_CONTEXT,
    D_HIDDEN,
    ContextEncoder,
    SeriesStats,
    target_features,
    user_features,
)
from .errors import ConfigurationError, InputError, NumericError
from .experts import ExpertRegistry, ExpertSpec
from .gaussian import TernaryGaussianParams, local_frame
from .nn import (
    LeakyReLU,
    Linear,
    Module,
    Tensor,
    broadcast_to,
    concat,
    log_softmax_t,
    logsumexp,
    maximum,
    stack,
    tensor,
)
from .nn.checkpoint import load_params, save_params
from .nn.optim import AdamW, cosine_lr
from .records import Dataset, PredictionRecord, TrialRecord

VAR_FLOOR = 1e-10
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ModelConfig:
    dim: int
    bounds: tuple
    tau: float = 2.0
    rho_mu: float = 0.5
    rho_sigma: float = 0.5
    dropout: float = 0.1
    adapt_hidden: int = 128
    age_range: tuple = (18.0, 60.0)
    sample_rate: float = 50.0
    window_duration: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigurationError(f"dim must be 2 or 3, got {self.dim}")
        if self.tau <= 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if self.rho_mu < 0 or self.rho_sigma < 0:
            raise ConfigurationError("adaptation bounds must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bounds"] = [list(b) for b in self.bounds]
        d["age_range"] = list(self.age_range)
        return d


@dataclass
class TrainConfig:
    shots: int = 1
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    lr: float = 5e-4
    weight_decay: float = 1e-4
    margin: float = 1.0
    lambda_div: float = 0.02
    hardest_negative: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.shots < 1:
            raise ConfigurationError(f"shots must be >= 1, got {self.shots}")
        if self.patience > self.max_epochs:
            raise ConfigurationError(
                f"patience {self.patience} exceeds max epochs {self.max_epochs}"
            )


class MagnetModel(Module):
    def __init__(self, cfg: ModelConfig, registry: ExpertRegistry, dtype=np.float32):
        super().__init__()
        if registry.dim != cfg.dim:
            raise ConfigurationError(
                f"registry dim {registry.dim} does not match task dim {cfg.dim}"
            )
        self.cfg = cfg
        self.dtype = dtype
        self.expert_ids = registry.ids()
        self.k = len(registry)
        rng = np.random.default_rng(cfg.seed)
        self.enc = ContextEncoder(
            cfg.dim, self.k, rng, cfg.bounds,
            age_range=cfg.age_range, dropout=cfg.dropout, dtype=dtype,
        )
        d_adapt_in = D_HIDDEN + D_CONTEXT
        self.adapt_fc1 = Linear(d_adapt_in, cfg.adapt_hidden, rng, dtype=dtype)
        self.adapt_act = LeakyReLU()
        self.adapt_fc2 = Linear(cfg.adapt_hidden, self.k * cfg.dim * 3 * 2, rng, dtype=dtype)
        # Zero final layer: adaptation starts as the exact identity.
        self.adapt_fc2.W.data[:] = 0.0
        self.adapt_fc2.b.data[:] = 0.0
        self.set_buffer(
            "experts_mu", np.stack([registry[i].params.mu for i in self.expert_ids])
        )
        self.set_buffer(
            "experts_sigma", np.stack([registry[i].params.sigma for i in self.expert_ids])
        )

    # -- feature preparation ---------------------------------------------------

    def prepare(self, trial: TrialRecord) -> dict:
        """Numpy feature dict for one trial; no autodiff objects involved."""
        cfg = self.cfg
        if trial.dim != cfg.dim:
            raise InputError(f"trial dim {trial.dim} does not match model dim {cfg.dim}")
        T = round(cfg.window_duration * cfg.sample_rate)
        flags = []
        if trial.env is not None:
            vib, acc = trial.env.vib, trial.env.acc
        else:
            vib, acc = np.zeros((T, 12)), np.zeros((T, 3))
            flags.append("env_missing")
        vib_s, acc_s = self.enc.standardize(vib, acc)

        axes = np.stack([local_frame(t).axes for t in trial.targets])
        centers = np.stack([t.center for t in trial.targets])
        d_loc = np.einsum("nij,nj->ni", axes, trial.endpoint - centers)
        r1 = np.stack([[1.0, t.speed, t.size] for t in trial.targets])
        tfeat = np.stack([target_features(t, cfg.bounds) for t in trial.targets])
        ids = [t.id for t in trial.targets]
        return {
            "user": user_features(trial.user, cfg.age_range).astype(self.dtype),
            "vib": vib_s.astype(self.dtype),
            "acc": acc_s.astype(self.dtype),
            "tfeat": tfeat.astype(self.dtype),
            "r1": r1.astype(self.dtype),
            "d_loc": d_loc.astype(self.dtype),
            "pos": ids.index(trial.intended_id),
            "ids": ids,
            "trial_id": trial.trial_id,
            "flags": flags,
        }

    def collate(self, prepared: list[dict]) -> dict:
        ns = {p["tfeat"].shape[0] for p in prepared}
        ts = {p["vib"].shape[0] for p in prepared}
        if len(ns) != 1 or len(ts) != 1:
            raise InputError(f"cannot batch trials with mixed shapes (N={ns}, T={ts})")
        batch = {
            key: np.stack([p[key] for p in prepared])
            for key in ("user", "vib", "acc", "tfeat", "r1", "d_loc")
        }
        batch["pos"] = np.array([p["pos"] for p in prepared])
        batch["ids"] = [p["ids"] for p in prepared]
        batch["trial_ids"] = [p["trial_id"] for p in prepared]
        batch["flags"] = [p["flags"] for p in prepared]
        return batch

    # -- forward ----------------------------------------------------------------

    def forward(self, batch: dict) -> dict:
        cfg = self.cfg
        B, N = batch["tfeat"].shape[:2]
        k, dim = self.k, cfg.dim

        h_u = self.enc.user_enc(tensor(batch["user"]))
        h_v = self.enc.vib_enc(tensor(batch["vib"]))
        h_a = self.enc.acc_enc(tensor(batch["acc"]))
        h_t = self.enc.target_enc(tensor(batch["tfeat"]))          # (B,N,64)
        h_con = concat([h_u, h_v, h_a, h_t.mean(axis=1)], axis=-1)  # (B,384)

        logits = self.enc.caw.logits(h_con)
        log_w = log_softmax_t(logits, cfg.tau)                     # (B,k)

        h_con_b = broadcast_to(h_con.reshape(B, 1, D_CONTEXT), (B, N, D_CONTEXT))
        delta = self.adapt_fc2(self.adapt_act(self.adapt_fc1(concat([h_t, h_con_b], axis=-1))))
        delta = delta.reshape(B, N, k, dim, 3, 2)
        d_mu, d_sigma = delta[..., 0], delta[..., 1]               # (B,N,k,dim,3)

        buffers = dict(self.named_buffers())
        base_mu = buffers["experts_mu"].astype(self.dtype)
        base_sigma = buffers["experts_sigma"].astype(self.dtype)
        mu_c = Tensor(base_mu) + d_mu.tanh() * Tensor(cfg.rho_mu * base_sigma)
        sigma_c = Tensor(base_sigma) * (d_sigma.tanh() * cfg.rho_sigma).exp()

        r1 = batch["r1"][:, :, None, None, :]                      # (B,N,1,1,3)
        mu_d = (mu_c * Tensor(r1)).sum(axis=-1)                    # (B,N,k,dim)
        sr = sigma_c * Tensor(r1)
        var_d = (sr * sr).sum(axis=-1) + VAR_FLOOR                 # (B,N,k,dim)

        d_loc = Tensor(batch["d_loc"][:, :, None, :])              # (B,N,1,dim)
        diff = d_loc - mu_d
        log_pdf = (diff * diff / var_d + var_d.log()).sum(axis=-1) * (-0.5) + (
            -0.5 * dim * LOG_2PI
        )                                                          # (B,N,k)

        fused = logsumexp(log_w.reshape(B, 1, k) + log_pdf, axis=-1)  # (B,N)
        return {
            "fused": fused,
            "log_w": log_w,
            "mu_c": mu_c,
            "sigma_c": sigma_c,
            "mu_d": mu_d,
            "var_d": var_d,
            "per_expert_log_pdf": log_pdf,
        }

    # -- losses -------------------------------------------------------------------

    def losses(self, batch: dict, out: dict, tc: TrainConfig) -> dict:
        fused = out["fused"]
        B, N = fused.data.shape
        rows = np.arange(B)
        pos_idx = batch["pos"]
        pos = fused[rows, pos_idx]

        if N < 2:
            warnings.warn("trial has no negative targets; ranking loss is 0")
            l_rank = tensor(np.zeros((), dtype=self.dtype))
        elif tc.hardest_negative:
            mask = np.zeros((B, N), dtype=self.dtype)
            mask[rows, pos_idx] = -np.inf
            masked = fused + Tensor(mask)
            neg_star = masked[rows, np.argmax(masked.data, axis=1)]
            l_rank = maximum(Tensor(np.zeros(B, dtype=self.dtype)), neg_star - pos + tc.margin).mean()
        else:
            keep = np.ones((B, N), dtype=self.dtype)
            keep[rows, pos_idx] = 0.0
            neg_mean = (fused * Tensor(keep)).sum(axis=1) * (1.0 / (N - 1))
            l_rank = maximum(Tensor(np.zeros(B, dtype=self.dtype)), neg_mean - pos + tc.margin).mean()

        l_div = self.diversity(out["mu_c"], out["sigma_c"])
        total = l_rank + l_div * tc.lambda_div
        return {"total": total, "rank": l_rank, "div": l_div}

    def diversity(self, mu_c: Tensor, sigma_c: Tensor) -> Tensor:
        """Mean pairwise cosine similarity of flattened adapted coefficients,
        averaged over trials and targets; 0 when only one expert exists."""
        if self.k < 2:
            return tensor(np.zeros((), dtype=self.dtype))
        B, N, k = mu_c.data.shape[:3]
        flat_dim = self.cfg.dim * 3
        theta = concat(
            [mu_c.reshape(B, N, k, flat_dim), sigma_c.reshape(B, N, k, flat_dim)], axis=-1
        )
        norm = (theta * theta).sum(axis=-1, keepdims=True).sqrt()
        if np.any(norm.data == 0):
            warnings.warn("zero-norm adapted parameter vector; pair similarity treated as 0")
        unit = theta / (norm + 1e-12)
        sims = []
        for i in range(k):
            for j in range(i + 1, k):
                sims.append((unit[:, :, i, :] * unit[:, :, j, :]).sum(axis=-1))
        return stack(sims, axis=0).mean()

    # -- checkpointing -------------------------------------------------------------

    def state_arrays(self) -> dict:
        arrays = {f"param.{n}": p.data for n, p in self.named_parameters().items()}
        arrays.update({f"buffer.{n}": b for n, b in self.named_buffers().items()})
        return arrays

    def load_state_arrays(self, arrays: dict):
        params = self.named_parameters()
        for name, arr in arrays.items():
            kind, _, key = name.partition(".")
            if kind == "param":
                if key not in params:
                    raise ConfigurationError(f"checkpoint has unknown parameter '{key}'")
                if params[key].data.shape != arr.shape:
                    raise ConfigurationError(
                        f"parameter '{key}' shape {arr.shape} != model {params[key].data.shape}"
                    )
                params[key].data = arr.astype(params[key].data.dtype)
            else:
                self._assign_buffer(key, arr)

    def _assign_buffer(self, dotted: str, arr: np.ndarray):
        mod = self
        parts = dotted.split(".")
        for p in parts[:-1]:
            mod = mod._children[p]
        mod._buffers[parts[-1]] = arr

    def save(self, path, extra_meta: dict | None = None):
        meta = {
            "kind": "magnet-checkpoint",
            "config": self.cfg.to_dict(),
            "expert_ids": list(self.expert_ids),
            "dtype": np.dtype(self.dtype).name,
        }
        if extra_meta:
            meta.update(extra_meta)
        save_params(path, self.state_arrays(), meta)

    @classmethod
    def load(cls, path) -> "MagnetModel":
        arrays, meta = load_params(path)
        if meta.get("kind") != "magnet-checkpoint":
            raise ConfigurationError(f"{path} is not a model checkpoint")
        c = dict(meta["config"])
        c["bounds"] = tuple(tuple(b) for b in c["bounds"])
        c["age_range"] = tuple(c["age_range"])
        cfg = ModelConfig(**c)
        mu = arrays["buffer.experts_mu"]
        sigma = arrays["buffer.experts_sigma"]
        registry = ExpertRegistry(
            [
                ExpertSpec(
                    id=eid,
                    dim=cfg.dim,
                    params=TernaryGaussianParams(mu=mu[i], sigma=sigma[i]),
                )
                for i, eid in enumerate(meta["expert_ids"])
            ]
        )
        model = cls(cfg, registry, dtype=np.dtype(meta.get("dtype", "float32")).type)
        model.load_state_arrays(arrays)
        return model


# -- decoding ----------------------------------------------------------------------


def _ranking(ids: list[int], log_densities: np.ndarray) -> list[int]:
    order = sorted(range(len(ids)), key=lambda i: (-log_densities[i], ids[i]))
    return [ids[i] for i in order]


def predict(model: MagnetModel, trial: TrialRecord) -> PredictionRecord:
    """Full eval-mode pipeline for one trial, with inspection payload."""
    model.eval()
    batch = model.collate([model.prepare(trial)])
    out = model.forward(batch)
    fused = out["fused"].data[0]
    weights = np.exp(out["log_w"].data[0])
    ids = batch["ids"][0]
    moments = {
        str(ids[n]): {
            model.expert_ids[j]: {
                "mu": [float(x) for x in out["mu_d"].data[0, n, j]],
                "var": [float(x) for x in out["var_d"].data[0, n, j]],
            }
            for j in range(model.k)
        }
        for n in range(len(ids))
    }
    return PredictionRecord(
        trial_id=trial.trial_id,
        target_ids=ids,
        log_densities=[float(x) for x in fused],
        ranking=_ranking(ids, fused),
        weights=[float(x) for x in weights],
        expert_ids=list(model.expert_ids),
        adapted_moments=moments,
        flags=batch["flags"][0],
    )


def rank_targets(model: MagnetModel, trial: TrialRecord) -> list[int]:
    return predict(model, trial).ranking


def predict_dataset(model: MagnetModel, trials: list[TrialRecord], batch_size: int = 64):
    """Eval-mode rankings for many trials; batched for speed."""
    model.eval()
    rankings = []
    fused_all = []
    for start in range(0, len(trials), batch_size):
        chunk = trials[start : start + batch_size]
        batch = model.collate([model.prepare(t) for t in chunk])
        out = model.forward(batch)
        for ids, row in zip(batch["ids"], out["fused"].data):
            rankings.append(_ranking(ids, row))
            fused_all.append(row)
    return rankings, fused_all


# -- training -----------------------------------------------------------------------


def _series_stats(trials: list[TrialRecord]) -> tuple[SeriesStats, SeriesStats]:
    vibs = [t.env.vib for t in trials if t.env is not None]
    accs = [t.env.acc for t in trials if t.env is not None]
    if not vibs:
        raise ConfigurationError("training split has no environment windows")
    return SeriesStats.fit(vibs), SeriesStats.fit(accs)


def _epoch_loss(model: MagnetModel, prepared: list[dict], tc: TrainConfig) -> dict:
    """Eval-mode loss over a split (no dropout, frozen batch-norm stats)."""
    model.eval()
    totals = {"total": 0.0, "rank": 0.0, "div": 0.0}
    n = 0
    for start in range(0, len(prepared), tc.batch_size):
        chunk = prepared[start : start + tc.batch_size]
        batch = model.collate(chunk)
        losses = model.losses(batch, model.forward(batch), tc)
        for key in totals:
            totals[key] += float(losses[key].data) * len(chunk)
        n += len(chunk)
    return {k: v / n for k, v in totals.items()}


def train(
    train_set: Dataset,
    val_set: Dataset,
    registry: ExpertRegistry,
    mc: ModelConfig,
    tc: TrainConfig,
) -> tuple[MagnetModel, list[dict]]:
    """Few-shot training: AdamW with cosine learning-rate decay, early stop on
    validation total loss, best-validation weights restored at the end."""
    if not len(train_set) or not len(val_set):
        raise ConfigurationError("train and validation splits must be nonempty")
    mc = replace(mc, seed=tc.seed)
    model = MagnetModel(mc, registry)
    vib_stats, acc_stats = _series_stats(train_set.records)
    model.enc.set_series_stats(vib_stats, acc_stats)

    train_prep = [model.prepare(t) for t in train_set.records]
    val_prep = [model.prepare(t) for t in val_set.records]

    opt = AdamW(model.named_parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
    rng = np.random.default_rng([tc.seed, 5])
    log: list[dict] = []
    best_val = np.inf
    best_epoch = -1
    best_state: dict | None = None

    for epoch in range(tc.max_epochs):
        opt.lr = cosine_lr(epoch, tc.max_epochs, tc.lr)
        model.train()
        order = rng.permutation(len(train_prep))
        train_total = 0.0
        seen = 0
        for start in range(0, len(order), tc.batch_size):
            idx = order[start : start + tc.batch_size]
            if len(idx) == 1:
                warnings.warn("skipping size-1 batch (batch norm needs >= 2 rows)")
                continue
            batch = model.collate([train_prep[i] for i in idx])
            losses = model.losses(batch, model.forward(batch), tc)
            total = losses["total"]
            if not np.isfinite(total.data):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch} "
                    f"(rank={float(losses['rank'].data)}, div={float(losses['div'].data)})"
                )
            opt.zero_grad()
            total.backward()
            opt.step()
            train_total += float(total.data) * len(idx)
            seen += len(idx)

        val = _epoch_loss(model, val_prep, tc)
        log.append(
            {
                "epoch": epoch,
                "lr": opt.lr,
                "train_total": train_total / max(seen, 1),
                "val_total": val["total"],
                "val_rank": val["rank"],
                "val_div": val["div"],
            }
        )
        if val["total"] < best_val:
            best_val = val["total"]
            best_epoch = epoch
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
        if epoch - best_epoch >= tc.patience:
            break

    if best_state is not None:
        model.load_state_arrays(best_state)
    model.eval()
    return model, log
