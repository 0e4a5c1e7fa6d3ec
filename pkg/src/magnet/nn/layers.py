"""Network layers with fused hand-derived backward passes.

Every layer is a single autodiff node: the forward runs plain numpy and
caches what the analytic backward needs. Finite-difference tests in the
suite pin each backward implementation.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, DimensionError, InputError
from .tensor import Tensor


def _sigmoid_(a: np.ndarray) -> np.ndarray:
    """In-place logistic; overflow in exp saturates to the exact 0/1 limit."""
    np.negative(a, out=a)
    np.exp(a, out=a)
    a += 1.0
    np.reciprocal(a, out=a)
    return a


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in) if fan_in > 0 else 0.0
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Minimal module tree with dotted parameter names and train/eval mode."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}
        self.training = True

    def register(self, name: str, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        else:
            self._buffers[name] = np.asarray(value)
        return value

    def __setattr__(self, name, value):
        if isinstance(value, (Tensor, Module)) and not name.startswith("_"):
            self.register(name, value)
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix="") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._params.items()}
        for cname, child in self._children.items():
            out.update(child.named_parameters(prefix=f"{prefix}{cname}."))
        return out

    def named_buffers(self, prefix="") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self._buffers.items()}
        for cname, child in self._children.items():
            out.update(child.named_buffers(prefix=f"{prefix}{cname}."))
        return out

    def set_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = np.asarray(value)
        object.__setattr__(self, name, self._buffers[name])

    def train(self):
        self.training = True
        for c in self._children.values():
            c.train()
        return self

    def eval(self):
        self.training = False
        for c in self._children.values():
            c.eval()
        return self


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.W = Tensor(uniform_init(rng, (d_in, d_out), d_in, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise DimensionError(
                f"linear layer expects input (..., {self.d_in}), got {x.shape} "
                f"against weight {self.W.shape}"
            )
        return x @ self.W + self.b


class LeakyReLU(Module):
    def __init__(self, slope=0.01):
        super().__init__()
        self.slope = slope

    def __call__(self, x: Tensor) -> Tensor:
        return x.leaky_relu(self.slope)


class Dropout(Module):
    """Inverted dropout; identity in eval mode. Draws masks from `rng`."""

    def __init__(self, p: float, rng: np.random.Generator):
        super().__init__()
        self.p = p
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.p <= 0.0:
            return x
        keep = (self.rng.random(x.shape) >= self.p).astype(x.dtype) / (1.0 - self.p)

        def bwd(g):
            x._accum(g * keep)

        return Tensor(x.data * keep, parents=(x,), backward=bwd)


class BatchNorm1d(Module):
    def __init__(self, num_features: int, momentum=0.1, eps=1e-5, dtype=np.float64):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(num_features, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features, dtype=dtype), requires_grad=True)
        self.set_buffer("running_mean", np.zeros(num_features, dtype=dtype))
        self.set_buffer("running_var", np.ones(num_features, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2:
            raise DimensionError(f"batch norm expects (batch, features), got {x.shape}")
        if self.training:
            mu = x.data.mean(axis=0)
            var = x.data.var(axis=0)
            n = x.shape[0]
            unbiased = var * (n / max(n - 1, 1))
            self.running_mean[...] = (1 - self.momentum) * self.running_mean + self.momentum * mu
            self.running_var[...] = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            mu = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x.data - mu) * inv_std
        gamma, beta = self.gamma, self.beta
        out_data = xhat * gamma.data + beta.data
        training = self.training

        def bwd(g):
            gamma._accum((g * xhat).sum(axis=0))
            beta._accum(g.sum(axis=0))
            gxhat = g * gamma.data
            if training:
                n = g.shape[0]
                dx = (inv_std / n) * (
                    n * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0)
                )
            else:
                dx = gxhat * inv_std
            x._accum(dx)

        return Tensor(out_data, parents=(x, gamma, beta), backward=bwd)


def _split_gates(a: np.ndarray, h: int):
    return a[..., :h], a[..., h : 2 * h], a[..., 2 * h :]


class _GRUDirection(Module):
    """Single-direction GRU scan returning the final hidden state.

    With reverse=True the scan walks the sequence back-to-front, which is
    equivalent to running the forward scan on the time-reversed input.
    """

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator, dtype=np.float64,
                 reverse: bool = False):
        super().__init__()
        self.d_in, self.d_hidden = d_in, d_hidden
        self.reverse = reverse
        self.W_x = Tensor(uniform_init(rng, (d_in, 3 * d_hidden), d_in, dtype), requires_grad=True)
        self.W_h = Tensor(uniform_init(rng, (d_hidden, 3 * d_hidden), d_hidden, dtype), requires_grad=True)
        self.b_x = Tensor(np.zeros(3 * d_hidden, dtype=dtype), requires_grad=True)
        self.b_h = Tensor(np.zeros(3 * d_hidden, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        B, T, _ = x.shape
        H = self.d_hidden
        dt = x.dtype
        W_x, W_h, b_x, b_h = self.W_x, self.W_h, self.b_x, self.b_h
        # Time-major layout keeps every per-step slice contiguous.
        Xc = np.ascontiguousarray(x.data.transpose(1, 0, 2)).reshape(T * B, -1)
        X2 = np.matmul(Xc, W_x.data)
        # The r/z halves of the hidden bias are row shifts of the gate
        # pre-activations, so they fold into the input-side bias. The n-part
        # cannot: it sits inside the r-gated product.
        bc = b_x.data.copy()
        bc[: 2 * H] += b_h.data[: 2 * H]
        X2 += bc
        X2 = X2.reshape(T, B, 3 * H)
        bhn = b_h.data[2 * H :]
        if self.reverse:
            steps = range(T - 1, -1, -1)
            prev_slot = 1  # entry state of step t lives at HS[t + 1]
        else:
            steps = range(T)
            prev_slot = 0  # entry state of step t lives at HS[t]
        # Step activations live in pre-sliced slabs; the loop body mutates
        # per-step views in place to keep the numpy call count low. HS holds
        # the hidden state at entry of every step plus the final state.
        HS = np.empty((T + 1, B, H), dtype=dt)
        HS[T if self.reverse else 0] = 0.0
        RZ = np.empty((T, B, 2 * H), dtype=dt)
        N = np.empty((T, B, H), dtype=dt)
        HN = np.empty((T, B, H), dtype=dt)
        Hh = np.empty((B, 3 * H), dtype=dt)
        with np.errstate(over="ignore"):  # saturated gates are exact limits
            for t in steps:
                h = HS[t + prev_slot]
                np.matmul(h, W_h.data, out=Hh)
                rz = RZ[t]
                np.add(X2[t, :, : 2 * H], Hh[:, : 2 * H], out=rz)
                _sigmoid_(rz)
                hn = HN[t]
                np.add(Hh[:, 2 * H :], bhn, out=hn)
                n = N[t]
                np.multiply(rz[:, :H], hn, out=n)
                n += X2[t, :, 2 * H :]
                np.tanh(n, out=n)
                # h_new = (1 - z) n + z h rewritten as n + z (h - n), written
                # straight into the next step's entry slot
                nxt = HS[t + 1 - prev_slot]
                np.subtract(h, n, out=nxt)
                nxt *= rz[:, H:]
                nxt += n
        out_data = HS[T if not self.reverse else 0].copy()

        def bwd(g):
            dh = g.astype(dt, copy=True)
            dX2 = np.empty_like(X2)
            DH = np.empty_like(X2)
            t1 = np.empty((B, H), dtype=dt)
            t2 = np.empty((B, H), dtype=dt)
            gbuf = np.empty((B, H), dtype=dt)
            Wh_T = np.ascontiguousarray(W_h.data.T)
            for t in reversed(steps):
                h_prev = HS[t + prev_slot]
                rz = RZ[t]
                r, z = rz[:, :H], rz[:, H:]
                n = N[t]
                dx2 = dX2[t]
                dr_pre, dz_pre, dn_pre = _split_gates(dx2, H)
                # dz = dh (h_prev - n), then through the sigmoid
                np.subtract(h_prev, n, out=t1)
                t1 *= dh
                np.subtract(1.0, z, out=dz_pre)
                t1 *= z
                dz_pre *= t1
                # dh_prev = dh z reuses t2 as the running carry
                np.multiply(dh, z, out=t2)
                # dn = dh - dh z, through the tanh
                np.subtract(dh, t2, out=dn_pre)
                np.multiply(n, n, out=t1)
                np.subtract(1.0, t1, out=t1)
                dn_pre *= t1
                # split into the r-gate path and the hidden-side n path
                np.multiply(dn_pre, HN[t], out=t1)
                t1 *= r
                np.subtract(1.0, r, out=dr_pre)
                dr_pre *= t1
                dHh = DH[t]
                dHh[:, : 2 * H] = dx2[:, : 2 * H]
                np.multiply(dn_pre, r, out=dHh[:, 2 * H :])
                np.matmul(dHh, Wh_T, out=gbuf)
                np.add(t2, gbuf, out=dh)
            flat = dX2.reshape(T * B, 3 * H)
            dflat = DH.reshape(T * B, 3 * H)
            W_x._accum(Xc.T @ flat)
            bsum = flat.sum(axis=0)
            b_x._accum(bsum)
            if self.reverse:
                hprev_flat = HS[1:].reshape(T * B, H)
            else:
                hprev_flat = HS[:T].reshape(T * B, H)
            W_h._accum(hprev_flat.T @ dflat)
            # b_h r/z grads equal the folded X2 gate grads; the n part keeps
            # its own path through the r-gated product
            db = bsum.copy()
            db[2 * H :] = dflat[:, 2 * H :].sum(axis=0)
            b_h._accum(db)
            x._accum((flat @ W_x.data.T).reshape(T, B, -1).transpose(1, 0, 2))

        return Tensor(out_data, parents=(x, W_x, W_h, b_x, b_h), backward=bwd)


class BiGRU(Module):
    """Bidirectional GRU; returns concat of the two directions' final states."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.fwd = _GRUDirection(d_in, d_hidden, rng, dtype)
        self.rev = _GRUDirection(d_in, d_hidden, rng, dtype, reverse=True)

    def __call__(self, seq: Tensor) -> Tensor:
        squeeze = seq.ndim == 2
        if squeeze:
            seq = seq.reshape(1, *seq.shape)
        if seq.ndim != 3:
            raise DimensionError(f"bigru expects (T, d) or (batch, T, d), got {seq.shape}")
        if seq.shape[1] < 1:
            raise InputError("bigru requires a sequence of length >= 1")
        from .tensor import concat

        out = concat([self.fwd(seq), self.rev(seq)], axis=-1)
        if squeeze:
            out = out.reshape(out.shape[-1])
        return out


class MultiHeadSelfAttention(Module):
    """Pre-norm-free self-attention block with residual connection.

    Feature dim is fixed at 128 with 8 heads of width 16 to match the
    environment encoders.
    """

    DIM = 128
    HEADS = 8

    def __init__(self, rng: np.random.Generator, dtype=np.float64, dim=None, heads=None):
        super().__init__()
        self.dim = dim or self.DIM
        self.heads = heads or self.HEADS
        if self.dim % self.heads:
            raise ConfigurationError(f"dim {self.dim} not divisible by {self.heads} heads")
        self.d_head = self.dim // self.heads
        d = self.dim
        self.Wq = Tensor(uniform_init(rng, (d, d), d, dtype), requires_grad=True)
        self.Wk = Tensor(uniform_init(rng, (d, d), d, dtype), requires_grad=True)
        self.Wv = Tensor(uniform_init(rng, (d, d), d, dtype), requires_grad=True)
        self.Wo = Tensor(uniform_init(rng, (d, d), d, dtype), requires_grad=True)
        self.bq = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.bk = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.bv = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.bo = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        # Attention maps are only retained on request: one (B, heads, T, T)
        # array per call is too large to keep around by default.
        self.keep_attention = False
        self.last_attention: np.ndarray | None = None

    def __call__(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        if x.shape[-1] != self.dim:
            raise ConfigurationError(
                f"attention feature dim must be {self.dim}, got input {x.shape}"
            )
        B, T, D = x.shape
        Hn, Dh = self.heads, self.d_head
        params = (self.Wq, self.Wk, self.Wv, self.Wo, self.bq, self.bk, self.bv, self.bo)
        Wq, Wk, Wv, Wo, bq, bk, bv, bo = params
        xf = x.data.reshape(B * T, D)
        scale = x.data.dtype.type(1.0 / np.sqrt(Dh))

        def heads(a):
            # (B*T, D) -> contiguous (B, Hn, T, Dh) so the batched matmuls
            # below stay on the fast BLAS path.
            return np.ascontiguousarray(a.reshape(B, T, Hn, Dh).transpose(0, 2, 1, 3))

        q = xf @ Wq.data
        q += bq.data
        k = xf @ Wk.data
        k += bk.data
        v = xf @ Wv.data
        v += bv.data
        Q = heads(q)
        K = heads(k)
        V = heads(v)
        Q *= scale  # fold 1/sqrt(Dh) into Q instead of scaling the TxT scores
        # Softmax runs in place on the score buffer: the (B,Hn,T,T) array is
        # the dominant allocation, so it is created once and reused as E.
        # With the max shift every E entry is <= 1, which keeps the E @ V
        # contraction safe however large the raw scores grow.
        E = Q @ K.transpose(0, 1, 3, 2)
        red = np.empty((B, Hn, T, 1), dtype=E.dtype)
        np.max(E, axis=-1, keepdims=True, out=red)
        E -= red
        with np.errstate(under="ignore"):  # distant keys flush to exactly 0
            np.exp(E, out=E)
        np.sum(E, axis=-1, keepdims=True, out=red)
        np.reciprocal(red, out=red)
        # Normalization is folded into the small (B,Hn,T,Dh) output rather
        # than the TxT map; backward materializes A = E * red lazily.
        O = E @ V
        O *= red
        if self.keep_attention:
            self.last_attention = E * red
        Of = O.transpose(0, 2, 1, 3).reshape(B * T, D)
        out_flat = Of @ Wo.data
        out_flat += bo.data
        out_flat += xf
        out_data = out_flat.reshape(B, T, D)

        def bwd(g):
            gf = g.reshape(B * T, D)
            Wo._accum(Of.T @ gf)
            bo._accum(gf.sum(axis=0))
            dOf = gf @ Wo.data.T
            dO = np.ascontiguousarray(dOf.reshape(B, T, Hn, Dh).transpose(0, 2, 1, 3))
            # Fold the softmax normalizer into the small dO tensor so the
            # unnormalized score buffer E can be used directly: with
            # A = E * red, dV = E^T (red * dO), and the softmax Jacobian
            # row term contracts against the head output instead of the TxT
            # map, since sum_j A_ij dA_ij = sum_d dO_id (AV)_id.
            rowdot = np.einsum("bhtd,bhtd->bht", dO, O)[..., None]
            rowdot *= red
            dO *= red
            dA = dO @ V.transpose(0, 1, 3, 2)
            dV = E.transpose(0, 1, 3, 2) @ dO
            dA -= rowdot
            dA *= E  # dS, reusing the dA buffer
            dS = dA
            dQ = dS @ K
            dQ *= scale  # undo the scale fold for the query path
            dK = dS.transpose(0, 1, 3, 2) @ Q  # Q is pre-scaled, so exact

            def flat(a):
                return a.transpose(0, 2, 1, 3).reshape(B * T, D)

            dQf, dKf, dVf = flat(dQ), flat(dK), flat(dV)
            Wq._accum(xf.T @ dQf)
            Wk._accum(xf.T @ dKf)
            Wv._accum(xf.T @ dVf)
            bq._accum(dQf.sum(axis=0))
            bk._accum(dKf.sum(axis=0))
            bv._accum(dVf.sum(axis=0))
            dx = dQf @ Wq.data.T
            dx += dKf @ Wk.data.T
            dx += dVf @ Wv.data.T
            dx += gf
            x._accum(dx.reshape(x.shape))

        out = Tensor(out_data, parents=(x,) + params, backward=bwd)
        if squeeze:
            out = out.reshape(T, D)
        return out
