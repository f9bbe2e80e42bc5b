"""Layer library: embedding, LSTM, rotary multi-head attention, MLP, and
the post-LayerNorm transformer / hybrid residual blocks.

Every layer is causal: outputs at position t depend only on tokens <= t.
The LSTM runs as a single fused tape op with a hand-derived
backward-through-time pass (the per-timestep Python loop would otherwise
dominate single-core training time); its gradients are covered by the
finite-difference suite like everything else.

Attention-bearing blocks carry an ``active`` gate.  A gated-off block is
the exact identity on its input and records nothing on the tape, so the
parameters behind the gate can neither influence the forward pass nor
receive gradients.
"""

from __future__ import annotations

import math

import numpy as np

from .rng import Rng
from .tensor import (
    Tensor, ShapeError, add, gelu, layer_norm, make_op, matmul, reshape,
    softmax, transpose,
)

MASK_VALUE = -1e30  # additive pre-softmax mask; underflows to exactly 0 weight


def _uniform_init(rng: Rng, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return ((rng.fill_uniform(shape) * 2.0 - 1.0) * bound).astype(np.float32)


class Linear:
    """Affine map over the last axis; weights uniform in +-1/sqrt(fan_in)."""

    def __init__(self, rng: Rng, fan_in: int, fan_out: int):
        self.fan_in = fan_in
        self.fan_out = fan_out
        self.weight = Tensor(_uniform_init(rng, (fan_in, fan_out), fan_in), requires_grad=True)
        self.bias = Tensor(_uniform_init(rng, (fan_out,), fan_in), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.fan_in:
            raise ShapeError(f"Linear expects last dim {self.fan_in}, got {x.shape}")
        if x.ndim == 2:
            return add(matmul(x, self.weight), self.bias)
        lead = x.shape[:-1]
        flat = reshape(x, (-1, self.fan_in))
        out = add(matmul(flat, self.weight), self.bias)
        return reshape(out, lead + (self.fan_out,))

    def params(self):
        yield "weight", self.weight
        yield "bias", self.bias


class Embedding:
    """Token-id -> row lookup; gradient scatter-adds into the table.

    Unit-scale Gaussian rows: the recurrent path has no input LayerNorm,
    and a small table (the usual 0.02 of LN-everywhere transformers)
    starves it of signal badly enough to stall training at desk scale.
    """

    def __init__(self, rng: Rng, vocab_size: int, dim: int, std: float = 1.0):
        self.vocab_size = vocab_size
        table = rng.fill_normal((vocab_size, dim)) * std
        self.table = Tensor(table.astype(np.float32), requires_grad=True)

    def __call__(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise IndexError(
                f"token id out of range for vocab {self.vocab_size}: "
                f"{int(ids.min())}..{int(ids.max())}"
            )
        table = self.table
        out = table.data[ids]

        def backward(g, table=table, ids=ids):
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
            table.accumulate_grad(gt, owned=True)

        return make_op(out, (table,), backward)

    def params(self):
        yield "table", self.table


class LayerNorm:
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)

    def params(self):
        yield "gain", self.gain
        yield "bias", self.bias


class LSTM:
    """Single-layer LSTM over [B, T, d] -> [B, T, hidden].

    Gates are packed (input, forget, output, candidate) so the three
    sigmoids evaluate in one call.  The forget-gate bias starts at 1.0.
    """

    def __init__(self, rng: Rng, dim: int, hidden: int | None = None):
        self.dim = dim
        self.hidden = hidden or dim
        h = self.hidden
        self.w_x = Tensor(_uniform_init(rng, (dim, 4 * h), dim), requires_grad=True)
        self.w_h = Tensor(_uniform_init(rng, (h, 4 * h), h), requires_grad=True)
        bias = np.zeros(4 * h, dtype=np.float32)
        bias[h:2 * h] = 1.0
        self.bias = Tensor(bias, requires_grad=True)

    def __call__(self, x: Tensor, h0: np.ndarray | None = None,
                 c0: np.ndarray | None = None) -> Tensor:
        return lstm_forward(x, self.w_x, self.w_h, self.bias, h0, c0)

    def params(self):
        yield "w_x", self.w_x
        yield "w_h", self.w_h
        yield "bias", self.bias


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_forward(x: Tensor, w_x: Tensor, w_h: Tensor, bias: Tensor,
                 h0: np.ndarray | None = None, c0: np.ndarray | None = None) -> Tensor:
    """Fused LSTM sequence op (left-to-right; causal by construction).

    Recurrence, with (i, f, o) sigmoid and candidate g tanh:
        c_t = f * c_{t-1} + i * g
        h_t = o * tanh(c_t)
    The input projection x @ w_x is hoisted out of the time loop; the
    backward pass replays the loop in reverse and accumulates the weight
    gradients with single large matmuls.
    """
    if x.ndim != 3:
        raise ShapeError(f"lstm expects [B, T, d] input, got {x.shape}")
    B, T, d = x.shape
    h = w_h.shape[0]
    if w_x.shape != (d, 4 * h) or bias.shape != (4 * h,):
        raise ShapeError(
            f"lstm parameter shapes inconsistent: x {x.shape}, w_x {w_x.shape}, "
            f"w_h {w_h.shape}, bias {bias.shape}"
        )
    dtype = x.dtype
    x2d = x.data.reshape(B * T, d)
    # Hoisted input projection; the in-place gate activations below turn
    # this slab into the saved (i, f, o, g) activations for backward.
    gates = np.ascontiguousarray(
        (x2d @ w_x.data + bias.data).reshape(B, T, 4 * h).transpose(1, 0, 2))

    # States padded with the initial (h0, c0) row: H[t] is the state
    # entering step t, H[t + 1] the state leaving it.
    H = np.zeros((T + 1, B, h), dtype=dtype)
    C = np.zeros((T + 1, B, h), dtype=dtype)
    if h0 is not None:
        H[0] = np.asarray(h0, dtype=dtype)
    if c0 is not None:
        C[0] = np.asarray(c0, dtype=dtype)
    TC = np.empty((T, B, h), dtype=dtype)

    zh = np.empty((B, 4 * h), dtype=dtype)
    tmp = np.empty((B, h), dtype=dtype)
    for t in range(T):
        z = gates[t]
        np.matmul(H[t], w_h.data, out=zh)
        z += zh
        zs = z[:, :3 * h]  # sigmoid block via tanh: 0.5 * (1 + tanh(z / 2))
        zs *= 0.5
        np.tanh(zs, out=zs)
        zs += 1.0
        zs *= 0.5
        zg = z[:, 3 * h:]
        np.tanh(zg, out=zg)
        i, f, o, g = z[:, :h], z[:, h:2 * h], z[:, 2 * h:3 * h], zg
        np.multiply(f, C[t], out=C[t + 1])
        np.multiply(i, g, out=tmp)
        C[t + 1] += tmp
        np.tanh(C[t + 1], out=TC[t])
        np.multiply(o, TC[t], out=H[t + 1])

    out = np.ascontiguousarray(H[1:].transpose(1, 0, 2))

    def backward(gout, x=x, w_x=w_x, w_h=w_h, bias=bias):
        gT = gout.transpose(1, 0, 2)
        dZ = np.empty((T, B, 4 * h), dtype=dtype)
        dh = np.zeros((B, h), dtype=dtype)
        dc = np.zeros((B, h), dtype=dtype)
        buf = np.empty((B, h), dtype=dtype)
        w_h_t = np.ascontiguousarray(w_h.data.T)
        for t in range(T - 1, -1, -1):
            z = gates[t]
            i, f, o, g = z[:, :h], z[:, h:2 * h], z[:, 2 * h:3 * h], z[:, 3 * h:]
            tc = TC[t]
            dh += gT[t]
            # cell-path gradient: dc += dh * o * (1 - tc^2)
            np.multiply(tc, tc, out=buf)
            np.subtract(1.0, buf, out=buf)
            buf *= o
            buf *= dh
            dc += buf
            di, df, do, dg = (dZ[t, :, :h], dZ[t, :, h:2 * h],
                              dZ[t, :, 2 * h:3 * h], dZ[t, :, 3 * h:])
            # pre-activation gate grads, written straight into the dZ slab
            np.multiply(dc, g, out=di)
            di *= i
            np.multiply(di, i, out=buf)
            di -= buf
            np.multiply(dc, C[t], out=df)
            df *= f
            np.multiply(df, f, out=buf)
            df -= buf
            np.multiply(dh, tc, out=do)
            do *= o
            np.multiply(do, o, out=buf)
            do -= buf
            np.multiply(g, g, out=buf)
            np.subtract(1.0, buf, out=buf)
            buf *= i
            np.multiply(dc, buf, out=dg)
            np.matmul(dZ[t], w_h_t, out=dh)
            dc *= f
        dZ_tb = dZ.reshape(T * B, 4 * h)
        if w_h.requires_grad:
            w_h.accumulate_grad(H[:T].reshape(T * B, h).T @ dZ_tb, owned=True)
        if bias.requires_grad:
            bias.accumulate_grad(dZ_tb.sum(axis=0), owned=True)
        dZ_bt = np.ascontiguousarray(dZ.transpose(1, 0, 2)).reshape(B * T, 4 * h)
        if w_x.requires_grad:
            w_x.accumulate_grad(x2d.T @ dZ_bt, owned=True)
        if x.requires_grad:
            x.accumulate_grad((dZ_bt @ w_x.data.T).reshape(B, T, d), owned=True)

    return make_op(out, (x, w_x, w_h, bias), backward)


class LSTMStack:
    """One or more LSTM layers applied in sequence (depth per config)."""

    def __init__(self, rng: Rng, dim: int, depth: int = 1):
        self.layers = [LSTM(rng, dim) for _ in range(depth)]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def params(self):
        if len(self.layers) == 1:
            yield from self.layers[0].params()
        else:
            for idx, layer in enumerate(self.layers):
                for name, p in layer.params():
                    yield f"{idx}.{name}", p


# -- rotary positional encoding ---------------------------------------------

_rope_cache: dict = {}


def _rope_tables(n_pos: int, head_dim: int, base: float, dtype):
    key = (n_pos, head_dim, float(base), np.dtype(dtype).str)
    hit = _rope_cache.get(key)
    if hit is not None:
        return hit
    # Angles in float64: position*theta can reach ~1e2 and float32 trig
    # of large arguments would cost precision in the shift-invariance.
    k = np.arange(head_dim // 2, dtype=np.float64)
    theta = float(base) ** (-2.0 * k / head_dim)
    ang = np.arange(n_pos, dtype=np.float64)[:, None] * theta[None, :]
    tables = (np.cos(ang).astype(dtype), np.sin(ang).astype(dtype))
    if len(_rope_cache) > 64:
        _rope_cache.clear()
    _rope_cache[key] = tables
    return tables


def rope_rotate(x: Tensor, positions: np.ndarray | None = None,
                base: float = 10000.0) -> Tensor:
    """Rotate adjacent dimension pairs (2k, 2k+1) of [..., T, head_dim] by
    angle position * base^(-2k/head_dim).

    The rotation is orthogonal, so the backward pass is the same rotation
    with negated angles applied to the output gradient.
    """
    head_dim = x.shape[-1]
    if head_dim % 2 != 0:
        raise ShapeError(f"rope needs an even head dim, got {head_dim}")
    T = x.shape[-2]
    if positions is None:
        cos, sin = _rope_tables(T, head_dim, base, x.dtype)
    else:
        positions = np.asarray(positions)
        n_pos = int(positions.max()) + 1 if positions.size else 1
        cos_all, sin_all = _rope_tables(n_pos, head_dim, base, x.dtype)
        cos, sin = cos_all[positions], sin_all[positions]

    xe = x.data[..., 0::2]
    xo = x.data[..., 1::2]
    out = np.empty_like(x.data)
    out[..., 0::2] = xe * cos - xo * sin
    out[..., 1::2] = xe * sin + xo * cos

    def backward(g, x=x, cos=cos, sin=sin):
        ge = g[..., 0::2]
        go = g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = -ge * sin + go * cos
        x.accumulate_grad(gx, owned=True)

    return make_op(out, (x,), backward)


# -- attention ----------------------------------------------------------------

_mask_cache: dict = {}


def causal_mask(T: int, dtype) -> np.ndarray:
    key = (T, np.dtype(dtype).str)
    hit = _mask_cache.get(key)
    if hit is None:
        hit = np.triu(np.full((T, T), MASK_VALUE, dtype=dtype), k=1)
        if len(_mask_cache) > 64:
            _mask_cache.clear()
        _mask_cache[key] = hit
    return hit


class MultiHeadAttention:
    """Causal multi-head self-attention with rotary Q/K encoding."""

    def __init__(self, rng: Rng, dim: int, n_heads: int, rope_base: float = 10000.0):
        if dim % n_heads != 0:
            raise ShapeError(f"dim {dim} not divisible by {n_heads} heads")
        self.dim = dim
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        if self.head_dim % 2 != 0:
            raise ShapeError(f"head_dim {self.head_dim} must be even for rope")
        self.rope_base = rope_base
        self.q_proj = Linear(rng, dim, dim)
        self.k_proj = Linear(rng, dim, dim)
        self.v_proj = Linear(rng, dim, dim)
        self.out_proj = Linear(rng, dim, dim)

    def _heads(self, x: Tensor, B: int, T: int) -> Tensor:
        return transpose(reshape(x, (B, T, self.n_heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, x: Tensor) -> Tensor:
        B, T, _ = x.shape
        q = rope_rotate(self._heads(self.q_proj(x), B, T), base=self.rope_base)
        k = rope_rotate(self._heads(self.k_proj(x), B, T), base=self.rope_base)
        v = self._heads(self.v_proj(x), B, T)
        scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(self.head_dim))
        scores = add(scores, causal_mask(T, x.dtype))
        weights = softmax(scores, axis=-1)
        ctx = matmul(weights, v)
        ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (B, T, self.dim))
        return self.out_proj(ctx)

    def params(self):
        for name, layer in (("q_proj", self.q_proj), ("k_proj", self.k_proj),
                            ("v_proj", self.v_proj), ("out_proj", self.out_proj)):
            for pname, p in layer.params():
                yield f"{name}.{pname}", p


class MLP:
    def __init__(self, rng: Rng, dim: int, hidden: int):
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))

    def params(self):
        for name, layer in (("fc1", self.fc1), ("fc2", self.fc2)):
            for pname, p in layer.params():
                yield f"{name}.{pname}", p


class TransformerBlock:
    """Post-LayerNorm block: y = LN(x + MHA(x)); z = LN(y + MLP(y)).

    ``active=False`` makes the whole block the identity (the gate used by
    delayed attention training), including both LayerNorms.
    """

    def __init__(self, rng: Rng, dim: int, n_heads: int, mlp_hidden: int,
                 rope_base: float = 10000.0):
        self.mha = MultiHeadAttention(rng, dim, n_heads, rope_base)
        self.mlp = MLP(rng, dim, mlp_hidden)
        self.ln1 = LayerNorm(dim)
        self.ln2 = LayerNorm(dim)
        self.active = True

    def __call__(self, x: Tensor) -> Tensor:
        if not self.active:
            return x
        y = self.ln1(add(x, self.mha(x)))
        return self.ln2(add(y, self.mlp(y)))

    def params(self):
        for name, layer in (("mha", self.mha), ("mlp", self.mlp),
                            ("ln1", self.ln1), ("ln2", self.ln2)):
            for pname, p in layer.params():
                yield f"{name}.{pname}", p


class HybridBlock:
    """Residual block combining an LSTM branch with gated attention/MLP
    branches, each branch normalized before its residual sum:

        a1 = x + LSTM(x)
        a2 = a1 + LN(MHA(a1))      (skipped when gate off)
        a3 = a2 + LN(MLP(a2))      (skipped when gate off)
        y  = LN(a3)

    The output LayerNorm sits outside the gate and always applies.

    The branch LayerNorms start with small gain (0.1): a branch LN pins
    its branch to unit variance regardless of usefulness, and opening the
    attention gate at full gain floods the trained recurrent stream with
    noise that measurably stalls recall-circuit formation.  Starting
    quiet lets the gains grow as the branches earn their keep.
    """

    BRANCH_GAIN_INIT = 0.1

    def __init__(self, rng: Rng, dim: int, n_heads: int, mlp_hidden: int,
                 rope_base: float = 10000.0, lstm_depth: int = 1):
        self.lstm = LSTMStack(rng, dim, lstm_depth)
        self.mha = MultiHeadAttention(rng, dim, n_heads, rope_base)
        self.mlp = MLP(rng, dim, mlp_hidden)
        self.ln_mha = LayerNorm(dim)
        self.ln_mlp = LayerNorm(dim)
        self.ln_mha.gain.data[:] = self.BRANCH_GAIN_INIT
        self.ln_mlp.gain.data[:] = self.BRANCH_GAIN_INIT
        self.ln_out = LayerNorm(dim)
        self.active = True

    def __call__(self, x: Tensor) -> Tensor:
        a = add(x, self.lstm(x))
        if self.active:
            a = add(a, self.ln_mha(self.mha(a)))
            a = add(a, self.ln_mlp(self.mlp(a)))
        return self.ln_out(a)

    def params(self):
        for name, layer in (("lstm", self.lstm), ("mha", self.mha), ("mlp", self.mlp),
                            ("ln_mha", self.ln_mha), ("ln_mlp", self.ln_mlp),
                            ("ln_out", self.ln_out)):
            for pname, p in layer.params():
                yield f"{name}.{pname}", p

    def gated_param_names(self):
        """Names of parameters inside the removable attention branch."""
        for name, layer in (("mha", self.mha), ("mlp", self.mlp),
                            ("ln_mha", self.ln_mha), ("ln_mlp", self.ln_mlp)):
            for pname, _ in layer.params():
                yield f"{name}.{pname}"
