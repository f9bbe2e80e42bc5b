"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays (float32 by default; float64 is supported so test
oracles can re-run the same graph in higher precision).  Operations record
a dynamic tape: each produced tensor keeps its parent tensors and a
closure that turns the output gradient into parent-gradient
contributions.  ``backward()`` on a scalar walks the tape in reverse
topological order, accumulates gradients, and then frees the tape.

Gradient recording is skipped entirely when no input requires a gradient
or when inside :func:`no_grad`, so evaluation costs no tape memory.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (used for evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple = ()
        self._backward = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- gradient machinery --------------------------------------------
    def accumulate_grad(self, g: np.ndarray, owned: bool = False) -> None:
        """Add a gradient contribution.

        The stored buffer is never mutated in place: the first
        contribution is kept by reference and later ones allocate a
        fresh sum.  Backward closures may therefore hand over buffers
        that alias other nodes' gradients, as long as nobody mutates a
        gradient they have already passed along (``owned`` documents
        that the caller allocated ``g`` for this tensor alone).
        """
        if self.grad is None:
            self.grad = g if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded tape."""
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar, got shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            # Free the tape; leaf gradients stay in place.
            node._parents = ()
            node._backward = None

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def make_op(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    """Wrap an op result, recording the tape edge when gradients are live.

    ``backward_fn(g)`` receives the output gradient and must call
    ``accumulate_grad`` on each parent that requires one.  Layer modules
    use this hook for fused ops (LSTM, rotary embedding, ...).
    """
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = track
    out.grad = None
    out._parents = parents if track else ()
    out._backward = backward_fn if track else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic ---------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, Tensor):
        out = a.data + b.data

        def backward(g, a=a, b=b):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g, b.data.shape))

        return make_op(out, (a, b), backward)
    const = b  # plain scalar/ndarray: no gradient flows into it

    def backward(g, a=a):
        a.accumulate_grad(_unbroadcast(g, a.data.shape))

    return make_op(a.data + const, (a,), backward)


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        return add(a, mul(b, -1.0))
    return add(a, -b)


def mul(a: Tensor, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, Tensor):
        out = a.data * b.data

        def backward(g, a=a, b=b):
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape), owned=True)
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape), owned=True)

        return make_op(out, (a, b), backward)
    const = b

    def backward(g, a=a):
        a.accumulate_grad(_unbroadcast(g * const, a.data.shape), owned=True)

    return make_op(a.data * const, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading dims.

    Backward: dA = dC @ B^T and dB = A^T @ dC, summed over broadcast
    batch dimensions.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g, a=a, b=b):
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2)
            a.accumulate_grad(_unbroadcast(ga, a.data.shape), owned=True)
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            b.accumulate_grad(_unbroadcast(gb, b.data.shape), owned=True)

    return make_op(out, (a, b), backward)


# -- shape manipulation ---------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    out = np.reshape(a.data, shape)

    def backward(g, a=a):
        a.accumulate_grad(g.reshape(a.data.shape))

    return make_op(out, (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)

    def backward(g, a=a, inv=tuple(inv)):
        a.accumulate_grad(g.transpose(inv))

    return make_op(a.data.transpose(axes), (a,), backward)


def index_select(a: Tensor, axis: int, indices) -> Tensor:
    """Gather along one axis; backward scatter-adds into the source."""
    a = as_tensor(a)
    idx = np.asarray(indices)
    out = np.take(a.data, idx, axis=axis)

    def backward(g, a=a, idx=idx, axis=axis):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (slice(None),) * axis + (idx,), g)
        a.accumulate_grad(ga, owned=True)

    return make_op(out, (a,), backward)


def concat(tensors: list, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g, tensors=tensors, splits=splits, axis=axis):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t.accumulate_grad(piece)

    return make_op(out, tuple(tensors), backward)


# -- reductions -----------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g, a=a, axis=axis, keepdims=keepdims):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy(), owned=True)

    return make_op(out, (a,), backward)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- elementwise nonlinearities -------------------------------------------

def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g, a=a, out=out):
        a.accumulate_grad(g * (1.0 - out * out), owned=True)

    return make_op(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid_raw(a.data)

    def backward(g, a=a, out=out):
        a.accumulate_grad(g * out * (1.0 - out), owned=True)

    return make_op(out, (a,), backward)


def _sigmoid_raw(x: np.ndarray) -> np.ndarray:
    # Evaluated via tanh: numerically stable for large |x| and faster
    # than exp on this numpy build.
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """Smooth GELU, tanh form: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    u = x * (_GELU_C + (_GELU_C * _GELU_A) * x2)
    t = np.tanh(u, out=u)
    half = 0.5 * t
    half += 0.5
    out = x * half

    def backward(g, a=a, x=x, x2=x2, t=t, half=half):
        # d(out)/dx = half + 0.5 * x * (1 - t^2) * d(u)/dx, with
        # d(u)/dx = sqrt(2/pi) * (1 + 3*0.044715*x^2).
        du = (1.5 * _GELU_C * _GELU_A) * x2
        du += 0.5 * _GELU_C
        du *= 1.0 - t * t
        du *= x
        du += half
        du *= g
        a.accumulate_grad(du, owned=True)

    return make_op(out, (a,), backward)


# -- fused network ops ------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along ``axis``; outputs sum to one there."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g, a=a, out=out, axis=axis):
        dot = (g * out).sum(axis=axis, keepdims=True)
        a.accumulate_grad(out * (g - dot), owned=True)

    return make_op(out, (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm affine params must have shape ({d},), got gain {gain.shape}, bias {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g, x=x, gain=gain, bias=bias, xhat=xhat, inv=inv):
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            gain.accumulate_grad((g * xhat).sum(axis=lead), owned=True)
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=lead), owned=True)
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv * (gx - m1 - xhat * m2), owned=True)

    return make_op(out, (x, gain, bias), backward)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target].

    ``logits`` is [B, V]; ``targets`` holds B class indices.  The
    gradient is (softmax - one_hot) / B.
    """
    logits = as_tensor(logits)
    t = np.asarray(targets)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [B, V] logits, got {logits.shape}")
    b, v = logits.shape
    if t.shape != (b,):
        raise ShapeError(f"targets must have shape ({b},), got {t.shape}")
    if t.min() < 0 or t.max() >= v:
        raise IndexError(f"target index out of range for vocab {v}: {int(t.min())}..{int(t.max())}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    nll = np.log(z[:, 0]) - shifted[np.arange(b), t]
    out = np.asarray(nll.mean(), dtype=logits.dtype)

    def backward(g, logits=logits, probs=probs, t=t, b=b):
        gl = probs.copy()
        gl[np.arange(b), t] -= 1.0
        gl *= g / b
        logits.accumulate_grad(gl, owned=True)

    return make_op(out, (logits,), backward)
