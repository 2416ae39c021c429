"""Minimal dense-tensor reverse-mode differentiation.

Values are numpy float64 arrays arranged as graphs of `Tensor` nodes. Only
the handful of primitives needed by the fidelity and quality models is
provided; each primitive registers a vector-Jacobian product per parent.
Convolution kernels are treated as constants (no gradient flows into them),
which is all the attack needs: it only ever differentiates with respect to
the input image.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "GraphError",
    "as_tensor",
    "leaf",
    "add",
    "subtract",
    "multiply",
    "divide",
    "negate",
    "power",
    "exp",
    "log",
    "sqrt",
    "absolute",
    "relu",
    "reduce_sum",
    "mean",
    "tmax",
    "channel_max",
    "channel_mean",
    "channel_weighted_sum",
    "crop",
    "stack_scalars",
    "concat1d",
    "conv2d",
    "backward",
    "gaussian_kernel",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class GraphError(RuntimeError):
    """Structural problem with a computation graph."""


class Tensor:
    """A node in the computation graph.

    `parents` and `vjps` are parallel tuples: vjps[i] maps the adjoint of
    this node to the adjoint contribution of parents[i].
    """

    __slots__ = ("value", "parents", "vjps", "op")

    # make `ndarray <op> Tensor` dispatch to the reflected Tensor operator
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, value, parents=(), vjps=(), op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.vjps = tuple(vjps)
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negate(self)

    def __pow__(self, p):
        return power(self, p)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, op="const")


def leaf(value, op="leaf") -> Tensor:
    return Tensor(value, op=op)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{op}: operand shapes {a.shape} and {b.shape} do not broadcast"
        ) from None


def _binary(a, b, op, fwd, vjp_a, vjp_b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b)
    _check_broadcast(a.value, b.value, op)
    out = fwd(a.value, b.value)
    return Tensor(
        out,
        parents=(a, b),
        vjps=(
            lambda g, av=a.value, bv=b.value: _unbroadcast(vjp_a(g, av, bv), av.shape),
            lambda g, av=a.value, bv=b.value: _unbroadcast(vjp_b(g, av, bv), bv.shape),
        ),
        op=op,
    )


def add(a, b):
    return _binary(a, b, "add", np.add, lambda g, av, bv: g, lambda g, av, bv: g)


def subtract(a, b):
    return _binary(
        a, b, "subtract", np.subtract, lambda g, av, bv: g, lambda g, av, bv: -g
    )


def multiply(a, b):
    return _binary(
        a, b, "multiply", np.multiply, lambda g, av, bv: g * bv, lambda g, av, bv: g * av
    )


def divide(a, b):
    return _binary(
        a,
        b,
        "divide",
        np.divide,
        lambda g, av, bv: g / bv,
        lambda g, av, bv: -g * av / (bv * bv),
    )


def _unary(a, op, fwd, dfdx) -> Tensor:
    a = as_tensor(a)
    return Tensor(
        fwd(a.value),
        parents=(a,),
        vjps=(lambda g, av=a.value: g * dfdx(av),),
        op=op,
    )


def negate(a):
    return _unary(a, "negate", np.negative, lambda av: -np.ones_like(av))


def power(a, p):
    p = float(p)
    return _unary(a, "power", lambda av: av**p, lambda av: p * av ** (p - 1.0))


def exp(a):
    a = as_tensor(a)
    ev = np.exp(a.value)
    return Tensor(ev, parents=(a,), vjps=(lambda g, e=ev: g * e,), op="exp")


def log(a):
    return _unary(a, "log", np.log, lambda av: 1.0 / av)


def sqrt(a):
    a = as_tensor(a)
    sv = np.sqrt(a.value)
    return Tensor(sv, parents=(a,), vjps=(lambda g, s=sv: g / (2.0 * s),), op="sqrt")


def absolute(a):
    # sign(0) := 0, the subgradient convention used throughout
    return _unary(a, "absolute", np.abs, np.sign)


def relu(a):
    return _unary(
        a, "relu", lambda av: np.maximum(av, 0.0), lambda av: (av > 0.0).astype(float)
    )


def reduce_sum(a):
    a = as_tensor(a)
    return Tensor(
        np.sum(a.value),
        parents=(a,),
        vjps=(lambda g, sh=a.value.shape: np.broadcast_to(g, sh).copy(),),
        op="reduce_sum",
    )


def mean(a):
    a = as_tensor(a)
    n = a.value.size
    return Tensor(
        np.mean(a.value),
        parents=(a,),
        vjps=(lambda g, sh=a.value.shape, n=n: np.broadcast_to(g / n, sh).copy(),),
        op="mean",
    )


def tmax(a):
    """Global maximum; full adjoint routed to the first maximizing index."""
    a = as_tensor(a)
    flat = a.value.ravel()
    idx = int(np.argmax(flat))

    def vjp(g, idx=idx, sh=a.value.shape):
        out = np.zeros(sh)
        out.ravel()[idx] = g
        return out

    return Tensor(flat[idx], parents=(a,), vjps=(vjp,), op="tmax")


def channel_max(a):
    """Per-channel maximum over spatial positions of an H x W x C tensor.

    Adjoint goes to the first maximizing position per channel (scan order).
    """
    a = as_tensor(a)
    if a.value.ndim != 3:
        raise ShapeError(f"channel_max: expected H x W x C, got {a.value.shape}")
    flat = a.value.reshape(-1, a.value.shape[2])
    idx = np.argmax(flat, axis=0)
    vals = flat[idx, np.arange(flat.shape[1])]

    def vjp(g, idx=idx, sh=a.value.shape):
        out = np.zeros((sh[0] * sh[1], sh[2]))
        out[idx, np.arange(sh[2])] = g
        return out.reshape(sh)

    return Tensor(vals, parents=(a,), vjps=(vjp,), op="channel_max")


def channel_mean(a):
    """Per-channel mean over spatial positions; H x W x C -> (C,)."""
    a = as_tensor(a)
    if a.value.ndim != 3:
        raise ShapeError(f"channel_mean: expected H x W x C, got {a.value.shape}")
    n = a.value.shape[0] * a.value.shape[1]

    def vjp(g, sh=a.value.shape, n=n):
        return np.broadcast_to(g / n, sh).copy()

    return Tensor(a.value.mean(axis=(0, 1)), parents=(a,), vjps=(vjp,), op="channel_mean")


def channel_weighted_sum(a, weights):
    """Weighted sum across channels; H x W x C -> H x W x 1."""
    a = as_tensor(a)
    w = np.asarray(weights, dtype=np.float64)
    if a.value.ndim != 3 or a.value.shape[2] != w.size:
        raise ShapeError(
            f"channel_weighted_sum: image {a.value.shape} vs {w.size} weights"
        )
    out = np.tensordot(a.value, w, axes=([2], [0]))[:, :, None]

    def vjp(g, w=w):
        return g * w[None, None, :]

    return Tensor(out, parents=(a,), vjps=(vjp,), op="channel_weighted_sum")


def crop(a, slices):
    """Static slice of a tensor; adjoint scatters back into a zero tensor."""
    a = as_tensor(a)
    slices = tuple(slices)
    out = a.value[slices]

    def vjp(g, sh=a.value.shape, slices=slices):
        full = np.zeros(sh)
        full[slices] = g
        return full

    return Tensor(out, parents=(a,), vjps=(vjp,), op="crop")


def stack_scalars(nodes):
    """Concatenate scalar nodes into a 1-D tensor."""
    nodes = [as_tensor(n) for n in nodes]
    for n in nodes:
        if n.value.size != 1:
            raise ShapeError(f"stack_scalars: non-scalar operand of shape {n.shape}")
    vals = np.array([float(n.value) for n in nodes])
    vjps = tuple(
        (lambda g, i=i: np.asarray(g[i])) for i in range(len(nodes))
    )
    return Tensor(vals, parents=tuple(nodes), vjps=vjps, op="stack_scalars")


def concat1d(parts):
    """Concatenate 1-D tensors."""
    parts = [as_tensor(p) for p in parts]
    for p in parts:
        if p.value.ndim != 1:
            raise ShapeError(f"concat1d: expected 1-D operands, got {p.shape}")
    sizes = [p.value.size for p in parts]
    offs = np.cumsum([0] + sizes)
    vals = np.concatenate([p.value for p in parts])
    vjps = tuple(
        (lambda g, a=offs[i], b=offs[i + 1]: g[a:b]) for i in range(len(parts))
    )
    return Tensor(vals, parents=tuple(parts), vjps=vjps, op="concat1d")


def _pad_amount(k: int) -> int:
    if k % 2 == 0:
        raise ShapeError(f"conv2d: same-padding requires odd kernel size, got {k}")
    return (k - 1) // 2


def conv2d(x, kernel, stride: int = 1, padding: str = "valid") -> Tensor:
    """2-D cross-correlation of an H x W x Cin image with a k x k x Cin x Cout kernel.

    The kernel is a constant: no gradient is propagated into it. 2-D kernels
    are promoted to k x k x 1 x 1.
    """
    x = as_tensor(x)
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim == 2:
        k = k[:, :, None, None]
    elif k.ndim == 3:
        k = k[:, :, :, None]
    if k.ndim != 4:
        raise ShapeError(f"conv2d: kernel must have rank 2..4, got {k.ndim}")
    if x.value.ndim != 3:
        raise ShapeError(f"conv2d: input must be H x W x C, got {x.value.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    kh, kw, kc, co = k.shape
    h, w, c = x.value.shape
    if kc != c:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {kc}")
    if padding == "same":
        ph, pw = _pad_amount(kh), _pad_amount(kw)
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ShapeError(f"conv2d: unknown padding {padding!r}")
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise ShapeError(
            f"conv2d: input {x.value.shape} smaller than kernel {(kh, kw)}"
        )
    padded = np.pad(x.value, ((ph, ph), (pw, pw), (0, 0))) if ph or pw else x.value
    win = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(0, 1))
    win = win[::stride, ::stride]  # Ho x Wo x C x kh x kw
    out = np.einsum("ijckl,klcm->ijm", win, k, optimize=True)
    ho, wo = out.shape[0], out.shape[1]

    def vjp(g, k=k, stride=stride, ph=ph, pw=pw, hp=padded.shape[0], wp=padded.shape[1]):
        gp = np.zeros((hp, wp, c))
        for di in range(kh):
            rs = slice(di, di + stride * (ho - 1) + 1, stride)
            for dj in range(kw):
                cs = slice(dj, dj + stride * (wo - 1) + 1, stride)
                gp[rs, cs, :] += g @ k[di, dj].T
        if ph or pw:
            gp = gp[ph : hp - ph, pw : wp - pw, :]
        return gp

    return Tensor(out, parents=(x,), vjps=(vjp,), op="conv2d")


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized 2-D Gaussian window."""
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, wrt: Tensor) -> np.ndarray:
    """Gradient of the scalar `root` with respect to the leaf `wrt`.

    Raises GraphError if `wrt` is not reachable from `root` (the gradient
    would be identically zero by construction; the caller must know).
    """
    if root.value.size != 1:
        raise GraphError(f"backward: root must be scalar, has shape {root.shape}")
    order = _topo_order(root)
    if not any(node is wrt for node in order):
        raise GraphError("backward: target leaf is not reachable from the root")
    adjoint: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if not parent.parents and parent is not wrt and parent.op == "const":
                continue  # constants sink their adjoints
            contrib = np.asarray(vjp(g), dtype=np.float64)
            if contrib.shape != parent.value.shape:
                contrib = contrib.reshape(parent.value.shape)
            acc = adjoint.get(id(parent))
            if acc is None:
                adjoint[id(parent)] = contrib
            else:
                acc += contrib
        if node is wrt:
            return g if node is root else _take(g, node)
    raise GraphError("backward: leaf adjoint was never produced")  # pragma: no cover


def _take(g: np.ndarray, node: Tensor) -> np.ndarray:
    return np.asarray(g, dtype=np.float64).reshape(node.value.shape)
