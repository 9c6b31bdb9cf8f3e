"""Dense float64 tensors with reverse-mode automatic differentiation.

Every numeric kernel the scene classifier needs lives here: convolutions,
activations, pooling, bilinear resampling, the classification loss, a
parameter registry, a finite-difference gradient checker, and the AGT1
tensor file format used for feature exchange and checkpoints.

Gradients are computed by recording a tape of backward closures during the
forward pass and replaying it in reverse topological order. All math is
64-bit; only the AGT1 file format stores 32-bit floats. There is no
broadcasting beyond bias addition: operands must match shapes exactly.
"""

from __future__ import annotations

import contextlib
import contextvars
import functools
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, NumericError

_GRAD_ENABLED: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "grad_enabled", default=True
)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward-only evaluation)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


class Tensor:
    """N-dimensional float64 array plus an optional gradient.

    A tensor produced by an operation holds references to its parents and a
    backward closure; calling ``backward()`` on a scalar result walks the
    recorded graph in reverse. A single tape is not thread-safe, but
    operations on disjoint tensors may run concurrently.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode pass; requires a single-element tensor."""
        if self.data.size != 1:
            raise ConfigurationError(
                f"backward() needs a scalar, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, ready = stack.pop()
            if ready:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _accumulate(t: Tensor, g) -> None:
    # First assignment copies: g may alias another tensor's grad buffer.
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _record(out: Tensor, parents: tuple, backward) -> Tensor:
    if _GRAD_ENABLED.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise and affine ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ConfigurationError(f"add: shape {a.data.shape} != {b.data.shape}")
    out = Tensor(a.data + b.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, g)

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ConfigurationError(f"mul: shape {a.data.shape} != {b.data.shape}")
    out = Tensor(a.data * b.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g * b.data)
        if b.requires_grad:
            _accumulate(b, g * a.data)

    return _record(out, (a, b), bwd)


def scalar_affine(x: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """scale * x + shift with python-float coefficients."""
    out = Tensor(x.data * scale + shift)

    def bwd(g):
        _accumulate(x, g * scale)

    return _record(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)
    out = Tensor(y)

    def bwd(g):
        # Subgradient at exactly 0 is 0.
        _accumulate(x, g * (y > 0.0))

    return _record(out, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    out = Tensor(y)

    def bwd(g):
        _accumulate(x, g * y * (1.0 - y))

    return _record(out, (x,), bwd)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # Split by sign to avoid exp overflow.
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def bwd(g):
        _accumulate(x, g.reshape(x.data.shape))

    return _record(out, (x,), bwd)


def transpose_last2(x: Tensor) -> Tensor:
    """Swap the last two axes of a rank-3 tensor."""
    if x.data.ndim != 3:
        raise ConfigurationError(f"transpose_last2: need rank 3, got {x.data.ndim}")
    out = Tensor(x.data.transpose(0, 2, 1))

    def bwd(g):
        _accumulate(x, g.transpose(0, 2, 1))

    return _record(out, (x,), bwd)


def concat(tensors, axis: int) -> Tensor:
    parts = list(tensors)
    out = Tensor(np.concatenate([t.data for t in parts], axis=axis))
    sizes = [t.data.shape[axis] for t in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(index)])

    return _record(out, tuple(parts), bwd)


def slice_batch(x: Tensor, i: int) -> Tensor:
    """Select batch item i, keeping a leading axis of size 1."""
    out = Tensor(x.data[i : i + 1])

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[i : i + 1] = g
        _accumulate(x, dx)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ConfigurationError("matmul: both operands must be rank 2")
    if a.data.shape[1] != b.data.shape[0]:
        raise ConfigurationError(
            f"matmul: inner dims {a.data.shape[1]} != {b.data.shape[0]}"
        )
    out = Tensor(a.data @ b.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _record(out, (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map of row vectors: x[N,F] @ w[L,F]^T + b[L]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ConfigurationError(
            f"linear: x {x.data.shape} incompatible with w {w.data.shape}"
        )
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data
    out = Tensor(y)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g @ w.data)
        if w.requires_grad:
            _accumulate(w, g.T @ x.data)
        if b is not None and b.requires_grad:
            _accumulate(b, g.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _record(out, parents, bwd)


def batched_matrix_apply(m: np.ndarray, x: Tensor) -> Tensor:
    """Apply a constant [K,K] matrix to each batch item of x[N,K,C]."""
    m = np.asarray(m, dtype=np.float64)
    if x.data.ndim != 3 or m.shape != (x.data.shape[1], x.data.shape[1]):
        raise ConfigurationError(
            f"batched_matrix_apply: m {m.shape} does not fit x {x.data.shape}"
        )
    out = Tensor(np.matmul(m, x.data))

    def bwd(g):
        _accumulate(x, np.matmul(m.T, g))

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int):
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
    )
    return windows.reshape(n, c * kh * kw, ho * wo)


def _col2im(dcols, shape, kh: int, kw: int, stride: int, ho: int, wo: int):
    n, c, hp, wp = shape
    d6 = dcols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros(shape)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                d6[:, :, i, j]
            )
    return out


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation of x[N,C,H,W] with w[O,C,kh,kw]."""
    xn, wn = x.data, w.data
    if xn.ndim != 4 or wn.ndim != 4:
        raise ConfigurationError(
            f"conv2d: need rank-4 input and weight, got {xn.ndim} and {wn.ndim}"
        )
    n, c, h, wd = xn.shape
    o, cw, kh, kw = wn.shape
    if cw != c:
        raise ConfigurationError(f"conv2d: weight expects {cw} channels, input has {c}")
    if stride < 1:
        raise ConfigurationError(f"conv2d: stride must be >= 1, got {stride}")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise ConfigurationError(
            f"conv2d: kernel {kh}x{kw} exceeds padded input {hp}x{wp}"
        )
    if bias is not None and bias.data.shape != (o,):
        raise ConfigurationError(
            f"conv2d: bias shape {bias.data.shape} != ({o},)"
        )
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if padding:
        # Manual zero padding: np.pad is slow on this hot path.
        xp = np.zeros((n, c, hp, wp))
        xp[:, :, padding : padding + h, padding : padding + wd] = xn
    else:
        xp = xn
    if kh == 1 and kw == 1:
        strided = xp[:, :, ::stride, ::stride]
        cols = strided.reshape(n, c, ho * wo)
    else:
        cols = _im2col(xp, kh, kw, stride, ho, wo)
    w2 = wn.reshape(o, -1)
    y = np.matmul(w2, cols).reshape(n, o, ho, wo)
    if bias is not None:
        y = y + bias.data.reshape(1, o, 1, 1)
    out = Tensor(y)

    def bwd(g):
        g2 = g.reshape(n, o, ho * wo)
        if w.requires_grad:
            dw = np.einsum("nol,nkl->ok", g2, cols)
            _accumulate(w, dw.reshape(wn.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2)
            dxp = _col2im(dcols, xp.shape, kh, kw, stride, ho, wo)
            if padding:
                dxp = dxp[:, :, padding : padding + h, padding : padding + wd]
            _accumulate(x, dxp)

    parents = (x, w) if bias is None else (x, w, bias)
    return _record(out, parents, bwd)


def conv1x1(x: Tensor, w: Tensor) -> Tensor:
    """Per-position linear map over the channel axis: x[N,Cin,K], w[Cout,Cin]."""
    if x.data.ndim != 3 or w.data.ndim != 2:
        raise ConfigurationError(
            f"conv1x1: need x rank 3 and w rank 2, got {x.data.ndim}/{w.data.ndim}"
        )
    if w.data.shape[1] != x.data.shape[1]:
        raise ConfigurationError(
            f"conv1x1: weight expects {w.data.shape[1]} channels, input has {x.data.shape[1]}"
        )
    out = Tensor(np.matmul(w.data, x.data))

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, np.matmul(w.data.T, g))
        if w.requires_grad:
            _accumulate(w, np.einsum("nol,ncl->oc", g, x.data))

    return _record(out, (x, w), bwd)


def channel_bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias b[C] to x[N,C,...] (the one permitted broadcast)."""
    c = x.data.shape[1]
    if b.data.shape != (c,):
        raise ConfigurationError(f"channel_bias_add: bias {b.data.shape} != ({c},)")
    shape = (1, c) + (1,) * (x.data.ndim - 2)
    out = Tensor(x.data + b.data.reshape(shape))
    axes = (0,) + tuple(range(2, x.data.ndim))

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g)
        if b.requires_grad:
            _accumulate(b, g.sum(axis=axes))

    return _record(out, (x, b), bwd)


def channel_affine(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """Per-channel x * scale + shift for x[N,C,...] with scale, shift of shape [C]."""
    c = x.data.shape[1]
    if scale.data.shape != (c,) or shift.data.shape != (c,):
        raise ConfigurationError(
            f"channel_affine: scale/shift must be ({c},), got "
            f"{scale.data.shape}/{shift.data.shape}"
        )
    shp = (1, c) + (1,) * (x.data.ndim - 2)
    out = Tensor(x.data * scale.data.reshape(shp) + shift.data.reshape(shp))
    axes = (0,) + tuple(range(2, x.data.ndim))

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g * scale.data.reshape(shp))
        if scale.requires_grad:
            _accumulate(scale, (g * x.data).sum(axis=axes))
        if shift.requires_grad:
            _accumulate(shift, g.sum(axis=axes))

    return _record(out, (x, scale, shift), bwd)


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """Scale x[N,C,H,W] by per-sample, per-channel gains s[N,C]."""
    if x.data.ndim != 4 or s.data.shape != x.data.shape[:2]:
        raise ConfigurationError(
            f"channel_scale: s {s.data.shape} does not fit x {x.data.shape}"
        )
    sx = s.data[:, :, None, None]
    out = Tensor(x.data * sx)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g * sx)
        if s.requires_grad:
            _accumulate(s, (g * x.data).sum(axis=(2, 3)))

    return _record(out, (x, s), bwd)


# ---------------------------------------------------------------------------
# pooling and resampling
# ---------------------------------------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ConfigurationError(f"global_avg_pool: need rank 4, got {x.data.ndim}")
    n, c, h, w = x.data.shape
    out = Tensor(x.data.mean(axis=(2, 3)))

    def bwd(g):
        _accumulate(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape))

    return _record(out, (x,), bwd)


@functools.lru_cache(maxsize=256)
def _linear_coords(n_in: int, n_out: int):
    # Half-pixel-center mapping, clamped at the borders.
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1.0)
    lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def bilinear_resize_array(a: np.ndarray, h2: int, w2: int) -> np.ndarray:
    """Bilinear resize of the trailing two axes of a float array."""
    h, w = a.shape[-2], a.shape[-1]
    y0, y1, fy = _linear_coords(h, h2)
    x0, x1, fx = _linear_coords(w, w2)
    wy = fy[:, None]
    wx = fx[None, :]
    tl = a[..., y0[:, None], x0[None, :]]
    tr = a[..., y0[:, None], x1[None, :]]
    bl = a[..., y1[:, None], x0[None, :]]
    br = a[..., y1[:, None], x1[None, :]]
    return (
        (1 - wy) * (1 - wx) * tl
        + (1 - wy) * wx * tr
        + wy * (1 - wx) * bl
        + wy * wx * br
    )


def bilinear_upsample(x: Tensor, h2: int, w2: int) -> Tensor:
    """Resize x[N,C,H,W] to [N,C,h2,w2] with bilinear interpolation."""
    if x.data.ndim != 4:
        raise ConfigurationError(f"bilinear_upsample: need rank 4, got {x.data.ndim}")
    if h2 < 1 or w2 < 1:
        raise ConfigurationError(f"bilinear_upsample: bad target {h2}x{w2}")
    h, w = x.data.shape[2], x.data.shape[3]
    y0, y1, fy = _linear_coords(h, h2)
    x0, x1, fx = _linear_coords(w, w2)
    wy = fy[:, None]
    wx = fx[None, :]
    out = Tensor(bilinear_resize_array(x.data, h2, w2))

    def bwd(g):
        dx = np.zeros_like(x.data)
        sl = (slice(None), slice(None))
        np.add.at(dx, sl + (y0[:, None], x0[None, :]), g * (1 - wy) * (1 - wx))
        np.add.at(dx, sl + (y0[:, None], x1[None, :]), g * (1 - wy) * wx)
        np.add.at(dx, sl + (y1[:, None], x0[None, :]), g * wy * (1 - wx))
        np.add.at(dx, sl + (y1[:, None], x1[None, :]), g * wy * wx)
        _accumulate(x, dx)

    return _record(out, (x,), bwd)


def gather_pixels(x: Tensor, flat_indices) -> Tensor:
    """Gather feature vectors at flat spatial positions: x[N,C,H,W] -> [N,K,C]."""
    if x.data.ndim != 4:
        raise ConfigurationError(f"gather_pixels: need rank 4, got {x.data.ndim}")
    idx = np.asarray(flat_indices, dtype=np.int64)
    n, c, h, w = x.data.shape
    if idx.size and (idx.min() < 0 or idx.max() >= h * w):
        raise ConfigurationError(f"gather_pixels: index out of range for {h}x{w}")
    ys, xs = idx // w, idx % w
    out = Tensor(x.data[:, :, ys, xs].transpose(0, 2, 1))

    def bwd(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, (slice(None), slice(None), ys, xs), g.transpose(0, 2, 1))
        _accumulate(x, dx)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# loss and reductions
# ---------------------------------------------------------------------------


def total_sum(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())

    def bwd(g):
        _accumulate(x, np.broadcast_to(g, x.data.shape))

    return _record(out, (x,), bwd)


def softmax_probs(logits) -> np.ndarray:
    """Row softmax of logits[N,L]; rows sum to 1 (evaluation helper)."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under row softmax."""
    if logits.data.ndim != 2:
        raise ConfigurationError(
            f"softmax_cross_entropy: logits must be rank 2, got {logits.data.ndim}"
        )
    n, l = logits.data.shape
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise DataError(f"softmax_cross_entropy: labels shape {y.shape} != ({n},)")
    if y.size and (y.min() < 0 or y.max() >= l):
        raise DataError(
            f"softmax_cross_entropy: label out of range [0, {l}): {y[(y < 0) | (y >= l)][0]}"
        )
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)
    out = Tensor(-logp[rows, y].mean())

    def bwd(g):
        dl = np.exp(logp)
        dl[rows, y] -= 1.0
        _accumulate(logits, dl * (float(g) / n))

    return _record(out, (logits,), bwd)


# ---------------------------------------------------------------------------
# parameter registry and gradient checking
# ---------------------------------------------------------------------------


class ParamRegistry:
    """Ordered name -> trainable Tensor map; iteration is insertion order."""

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def register(self, name: str, value) -> Tensor:
        if name in self._entries:
            raise ConfigurationError(f"duplicate parameter name: {name}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def tensors(self):
        return self._entries.values()

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def num_scalars(self) -> int:
        return sum(t.data.size for t in self._entries.values())


@dataclass
class GradCheckReport:
    """Per-parameter worst relative error between analytic and central-difference gradients."""

    per_param: dict = field(default_factory=dict)
    max_relative_error: float = 0.0

    def worst_param(self) -> str:
        if not self.per_param:
            return ""
        return max(self.per_param, key=self.per_param.get)


def finite_diff_check(
    registry: ParamRegistry, loss_fn, epsilon: float = 1e-5
) -> GradCheckReport:
    """Compare reverse-mode gradients against central differences.

    ``loss_fn`` must be a deterministic closure over the registry's tensors
    returning a scalar Tensor. Every scalar weight is perturbed by +/- epsilon
    in place; relative error is |a-b| / max(|a|, |b|, 1e-8).
    """
    if epsilon <= 0:
        raise ConfigurationError(f"epsilon must be positive, got {epsilon}")
    registry.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data):
        raise NumericError("loss is not finite")
    loss.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in registry.items()
    }
    report = GradCheckReport()
    with no_grad():
        for name, p in registry.items():
            flat = p.data.reshape(-1)
            ga = analytic[name].reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                f_plus = loss_fn().data.item()
                flat[i] = orig - epsilon
                f_minus = loss_fn().data.item()
                flat[i] = orig
                if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                    raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
                fd = (f_plus - f_minus) / (2.0 * epsilon)
                rel = abs(fd - ga[i]) / max(abs(fd), abs(ga[i]), 1e-8)
                if rel > worst:
                    worst = rel
            report.per_param[name] = worst
    report.max_relative_error = max(report.per_param.values(), default=0.0)
    return report


# ---------------------------------------------------------------------------
# AGT1 tensor file format
# ---------------------------------------------------------------------------

AGT1_MAGIC = b"AGT1"


def write_agt1(path, array) -> None:
    """Write an array as AGT1: magic, u8 rank, u32 LE dims, f32 LE payload."""
    a = array.data if isinstance(array, Tensor) else np.asarray(array)
    if a.ndim > 255:
        raise ConfigurationError(f"AGT1 rank limit exceeded: {a.ndim}")
    with open(path, "wb") as f:
        f.write(AGT1_MAGIC)
        f.write(struct.pack("<B", a.ndim))
        if a.ndim:
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
        f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_agt1(path) -> np.ndarray:
    """Read an AGT1 file into a float64 array (payload is stored as f32)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != AGT1_MAGIC:
        raise DataError(f"{path}: not an AGT1 file (bad magic at byte 0)")
    if len(raw) < 5:
        raise DataError(f"{path}: truncated header at byte {len(raw)}")
    rank = raw[4]
    header_end = 5 + 4 * rank
    if len(raw) < header_end:
        raise DataError(f"{path}: truncated dims at byte {len(raw)}")
    dims = struct.unpack(f"<{rank}I", raw[5:header_end]) if rank else ()
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = header_end + 4 * count
    if len(raw) != expected:
        raise DataError(
            f"{path}: payload ends at byte {len(raw)}, expected {expected}"
        )
    flat = np.frombuffer(raw, dtype="<f4", count=count, offset=header_end)
    return flat.astype(np.float64).reshape(dims)
