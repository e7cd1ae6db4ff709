"""Minimal dense reverse-mode differentiation on top of numpy.

Every primitive returns a new :class:`Tensor` that remembers its parents and a
closure mapping the upstream gradient to one gradient per parent.  Constants
(``requires_grad=False`` and no differentiable ancestry) are never recorded,
so frozen weights cost nothing on the backward pass.

Broadcasting is limited to leading-batch expansion: an operand whose shape
equals the trailing dimensions of the other is expanded over the leading ones.
Anything else has to be reshaped explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "as_tensor",
    "build_tape",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "gather",
    "getitem",
    "embed",
    "sum",
    "mean",
    "softmax",
    "log_softmax",
    "cross_entropy",
    "masked_fill",
    "rotary",
    "layer_norm",
    "gelu",
    "zero_grad",
    "grad_check",
    "GradReport",
]


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.backward_fn is None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum(self, axis)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs an explicit grad for shape {self.shape}")
            grad = np.ones_like(self.data)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(build_tape(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def build_tape(root: Tensor) -> list[Tensor]:
    """Recorded nodes reachable from ``root`` in topological order (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _pair(a, b) -> tuple[Tensor, Tensor]:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.dtype != b.dtype:
        # python scalars and constant arrays follow the differentiable operand
        if not b.requires_grad:
            b = Tensor(b.data.astype(a.dtype))
        elif not a.requires_grad:
            a = Tensor(a.data.astype(b.dtype))
    return a, b


def _check_expand(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    short, long_ = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(short) == len(long_) or (len(short) and long_[len(long_) - len(short):] != short):
        raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _unexpand(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_expand("add", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unexpand(g, sa), _unexpand(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_expand("sub", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unexpand(g, sa), -_unexpand(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_expand("mul", a, b)
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        (a, b),
        lambda g: (_unexpand(g * bd, ad.shape), _unexpand(g * ad, bd.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = a.data.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """``a @ b`` for 2-D operands, or batched with identical leading dims.

    A 2-D right operand is expanded over the leading dims of ``a``.
    """
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    ok = len(sa) >= 2 and len(sb) >= 2 and sa[-1] == sb[-2]
    if ok and len(sb) > 2:
        ok = sa[:-2] == sb[:-2]
    if not ok:
        raise ShapeError(f"matmul: incompatible shapes {sa} and {sb}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, sa[-1]).T @ g.reshape(-1, sb[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _result(ad @ bd, (a, b), backward)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return _result(out, (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    dtype = next((t.dtype for t in ts if t.requires_grad), ts[0].dtype)
    ts = [t if t.dtype == dtype else Tensor(t.data.astype(dtype)) for t in ts]
    ref = list(ts[0].shape)
    ax = axis % len(ref)
    for t in ts[1:]:
        s = list(t.shape)
        if len(s) != len(ref) or s[:ax] + s[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {tuple(ref)} and {tuple(s)} on axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([t.data for t in ts], axis=ax),
        ts,
        lambda g: tuple(np.split(g, cuts, axis=ax)),
    )


def gather(a, index) -> Tensor:
    """Rows of ``a`` selected by an integer array; output shape index.shape + a.shape[1:]."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather: index out of range for shape {a.shape}")
    shape = a.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx.reshape(-1), g.reshape((-1,) + shape[1:]))
        return (out,)

    return _result(a.data[idx], (a,), backward)


def getitem(a, idx) -> Tensor:
    """Basic (slice/int) indexing."""
    a = as_tensor(a)
    shape, dtype = a.shape, a.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        out[idx] = g
        return (out,)

    return _result(a.data[idx], (a,), backward)


def embed(a, shape: Sequence[int], idx) -> Tensor:
    """Place ``a`` at ``idx`` inside a zero array of ``shape`` (inverse of getitem)."""
    a = as_tensor(a)
    out = np.zeros(tuple(shape), dtype=a.dtype)
    try:
        out[idx] = a.data
    except ValueError as exc:
        raise ShapeError(f"embed: cannot place {a.shape} into {tuple(shape)}") from exc
    return _result(out, (a,), lambda g: (g[idx],))


def sum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(np.sum(a.data, axis=axis), (a,), backward)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis), 1.0 / float(count))


def softmax(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    shift = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - shift)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result(p, (a,), backward)


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    shift = np.max(x, axis=-1, keepdims=True)
    lse = np.log(np.exp(x - shift).sum(axis=-1, keepdims=True)) + shift
    out = x - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _result(out, (a,), backward)


def cross_entropy(logits, targets, reduction: str = "sum") -> Tensor:
    """Negative log-likelihood of integer ``targets`` under row-wise ``logits``."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or t.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {t.shape}")
    x = logits.data
    shift = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - shift)
    z = e.sum(axis=-1, keepdims=True)
    logp = x - shift - np.log(z)
    rows = np.arange(len(t))
    nll = -logp[rows, t]
    denom = 1.0 if reduction == "sum" else float(len(t))
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")

    def backward(g):
        d = e / z
        d[rows, t] -= 1.0
        return (d * (g / denom),)

    return _result(np.asarray(nll.sum() / denom, dtype=x.dtype), (logits,), backward)


def masked_fill(a, allowed: np.ndarray, value: float = -np.inf) -> Tensor:
    """Additive mask: entries where ``allowed`` is False become ``value``."""
    a = as_tensor(a)
    allowed = np.asarray(allowed, dtype=bool)
    if allowed.shape != a.shape[a.data.ndim - allowed.ndim:]:
        raise ShapeError(f"masked_fill: mask {allowed.shape} vs tensor {a.shape}")
    out = np.where(allowed, a.data, a.dtype.type(value))
    return _result(out, (a,), lambda g: (np.where(allowed, g, 0.0).astype(g.dtype),))


def rotary(x, pos, freqs: np.ndarray) -> Tensor:
    """Rotate feature pairs of ``x`` (T, H, d) by angles ``pos[t] * freqs[i]``.

    Pairs are (i, i + d/2).  ``pos`` is a (T,) tensor and is differentiable.
    """
    x, pos = _pair(x, pos)
    T, _, d = x.shape
    if d % 2:
        raise ShapeError(f"rotary: feature dim {d} must be even")
    if pos.shape != (T,) or np.shape(freqs) != (d // 2,):
        raise ShapeError(f"rotary: x {x.shape}, pos {pos.shape}, freqs {np.shape(freqs)}")
    freqs = np.asarray(freqs, dtype=x.dtype)
    ang = pos.data[:, None] * freqs[None, :]
    c = np.cos(ang)[:, None, :]
    s = np.sin(ang)[:, None, :]
    h = d // 2
    x1, x2 = x.data[..., :h], x.data[..., h:]
    o1 = x1 * c - x2 * s
    o2 = x1 * s + x2 * c

    def backward(g):
        g1, g2 = g[..., :h], g[..., h:]
        gx = np.concatenate([g1 * c + g2 * s, -g1 * s + g2 * c], axis=-1)
        # d(o1)/d(angle) = -o2, d(o2)/d(angle) = o1
        gang = (-g1 * o2 + g2 * o1).sum(axis=1)
        return gx, gang @ freqs

    return _result(np.concatenate([o1, o2], axis=-1), (x, pos), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    gain = as_tensor(gain, dtype=x.dtype)
    bias = as_tensor(bias, dtype=x.dtype)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def backward(g):
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gd + bias.data, (x, gain, bias), backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x) -> Tensor:
    """tanh approximation; smooth everywhere so finite differences behave."""
    x = as_tensor(x)
    v = x.data
    u = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(u)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * v**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du),)

    return _result(0.5 * v * (1.0 + t), (x,), backward)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


@dataclass
class GradReport:
    name: str
    max_rel_error: float
    max_abs_error: float
    passed: bool


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    tol: float = 1e-6,
    names: Sequence[str] | None = None,
) -> list[GradReport]:
    """Compare backprop gradients of scalar ``f()`` with central differences.

    The relative error of a tensor is ``max|analytic - numeric|`` divided by the
    larger of the two gradients' max-norms, so a tensor whose true gradient is
    exactly zero reports 0 when both routes agree on zero.
    """
    params = list(params)
    if names is None:
        names = [p.name or f"param{i}" for i, p in enumerate(params)]
    zero_grad(params)
    out = f()
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("grad_check: non-finite function value")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    zero_grad(params)

    reports = []
    for name, p, ga in zip(names, params, analytic):
        gn = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = gn.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f().data)
            flat[i] = orig - step
            fm = float(f().data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"grad_check: non-finite value perturbing {name}[{i}]")
            gflat[i] = (fp - fm) / (2 * step)
        if not np.all(np.isfinite(ga)):
            raise FloatingPointError(f"grad_check: non-finite analytic gradient for {name}")
        abs_err = float(np.max(np.abs(ga - gn))) if ga.size else 0.0
        denom = max(float(np.max(np.abs(ga), initial=0.0)), float(np.max(np.abs(gn), initial=0.0)))
        rel = abs_err / denom if denom > 0 else 0.0
        reports.append(GradReport(name, rel, abs_err, rel <= tol))
    return reports
