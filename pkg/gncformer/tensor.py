"""
Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Every operation accepts leading batch dimensions. An operation whose inputs
do not require gradients returns a plain constant tensor and is not recorded.
"""
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import log_softmax

from gncformer.exceptions import GradientError, NumericalError, ShapeError

ArrayLike = Union[np.ndarray, float, int, Sequence]
Backward = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """
    A float64 array with an optional gradient.

    :param data: Values; converted to a float64 ``numpy`` array.
    :type data: array-like
    :param requires_grad: Whether gradients flow into this tensor, defaults to False.
    :type requires_grad: bool, optional
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        _parents: Tuple['Tensor', ...] = (),
        _backward: Optional[Backward] = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents if requires_grad else ()
        self._backward = _backward if requires_grad else None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f'item() needs a single value, got shape {self.shape}')
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def sum(self) -> 'Tensor':
        return tsum(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError('division is only defined by a scalar')
        return div_scalar(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ', requires_grad=True' if self.requires_grad else ''
        return f'Tensor(shape={self.shape}{flag})'


def as_tensor(x: Union[Tensor, ArrayLike]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data: ArrayLike) -> Tensor:
    """Leaf tensor that receives gradients."""
    return Tensor(data, requires_grad=True)


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: Backward) -> Tensor:
    requires_grad = any(p.requires_grad for p in parents)
    if not requires_grad:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes that broadcasting expanded to reach ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------
class GradTape:
    """
    Ordered record of the operations that produced ``root``.

    Nodes are stored so that every tensor appears after all of its inputs;
    replaying the record backwards visits each operation once and adds one
    gradient contribution per use of each input.

    :param root: Tensor the gradients are taken of.
    :type root: Tensor
    """

    def __init__(self, root: Tensor):
        if not root.requires_grad:
            raise GradientError('tensor is not on a gradient tape (no input requires gradients)')
        self.root = root
        self.nodes = self._record(root)

    @staticmethod
    def _record(root: Tensor) -> List[Tensor]:
        order: List[Tensor] = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def replay(self, seed: Optional[np.ndarray] = None) -> Dict[int, np.ndarray]:
        """
        Propagate ``seed`` (ones by default) from the root to every node.

        :return: Gradient per node, keyed by ``id(node)``.
        :rtype: dict
        """
        grads = {id(self.root): np.ones_like(self.root.data) if seed is None else seed}
        for node in reversed(self.nodes):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        return grads


def backward(loss: Tensor):
    """
    Populate ``grad`` on every tensor that ``loss`` depends on.

    Gradients add to whatever ``grad`` already holds; call ``zero_grad`` between steps.

    :param loss: Scalar tensor.
    :type loss: Tensor
    """
    if loss.size != 1:
        raise ShapeError(f'backward needs a scalar loss, got shape {loss.shape}')
    tape = GradTape(loss)
    grads = tape.replay()
    for node in tape.nodes:
        g = grads.get(id(node))
        if g is None:
            g = np.zeros_like(node.data)
        node.grad = g.copy() if node.grad is None else node.grad + g


def compute_gradients(loss: Tensor, tensors: Sequence[Tensor]) -> List[np.ndarray]:
    """
    Gradients of a scalar ``loss`` with respect to ``tensors`` without touching their ``grad``.

    Independent calls share no state, so separate tapes can run on separate threads.
    """
    if loss.size != 1:
        raise ShapeError(f'backward needs a scalar loss, got shape {loss.shape}')
    grads = GradTape(loss).replay()
    return [grads[id(t)] if id(t) in grads else np.zeros_like(t.data) for t in tensors]


def zero_grad(tensors: Sequence[Tensor]):
    for t in tensors:
        t.grad = None


# --------------------------------------------------------------------------
# Elementwise arithmetic
# --------------------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data - b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), -unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    """Broadcasting product (used for masks and gates)."""
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data * b.data, (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    """
    Hadamard product of two tensors of identical shape.

    :raises ShapeError: If the shapes differ.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f'elementwise_mul shape mismatch: {a.shape} vs {b.shape}')
    return mul(a, b)


def scale(x: Tensor, factor: float) -> Tensor:
    return _result(x.data * factor, (x,), lambda g: (g * factor,))


def div_scalar(x: Tensor, divisor: float) -> Tensor:
    return _result(x.data / divisor, (x,), lambda g: (g / divisor,))


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    return _result(np.where(active, x.data, 0.0), (x,), lambda g: (g * active,))


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0 or no generator is given."""
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


def tsum(x: Tensor) -> Tensor:
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor) -> Tensor:
    return div_scalar(tsum(x), float(x.size))


# --------------------------------------------------------------------------
# Shape manipulation
# --------------------------------------------------------------------------
def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def swapaxes(x: Tensor, axis1: int, axis2: int) -> Tensor:
    return _result(
        np.swapaxes(x.data, axis1, axis2), (x,),
        lambda g: (np.swapaxes(g, axis1, axis2),),
    )


def slice_lastdim(x: Tensor, start: int, stop: int) -> Tensor:
    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)
    return _result(x.data[..., start:stop].copy(), (x,), grad_fn)


def split_lastdim(x: Tensor, widths: Sequence[int]) -> List[Tensor]:
    """
    Cut the last dimension into contiguous slices of the given widths.

    :param x: Tensor ``[..., D_total]``.
    :type x: Tensor
    :param widths: Slice widths, summing to ``D_total``.
    :type widths: list
    :return: One tensor per width, in order.
    :rtype: list
    """
    widths = [int(w) for w in widths]
    if any(w < 1 for w in widths) or sum(widths) != x.shape[-1]:
        raise ShapeError(f'split widths {widths} (sum {sum(widths)}) do not cover last extent {x.shape[-1]}')
    bounds = np.cumsum([0] + widths)
    return [slice_lastdim(x, int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]


def concat_lastdim(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    widths = [t.shape[-1] for t in tensors]
    bounds = np.cumsum([0] + widths)

    def grad_fn(g):
        return tuple(g[..., lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))
    return _result(np.concatenate([t.data for t in tensors], axis=-1), tuple(tensors), grad_fn)


def embedding(weight: Tensor, indices: np.ndarray) -> Tensor:
    """Rows of ``weight`` selected by an integer index array."""
    indices = np.asarray(indices, dtype=np.int64)

    def grad_fn(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, indices, g)
        return (full,)
    return _result(weight.data[indices], (weight,), grad_fn)


# --------------------------------------------------------------------------
# Linear algebra
# --------------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Batched matrix product ``[..., m, k] x [..., k, n] -> [..., m, n]``.

    :raises ShapeError: If inner extents differ or batch extents do not broadcast.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f'matmul shape mismatch: {a.shape} x {b.shape}')
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as e:
        raise ShapeError(f'matmul batch extents do not broadcast: {a.shape} x {b.shape}') from e

    def grad_fn(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb
    return _result(a.data @ b.data, (a, b), grad_fn)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """
    Affine map ``x @ w + b`` along the last dimension.

    :param x: Input ``[..., d_in]``.
    :type x: Tensor
    :param w: Weight ``[d_in, d_out]``.
    :type w: Tensor
    :param b: Bias ``[d_out]``, optional.
    :type b: Tensor
    :rtype: Tensor
    """
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f'linear dimension mismatch: input {x.shape}, weight {w.shape}')
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f'linear bias {b.shape} does not match weight {w.shape}')
    d_in, d_out = w.shape
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def grad_fn(g):
        flat_g = g.reshape(-1, d_out)
        gx = g @ w.data.T
        gw = x.data.reshape(-1, d_in).T @ flat_g
        if b is None:
            return gx, gw
        return gx, gw, flat_g.sum(axis=0)
    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, grad_fn)


# --------------------------------------------------------------------------
# Convolution and normalisation
# --------------------------------------------------------------------------
def conv_padding(kernel_size: int, causal: bool = False) -> Tuple[int, int]:
    """Zero padding ``(left, right)`` keeping the sequence length; even widths pad one extra on the right."""
    if causal:
        return kernel_size - 1, 0
    left = (kernel_size - 1) // 2
    return left, kernel_size - 1 - left


def depthwise_conv1d(x: Tensor, kernels: Tensor, bias: Optional[Tensor] = None,
                     causal: bool = False) -> Tensor:
    """
    Per-channel 1-D convolution over the time axis with length-preserving zero padding.

    ``out[t, c] = sum_j xpad[t + j, c] * kernels[c, j] + bias[c]``. No channel mixing.

    :param x: Input ``[..., T, C]``.
    :type x: Tensor
    :param kernels: One kernel row per channel, ``[C, K]``.
    :type kernels: Tensor
    :param bias: Per-channel bias ``[C]``, optional.
    :type bias: Tensor
    :param causal: Pad on the left only so position t sees inputs up to t, defaults to False.
    :type causal: bool, optional
    :raises ShapeError: On channel mismatch, or a same-padded kernel wider than ``2T + 1``.
    :rtype: Tensor
    """
    if x.ndim < 2 or kernels.ndim != 2 or x.shape[-1] != kernels.shape[0]:
        raise ShapeError(f'depthwise_conv1d channel mismatch: input {x.shape}, kernels {kernels.shape}')
    T = x.shape[-2]
    K = kernels.shape[1]
    # causal kernels only ever look back, so any width is legal
    if K < 1 or (not causal and K > 2 * T + 1):
        raise ShapeError(f'kernel width {K} not in [1, 2T+1] for sequence length {T}')
    left, right = conv_padding(K, causal)
    pad = [(0, 0)] * (x.ndim - 2) + [(left, right), (0, 0)]
    xp = np.pad(x.data, pad)
    windows = sliding_window_view(xp, K, axis=-2)
    out = np.einsum('...tck,ck->...tc', windows, kernels.data)
    if bias is not None:
        out = out + bias.data

    def grad_fn(g):
        flat_windows = windows.reshape((-1,) + windows.shape[-3:])
        gk = np.einsum('ntck,ntc->ck', flat_windows, g.reshape((-1,) + g.shape[-2:]))
        gxp = np.zeros_like(xp)
        for j in range(K):
            gxp[..., j:j + T, :] += g * kernels.data[:, j]
        gx = gxp[..., left:left + T, :]
        if bias is None:
            return gx, gk
        return gx, gk, g.reshape(-1, g.shape[-1]).sum(axis=0)
    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return _result(out, parents, grad_fn)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalise each last-dimension slice to zero mean and unit variance, then scale and shift."""
    if gain.shape != (x.shape[-1],) or shift.shape != (x.shape[-1],):
        raise ShapeError(f'layer_norm parameters {gain.shape}/{shift.shape} do not match input {x.shape}')
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def grad_fn(g):
        gxhat = g * gain.data
        gx = inv_std * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat = g.reshape(-1, g.shape[-1])
        return gx, (flat * xhat.reshape(flat.shape)).sum(axis=0), flat.sum(axis=0)
    return _result(xhat * gain.data + shift.data, (x, gain, shift), grad_fn)


# --------------------------------------------------------------------------
# Softmax and loss
# --------------------------------------------------------------------------
def softmax_lastdim(x: Tensor) -> Tensor:
    """Max-subtracted softmax over the last dimension."""
    if not np.all(np.isfinite(x.data)):
        raise NumericalError('softmax input contains non-finite values')
    e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)
    return _result(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def cross_entropy(
    logits: Tensor,
    targets: ArrayLike,
    ignore_index: Optional[int] = None,
    label_smoothing: float = 0.0,
    reduction: str = 'mean',
) -> Tensor:
    """
    Negative log-likelihood of integer targets under ``softmax(logits)``.

    With ``label_smoothing`` = e the target distribution is ``(1 - e)`` on the
    target plus ``e / V`` spread uniformly.

    :param logits: Scores ``[..., V]``.
    :type logits: Tensor
    :param targets: Integer class per position, shape ``logits.shape[:-1]``.
    :type targets: array-like
    :param ignore_index: Target value excluded from the loss, optional.
    :type ignore_index: int
    :param label_smoothing: Smoothing weight in ``[0, 1)``, defaults to 0.
    :type label_smoothing: float, optional
    :param reduction: ``'mean'`` over counted positions or ``'sum'``.
    :type reduction: str, optional
    :return: Scalar loss.
    :rtype: Tensor
    """
    V = logits.shape[-1]
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f'targets {targets.shape} do not match logits {logits.shape}')
    z = logits.data.reshape(-1, V)
    t = targets.reshape(-1)
    keep = np.ones_like(t, dtype=bool) if ignore_index is None else t != ignore_index
    bad = keep & ((t < 0) | (t >= V))
    if bad.any():
        raise ValueError(f'target {int(t[bad][0])} out of range [0, {V})')
    count = int(keep.sum())
    if count == 0:
        raise ValueError('cross_entropy has no targets left after ignore_index')

    rows = np.flatnonzero(keep)
    q = np.zeros_like(z)
    q[rows] = label_smoothing / V
    q[rows, t[rows]] += 1.0 - label_smoothing
    logp = log_softmax(z, axis=-1)
    total = -(q * logp).sum()
    norm = float(count) if reduction == 'mean' else 1.0

    def grad_fn(g):
        p = np.exp(logp)
        grad = (p * keep[:, None] - q) * (g / norm)
        return (grad.reshape(logits.shape),)
    return _result(np.asarray(total / norm), (logits,), grad_fn)
