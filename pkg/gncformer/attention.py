"""
Multi-head attention with enhanced self-attention (ESA) and the two outer
fusion baselines.

Fusion modes:

- ``internal``: ESA, attention weights applied to ``g^nConv(V)``.
- ``serial``: ``g^nConv`` applied to the multi-head attention output.
- ``parallel``: ``g^nConv`` of the block input added to the attention output.
- ``none``: plain multi-head attention.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from gncformer.exceptions import ConfigError, ShapeError
from gncformer.gnconv import GnConvParams, gnconv_forward
from gncformer.layers import Affine, ParamContainer, ParamFactory
from gncformer.tensor import (
    Tensor,
    add,
    dropout,
    matmul,
    reshape,
    softmax_lastdim,
    swapaxes,
)

MASK_VALUE = -1e9
FUSION_MODES = ('internal', 'serial', 'parallel', 'none')


@dataclass(frozen=True)
class AttentionMask:
    """
    Boolean keep flags over ``[..., T_query, T_key]``; False suppresses a key.

    :raises ValueError: If some query row keeps no key.
    """
    keep: np.ndarray

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        if keep.ndim < 2:
            raise ShapeError(f'attention mask needs [..., T_query, T_key], got shape {keep.shape}')
        empty = ~keep.any(axis=-1)
        if empty.any():
            row = np.argwhere(empty)[0]
            raise ValueError(f'attention mask row {tuple(int(i) for i in row)} keeps no key')
        object.__setattr__(self, 'keep', keep)

    @classmethod
    def full(cls, t_query: int, t_key: int) -> 'AttentionMask':
        return cls(np.ones((t_query, t_key), dtype=bool))

    @classmethod
    def causal(cls, t: int) -> 'AttentionMask':
        return cls(np.tril(np.ones((t, t), dtype=bool)))

    @classmethod
    def from_padding(cls, key_keep: np.ndarray, t_query: int, causal: bool = False) -> 'AttentionMask':
        """
        Mask from per-key keep flags ``[B, T_key]``.

        With ``causal`` the query at position i sees keys ``j <= i``; its own
        position is always kept, so rows of padded queries stay valid.
        """
        key_keep = np.asarray(key_keep, dtype=bool)
        keep = np.broadcast_to(key_keep[..., None, :], key_keep.shape[:-1] + (t_query, key_keep.shape[-1]))
        if causal:
            tri = np.tril(np.ones((t_query, key_keep.shape[-1]), dtype=bool))
            keep = (keep | np.eye(t_query, key_keep.shape[-1], dtype=bool)) & tri
        return cls(keep.copy())

    def bias(self) -> np.ndarray:
        """Additive score bias: 0 where kept, ``MASK_VALUE`` where suppressed."""
        return np.where(self.keep, 0.0, MASK_VALUE)

    def per_head(self) -> 'AttentionMask':
        """Insert a head axis before the query axis."""
        return AttentionMask(self.keep[..., None, :, :])


@dataclass
class EsaParams(ParamContainer):
    """Projections of one attention block plus the optional g^nConv."""
    w_q: Affine
    w_k: Affine
    w_v: Affine
    w_o: Affine
    gnconv: Optional[GnConvParams] = None
    heads: int = 1
    fusion_mode: str = 'none'

    @classmethod
    def init(cls, factory: ParamFactory, dim: int, heads: int, fusion_mode: str = 'none',
             order: int = 1, kernel_size: int = 7, alpha: float = 1.0,
             causal: bool = False) -> 'EsaParams':
        """
        :param factory: Parameter initialiser.
        :type factory: ParamFactory
        :param dim: Model dimension D.
        :type dim: int
        :param heads: Head count h, dividing D.
        :type heads: int
        :param fusion_mode: One of ``internal``, ``serial``, ``parallel``, ``none``.
        :type fusion_mode: str
        :param causal: Causal depthwise convolutions (decoder self-attention).
        :type causal: bool
        :rtype: EsaParams
        """
        if fusion_mode not in FUSION_MODES:
            raise ConfigError(f'fusion_mode must be one of {FUSION_MODES}, got {fusion_mode!r}')
        if dim % heads:
            raise ConfigError(f'heads {heads} must divide model_dim {dim}')
        w_q = Affine.init(factory, dim, dim)
        w_k = Affine.init(factory, dim, dim)
        w_v = Affine.init(factory, dim, dim)
        gnconv = None
        if fusion_mode != 'none':
            gnconv = GnConvParams.init(factory, dim, order, kernel_size, alpha, causal)
        w_o = Affine.init(factory, dim, dim)
        return cls(w_q=w_q, w_k=w_k, w_v=w_v, w_o=w_o, gnconv=gnconv, heads=heads,
                   fusion_mode=fusion_mode)

    @property
    def model_dim(self) -> int:
        return self.w_q.d_in

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


def split_heads(x: Tensor, heads: int) -> Tensor:
    """``[..., T, D]`` -> ``[..., h, T, D/h]``."""
    *lead, T, D = x.shape
    return swapaxes(reshape(x, tuple(lead) + (T, heads, D // heads)), -2, -3)


def merge_heads(x: Tensor) -> Tensor:
    """``[..., h, T, d]`` -> ``[..., T, h*d]``."""
    *lead, h, T, d = x.shape
    return reshape(swapaxes(x, -2, -3), tuple(lead) + (T, h * d))


def attention_matrix(q: Tensor, k: Tensor, mask: Optional[AttentionMask] = None) -> Tensor:
    """
    ``softmax(Q K^T / sqrt(d_k))`` with suppressed keys pushed to ``MASK_VALUE``.

    :param q: Queries ``[..., h, T_q, d]``.
    :type q: Tensor
    :param k: Keys ``[..., h, T_k, d]``.
    :type k: Tensor
    :param mask: Keep flags broadcastable to ``[..., h, T_q, T_k]``, optional.
    :type mask: AttentionMask
    :return: Attention weights ``[..., h, T_q, T_k]``; rows sum to 1.
    :rtype: Tensor
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f'query width {q.shape[-1]} != key width {k.shape[-1]}')
    scores = matmul(q, swapaxes(k, -1, -2)) / np.sqrt(q.shape[-1])
    if mask is not None:
        scores = add(scores, mask.bias())
    return softmax_lastdim(scores)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[AttentionMask] = None,
                         dropout_rate: float = 0.0,
                         rng: Optional[np.random.Generator] = None) -> Tensor:
    """Attention weights times values, ``[..., h, T_q, d]``."""
    weights = dropout(attention_matrix(q, k, mask), dropout_rate, rng)
    return matmul(weights, v)


def _multi_head(params: EsaParams, x_q: Tensor, x_kv: Tensor, mask: Optional[AttentionMask],
                value_transform=None, dropout_rate: float = 0.0,
                rng: Optional[np.random.Generator] = None) -> Tensor:
    h = params.heads
    q = split_heads(params.w_q(x_q), h)
    k = split_heads(params.w_k(x_kv), h)
    v = params.w_v(x_kv)
    if value_transform is not None:
        v = value_transform(v)
    head_mask = mask.per_head() if mask is not None else None
    out = scaled_dot_attention(q, k, split_heads(v, h), head_mask, dropout_rate, rng)
    return params.w_o(merge_heads(out))


def _require_mode(params: EsaParams, mode: str):
    if params.fusion_mode != mode:
        raise ConfigError(f'expected fusion_mode {mode!r}, got {params.fusion_mode!r}')


def plain_attention_forward(x: Tensor, params: EsaParams, mask: Optional[AttentionMask] = None,
                            dropout_rate: float = 0.0, rng=None) -> Tensor:
    """Multi-head self-attention with the convolution bypassed."""
    return _multi_head(params, x, x, mask, None, dropout_rate, rng)


def esa_forward(x: Tensor, params: EsaParams, mask: Optional[AttentionMask] = None,
                keep: Optional[np.ndarray] = None, dropout_rate: float = 0.0, rng=None) -> Tensor:
    """
    Enhanced self-attention: attention weights applied to ``g^nConv(V)``.

    The convolution runs over the full-width V before the head split.

    :param x: Input ``[..., T, D]``.
    :type x: Tensor
    :param params: Block with ``fusion_mode == 'internal'``.
    :type params: EsaParams
    :param mask: Attention keep flags ``[..., T, T]``.
    :type mask: AttentionMask
    :param keep: Per-position flags ``[..., T]``; padded positions are zeroed before convolving.
    :type keep: numpy.ndarray
    :rtype: Tensor
    """
    _require_mode(params, 'internal')
    return _multi_head(params, x, x, mask, lambda v: gnconv_forward(v, params.gnconv, keep),
                       dropout_rate, rng)


def serial_fusion_forward(x: Tensor, params: EsaParams, mask: Optional[AttentionMask] = None,
                          keep: Optional[np.ndarray] = None, dropout_rate: float = 0.0,
                          rng=None) -> Tensor:
    """``g^nConv(MHA(x))``: the convolution follows the attention output projection."""
    _require_mode(params, 'serial')
    return gnconv_forward(plain_attention_forward(x, params, mask, dropout_rate, rng),
                          params.gnconv, keep)


def parallel_fusion_forward(x: Tensor, params: EsaParams, mask: Optional[AttentionMask] = None,
                            keep: Optional[np.ndarray] = None, dropout_rate: float = 0.0,
                            rng=None) -> Tensor:
    """``MHA(x) + g^nConv(x)``: both branches read the block input."""
    _require_mode(params, 'parallel')
    return add(plain_attention_forward(x, params, mask, dropout_rate, rng),
               gnconv_forward(x, params.gnconv, keep))


def self_attention_forward(x: Tensor, params: EsaParams, mask: Optional[AttentionMask] = None,
                           keep: Optional[np.ndarray] = None, dropout_rate: float = 0.0,
                           rng=None) -> Tensor:
    """Dispatch on ``params.fusion_mode``."""
    mode = params.fusion_mode
    if mode == 'none':
        return plain_attention_forward(x, params, mask, dropout_rate, rng)
    forward = {
        'internal': esa_forward,
        'serial': serial_fusion_forward,
        'parallel': parallel_fusion_forward,
    }[mode]
    return forward(x, params, mask, keep, dropout_rate, rng)


def cross_attention_forward(x: Tensor, memory: Tensor, params: EsaParams,
                            mask: Optional[AttentionMask] = None, dropout_rate: float = 0.0,
                            rng=None) -> Tensor:
    """Plain multi-head attention of ``x`` queries over ``memory`` keys and values."""
    _require_mode(params, 'none')
    return _multi_head(params, x, memory, mask, None, dropout_rate, rng)
