"""
Gated convolution (gConv) and its recursive generalisation g^nConv.

g^nConv widens its input from D to 2D channels, splits the result into a
gate M_0 and n convolution inputs N_0..N_{n-1} whose widths double at each
order, and applies

    M_{k+1} = DWConv_k(N_k) * proj_k(M_k) / alpha,    k = 0..n-1

where proj_0 is the identity and proj_k maps D_{k-1} to D_k channels.
M_n has D channels and goes through a closing D -> D affine map.
"""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from gncformer.exceptions import ConfigError, ShapeError
from gncformer.layers import Affine, DepthwiseConv, ParamContainer, ParamFactory
from gncformer.tensor import Tensor, elementwise_mul, mul, parameter, split_lastdim, conv_padding


def dimension_schedule(dim: int, order: int) -> List[int]:
    """
    Split widths of the widened projection, as ``[D_0, D_0, D_1, ..., D_{n-1}]``.

    The first entry is the width of M_0, the rest are the widths of N_0..N_{n-1},
    with ``D_k = D / 2**(n - k - 1)``. The widths always sum to ``2 * dim``.

    :param dim: Model dimension D.
    :type dim: int
    :param order: Interaction order n.
    :type order: int
    :raises ConfigError: If ``2**(order - 1)`` does not divide ``dim``.
    :return: Split widths.
    :rtype: list
    """
    if order < 1 or dim < 1:
        raise ConfigError(f'order ({order}) and model_dim ({dim}) must be positive')
    if dim % 2 ** (order - 1):
        raise ConfigError(
            f'order {order} requires model_dim divisible by {2 ** (order - 1)}; got model_dim {dim}'
        )
    dims = [dim // 2 ** (order - k - 1) for k in range(order)]
    return [dims[0]] + dims


@dataclass
class GnConvParams(ParamContainer):
    """
    Weights of one g^nConv block.

    ``dwconv[k]`` convolves the ``D_k`` channels of N_k; ``proj[k - 1]`` maps
    M_k from ``D_{k-1}`` to ``D_k`` channels for ``k >= 1``.
    """
    linear_in: Affine
    dwconv: List[DepthwiseConv]
    proj: List[Affine]
    linear_out: Affine
    order: int = 1
    model_dim: int = 0
    alpha: float = 1.0
    widths: List[int] = field(default_factory=list)

    @classmethod
    def init(cls, factory: ParamFactory, dim: int, order: int, kernel_size: int,
             alpha: float = 1.0, causal: bool = False, bias: bool = True) -> 'GnConvParams':
        """
        Build a randomly initialised block.

        :param factory: Parameter initialiser.
        :type factory: ParamFactory
        :param dim: Model dimension D.
        :type dim: int
        :param order: Interaction order n.
        :type order: int
        :param kernel_size: Depthwise kernel width K.
        :type kernel_size: int
        :param alpha: Divisor applied at every recursion step, defaults to 1.0.
        :type alpha: float, optional
        :param causal: Left-only padding in every depthwise convolution, defaults to False.
        :type causal: bool, optional
        :param bias: Biases on every affine map and convolution, defaults to True.
        :type bias: bool, optional
        :rtype: GnConvParams
        """
        if alpha <= 0:
            raise ConfigError(f'alpha must be positive, got {alpha}')
        if kernel_size < 1:
            raise ConfigError(f'kernel_size must be positive, got {kernel_size}')
        widths = dimension_schedule(dim, order)
        dims = widths[1:]
        return cls(
            linear_in=Affine.init(factory, dim, 2 * dim, bias),
            dwconv=[DepthwiseConv.init(factory, d, kernel_size, bias, causal) for d in dims],
            proj=[Affine.init(factory, dims[k - 1], dims[k], bias) for k in range(1, order)],
            linear_out=Affine.init(factory, dim, dim, bias),
            order=order,
            model_dim=dim,
            alpha=float(alpha),
            widths=widths,
        )

    @property
    def kernel_size(self) -> int:
        return self.dwconv[0].kernels.shape[1]


def identity_gnconv(dim: int, kernel_size: int = 1, causal: bool = False) -> GnConvParams:
    """
    Order-1 block that returns its input unchanged.

    M_0 is the constant 1 (zero weights, unit bias), N_0 copies the input, the
    kernel is a unit impulse at the tap aligned with the current position, and
    the closing map is the identity.
    """
    w_in = np.concatenate([np.zeros((dim, dim)), np.eye(dim)], axis=1)
    b_in = np.concatenate([np.ones(dim), np.zeros(dim)])
    kernels = np.zeros((dim, kernel_size))
    kernels[:, conv_padding(kernel_size, causal)[0]] = 1.0
    return GnConvParams(
        linear_in=Affine(parameter(w_in), parameter(b_in)),
        dwconv=[DepthwiseConv(parameter(kernels), parameter(np.zeros(dim)), causal)],
        proj=[],
        linear_out=Affine(parameter(np.eye(dim)), parameter(np.zeros(dim))),
        order=1,
        model_dim=dim,
        alpha=1.0,
        widths=[dim, dim],
    )


def _mask_positions(x: Tensor, keep: Optional[np.ndarray]) -> Tensor:
    if keep is None:
        return x
    return mul(x, np.asarray(keep, dtype=np.float64)[..., None])


def gconv_forward(x: Tensor, params: GnConvParams, keep: Optional[np.ndarray] = None) -> Tensor:
    """
    Order-1 gated convolution: ``linear_out(DWConv(N_0) * M_0)``.

    :param x: Input ``[..., T, D]``.
    :type x: Tensor
    :param params: Block with ``order == 1``.
    :type params: GnConvParams
    :param keep: Optional ``[..., T]`` flags; positions with 0 are zeroed before the convolution.
    :type keep: numpy.ndarray
    :rtype: Tensor
    """
    if params.order != 1:
        raise ShapeError(f'gconv_forward needs an order-1 block, got order {params.order}')
    if x.shape[-1] != params.model_dim:
        raise ShapeError(f'gConv input width {x.shape[-1]} != model_dim {params.model_dim}')
    fused = _mask_positions(params.linear_in(x), keep)
    m0, n0 = split_lastdim(fused, params.widths)
    return params.linear_out(elementwise_mul(params.dwconv[0](n0), m0))


def gnconv_forward(v: Tensor, params: GnConvParams, keep: Optional[np.ndarray] = None) -> Tensor:
    """
    Recursive gated convolution over ``[..., T, D]``.

    :param v: Input ``[..., T, D]``.
    :type v: Tensor
    :param params: Block weights.
    :type params: GnConvParams
    :param keep: Optional ``[..., T]`` flags; positions with 0 are zeroed before the
        convolutions, so padding never leaks into real positions.
    :type keep: numpy.ndarray
    :raises ShapeError: Naming the recursion stage whose operands disagree.
    :return: Output ``[..., T, D]``.
    :rtype: Tensor
    """
    if v.shape[-1] != params.model_dim:
        raise ShapeError(f'g^nConv input width {v.shape[-1]} != model_dim {params.model_dim}')
    fused = _mask_positions(params.linear_in(v), keep)
    m, *ns = split_lastdim(fused, params.widths)
    for k, (n_k, conv) in enumerate(zip(ns, params.dwconv)):
        gate = conv(n_k)
        projected = m if k == 0 else params.proj[k - 1](m)
        if gate.shape != projected.shape:
            raise ShapeError(f'g^nConv stage {k}: gate {gate.shape} vs projection {projected.shape}')
        m = elementwise_mul(gate, projected) / params.alpha
    return params.linear_out(m)


def gnconv_param_count(dim: int, order: int, kernel_size: int, with_bias: bool = True) -> int:
    """
    Closed-form parameter count of a g^nConv block.

    :param dim: Model dimension D.
    :type dim: int
    :param order: Interaction order n.
    :type order: int
    :param kernel_size: Depthwise kernel width K.
    :type kernel_size: int
    :param with_bias: Count biases, defaults to True.
    :type with_bias: bool, optional
    :rtype: int
    """
    dims = dimension_schedule(dim, order)[1:]
    b = 1 if with_bias else 0
    linear_in = dim * 2 * dim + b * 2 * dim
    depthwise = sum(dims) * (kernel_size + b)
    projections = sum(dims[k - 1] * dims[k] + b * dims[k] for k in range(1, order))
    linear_out = dim * dim + b * dim
    return linear_in + depthwise + projections + linear_out
