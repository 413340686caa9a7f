"""
Parameter containers shared by the attention, convolution and model code.

A container is a dataclass whose fields are tensors, other containers or
lists of containers; ``named_parameters`` walks them in field order, which
fixes the parameter order used by checkpoints and optimizers.
"""
from dataclasses import dataclass, fields
from typing import Iterator, Optional, Tuple

import numpy as np

from gncformer.tensor import Tensor, depthwise_conv1d, layer_norm, linear, parameter


class ParamFactory:
    """
    Seeded initialiser for parameter tensors.

    :param seed: Seed of the underlying ``numpy`` generator.
    :type seed: int
    """

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def uniform(self, shape: Tuple[int, ...], bound: float) -> Tensor:
        return parameter(self.rng.uniform(-bound, bound, size=shape))

    def normal(self, shape: Tuple[int, ...], std: float) -> Tensor:
        return parameter(self.rng.normal(0.0, std, size=shape))

    def zeros(self, shape: Tuple[int, ...]) -> Tensor:
        return parameter(np.zeros(shape))

    def ones(self, shape: Tuple[int, ...]) -> Tensor:
        return parameter(np.ones(shape))


class ShapeFactory(ParamFactory):
    """Factory producing read-only zero-stride placeholders: shapes without memory."""

    def __init__(self):
        super().__init__(0)

    def _placeholder(self, shape):
        return Tensor(np.broadcast_to(np.float64(0.0), shape))

    def uniform(self, shape, bound):
        return self._placeholder(shape)

    def normal(self, shape, std):
        return self._placeholder(shape)

    def zeros(self, shape):
        return self._placeholder(shape)

    def ones(self, shape):
        return self._placeholder(shape)


class ParamContainer:
    """Mixin giving dataclasses a recursive ``named_parameters`` walk."""

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Tensor]]:
        for f in fields(self):
            value = getattr(self, f.name)
            name = f'{prefix}{f.name}'
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, ParamContainer):
                yield from value.named_parameters(f'{name}.')
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, ParamContainer):
                        yield from item.named_parameters(f'{name}.{i}.')

    def parameters(self):
        return [t for _, t in self.named_parameters()]


@dataclass
class Affine(ParamContainer):
    """Affine map ``x @ weight + bias``; weight is ``[d_in, d_out]``."""
    weight: Tensor
    bias: Optional[Tensor] = None

    @classmethod
    def init(cls, factory: ParamFactory, d_in: int, d_out: int, bias: bool = True) -> 'Affine':
        return cls(
            weight=factory.uniform((d_in, d_out), 1.0 / np.sqrt(d_in)),
            bias=factory.zeros((d_out,)) if bias else None,
        )

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


@dataclass
class DepthwiseConv(ParamContainer):
    """Depthwise 1-D convolution over ``[..., T, C]`` with kernels ``[C, K]``."""
    kernels: Tensor
    bias: Optional[Tensor] = None
    causal: bool = False

    @classmethod
    def init(cls, factory: ParamFactory, channels: int, kernel_size: int,
             bias: bool = True, causal: bool = False) -> 'DepthwiseConv':
        return cls(
            kernels=factory.uniform((channels, kernel_size), 1.0 / np.sqrt(kernel_size)),
            bias=factory.zeros((channels,)) if bias else None,
            causal=causal,
        )

    def __call__(self, x: Tensor) -> Tensor:
        return depthwise_conv1d(x, self.kernels, self.bias, causal=self.causal)


@dataclass
class LayerNorm(ParamContainer):
    gain: Tensor
    shift: Tensor
    eps: float = 1e-12

    @classmethod
    def init(cls, factory: ParamFactory, dim: int, eps: float = 1e-12) -> 'LayerNorm':
        return cls(gain=factory.ones((dim,)), shift=factory.zeros((dim,)), eps=eps)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.shift, self.eps)
