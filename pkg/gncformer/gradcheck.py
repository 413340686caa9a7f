"""
Central finite-difference verification of the analytic gradients.

Each check builds a scalar loss (a fixed random weighting of an operation's
output, or the training loss for the full model), takes analytic gradients
from the tape and compares them with central differences of step ``1e-5``.
The reported error of a check is the worst over its tensors and their entries of

    |analytic - numeric| / (max(|analytic|, |numeric|) + floor)

where ``floor`` is 1% of the largest gradient magnitude in the tensor (at least
``1e-6``), so small entries are not judged against the largest one.
"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from gncformer.attention import FUSION_MODES, AttentionMask, EsaParams, self_attention_forward
from gncformer.config import ModelConfig
from gncformer.gnconv import GnConvParams, gnconv_forward
from gncformer.layers import ParamFactory
from gncformer.model import PAD, build_model, forward
from gncformer.tensor import (
    Tensor,
    add,
    compute_gradients,
    concat_lastdim,
    cross_entropy,
    depthwise_conv1d,
    div_scalar,
    dropout,
    elementwise_mul,
    embedding,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    parameter,
    relu,
    reshape,
    scale,
    softmax_lastdim,
    split_lastdim,
    sub,
    swapaxes,
    tsum,
)

STEP = 1e-5
PRIMITIVE_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3
_FLOOR = 1e-6
ENTRY_FLOOR = 1e-2
MODULES = ('tensor', 'gnconv', 'esa', 'model')


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)

    def format(self) -> str:
        status = 'ok' if self.passed else 'FAIL'
        return f'{self.name:<28} {self.max_rel_error:.3e}  (tol {self.tolerance:.0e})  {status}'


def numerical_gradient(loss_fn: Callable[[], Tensor], tensor: Tensor, step: float = STEP) -> np.ndarray:
    """
    Central differences of ``loss_fn()`` with respect to every entry of ``tensor``.

    ``tensor.data`` is perturbed in place and restored.
    """
    grad = np.zeros_like(tensor.data)
    for idx in np.ndindex(*tensor.shape):
        original = tensor.data[idx]
        tensor.data[idx] = original + step
        plus = loss_fn().item()
        tensor.data[idx] = original - step
        minus = loss_fn().item()
        tensor.data[idx] = original
        grad[idx] = (plus - minus) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    magnitude = np.maximum(np.abs(analytic), np.abs(numeric))
    floor = max(ENTRY_FLOOR * magnitude.max(), _FLOOR)
    return float((np.abs(analytic - numeric) / (magnitude + floor)).max())


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = STEP) -> float:
    """
    Worst relative error between tape and finite-difference gradients over ``tensors``.

    :param loss_fn: Builds the scalar loss from the current tensor values.
    :type loss_fn: Callable
    :param tensors: Tensors to differentiate with respect to.
    :type tensors: list
    :rtype: float
    """
    analytic = compute_gradients(loss_fn(), tensors)
    return max(relative_error(a, numerical_gradient(loss_fn, t, step)) for a, t in zip(analytic, tensors))


def _weighted_sum(fn: Callable[..., Tensor], tensors: List[Tensor], rng: np.random.Generator):
    weights = rng.normal(size=fn(*tensors).shape)
    return lambda: tsum(mul(fn(*tensors), weights))


def _away_from_zero(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * (np.abs(x) + 0.1)


# --------------------------------------------------------------------------
# Primitive cases: rng -> (function, input arrays)
# --------------------------------------------------------------------------
def _dims(rng, lo=1, hi=4):
    return int(rng.integers(lo, hi + 1))


def _case_add(rng):
    B, T, C = _dims(rng), _dims(rng), _dims(rng)
    return add, [rng.normal(size=(B, T, C)), rng.normal(size=(C,))]


def _case_sub(rng):
    shape = (_dims(rng), _dims(rng))
    return sub, [rng.normal(size=shape), rng.normal(size=shape)]


def _case_mul(rng):
    B, T, C = _dims(rng), _dims(rng), _dims(rng)
    return mul, [rng.normal(size=(B, T, C)), rng.normal(size=(T, 1))]


def _case_elementwise_mul(rng):
    shape = (_dims(rng), _dims(rng), _dims(rng))
    return elementwise_mul, [rng.normal(size=shape), rng.normal(size=shape)]


def _case_scale(rng):
    return (lambda x: scale(x, 1.7)), [rng.normal(size=(_dims(rng), _dims(rng)))]


def _case_div_scalar(rng):
    return (lambda x: div_scalar(x, 2.5)), [rng.normal(size=(_dims(rng), _dims(rng)))]


def _case_relu(rng):
    return relu, [_away_from_zero(rng.normal(size=(_dims(rng), _dims(rng))))]


def _case_dropout(rng):
    seed = int(rng.integers(1 << 30))
    return (lambda x: dropout(x, 0.3, np.random.default_rng(seed))), [rng.normal(size=(_dims(rng), _dims(rng)))]


def _case_sum(rng):
    return tsum, [rng.normal(size=(_dims(rng), _dims(rng)))]


def _case_mean(rng):
    return mean, [rng.normal(size=(_dims(rng), _dims(rng)))]


def _case_reshape(rng):
    B, T, C = _dims(rng), _dims(rng), _dims(rng)
    return (lambda x: reshape(x, (B, T * C))), [rng.normal(size=(B, T, C))]


def _case_swapaxes(rng):
    return (lambda x: swapaxes(x, -1, -3)), [rng.normal(size=(_dims(rng), _dims(rng), _dims(rng)))]


def _case_split_lastdim(rng):
    widths = [_dims(rng, 1, 3) for _ in range(_dims(rng, 1, 3))]
    return ((lambda x: concat_lastdim(split_lastdim(x, widths)[::-1])),
            [rng.normal(size=(_dims(rng), sum(widths)))])


def _case_concat_lastdim(rng):
    T = _dims(rng)
    return ((lambda a, b: concat_lastdim([a, b])),
            [rng.normal(size=(T, _dims(rng))), rng.normal(size=(T, _dims(rng)))])


def _case_embedding(rng):
    V, C = _dims(rng, 2, 5), _dims(rng)
    indices = rng.integers(0, V, size=(_dims(rng), _dims(rng)))
    return (lambda w: embedding(w, indices)), [rng.normal(size=(V, C))]


def _case_matmul(rng):
    B, m, k, n = _dims(rng), _dims(rng), _dims(rng), _dims(rng)
    return matmul, [rng.normal(size=(B, m, k)), rng.normal(size=(k, n))]


def _case_linear(rng):
    B, T, d_in, d_out = _dims(rng), _dims(rng), _dims(rng), _dims(rng)
    return linear, [rng.normal(size=(B, T, d_in)), rng.normal(size=(d_in, d_out)), rng.normal(size=(d_out,))]


def _conv_case(rng, causal):
    B, T, C = _dims(rng, 1, 2), _dims(rng, 1, 5), _dims(rng, 1, 3)
    K = int(rng.integers(1, 2 * T + 2))
    fn = lambda x, k, b: depthwise_conv1d(x, k, b, causal=causal)  # noqa: E731
    return fn, [rng.normal(size=(B, T, C)), rng.normal(size=(C, K)), rng.normal(size=(C,))]


def _case_depthwise_conv1d(rng):
    return _conv_case(rng, causal=False)


def _case_depthwise_conv1d_causal(rng):
    return _conv_case(rng, causal=True)


def _case_layer_norm(rng):
    C = _dims(rng, 2, 5)
    return layer_norm, [rng.normal(size=(_dims(rng), C)), rng.normal(size=(C,)), rng.normal(size=(C,))]


def _case_softmax_lastdim(rng):
    return softmax_lastdim, [rng.normal(size=(_dims(rng), _dims(rng), _dims(rng, 1, 5)))]


def _case_cross_entropy(rng):
    B, T, V = _dims(rng), _dims(rng), _dims(rng, 2, 6)
    targets = rng.integers(0, V, size=(B, T))
    targets[0, 0] = 1
    fn = lambda z: cross_entropy(z, targets, ignore_index=0, label_smoothing=0.1)  # noqa: E731
    return fn, [rng.normal(size=(B, T, V))]


def _case_cross_entropy_sum(rng):
    B, V = _dims(rng), _dims(rng, 2, 6)
    targets = rng.integers(0, V, size=(B,))
    return (lambda z: cross_entropy(z, targets, reduction='sum')), [rng.normal(size=(B, V))]


PRIMITIVE_CASES: Dict[str, Callable] = {
    name[len('_case_'):]: fn for name, fn in sorted(globals().items()) if name.startswith('_case_')
}


def check_primitive(name: str, trials: int = 20, seed: int = 0) -> GradCheckResult:
    """Worst error of one primitive over ``trials`` random shapes."""
    rng = np.random.default_rng([seed, len(name)] + [ord(c) for c in name])
    worst = 0.0
    for _ in range(trials):
        fn, arrays = PRIMITIVE_CASES[name](rng)
        tensors = [parameter(a) for a in arrays]
        worst = max(worst, check_gradients(_weighted_sum(fn, tensors, rng), tensors))
    return GradCheckResult(name, worst, PRIMITIVE_TOLERANCE)


# --------------------------------------------------------------------------
# Blocks
# --------------------------------------------------------------------------
def check_gnconv(order: int, seed: int = 0, dim: int = 8, length: int = 4,
                 kernel_size: int = 3) -> GradCheckResult:
    """g^nConv input and weight gradients on a padded batch of two sequences."""
    rng = np.random.default_rng([seed, order])
    params = GnConvParams.init(ParamFactory(seed), dim, order, kernel_size)
    v = parameter(rng.normal(size=(2, length, dim)))
    keep = np.ones((2, length), dtype=bool)
    keep[1, -1] = False
    tensors = [v] + params.parameters()
    error = check_gradients(_weighted_sum(lambda x: gnconv_forward(x, params, keep), [v], rng), tensors)
    return GradCheckResult(f'gnconv order {order}', error, PRIMITIVE_TOLERANCE)


def check_esa(fusion_mode: str, seed: int = 0, dim: int = 8, heads: int = 2, order: int = 2,
              length: int = 4, kernel_size: int = 3) -> GradCheckResult:
    """Attention block gradients for one fusion mode, with a padding mask."""
    rng = np.random.default_rng([seed, FUSION_MODES.index(fusion_mode)])
    params = EsaParams.init(ParamFactory(seed), dim, heads, fusion_mode, order, kernel_size)
    x = parameter(rng.normal(size=(2, length, dim)))
    keep = np.ones((2, length), dtype=bool)
    keep[1, -1] = False
    mask = AttentionMask.from_padding(keep, length)
    fn = lambda t: self_attention_forward(t, params, mask, keep)  # noqa: E731
    error = check_gradients(_weighted_sum(fn, [x], rng), [x] + params.parameters())
    return GradCheckResult(f'esa {fusion_mode}', error, PRIMITIVE_TOLERANCE)


def tiny_model_config(**overrides) -> ModelConfig:
    """The smallest configuration exercising every block: D=8, h=2, n=2, one layer per side."""
    values = dict(encoder_layers=1, decoder_layers=1, model_dim=8, heads=2, ffn_dim=16, order=2,
                  kernel_size=3, source_vocab=11, target_vocab=11, max_len=8,
                  esa_in_encoder=True, esa_in_decoder=True, dropout=0.0)
    values.update(overrides)
    return ModelConfig(**values).validate()


def check_model(seed: int = 0, config: Optional[ModelConfig] = None, length: int = 4) -> GradCheckResult:
    """Every parameter of a tiny model under the label-smoothed training loss."""
    config = config or tiny_model_config()
    rng = np.random.default_rng(seed)
    model = build_model(config, seed)
    source = rng.integers(3, config.source_vocab, size=(2, length))
    target = rng.integers(3, config.target_vocab, size=(2, length + 1))
    source[1, -1] = PAD
    target[1, -1] = PAD
    decoder_in, decoder_out = target[:, :-1], target[:, 1:]

    def loss_fn():
        logits = forward(model, source, decoder_in)
        return cross_entropy(logits, decoder_out, ignore_index=PAD, label_smoothing=0.1)

    error = check_gradients(loss_fn, model.parameters())
    return GradCheckResult('model', error, MODEL_TOLERANCE)


def run_grad_checks(module: Optional[str] = None, trials: int = 20, seed: int = 0) -> List[GradCheckResult]:
    """
    Run the checks of one module (``tensor``, ``gnconv``, ``esa``, ``model``) or all of them.

    :param module: Module name; all modules when omitted.
    :type module: str, optional
    :param trials: Random shapes per primitive, defaults to 20.
    :type trials: int, optional
    :param seed: Base seed, defaults to 0.
    :type seed: int, optional
    :rtype: list
    """
    if module is not None and module not in MODULES:
        raise ValueError(f'unknown module {module!r}; choose from {MODULES}')
    selected: Tuple[str, ...] = MODULES if module is None else (module,)
    results = []
    if 'tensor' in selected:
        results += [check_primitive(name, trials, seed) for name in PRIMITIVE_CASES]
    if 'gnconv' in selected:
        results += [check_gnconv(order, seed) for order in (1, 2, 3)]
    if 'esa' in selected:
        results += [check_esa(mode, seed) for mode in FUSION_MODES]
    if 'model' in selected:
        results.append(check_model(seed))
    return results
