"""
GNCformer encoder-decoder over token sequences.

Pre-layer-norm residual blocks throughout. Encoder self-attention and decoder
self-attention use the configured fusion mode when ESA is enabled on that side
(decoder-side convolutions are causal); cross-attention is always plain.
"""
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from gncformer.attention import (
    AttentionMask,
    EsaParams,
    cross_attention_forward,
    self_attention_forward,
)
from gncformer.config import ModelConfig
from gncformer.layers import Affine, LayerNorm, ParamContainer, ParamFactory, ShapeFactory
from gncformer.tensor import Tensor, add, dropout, embedding, relu, reshape, scale
from gncformer.utils import package_config

_TOKENS = package_config().tokens
PAD, BOS, EOS = int(_TOKENS.pad), int(_TOKENS.bos), int(_TOKENS.eos)


@dataclass
class FeedForward(ParamContainer):
    inner: Affine
    outer: Affine

    @classmethod
    def init(cls, factory: ParamFactory, dim: int, hidden: int) -> 'FeedForward':
        return cls(inner=Affine.init(factory, dim, hidden), outer=Affine.init(factory, hidden, dim))

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(relu(self.inner(x)))


@dataclass
class EncoderLayer(ParamContainer):
    attn_norm: LayerNorm
    self_attn: EsaParams
    ffn_norm: LayerNorm
    ffn: FeedForward


@dataclass
class DecoderLayer(ParamContainer):
    self_attn_norm: LayerNorm
    self_attn: EsaParams
    cross_attn_norm: LayerNorm
    cross_attn: EsaParams
    ffn_norm: LayerNorm
    ffn: FeedForward


@dataclass
class GncformerModel(ParamContainer):
    """Parameters of a full encoder-decoder plus the config that shaped them."""
    config: ModelConfig
    src_embed: Tensor
    tgt_embed: Tensor
    encoder: List[EncoderLayer]
    encoder_norm: LayerNorm
    decoder: List[DecoderLayer]
    decoder_norm: LayerNorm
    output: Affine

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self.named_parameters()}


def _attention_block(factory: ParamFactory, config: ModelConfig, esa: bool,
                     causal: bool = False) -> EsaParams:
    return EsaParams.init(
        factory, config.model_dim, config.heads,
        fusion_mode=config.fusion_mode if esa else 'none',
        order=config.order, kernel_size=config.kernel_size, alpha=config.alpha, causal=causal,
    )


def build_model(config: ModelConfig, seed: int = 0,
                factory: Optional[ParamFactory] = None) -> GncformerModel:
    """
    Initialise a model deterministically from ``seed``.

    Affine weights are uniform in ``+-1/sqrt(fan_in)``, depthwise kernels uniform in
    ``+-1/sqrt(K)``, biases zero, embeddings normal with std ``D**-0.5``.

    :param config: Model configuration; validated first.
    :type config: ModelConfig
    :param seed: Initialisation seed, defaults to 0.
    :type seed: int, optional
    :param factory: Parameter factory overriding ``seed``, optional.
    :type factory: ParamFactory
    :raises ConfigError: Naming the invalid field.
    :rtype: GncformerModel
    """
    config.validate()
    factory = factory or ParamFactory(seed)
    D = config.model_dim
    src_embed = factory.normal((config.source_vocab, D), D ** -0.5)
    tgt_embed = factory.normal((config.target_vocab, D), D ** -0.5)
    encoder = [
        EncoderLayer(
            attn_norm=LayerNorm.init(factory, D),
            self_attn=_attention_block(factory, config, config.esa_in_encoder),
            ffn_norm=LayerNorm.init(factory, D),
            ffn=FeedForward.init(factory, D, config.ffn_width),
        )
        for _ in range(config.encoder_layers)
    ]
    encoder_norm = LayerNorm.init(factory, D)
    decoder = [
        DecoderLayer(
            self_attn_norm=LayerNorm.init(factory, D),
            self_attn=_attention_block(factory, config, config.esa_in_decoder, causal=True),
            cross_attn_norm=LayerNorm.init(factory, D),
            cross_attn=EsaParams.init(factory, D, config.heads, fusion_mode='none'),
            ffn_norm=LayerNorm.init(factory, D),
            ffn=FeedForward.init(factory, D, config.ffn_width),
        )
        for _ in range(config.decoder_layers)
    ]
    decoder_norm = LayerNorm.init(factory, D)
    output = Affine.init(factory, D, config.target_vocab)
    return GncformerModel(config, src_embed, tgt_embed, encoder, encoder_norm,
                          decoder, decoder_norm, output)


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Name -> shape of every parameter a model built from ``config`` holds, without allocating it."""
    model = build_model(config, factory=ShapeFactory())
    return {name: t.shape for name, t in model.named_parameters()}


def plain_config(config: ModelConfig) -> ModelConfig:
    """Same config with every attention block plain."""
    return replace(config, fusion_mode='none')


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal encodings ``[length, dim]``: sines on even channels, cosines on odd."""
    positions = np.arange(length)[:, None]
    rates = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2) / dim))
    angles = positions * rates
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : dim // 2])
    return pe


def _check_tokens(tokens: np.ndarray, vocab: int, max_len: int, name: str):
    if tokens.shape[-1] > max_len:
        raise ValueError(f'{name} length {tokens.shape[-1]} exceeds max_len {max_len}')
    if tokens.shape[-1] < 1:
        raise ValueError(f'{name} sequence is empty')
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab):
        bad = tokens[(tokens < 0) | (tokens >= vocab)][0]
        raise ValueError(f'{name} token {int(bad)} out of range [0, {vocab})')


def _embed(weight: Tensor, tokens: np.ndarray, config: ModelConfig, rng) -> Tensor:
    D = config.model_dim
    x = scale(embedding(weight, tokens), float(np.sqrt(D)))
    x = add(x, positional_encoding(tokens.shape[-1], D))
    return dropout(x, config.dropout, rng)


def _residual(x: Tensor, sublayer_out: Tensor, config: ModelConfig, rng) -> Tensor:
    return add(x, dropout(sublayer_out, config.dropout, rng))


def encode(model: GncformerModel, source: np.ndarray, rng: Optional[np.random.Generator] = None):
    """
    Encoder stack over a padded source batch ``[B, T_src]``.

    :return: Memory ``[B, T_src, D]`` and the source keep flags ``[B, T_src]``.
    :rtype: tuple
    """
    config = model.config
    source = np.asarray(source, dtype=np.int64)
    _check_tokens(source, config.source_vocab, config.max_len, 'source')
    keep = source != PAD
    mask = AttentionMask.from_padding(keep, source.shape[-1])
    x = _embed(model.src_embed, source, config, rng)
    for layer in model.encoder:
        h = self_attention_forward(layer.attn_norm(x), layer.self_attn, mask, keep,
                                   config.attention_dropout, rng)
        x = _residual(x, h, config, rng)
        x = _residual(x, layer.ffn(layer.ffn_norm(x)), config, rng)
    return model.encoder_norm(x), keep


def decode(model: GncformerModel, memory: Tensor, source_keep: np.ndarray, target: np.ndarray,
           rng: Optional[np.random.Generator] = None) -> Tensor:
    """Decoder stack and output projection; returns logits ``[B, T_tgt, target_vocab]``."""
    config = model.config
    target = np.asarray(target, dtype=np.int64)
    _check_tokens(target, config.target_vocab, config.max_len, 'target')
    T = target.shape[-1]
    keep = target != PAD
    self_mask = AttentionMask.from_padding(keep, T, causal=True)
    cross_mask = AttentionMask.from_padding(source_keep, T)
    y = _embed(model.tgt_embed, target, config, rng)
    for layer in model.decoder:
        h = self_attention_forward(layer.self_attn_norm(y), layer.self_attn, self_mask, keep,
                                   config.attention_dropout, rng)
        y = _residual(y, h, config, rng)
        h = cross_attention_forward(layer.cross_attn_norm(y), memory, layer.cross_attn,
                                    cross_mask, config.attention_dropout, rng)
        y = _residual(y, h, config, rng)
        y = _residual(y, layer.ffn(layer.ffn_norm(y)), config, rng)
    return model.output(model.decoder_norm(y))


def forward(model: GncformerModel, source: Sequence, target: Sequence,
            rng: Optional[np.random.Generator] = None) -> Tensor:
    """
    Logits with the full target prefix fed to the decoder.

    ``target`` is the decoder input (conventionally ``BOS`` followed by the
    reference shifted right). One-dimensional inputs give ``[T_tgt, V]``; padded
    batches ``[B, T]`` give ``[B, T_tgt, V]``.

    :param model: Model.
    :type model: GncformerModel
    :param source: Source tokens, ``[T_src]`` or ``[B, T_src]``.
    :type source: array-like
    :param target: Decoder input tokens, ``[T_tgt]`` or ``[B, T_tgt]``.
    :type target: array-like
    :param rng: Dropout generator; ``None`` runs without dropout.
    :type rng: numpy.random.Generator, optional
    :raises ValueError: On an out-of-range token or a sequence longer than ``max_len``.
    :rtype: Tensor
    """
    source = np.asarray(source, dtype=np.int64)
    target = np.asarray(target, dtype=np.int64)
    single = source.ndim == 1
    if single != (target.ndim == 1):
        raise ValueError('source and target must both be single sequences or both batches')
    if single:
        source, target = source[None], target[None]
    memory, source_keep = encode(model, source, rng)
    logits = decode(model, memory, source_keep, target, rng)
    if single:
        logits = reshape(logits, logits.shape[1:])
    return logits


def greedy_decode_batch(model: GncformerModel, sources: Sequence[Sequence[int]],
                        max_steps: int, bos: int = BOS, eos: int = EOS) -> List[List[int]]:
    """
    Argmax decoding of several sources at once.

    Each output stops at its first ``eos`` (excluded) or after ``max_steps`` tokens;
    decoding never runs past ``max_len`` decoder positions.
    """
    if max_steps < 1:
        raise ValueError(f'max_steps must be >= 1, got {max_steps}')
    if not len(sources):
        return []
    width = max(len(s) for s in sources)
    source = np.full((len(sources), width), PAD, dtype=np.int64)
    for i, s in enumerate(sources):
        source[i, :len(s)] = s
    memory, source_keep = encode(model, source)
    steps = min(max_steps, model.config.max_len - 1)

    prefix = np.full((len(sources), 1), bos, dtype=np.int64)
    outputs: List[List[int]] = [[] for _ in sources]
    done = np.zeros(len(sources), dtype=bool)
    for _ in range(steps):
        logits = decode(model, memory, source_keep, prefix).data[:, -1, :]
        nxt = logits.argmax(axis=-1)
        for i, token in enumerate(nxt):
            if done[i]:
                continue
            if token == eos:
                done[i] = True
            else:
                outputs[i].append(int(token))
        if done.all():
            break
        nxt = np.where(done, PAD, nxt)
        prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
    return outputs


def greedy_decode(model: GncformerModel, source: Sequence[int], max_steps: int,
                  bos: int = BOS, eos: int = EOS) -> List[int]:
    """Argmax decoding from ``bos`` until ``eos`` or ``max_steps`` tokens."""
    return greedy_decode_batch(model, [list(source)], max_steps, bos, eos)[0]
