"""Per-modality transformer encoders over utterance sequences.

Each modality gets its own encoder: an input projection to the shared
hidden size followed by post-norm transformer blocks (multi-head
self-attention, two-layer feed-forward, residuals, layer norm). These are
the parameter blocks the balance optimizer modulates, so they are kept
cleanly separable from the fusion parameters.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, bmm, layer_norm_rows, softmax


@dataclass
class EncoderConfig:
    hidden: int = 32
    layers: int = 2
    heads: int = 4
    ffn: int = 64
    dropout: float = 0.0
    positional: bool = False

    def validate(self):
        if self.hidden % self.heads != 0:
            raise ConfigError(
                f"hidden size {self.hidden} not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if min(self.hidden, self.layers, self.heads, self.ffn) < 1:
            raise ConfigError("encoder dimensions must be positive")
        return self


def uniform_init(rng, shape, fan_in):
    """Seeded uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    scale = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def zeros_param(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape):
    return Tensor(np.ones(shape), requires_grad=True)


class EncoderParams:
    """Weights for one modality's encoder; creation order is fixed."""

    def __init__(self, input_dim, config, rng):
        config.validate()
        h, f = config.hidden, config.ffn
        self.input_dim = input_dim
        self.config = config
        self.w_in = uniform_init(rng, (input_dim, h), input_dim)
        self.b_in = zeros_param((h,))
        self.blocks = []
        for _ in range(config.layers):
            self.blocks.append({
                "wq": uniform_init(rng, (h, h), h),
                "wk": uniform_init(rng, (h, h), h),
                "wv": uniform_init(rng, (h, h), h),
                "wo": uniform_init(rng, (h, h), h),
                "bo": zeros_param((h,)),
                "ln1_g": ones_param((h,)),
                "ln1_b": zeros_param((h,)),
                "w1": uniform_init(rng, (h, f), h),
                "b1": zeros_param((f,)),
                "w2": uniform_init(rng, (f, h), f),
                "b2": zeros_param((h,)),
                "ln2_g": ones_param((h,)),
                "ln2_b": zeros_param((h,)),
            })

    def named_parameters(self, prefix):
        yield f"{prefix}.in_proj.w", self.w_in
        yield f"{prefix}.in_proj.b", self.b_in
        for i, block in enumerate(self.blocks):
            for key, value in block.items():
                yield f"{prefix}.block{i}.{key}", value


def layer_norm(x, gamma, beta, eps=1e-6):
    """Row-wise standardization followed by an affine rescale.

    eps bounds the 1/sqrt(var) gradient spike when a row degenerates to a
    constant, while staying small enough that ordinary rows standardize to
    unit variance well inside 1e-6.
    """
    return layer_norm_rows(x, gamma, beta, eps=eps)


def sinusoidal_encoding(length, width):
    """Classic fixed sin/cos position table, shape (length, width)."""
    position = np.arange(length)[:, None]
    div = np.exp(np.arange(0, width, 2) * (-np.log(10000.0) / width))
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(position * div)
    table[:, 1::2] = np.cos(position * div[: width // 2])
    return table


def _dropout(x, rate, rng):
    if rng is None or rate <= 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask)


def _self_attention(x, block, heads, collect):
    n, h = x.shape
    head_dim = h // heads
    # split columns into heads: (n, h) -> (heads, n, head_dim)
    q = (x @ block["wq"]).reshape(n, heads, head_dim).transpose((1, 0, 2))
    k = (x @ block["wk"]).reshape(n, heads, head_dim).transpose((1, 0, 2))
    v = (x @ block["wv"]).reshape(n, heads, head_dim).transpose((1, 0, 2))
    scores = bmm(q, k.transpose((0, 2, 1))) * (1.0 / np.sqrt(head_dim))
    weights = softmax(scores, axis=2)
    if collect is not None:
        collect.append(weights)
    mixed = bmm(weights, v).transpose((1, 0, 2)).reshape(n, h)
    return mixed @ block["wo"] + block["bo"]


def encode(x, params, rng=None, collect_attention=None):
    """Map raw utterance features (N x d_m) to hidden states (N x h).

    Deterministic unless dropout is enabled and an ``rng`` is supplied.
    Pass a list as ``collect_attention`` to capture per-head attention
    weight tensors for inspection.
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(
            f"encoder expects (N, {params.input_dim}) input, got {x.shape}")
    config = params.config
    z = x @ params.w_in + params.b_in
    if config.positional:
        z = z + Tensor(sinusoidal_encoding(x.shape[0], config.hidden))
    for block in params.blocks:
        attn = _dropout(
            _self_attention(z, block, config.heads, collect_attention),
            config.dropout, rng)
        z = layer_norm(z + attn, block["ln1_g"], block["ln1_b"])
        ff = (z @ block["w1"] + block["b1"]).relu() @ block["w2"] + block["b2"]
        z = layer_norm(z + _dropout(ff, config.dropout, rng),
                       block["ln2_g"], block["ln2_b"])
    return z
