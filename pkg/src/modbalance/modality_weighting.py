"""Modality-level balancing: cosine-normalized fusion into class logits.

Each modality contributes, per class, the cosine between its feature row
and the class column of its output matrix, so no modality can dominate the
fused logits by sheer feature or weight magnitude. Contributions are summed
over the active modalities and a single shared bias is added afterwards.
A small ReLU classifier maps the fused logits to the final predictions.
"""

import logging

import numpy as np

from .encoder import uniform_init, zeros_param
from .errors import ShapeError
from .tensor import Tensor, l2_norm

logger = logging.getLogger(__name__)

NORM_FLOOR = 1e-12


class FusionHead:
    """Per-modality output matrices (h x |E|) and one shared bias."""

    def __init__(self, hidden, num_classes, modalities, rng):
        self.hidden = hidden
        self.num_classes = num_classes
        self.modalities = tuple(modalities)
        self.weights = {
            m: uniform_init(rng, (hidden, num_classes), hidden)
            for m in self.modalities
        }
        self.bias = zeros_param((num_classes,))

    def named_parameters(self, prefix="head"):
        for m in self.modalities:
            yield f"{prefix}.{m}.w", self.weights[m]
        yield f"{prefix}.b", self.bias


class ClassifierParams:
    """ReLU MLP |E| -> hidden -> |E| on top of the fused logits."""

    def __init__(self, num_classes, hidden, rng):
        self.w1 = uniform_init(rng, (num_classes, hidden), num_classes)
        self.b1 = zeros_param((hidden,))
        self.w2 = uniform_init(rng, (hidden, num_classes), hidden)
        self.b2 = zeros_param((num_classes,))

    def named_parameters(self, prefix="classifier"):
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2


def _floored_norm(t, axis, what):
    norm = l2_norm(t, axis=axis, keepdims=True)
    degenerate = int((norm.data <= NORM_FLOOR).sum())
    if degenerate:
        logger.warning(
            "%d zero-norm %s hit the %g floor during cosine fusion",
            degenerate, what, NORM_FLOOR)
    return norm.clamp_min(NORM_FLOOR)


def fuse_modalities(features, head, active=None, normalized=True):
    """Fuse per-modality features into class logits.

    Returns ``(logits, contributions)`` where ``contributions[m]`` is the
    bias-free (N x |E|) term of modality ``m``. With ``normalized`` each
    entry is a cosine in [-1, 1]; without it the fusion degrades to a plain
    linear map (the no-normalization ablation).
    """
    active = tuple(active) if active is not None else head.modalities
    if not active:
        raise ShapeError("fusion requires at least one modality")
    contributions = {}
    logits = None
    for m in active:
        if m not in features:
            raise ShapeError(f"missing features for modality {m!r}")
        z = features[m]
        w = head.weights[m]
        if z.shape[1] != w.shape[0]:
            raise ShapeError(
                f"modality {m!r} features {z.shape} do not match head "
                f"{w.shape}")
        if normalized:
            zn = z / _floored_norm(z, axis=1, what=f"{m} feature rows")
            wn = w / _floored_norm(w, axis=0, what=f"{m} weight columns")
            contrib = zn @ wn
        else:
            contrib = z @ w
        contributions[m] = contrib
        logits = contrib if logits is None else logits + contrib
    return logits + head.bias, contributions


def classify(fused, params):
    """Final prediction logits; argmax over the last axis picks the class."""
    hidden = (fused @ params.w1 + params.b1).relu()
    return hidden @ params.w2 + params.b2


def weight_norm_trace(head, active=None):
    """Column norms ||W_k^m|| as an (M x |E|) diagnostic matrix."""
    active = tuple(active) if active is not None else head.modalities
    return np.stack([
        np.linalg.norm(head.weights[m].data, axis=0) for m in active
    ])
