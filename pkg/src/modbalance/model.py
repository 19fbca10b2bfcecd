"""The assembled model: encoders, feature weighting, fusion, classifier.

One ``Model`` owns every parameter block. Encoder parameters are kept under
per-modality name prefixes because the balance optimizer treats them
differently from everything else (they alone receive modulated, optionally
noisy updates). The forward pass works for any nonempty modality subset:
excluded modalities simply drop out of the contraction chain, the fusion
sum, and the modality count.
"""

from dataclasses import dataclass, field

import numpy as np

from . import feature_weighting as afw
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import EncoderConfig, EncoderParams, encode
from .errors import CheckpointError, ConfigError
from .modality_weighting import (
    ClassifierParams,
    FusionHead,
    classify,
    fuse_modalities,
    weight_norm_trace,
)
from .tensor import Tensor

MODALITIES = ("t", "a", "v")


@dataclass
class ModelConfig:
    hidden: int = 32
    rank: int = 2
    beta: float = 0.5
    d_k: float = 0.0  # 0 means "use rank squared"
    layers: int = 2
    heads: int = 4
    ffn: int = 64
    dropout: float = 0.0
    positional: bool = False
    classifier_hidden: int = 0  # 0 means "twice the class count"
    disable_afw: bool = False
    disable_amw: bool = False
    feature_stop_grad: str = ""  # "", "attention", or "mapper"

    def validate(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if self.rank < 1:
            raise ConfigError("rank must be >= 1")
        if self.d_k < 0.0:
            raise ConfigError("d_k must be positive (or 0 for the default)")
        if self.feature_stop_grad not in ("", "attention", "mapper"):
            raise ConfigError(
                f"feature_stop_grad must be '', 'attention', or 'mapper', "
                f"got {self.feature_stop_grad!r}")
        self.encoder_config().validate()
        return self

    def encoder_config(self):
        return EncoderConfig(hidden=self.hidden, layers=self.layers,
                             heads=self.heads, ffn=self.ffn,
                             dropout=self.dropout, positional=self.positional)

    @property
    def effective_d_k(self):
        return self.d_k if self.d_k > 0.0 else float(self.rank * self.rank)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, payload):
        known = {k: v for k, v in payload.items() if k in cls.__dataclass_fields__}
        unknown = set(payload) - set(known)
        if unknown:
            raise ConfigError(f"unknown model options: {sorted(unknown)}")
        return cls(**known).validate()


@dataclass
class ForwardPass:
    """Everything one conversation's forward pass produces."""

    z: dict  # modality -> (N, h) hidden states
    afw_state: object  # feature_weighting.AfwState, or None when disabled
    balanced: dict  # modality -> (N, h) features entering fusion
    fused: Tensor  # (N, |E|) fused logits
    contributions: dict  # modality -> (N, |E|) bias-free fusion terms
    outputs: Tensor  # (N, |E|) classifier logits

    def predictions(self):
        return self.outputs.data.argmax(axis=1)

    def score_logits(self, m, bias):
        """Unimodal logits for the balance score: contribution + bias / M."""
        return self.contributions[m].data + bias / len(self.contributions)


class Model:
    def __init__(self, config, num_classes, dims, seed):
        config.validate()
        if num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        self.config = config
        self.num_classes = num_classes
        self.dims = {m: int(dims[m]) for m in MODALITIES}
        rng = np.random.default_rng(seed)
        enc_config = config.encoder_config()
        self.encoders = {
            m: EncoderParams(self.dims[m], enc_config, rng) for m in MODALITIES
        }
        self.afw_params = {
            m: afw.FeatureWeightParams(config.hidden, config.rank, rng)
            for m in MODALITIES
        }
        self.head = FusionHead(config.hidden, num_classes, MODALITIES, rng)
        hidden = config.classifier_hidden or 2 * num_classes
        self.classifier = ClassifierParams(num_classes, hidden, rng)
        self._registry = self._build_registry()

    # --- parameter registry ---

    def _build_registry(self):
        params = {}
        for m in MODALITIES:
            params.update(self.encoders[m].named_parameters(f"encoder.{m}"))
        for m in MODALITIES:
            params.update(self.afw_params[m].named_parameters(f"afw.{m}"))
        params.update(self.head.named_parameters("head"))
        params.update(self.classifier.named_parameters("classifier"))
        return params

    def named_parameters(self):
        """Fixed-order name -> Tensor mapping over every parameter block."""
        return dict(self._registry)

    def encoder_parameter_names(self, m):
        prefix = f"encoder.{m}."
        return [name for name in self.named_parameters() if name.startswith(prefix)]

    def zero_grad(self):
        for p in self._registry.values():
            p.grad = None

    # --- forward ---

    def forward(self, features, active=MODALITIES, rng=None):
        """Run one conversation through the full pipeline.

        ``features`` maps modality -> (N, d_m) arrays; ``active`` selects
        the modality subset (nonempty).
        """
        active = tuple(active)
        if not active:
            raise ConfigError("modality subset must be nonempty")
        for m in active:
            if m not in MODALITIES:
                raise ConfigError(f"unknown modality {m!r}")
        z = {m: encode(features[m], self.encoders[m], rng=rng) for m in active}
        if self.config.disable_afw:
            state = None
            balanced = z
        else:
            state = afw.forward(z, self.afw_params, self.config.effective_d_k,
                                self.config.beta, active=active)
            balanced = state.balanced
        fused, contributions = fuse_modalities(
            balanced, self.head, active=active,
            normalized=not self.config.disable_amw)
        outputs = classify(fused, self.classifier)
        return ForwardPass(z=z, afw_state=state, balanced=balanced,
                           fused=fused, contributions=contributions,
                           outputs=outputs)

    def weight_norms(self, active=MODALITIES):
        return weight_norm_trace(self.head, active=active)

    # --- persistence ---

    def save(self, path):
        meta = {
            "model": self.config.to_dict(),
            "num_classes": self.num_classes,
            "dims": self.dims,
        }
        arrays = {name: p.data for name, p in self.named_parameters().items()}
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path):
        meta, arrays = load_checkpoint(path)
        try:
            config = ModelConfig.from_dict(meta["model"])
            model = cls(config, int(meta["num_classes"]), meta["dims"], seed=0)
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"{path}: missing metadata ({exc})") from exc
        params = model.named_parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise CheckpointError(
                f"{path}: parameter names do not match the model "
                f"(missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})")
        for name, p in params.items():
            if arrays[name].shape != p.data.shape:
                raise CheckpointError(
                    f"{path}: {name} has shape {arrays[name].shape}, "
                    f"expected {p.data.shape}")
            p.data = arrays[name]
        return model
