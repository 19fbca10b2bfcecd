"""Synthetic multimodal conversations, dataset file I/O, and minibatching.

Each conversation carries one feature matrix per modality (text, audio,
visual) plus integer emotion labels, one per utterance. The generator
plants unit-norm class prototypes and scales them by a per-modality
informativeness factor, so the signal-to-noise ratio of every channel is
controllable; this is what lets imbalance experiments make a chosen
modality dominant.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetError

MODALITIES = ("t", "a", "v")


@dataclass
class Conversation:
    """Per-utterance features for all three modalities plus labels."""

    id: str
    features: dict  # modality -> (N, d_m) float64 array
    labels: np.ndarray  # (N,) int array

    @property
    def num_utterances(self):
        return len(self.labels)

    def validate(self, num_classes, dims):
        n = len(self.labels)
        if n < 1:
            raise DatasetError(f"conversation {self.id}: no utterances")
        for m in MODALITIES:
            if m not in self.features:
                raise DatasetError(f"conversation {self.id}: missing modality {m!r}")
            feats = self.features[m]
            if feats.ndim != 2 or feats.shape[0] != n:
                raise DatasetError(
                    f"conversation {self.id}: modality {m!r} has "
                    f"{feats.shape[0] if feats.ndim == 2 else 'ragged'} rows, "
                    f"expected {n}")
            if feats.shape[1] != dims[m]:
                raise DatasetError(
                    f"conversation {self.id}: modality {m!r} has dim "
                    f"{feats.shape[1]}, expected {dims[m]}")
        bad = [int(y) for y in self.labels if y < 0 or y >= num_classes]
        if bad:
            raise DatasetError(
                f"conversation {self.id}: label {bad[0]} outside "
                f"[0, {num_classes})")


@dataclass
class Dataset:
    num_classes: int
    dims: dict  # modality -> feature dim
    conversations: list

    def validate(self):
        for conv in self.conversations:
            conv.validate(self.num_classes, self.dims)
        return self

    @property
    def num_utterances(self):
        return sum(c.num_utterances for c in self.conversations)

    def all_labels(self):
        return np.concatenate([c.labels for c in self.conversations])


@dataclass
class SynthSpec:
    """Knobs for the synthetic generator; identical seeds give identical data."""

    num_classes: int = 4
    dims: dict = field(default_factory=lambda: {"t": 16, "a": 12, "v": 12})
    gamma: dict = field(default_factory=lambda: {"t": 1.0, "a": 1.0, "v": 1.0})
    noise_sigma: float = 0.5
    conversations: int = 60
    utterances: tuple = (5, 10)
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise DatasetError("num_classes must be >= 2")
        for m in MODALITIES:
            if m not in self.dims or int(self.dims[m]) < 1:
                raise DatasetError(f"dims.{m} must be a positive integer")
            if m not in self.gamma or not 0.0 <= float(self.gamma[m]) <= 1.0:
                raise DatasetError(f"gamma.{m} must be in [0, 1]")
        if self.noise_sigma < 0.0:
            raise DatasetError("noise_sigma must be >= 0")
        if self.conversations < 1:
            raise DatasetError("conversations must be >= 1")
        lo, hi = self.utterances
        if lo < 1 or hi < lo:
            raise DatasetError("utterances range must satisfy 1 <= min <= max")
        return self

    @classmethod
    def from_dict(cls, payload):
        spec = cls()
        if "num_classes" in payload:
            spec.num_classes = int(payload["num_classes"])
        if "dims" in payload:
            spec.dims = {m: int(payload["dims"][m]) for m in payload["dims"]}
        if "gamma" in payload:
            spec.gamma = {m: float(payload["gamma"][m]) for m in payload["gamma"]}
        if "noise_sigma" in payload:
            spec.noise_sigma = float(payload["noise_sigma"])
        if "conversations" in payload:
            spec.conversations = int(payload["conversations"])
        if "utterances" in payload:
            lo, hi = payload["utterances"]
            spec.utterances = (int(lo), int(hi))
        if "seed" in payload:
            spec.seed = int(payload["seed"])
        return spec.validate()


def _draw_prototypes(rng, spec):
    protos = {}
    for m in MODALITIES:
        rows = rng.standard_normal((spec.num_classes, spec.dims[m]))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        protos[m] = rows
    return protos


def class_prototypes(spec):
    """Fixed unit-norm prototype per (class, modality), drawn once per seed.

    These are the first draws of the generator stream, so they match what
    ``generate`` plants for the same spec.
    """
    return _draw_prototypes(np.random.default_rng(spec.seed), spec)


def generate(spec):
    """Sample a dataset: features = gamma_m * prototype[label] + N(0, sigma^2)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    protos = _draw_prototypes(rng, spec)
    lo, hi = spec.utterances
    conversations = []
    for i in range(spec.conversations):
        n = int(rng.integers(lo, hi + 1))
        labels = rng.integers(0, spec.num_classes, size=n)
        features = {}
        for m in MODALITIES:
            noise = rng.standard_normal((n, spec.dims[m])) * spec.noise_sigma
            features[m] = spec.gamma[m] * protos[m][labels] + noise
        conversations.append(Conversation(
            id=f"conv{i:04d}", features=features, labels=labels))
    return Dataset(num_classes=spec.num_classes, dims=dict(spec.dims),
                   conversations=conversations)


# --- file format ---
# {"num_classes": int, "dims": {"t": int, "a": int, "v": int},
#  "conversations": [{"id": str, "labels": [int],
#                     "t": [[f64]], "a": [[f64]], "v": [[f64]]}]}

def to_payload(dataset):
    return {
        "num_classes": dataset.num_classes,
        "dims": {m: int(dataset.dims[m]) for m in MODALITIES},
        "conversations": [
            {
                "id": conv.id,
                "labels": [int(y) for y in conv.labels],
                **{m: conv.features[m].tolist() for m in MODALITIES},
            }
            for conv in dataset.conversations
        ],
    }


def dumps(dataset):
    return json.dumps(to_payload(dataset))


def save(dataset, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(dataset))


def from_payload(payload):
    try:
        num_classes = int(payload["num_classes"])
        dims = {m: int(payload["dims"][m]) for m in MODALITIES}
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"dataset header is malformed: missing {exc}") from exc
    conversations = []
    for entry in payload.get("conversations", []):
        cid = str(entry.get("id", f"conv{len(conversations):04d}"))
        if "labels" not in entry:
            raise DatasetError(f"conversation {cid}: missing labels")
        labels = np.asarray(entry["labels"], dtype=np.int64)
        features = {}
        for m in MODALITIES:
            if m not in entry:
                raise DatasetError(f"conversation {cid}: missing modality {m!r}")
            rows = entry[m]
            widths = {len(r) for r in rows}
            if len(rows) != len(labels) or len(widths) > 1:
                raise DatasetError(
                    f"conversation {cid}: modality {m!r} utterance rows are "
                    f"ragged or do not match {len(labels)} labels")
            arr = np.asarray(rows, dtype=np.float64)
            if arr.ndim == 1:  # zero utterances; keep a (0, d) shape
                arr = arr.reshape(0, dims[m])
            features[m] = arr
        conversations.append(Conversation(id=cid, features=features, labels=labels))
    if not conversations:
        raise DatasetError("dataset contains no conversations")
    return Dataset(num_classes=num_classes, dims=dims,
                   conversations=conversations).validate()


def load(path):
    """Parse and validate a dataset file; failures name the conversation."""
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: malformed JSON ({exc})") from exc
    except OSError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    return from_payload(payload)


def batches(conversations, batch_size, seed):
    """One epoch: a seeded permutation split into batches (last may be short)."""
    if batch_size < 1:
        raise DatasetError("batch_size must be >= 1")
    if not conversations:
        raise DatasetError("cannot batch an empty dataset")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(conversations))
    return [
        [conversations[j] for j in order[i:i + batch_size]]
        for i in range(0, len(order), batch_size)
    ]


def split_holdout(conversations, fraction, seed):
    """Deterministic train/holdout split at conversation granularity."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(conversations))
    n_holdout = max(1, int(round(fraction * len(conversations))))
    if n_holdout >= len(conversations):
        raise DatasetError("holdout fraction leaves no training conversations")
    holdout_idx = set(order[:n_holdout].tolist())
    train = [c for i, c in enumerate(conversations) if i not in holdout_idx]
    holdout = [c for i, c in enumerate(conversations) if i in holdout_idx]
    return train, holdout
