"""Multimodal conversation corpora: containers, synthetic generator, JSONL I/O, batching."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, DataError, EmptyCorpusError, SchemaError

MODALITIES = ("audio", "text", "visual")
SPLITS = ("train", "valid", "test")
DEFAULT_DIMS = {"audio": 12, "text": 16, "visual": 12}


@dataclass(frozen=True)
class Utterance:
    features: dict
    label: int


@dataclass(eq=False)
class Conversation:
    """One dialogue. Features are stored per modality as ``(n_utterances, dim)`` arrays."""

    id: str
    features: dict
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.features = {m: np.asarray(x, dtype=np.float64) for m, x in self.features.items()}
        if len(self.labels) == 0:
            raise DataError(f"conversation {self.id!r} has no utterances")
        for m, x in self.features.items():
            if x.ndim != 2 or x.shape[0] != len(self.labels):
                raise DataError(f"conversation {self.id!r}: {m} features have shape {x.shape}")
        if self.split not in SPLITS:
            raise SchemaError(f"unknown split {self.split!r}")

    def __len__(self):
        return len(self.labels)

    @property
    def utterances(self):
        return [
            Utterance({m: x[j] for m, x in self.features.items()}, int(self.labels[j]))
            for j in range(len(self))
        ]

    def __eq__(self, other):
        if not isinstance(other, Conversation):
            return NotImplemented
        return (
            self.id == other.id
            and self.split == other.split
            and np.array_equal(self.labels, other.labels)
            and self.features.keys() == other.features.keys()
            and all(np.array_equal(x, other.features[m]) for m, x in self.features.items())
        )


@dataclass(eq=False)
class Corpus:
    conversations: list
    class_count: int
    modality_dims: dict = field(default_factory=lambda: dict(DEFAULT_DIMS))

    def __post_init__(self):
        if self.class_count < 2:
            raise ConfigurationError("class_count must be at least 2")
        self.modality_dims = {m: int(d) for m, d in self.modality_dims.items()}
        for conv in self.conversations:
            if conv.labels.min() < 0 or conv.labels.max() >= self.class_count:
                raise DataError(f"conversation {conv.id!r} has a label outside [0, {self.class_count})")
            for m, d in self.modality_dims.items():
                if m not in conv.features or conv.features[m].shape[1] != d:
                    raise SchemaError(f"conversation {conv.id!r}: {m} features must have dim {d}")

    def __len__(self):
        return len(self.conversations)

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and self.modality_dims == other.modality_dims
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.conversations, other.conversations))
        )

    @property
    def utterance_count(self):
        return sum(len(c) for c in self.conversations)

    def split(self, name):
        if name not in SPLITS:
            raise SchemaError(f"unknown split {name!r}")
        return Corpus([c for c in self.conversations if c.split == name], self.class_count, self.modality_dims)

    def labels(self):
        if not self.conversations:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([c.labels for c in self.conversations])


@dataclass
class SynthConfig:
    """Knobs for :func:`generate`. ``snr`` scales the class prototype in each modality."""

    class_count: int = 4
    modality_dims: dict = field(default_factory=lambda: dict(DEFAULT_DIMS))
    snr: dict = field(default_factory=lambda: {"audio": 0.5, "text": 3.0, "visual": 0.5})
    label_stickiness: float = 0.5
    conversation_count: int = 200
    valid_count: int = 40
    test_count: int = 40
    length_range: tuple = (4, 10)
    seed: int = 0

    def validate(self):
        if self.class_count < 2:
            raise ConfigurationError("synth.class_count must be at least 2")
        if set(self.modality_dims) != set(MODALITIES) or set(self.snr) != set(MODALITIES):
            raise ConfigurationError(f"synth dims and snr must cover exactly {MODALITIES}")
        if any(int(d) < 1 for d in self.modality_dims.values()):
            raise ConfigurationError("synth modality dims must be positive")
        if any(not math.isfinite(s) or s < 0 for s in self.snr.values()):
            raise ConfigurationError("synth.snr values must be finite and >= 0")
        if not 0.0 <= self.label_stickiness <= 1.0:
            raise ConfigurationError("synth.label_stickiness must lie in [0, 1]")
        lo, hi = self.length_range
        if lo < 1 or hi < lo:
            raise ConfigurationError("synth.length_range must satisfy 1 <= min <= max")
        if min(self.conversation_count, self.valid_count, self.test_count) < 0:
            raise ConfigurationError("synth conversation counts must be >= 0")
        return self


def generate(cfg):
    """Draw a synthetic corpus whose modalities carry label signal of differing strength.

    Prototypes are drawn once per (class, modality) from a unit Gaussian. An
    utterance's modality-m vector is ``snr[m] * prototype + N(0, I)``. Labels
    within a conversation follow a sticky Markov chain.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    C = cfg.class_count
    protos = {m: rng.standard_normal((C, cfg.modality_dims[m])) for m in MODALITIES}
    lo, hi = cfg.length_range
    conversations = []
    counts = (("train", cfg.conversation_count), ("valid", cfg.valid_count), ("test", cfg.test_count))
    for split, count in counts:
        for k in range(count):
            n = int(rng.integers(lo, hi + 1))
            labels = np.empty(n, dtype=np.int64)
            labels[0] = rng.integers(C)
            for j in range(1, n):
                if rng.random() < cfg.label_stickiness:
                    labels[j] = labels[j - 1]
                else:
                    # uniform over the other C - 1 classes
                    r = int(rng.integers(C - 1))
                    labels[j] = r if r < labels[j - 1] else r + 1
            feats = {
                m: cfg.snr[m] * protos[m][labels] + rng.standard_normal((n, cfg.modality_dims[m]))
                for m in MODALITIES
            }
            conversations.append(Conversation(f"{split}-{k:04d}", feats, labels, split))
    return Corpus(conversations, C, dict(cfg.modality_dims))


def save_jsonl(corpus, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        header = {"classCount": corpus.class_count, "dims": {m: corpus.modality_dims[m] for m in MODALITIES}}
        fh.write(json.dumps(header) + "\n")
        for conv in corpus.conversations:
            for j in range(len(conv)):
                rec = {"conv": conv.id, "label": int(conv.labels[j])}
                for m in MODALITIES:
                    rec[m] = conv.features[m][j].tolist()
                rec["split"] = conv.split
                fh.write(json.dumps(rec) + "\n")
    return path


def _vector(rec, key, dim, lineno):
    vec = rec.get(key)
    if not isinstance(vec, list):
        raise SchemaError(f"missing or non-list {key!r}", lineno)
    if len(vec) != dim:
        raise SchemaError(f"{key} has {len(vec)} values, header says {dim}", lineno)
    try:
        arr = np.array(vec, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{key} is not numeric: {exc}", lineno) from None
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"{key} contains non-finite values", lineno)
    return arr


def load_jsonl(path):
    """Read a corpus written in the header + one-utterance-per-line JSONL format.

    Utterances are grouped by ``conv``; order within a conversation follows the
    file, and conversations appear in order of first occurrence.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines()]
    records = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not records:
        raise EmptyCorpusError(f"{path} is empty")

    def parse(lineno, text):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed JSON: {exc.msg}", lineno) from None
        if not isinstance(obj, dict):
            raise DataError("expected a JSON object", lineno)
        return obj

    lineno, text = records[0]
    header = parse(lineno, text)
    try:
        class_count = int(header["classCount"])
        dims = {m: int(header["dims"][m]) for m in MODALITIES}
    except (KeyError, TypeError, ValueError):
        raise SchemaError("header must be {classCount, dims: {audio, text, visual}}", lineno) from None
    if class_count < 2:
        raise SchemaError("classCount must be at least 2", lineno)

    groups = {}
    for lineno, text in records[1:]:
        rec = parse(lineno, text)
        conv_id = rec.get("conv")
        if not isinstance(conv_id, str):
            raise SchemaError("'conv' must be a string", lineno)
        label = rec.get("label")
        if not isinstance(label, int) or isinstance(label, bool):
            raise SchemaError("'label' must be an integer", lineno)
        if not 0 <= label < class_count:
            raise SchemaError(f"label {label} outside [0, {class_count})", lineno)
        split = rec.get("split")
        if split not in SPLITS:
            raise SchemaError(f"unknown split tag {split!r}", lineno)
        feats = {m: _vector(rec, m, dims[m], lineno) for m in MODALITIES}
        g = groups.setdefault(conv_id, {"split": split, "labels": [], **{m: [] for m in MODALITIES}})
        if g["split"] != split:
            raise SchemaError(f"conversation {conv_id!r} spans splits {g['split']!r} and {split!r}", lineno)
        g["labels"].append(label)
        for m in MODALITIES:
            g[m].append(feats[m])

    if not groups:
        raise EmptyCorpusError(f"{path} has a header but no utterances")
    conversations = [
        Conversation(cid, {m: np.vstack(g[m]) for m in MODALITIES}, np.array(g["labels"]), g["split"])
        for cid, g in groups.items()
    ]
    return Corpus(conversations, class_count, dims)


def holdout(corpus, fraction=0.1, seed=0):
    """Move a seeded ``fraction`` of train conversations into the valid split (at least one)."""
    train_idx = [i for i, c in enumerate(corpus.conversations) if c.split == "train"]
    if len(train_idx) < 2:
        raise DataError("need at least two train conversations to hold out a validation split")
    k = max(1, int(round(fraction * len(train_idx))))
    picked = set(np.random.default_rng(seed).choice(train_idx, size=k, replace=False).tolist())
    convs = []
    for i, c in enumerate(corpus.conversations):
        split = "valid" if i in picked else c.split
        convs.append(Conversation(c.id, c.features, c.labels, split))
    return Corpus(convs, corpus.class_count, corpus.modality_dims)


@dataclass
class Batch:
    """Whole conversations stacked utterance-wise.

    ``conv_index[k]`` is the position (within ``conv_ids``) of the conversation
    owning stacked utterance ``k``; ``utt_index[k]`` is its index inside that
    conversation. ``conv_lengths`` records full conversation lengths so a
    partial conversation can be detected.
    """

    conv_ids: list
    features: dict
    labels: np.ndarray
    conv_index: np.ndarray
    utt_index: np.ndarray
    conv_lengths: np.ndarray = None

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_conversations(cls, conversations, modalities=MODALITIES):
        conversations = list(conversations)
        if not conversations:
            raise DataError("cannot build an empty batch")
        return cls(
            conv_ids=[c.id for c in conversations],
            features={m: np.vstack([c.features[m] for c in conversations]) for m in modalities},
            labels=np.concatenate([c.labels for c in conversations]),
            conv_index=np.concatenate([np.full(len(c), i, dtype=np.int64) for i, c in enumerate(conversations)]),
            utt_index=np.concatenate([np.arange(len(c), dtype=np.int64) for c in conversations]),
            conv_lengths=np.array([len(c) for c in conversations], dtype=np.int64),
        )


def batches(corpus, batch_size, seed=0, shuffle=True, modalities=MODALITIES):
    """Yield :class:`Batch` objects of up to ``batch_size`` whole conversations."""
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    order = np.arange(len(corpus))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(corpus))
    for start in range(0, len(order), batch_size):
        convs = [corpus.conversations[i] for i in order[start:start + batch_size]]
        yield Batch.from_conversations(convs, modalities)
