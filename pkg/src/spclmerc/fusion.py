"""Per-modality predictors combined by summing their logits."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dataset import MODALITIES
from .exceptions import ConfigurationError, DataError
from .nncore import DenseNet, Layer, log_softmax

CHECKPOINT_VERSION = 1


class ModalModel:
    """One :class:`DenseNet` per active modality, each mapping its features to class logits."""

    def __init__(self, nets):
        if not nets:
            raise ConfigurationError("at least one modality is required")
        unknown = set(nets) - set(MODALITIES)
        if unknown:
            raise ConfigurationError(f"unknown modalities {sorted(unknown)}")
        self.modalities = [m for m in MODALITIES if m in nets]
        self.nets = {m: nets[m] for m in self.modalities}
        out = {net.output_dim for net in self.nets.values()}
        if len(out) != 1:
            raise ConfigurationError("all modality nets must emit the same number of classes")
        self.class_count = out.pop()

    @classmethod
    def build(cls, modality_dims, class_count, modalities=MODALITIES, hidden=(32,), seed=0):
        rng = np.random.default_rng(seed)
        nets = {m: DenseNet.build(modality_dims[m], class_count, hidden, rng) for m in MODALITIES if m in modalities}
        return cls(nets)

    def parameters(self):
        return [p for m in self.modalities for p in self.nets[m].parameters()]

    def clone(self):
        return ModalModel({m: net.clone() for m, net in self.nets.items()})

    def check_corpus(self, corpus):
        if corpus.class_count != self.class_count:
            raise ConfigurationError(f"model predicts {self.class_count} classes, corpus has {corpus.class_count}")
        for m in self.modalities:
            if corpus.modality_dims[m] != self.nets[m].input_dim:
                raise ConfigurationError(
                    f"{m} net expects dim {self.nets[m].input_dim}, corpus has {corpus.modality_dims[m]}"
                )

    def backward(self, joint_grad):
        """Push ``dLoss/dJointLogits`` into every net (the sum routes it unchanged)."""
        grads = []
        for m in self.modalities:
            g, _ = self.nets[m].backward(joint_grad)
            grads.extend(g)
        return grads

    def save(self, path):
        """Write an ``.npz`` holding every weight plus a JSON shape manifest."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays, manifest = {}, {"version": CHECKPOINT_VERSION, "modalities": self.modalities, "layers": {}}
        for m in self.modalities:
            specs = []
            for k, layer in enumerate(self.nets[m].layers):
                arrays[f"{m}.{k}.weight"] = layer.weight
                arrays[f"{m}.{k}.bias"] = layer.bias
                specs.append({"shape": list(layer.weight.shape), "activation": layer.activation})
            manifest["layers"][m] = specs
        arrays["manifest"] = np.frombuffer(json.dumps(manifest).encode("utf-8"), dtype=np.uint8)
        with path.open("wb") as fh:
            np.savez(fh, **arrays)
        return path

    @classmethod
    def load(cls, path):
        with np.load(Path(path)) as data:
            manifest = json.loads(bytes(data["manifest"]).decode("utf-8"))
            if manifest.get("version") != CHECKPOINT_VERSION:
                raise DataError(f"unsupported checkpoint version {manifest.get('version')!r}")
            nets = {}
            for m in manifest["modalities"]:
                layers = []
                for k, spec in enumerate(manifest["layers"][m]):
                    w = data[f"{m}.{k}.weight"]
                    if list(w.shape) != spec["shape"]:
                        raise DataError(f"checkpoint {m}.{k} has shape {w.shape}, manifest says {spec['shape']}")
                    layers.append(Layer(w, data[f"{m}.{k}.bias"], spec["activation"]))
                nets[m] = DenseNet(layers)
        return cls(nets)


def unimodal_logits(model, features):
    """Forward each modality's features through its own net. ``features`` maps modality -> matrix."""
    out = {}
    for m in model.modalities:
        if m not in features:
            raise ConfigurationError(f"batch lacks {m} features")
        out[m] = model.nets[m].forward(features[m])
    return out


def fuse(unimodal):
    """Elementwise sum of the per-modality logit matrices."""
    mats = list(unimodal.values())
    if not mats:
        raise ConfigurationError("nothing to fuse")
    shape = mats[0].shape
    if any(z.shape != shape for z in mats):
        raise ConfigurationError(f"cannot fuse logits of shapes {[z.shape for z in mats]}")
    joint = np.zeros(shape)
    # fixed modality order keeps the float sum reproducible
    for m in MODALITIES:
        if m in unimodal:
            joint = joint + unimodal[m]
    return joint


def _check_labels(labels, n_rows, n_classes):
    labels = np.asarray(labels)
    if labels.shape != (n_rows,):
        raise ConfigurationError(f"{labels.shape[0] if labels.ndim else 0} labels for {n_rows} logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"label outside [0, {n_classes})")
    return labels.astype(np.int64)


def utterance_loss(joint_logits, labels):
    """Per-row cross-entropy ``-log softmax(z)[y]`` via log-sum-exp."""
    z = np.asarray(joint_logits, dtype=np.float64)
    labels = _check_labels(labels, z.shape[0], z.shape[1])
    return -log_softmax(z)[np.arange(len(labels)), labels]


def weighted_loss_grad(joint_logits, labels, weights):
    """Gradient of ``sum(w * l) / sum(w)`` w.r.t. the joint logits, weights held fixed."""
    z = np.asarray(joint_logits, dtype=np.float64)
    labels = _check_labels(labels, z.shape[0], z.shape[1])
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        return np.zeros_like(z)
    g = np.exp(log_softmax(z))
    g[np.arange(len(labels)), labels] -= 1.0
    return g * (w / total)[:, None]
