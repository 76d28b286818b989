"""Finite-difference check of the masked SPCL loss through fusion and every modality net."""
import numpy as np

from spclmerc.fusion import ModalModel, fuse, unimodal_logits, utterance_loss, weighted_loss_grad
from spclmerc.spcl import spcl_loss

from oracles import central_difference, max_relative_error


def random_instance(rng, max_dim=16, max_classes=6, modalities=("audio", "text", "visual")):
    n_classes = int(rng.integers(2, max_classes + 1))
    dims = {m: int(rng.integers(1, max_dim + 1)) for m in modalities}
    depth = int(rng.integers(0, 3))
    hidden = tuple(int(rng.integers(1, max_dim + 1)) for _ in range(depth))
    model = ModalModel.build(dims, n_classes, modalities, hidden, seed=int(rng.integers(1 << 30)))
    for p in model.parameters():
        p += rng.standard_normal(p.shape) * 0.1
    n = int(rng.integers(1, 9))
    feats = {m: rng.standard_normal((n, d)) for m, d in dims.items()}
    labels = rng.integers(0, n_classes, size=n)
    weights = rng.integers(0, 2, size=n).astype(float)
    if rng.random() < 0.5:
        weights = rng.random(n)
    if weights.sum() == 0:
        weights[0] = 1.0
    return model, feats, labels, weights


def check(model, feats, labels, weights, h=1e-5):
    def loss():
        joint = fuse(unimodal_logits(model, feats))
        return spcl_loss(utterance_loss(joint, labels), weights)[0]

    joint = fuse(unimodal_logits(model, feats))
    analytic = model.backward(weighted_loss_grad(joint, labels, weights))
    numeric = central_difference(loss, model.parameters(), h)
    return max_relative_error(analytic, numeric)
