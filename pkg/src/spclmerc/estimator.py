"""scikit-learn compatible wrapper around :func:`spclmerc.trainer.run`."""
from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import dataset as ds
from .fusion import fuse, unimodal_logits
from .metrics import confusion_matrix, predict_labels, weighted_f1
from .nncore import softmax
from .trainer import TrainConfig, run


def check_corpus(X):
    if not isinstance(X, ds.Corpus):
        raise TypeError(f"X must be a Corpus, got {type(X).__name__}")
    if len(X.split("train")) == 0:
        raise ValueError("X has no train conversations")
    return X


def check_features(X, model):
    """Validate a feature mapping ``{modality: (n, d) array}`` or a Corpus against a fitted model."""
    if isinstance(X, ds.Corpus):
        model.check_corpus(X)
        return ds.Batch.from_conversations(X.conversations, model.modalities).features
    if not isinstance(X, dict):
        raise TypeError("X must be a Corpus or a dict of modality -> feature matrix")
    feats, n = {}, None
    for m in model.modalities:
        if m not in X:
            raise ValueError(f"missing {m} features")
        a = np.asarray(X[m], dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != model.nets[m].input_dim:
            raise ValueError(f"{m} features must be (n, {model.nets[m].input_dim}), got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"{m} features contain NaN or inf")
        if n is not None and a.shape[0] != n:
            raise ValueError("modalities disagree on the number of utterances")
        n = a.shape[0]
        feats[m] = a
    return feats


class SPCLClassifier(ClassifierMixin, BaseEstimator):
    """Late-fusion utterance classifier trained with a self-paced curriculum.

    ``fit`` takes a Corpus (conversations are the batching unit, so plain
    arrays are not enough); ``predict`` also accepts a dict of per-modality
    feature matrices. Constructor parameters mirror
    :class:`~spclmerc.trainer.TrainConfig`.
    """

    def __init__(
        self,
        epochs=50,
        batch_size=16,
        learning_rate=2e-4,
        optimizer="adam",
        hidden=(32,),
        modalities=ds.MODALITIES,
        spcl_enabled=True,
        pacing="exponential",
        regularizer="hard",
        difficulty_mode="full",
        normalize_conv_score=False,
        epsilon=0.8,
        alpha=1.1,
        lambda_min=0.2,
        lambda_max=2.0,
        ma_alpha=0.9,
        ma_t0=25,
        ma_literal_sum=False,
        c0=0.1,
        seed=0,
        eval_every=1,
        holdout_fraction=0.1,
        shuffle=True,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.hidden = hidden
        self.modalities = modalities
        self.spcl_enabled = spcl_enabled
        self.pacing = pacing
        self.regularizer = regularizer
        self.difficulty_mode = difficulty_mode
        self.normalize_conv_score = normalize_conv_score
        self.epsilon = epsilon
        self.alpha = alpha
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max
        self.ma_alpha = ma_alpha
        self.ma_t0 = ma_t0
        self.ma_literal_sum = ma_literal_sum
        self.c0 = c0
        self.seed = seed
        self.eval_every = eval_every
        self.holdout_fraction = holdout_fraction
        self.shuffle = shuffle

    def to_config(self):
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def fit(self, X, y=None):
        """Train on ``X``'s train split, selecting on its valid split. ``y`` is unused."""
        corpus = check_corpus(X)
        self.run_log_ = run(self.to_config(), corpus)
        self.model_ = self.run_log_.model
        self.classes_ = np.arange(corpus.class_count)
        self.n_classes_ = corpus.class_count
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("SPCLClassifier is not fitted yet; call fit first")

    def decision_function(self, X):
        self._check_fitted()
        return fuse(unimodal_logits(self.model_, check_features(X, self.model_)))

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return predict_labels(self.decision_function(X))

    def score(self, X, y=None, sample_weight=None):
        """Accuracy; ``y`` defaults to the labels stored in a Corpus."""
        if y is None:
            if not isinstance(X, ds.Corpus):
                raise ValueError("y is required unless X is a Corpus")
            y = X.labels()
        return super().score(X, y, sample_weight)

    def weighted_f1(self, X, y=None):
        if y is None:
            y = X.labels()
        return weighted_f1(confusion_matrix(y, self.predict(X), self.n_classes_))
