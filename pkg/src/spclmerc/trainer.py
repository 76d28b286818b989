"""Training loop: per-batch masked updates, per-epoch threshold advance, evaluation and logging."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds
from .exceptions import ConfigurationError, EvaluationError, TrainingError
from .fusion import ModalModel, fuse, unimodal_logits, utterance_loss, weighted_loss_grad
from .metrics import EpochDiagnostics, accuracy, confusion_matrix, modality_ratio, predict_labels, weighted_f1
from .nncore import Optimizer, softmax
from .spcl import (
    DIFFICULTY_MODES,
    REGULARIZERS,
    SOFT_COUNT_THRESHOLD,
    Scheduler,
    make_pacing,
    measure,
    selected_count,
    spcl_loss,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "epoch",
    "train_loss",
    "val_acc",
    "val_wf1",
    "lambda",
    "expanding_rate",
    "ratio_audio",
    "ratio_text",
    "ratio_visual",
    "mean_difficulty",
    "skipped_batches",
)
TUNED_LR_RANGE = (1e-4, 3e-4)
TUNED_EPSILON_RANGE = (0.6, 1.2)
TUNED_ALPHA_RANGE = (1.05, 1.4)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 2e-4
    optimizer: str = "adam"
    hidden: tuple = (32,)
    modalities: tuple = ds.MODALITIES
    spcl_enabled: bool = True
    pacing: str = "exponential"
    regularizer: str = "hard"
    difficulty_mode: str = "full"
    normalize_conv_score: bool = False
    epsilon: float = 0.8
    alpha: float = 1.1
    lambda_min: float = 0.2
    lambda_max: float = 2.0
    ma_alpha: float = 0.9
    ma_t0: int = 25
    ma_literal_sum: bool = False
    c0: float = 0.1
    seed: int = 0
    eval_every: int = 1
    holdout_fraction: float = 0.1
    shuffle: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.modalities = tuple(self.modalities)

    def validate(self):
        if self.epochs < 1:
            raise ConfigurationError("train.epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("train.batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("train.learning_rate must be > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"train.optimizer must be sgd or adam, got {self.optimizer!r}")
        if not self.modalities or any(m not in ds.MODALITIES for m in self.modalities):
            raise ConfigurationError(f"train.modalities must be a nonempty subset of {ds.MODALITIES}")
        if len(set(self.modalities)) != len(self.modalities):
            raise ConfigurationError("train.modalities has duplicates")
        if any(h < 1 for h in self.hidden):
            raise ConfigurationError("train.hidden widths must be positive")
        if self.regularizer not in REGULARIZERS:
            raise ConfigurationError(f"spcl.regularizer must be one of {REGULARIZERS}")
        if self.difficulty_mode not in DIFFICULTY_MODES:
            raise ConfigurationError(f"spcl.difficulty_mode must be one of {DIFFICULTY_MODES}")
        if self.eval_every < 1:
            raise ConfigurationError("train.eval_every must be >= 1")
        if not 0 < self.holdout_fraction < 1:
            raise ConfigurationError("train.holdout_fraction must lie in (0, 1)")
        make_scheduler(self)  # pacing parameter checks
        for name, value, (lo, hi) in (
            ("learning_rate", self.learning_rate, TUNED_LR_RANGE),
            ("epsilon", self.epsilon, TUNED_EPSILON_RANGE),
            ("alpha", self.alpha, TUNED_ALPHA_RANGE),
        ):
            if not lo <= value <= hi:
                log.info("%s=%g lies outside the commonly tuned range [%g, %g]", name, value, lo, hi)
        return self

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["modalities"] = list(self.modalities)
        return d


def make_scheduler(cfg):
    if cfg.pacing == "exponential":
        pacing = make_pacing("exponential", epsilon=cfg.epsilon, alpha=cfg.alpha)
    elif cfg.pacing == "cosine":
        pacing = make_pacing("cosine", lambda_min=cfg.lambda_min, lambda_max=cfg.lambda_max, total=cfg.epochs)
    elif cfg.pacing == "moving_average":
        pacing = make_pacing(
            "moving_average", alpha=cfg.ma_alpha, t0=cfg.ma_t0, epsilon=cfg.epsilon, literal_sum=cfg.ma_literal_sum
        )
    elif cfg.pacing == "competence":
        pacing = make_pacing("competence", c0=cfg.c0, total=cfg.epochs)
    else:
        pacing = make_pacing(cfg.pacing)
    return Scheduler(
        pacing,
        regularizer=cfg.regularizer,
        difficulty_mode=cfg.difficulty_mode,
        normalize_conv_score=cfg.normalize_conv_score,
    )


@dataclass
class EvalResult:
    confusion: np.ndarray
    accuracy: float
    weighted_f1: float
    mean_true_prob: dict
    predictions: np.ndarray
    labels: np.ndarray


def evaluate(model, corpus):
    """Forward-only pass over every utterance of ``corpus``; never masks."""
    if len(corpus) == 0:
        raise EvaluationError("cannot evaluate an empty split")
    batch = ds.Batch.from_conversations(corpus.conversations, model.modalities)
    uni = unimodal_logits(model, batch.features)
    joint = fuse(uni)
    preds = predict_labels(joint)
    cm = confusion_matrix(batch.labels, preds, model.class_count)
    rows = np.arange(len(batch))
    probs = {m: float(softmax(z)[rows, batch.labels].mean()) for m, z in uni.items()}
    return EvalResult(cm, accuracy(cm), weighted_f1(cm), probs, preds, batch.labels)


def train_epoch(model, corpus, sched, opt, cfg, epoch=0, on_batch=None):
    """One pass over ``corpus`` followed by a threshold advance.

    Returns ``(train_loss, diagnostics)``; ``model``, ``sched`` and ``opt`` are
    updated in place. ``on_batch(epoch, index, report, weights)`` is called
    for every batch before the parameter update.
    """
    lam_used = sched.lambda_value
    losses, selected, total, skipped = [], 0, 0, 0
    prob_sums = {m: 0.0 for m in model.modalities}
    diff_sum = 0.0
    shuffle_seed = np.random.SeedSequence([cfg.seed, epoch])
    for b, batch in enumerate(ds.batches(corpus, cfg.batch_size, shuffle_seed, cfg.shuffle, model.modalities)):
        uni = unimodal_logits(model, batch.features)
        joint = fuse(uni)
        report = measure(uni, joint, batch, sched, lam=None if cfg.spcl_enabled else math.inf)
        if cfg.spcl_enabled:
            weights = report.weights
            lam_used = report.lambda_value
        else:
            weights = np.ones(len(batch))
        if on_batch is not None:
            on_batch(epoch, b, report, weights)
        loss, _, skip = spcl_loss(report.utt_loss, weights)
        if not math.isfinite(loss) or not np.all(np.isfinite(report.difficulty)):
            raise TrainingError(f"non-finite loss in epoch {epoch}, batch {b}", _diagnostic(epoch, b, lam_used, loss, report))
        rows = np.arange(len(batch))
        for m, z in uni.items():
            prob_sums[m] += float(softmax(z)[rows, batch.labels].sum())
        diff_sum += float(report.difficulty.sum())
        total += len(batch)
        selected += selected_count(cfg.regularizer if cfg.spcl_enabled else "hard", weights)
        if skip:
            skipped += 1
            log.debug("epoch %d batch %d fully masked at lambda=%g; step skipped", epoch, b, lam_used)
            continue
        losses.append(loss)
        grads = model.backward(weighted_loss_grad(joint, batch.labels, weights))
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingError(f"non-finite gradient in epoch {epoch}, batch {b}", _diagnostic(epoch, b, lam_used, loss, report))
        opt.step(model.parameters(), grads)

    if cfg.spcl_enabled:
        sched.advance()
    else:
        sched.pool = []
    diag = EpochDiagnostics(
        selected=selected,
        total=total,
        lambda_value=lam_used if cfg.spcl_enabled else math.inf,
        modality_ratio=modality_ratio({m: s / total for m, s in prob_sums.items()}),
        mean_difficulty=diff_sum / total,
        skipped_batches=skipped,
        count_threshold=None if cfg.regularizer == "hard" or not cfg.spcl_enabled else SOFT_COUNT_THRESHOLD,
    )
    train_loss = float(np.mean(losses)) if losses else math.nan
    return train_loss, diag


def _diagnostic(epoch, batch, lam, loss, report):
    rho = report.difficulty
    finite = rho[np.isfinite(rho)]
    return {
        "epoch": epoch,
        "batch": batch,
        "lambda": lam,
        "loss": loss,
        "difficulty_min": float(finite.min()) if finite.size else None,
        "difficulty_max": float(finite.max()) if finite.size else None,
        "difficulty_nonfinite": int(rho.size - finite.size),
    }


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float | None
    val_weighted_f1: float | None
    diagnostics: EpochDiagnostics
    seconds: float

    def csv_row(self):
        ratio = self.diagnostics.modality_ratio or {}
        return [
            self.epoch,
            _num(self.train_loss),
            _num(self.val_accuracy),
            _num(self.val_weighted_f1),
            _num(self.diagnostics.lambda_value),
            _num(self.diagnostics.expanding_rate),
            *(_num(ratio.get(m)) for m in ds.MODALITIES),
            _num(self.diagnostics.mean_difficulty),
            self.diagnostics.skipped_batches,
        ]

    def to_dict(self):
        d = self.diagnostics
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_accuracy": self.val_accuracy,
            "val_weighted_f1": self.val_weighted_f1,
            "lambda": d.lambda_value,
            "expanding_rate": d.expanding_rate,
            "selected": d.selected,
            "total": d.total,
            "modality_ratio": d.modality_ratio,
            "mean_difficulty": d.mean_difficulty,
            "skipped_batches": d.skipped_batches,
            "soft_count_threshold": d.count_threshold,
            "seconds": self.seconds,
        }


def _num(x):
    if x is None:
        return ""
    return repr(float(x))


@dataclass
class RunLog:
    config: dict
    records: list = field(default_factory=list)
    lambda_trace: list = field(default_factory=list)
    competence_trace: list = field(default_factory=list)
    scheduler_states: list = field(default_factory=list)
    best_epoch: int | None = None
    test: dict | None = None
    aborted: dict | None = None
    config_text: str | None = None
    notes: list = field(default_factory=list)
    model: ModalModel | None = field(default=None, repr=False)
    last_model: ModalModel | None = field(default=None, repr=False)

    def csv_text(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in self.records:
            writer.writerow(rec.csv_row())
        return buf.getvalue()

    def to_dict(self):
        return {
            "config": self.config,
            "config_text": self.config_text,
            "epochs": [r.to_dict() for r in self.records],
            "lambda_trace": self.lambda_trace,
            "competence_trace": self.competence_trace,
            "scheduler": self.scheduler_states,
            "best_epoch": self.best_epoch,
            "test": self.test,
            "aborted": self.aborted,
            "notes": self.notes,
        }

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "epochs.csv").write_text(self.csv_text(), encoding="utf-8")
        (out / "run.json").write_text(json.dumps(_jsonable(self.to_dict()), indent=2), encoding="utf-8")
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def prepare_splits(corpus, cfg):
    train = corpus.split("train")
    valid = corpus.split("valid")
    notes = []
    if len(valid) == 0:
        corpus = ds.holdout(corpus, cfg.holdout_fraction, cfg.seed)
        train, valid = corpus.split("train"), corpus.split("valid")
        notes.append(f"no valid split; held out {len(valid)} train conversations")
    if len(train) == 0:
        raise ConfigurationError("corpus has no train conversations")
    return train, valid, corpus.split("test"), notes


def run(cfg, corpus, out_dir=None, config_text=None, on_batch=None):
    """Train for ``cfg.epochs`` epochs, keep the best-validation model, evaluate it on test."""
    cfg.validate()
    train, valid, test, notes = prepare_splits(corpus, cfg)
    model = ModalModel.build(corpus.modality_dims, corpus.class_count, cfg.modalities, cfg.hidden, cfg.seed)
    model.check_corpus(corpus)
    opt = Optimizer(cfg.optimizer, cfg.learning_rate)
    sched = make_scheduler(cfg)
    if cfg.pacing == "moving_average" and not cfg.ma_literal_sum:
        notes.append("moving-average pacing blends the mean previous-epoch difficulty (ma_literal_sum=false)")
    runlog = RunLog(config=cfg.to_dict(), config_text=config_text, notes=notes)

    best_f1, best_model = -math.inf, None
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        try:
            train_loss, diag = train_epoch(model, train, sched, opt, cfg, epoch, on_batch)
        except TrainingError as exc:
            runlog.aborted = {"message": str(exc), **exc.diagnostic}
            if out_dir is not None:
                runlog.write(out_dir)
            raise
        val_acc = val_f1 = None
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            res = evaluate(model, valid)
            val_acc, val_f1 = res.accuracy, res.weighted_f1
            if val_f1 > best_f1:
                best_f1, best_model, runlog.best_epoch = val_f1, model.clone(), epoch
        runlog.records.append(EpochRecord(epoch, train_loss, val_acc, val_f1, diag, time.perf_counter() - start))
        runlog.lambda_trace.append(diag.lambda_value)
        if cfg.spcl_enabled:
            runlog.scheduler_states.append(sched.state())
            if sched.competence is not None:
                runlog.competence_trace.append(sched.pacing.competence(epoch))
    if cfg.spcl_enabled:
        # threshold after the final advance
        runlog.lambda_trace.append(sched.lambda_value)
        if sched.competence is not None:
            runlog.competence_trace.append(sched.competence)

    final = best_model if best_model is not None else model
    if len(test):
        res = evaluate(final, test)
        runlog.test = {
            "accuracy": res.accuracy,
            "weighted_f1": res.weighted_f1,
            "modality_ratio": modality_ratio(res.mean_true_prob),
            "confusion": res.confusion.tolist(),
        }
    runlog.model = final
    runlog.last_model = model
    if out_dir is not None:
        out = runlog.write(out_dir)
        final.save(out / "model.npz")
    return runlog
