"""Self-paced curriculum: difficulty measurement, sample weighting and threshold pacing.

An utterance's difficulty is the harmonic mean of its fused cross-entropy and
its conversation's modality-misalignment score (the spread of per-modality
true-class probability mass). A regularizer turns difficulty and the current
threshold into a weight; a pacing rule moves the threshold once per epoch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, SchedulingError
from .fusion import utterance_loss
from .nncore import softmax

REGULARIZERS = ("hard", "linear", "logistic")
DIFFICULTY_MODES = ("full", "conversation", "utterance")
SOFT_COUNT_THRESHOLD = 0.5
# keeps the threshold strictly positive when a data-driven rule lands on 0
LAMBDA_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# difficulty measurer


def unimodal_scores(unimodal, labels, conv_index, n_conversations=None, normalize=False):
    """Per conversation and modality, the summed softmax mass on the true class.

    Returns ``{modality: array of length n_conversations}``. With
    ``normalize=True`` each sum is divided by the conversation length.
    """
    labels = np.asarray(labels, dtype=np.int64)
    conv_index = np.asarray(conv_index, dtype=np.int64)
    if n_conversations is None:
        n_conversations = int(conv_index.max()) + 1 if conv_index.size else 0
    lengths = np.bincount(conv_index, minlength=n_conversations).astype(np.float64)
    rows = np.arange(len(labels))
    scores = {}
    for m, z in unimodal.items():
        p_true = softmax(z)[rows, labels]
        s = np.bincount(conv_index, weights=p_true, minlength=n_conversations)
        scores[m] = s / np.maximum(lengths, 1.0) if normalize else s
    return scores


def conversation_score(scores):
    """Population standard deviation across modalities.

    ``scores`` is a sequence of per-modality values, or a mapping of
    modality -> array (vectorised over conversations).
    """
    if isinstance(scores, dict):
        stacked = np.vstack([np.asarray(v, dtype=np.float64) for v in scores.values()])
        return stacked.std(axis=0)
    vals = np.asarray(list(scores), dtype=np.float64)
    if vals.size == 0:
        raise ConfigurationError("need at least one active modality")
    return float(vals.std())


def difficulty(conv_score, utt_loss):
    """Harmonic mean ``2sl/(s+l)``, defined as 0 where ``s + l == 0``."""
    s = np.asarray(conv_score, dtype=np.float64)
    l = np.asarray(utt_loss, dtype=np.float64)
    lo, hi = np.minimum(s, l), np.maximum(s, l)
    denom = s + l
    with np.errstate(divide="ignore", invalid="ignore"):
        # 2*lo*(hi/(s+l)): the ratio lies in [0.5, 1], so nothing underflows
        rho = np.where(denom > 0, 2.0 * lo * (hi / np.where(denom > 0, denom, 1.0)), 0.0)
    return float(rho) if rho.ndim == 0 else rho


def weigh(regularizer, rho, lam):
    """Sample weight in [0, 1] from difficulty ``rho`` and threshold ``lam``."""
    r = np.asarray(rho, dtype=np.float64)
    if regularizer == "hard":
        v = (r <= lam).astype(np.float64)
    elif regularizer == "linear":
        v = np.maximum(0.0, 1.0 - r / lam)
    elif regularizer == "logistic":
        with np.errstate(over="ignore"):
            v = (1.0 + np.exp(-lam)) / (1.0 + np.exp(r - lam))
        v = np.clip(v, 0.0, 1.0)
    else:
        raise ConfigurationError(f"unknown regularizer {regularizer!r}")
    return float(v) if v.ndim == 0 else v


def spcl_loss(utt_losses, weights):
    """Weighted mean loss over selected samples.

    Returns ``(loss, selected, skipped)``; when no weight is positive the loss
    is 0 and ``skipped`` is True.
    """
    l = np.asarray(utt_losses, dtype=np.float64)
    v = np.asarray(weights, dtype=np.float64)
    if l.shape != v.shape:
        raise ConfigurationError("losses and weights differ in shape")
    selected = float(v.sum())
    if selected <= 0.0:
        return 0.0, 0.0, True
    return float((v * l).sum() / selected), selected, False


def selected_count(regularizer, weights):
    """How many samples count as admitted: v == 1 for hard, v > 0.5 for soft."""
    v = np.asarray(weights)
    if regularizer == "hard":
        return int(np.count_nonzero(v == 1.0))
    return int(np.count_nonzero(v > SOFT_COUNT_THRESHOLD))


# ---------------------------------------------------------------------------
# pacing


class Pacing:
    kind = None
    needs_pool = False

    def initial(self, first_difficulties=None):
        raise NotImplementedError

    def next(self, prev, t, pool):
        raise NotImplementedError

    def params(self):
        return dict(vars(self))


class ExponentialPacing(Pacing):
    """``lambda_0 = epsilon``, then multiplied by ``alpha`` every epoch."""

    kind = "exponential"

    def __init__(self, epsilon=0.8, alpha=1.1):
        if not epsilon > 0:
            raise ConfigurationError("epsilon must be > 0")
        if not alpha > 1:
            raise ConfigurationError("alpha must be > 1")
        self.epsilon = float(epsilon)
        self.alpha = float(alpha)

    def initial(self, first_difficulties=None):
        return self.epsilon

    def next(self, prev, t, pool):
        return self.alpha * prev


class CosinePacing(Pacing):
    kind = "cosine"

    def __init__(self, lambda_min=0.2, lambda_max=2.0, total=50):
        if not 0 < lambda_min < lambda_max:
            raise ConfigurationError("cosine pacing needs 0 < lambda_min < lambda_max")
        if total < 1:
            raise ConfigurationError("cosine pacing needs total >= 1")
        self.lambda_min = float(lambda_min)
        self.lambda_max = float(lambda_max)
        self.total = int(total)

    def value(self, t):
        return self.lambda_min + (self.lambda_max - self.lambda_min) / 2.0 * (1.0 - math.cos(math.pi * t / self.total))

    def initial(self, first_difficulties=None):
        return self.value(0)

    def next(self, prev, t, pool):
        return self.value(t)


class MovingAveragePacing(Pacing):
    """Blend the previous threshold with last epoch's difficulties, then jump to their max at ``t0``.

    By default the blend uses the *mean* difficulty; ``literal_sum=True`` uses
    the raw sum instead.
    """

    kind = "moving_average"
    needs_pool = True

    def __init__(self, alpha=0.9, t0=25, epsilon=0.8, literal_sum=False):
        if not 0 <= alpha <= 1:
            raise ConfigurationError("moving-average alpha must lie in [0, 1]")
        if not epsilon > 0:
            raise ConfigurationError("epsilon must be > 0")
        self.alpha = float(alpha)
        self.t0 = int(t0)
        self.epsilon = float(epsilon)
        self.literal_sum = bool(literal_sum)

    def initial(self, first_difficulties=None):
        return self.epsilon

    def next(self, prev, t, pool):
        if t < self.t0:
            agg = pool.sum() if self.literal_sum else pool.mean()
            return self.alpha * prev + (1.0 - self.alpha) * agg
        return float(pool.max())


class CompetencePacing(Pacing):
    """Threshold is the ``c_t`` quantile of last epoch's difficulties, ``c_t`` rising to 1 at ``total``."""

    kind = "competence"
    needs_pool = True

    def __init__(self, c0=0.1, total=50):
        if not 0 < c0 <= 1:
            raise ConfigurationError("competence c0 must lie in (0, 1]")
        if total < 1:
            raise ConfigurationError("competence pacing needs total >= 1")
        self.c0 = float(c0)
        self.total = int(total)

    def competence(self, t):
        # 1 - (1 - t/T)(1 - c0^2) equals t(1 - c0^2)/T + c0^2 and is exactly 1 at t = T
        return min(1.0, math.sqrt(1.0 - (1.0 - t / self.total) * (1.0 - self.c0 ** 2)))

    def initial(self, first_difficulties=None):
        if first_difficulties is None:
            return None
        return float(np.quantile(first_difficulties, self.c0))

    def next(self, prev, t, pool):
        return float(np.quantile(pool, self.competence(t)))


PACINGS = {
    "exponential": ExponentialPacing,
    "cosine": CosinePacing,
    "moving_average": MovingAveragePacing,
    "competence": CompetencePacing,
}


def make_pacing(kind, **params):
    try:
        cls = PACINGS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown pacing {kind!r}; choose from {sorted(PACINGS)}") from None
    return cls(**params)


@dataclass
class Scheduler:
    """Threshold state advanced once per epoch.

    ``pool`` collects the difficulties seen during the current epoch; pools
    are consumed by data-driven pacings on :meth:`advance` and then cleared.
    """

    pacing: Pacing
    regularizer: str = "hard"
    difficulty_mode: str = "full"
    normalize_conv_score: bool = False
    epoch: int = 0
    lambda_value: float | None = None
    pool: list = field(default_factory=list)
    last_pool: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ConfigurationError(f"unknown regularizer {self.regularizer!r}")
        if self.difficulty_mode not in DIFFICULTY_MODES:
            raise ConfigurationError(f"unknown difficulty mode {self.difficulty_mode!r}")
        if self.lambda_value is None:
            self.lambda_value = self.pacing.initial()

    @property
    def competence(self):
        if isinstance(self.pacing, CompetencePacing):
            return self.pacing.competence(self.epoch)
        return None

    def threshold(self, difficulties):
        """Current threshold, bootstrapping data-driven pacings from the first batch seen."""
        if self.lambda_value is None:
            self.lambda_value = max(LAMBDA_FLOOR, self.pacing.initial(np.asarray(difficulties)))
        return self.lambda_value

    def observe(self, difficulties):
        self.pool.append(np.asarray(difficulties, dtype=np.float64))

    def pooled(self):
        return np.concatenate(self.pool) if self.pool else np.zeros(0)

    def advance(self):
        pool = self.pooled()
        t = self.epoch + 1
        if self.pacing.needs_pool and pool.size == 0:
            raise SchedulingError(f"{self.pacing.kind} pacing needs difficulties from epoch {self.epoch}")
        prev = self.lambda_value if self.lambda_value is not None else self.pacing.initial(pool)
        lam = self.pacing.next(prev, t, pool)
        if self.pacing.needs_pool:
            lam = max(LAMBDA_FLOOR, lam)
        self.last_pool = pool_summary(pool)
        self.lambda_value = float(lam)
        self.epoch = t
        self.pool = []
        return self

    def state(self):
        return {
            "lambda": self.lambda_value,
            "epoch": self.epoch,
            "pacing": self.pacing.kind,
            "pacing_params": self.pacing.params(),
            "regularizer": self.regularizer,
            "competence": self.competence,
            "pool": self.last_pool,
        }


def pool_summary(pool):
    if pool.size == 0:
        return {"count": 0}
    return {
        "count": int(pool.size),
        "mean": float(pool.mean()),
        "min": float(pool.min()),
        "max": float(pool.max()),
    }


# ---------------------------------------------------------------------------
# batch measurement


@dataclass
class DifficultyReport:
    conv_ids: list
    conv_index: np.ndarray
    utt_index: np.ndarray
    utt_loss: np.ndarray
    difficulty: np.ndarray
    weights: np.ndarray
    unimodal_scores: dict
    conv_score: np.ndarray
    lambda_value: float

    @property
    def per_utterance(self):
        return [
            (self.conv_ids[c], int(j), float(l), float(r), float(v))
            for c, j, l, r, v in zip(self.conv_index, self.utt_index, self.utt_loss, self.difficulty, self.weights)
        ]

    @property
    def per_conversation(self):
        return {
            cid: ({m: float(s[i]) for m, s in self.unimodal_scores.items()}, float(self.conv_score[i]))
            for i, cid in enumerate(self.conv_ids)
        }


def check_whole_conversations(batch):
    lengths = getattr(batch, "conv_lengths", None)
    counts = np.bincount(batch.conv_index, minlength=len(batch.conv_ids))
    for i in range(len(batch.conv_ids)):
        idx = np.sort(batch.utt_index[batch.conv_index == i])
        expected = counts[i] if lengths is None else lengths[i]
        if len(idx) != expected or not np.array_equal(idx, np.arange(expected)):
            raise SchedulingError(f"conversation {batch.conv_ids[i]!r} is split across batches")


def measure(unimodal, joint, batch, sched, lam=None):
    """Score every utterance of ``batch`` and derive its curriculum weight.

    ``lam`` overrides the scheduler threshold (used when curriculum is off).
    Difficulties are appended to the scheduler's pool.
    """
    check_whole_conversations(batch)
    losses = utterance_loss(joint, batch.labels)
    scores = unimodal_scores(unimodal, batch.labels, batch.conv_index, len(batch.conv_ids), sched.normalize_conv_score)
    conv = conversation_score(scores)
    s_utt = conv[batch.conv_index]
    if sched.difficulty_mode == "full":
        rho = difficulty(s_utt, losses)
    elif sched.difficulty_mode == "conversation":
        rho = s_utt.copy()
    else:
        rho = losses.copy()
    rho = np.atleast_1d(rho)
    if lam is None:
        lam = sched.threshold(rho)
    weights = np.atleast_1d(weigh(sched.regularizer, rho, lam))
    sched.observe(rho)
    return DifficultyReport(
        conv_ids=list(batch.conv_ids),
        conv_index=batch.conv_index,
        utt_index=batch.utt_index,
        utt_loss=losses,
        difficulty=rho,
        weights=weights,
        unimodal_scores=scores,
        conv_score=conv,
        lambda_value=float(lam),
    )
