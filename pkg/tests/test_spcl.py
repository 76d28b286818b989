import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spclmerc.dataset import MODALITIES, Batch
from spclmerc.exceptions import ConfigurationError, SchedulingError
from spclmerc.fusion import ModalModel, fuse, unimodal_logits
from spclmerc.spcl import (
    CompetencePacing,
    CosinePacing,
    ExponentialPacing,
    MovingAveragePacing,
    Scheduler,
    conversation_score,
    difficulty,
    measure,
    selected_count,
    spcl_loss,
    unimodal_scores,
    weigh,
)

from gradcheck import check, random_instance
from oracles import naive_difficulty_report


def test_uniform_logits_score():
    z = {m: np.zeros((3, 4)) for m in MODALITIES}
    s = unimodal_scores(z, [0, 1, 3], [0, 0, 0])
    for m in MODALITIES:
        assert s[m][0] == pytest.approx(0.75, abs=1e-15)


def test_saturated_logits_score():
    labels = np.array([2, 0, 1, 1])
    z = np.full((4, 3), -50.0)
    z[np.arange(4), labels] = 50.0
    s = unimodal_scores({"text": z}, labels, [0, 0, 0, 0])
    assert s["text"][0] == pytest.approx(4.0, abs=1e-12)


def test_scores_match_indicator_loops(rng):
    for _ in range(10):
        n = 7
        conv = np.array([0, 0, 0, 1, 1, 1, 1])
        z = {m: rng.standard_normal((n, 5)) * 3 for m in MODALITIES}
        labels = rng.integers(0, 5, size=n)
        fast = unimodal_scores(z, labels, conv)
        ref = naive_difficulty_report(z, labels.tolist(), conv, 1.0)["scores"]
        for c in (0, 1):
            for m in MODALITIES:
                assert abs(fast[m][c] - ref[c][m]) <= 1e-12


def test_normalized_scores_divide_by_length(rng):
    z = {"text": rng.standard_normal((5, 3))}
    labels, conv = rng.integers(0, 3, size=5), np.array([0, 0, 1, 1, 1])
    raw = unimodal_scores(z, labels, conv)["text"]
    norm = unimodal_scores(z, labels, conv, normalize=True)["text"]
    np.testing.assert_allclose(norm, raw / [2, 3])


def test_conversation_score_examples():
    assert conversation_score([2.0, 2.0, 2.0]) == 0.0
    assert conversation_score([0.0, 0.0, 3.0]) == pytest.approx(math.sqrt(2), abs=1e-12)
    assert conversation_score([1.7]) == 0.0
    vec = conversation_score({"a": np.array([0.0, 2.0]), "t": np.array([0.0, 2.0]), "v": np.array([3.0, 2.0])})
    np.testing.assert_allclose(vec, [math.sqrt(2), 0.0])


def test_difficulty_examples():
    assert difficulty(1.0, 1.0) == 1.0
    assert difficulty(0.0, 5.0) == 0.0
    assert difficulty(0.0, 0.0) == 0.0
    assert difficulty(0.5, 2.0) == pytest.approx(0.8, abs=1e-15)


def test_weigh_examples():
    assert weigh("hard", 0.7, 0.7) == 1.0
    assert weigh("hard", 0.7000001, 0.7) == 0.0
    assert weigh("linear", 0.0, 1.3) == 1.0
    assert weigh("linear", 1.3, 1.3) == 0.0
    assert weigh("logistic", 0.0, 2.0) == 1.0
    with pytest.raises(ConfigurationError):
        weigh("cubic", 0.1, 1.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1e3), st.floats(1e-6, 1e3))
def test_hard_dominates_linear_and_logistic_bounded(rho, lam):
    assert weigh("hard", rho, lam) >= weigh("linear", rho, lam)
    v = weigh("logistic", rho, lam)
    assert 0.0 <= v <= 1.0
    if rho - lam < 700:  # beyond this exp underflows the weight to exactly 0
        assert v > 0.0


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_harmonic_mean_bounds(s, l):
    rho = difficulty(s, l)
    assert rho >= 0
    assert rho <= 2 * min(s, l) * (1 + 1e-12)
    if s + l > 0:
        assert min(s, l) * (1 - 1e-12) <= rho <= max(s, l) * (1 + 1e-12)


def test_spcl_loss_examples():
    l = np.array([0.3, 1.2, 2.5])
    assert spcl_loss(l, np.ones(3))[0] == pytest.approx(l.mean(), abs=1e-15)
    assert spcl_loss([0.5, 99.0], [1.0, 0.0]) == (0.5, 1.0, False)
    loss, sel, skip = spcl_loss([2.0, 4.0], [0.5, 0.25])
    assert loss == pytest.approx(2.666667, abs=1e-6) and sel == 0.75 and not skip
    assert spcl_loss([1.0, 2.0], [0.0, 0.0]) == (0.0, 0.0, True)


def test_selected_count_thresholds():
    assert selected_count("hard", [1.0, 0.0, 1.0]) == 2
    assert selected_count("linear", [0.51, 0.5, 0.9, 0.0]) == 2


def test_exponential_closed_form():
    sched = Scheduler(ExponentialPacing(0.8, 1.1))
    assert sched.lambda_value == 0.8
    for _ in range(3):
        sched.advance()
    assert sched.lambda_value == pytest.approx(1.0648, rel=1e-12)
    for t in range(4, 60):
        sched.advance()
        assert sched.lambda_value == pytest.approx(0.8 * 1.1 ** t, rel=1e-12)


def test_cosine_endpoints():
    p = CosinePacing(0.3, 2.5, total=10)
    sched = Scheduler(p)
    assert sched.lambda_value == 0.3
    for _ in range(10):
        sched.advance()
    assert sched.lambda_value == pytest.approx(2.5, rel=1e-12)
    assert p.value(5) == pytest.approx(1.4, rel=1e-12)


def test_competence_reaches_pool_max():
    p = CompetencePacing(c0=0.2, total=4)
    sched = Scheduler(p)
    assert sched.lambda_value is None
    gen = np.random.default_rng(0)
    first = gen.random(20)
    assert sched.threshold(first) == pytest.approx(np.quantile(first, 0.2))
    for t in range(1, 5):
        pool = gen.random(30)
        sched.observe(pool)
        sched.advance()
        assert sched.lambda_value == pytest.approx(np.quantile(pool, p.competence(t)))
    assert p.competence(4) == 1.0
    assert sched.lambda_value == pytest.approx(pool.max())


def test_moving_average_mean_and_literal_sum():
    pool = np.array([0.2, 0.4, 0.9])
    for literal, agg in ((False, pool.mean()), (True, pool.sum())):
        sched = Scheduler(MovingAveragePacing(alpha=0.7, t0=2, epsilon=0.5, literal_sum=literal))
        sched.observe(pool)
        sched.advance()
        assert sched.lambda_value == pytest.approx(0.7 * 0.5 + 0.3 * agg)
        sched.observe(pool)
        sched.advance()
        assert sched.lambda_value == pytest.approx(0.9)


def test_data_driven_pacing_needs_pool():
    for p in (MovingAveragePacing(), CompetencePacing()):
        with pytest.raises(SchedulingError):
            Scheduler(p, lambda_value=0.5).advance()


def test_pool_resets_after_advance():
    sched = Scheduler(MovingAveragePacing())
    sched.observe([0.1, 0.2])
    sched.advance()
    assert sched.pool == [] and sched.last_pool["count"] == 2


def test_lambda_stays_positive_on_all_zero_pool():
    sched = Scheduler(CompetencePacing(c0=0.5, total=3))
    assert sched.threshold(np.zeros(4)) > 0
    sched.observe(np.zeros(4))
    sched.advance()
    assert sched.lambda_value > 0


@pytest.mark.parametrize(
    "factory",
    [
        lambda: ExponentialPacing(0.8, 1.0),
        lambda: ExponentialPacing(0.0, 1.1),
        lambda: CosinePacing(2.0, 1.0),
        lambda: CompetencePacing(c0=0.0),
        lambda: CompetencePacing(c0=1.5),
    ],
)
def test_pacing_validation(factory):
    with pytest.raises(ConfigurationError):
        factory()


def batch_and_logits(rng, corpus, model, k=4):
    idx = rng.choice(len(corpus), size=k, replace=False)
    batch = Batch.from_conversations([corpus.conversations[i] for i in idx])
    uni = unimodal_logits(model, batch.features)
    return batch, uni, fuse(uni)


def test_aligned_modalities_are_easy(small_corpus):
    batch = Batch.from_conversations(small_corpus.conversations[:4])
    same = np.random.default_rng(1).standard_normal((len(batch), small_corpus.class_count))
    uni = {m: same.copy() for m in MODALITIES}
    report = measure(uni, fuse(uni), batch, Scheduler(ExponentialPacing(1e-9, 1.1)))
    assert np.all(report.conv_score == 0) and np.all(report.difficulty == 0) and np.all(report.weights == 1)


def test_huge_lambda_selects_everything(rng, small_corpus):
    model = ModalModel.build(small_corpus.modality_dims, small_corpus.class_count, seed=3)
    batch, uni, joint = batch_and_logits(rng, small_corpus, model)
    report = measure(uni, joint, batch, Scheduler(ExponentialPacing(1e18, 1.1)))
    assert np.all(report.weights == 1.0)


@pytest.mark.parametrize("regularizer", ["hard", "linear", "logistic"])
@pytest.mark.parametrize("mode", ["full", "conversation", "utterance"])
def test_measure_matches_unbatched_oracle(rng, small_corpus, regularizer, mode):
    model = ModalModel.build(small_corpus.modality_dims, small_corpus.class_count, hidden=(6,), seed=5)
    for _ in range(3):
        batch, uni, joint = batch_and_logits(rng, small_corpus, model)
        lam = float(rng.uniform(0.05, 2.0))
        sched = Scheduler(ExponentialPacing(lam, 1.1), regularizer=regularizer, difficulty_mode=mode)
        report = measure(uni, joint, batch, sched)
        ref = naive_difficulty_report(uni, batch.labels.tolist(), batch.conv_index, lam, regularizer, mode)
        np.testing.assert_allclose(report.utt_loss, ref["utt_loss"], rtol=0, atol=1e-10)
        np.testing.assert_allclose(report.difficulty, ref["difficulty"], rtol=0, atol=1e-10)
        np.testing.assert_allclose(report.weights, ref["weights"], rtol=0, atol=1e-10)
        for c in range(len(batch.conv_ids)):
            assert abs(report.conv_score[c] - ref["conv_score"][c]) <= 1e-10
        assert len(sched.pool) == 1 and sched.pool[0].shape == (len(batch),)


def test_report_views(rng, small_corpus):
    model = ModalModel.build(small_corpus.modality_dims, small_corpus.class_count, seed=3)
    batch, uni, joint = batch_and_logits(rng, small_corpus, model)
    report = measure(uni, joint, batch, Scheduler(ExponentialPacing(0.5, 1.1)))
    rows = report.per_utterance
    assert len(rows) == len(batch)
    assert sorted((c, j) for c, j, *_ in rows) == sorted(
        (batch.conv_ids[c], int(j)) for c, j in zip(batch.conv_index, batch.utt_index)
    )
    for cid, (scores, s) in report.per_conversation.items():
        n = int(batch.conv_lengths[batch.conv_ids.index(cid)])
        assert set(scores) == set(MODALITIES)
        assert all(0 <= v <= n for v in scores.values())
    for _, _, l, r, v in rows:
        assert v in (0.0, 1.0)


def test_split_conversation_detected(small_corpus):
    batch = Batch.from_conversations(small_corpus.conversations[:2])
    keep = np.ones(len(batch), dtype=bool)
    keep[0] = False
    partial = Batch(batch.conv_ids, {m: x[keep] for m, x in batch.features.items()}, batch.labels[keep],
                    batch.conv_index[keep], batch.utt_index[keep], batch.conv_lengths)
    model = ModalModel.build(small_corpus.modality_dims, small_corpus.class_count, seed=3)
    uni = unimodal_logits(model, partial.features)
    with pytest.raises(SchedulingError, match="split"):
        measure(uni, fuse(uni), partial, Scheduler(ExponentialPacing()))


def test_monotone_selection_frozen_difficulties(rng):
    rho = rng.exponential(1.0, size=500)
    prev, prev_rate = None, -1.0
    for lam in np.linspace(0.01, 5, 40):
        sel = set(np.flatnonzero(weigh("hard", rho, lam)))
        if prev is not None:
            assert prev <= sel
        rate = len(sel) / len(rho)
        assert rate >= prev_rate
        prev, prev_rate = sel, rate


def test_spcl_loss_gradient_with_masks(rng):
    for _ in range(5):
        model, feats, labels, weights = random_instance(rng)
        assert check(model, feats, labels, weights) < 1e-4
