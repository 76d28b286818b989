import csv
import json
import math

import numpy as np
import pytest
from sklearn.metrics import accuracy_score, f1_score

from spclmerc.dataset import Corpus, SynthConfig, generate
from spclmerc.exceptions import ConfigurationError, EvaluationError, TrainingError
from spclmerc.fusion import ModalModel
from spclmerc.nncore import Optimizer
from spclmerc.trainer import CSV_COLUMNS, TrainConfig, evaluate, make_scheduler, run, train_epoch


def cfg(**kw):
    base = dict(epochs=3, batch_size=4, learning_rate=3e-3, hidden=(8,), seed=1)
    base.update(kw)
    return TrainConfig(**base)


def outcome(runlog):
    """Every logged training outcome; lambda is excluded since it is inf when curriculum is off."""
    rows = []
    for r in runlog.records:
        d = r.diagnostics
        rows.append((r.train_loss, r.val_accuracy, r.val_weighted_f1, d.expanding_rate, d.selected, d.total,
                     tuple(sorted(d.modality_ratio.items())), d.mean_difficulty, d.skipped_batches))
    return rows, runlog.test["weighted_f1"], runlog.test["accuracy"], runlog.best_epoch


def test_disabled_equals_infinite_lambda(small_corpus):
    off = run(cfg(spcl_enabled=False), small_corpus)
    inf = run(cfg(epsilon=1e18), small_corpus)
    assert outcome(off) == outcome(inf)
    for a, b in zip(off.model.parameters(), inf.model.parameters()):
        assert a.tobytes() == b.tobytes()


def test_all_masked_epoch_leaves_model_unchanged(small_corpus):
    c = cfg(epochs=1, batch_size=100, epsilon=1e-15)
    train = small_corpus.split("train")
    model = ModalModel.build(small_corpus.modality_dims, small_corpus.class_count, hidden=(8,), seed=1)
    before = [p.copy() for p in model.parameters()]
    _, diag = train_epoch(model, train, make_scheduler(c), Optimizer("adam", 1e-2), c)
    assert diag.skipped_batches == 1 and diag.selected == 0
    for a, b in zip(before, model.parameters()):
        np.testing.assert_array_equal(a, b)


def test_two_epoch_exponential_trace(small_corpus):
    log = run(cfg(epochs=2, epsilon=0.8, alpha=1.1), small_corpus)
    assert [r.diagnostics.lambda_value for r in log.records] == [0.8, 0.8 * 1.1]
    assert log.lambda_trace[:2] == [0.8, 0.8 * 1.1]


def test_cosine_and_competence_traces(small_corpus):
    log = run(cfg(epochs=4, pacing="cosine", lambda_min=0.3, lambda_max=1.7), small_corpus)
    assert log.lambda_trace[0] == 0.3 and log.lambda_trace[-1] == pytest.approx(1.7, rel=1e-12)
    log = run(cfg(epochs=4, pacing="competence", c0=0.2), small_corpus)
    assert log.competence_trace[0] == pytest.approx(0.2) and log.competence_trace[-1] == 1.0
    assert all(l > 0 for l in log.lambda_trace)


def test_moving_average_run_notes(small_corpus):
    log = run(cfg(pacing="moving_average", ma_t0=2), small_corpus)
    assert any("mean" in n for n in log.notes)
    assert len(log.lambda_trace) == 4


def test_evaluate_is_deterministic_and_pure(small_corpus):
    model = ModalModel.build(small_corpus.modality_dims, small_corpus.class_count, seed=0)
    before = [p.copy() for p in model.parameters()]
    valid = small_corpus.split("valid")
    a, b = evaluate(model, valid), evaluate(model, valid)
    np.testing.assert_array_equal(a.confusion, b.confusion)
    assert (a.accuracy, a.weighted_f1, a.mean_true_prob) == (b.accuracy, b.weighted_f1, b.mean_true_prob)
    for x, y in zip(before, model.parameters()):
        np.testing.assert_array_equal(x, y)


def test_evaluate_matches_external_metrics(small_corpus):
    model = ModalModel.build(small_corpus.modality_dims, small_corpus.class_count, seed=0)
    res = evaluate(model, small_corpus.split("test"))
    assert res.accuracy == pytest.approx(accuracy_score(res.labels, res.predictions), abs=1e-12)
    ref = f1_score(res.labels, res.predictions, labels=range(small_corpus.class_count), average="weighted",
                   zero_division=0)
    assert res.weighted_f1 == pytest.approx(ref, abs=1e-12)


def test_separable_data_reaches_full_accuracy():
    corpus = generate(SynthConfig(snr={"audio": 8.0, "text": 8.0, "visual": 8.0}, conversation_count=40,
                                  valid_count=10, test_count=10, seed=2))
    log = run(TrainConfig(epochs=15, learning_rate=3e-3, seed=2), corpus)
    assert log.test["accuracy"] > 0.98


def test_evaluate_empty_split(small_corpus):
    model = ModalModel.build(small_corpus.modality_dims, small_corpus.class_count, seed=0)
    with pytest.raises(EvaluationError):
        evaluate(model, Corpus([], small_corpus.class_count, small_corpus.modality_dims))


def test_single_epoch_log(small_corpus, tmp_path):
    log = run(cfg(epochs=1), small_corpus, tmp_path)
    assert len(log.records) == 1
    rows = list(csv.reader((tmp_path / "epochs.csv").open()))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 2
    doc = json.loads((tmp_path / "run.json").read_text())
    assert doc["config"]["epochs"] == 1 and len(doc["epochs"]) == 1
    assert (tmp_path / "model.npz").is_file()


def test_runs_are_reproducible(small_corpus, tmp_path):
    run(cfg(), small_corpus, tmp_path / "a")
    run(cfg(), small_corpus, tmp_path / "b")
    assert (tmp_path / "a" / "epochs.csv").read_bytes() == (tmp_path / "b" / "epochs.csv").read_bytes()


def test_best_checkpoint_is_reported(small_corpus):
    log = run(cfg(epochs=4), small_corpus)
    f1s = [r.val_weighted_f1 for r in log.records]
    assert log.best_epoch == f1s.index(max(f1s))
    res = evaluate(log.model, small_corpus.split("valid"))
    assert res.weighted_f1 == max(f1s)


def test_holdout_when_no_valid_split():
    corpus = generate(SynthConfig(conversation_count=20, valid_count=0, test_count=3, seed=4))
    log = run(cfg(epochs=1), corpus)
    assert log.records[0].val_weighted_f1 is not None
    assert any("held out 2" in n for n in log.notes)


def test_unimodal_and_bimodal_runs(small_corpus):
    for mods in (("text",), ("audio", "visual")):
        log = run(cfg(epochs=2, modalities=mods), small_corpus)
        assert set(log.records[-1].diagnostics.modality_ratio) == set(mods)
    rows = run(cfg(epochs=1, modalities=("text",)), small_corpus).csv_text().splitlines()
    assert rows[1].split(",")[6] == ""  # ratio_audio missing


def test_nan_aborts_with_diagnostic(small_corpus, tmp_path):
    bad = generate(SynthConfig(class_count=3, modality_dims=small_corpus.modality_dims, conversation_count=4,
                               valid_count=2, test_count=0, seed=1))
    bad.conversations[0].features["text"][0, 0] = np.nan
    with pytest.raises(TrainingError) as info:
        run(cfg(epochs=1, batch_size=8), bad, tmp_path)
    assert "batch" in info.value.diagnostic and "lambda" in info.value.diagnostic
    doc = json.loads((tmp_path / "run.json").read_text())
    assert doc["aborted"]["batch"] == 0


@pytest.mark.parametrize(
    "kw",
    [dict(epochs=0), dict(learning_rate=0.0), dict(modalities=()), dict(modalities=("smell",)),
     dict(alpha=1.0), dict(regularizer="soft"), dict(pacing="step")],
)
def test_config_validation(kw, small_corpus):
    with pytest.raises(ConfigurationError):
        run(cfg(**kw), small_corpus)
