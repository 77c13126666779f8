import math

import numpy as np
import pytest

from prefopt import autodiff as ad
from prefopt import evalkit
from prefopt.errors import DataValidationError, DimensionError
from prefopt.ifmodel.network import init_params
from prefopt.paratope import (
    LabeledExample,
    ParatopeHead,
    ResidueLabels,
    evaluate_head,
    head_forward,
    head_logits,
    init_head,
    labeled_examples,
    load_labels,
    masked_bce,
    train_head,
)

from conftest import SMALL_DIMS, separable_examples


def test_zero_head_outputs_half():
    head = init_head(d=8, init="zeros")
    p = head_forward(np.random.default_rng(0).normal(size=(5, 8)), head)
    assert p.shape == (5,) and np.all(p == 0.5)
    logits = head_logits(np.ones((5, 8)), head)
    assert masked_bce(logits, np.array([0, 1, 0, 1, 1.0]), np.ones(5)).item() == pytest.approx(math.log(2), abs=1e-15)


def test_width_mismatch():
    with pytest.raises(DimensionError):
        head_forward(np.ones((3, 7)), init_head(d=8))


def test_head_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 5))
    labels = np.array([1, 0, 1, 1, 0, 0.0])
    mask = np.array([1, 1, 0, 1, 1, 1.0])
    head = init_head(d=5, hidden=4, seed=2)

    def build(t):
        return masked_bce(head_logits(x, ParatopeHead(t["w1"], t["b1"], t["w2"], t["b2"])), labels, mask)

    values = {"w1": head.w1.data, "b1": rng.normal(size=4), "w2": head.w2.data, "b2": np.array([0.3])}
    report = ad.grad_check(build, values)
    assert report.passed, report.max_rel_error


def test_separable_fixture_is_learned_without_touching_base():
    base = init_params(SMALL_DIMS, seed=0)
    digest = base.digest()
    examples = separable_examples(0, n_antibodies=9)  # one hidden direction for all antibodies
    train_set, test_set = examples[:6], examples[6:]
    fit = train_head(train_set, init_head(d=16, seed=0), epochs=300, lr=1e-2, base_params=base)
    assert fit.losses[-1] < fit.losses[0]
    ev = evaluate_head(fit.head, test_set)
    assert ev.roc_auc >= 0.99 and ev.average_precision >= 0.99
    assert base.digest() == digest


def test_pooled_metrics_match_concatenated_vectors():
    examples = separable_examples(3, n_antibodies=3)
    head = init_head(d=16, seed=4)
    ev = evaluate_head(head, examples)
    scores = np.concatenate([head_forward(e.embeddings, head)[e.labels.mask == 1] for e in examples])
    labels = np.concatenate([e.labels.labels[e.labels.mask == 1] for e in examples]).astype(int)
    assert ev.roc_auc == evalkit.roc_auc(labels, scores)
    assert ev.average_precision == evalkit.average_precision(labels, scores)


def test_auc_unchanged_by_logistic_link():
    examples = separable_examples(5, n_antibodies=2)
    head = init_head(d=16, seed=1)
    x = np.concatenate([e.embeddings for e in examples])
    y = np.concatenate([e.labels.labels for e in examples]).astype(int)
    logits = head_logits(x, head).data
    assert evalkit.roc_auc(y, logits) == evalkit.roc_auc(y, head_forward(x, head))


def test_single_class_is_rejected():
    x = np.zeros((4, 3))
    ex = LabeledExample("a", x, ResidueLabels(np.ones(4)))
    with pytest.raises(DataValidationError):
        train_head([ex], init_head(d=3))


def test_label_validation():
    with pytest.raises(DataValidationError):
        ResidueLabels(np.array([0, 2]))
    with pytest.raises(DimensionError):
        LabeledExample("a", np.zeros((3, 2)), ResidueLabels(np.zeros(4)))


def test_label_file_join(tmp_path, small_synth):
    dataset, _ = small_synth
    s = dataset.structures["synth0"]
    good = tmp_path / "l.csv"
    good.write_text("antibody_id,chain_id,residue_index,label\nsynth0,H,1,1\nsynth0,H,2,0\n")
    labels = load_labels(good, dataset.structures)
    assert list(labels) == ["synth0"]
    assert labels["synth0"].mask.sum() == 2 and labels["synth0"].labels[0] == 1
    assert len(labels["synth0"]) == len(s)
    ex = labeled_examples(init_params(SMALL_DIMS), dataset.structures, labels)
    assert ex[0].embeddings.shape == (len(s), SMALL_DIMS.d)
    bad = tmp_path / "b.csv"
    bad.write_text("antibody_id,chain_id,residue_index,label\nsynth0,H,99,1\nmissing,H,1,0\n")
    with pytest.raises(DataValidationError) as err:
        load_labels(bad, dataset.structures)
    assert len(err.value.problems) == 2
