import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefopt import evalkit
from prefopt.errors import DataValidationError, DomainError, UndefinedMetricError

from oracles import ap_oracle, auc_oracle, precision_oracle, ranks_oracle, spearman_oracle


def tied_values(rng, n):
    return rng.integers(0, max(2, n // 2), n).astype(float)


# ------------------------------------------------------------ spearman


def test_ranks_with_ties():
    assert list(evalkit.average_ranks([10, 20, 10, 30])) == [1.5, 3.0, 1.5, 4.0]


def test_spearman_matches_oracle_with_ties(rng):
    for _ in range(200):
        n = int(rng.integers(2, 25))
        xs, ys = tied_values(rng, n), rng.normal(size=n)
        if len(set(xs)) == 1:
            continue
        assert abs(evalkit.spearman(xs, ys) - spearman_oracle(xs, ys)) <= 1e-12


def test_spearman_edge_cases():
    assert evalkit.spearman([1, 2, 3], [10, 20, 30]) == 1.0
    assert evalkit.spearman([1, 2, 3], [3, 2, 1]) == -1.0
    with pytest.raises(UndefinedMetricError):
        evalkit.spearman([1.0], [2.0])
    with pytest.raises(UndefinedMetricError):
        evalkit.spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(DomainError):
        evalkit.spearman([1, 2], [1, 2, 3])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=30), st.integers(0, 2**31))
def test_spearman_invariant_under_monotone_maps(xs, seed):
    ys = np.random.default_rng(seed).normal(size=len(xs))
    if len(set(xs)) < 2:
        return
    base = evalkit.spearman(xs, ys)
    # integer inputs keep every distinct value distinct after the transform
    assert evalkit.spearman(np.exp(np.asarray(xs) / 100.0), ys) == pytest.approx(base, abs=1e-12)
    assert evalkit.spearman(xs, 3 * ys + 1) == pytest.approx(base, abs=1e-12)


# ------------------------------------------------------------ fold change


def test_fold_change_landmarks(rng):
    assert evalkit.fold_change(8.0, 7.0) == 10.0
    for pkd in rng.uniform(3, 12, 1000):
        up = pkd + 1.0
        if up - pkd == 1.0:  # the step itself is exact in binary
            assert evalkit.fold_change(up, pkd) == 10.0
        assert abs(evalkit.fold_change(up, pkd) * evalkit.fold_change(pkd, up) - 1.0) <= 1e-12
    with pytest.raises(DomainError):
        evalkit.fold_change(float("nan"), 1.0)


def test_delta_g_from_kd():
    ctx = evalkit.ThermoContext()
    assert evalkit.delta_g_from_kd(1.0, ctx) == 0.0
    assert evalkit.delta_g_from_kd(1e-9, ctx) == pytest.approx(1.9872e-3 * 298.15 * math.log(1e-9), rel=1e-15)
    with pytest.raises(DomainError):
        evalkit.delta_g_from_kd(0.0)


# ------------------------------------------------------------ precision@k


def test_precision_at_k_matches_oracle(rng):
    for _ in range(200):
        n = int(rng.integers(1, 30))
        ids = [f"v{i:03d}" for i in rng.permutation(n)]
        model = tied_values(rng, n)
        binding = rng.uniform(6, 9, n)
        table = evalkit.RankedTable(ids, model, binding, 7.0)
        with pytest.warns(UserWarning) if n < 10 else _nullcontext():
            got = evalkit.precision_at_k(table, 10, 10.0)
        assert got == precision_oracle(ids, model, binding, 7.0, 10, 10.0)


class _nullcontext:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def test_precision_needs_pkd_and_wildtype():
    t = evalkit.RankedTable(["a", "b"], [1, 2], [1, 2], None)
    with pytest.raises(DomainError) as err:
        evalkit.precision_at_k(t)
    assert err.value.code == "MET003"
    t = evalkit.RankedTable(["a", "b"], [1, 2], [1, 2], 1.0, "log_enrichment")
    with pytest.raises(DomainError) as err:
        evalkit.precision_at_k(t)
    assert err.value.code == "MET002"


def test_ties_broken_by_variant_id():
    t = evalkit.RankedTable(["b", "a", "c"], [1.0, 1.0, 0.0], [9.0, 7.0, 9.0], 7.0)
    assert evalkit.precision_at_k(t, k=1) == 0.0  # "a" wins the tie
    with pytest.raises(DataValidationError):
        evalkit.RankedTable(["a", "a"], [1, 2], [1, 2])


# ------------------------------------------------------------ ROC / PR


def test_auc_and_ap_match_oracles(rng):
    for _ in range(200):
        n = int(rng.integers(2, 30))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = tied_values(rng, n)
        assert abs(evalkit.roc_auc(labels, scores) - auc_oracle(labels, scores)) <= 1e-12
        assert abs(evalkit.average_precision(labels, scores) - ap_oracle(list(labels), list(scores))) <= 1e-12


def test_roc_landmarks():
    labels = [0, 0, 1, 1]
    assert evalkit.roc_auc(labels, [0.1, 0.2, 0.8, 0.9]) == 1.0
    assert evalkit.roc_auc(labels, [0.5] * 4) == 0.5
    thr, tpr, fpr = evalkit.roc_curve(labels, [0.1, 0.2, 0.8, 0.9])
    assert list(tpr) == [0.0, 0.5, 1.0, 1.0, 1.0] and list(fpr) == [0.0, 0.0, 0.0, 0.5, 1.0]
    with pytest.raises(UndefinedMetricError):
        evalkit.roc_auc([1, 1], [0.1, 0.2])


def test_pr_without_positives_is_flagged():
    curve = evalkit.pr_curve([0, 0, 0], [0.3, 0.2, 0.1])
    assert curve.average_precision == 0.0 and curve.flags


def test_roc_auc_invariant_under_monotone_transform(rng):
    labels = rng.integers(0, 2, 40)
    labels[:2] = [0, 1]
    scores = rng.normal(size=40)
    assert evalkit.roc_auc(labels, scores) == evalkit.roc_auc(labels, np.tanh(scores) * 5 + 2)


# ------------------------------------------------------------ reports


def test_report_rows_and_writers(tmp_path, rng):
    tables = {}
    for a in ("x", "y"):
        n = 15
        tables[a] = evalkit.RankedTable([f"{a}{i}" for i in range(n)], rng.normal(size=n), rng.uniform(6, 9, n), 7.0)
    tables["z"] = evalkit.RankedTable(["z0"], [1.0], [5.0], 7.0)
    rows = evalkit.report_from_tables(tables)
    by = {r.assay_id: r for r in rows}
    for a in ("x", "y"):
        t = tables[a]
        assert by[a].spearman == evalkit.spearman(t.model_scores, t.binding_scores)
    assert by["z"].spearman is None and by["z"].flags
    assert by["MEAN"].spearman == pytest.approx((by["x"].spearman + by["y"].spearman) / 2, abs=1e-15)
    assert by["MEAN"].n == 31
    evalkit.write_report_csv(rows, tmp_path / "r.csv")
    evalkit.write_report_json(rows, tmp_path / "r.json")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "assay_id,n,spearman,precision_at_10,flags"
    assert json.loads((tmp_path / "r.json").read_text())[0]["assay_id"] == "x"
