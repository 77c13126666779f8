"""Ranking and classification metrics, fold change, and per-assay reports."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from prefopt.errors import DataValidationError, DomainError, UndefinedMetricError

GAS_CONSTANT_KCAL = 1.9872e-3  # kcal / (mol K)
REPORT_COLUMNS = ("assay_id", "n", "spearman", "precision_at_10", "flags")
AGGREGATE_ID = "MEAN"


def average_ranks(values):
    """1-based ranks with ties replaced by the mean of the ranks they span."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    start = 0
    n = len(values)
    while start < n:
        stop = start + 1
        while stop < n and sorted_vals[stop] == sorted_vals[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + stop + 1)
        start = stop
    return ranks


def spearman(xs, ys):
    """Pearson correlation of average ranks."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise DomainError(f"spearman: inputs must be 1-D of equal length, got {xs.shape} and {ys.shape}")
    if len(xs) < 2:
        raise UndefinedMetricError("spearman: need at least 2 observations")
    rx = average_ranks(xs)
    ry = average_ranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    sxx, syy = np.dot(rx, rx), np.dot(ry, ry)
    if sxx == 0 or syy == 0:
        raise UndefinedMetricError("spearman: zero rank variance")
    rho = np.dot(rx, ry) / math.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, rho)))


def fold_change(pkd_mut, pkd_wt):
    """Kd(wild type) / Kd(mutant) = 10 ** (pKd_mut - pKd_wt)."""
    if not (math.isfinite(pkd_mut) and math.isfinite(pkd_wt)):
        raise DomainError("fold_change: non-finite pKd")
    return 10.0 ** (pkd_mut - pkd_wt)


# --------------------------------------------------------------- top-k


@dataclass
class RankedTable:
    variant_ids: list
    model_scores: np.ndarray
    binding_scores: np.ndarray
    pkd_wildtype: float = None
    score_type: str = "neg_log_kd"

    def __post_init__(self):
        self.model_scores = np.asarray(self.model_scores, dtype=np.float64)
        self.binding_scores = np.asarray(self.binding_scores, dtype=np.float64)
        if len(set(self.variant_ids)) != len(self.variant_ids):
            raise DataValidationError("ranked table: variant ids must be unique")
        if not len(self.variant_ids) == len(self.model_scores) == len(self.binding_scores):
            raise DataValidationError("ranked table: column lengths differ")
        if not np.all(np.isfinite(self.binding_scores)):
            raise DataValidationError("ranked table: binding scores must be finite")

    def __len__(self):
        return len(self.variant_ids)


def top_k_order(model_scores, variant_ids):
    """Indices sorted by model score descending, ties by ascending variant id."""
    return sorted(range(len(variant_ids)), key=lambda i: (-model_scores[i], variant_ids[i]))


def precision_at_k(table: RankedTable, k=10, threshold_fold=10.0):
    """Share of the top-k model-ranked variants whose fold change reaches the threshold."""
    if table.score_type != "neg_log_kd":
        raise DomainError(f"precision_at_k: refusing {table.score_type} assay; fold change needs pKd scores",
                          code="MET002")
    if table.pkd_wildtype is None:
        raise DomainError("precision_at_k: wild-type pKd required", code="MET003")
    if len(table) == 0:
        raise UndefinedMetricError("precision_at_k: empty table")
    if len(table) < k:
        warnings.warn(f"precision_at_k: only {len(table)} rows, computing over all of them", stacklevel=2)
    top = top_k_order(table.model_scores, table.variant_ids)[:k]
    hits = sum(fold_change(table.binding_scores[i], table.pkd_wildtype) >= threshold_fold for i in top)
    return hits / len(top)


# ----------------------------------------------------------- ROC / PR


def _check_binary(labels, scores):
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise DomainError("labels and scores must be 1-D of equal length")
    if not np.all((labels == 0) | (labels == 1)):
        raise DomainError("labels must be 0/1")
    return labels.astype(bool), scores


def roc_auc(labels, scores):
    """Mann-Whitney estimate of P(score_pos > score_neg) + 1/2 P(tie)."""
    y, s = _check_binary(labels, scores)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("roc_auc: both classes must be present")
    ranks = average_ranks(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(labels, scores):
    """(thresholds, tpr, fpr), one point per distinct score plus the origin."""
    y, s = _check_binary(labels, scores)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("roc_curve: both classes must be present")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s_sorted)), len(s) - 1]
    tps = np.cumsum(y_sorted)[last]
    fps = (last + 1) - tps
    thresholds = np.r_[np.inf, s_sorted[last]]
    return thresholds, np.r_[0.0, tps / n_pos], np.r_[0.0, fps / n_neg]


@dataclass
class PRCurve:
    precision: np.ndarray
    recall: np.ndarray
    thresholds: np.ndarray
    average_precision: float
    flags: list = field(default_factory=list)


def pr_curve(labels, scores):
    """Precision/recall at each distinct score threshold and step-interpolated average precision.

    AP = sum over thresholds of (R_t - R_{t-1}) * P_t.
    """
    y, s = _check_binary(labels, scores)
    n_pos = int(y.sum())
    flags = []
    if len(s) == 0:
        raise UndefinedMetricError("pr_curve: empty input")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s_sorted)), len(s) - 1]
    tps = np.cumsum(y_sorted)[last].astype(np.float64)
    predicted = (last + 1).astype(np.float64)
    precision = tps / predicted
    if n_pos == 0:
        flags.append("no positive labels: recall undefined, reported as 0")
        recall = np.zeros_like(tps)
    else:
        recall = tps / n_pos
    if n_pos == len(s):
        flags.append("no negative labels")
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return PRCurve(precision, recall, s_sorted[last], ap, flags)


def average_precision(labels, scores):
    return pr_curve(labels, scores).average_precision


# ------------------------------------------------------------ thermo


@dataclass(frozen=True)
class ThermoContext:
    gas_constant: float = GAS_CONSTANT_KCAL
    temperature: float = 298.15

    def __post_init__(self):
        if not self.temperature > 0:
            raise DomainError("temperature must be > 0 K")


def delta_g_from_kd(kd, ctx=ThermoContext()):
    """Binding free energy R T ln(Kd) in kcal/mol, Kd in molar."""
    if not kd > 0:
        raise DomainError(f"delta_g_from_kd: Kd must be > 0, got {kd}")
    return ctx.gas_constant * ctx.temperature * math.log(kd)


# ------------------------------------------------------------ reports


@dataclass
class AssayRow:
    assay_id: str
    n: int
    spearman: float = None
    precision_at_10: float = None
    flags: list = field(default_factory=list)


def assay_row(assay_id, table: RankedTable, k=10):
    row = AssayRow(assay_id, len(table))
    if len(table) < 2:
        row.flags.append("fewer than 2 variants")
        return row
    try:
        row.spearman = spearman(table.model_scores, table.binding_scores)
    except UndefinedMetricError as exc:
        row.flags.append(str(exc))
    if table.score_type != "neg_log_kd":
        row.flags.append("enrichment scores: precision@10 not defined")
    elif table.pkd_wildtype is None:
        row.flags.append("no wild-type pKd: precision@10 not computed")
    else:
        if len(table) < k:
            row.flags.append(f"fewer than {k} variants: precision over all rows")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            row.precision_at_10 = precision_at_k(table, k)
    return row


def aggregate_row(rows):
    """Unweighted mean across assays of each metric that is defined."""
    agg = AssayRow(AGGREGATE_ID, int(np.sum([r.n for r in rows])))
    for attr in ("spearman", "precision_at_10"):
        vals = [getattr(r, attr) for r in rows if getattr(r, attr) is not None]
        setattr(agg, attr, float(np.mean(vals)) if vals else None)
    return agg


def report_from_tables(tables, k=10):
    """``tables``: mapping assay_id -> RankedTable. Returns per-assay rows plus the aggregate."""
    rows = [assay_row(a, t, k) for a, t in tables.items()]
    return rows + [aggregate_row(rows)]


def ranked_tables(dataset, keys, model_scores):
    """Group records in ``keys`` into per-assay RankedTables using ``model_scores[key]``."""
    lookup = dataset.index()
    wt = dataset.wildtype_scores()
    grouped = {}
    for key in keys:
        grouped.setdefault(key[0], []).append(lookup[tuple(key)])
    tables = {}
    for assay, recs in grouped.items():
        tables[assay] = RankedTable(
            [r.variant_id for r in recs],
            [model_scores[r.key] for r in recs],
            [r.binding_score for r in recs],
            wt.get(assay),
            recs[0].score_type,
        )
    return tables


def per_assay_report(params, dataset, keys, score_span="full", use="mean_ll"):
    """Score ``keys`` of ``dataset`` with the model and summarise per assay."""
    from prefopt.ifmodel.network import score_sequences

    lookup = dataset.index()
    by_structure = {}
    for key in keys:
        r = lookup[tuple(key)]
        by_structure.setdefault(r.structure_id, []).append(r)
    scores = {}
    for sid, recs in by_structure.items():
        sums, means = score_sequences(dataset.structures[sid], [r.sequence for r in recs], params, score_span)
        chosen = means if use == "mean_ll" else sums
        scores.update({r.key: float(v) for r, v in zip(recs, chosen)})
    return report_from_tables(ranked_tables(dataset, keys, scores))


def mean_spearman(rows):
    for r in rows:
        if r.assay_id == AGGREGATE_ID:
            return r.spearman
    raise KeyError(AGGREGATE_ID)


def _fmt(v):
    return "" if v is None else repr(float(v))


def write_report_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([r.assay_id, r.n, _fmt(r.spearman), _fmt(r.precision_at_10), ";".join(r.flags)])


def write_report_json(rows, path):
    doc = [
        {"assay_id": r.assay_id, "n": r.n, "spearman": r.spearman, "precision_at_10": r.precision_at_10,
         "flags": list(r.flags)}
        for r in rows
    ]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def write_roc_csv(labels, scores, path):
    thresholds, tpr, fpr = roc_curve(labels, scores)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("threshold", "tpr", "fpr"))
        for t, a, b in zip(thresholds, tpr, fpr):
            w.writerow((repr(float(t)), repr(float(a)), repr(float(b))))


def write_pr_csv(labels, scores, path):
    curve = pr_curve(labels, scores)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("recall", "precision"))
        for r, p in zip(curve.recall, curve.precision):
            w.writerow((repr(float(r)), repr(float(p))))
    return curve
