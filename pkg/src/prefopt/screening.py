"""Two-stage candidate screening: a quantile prefilter followed by a Pareto panel.

Scorers are looked up by metric name in a registry, so deterministic surrogate
scorers and tables of externally computed scores are interchangeable.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Protocol

import numpy as np

from prefopt.errors import DataValidationError, DomainError
from prefopt.ifmodel.vocab import CANONICAL

log = logging.getLogger(__name__)

HIGHER, LOWER = "higher_better", "lower_better"


@dataclass(frozen=True)
class MetricSpec:
    name: str
    orientation: str
    stage: object  # 1, 2 or "report_only"

    def __post_init__(self):
        if self.orientation not in (HIGHER, LOWER):
            raise DomainError(f"{self.name}: orientation must be {HIGHER} or {LOWER}")
        if self.stage not in (1, 2, "report_only"):
            raise DomainError(f"{self.name}: stage must be 1, 2 or report_only")

    def oriented(self, value):
        """Value on a larger-is-better scale."""
        return value if self.orientation == HIGHER else -value


DEFAULT_SPECS = (
    MetricSpec("seq_pll", HIGHER, 1),
    MetricSpec("ddg", LOWER, 1),
    MetricSpec("plddt", HIGHER, 2),
    MetricSpec("delta_sasa", LOWER, 2),
    MetricSpec("mpnn_ll", HIGHER, 2),
    MetricSpec("ptm", HIGHER, "report_only"),
    MetricSpec("iplddt", HIGHER, "report_only"),
)


def check_specs(specs):
    specs = tuple(specs)
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise DomainError(f"metric names must be unique: {names}")
    for s in specs:
        if s.name == "ddg" and s.orientation != LOWER:
            raise DomainError("ddg must be lower_better")
    if sum(1 for s in specs if s.stage == 1) != 2:
        raise DomainError("exactly two stage-1 metrics are required")
    return specs


def frontier_specs(specs):
    return [s for s in specs if s.stage in (1, 2)]


@dataclass
class CandidateScore:
    variant_id: str
    sequence: str = ""
    values: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def require(self, names):
        missing = [n for n in names if n not in self.values]
        if missing:
            raise DataValidationError(f"{self.variant_id}: missing metric(s) {missing}")


@dataclass(frozen=True)
class ScorerFailure:
    reason: str


class Scorer(Protocol):
    name: str
    metric: str

    def score(self, candidates, structure) -> dict:
        """variant_id -> float, or ScorerFailure for candidates it cannot score."""


# --------------------------------------------------------------- stage 1


def _top_count(quantile, n):
    return math.ceil(Fraction(str(quantile)) * n)


@dataclass
class Stage1Result:
    survivors: list
    flags: list = field(default_factory=list)
    cutoffs: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.survivors)

    def __len__(self):
        return len(self.survivors)


def stage1_filter(candidates, specs=DEFAULT_SPECS, quantile=0.2):
    """Keep candidates in the top ceil(quantile n) of both stage-1 metrics.

    Nearest-rank cut: the cutoff is the value at that rank, and every candidate
    tied with it passes. A channel where all values are equal passes everyone.
    """
    candidates = list(candidates)
    if not candidates:
        raise DomainError("stage1_filter: no candidates")
    if not 0 < quantile <= 1:
        raise DomainError(f"quantile must lie in (0, 1], got {quantile}")
    stage1 = [s for s in check_specs(specs) if s.stage == 1]
    n = len(candidates)
    k = _top_count(quantile, n)
    keep = np.ones(n, dtype=bool)
    result = Stage1Result([])
    for spec in stage1:
        for c in candidates:
            c.require([spec.name])
        vals = np.array([spec.oriented(c.values[spec.name]) for c in candidates], dtype=np.float64)
        if np.all(vals == vals[0]):
            result.flags.append(f"{spec.name}: all candidates tied, channel passes everyone")
            result.cutoffs[spec.name] = spec.oriented(vals[0])
            continue
        cutoff = np.sort(vals)[::-1][k - 1]
        result.cutoffs[spec.name] = spec.oriented(cutoff)
        keep &= vals >= cutoff
    result.survivors = [c for c, ok in zip(candidates, keep) if ok]
    return result


# --------------------------------------------------------------- pareto


def _oriented_matrix(candidates, specs):
    for c in candidates:
        c.require([s.name for s in specs])
    return np.array([[s.oriented(c.values[s.name]) for s in specs] for c in candidates], dtype=np.float64)


def dominated_mask(points, chunk=512):
    """Boolean mask of rows dominated by some other row (larger is better on every column)."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    out = np.zeros(n, dtype=bool)
    for start in range(0, n, chunk):
        block = points[start:start + chunk]
        geq = np.all(points[None, :, :] >= block[:, None, :], axis=2)
        gt = np.any(points[None, :, :] > block[:, None, :], axis=2)
        out[start:start + chunk] = np.any(geq & gt, axis=1)
    return out


def pareto_front(candidates, specs=DEFAULT_SPECS):
    """Every non-dominated candidate over the frontier metrics, ordered by variant_id.

    a dominates b when a is at least as good on every metric and strictly
    better on one; exact duplicates therefore survive together.
    """
    candidates = list(candidates)
    if not candidates:
        return []
    specs = frontier_specs(specs) if any(s.stage == "report_only" for s in specs) else list(specs)
    mask = dominated_mask(_oriented_matrix(candidates, specs))
    return sorted((c for c, d in zip(candidates, mask) if not d), key=lambda c: c.variant_id)


# --------------------------------------------------------------- scorers


def burial(structure, radius=10.0):
    """Number of other CA atoms within ``radius`` of each residue."""
    ca = structure.atoms("CA")
    dist = np.linalg.norm(ca[:, None] - ca[None], axis=-1)
    return (dist < radius).sum(axis=1) - 1.0


def _onehot(sequence):
    idx = [CANONICAL.index(c) for c in sequence]
    out = np.zeros((len(sequence), len(CANONICAL)))
    out[np.arange(len(sequence)), idx] = 1.0
    return out


@dataclass
class LinearEnergyScorer:
    """value = offset + scale * sum_i (a[aa_i] + c[aa_i] * burial_i), with seeded a and c.

    With ``relative_to_wildtype`` the wild-type value is subtracted, which
    turns the energy into a difference such as ddG = dG(mut) - dG(wt).
    """

    name: str
    metric: str
    seed: int
    offset: float = 0.0
    scale: float = 1.0
    relative_to_wildtype: bool = False
    invocations: int = 0

    def __post_init__(self):
        digest = hashlib.sha256(f"{self.metric}:{self.seed}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        self.a = rng.normal(0.0, 1.0, len(CANONICAL))
        self.c = rng.normal(0.0, 0.1, len(CANONICAL))

    def energy(self, sequence, structure):
        if len(sequence) > len(structure):
            raise DomainError(f"sequence of length {len(sequence)} longer than structure {structure.id}")
        b = burial(structure)[: len(sequence)]
        x = _onehot(sequence)
        return float(np.sum(x @ self.a) + np.sum((x @ self.c) * b))

    def score(self, candidates, structure):
        out = {}
        reference = self.energy(structure.sequence, structure) if self.relative_to_wildtype else 0.0
        for c in candidates:
            self.invocations += 1
            try:
                out[c.variant_id] = self.offset + self.scale * (self.energy(c.sequence, structure) - reference)
            except (ValueError, DomainError) as exc:
                out[c.variant_id] = ScorerFailure(f"{self.metric}: {exc}")
        return out


def surrogate_scorers(seed=0):
    """Deterministic stand-ins for every default metric, keyed by metric name."""
    table = {
        "seq_pll": dict(offset=-2.0, scale=0.05),
        "ddg": dict(scale=0.5, relative_to_wildtype=True),
        "plddt": dict(offset=80.0, scale=0.5),
        "delta_sasa": dict(offset=-800.0, scale=5.0),
        "mpnn_ll": dict(offset=-1.5, scale=0.05),
        "ptm": dict(offset=0.8, scale=0.005),
        "iplddt": dict(offset=75.0, scale=0.5),
    }
    return {m: LinearEnergyScorer(f"surrogate_{m}", m, seed, **kw) for m, kw in table.items()}


class ScoresTableScorer:
    """Serves one metric from a long-format CSV (variant_id, metric, value)."""

    def __init__(self, metric, values, name=None):
        self.metric = metric
        self.name = name or f"table_{metric}"
        self.values = dict(values)
        self.invocations = 0

    @classmethod
    def from_csv(cls, path):
        """One scorer per metric found in the file."""
        per_metric = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != ("variant_id", "metric", "value"):
                raise DataValidationError(f"scores header must be variant_id,metric,value, got {reader.fieldnames}")
            for line, row in enumerate(reader, start=2):
                try:
                    value = float(row["value"])
                except ValueError:
                    raise DataValidationError(f"line {line}: value {row['value']!r} is not a number") from None
                if not math.isfinite(value):
                    raise DataValidationError(f"line {line}: non-finite value")
                per_metric.setdefault(row["metric"], {})[row["variant_id"]] = value
        return {m: cls(m, v, f"table:{Path(path).name}") for m, v in per_metric.items()}

    def score(self, candidates, structure):
        out = {}
        for c in candidates:
            self.invocations += 1
            v = self.values.get(c.variant_id)
            out[c.variant_id] = v if v is not None else ScorerFailure(f"{self.metric}: no value in table")
        return out


# --------------------------------------------------------------- pipeline


@dataclass
class PipelineConfig:
    quantile: float = 0.2
    specs: tuple = DEFAULT_SPECS
    seed: int = 0

    def fingerprint(self):
        doc = {"quantile": self.quantile, "seed": self.seed,
               "specs": [[s.name, s.orientation, s.stage] for s in self.specs]}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class PipelineResult:
    candidates: dict  # variant_id -> CandidateScore (every scored candidate)
    survivors: list
    panel: list
    counts: dict
    dropped: list  # (variant_id, reason)
    flags: list
    config_fingerprint: str


def as_candidates(variants, structure=None):
    """Accept CandidateScore, generation Variants, or (variant_id, sequence) pairs."""
    out = []
    for v in variants:
        if isinstance(v, CandidateScore):
            out.append(v)
        elif hasattr(v, "mutations"):
            vid = v.code(structure) if structure is not None else v.sequence
            out.append(CandidateScore(vid, v.sequence))
        else:
            vid, seq = v
            out.append(CandidateScore(str(vid), seq))
    ids = [c.variant_id for c in out]
    if len(set(ids)) != len(ids):
        raise DataValidationError("candidate variant ids must be unique")
    return out


def _apply(scorer, metric, candidates, structure, dropped):
    results = scorer.score(candidates, structure)
    kept = []
    for c in candidates:
        v = results.get(c.variant_id, ScorerFailure(f"{metric}: scorer returned nothing"))
        if isinstance(v, ScorerFailure) or not math.isfinite(v):
            reason = v.reason if isinstance(v, ScorerFailure) else f"{metric}: non-finite value"
            log.warning("dropping %s: %s", c.variant_id, reason)
            dropped.append((c.variant_id, reason))
            continue
        c.values[metric] = float(v)
        c.provenance[metric] = getattr(scorer, "name", metric)
        kept.append(c)
    return kept


def run_pipeline(variants, structure, registry, config: PipelineConfig = PipelineConfig()):
    specs = check_specs(config.specs)
    missing = [s.name for s in specs if s.name not in registry]
    if missing:
        raise DataValidationError(f"no scorer registered for metric(s) {missing}")
    pool = as_candidates(variants, structure)
    dropped = []
    counts = {"input": len(pool)}
    for spec in (s for s in specs if s.stage == 1):
        pool = _apply(registry[spec.name], spec.name, pool, structure, dropped)
    counts["stage1_scored"] = len(pool)
    if not pool:
        raise DataValidationError("every candidate failed stage-1 scoring")
    stage1 = stage1_filter(pool, specs, config.quantile)
    survivors = list(stage1.survivors)
    counts["stage1_survivors"] = len(survivors)
    scored = survivors
    for spec in (s for s in specs if s.stage != 1):
        scored = _apply(registry[spec.name], spec.name, scored, structure, dropped)
    counts["stage2_scored"] = len(scored)
    panel = pareto_front(scored, frontier_specs(specs))
    counts["panel"] = len(panel)
    counts["dropped"] = len(dropped)
    table = {c.variant_id: c for c in as_candidates(variants, structure)}
    for c in pool:
        table[c.variant_id] = c
    return PipelineResult(table, survivors, panel, counts, dropped, stage1.flags, config.fingerprint())


def panel_document(result: PipelineResult, specs=DEFAULT_SPECS):
    names = [s.name for s in specs]
    return {
        "config_fingerprint": result.config_fingerprint,
        "counts": result.counts,
        "flags": result.flags,
        "panel": [dict(variant_id=c.variant_id, **{n: c.values[n] for n in names if n in c.values})
                  for c in result.panel],
        "dropped": [{"variant_id": v, "reason": r} for v, r in result.dropped],
    }


def write_panel_json(result: PipelineResult, path, specs=DEFAULT_SPECS):
    Path(path).write_text(json.dumps(panel_document(result, specs), indent=1, sort_keys=True) + "\n")


def write_scores_csv(result: PipelineResult, path):
    """Long-format table of every value computed, sorted by variant_id then metric."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("variant_id", "metric", "value"))
        for vid in sorted(result.candidates):
            c = result.candidates[vid]
            for m in sorted(c.values):
                w.writerow((vid, m, repr(c.values[m])))
