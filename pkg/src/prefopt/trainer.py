"""Decoder fine-tuning: AdamW, freeze masks, pair sampling and the epoch loop."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from prefopt import autodiff as ad
from prefopt import evalkit
from prefopt.checkpoint import Checkpoint, load_checkpoint, load_into, save_checkpoint
from prefopt.errors import ConfigError, DataValidationError, DomainError, NumericalError, UsageError
from prefopt.ifmodel.network import ModelParameters
from prefopt.preference import (
    PreferenceHyperparams,
    PreferencePair,
    SequenceScorer,
    dpo_loss,
    nll_loss,
    pair_ranking_accuracy,
    simpo_loss,
)

log = logging.getLogger(__name__)

OBJECTIVES = ("nll", "dpo", "simpo")


# ------------------------------------------------------------------- AdamW


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class OptimizerState:
    hyper: AdamWConfig = AdamWConfig()
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, grads, state: OptimizerState, frozen=frozenset()):
    """One decoupled-weight-decay Adam update, in place on ``params`` (name -> Tensor).

    w <- w (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps); frozen names are skipped.
    """
    h = state.hyper
    trainable = [n for n in params if n not in frozen]
    missing = [n for n in trainable if grads.get(n) is None]
    if missing:
        raise UsageError(f"adamw_step: missing gradient for trainable parameter(s) {missing}")
    state.t += 1
    c1 = 1.0 - h.beta1 ** state.t
    c2 = 1.0 - h.beta2 ** state.t
    for name in trainable:
        w, g = params[name], np.asarray(grads[name], dtype=np.float64)
        if g.shape != w.shape:
            raise DomainError(f"adamw_step: gradient shape {g.shape} for {name} of shape {w.shape}")
        m = state.m.get(name, np.zeros_like(w.data))
        v = state.v.get(name, np.zeros_like(w.data))
        m = h.beta1 * m + (1.0 - h.beta1) * g
        v = h.beta2 * v + (1.0 - h.beta2) * g * g
        state.m[name], state.v[name] = m, v
        w.data = w.data * (1.0 - h.lr * h.weight_decay) - h.lr * (m / c1) / (np.sqrt(v / c2) + h.eps)
    return params, state


def clip_global_norm(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0:
        factor = max_norm / total
        return {k: g * factor for k, g in grads.items()}, total
    return grads, total


# ------------------------------------------------------------ freeze masks


@dataclass(frozen=True)
class FreezeMask:
    frozen_names: frozenset = frozenset()

    @classmethod
    def encoder(cls, params: ModelParameters):
        return cls(frozenset(params.encoder))

    def validate(self, params: ModelParameters):
        unknown = set(self.frozen_names) - set(params.named())
        if unknown:
            raise DataValidationError(f"freeze mask names unknown parameters: {sorted(unknown)}")
        return self


def trainable_fraction(params: ModelParameters, mask: FreezeMask):
    mask.validate(params)
    total = params.size()
    trainable = params.size([n for n in params.named() if n not in mask.frozen_names])
    return trainable / total


# --------------------------------------------------------------- pairs


def sample_pairs(records, delta_min=0.2, max_pairs=50_000, seed=0):
    """Uniform sample without replacement of within-assay (winner, loser) pairs.

    Admissible pairs have ``winner.score - loser.score >= delta_min`` and a
    strictly positive gap. Pairs are indexed implicitly through sorted scores,
    so large assays are never enumerated.
    """
    if delta_min < 0:
        raise DomainError("delta_min must be >= 0")
    if hasattr(records, "by_assay"):
        groups = records.by_assay()
    else:
        groups = {}
        for r in records:
            groups.setdefault(r.assay_id, []).append(r)

    blocks = []  # (assay records sorted by score, sorted scores, cumulative loser counts)
    totals = []
    for assay, recs in groups.items():
        scores = np.array([r.binding_score for r in recs])
        order = np.argsort(scores, kind="mergesort")
        s = scores[order]
        # losers of winner i: sorted positions j with s[j] <= s[i] - delta_min and s[j] < s[i]
        limit = np.searchsorted(s, s - delta_min, side="right")
        strict = np.searchsorted(s, s, side="left")
        counts = np.minimum(limit, strict)
        blocks.append((assay, [recs[i] for i in order], counts, np.cumsum(counts)))
        totals.append(int(counts.sum()))
    total = int(np.sum(totals))
    if total == 0:
        raise DataValidationError(f"no admissible pair with gap >= {delta_min} in assays {list(groups)}")

    rng = np.random.default_rng(seed)
    take = min(max_pairs, total)
    picks = rng.choice(total, size=take, replace=False)
    offsets = np.cumsum([0] + totals)
    pairs = []
    for flat in picks.tolist():
        b = int(np.searchsorted(offsets, flat, side="right")) - 1
        local = flat - offsets[b]
        _, recs, counts, cum = blocks[b]
        w = int(np.searchsorted(cum, local, side="right"))
        before = cum[w - 1] if w else 0
        l = int(local - before)
        pairs.append(PreferencePair.of(recs[w], recs[l]))
    return pairs


# -------------------------------------------------------------- config


@dataclass
class TrainConfig:
    objective: str = "simpo"
    epochs: int = 3
    batch_size: int = 32
    beta: float = 0.1
    gamma: float = 0.1
    pair_margin: float = 0.2
    max_pairs: int = 50_000
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_grad_norm: float = None
    freeze: object = "encoder"  # "encoder", "none", or a list of parameter names
    score_span: str = "full"
    eval_every: int = 1
    checkpoint_dir: str = None

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("epochs, batch_size and eval_every must be >= 1")
        if self.pair_margin < 0:
            raise ConfigError("pair_margin must be >= 0")
        if self.lr < 0 or self.weight_decay < 0 or self.max_pairs < 1:
            raise ConfigError("lr and weight_decay must be >= 0 and max_pairs >= 1")
        PreferenceHyperparams(self.beta, self.gamma)

    @property
    def hp(self):
        return PreferenceHyperparams(self.beta, self.gamma)

    @property
    def adamw(self):
        return AdamWConfig(self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)

    def fingerprint(self):
        doc = {k: v for k, v in asdict(self).items() if k != "checkpoint_dir"}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**doc)

    def freeze_mask(self, params):
        if self.freeze == "encoder":
            return FreezeMask.encoder(params)
        if self.freeze in ("none", None):
            return FreezeMask()
        return FreezeMask(frozenset(self.freeze)).validate(params)


# ------------------------------------------------------------ training


@dataclass
class TrainResult:
    params: ModelParameters
    metrics: list
    checkpoints: list
    best_checkpoint: str = None
    best_val_spearman: float = None
    trainable_fraction: float = None


METRIC_COLUMNS = ("epoch", "split", "loss", "ranking_acc", "spearman_mean")


def write_metrics_csv(metrics, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in metrics:
            w.writerow(["" if row.get(c) is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                        for c in METRIC_COLUMNS])


def _objective_loss(config, scorer, ref_scorer, batch, structures):
    if config.objective == "simpo":
        return simpo_loss(scorer, batch, structures, config.hp)
    if config.objective == "dpo":
        return dpo_loss(scorer, ref_scorer, batch, structures, config.hp)
    return nll_loss(scorer, [(p.structure_id, p.winner.sequence) for p in batch], structures)


def _checkpoint_tensors(params, state, reference):
    tensors = {f"param/{k}": t.data for k, t in params.named().items()}
    for k in sorted(state.m):
        tensors[f"opt.m/{k}"] = state.m[k]
        tensors[f"opt.v/{k}"] = state.v[k]
    if reference is not None:
        tensors.update({f"ref/{k}": t.data for k, t in reference.named().items()})
    return tensors


def evaluate_split(params, dataset, keys, config, pairs=None):
    """Validation metrics: objective loss on pairs, ranking accuracy, mean per-assay Spearman."""
    out = {"loss": None, "ranking_acc": None, "spearman_mean": None}
    if not keys:
        return out
    frozen = params.detached()
    if pairs:
        out["ranking_acc"] = pair_ranking_accuracy(frozen, pairs, dataset.structures, config.hp, config.score_span)
        if config.objective != "dpo":
            scorer = SequenceScorer(frozen, dataset.structures, config.score_span)
            losses = [
                _objective_loss(config, scorer, None, pairs[i:i + 256], dataset.structures).item() * len(pairs[i:i + 256])
                for i in range(0, len(pairs), 256)
            ]
            out["loss"] = float(np.sum(losses) / len(pairs))
    rows = evalkit.per_assay_report(frozen, dataset, keys, config.score_span)
    out["spearman_mean"] = evalkit.mean_spearman(rows)
    return out


def _safe_pairs(records, config, seed):
    try:
        return sample_pairs(records, config.pair_margin, config.max_pairs, seed)
    except DataValidationError:
        return []


def train(params: ModelParameters, dataset, split, config: TrainConfig, resume_from=None):
    """Fine-tune ``params`` in place on the train keys of ``split``.

    Per epoch the pairs are re-sampled with seed (config.seed, epoch), so a run
    resumed from an epoch checkpoint reproduces the uninterrupted run exactly.
    """
    mask = config.freeze_mask(params)
    fraction = trainable_fraction(params, mask)
    if fraction == 0.0:
        raise UsageError("every parameter is frozen; nothing to train")
    if not split.train:
        raise UsageError("empty training split; nothing to train")
    params.set_trainable(mask.frozen_names)
    log.info("trainable fraction %.6f (%d of %d parameters)", fraction,
             params.size([n for n in params.named() if n not in mask.frozen_names]), params.size())

    train_set = dataset.subset(split.train)
    val_set = dataset.subset(split.val) if split.val else None
    val_pairs = _safe_pairs(val_set, config, [config.seed, 1 << 20]) if val_set else []

    state = OptimizerState(config.adamw)
    reference = params.copy(requires_grad=False) if config.objective == "dpo" else None
    start_epoch, best, best_path = 0, None, None
    metrics = []
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from, config.fingerprint())
        load_into(params, ckpt)
        state.t = int(ckpt.header["step"])
        state.m = {k: v.copy() for k, v in ckpt.group("opt.m/").items()}
        state.v = {k: v.copy() for k, v in ckpt.group("opt.v/").items()}
        if reference is not None:
            reference = params.copy(requires_grad=False)
            for k, t in reference.named().items():
                t.data = ckpt.tensors[f"ref/{k}"].copy()
        start_epoch = int(ckpt.header["epoch"])
        best = ckpt.header.get("best_val_spearman")
        best_name = ckpt.header.get("best_checkpoint")
        if best_name and config.checkpoint_dir:
            best_path = str(Path(config.checkpoint_dir) / best_name)
        metrics = list(ckpt.header.get("metrics", []))

    encoder_digest = params.digest("encoder") if mask.frozen_names >= set(params.encoder) else None
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    checkpoints = []
    trainable = {n: t for n, t in params.named().items() if n not in mask.frozen_names}

    for epoch in range(start_epoch, config.epochs):
        pairs = sample_pairs(train_set, config.pair_margin, config.max_pairs, [config.seed, epoch])
        scorer = SequenceScorer(params, dataset.structures, config.score_span)
        ref_scorer = SequenceScorer(reference, dataset.structures, config.score_span) if reference else None
        losses = []
        for b, start in enumerate(range(0, len(pairs), config.batch_size)):
            batch = pairs[start:start + config.batch_size]
            for t in trainable.values():
                t.zero_grad()
            try:
                loss = _objective_loss(config, scorer, ref_scorer, batch, dataset.structures)
                ad.backward(loss)
            except NumericalError as exc:
                raise NumericalError(f"non-finite value at epoch {epoch + 1}, batch {b + 1}: {exc}") from exc
            grads = {n: t.grad for n, t in trainable.items()}
            if config.clip_grad_norm:
                grads, _ = clip_global_norm(grads, config.clip_grad_norm)
            adamw_step(params.named(), grads, state, mask.frozen_names)
            losses.append(loss.item())

        row = {"epoch": epoch + 1, "split": "train", "loss": float(np.mean(losses)),
               "ranking_acc": pair_ranking_accuracy(params.detached(), pairs, dataset.structures, config.hp,
                                                    config.score_span),
               "spearman_mean": None}
        metrics.append(row)
        evaluated = val_set is not None and ((epoch + 1) % config.eval_every == 0 or epoch + 1 == config.epochs)
        if evaluated:
            metrics.append({"epoch": epoch + 1, "split": "val",
                            **evaluate_split(params, val_set, split.val, config, val_pairs)})
        log.info("epoch %d: %s", epoch + 1, metrics[-1])

        improved = False
        if evaluated:
            current = metrics[-1]["spearman_mean"]
            if current is not None and (best is None or current > best):
                best, improved = current, True
        elif val_set is None:
            improved = True

        if ckpt_dir is not None:
            path = ckpt_dir / f"epoch_{epoch + 1:03d}.ckpt"
            if improved:
                best_path = str(ckpt_dir / "best.ckpt")
            header = {
                "dims": params.dims_dict(),
                "freeze_mask": sorted(mask.frozen_names),
                "objective": config.objective,
                "seed": config.seed,
                "config_fingerprint": config.fingerprint(),
                "epoch": epoch + 1,
                "step": state.t,
                "best_val_spearman": best,
                "best_checkpoint": Path(best_path).name if best_path else None,
                "metrics": metrics,
            }
            tensors = _checkpoint_tensors(params, state, reference)
            save_checkpoint(path, header, tensors)
            checkpoints.append(str(path))
            if improved:
                save_checkpoint(best_path, header, tensors)

    if encoder_digest is not None and params.digest("encoder") != encoder_digest:
        raise UsageError("frozen encoder parameters changed during training")
    return TrainResult(params, metrics, checkpoints, best_path, best, fraction)
