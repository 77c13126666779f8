"""Per-residue binding-site head trained on top of frozen residue embeddings."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from prefopt import autodiff as ad
from prefopt import evalkit
from prefopt.errors import DataValidationError, DimensionError, DomainError, UsageError
from prefopt.ifmodel.network import embed_structure

HEAD_NAMES = ("head.w1", "head.b1", "head.w2", "head.b2")
LABEL_COLUMNS = ("antibody_id", "chain_id", "residue_index", "label")


@dataclass
class ParatopeHead:
    """Two-layer feed-forward classifier: d -> hidden (tanh) -> 1 logit."""

    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor

    @property
    def d(self):
        return self.w1.shape[0]

    @property
    def hidden(self):
        return self.w1.shape[1]

    def named(self):
        return dict(zip(HEAD_NAMES, (self.w1, self.b1, self.w2, self.b2)))

    def copy(self):
        return ParatopeHead(*(ad.Tensor(t.data.copy(), requires_grad=True) for t in self.named().values()))


def init_head(d=64, hidden=64, seed=0, init="normal"):
    if init not in ("normal", "zeros"):
        raise DomainError(f"unknown init {init!r}")
    if d < 1 or hidden < 1:
        raise DomainError("head widths must be >= 1")
    rng = np.random.default_rng(seed)

    def weight(shape):
        if init == "zeros":
            return ad.Tensor(np.zeros(shape), requires_grad=True)
        return ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape), requires_grad=True)

    return ParatopeHead(weight((d, hidden)), ad.Tensor(np.zeros(hidden), requires_grad=True),
                        weight((hidden, 1)), ad.Tensor(np.zeros(1), requires_grad=True))


@dataclass
class ResidueLabels:
    labels: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.mask = np.ones_like(self.labels) if self.mask is None else np.asarray(self.mask, dtype=np.float64)
        if self.labels.ndim != 1 or self.mask.shape != self.labels.shape:
            raise DimensionError("labels and mask must be 1-D of equal length")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise DataValidationError("paratope labels must be 0 or 1")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise DataValidationError("label mask must be 0 or 1")

    def __len__(self):
        return len(self.labels)


@dataclass
class LabeledExample:
    antibody_id: str
    embeddings: np.ndarray  # (n, d), already computed by the frozen base model
    labels: ResidueLabels

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.labels):
            raise DimensionError(
                f"{self.antibody_id}: {self.embeddings.shape[0]} embedding rows for {len(self.labels)} labels"
            )


def head_logits(embeddings, head: ParatopeHead) -> ad.Tensor:
    x = embeddings if isinstance(embeddings, ad.Tensor) else ad.Tensor(np.asarray(embeddings, dtype=np.float64))
    if x.ndim != 2 or x.shape[1] != head.d:
        raise DimensionError(f"head expects embeddings of width {head.d}, got shape {x.shape}")
    hidden = ad.tanh(ad.matmul(x, head.w1) + head.b1)
    return ad.reshape(ad.matmul(hidden, head.w2) + head.b2, (x.shape[0],))


def head_forward(embeddings, head: ParatopeHead) -> np.ndarray:
    """Per-residue probabilities in (0, 1)."""
    return ad.sigmoid(head_logits(ad.Tensor(np.asarray(getattr(embeddings, "data", embeddings))), head)).data


def masked_bce(logits: ad.Tensor, labels, mask) -> ad.Tensor:
    """Mean binary cross-entropy over unmasked residues, computed from logits."""
    labels = np.asarray(labels, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    count = mask.sum()
    if count == 0:
        raise DomainError("no labelled residues")
    pos = ad.log_sigmoid(logits)
    neg = ad.log_sigmoid(ad.neg(logits))
    ll = ad.mul(pos, ad.Tensor(labels * mask)) + ad.mul(neg, ad.Tensor((1.0 - labels) * mask))
    return ad.scale(ad.sum(ll), -1.0 / count)


def _pooled(examples):
    x = np.concatenate([e.embeddings for e in examples])
    y = np.concatenate([e.labels.labels for e in examples])
    m = np.concatenate([e.labels.mask for e in examples])
    return x, y, m


@dataclass
class HeadTrainResult:
    head: ParatopeHead
    losses: list = field(default_factory=list)


def train_head(examples, head: ParatopeHead, epochs=200, lr=1e-2, weight_decay=0.0, base_params=None):
    """Full-batch AdamW on the head only; the base model is never touched.

    When ``base_params`` is given its digest is compared before and after.
    """
    from prefopt.trainer import AdamWConfig, OptimizerState, adamw_step

    examples = list(examples)
    if not examples:
        raise UsageError("no labelled antibodies")
    x, y, m = _pooled(examples)
    labelled = y[m == 1]
    if labelled.size == 0 or labelled.min() == labelled.max():
        raise DataValidationError("paratope training needs at least one positive and one negative residue")
    before = base_params.digest() if base_params is not None else None
    params = head.named()
    state = OptimizerState(AdamWConfig(lr=lr, weight_decay=weight_decay))
    inputs = ad.Tensor(x)
    losses = []
    for _ in range(epochs):
        for t in params.values():
            t.zero_grad()
        loss = masked_bce(head_logits(inputs, head), y, m)
        ad.backward(loss)
        losses.append(loss.item())
        adamw_step(params, {k: t.grad for k, t in params.items()}, state)
    if before is not None and base_params.digest() != before:
        raise UsageError("base model parameters changed during head training")
    return HeadTrainResult(head, losses)


@dataclass
class HeadEvaluation:
    roc: tuple  # (thresholds, tpr, fpr)
    pr: evalkit.PRCurve
    roc_auc: float
    average_precision: float


def evaluate_head(head: ParatopeHead, examples):
    """Globally pooled ROC and PR over every labelled residue of every antibody."""
    examples = list(examples)
    if not examples:
        raise UsageError("no test antibodies")
    x, y, m = _pooled(examples)
    keep = m == 1
    scores = head_forward(x, head)[keep]
    labels = y[keep].astype(int)
    return HeadEvaluation(
        evalkit.roc_curve(labels, scores),
        evalkit.pr_curve(labels, scores),
        evalkit.roc_auc(labels, scores),
        evalkit.average_precision(labels, scores),
    )


# -------------------------------------------------------------- data


def load_labels(path, structures):
    """Read the residue label CSV and align it to structures.

    Every (antibody_id, chain_id, residue_index) must name an existing residue;
    residues without a row are masked out. Any mismatch is an error.
    """
    problems = []
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LABEL_COLUMNS:
            raise DataValidationError(f"label header must be {','.join(LABEL_COLUMNS)}, got {reader.fieldnames}")
        for line, row in enumerate(reader, start=2):
            sid, chain = row["antibody_id"], row["chain_id"]
            try:
                index, label = int(row["residue_index"]), int(row["label"])
            except ValueError:
                problems.append(f"line {line}: residue_index and label must be integers")
                continue
            if label not in (0, 1):
                problems.append(f"line {line}: label must be 0 or 1")
                continue
            if sid not in structures:
                problems.append(f"line {line}: unknown antibody {sid!r}")
                continue
            try:
                pos = structures[sid].position_of(chain, index)
            except (KeyError, ValueError, DataValidationError):
                problems.append(f"line {line}: {sid} has no residue {chain}{index}")
                continue
            key = (sid, pos)
            if key in rows:
                problems.append(f"line {line}: duplicate label for {sid} {chain}{index}")
                continue
            rows[key] = label
    if problems:
        raise DataValidationError(f"{len(problems)} problem(s) in {path}", problems)
    out = {}
    for sid in sorted({k[0] for k in rows}):
        n = len(structures[sid])
        labels, mask = np.zeros(n), np.zeros(n)
        for (s, pos), label in rows.items():
            if s == sid:
                labels[pos], mask[pos] = label, 1.0
        out[sid] = ResidueLabels(labels, mask)
    return out


def labeled_examples(params, structures, labels):
    """Embed each labelled structure with the frozen encoder."""
    frozen = params.detached()
    return [LabeledExample(sid, embed_structure(structures[sid], frozen).data, lab) for sid, lab in labels.items()]


def save_head(path, head: ParatopeHead, **meta):
    from prefopt.checkpoint import save_checkpoint

    save_checkpoint(path, dict(meta, kind="paratope_head"), {k: t.data for k, t in head.named().items()})


def load_head(path):
    from prefopt.checkpoint import load_checkpoint

    ckpt = load_checkpoint(path)
    missing = [n for n in HEAD_NAMES if n not in ckpt.tensors]
    if missing:
        raise DataValidationError(f"head checkpoint lacks {missing}")
    return ParatopeHead(*(ad.Tensor(ckpt.tensors[n], requires_grad=True) for n in HEAD_NAMES))
