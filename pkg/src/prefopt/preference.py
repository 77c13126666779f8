"""NLL, DPO and SimPO objectives over structure-conditioned sequence likelihoods.

Losses return scalar :class:`~prefopt.autodiff.Tensor` values (mean over the
batch) so callers can differentiate them; rewards and accuracies are floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from prefopt import autodiff as ad
from prefopt.errors import DataValidationError, DomainError
from prefopt.ifmodel.network import ModelParameters, embed_structure, score_sequences, span_mask, token_loglik
from prefopt.ifmodel.vocab import VOCAB


@dataclass(frozen=True)
class PreferenceHyperparams:
    beta: float = 0.1
    gamma: float = 0.1

    def __post_init__(self):
        if not self.beta > 0:
            raise DomainError(f"beta must be > 0, got {self.beta}")
        if not self.gamma >= 0:
            raise DomainError(f"gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class PreferencePair:
    winner: object  # VariantRecord
    loser: object
    structure_id: str
    score_gap: float

    def __post_init__(self):
        if not self.score_gap > 0:
            raise DataValidationError(f"preference pair needs a positive score gap, got {self.score_gap}")
        w, l = self.winner, self.loser
        if w.assay_id != l.assay_id or w.structure_id != l.structure_id or w.structure_id != self.structure_id:
            raise DataValidationError("preference pair members must share assay and structure")

    @classmethod
    def of(cls, winner, loser):
        return cls(winner, loser, winner.structure_id, winner.binding_score - loser.binding_score)


class SequenceScorer:
    """Batched, differentiable log-likelihoods for (structure_id, sequence) items.

    When every encoder tensor is frozen, residue embeddings are computed once
    per structure and reused.
    """

    def __init__(self, params: ModelParameters, structures: Mapping, score_span="full"):
        self.params = params
        self.structures = structures
        self.score_span = score_span
        self._embeddings = {}

    def _encoder_frozen(self):
        return not any(t.requires_grad for t in self.params.encoder.values())

    def embeddings(self, structure_id):
        structure = self.structures[structure_id]
        if not self._encoder_frozen():
            return embed_structure(structure, self.params)
        if structure_id not in self._embeddings:
            self._embeddings[structure_id] = embed_structure(structure, self.params.detached())
        return self._embeddings[structure_id]

    def loglik(self, items: Sequence):
        """(sum_ll, mean_ll) tensors of shape (N,) in the order of ``items``."""
        if not items:
            raise DomainError("empty batch")
        groups = {}
        for pos, (sid, seq) in enumerate(items):
            groups.setdefault(sid, []).append(pos)
        sums, means, order = [], [], []
        for sid, positions in groups.items():
            if sid not in self.structures:
                raise DataValidationError(f"unknown structure {sid!r}")
            toks = np.stack([VOCAB.encode(items[p][1], sid).tokens for p in positions])
            mask = span_mask(self.structures[sid], self.score_span)
            total, avg = token_loglik(self.embeddings(sid), toks, self.params, mask)
            sums.append(total)
            means.append(avg)
            order.extend(positions)
        inverse = np.argsort(np.asarray(order), kind="stable")
        return ad.gather_rows(ad.concat(sums), inverse), ad.gather_rows(ad.concat(means), inverse)


def _scorer(params, structures, score_span):
    if isinstance(params, SequenceScorer):
        return params
    return SequenceScorer(params, structures, score_span)


def _as_pairs(pairs):
    if isinstance(pairs, PreferencePair):
        return [pairs]
    pairs = list(pairs)
    if not pairs:
        raise DomainError("empty pair batch")
    return pairs


def _pair_items(pairs):
    return [(p.structure_id, p.winner.sequence) for p in pairs] + [(p.structure_id, p.loser.sequence) for p in pairs]


def bradley_terry_loss(margin: ad.Tensor) -> ad.Tensor:
    """Mean of -log sigmoid(margin)."""
    return ad.neg(ad.mean(ad.log_sigmoid(margin)))


# ----------------------------------------------------------------------- NLL


def nll_loss(params, batch, structures=None, score_span="full"):
    """Mean over the batch of -log p(Y | X).

    ``batch`` is a sequence of ``(structure, sequence)`` with structure either
    a :class:`BackboneStructure` or an id resolvable through ``structures``.
    """
    batch = list(batch)
    if not batch:
        raise DomainError("nll_loss: empty batch")
    structures = dict(structures or {})
    items = []
    for structure, seq in batch:
        if hasattr(structure, "residues"):
            structures.setdefault(structure.id, structure)
            structure = structure.id
        items.append((structure, seq))
    total, _ = _scorer(params, structures, score_span).loglik(items)
    return ad.neg(ad.mean(total))


# ----------------------------------------------------------------------- DPO


def dpo_reward(policy, reference, structure, sequence, hp=PreferenceHyperparams(), score_span="full"):
    """beta * (log pi_theta(y|x) - log pi_ref(y|x)) with summed token log-probs."""
    structures = {structure.id: structure}
    pol, _ = SequenceScorer(policy.detached(), structures, score_span).loglik([(structure.id, sequence)])
    ref, _ = SequenceScorer(reference.detached(), structures, score_span).loglik([(structure.id, sequence)])
    return hp.beta * (pol.data[0] - ref.data[0])


def dpo_loss(policy, reference, pairs, structures, hp=PreferenceHyperparams(), score_span="full"):
    pairs = _as_pairs(pairs)
    items = _pair_items(pairs)
    n = len(pairs)
    pol, _ = _scorer(policy, structures, score_span).loglik(items)
    ref_scorer = reference if isinstance(reference, SequenceScorer) else SequenceScorer(
        reference.detached(), structures, score_span
    )
    ref, _ = ref_scorer.loglik(items)
    rewards = ad.scale(pol - ref.detach(), hp.beta)
    margin = ad.gather_rows(rewards, np.arange(n)) - ad.gather_rows(rewards, np.arange(n, 2 * n))
    return bradley_terry_loss(margin)


# --------------------------------------------------------------------- SimPO


def simpo_reward(policy, structure, sequence, hp=PreferenceHyperparams(), score_span="full"):
    """(beta / |y|) * sum_i log pi_theta(y_i | x, y_<i); no reference model involved."""
    _, avg = SequenceScorer(policy.detached(), {structure.id: structure}, score_span).loglik(
        [(structure.id, sequence)]
    )
    return hp.beta * avg.data[0]


def simpo_from_rewards(r_winner: ad.Tensor, r_loser: ad.Tensor, gamma) -> ad.Tensor:
    return bradley_terry_loss(ad.add(r_winner - r_loser, -float(gamma)))


def simpo_loss(policy, pairs, structures, hp=PreferenceHyperparams(), score_span="full"):
    pairs = _as_pairs(pairs)
    n = len(pairs)
    _, avg = _scorer(policy, structures, score_span).loglik(_pair_items(pairs))
    rewards = ad.scale(avg, hp.beta)
    return simpo_from_rewards(
        ad.gather_rows(rewards, np.arange(n)), ad.gather_rows(rewards, np.arange(n, 2 * n)), hp.gamma
    )


def simpo_rewards(policy, records, structures, hp=PreferenceHyperparams(), score_span="full"):
    """SimPO reward for every record, keyed by (assay_id, variant_id)."""
    by_structure = {}
    for r in records:
        by_structure.setdefault(r.structure_id, []).append(r)
    out = {}
    for sid, recs in by_structure.items():
        _, means = score_sequences(structures[sid], [r.sequence for r in recs], policy, score_span)
        for r, m in zip(recs, means):
            out[(r.assay_id, r.variant_id)] = hp.beta * m
    return out


def pair_ranking_accuracy(policy, pairs, structures, hp=PreferenceHyperparams(), score_span="full"):
    """Fraction of pairs whose winner gets the strictly higher SimPO reward; ties count 1/2."""
    pairs = _as_pairs(pairs)
    records = {}
    for p in pairs:
        records[(p.winner.assay_id, p.winner.variant_id)] = p.winner
        records[(p.loser.assay_id, p.loser.variant_id)] = p.loser
    rewards = simpo_rewards(policy, records.values(), structures, hp, score_span)
    hits = 0.0
    for p in pairs:
        rw = rewards[(p.winner.assay_id, p.winner.variant_id)]
        rl = rewards[(p.loser.assay_id, p.loser.variant_id)]
        hits += 1.0 if rw > rl else 0.5 if rw == rl else 0.0
    return hits / len(pairs)
