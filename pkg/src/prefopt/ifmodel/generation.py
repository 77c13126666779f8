"""Mutable-pool construction and constrained variant sampling."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from prefopt.errors import DomainError, GenerationError
from prefopt.ifmodel.network import decode_logprobs, embed_structure
from prefopt.ifmodel.vocab import CANONICAL, VOCAB


def _region_positions(region_mask, n):
    region = np.asarray(list(region_mask) if not isinstance(region_mask, np.ndarray) else region_mask)
    if region.dtype == bool:
        if region.shape != (n,):
            raise DomainError(f"boolean region mask has shape {region.shape}, expected ({n},)")
        return sorted(np.flatnonzero(region).tolist())
    positions = sorted({int(p) for p in region.tolist()})
    if positions and (positions[0] < 0 or positions[-1] >= n):
        raise DomainError(f"region positions must lie in [0, {n})")
    return positions


def teacher_forced_rows(structure, wildtype, params):
    tokens = VOCAB.encode(wildtype, structure.id)
    emb = embed_structure(structure, params.detached())
    return tokens.tokens, decode_logprobs(emb, tokens, params)


def improving_tokens(rows, wt_tokens, positions):
    """Per position, the canonical tokens whose log-probability beats the wild type strictly."""
    out = {}
    for p in positions:
        wt = wt_tokens[p]
        better = [t for t in range(VOCAB.n_canonical) if t != wt and rows[p, t] > rows[p, wt]]
        if better:
            out[p] = better
    return out


def mutable_pool(structure, wildtype, region_mask, params):
    """Masked positions where some substitution scores strictly above the wild-type residue."""
    if len(wildtype) != len(structure):
        raise DomainError(f"wildtype length {len(wildtype)} does not match structure length {len(structure)}")
    positions = _region_positions(region_mask, len(structure))
    if not positions:
        return []
    wt, rows = teacher_forced_rows(structure, wildtype, params)
    return sorted(improving_tokens(rows, wt, positions))


@dataclass(frozen=True)
class Variant:
    sequence: str
    mutations: tuple  # ((position, wt_letter, mut_letter), ...)

    def code(self, structure):
        parts = []
        for pos, wt, mut in self.mutations:
            r = structure.residues[pos]
            parts.append(f"{r.chain_id}:{wt}{r.index}{mut}")
        return "+".join(parts)


@dataclass
class GenerationResult:
    variants: list
    pool: list
    exhausted: bool = False
    reachable: int = 0
    notes: list = field(default_factory=list)

    def __len__(self):
        return len(self.variants)

    def __iter__(self):
        return iter(self.variants)


def count_reachable(choice_counts, max_subs):
    """Number of distinct variants with 1..max_subs substitutions (elementary symmetric sums)."""
    e = [1] + [0] * max_subs
    for c in choice_counts:
        for s in range(max_subs, 0, -1):
            e[s] += e[s - 1] * c
    return sum(e[1:])


def _apply(wildtype, subs):
    seq = list(wildtype)
    muts = []
    for pos, tok in sorted(subs):
        muts.append((pos, wildtype[pos], CANONICAL[tok]))
        seq[pos] = CANONICAL[tok]
    return Variant("".join(seq), tuple(muts))


def generate_variants(structure, wildtype, region_mask, params, max_subs=5, n=1500, temperature=1.0, seed=0):
    """Sample distinct variants mutated only at mutable-pool positions.

    Each draw picks s uniformly in 1..max_subs, then s pool positions without
    replacement weighted by their best log-likelihood gain over the wild type,
    then a replacement per position among the improving tokens with
    probability proportional to exp(logp / temperature).
    """
    if max_subs < 1 or n < 1:
        raise DomainError("max_subs and n must be >= 1")
    if temperature <= 0:
        raise DomainError("temperature must be > 0")
    if len(wildtype) != len(structure):
        raise DomainError(f"wildtype length {len(wildtype)} does not match structure length {len(structure)}")
    positions = _region_positions(region_mask, len(structure))
    wt, rows = teacher_forced_rows(structure, wildtype, params)
    options = improving_tokens(rows, wt, positions)
    pool = sorted(options)
    if not pool:
        raise GenerationError("no admissible positions")

    gains = np.array([max(rows[p, t] for t in options[p]) - rows[p, wt[p]] for p in pool])
    token_probs = []
    for p in pool:
        logits = np.array([rows[p, t] for t in options[p]]) / temperature
        w = np.exp(logits - logits.max())
        token_probs.append(w / w.sum())

    top = min(max_subs, len(pool))
    reachable = count_reachable([len(options[p]) for p in pool], top)
    result = GenerationResult([], pool, reachable=reachable)

    if n >= reachable:
        for s in range(1, top + 1):
            for idx in itertools.combinations(range(len(pool)), s):
                for toks in itertools.product(*(options[pool[i]] for i in idx)):
                    result.variants.append(_apply(wildtype, [(pool[i], t) for i, t in zip(idx, toks)]))
        result.exhausted = n > reachable
        if result.exhausted:
            result.notes.append(f"requested {n} variants but only {reachable} are reachable")
        return result

    rng = np.random.default_rng(seed)
    weights = gains / gains.sum()
    seen = set()
    max_attempts = 50 * n + 1000
    attempts = 0
    while len(result.variants) < n and attempts < max_attempts:
        attempts += 1
        s = int(rng.integers(1, top + 1))
        chosen = rng.choice(len(pool), size=s, replace=False, p=weights)
        subs = []
        for i in chosen:
            t = options[pool[i]][int(rng.choice(len(options[pool[i]]), p=token_probs[i]))]
            subs.append((pool[i], t))
        variant = _apply(wildtype, subs)
        if variant.sequence in seen:
            continue
        seen.add(variant.sequence)
        result.variants.append(variant)
    if len(result.variants) < n:
        result.exhausted = True
        result.notes.append(f"sampling stopped after {attempts} draws with {len(result.variants)} distinct variants")
    return result
