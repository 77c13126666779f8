"""The miniature inverse-folding network.

Encoder: linear projection of the geometry features followed by one
k-nearest-neighbour mean-mixing layer, giving residue embeddings E (n x d).

Decoder: row i is ``[token_embedding(y_{i-1}) || E_i]`` (BOS at i = 0), passed
through an input projection, one causal multi-head self-attention block with a
residual connection and tanh, then the output head ``W h + b`` and a
log-softmax over the vocabulary.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from prefopt import autodiff as ad
from prefopt.errors import DataValidationError, DimensionError, DomainError
from prefopt.ifmodel.features import N_ANGLE_FEATURES, Features, featurize
from prefopt.ifmodel.vocab import VOCAB, TokenizedSequence

DISTANCE_SCALE = 10.0
STD_FLOOR = 0.05
SCORE_SPANS = ("full", "antibody_only")


@dataclass(frozen=True)
class ModelDims:
    d: int = 64
    heads: int = 4
    vocab_size: int = len(VOCAB)
    k: int = 8

    def __post_init__(self):
        if self.d % self.heads:
            raise DimensionError(f"embedding width {self.d} not divisible by {self.heads} heads")
        if self.vocab_size != len(VOCAB):
            raise DimensionError(f"vocab_size must be {len(VOCAB)}")

    @property
    def feature_width(self):
        return N_ANGLE_FEATURES + self.k

    def shapes(self):
        """Parameter shapes per group, in a fixed order."""
        d, v, f = self.d, self.vocab_size, self.feature_width
        encoder = {
            "enc.feat_w": (f, d),
            "enc.feat_b": (d,),
            "enc.mix_self": (d, d),
            "enc.mix_nbr": (d, d),
            "enc.mix_b": (d,),
        }
        decoder = {
            "dec.tok_emb": (v, d),
            "dec.in_w": (2 * d, d),
            "dec.in_b": (d,),
            "dec.attn_q": (d, d),
            "dec.attn_k": (d, d),
            "dec.attn_v": (d, d),
            "dec.attn_o": (d, d),
            "dec.out_w": (d, v),
            "dec.out_b": (v,),
        }
        return encoder, decoder


class ModelParameters:
    """Named tensors split into an encoder group and a decoder group."""

    def __init__(self, dims: ModelDims, encoder: dict, decoder: dict):
        self.dims = dims
        self.encoder = dict(encoder)
        self.decoder = dict(decoder)
        overlap = set(self.encoder) & set(self.decoder)
        if overlap:
            raise DataValidationError(f"parameter names in both groups: {sorted(overlap)}")
        enc_shapes, dec_shapes = dims.shapes()
        for group, shapes in ((self.encoder, enc_shapes), (self.decoder, dec_shapes)):
            if set(group) != set(shapes):
                raise DimensionError(f"parameter names {sorted(group)} do not match {sorted(shapes)}")
            for name, shape in shapes.items():
                if group[name].shape != shape:
                    raise DimensionError(f"parameter {name}: shape {group[name].shape}, expected {shape}")

    def named(self):
        out = dict(self.encoder)
        out.update(self.decoder)
        return out

    def __getitem__(self, name):
        return self.encoder[name] if name in self.encoder else self.decoder[name]

    def group_of(self, name):
        if name in self.encoder:
            return "encoder"
        if name in self.decoder:
            return "decoder"
        raise KeyError(name)

    def size(self, names=None):
        named = self.named()
        names = named if names is None else names
        return int(np.sum([named[n].size for n in names], dtype=np.int64))

    def copy(self, requires_grad=None):
        def clone(t):
            rg = t.requires_grad if requires_grad is None else requires_grad
            return ad.Tensor(t.data.copy(), requires_grad=rg)

        return ModelParameters(
            self.dims,
            {k: clone(t) for k, t in self.encoder.items()},
            {k: clone(t) for k, t in self.decoder.items()},
        )

    def detached(self):
        """Gradient-free view sharing the underlying arrays."""
        wrap = lambda t: ad.Tensor._result(t.data, "leaf", (), None)  # noqa: E731
        return ModelParameters(
            self.dims,
            {k: wrap(t) for k, t in self.encoder.items()},
            {k: wrap(t) for k, t in self.decoder.items()},
        )

    def set_trainable(self, frozen_names):
        for name, t in self.named().items():
            t.requires_grad = name not in frozen_names

    def arrays(self):
        return {k: t.data for k, t in self.named().items()}

    def digest(self, group=None):
        """SHA-256 over names, shapes and raw float64 bytes."""
        items = {"encoder": self.encoder, "decoder": self.decoder}.get(group) if group else self.named()
        h = hashlib.sha256()
        for name in sorted(items):
            arr = np.ascontiguousarray(items[name].data, dtype="<f8")
            h.update(name.encode())
            h.update(repr(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    def dims_dict(self):
        return asdict(self.dims)


def init_params(dims: ModelDims = ModelDims(), seed=0, init="normal") -> ModelParameters:
    """Seeded parameters: N(0, 1/fan_in) weights and zero biases, or all zeros."""
    if init not in ("normal", "zeros"):
        raise DomainError(f"unknown init {init!r}")
    rng = np.random.default_rng(seed)
    groups = []
    for shapes in dims.shapes():
        group = {}
        for name, shape in shapes.items():
            if init == "zeros" or len(shape) == 1:
                value = np.zeros(shape)
            else:
                value = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
            group[name] = ad.Tensor(value, requires_grad=True)
        groups.append(group)
    return ModelParameters(dims, *groups)


# ------------------------------------------------------------------ encoder


def _neighbor_mean_matrix(neighbors):
    n = neighbors.shape[0]
    m = np.zeros((n, n))
    for i, row in enumerate(neighbors):
        valid = row[row >= 0]
        if valid.size:
            m[i, valid] = 1.0 / valid.size
    return m


def standardize_columns(x):
    """Centre each feature column over the structure and scale it by max(std, STD_FLOOR)."""
    return (x - x.mean(axis=0)) / np.maximum(x.std(axis=0), STD_FLOOR)


def encode(features: Features, params: ModelParameters) -> ad.Tensor:
    """Residue embeddings E (n x d) from geometry features."""
    width = params.dims.feature_width
    if features.matrix.shape[1] != width:
        raise DimensionError(f"encode: feature width {features.matrix.shape[1]} does not match encoder input {width}")
    x = features.matrix.copy()
    x[:, N_ANGLE_FEATURES:] = np.exp(-x[:, N_ANGLE_FEATURES:] / DISTANCE_SCALE)
    x = standardize_columns(x)
    p = params.encoder
    proj = ad.matmul(ad.Tensor(x), p["enc.feat_w"]) + p["enc.feat_b"]
    mixed = ad.matmul(ad.Tensor(_neighbor_mean_matrix(features.neighbors)), proj)
    pre = ad.matmul(proj, p["enc.mix_self"]) + ad.matmul(mixed, p["enc.mix_nbr"]) + p["enc.mix_b"]
    return ad.tanh(pre)


def embed_structure(structure, params: ModelParameters) -> ad.Tensor:
    return encode(featurize(structure, k=params.dims.k), params)


# ------------------------------------------------------------------ decoder


def _check_tokens(tokens, n):
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.shape[1] != n:
        raise DimensionError(f"decode: {tokens.shape[1]} tokens for {n} structure positions")
    if np.any(tokens == VOCAB.pad):
        raise DataValidationError("decode: PAD token inside the scored span")
    if np.any((tokens < 0) | (tokens >= VOCAB.bos)):
        raise DataValidationError("decode: special or out-of-range token inside the sequence")
    return tokens


def decoder_forward(embeddings: ad.Tensor, tokens, params: ModelParameters):
    """Teacher-forced decoder pass.

    ``tokens`` is a (B, n) integer array. Returns ``(hidden, logprobs)`` with
    shapes (B, n, d) and (B, n, vocab).
    """
    n, d = embeddings.shape
    tokens = _check_tokens(tokens, n)
    b = tokens.shape[0]
    heads = params.dims.heads
    dh = d // heads
    p = params.decoder

    prev = np.concatenate([np.full((b, 1), VOCAB.bos), tokens[:, :-1]], axis=1)
    rows = ad.concat([ad.gather_rows(p["dec.tok_emb"], prev), ad.broadcast_to(embeddings, (b, n, d))])
    z = ad.matmul(rows, p["dec.in_w"]) + p["dec.in_b"]

    def split_heads(t):
        return ad.swapaxes(ad.reshape(t, (b, n, heads, dh)), 1, 2)

    q = split_heads(ad.matmul(z, p["dec.attn_q"]))
    k = split_heads(ad.matmul(z, p["dec.attn_k"]))
    v = split_heads(ad.matmul(z, p["dec.attn_v"]))
    scores = ad.causal_mask(ad.scale(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / np.sqrt(dh)))
    attended = ad.matmul(ad.softmax(scores), v)
    merged = ad.reshape(ad.swapaxes(attended, 1, 2), (b, n, d))
    hidden = ad.tanh(z + ad.matmul(merged, p["dec.attn_o"]))
    logits = ad.matmul(hidden, p["dec.out_w"]) + p["dec.out_b"]
    return hidden, ad.log_softmax(logits)


def decode_logprobs(embeddings: ad.Tensor, tokens: TokenizedSequence, params: ModelParameters) -> np.ndarray:
    """Per-position log-probability rows (|y| x vocab) for one sequence."""
    _, logp = decoder_forward(embeddings, tokens.tokens, params.detached())
    return logp.data[0]


def span_mask(structure, score_span="full"):
    if score_span not in SCORE_SPANS:
        raise DomainError(f"score_span must be one of {SCORE_SPANS}, got {score_span!r}")
    mask = np.ones(len(structure))
    if score_span == "antibody_only":
        mask[structure.chain_lengths[0]:] = 0.0
    return mask


def token_loglik(embeddings, tokens, params, mask):
    """Sum and mean log-likelihood over masked positions for a (B, n) token batch."""
    tokens = _check_tokens(tokens, embeddings.shape[0])
    _, logp = decoder_forward(embeddings, tokens, params)
    per_pos = ad.pick(logp, tokens)
    total = ad.sum(ad.mul(per_pos, ad.Tensor(mask)), axis=1)
    return total, ad.scale(total, 1.0 / float(mask.sum()))


class LogLik(NamedTuple):
    sum_ll: float
    mean_ll: float


def tokenize(sequence, structure_id=""):
    if isinstance(sequence, TokenizedSequence):
        return sequence
    return VOCAB.encode(sequence, structure_id)


def sequence_loglik(structure, sequence, params: ModelParameters, score_span="full", embeddings=None) -> LogLik:
    seq = tokenize(sequence, structure.id)
    if seq.tokens.size == 0:
        raise DataValidationError("sequence_loglik: empty sequence")
    frozen = params.detached()
    if embeddings is None:
        embeddings = embed_structure(structure, frozen)
    total, avg = token_loglik(embeddings.detach(), seq.tokens[None, :], frozen, span_mask(structure, score_span))
    return LogLik(float(total.data[0]), float(avg.data[0]))


def score_sequences(structure, sequences, params: ModelParameters, score_span="full", chunk=256):
    """Vectorised (sum_ll, mean_ll) arrays for many sequences on one structure."""
    frozen = params.detached()
    emb = embed_structure(structure, frozen)
    mask = span_mask(structure, score_span)
    toks = np.stack([tokenize(s, structure.id).tokens for s in sequences]) if len(sequences) else np.zeros((0, len(structure)), dtype=np.int64)
    sums, means = [], []
    for start in range(0, toks.shape[0], chunk):
        total, avg = token_loglik(emb, toks[start:start + chunk], frozen, mask)
        sums.append(total.data)
        means.append(avg.data)
    if not sums:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(sums), np.concatenate(means)
