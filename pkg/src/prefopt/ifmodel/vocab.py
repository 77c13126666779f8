from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from prefopt.errors import DataValidationError

CANONICAL = "ACDEFGHIKLMNPQRSTVWY"
UNK, BOS, PAD = "<unk>", "<bos>", "<pad>"
UNK_LETTER = "X"


class Vocabulary:
    """20 canonical residues followed by UNK, BOS and PAD (23 symbols)."""

    def __init__(self):
        self.tokens = tuple(CANONICAL) + (UNK, BOS, PAD)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        self.unk = self.index[UNK]
        self.bos = self.index[BOS]
        self.pad = self.index[PAD]
        self.n_canonical = len(CANONICAL)

    def __len__(self):
        return len(self.tokens)

    @property
    def letters(self):
        return CANONICAL + UNK_LETTER

    def encode(self, sequence: str, structure_id="") -> "TokenizedSequence":
        ids = []
        for pos, ch in enumerate(sequence):
            if ch in CANONICAL:
                ids.append(self.index[ch])
            elif ch == UNK_LETTER:
                ids.append(self.unk)
            else:
                raise DataValidationError(f"residue {ch!r} at position {pos} is not in the vocabulary")
        return TokenizedSequence(np.asarray(ids, dtype=np.int64), structure_id)

    def decode(self, tokens) -> str:
        out = []
        for t in tokens:
            t = int(t)
            if t < self.n_canonical:
                out.append(CANONICAL[t])
            elif t == self.unk:
                out.append(UNK_LETTER)
            else:
                raise DataValidationError(f"special token {self.tokens[t]} cannot be decoded to a residue")
        return "".join(out)


VOCAB = Vocabulary()


@dataclass(frozen=True)
class TokenizedSequence:
    tokens: np.ndarray
    structure_id: str = ""

    @property
    def length(self):
        return int(np.count_nonzero(self.tokens < VOCAB.bos))
