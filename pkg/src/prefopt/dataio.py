"""Assay tables, train/val/test splits, and the synthetic-oracle generator."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from prefopt.errors import DataValidationError, DomainError
from prefopt.ifmodel.structure import BackboneStructure, build_backbone, chain_residues, load_structure, save_structure
from prefopt.ifmodel.vocab import CANONICAL, VOCAB

ASSAY_COLUMNS = (
    "assay_id",
    "variant_id",
    "heavy_chain_seq",
    "antigen_seq",
    "binding_score",
    "score_type",
    "structure_id",
)
SCORE_TYPES = ("neg_log_kd", "log_enrichment")
WILDTYPE_ID = "WT"


@dataclass(frozen=True)
class VariantRecord:
    assay_id: str
    variant_id: str
    heavy_chain_seq: str
    antigen_seq: str
    binding_score: float
    score_type: str
    structure_id: str

    @property
    def key(self):
        return (self.assay_id, self.variant_id)

    @property
    def sequence(self):
        """Token stream scored by the model: heavy chain then antigen."""
        return self.heavy_chain_seq + self.antigen_seq


@dataclass
class AssayDataset:
    records: list
    structures: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def by_assay(self):
        groups = {}
        for r in self.records:
            groups.setdefault(r.assay_id, []).append(r)
        return groups

    @property
    def assay_ids(self):
        return list(self.by_assay())

    def index(self):
        return {r.key: r for r in self.records}

    def subset(self, keys):
        lookup = self.index()
        return AssayDataset([lookup[tuple(k)] for k in keys], self.structures)

    def wildtype_scores(self):
        """Binding score of each assay's wild-type record, when present.

        The wild type is the record whose heavy chain equals the structure's
        first-chain sequence (or whose variant_id is ``WT``).
        """
        out = {}
        for assay, recs in self.by_assay().items():
            for r in recs:
                structure = self.structures.get(r.structure_id)
                wt_heavy = structure.sequence[: structure.chain_lengths[0]] if structure else None
                if r.variant_id == WILDTYPE_ID or r.heavy_chain_seq == wt_heavy:
                    out[assay] = r.binding_score
                    break
        return out


# ------------------------------------------------------------------- loading


def _validate_row(row, line, problems, seen):
    letters = set(VOCAB.letters)
    for col in ("assay_id", "variant_id", "structure_id"):
        if not row[col]:
            problems.append(f"line {line}: {col}: empty")
    for col in ("heavy_chain_seq", "antigen_seq"):
        bad = sorted(set(row[col]) - letters)
        if bad:
            problems.append(f"line {line}: {col}: letters {''.join(bad)!r} not in vocabulary")
    if not row["heavy_chain_seq"]:
        problems.append(f"line {line}: heavy_chain_seq: empty")
    try:
        score = float(row["binding_score"])
        if not math.isfinite(score):
            raise ValueError
    except ValueError:
        problems.append(f"line {line}: binding_score: not a finite number ({row['binding_score']!r})")
        score = None
    if row["score_type"] not in SCORE_TYPES:
        problems.append(f"line {line}: score_type: unknown value {row['score_type']!r}")
    key = (row["assay_id"], row["variant_id"])
    if key in seen:
        problems.append(f"line {line}: duplicate (assay_id, variant_id) {key} (first on line {seen[key]})")
    else:
        seen[key] = line
    return score


def load_assays(csv_path) -> AssayDataset:
    """Read and validate an assay CSV; any bad row aborts with a line-numbered report."""
    problems, records, seen = [], [], {}
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != ASSAY_COLUMNS:
            raise DataValidationError(
                f"{csv_path}: header must be exactly {','.join(ASSAY_COLUMNS)}", [f"line 1: header: {header}"]
            )
        for line, values in enumerate(reader, start=2):
            if not values:
                continue
            if len(values) != len(ASSAY_COLUMNS):
                problems.append(f"line {line}: expected {len(ASSAY_COLUMNS)} fields, got {len(values)}")
                continue
            row = dict(zip(ASSAY_COLUMNS, values))
            score = _validate_row(row, line, problems, seen)
            if score is not None:
                row["binding_score"] = score
                records.append(VariantRecord(**row))
    if problems:
        shown = "; ".join(problems[:5]) + (f"; ... {len(problems) - 5} more" if len(problems) > 5 else "")
        raise DataValidationError(f"{csv_path}: {len(problems)} invalid row(s): {shown}", problems)
    return AssayDataset(records)


def write_assays(dataset, csv_path):
    """Canonical form: fixed column order, shortest round-trip floats, LF line ends."""
    records = dataset.records if isinstance(dataset, AssayDataset) else dataset
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ASSAY_COLUMNS)
        for r in records:
            writer.writerow(
                [r.assay_id, r.variant_id, r.heavy_chain_seq, r.antigen_seq, repr(float(r.binding_score)),
                 r.score_type, r.structure_id]
            )


def check_structures(dataset):
    for r in dataset.records:
        s = dataset.structures.get(r.structure_id)
        if s is None:
            raise DataValidationError(f"{r.key}: structure {r.structure_id!r} not found")
        if len(r.sequence) != len(s):
            raise DataValidationError(
                f"{r.key}: sequence length {len(r.sequence)} does not match structure {s.id} ({len(s)} residues)"
            )
        if len(r.heavy_chain_seq) != s.chain_lengths[0]:
            raise DataValidationError(f"{r.key}: heavy chain length does not match first chain of {s.id}")


def load_dataset(directory) -> AssayDataset:
    """``assays.csv`` plus ``structures/<structure_id>.json`` from one directory."""
    directory = Path(directory)
    dataset = load_assays(directory / "assays.csv")
    for path in sorted((directory / "structures").glob("*.json")):
        s = load_structure(path)
        dataset.structures[s.id] = s
    check_structures(dataset)
    return dataset


def save_dataset(dataset, directory):
    directory = Path(directory)
    (directory / "structures").mkdir(parents=True, exist_ok=True)
    write_assays(dataset, directory / "assays.csv")
    for sid, s in sorted(dataset.structures.items()):
        save_structure(s, directory / "structures" / f"{sid}.json")


# -------------------------------------------------------------------- splits


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    mode: str = "supervised"
    seed: int = 0
    holdout_assays: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def to_manifest(self):
        return {
            "mode": self.mode,
            "seed": self.seed,
            "holdout_assays": list(self.holdout_assays),
            "train": [list(k) for k in self.train],
            "val": [list(k) for k in self.val],
            "test": [list(k) for k in self.test],
        }

    @classmethod
    def from_manifest(cls, doc):
        to_keys = lambda xs: [tuple(x) for x in xs]  # noqa: E731
        return cls(to_keys(doc["train"]), to_keys(doc["val"]), to_keys(doc["test"]), doc["mode"], doc["seed"],
                   list(doc.get("holdout_assays", [])))


def save_split(split, path):
    Path(path).write_text(json.dumps(split.to_manifest(), indent=1) + "\n")


def load_split(path):
    return DatasetSplit.from_manifest(json.loads(Path(path).read_text()))


def _floor_share(ratio, n):
    return math.floor(Fraction(str(ratio)) * n)


def split_supervised(dataset, ratios=(0.6, 0.3, 0.1), seed=0) -> DatasetSplit:
    """Per-assay permutation cut into train / test / validation.

    Cuts are ``floor(r_train n)`` and ``floor(r_test n)``; the remainder goes to
    validation. Assays with fewer than 3 rows go entirely to train (flagged).
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise DomainError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    split = DatasetSplit([], [], [], "supervised", seed)
    for assay, recs in dataset.by_assay().items():
        keys = [r.key for r in recs]
        n = len(keys)
        if n < 3:
            split.train.extend(keys)
            split.flags.append(f"{assay}: only {n} rows, all assigned to train")
            continue
        perm = rng.permutation(n)
        n_train, n_test = _floor_share(ratios[0], n), _floor_share(ratios[1], n)
        split.train.extend(keys[i] for i in perm[:n_train])
        split.test.extend(keys[i] for i in perm[n_train:n_train + n_test])
        split.val.extend(keys[i] for i in perm[n_train + n_test:])
    return split


def split_zero_shot(dataset, holdout_assays, val_fraction=0.15, seed=0) -> DatasetSplit:
    """Held-out assays go wholly to test; the rest split per assay into train/validation."""
    holdout = list(dict.fromkeys(holdout_assays))
    if not holdout:
        raise DomainError("zero-shot split needs at least one held-out assay")
    groups = dataset.by_assay()
    unknown = [a for a in holdout if a not in groups]
    if unknown:
        raise DataValidationError(f"unknown holdout assay(s): {unknown}")
    rng = np.random.default_rng(seed)
    split = DatasetSplit([], [], [], "zero_shot", seed, holdout)
    for assay, recs in groups.items():
        keys = [r.key for r in recs]
        if assay in holdout:
            split.test.extend(keys)
            continue
        perm = rng.permutation(len(keys))
        n_train = len(keys) - _floor_share(val_fraction, len(keys))
        split.train.extend(keys[i] for i in perm[:n_train])
        split.val.extend(keys[i] for i in perm[n_train:])
    lookup = dataset.index()
    test_structures = {lookup[k].structure_id for k in split.test}
    leaked = test_structures & {lookup[k].structure_id for k in split.train}
    if leaked:
        raise DataValidationError(f"zero-shot leak: structures {sorted(leaked)} appear in train and test")
    return split


# ----------------------------------------------------------------- synthetic


@dataclass
class SyntheticOracleConfig:
    seed: int = 0
    n_assays: int = 3
    variants_per_assay: object = 2000  # int, or one count per assay
    heavy_length: int = 24
    antigen_length: int = 12
    region_start: int = 8
    region_length: int = 8
    max_mutations: int = 5
    noise_sd: float = 0.05
    contact_cutoff: float = 8.0
    contact_scale: float = 0.25
    helix_jitter: float = 12.0
    baseline: float = 8.0
    include_wildtype: bool = True

    def __post_init__(self):
        if self.noise_sd < 0:
            raise DomainError("noise_sd must be >= 0")
        if self.region_start < 0 or self.region_start + self.region_length > self.heavy_length:
            raise DomainError("mutable region must lie inside the heavy chain")
        if self.max_mutations < 1 or self.region_length < 1:
            raise DomainError("region_length and max_mutations must be >= 1")

    def counts(self):
        if isinstance(self.variants_per_assay, int):
            return [self.variants_per_assay] * self.n_assays
        counts = [int(c) for c in self.variants_per_assay]
        if len(counts) != self.n_assays:
            raise DomainError("one variant count per assay required")
        return counts


@dataclass
class AssayOracle:
    """Hidden additive energy: position terms plus contact-pair terms on the mutable window."""

    wildtype: str
    region: list
    position_energy: np.ndarray  # (len(region), 20)
    contacts: list  # [(i, j, (20, 20) table)], stream positions
    baseline: float

    def energy(self, sequence):
        idx = [CANONICAL.index(c) for c in sequence]
        e = sum(self.position_energy[k, idx[p]] for k, p in enumerate(self.region))
        for i, j, table in self.contacts:
            e += table[idx[i], idx[j]]
        return float(e)

    def score(self, sequence):
        return self.baseline - self.energy(sequence)


@dataclass
class SyntheticOracle:
    assays: dict

    def score(self, assay_id, sequence):
        return self.assays[assay_id].score(sequence)


def _jittered_helix(rng, n, jitter):
    phi = -57.0 + rng.normal(0.0, jitter, n)
    psi = -47.0 + rng.normal(0.0, jitter, n)
    return build_backbone(phi, psi)


def synthetic_structure(structure_id, heavy_seq, antigen_seq, rng, jitter=12.0):
    heavy = _jittered_helix(rng, len(heavy_seq), jitter)
    antigen = _jittered_helix(rng, len(antigen_seq), jitter)
    ca_h = heavy[:, 1]
    center_h = ca_h.mean(axis=0)
    axis = np.linalg.svd(ca_h - center_h)[2][0]
    side = np.cross(axis, [0.0, 0.0, 1.0])
    if np.linalg.norm(side) < 1e-6:
        side = np.cross(axis, [0.0, 1.0, 0.0])
    side /= np.linalg.norm(side)
    ca_a = antigen[:, 1]
    axis_a = np.linalg.svd(ca_a - ca_a.mean(axis=0))[2][0]
    # rotate antigen axis onto the heavy axis, then park it 10 A to the side
    v, c = np.cross(axis_a, axis), float(np.dot(axis_a, axis))
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    rot = np.eye(3) + vx + vx @ vx / (1.0 + c) if c > -0.999 else -np.eye(3)
    placed = (antigen - ca_a.mean(axis=0)) @ rot.T + center_h + 10.0 * side
    residues = chain_residues("H", heavy, heavy_seq) + chain_residues("A", placed, antigen_seq)
    return BackboneStructure(structure_id, residues)


def _mutation_code(wildtype, sequence):
    return "+".join(f"{w}{i + 1}{m}" for i, (w, m) in enumerate(zip(wildtype, sequence)) if w != m)


def synth_generate(config: SyntheticOracleConfig = SyntheticOracleConfig()):
    """Structures, variant records scored by a hidden oracle, and the oracle itself."""
    rng = np.random.default_rng(config.seed)
    letters = np.array(list(CANONICAL))
    structures, records, oracles = {}, [], {}
    region_h = list(range(config.region_start, config.region_start + config.region_length))
    for a, count in enumerate(config.counts()):
        assay_id, sid = f"assay{a}", f"synth{a}"
        heavy = "".join(rng.choice(letters, config.heavy_length))
        antigen = "".join(rng.choice(letters, config.antigen_length))
        structure = synthetic_structure(sid, heavy, antigen, rng, config.helix_jitter)
        structures[sid] = structure

        ca = structure.atoms("CA")
        dist = np.linalg.norm(ca[:, None] - ca[None], axis=-1)
        contacts = []
        for i in range(len(structure)):
            for j in range(i + 2, len(structure)):
                if dist[i, j] < config.contact_cutoff and (i in region_h or j in region_h):
                    contacts.append((i, j, rng.normal(0.0, config.contact_scale, (20, 20))))
        oracle = AssayOracle(heavy + antigen, region_h, rng.normal(0.0, 1.0, (len(region_h), 20)), contacts,
                             config.baseline)
        oracles[assay_id] = oracle

        seen = {heavy}
        wanted = count - (1 if config.include_wildtype else 0)
        variants = []
        max_m = min(config.max_mutations, len(region_h))
        while len(variants) < wanted:
            m = int(rng.integers(1, max_m + 1))
            seq = list(heavy)
            for p in rng.choice(region_h, size=m, replace=False):
                options = [c for c in CANONICAL if c != heavy[p]]
                seq[p] = options[int(rng.integers(len(options)))]
            seq = "".join(seq)
            if seq not in seen:
                seen.add(seq)
                variants.append(seq)
        if config.include_wildtype:
            variants.insert(0, heavy)
        noise = rng.normal(0.0, config.noise_sd, len(variants)) if config.noise_sd > 0 else np.zeros(len(variants))
        for seq, eps in zip(variants, noise):
            vid = WILDTYPE_ID if seq == heavy else _mutation_code(heavy, seq)
            score = oracle.score(seq + antigen) + float(eps)
            records.append(VariantRecord(assay_id, vid, seq, antigen, score, "neg_log_kd", sid))
    return AssayDataset(records, structures), SyntheticOracle(oracles)


def config_dict(config):
    return asdict(config)
