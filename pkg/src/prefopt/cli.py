"""Batch command-line front end.

Every subcommand reads a JSON config (``--config``), applies ``--set key=value``
overrides, writes its outputs under ``<out>/tmp`` and promotes them into
``<out>`` only on success. Timestamps go to the ``run.log`` sidecar so primary
outputs are byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from prefopt import dataio, evalkit, paratope, screening
from prefopt.checkpoint import load_checkpoint, params_from_checkpoint, save_params
from prefopt.errors import ConfigError, DataValidationError, PrefoptError
from prefopt.ifmodel import generation
from prefopt.ifmodel.network import ModelDims, init_params, score_sequences
from prefopt.trainer import TrainConfig, train, write_metrics_csv

log = logging.getLogger("prefopt")

MODEL_DEFAULTS = {"d": 64, "heads": 4, "k": 8, "init": "normal", "init_seed": None}

DEFAULTS = {
    "synth": {
        "n_assays": 3,
        "variants_per_assay": 2000,
        "heavy_length": 24,
        "antigen_length": 12,
        "region_start": 8,
        "region_length": 8,
        "max_mutations": 5,
        "noise_sd": 0.05,
        "contact_cutoff": 8.0,
        "contact_scale": 0.25,
        "helix_jitter": 12.0,
        "baseline": 8.0,
        "include_wildtype": True,
        "paratope_cutoff": 10.0,
    },
    "train": {
        "epochs": 3,
        "batch_size": 32,
        "beta": 0.1,
        "gamma": 0.1,
        "pair_margin": 0.2,
        "max_pairs": 50_000,
        "lr": 1e-4,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "weight_decay": 0.01,
        "clip_grad_norm": None,
        "freeze": "encoder",
        "score_span": "full",
        "eval_every": 1,
        "split": {"mode": "supervised", "ratios": [0.6, 0.3, 0.1], "holdout_assays": [], "val_fraction": 0.15},
        "model": MODEL_DEFAULTS,
        "init_checkpoint": None,
        "resume_from": None,
    },
    "score": {"checkpoint": None, "model": MODEL_DEFAULTS, "score_span": "full"},
    "eval": {
        "checkpoint": None,
        "model": MODEL_DEFAULTS,
        "split": None,
        "subset": "test",
        "score_span": "full",
        "use": "mean_ll",
        "scores": None,
        "score_column": "model_score",
        "k": 10,
    },
    "generate": {
        "checkpoint": None,
        "model": MODEL_DEFAULTS,
        "structure_id": None,
        "region": {"chain": "H", "start": 9, "end": 16},
        "max_subs": 5,
        "n": 1500,
        "temperature": 1.0,
    },
    "screen": {
        "structure_id": None,
        "variants": None,
        "quantile": 0.2,
        "scores": None,
    },
    "paratope": {
        "checkpoint": None,
        "model": MODEL_DEFAULTS,
        "labels": None,
        "test_labels": None,
        "test_fraction": 0.3,
        "hidden": 64,
        "epochs": 300,
        "lr": 1e-2,
        "weight_decay": 0.0,
    },
}

NEEDS_DATA = {"train", "score", "eval", "generate", "screen", "paratope"}


# ------------------------------------------------------------- config


def _merge(defaults, given, where=""):
    out = copy.deepcopy(defaults)
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config key(s) {[where + k for k in unknown]}")
    for key, value in given.items():
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = _merge(defaults[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def _parse_override(text):
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    doc = value
    for part in reversed(key.split(".")):
        doc = {part: doc}
    return doc


def _deep_update(base, patch):
    for k, v in patch.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def resolve_config(command, args):
    if not args.config:
        raise ConfigError("--config is required", code="CFG001")
    try:
        given = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}", code="CFG001") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {args.config} is not valid JSON: {exc}", code="CFG001") from exc
    if not isinstance(given, dict):
        raise ConfigError("config must be a JSON object", code="CFG001")
    seed_in_file = given.pop("seed", None)
    for text in args.set or []:
        _deep_update(given, _parse_override(text))
    cfg = _merge(DEFAULTS[command], given)
    if args.seed is not None:
        seed = args.seed
    elif seed_in_file is not None:
        seed = seed_in_file
    else:
        seed = int(os.environ.get("PREFOPT_SEED", "0"))
    cfg["seed"] = int(seed)
    if command == "train":
        cfg["objective"] = args.objective
    return cfg


# ------------------------------------------------------------- run dir


class RunDir:
    """Stage outputs in ``out/tmp`` and move them into ``out`` on success."""

    def __init__(self, out):
        self.out = Path(out)
        self.tmp = self.out / "tmp"

    def __enter__(self):
        self.out.mkdir(parents=True, exist_ok=True)
        if self.tmp.exists():
            shutil.rmtree(self.tmp)
        self.tmp.mkdir()
        return self

    def path(self, name):
        p = self.tmp / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def promote(self):
        for item in sorted(self.tmp.iterdir()):
            target = self.out / item.name
            if target.is_dir() and item.is_dir():
                shutil.rmtree(target)
            os.replace(item, target)
        self.tmp.rmdir()

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.promote()
        return False


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _load_model(cfg):
    if cfg.get("checkpoint"):
        return params_from_checkpoint(load_checkpoint(cfg["checkpoint"]))
    m = cfg["model"]
    seed = cfg["seed"] if m["init_seed"] is None else m["init_seed"]
    return init_params(ModelDims(d=m["d"], heads=m["heads"], k=m["k"]), seed=seed, init=m["init"])


def _load_data(args):
    if not args.data:
        raise ConfigError("--data is required for this command", code="CFG001")
    return dataio.load_dataset(args.data)


# ------------------------------------------------------------- commands


def cmd_synth(cfg, args, run):
    keys = {k: v for k, v in cfg.items() if k not in ("paratope_cutoff",)}
    config = dataio.SyntheticOracleConfig(**keys)
    dataset, oracle = dataio.synth_generate(config)
    dataio.save_dataset(dataset, run.tmp)
    _write_json(run.path("oracle.json"), {
        assay: {
            "wildtype": o.wildtype,
            "region": list(o.region),
            "baseline": o.baseline,
            "position_energy": o.position_energy.tolist(),
            "contacts": [[i, j, t.tolist()] for i, j, t in o.contacts],
        }
        for assay, o in sorted(oracle.assays.items())
    })
    with open(run.path("paratope_labels.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(paratope.LABEL_COLUMNS)
        for sid, s in sorted(dataset.structures.items()):
            ca = s.atoms("CA")
            heavy = [i for i, r in enumerate(s.residues) if r.chain_id == s.chain_ids[0]]
            other = [i for i, r in enumerate(s.residues) if r.chain_id != s.chain_ids[0]]
            for i in heavy:
                near = np.min(np.linalg.norm(ca[other] - ca[i], axis=1)) < cfg["paratope_cutoff"]
                w.writerow((sid, s.residues[i].chain_id, s.residues[i].index, int(near)))
    log.info("synthesised %d records over %d assays", len(dataset), len(dataset.assay_ids))


def _make_split(dataset, cfg):
    sp = cfg["split"]
    if sp["mode"] == "supervised":
        return dataio.split_supervised(dataset, tuple(sp["ratios"]), cfg["seed"])
    if sp["mode"] == "zero_shot":
        return dataio.split_zero_shot(dataset, sp["holdout_assays"], sp["val_fraction"], cfg["seed"])
    raise ConfigError(f"split.mode must be supervised or zero_shot, got {sp['mode']!r}")


def cmd_train(cfg, args, run):
    dataset = _load_data(args)
    split = _make_split(dataset, cfg)
    dataio.save_split(split, run.path("split.json"))
    model_cfg = dict(cfg, checkpoint=cfg["init_checkpoint"])
    params = _load_model(model_cfg)
    save_params(run.path("initial.ckpt"), params, seed=cfg["seed"])
    skip = {"split", "model", "init_checkpoint", "resume_from"}
    tc = TrainConfig.from_dict({k: v for k, v in cfg.items() if k not in skip}
                               | {"checkpoint_dir": str(run.path("checkpoints"))})
    result = train(params, dataset, split, tc, resume_from=cfg["resume_from"])
    write_metrics_csv(result.metrics, run.path("metrics.csv"))
    save_params(run.path("final.ckpt"), params, seed=cfg["seed"], config_fingerprint=tc.fingerprint())
    _write_json(run.path("train_summary.json"), {
        "trainable_fraction": result.trainable_fraction,
        "best_val_spearman": result.best_val_spearman,
        "epochs": tc.epochs,
        "objective": tc.objective,
        "config_fingerprint": tc.fingerprint(),
    })


def _score_records(params, dataset, records, score_span):
    by_structure = {}
    for r in records:
        by_structure.setdefault(r.structure_id, []).append(r)
    out = {}
    for sid in sorted(by_structure):
        recs = by_structure[sid]
        sums, means = score_sequences(dataset.structures[sid], [r.sequence for r in recs], params, score_span)
        for r, s, m in zip(recs, sums, means):
            out[r.key] = (float(s), float(m))
    return out


def cmd_score(cfg, args, run):
    dataset = _load_data(args)
    params = _load_model(cfg)
    scores = _score_records(params, dataset, dataset.records, cfg["score_span"])
    with open(run.path("scores.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("assay_id", "variant_id", "sum_ll", "mean_ll"))
        for r in dataset.records:
            s, m = scores[r.key]
            w.writerow((r.assay_id, r.variant_id, repr(s), repr(m)))


def _read_model_scores(path, column):
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {"assay_id", "variant_id", column}
        if not needed <= set(reader.fieldnames or ()):
            raise DataValidationError(f"scores file needs columns {sorted(needed)}, got {reader.fieldnames}")
        for line, row in enumerate(reader, start=2):
            try:
                out[(row["assay_id"], row["variant_id"])] = float(row[column])
            except ValueError:
                raise DataValidationError(f"line {line}: {column} is not a number") from None
    return out


def cmd_eval(cfg, args, run):
    dataset = _load_data(args)
    if cfg["split"]:
        split = dataio.load_split(cfg["split"])
        keys = {"train": split.train, "val": split.val, "test": split.test}.get(cfg["subset"])
        if keys is None:
            raise ConfigError("subset must be train, val or test")
    else:
        keys = [r.key for r in dataset.records]
    if cfg["scores"]:
        scores = _read_model_scores(cfg["scores"], cfg["score_column"])
        missing = [k for k in keys if tuple(k) not in scores]
        if missing:
            raise DataValidationError(f"{len(missing)} evaluated record(s) have no model score, e.g. {missing[0]}")
    else:
        params = _load_model(cfg)
        lookup = dataset.index()
        scored = _score_records(params, dataset, [lookup[tuple(k)] for k in keys], cfg["score_span"])
        pick = 1 if cfg["use"] == "mean_ll" else 0
        scores = {k: v[pick] for k, v in scored.items()}
    rows = evalkit.report_from_tables(evalkit.ranked_tables(dataset, keys, scores), cfg["k"])
    evalkit.write_report_csv(rows, run.path("report.csv"))
    evalkit.write_report_json(rows, run.path("report.json"))


def _structure(dataset, cfg):
    sid = cfg["structure_id"] or (sorted(dataset.structures)[0] if dataset.structures else None)
    if sid not in dataset.structures:
        raise DataValidationError(f"unknown structure {sid!r}")
    return dataset.structures[sid]


def _region_positions(structure, region):
    if isinstance(region, list):
        return [structure.position_of(c, int(i)) for c, i in region]
    chain, start, end = region["chain"], int(region["start"]), int(region["end"])
    positions = [p for p, r in enumerate(structure.residues) if r.chain_id == chain and start <= r.index <= end]
    if not positions:
        raise DataValidationError(f"region {chain}{start}-{end} selects no residues of {structure.id}")
    return positions


def cmd_generate(cfg, args, run):
    dataset = _load_data(args)
    structure = _structure(dataset, cfg)
    params = _load_model(cfg)
    result = generation.generate_variants(
        structure, structure.sequence, _region_positions(structure, cfg["region"]), params,
        cfg["max_subs"], cfg["n"], cfg["temperature"], cfg["seed"],
    )
    with open(run.path("variants.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("variant_id", "sequence", "n_mutations"))
        for v in result.variants:
            w.writerow((v.code(structure), v.sequence, len(v.mutations)))
    _write_json(run.path("pool.json"), {
        "structure_id": structure.id,
        "pool": [[structure.residues[p].chain_id, structure.residues[p].index] for p in result.pool],
        "reachable": result.reachable,
        "exhausted": result.exhausted,
        "notes": result.notes,
    })


def _read_variants(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not {"variant_id", "sequence"} <= set(reader.fieldnames or ()):
            raise DataValidationError("variants file needs variant_id and sequence columns")
        return [(row["variant_id"], row["sequence"]) for row in reader]


def cmd_screen(cfg, args, run):
    dataset = _load_data(args)
    structure = _structure(dataset, cfg)
    if not cfg["variants"]:
        raise ConfigError("screen needs a 'variants' CSV (variant_id, sequence)")
    variants = _read_variants(cfg["variants"])
    registry = screening.surrogate_scorers(cfg["seed"])
    if cfg["scores"]:
        registry.update(screening.ScoresTableScorer.from_csv(cfg["scores"]))
    config = screening.PipelineConfig(quantile=cfg["quantile"], seed=cfg["seed"])
    result = screening.run_pipeline(variants, structure, registry, config)
    screening.write_panel_json(result, run.path("panel.json"))
    screening.write_scores_csv(result, run.path("scores.csv"))


def cmd_paratope(cfg, args, run):
    dataset = _load_data(args)
    params = _load_model(cfg)
    if not cfg["labels"]:
        raise ConfigError("paratope needs a 'labels' CSV")
    labels = paratope.load_labels(cfg["labels"], dataset.structures)
    if cfg["test_labels"]:
        train_labels = labels
        test_labels = paratope.load_labels(cfg["test_labels"], dataset.structures)
    else:
        ids = sorted(labels)
        order = np.random.default_rng(cfg["seed"]).permutation(len(ids))
        n_test = max(1, int(round(cfg["test_fraction"] * len(ids)))) if len(ids) > 1 else 0
        test_ids = {ids[i] for i in order[:n_test]}
        train_labels = {k: v for k, v in labels.items() if k not in test_ids}
        test_labels = {k: v for k, v in labels.items() if k in test_ids} or labels
    train_set = paratope.labeled_examples(params, dataset.structures, train_labels)
    test_set = paratope.labeled_examples(params, dataset.structures, test_labels)
    head = paratope.init_head(params.dims.d, cfg["hidden"], cfg["seed"])
    fit = paratope.train_head(train_set, head, cfg["epochs"], cfg["lr"], cfg["weight_decay"], base_params=params)
    ev = paratope.evaluate_head(fit.head, test_set)
    paratope.save_head(run.path("head.ckpt"), fit.head, seed=cfg["seed"])
    with open(run.path("loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "loss"))
        for i, v in enumerate(fit.losses, start=1):
            w.writerow((i, repr(v)))
    scores = np.concatenate([paratope.head_forward(e.embeddings, fit.head)[e.labels.mask == 1] for e in test_set])
    truth = np.concatenate([e.labels.labels[e.labels.mask == 1] for e in test_set]).astype(int)
    evalkit.write_roc_csv(truth, scores, run.path("roc.csv"))
    evalkit.write_pr_csv(truth, scores, run.path("pr.csv"))
    _write_json(run.path("metrics.json"), {
        "roc_auc": ev.roc_auc,
        "average_precision": ev.average_precision,
        "train_antibodies": sorted(train_labels),
        "test_antibodies": sorted(test_labels),
        "base_model_digest": params.digest(),
    })


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "score": cmd_score,
    "eval": cmd_eval,
    "generate": cmd_generate,
    "screen": cmd_screen,
    "paratope": cmd_paratope,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"usage: {message}", code="CFG003")


def build_parser():
    parser = _Parser(prog="prefopt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--data", help="dataset directory (assays.csv + structures/)")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--seed", type=int, default=None, help="overrides config and PREFOPT_SEED")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, dotted keys allowed")
        if name == "train":
            p.add_argument("--objective", required=True, choices=("nll", "dpo", "simpo"))
    return parser


def _attach_log(out):
    Path(out).mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(Path(out) / "run.log", mode="a")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    return handler


def main(argv=None):
    handler = None
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args.command, args)
        if args.command in NEEDS_DATA and not args.data:
            raise ConfigError("--data is required for this command", code="CFG001")
        handler = _attach_log(args.out)
        log.info("prefopt %s: %s", args.command, json.dumps(cfg, sort_keys=True))
        with RunDir(args.out) as run:
            _write_json(run.path("resolved_config.json"), {"command": args.command, **cfg})
            COMMANDS[args.command](cfg, args, run)
        return 0
    except PrefoptError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        problems = getattr(exc, "problems", None)
        for p in problems or []:
            print(f"  {p}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ERROR DAT002: cannot read input: {exc}", file=sys.stderr)
        return 2
    except (TypeError, KeyError) as exc:
        print(f"ERROR CFG002: invalid configuration value: {exc}", file=sys.stderr)
        return 2
    finally:
        if handler is not None:
            logging.getLogger().removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
