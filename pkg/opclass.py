"""
opclass - opcode-frequency malware classification pipeline.

Subcommands:
    extract   .asm listings -> opcode-count dataset CSV + master list
    synth     synthetic two-class opcode-count corpus
    balance   ADASYN oversampling of a dataset CSV
    reduce    fit or apply a feature reducer (none / vt / ae1 / ae3)
    train     train a classifier (rf / dnn2 / dnn4 / dnn7)
    predict   score a dataset with a saved classifier
    evaluate  cross-validated reducer x classifier grid
    run       whole pipeline from a TOML experiment config

Run with:
    python opclass.py run configs/synth.toml
"""

import argparse
import csv
import logging
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

import config
from utilities import featurize
from utilities.balance import AdasynConfig, adasyn, write_audit
from utilities.disasm_ingest import (
    build_master_list,
    histogram,
    parse_directory,
    read_master_list,
    write_master_list,
    zero_frequency_opcodes,
)
from utilities.errors import ConfigError, DataError, OpclassError
from utilities.evaluate import COUNT_SPACE_REDUCERS, REDUCER_KINDS, ExperimentSettings, run_experiment
from utilities.experiment_config import load_config
from utilities.models import (
    CLASSIFIER_ALIASES,
    CLASSIFIER_KINDS,
    DnnSpec,
    RandomForestConfig,
    load_classifier,
    predict,
    save_classifier,
    train_dnn,
    train_random_forest,
)
from utilities.neural import TrainConfig, write_trace
from utilities.reduce import ReducerSpec, apply_dataset, fit, load_reducer, save_reducer
from utilities.report import write_report
from utilities.seeds import config_hash, derive_seed, provenance_line

logger = logging.getLogger(__name__)

# short reducer names accepted on the command line
REDUCER_ALIASES = {"none": "none", "vt": "variance_threshold", "ae1": "ae_1l", "ae3": "ae_3l"}

# output locations do not change results, so they stay out of the config hash
OUTPUT_ARGS = {"out", "master_out", "audit", "trace", "func", "verbose", "jobs"}


# ============================================================================
# Helpers
# ============================================================================

def setup_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else getattr(logging, config.LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(level=level, format=config.LOG_FORMAT, force=True)


def master_seed(args) -> int:
    return config.MASTER_SEED if args.seed is None else args.seed


def jobs(args) -> int:
    return config.JOBS if args.jobs is None else args.jobs


def header_for(args) -> str:
    """Provenance line for every file a subcommand writes."""
    params = {k: v for k, v in sorted(vars(args).items()) if k not in OUTPUT_ARGS}
    params["seed"] = master_seed(args)
    return provenance_line(config_hash(params), master_seed(args))


def ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def extract_dataset(asm_dir: str, labels_path: Optional[str], master_path: Optional[str], n_jobs: int):
    """
    Parse listings, build (or load) the master list and assemble the dataset.

    Returns:
        Tuple of (LabeledDataset, MasterOpcodeList)
    """
    sequences, _excluded = parse_directory(asm_dir, n_jobs)
    master = read_master_list(master_path) if master_path else build_master_list(sequences)
    vectors = [histogram(seq, master) for seq in sequences]
    if labels_path:
        labels = featurize.read_labels(labels_path)
    else:
        labels = featurize.labels_from_layout([seq.file_id for seq in sequences])
    dataset = featurize.assemble(vectors, labels, master.opcodes)
    unused = zero_frequency_opcodes(master, vectors)
    if unused:
        logger.info(f"[INGEST] {len(unused)} master-list opcodes never occur: {', '.join(unused)}")
    counts = dataset.class_counts()
    logger.info(f"[INGEST] Dataset {dataset.n_rows}x{dataset.n_columns}, class counts {counts}")
    return dataset, master


def train_config(args, component: str) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=derive_seed(master_seed(args), component),
    )


# ============================================================================
# Subcommands
# ============================================================================

def cmd_extract(args) -> int:
    dataset, master = extract_dataset(args.asm_dir, args.labels, args.master, jobs(args))
    header = header_for(args)
    featurize.persist(dataset, args.out, header)
    if args.master_out:
        ensure_parent(args.master_out)
        write_master_list(master, args.master_out, header)
    logger.info(f"[CLI] Wrote {args.out}")
    return 0


def cmd_synth(args) -> int:
    dataset = featurize.synth_corpus(
        args.minority, args.majority, args.opcodes, args.sep, master_seed(args), args.row_total
    )
    featurize.persist(dataset, args.out, header_for(args))
    logger.info(f"[CLI] Wrote {dataset.n_rows} synthetic rows to {args.out}")
    return 0


def cmd_balance(args) -> int:
    dataset = featurize.load(args.input)
    audit = [] if args.audit else None
    balanced = adasyn(dataset, AdasynConfig(k=args.k, beta=args.beta, seed=master_seed(args)), audit)
    header = header_for(args)
    featurize.persist(balanced, args.out, header)
    if args.audit:
        ensure_parent(args.audit)
        write_audit(audit, args.audit, header)
    logger.info(f"[CLI] Wrote {balanced.n_rows} rows to {args.out}")
    return 0


def cmd_reduce(args) -> int:
    dataset = featurize.load(args.input)
    if args.fit:
        spec = ReducerSpec(
            kind=REDUCER_ALIASES[args.kind],
            threshold=args.threshold,
            train=train_config(args, "reducer"),
        )
        model = fit(spec, dataset.matrix)
        ensure_parent(args.model)
        save_reducer(model, args.model)
        logger.info(f"[CLI] Saved {model.kind} reducer to {args.model}")
    else:
        model = load_reducer(args.model)
    if args.out:
        featurize.persist(apply_dataset(model, dataset), args.out, header_for(args))
        logger.info(f"[CLI] Wrote reduced features to {args.out}")
    return 0


def cmd_train(args) -> int:
    if args.prior is not None and not 0.0 < args.prior < 1.0:
        raise ConfigError(f"--prior must lie strictly between 0 and 1, got {args.prior}")
    dataset = featurize.load(args.input)
    reducer = load_reducer(args.reducer) if args.reducer else None
    if reducer is not None:
        dataset = apply_dataset(reducer, dataset)
    kind = CLASSIFIER_ALIASES[args.model]
    if kind == "rf":
        classifier = train_random_forest(dataset, RandomForestConfig(n_trees=args.trees, seed=master_seed(args)))
    else:
        count_space = reducer is None or reducer.kind in COUNT_SPACE_REDUCERS
        classifier = train_dnn(
            dataset,
            DnnSpec(depth=kind, dropout=args.dropout),
            train_config(args, "classifier"),
            log_transform=count_space,
        )
    classifier.reducer = reducer
    classifier.target_share = args.prior
    ensure_parent(args.out)
    save_classifier(classifier, args.out)
    if args.trace and classifier.trace is not None:
        ensure_parent(args.trace)
        write_trace(classifier.trace, args.trace, header_for(args))
    logger.info(f"[CLI] Saved {kind} classifier to {args.out}")
    return 0


def cmd_predict(args) -> int:
    dataset = featurize.load(args.input)
    classifier = load_classifier(args.model)
    if classifier.reducer is not None:
        dataset = apply_dataset(classifier.reducer, dataset)
    proba, labels = predict(classifier, dataset.matrix)
    ensure_parent(args.out)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        f.write(header_for(args) + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["row_id", "proba", "label"])
        for row_id, p, label in zip(dataset.row_ids, proba, labels):
            writer.writerow([row_id, repr(float(p)), int(label)])
    logger.info(f"[CLI] Scored {dataset.n_rows} rows -> {args.out}")
    return 0


def parse_grid(value: str, choices, aliases=None) -> List[str]:
    if value == "all":
        return list(choices)
    names = [v.strip() for v in value.split(",") if v.strip()]
    aliases = aliases or {}
    resolved = [aliases.get(n, n) for n in names]
    unknown = [n for n in resolved if n not in choices]
    if unknown:
        raise ConfigError(f"unknown grid entries {unknown}; choose from {list(choices)}")
    return resolved


def cmd_evaluate(args) -> int:
    dataset = featurize.load(args.input)
    reducers = parse_grid(args.reducers or args.grid, REDUCER_KINDS, REDUCER_ALIASES)
    classifiers = parse_grid(args.classifiers or args.grid, CLASSIFIER_KINDS, CLASSIFIER_ALIASES)
    settings = ExperimentSettings(
        seed=master_seed(args),
        folds=args.folds,
        stratified=args.stratified,
        jobs=jobs(args),
        adasyn=AdasynConfig(k=args.k, beta=args.beta),
        vt_threshold=args.threshold,
        autoencoder=TrainConfig(batch_size=args.batch_size, epochs=args.epochs),
        dnn=TrainConfig(batch_size=args.batch_size, epochs=args.epochs),
        dnn_dropout=args.dropout,
        forest=RandomForestConfig(n_trees=args.trees),
        prior_correction=not args.no_prior_correction,
    )
    report = run_experiment(dataset, reducers, classifiers, settings)
    write_report(report, args.out, header_for(args))
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    n_jobs = cfg.jobs if args.jobs is None else args.jobs
    out_dir = args.out or cfg.paths.output_dir
    header = provenance_line(cfg.model_copy(update={"seed": seed}).hash(), seed)
    logger.info(f"[CLI] Config {args.config} (seed {seed}, jobs {n_jobs}) -> {out_dir}")

    os.makedirs(out_dir, exist_ok=True)
    if cfg.paths.asm_dir:
        dataset, master = extract_dataset(cfg.paths.asm_dir, cfg.paths.labels, None, n_jobs)
        write_master_list(master, os.path.join(out_dir, "master.txt"), header)
    elif cfg.paths.dataset:
        dataset = featurize.load(cfg.paths.dataset)
    else:
        s = cfg.synth
        dataset = featurize.synth_corpus(
            s.minority, s.majority, s.opcodes, s.separation, derive_seed(seed, "synth"), s.row_total
        )
    featurize.persist(dataset, os.path.join(out_dir, "dataset.csv"), header)

    report = run_experiment(dataset, cfg.grid.reducers, cfg.grid.classifiers, cfg.settings(seed, n_jobs))
    write_report(report, out_dir, header)
    return 0


# ============================================================================
# Argument parsing
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"master seed (default {config.MASTER_SEED})")
    common.add_argument("--jobs", type=int, default=None, help="worker threads (default 1)")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="opclass", description="Opcode-frequency malware classification")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="listings -> dataset CSV")
    p.add_argument("--asm-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--master-out", default=None, help="write the master opcode list here")
    p.add_argument("--master", default=None, help="use an existing master opcode list")
    p.add_argument("--labels", default=None, help="file_id,label CSV (default: malware/ and benign/ subdirs)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", parents=[common], help="synthetic corpus")
    p.add_argument("--minority", type=int, default=200)
    p.add_argument("--majority", type=int, default=800)
    p.add_argument("--opcodes", type=int, default=50)
    p.add_argument("--sep", type=float, default=0.9)
    p.add_argument("--row-total", type=int, default=config.SYNTH_ROW_TOTAL)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("balance", parents=[common], help="ADASYN oversampling")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=config.ADASYN_K)
    p.add_argument("--beta", type=float, default=config.ADASYN_BETA)
    p.add_argument("--audit", default=None, help="synthetic_row_id,parent_a,parent_b,lambda CSV")
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("reduce", parents=[common], help="fit or apply a reducer")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--fit", action="store_true")
    mode.add_argument("--apply", action="store_true")
    p.add_argument("--kind", choices=sorted(REDUCER_ALIASES), default="none")
    p.add_argument("--threshold", type=float, default=config.VT_THRESHOLD)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--model", required=True, help="reducer file (written by --fit, read by --apply)")
    p.add_argument("--out", default=None, help="reduced dataset CSV")
    p.add_argument("--epochs", type=int, default=config.EPOCHS)
    p.add_argument("--batch-size", type=int, default=config.BATCH_SIZE)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("train", parents=[common], help="train a classifier")
    p.add_argument("--model", choices=sorted(CLASSIFIER_ALIASES), required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--reducer", default=None, help="fitted reducer applied before training")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None, help="loss trace CSV (DNN only)")
    p.add_argument("--trees", type=int, default=config.RF_TREES)
    p.add_argument("--dropout", type=float, default=config.DNN_DROPOUT)
    p.add_argument("--epochs", type=int, default=config.EPOCHS)
    p.add_argument(
        "--prior",
        type=float,
        default=None,
        help="malware share to shift scores toward (e.g. the share before balancing)",
    )
    p.add_argument("--batch-size", type=int, default=config.BATCH_SIZE)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="score rows with a saved classifier")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="cross-validated grid")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--grid", default="all", help="'all' or used for both axes")
    p.add_argument("--reducers", default=None, help="comma list, e.g. none,vt")
    p.add_argument("--classifiers", default=None, help="comma list, e.g. rf,dnn2")
    p.add_argument("--folds", type=int, default=config.FOLDS)
    p.add_argument("--stratified", action="store_true")
    p.add_argument("--no-prior-correction", action="store_true", help="score at the balanced class share")
    p.add_argument("--k", type=int, default=config.ADASYN_K)
    p.add_argument("--beta", type=float, default=config.ADASYN_BETA)
    p.add_argument("--threshold", type=float, default=config.VT_THRESHOLD)
    p.add_argument("--trees", type=int, default=config.RF_TREES)
    p.add_argument("--dropout", type=float, default=config.DNN_DROPOUT)
    p.add_argument("--epochs", type=int, default=config.EPOCHS)
    p.add_argument("--batch-size", type=int, default=config.BATCH_SIZE)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", parents=[common], help="whole pipeline from a config file")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="override paths.output_dir")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.func(args)
    except OpclassError as e:
        logger.error(f"[CLI] {type(e).__name__}: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"[CLI] Invalid option: {e.errors()[0]['loc']}: {e.errors()[0]['msg']}")
        return ConfigError.exit_code
    except OSError as e:
        logger.error(f"[CLI] {e}")
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
