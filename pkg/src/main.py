"""
Command-line entry point for the graph anomaly detection pipeline.

    python src/main.py train --data ./data/SN12C --epochs 100 --out output/sn12c
    python src/main.py rq-dist --data ./data/SN12C --bins 10 --out d.json
    python src/main.py verify --trials 1000 --seed 7
"""

import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

# Add the project root directory to Python path
project_root = str(Path(__file__).parent.parent)
if project_root not in sys.path:
    sys.path.append(project_root)

from src.config.model_config import (  # noqa: E402
    ANALYSIS_PARAMS, CONFIGURABLE, GRADCHECK_PARAMS, PERTURB_PARAMS, SYNTHETIC_PARAMS, TRAIN_PARAMS, VARIANTS,
    WAVELET_PARAMS, coerce_value, merge_config,
)
from src.dataset import (  # noqa: E402
    ANOMALOUS, NORMAL, SplitSpec, dataset_statistics, er_graph, generate_er_corpus, parse_tudataset,
    perturb_dataset, stratified_split, write_tudataset,
)
from src.errors import ConfigError, ContractError, DataError, NumericalError, RQGNNError, ShapeError  # noqa: E402
from src.model import init_params, load_checkpoint, save_checkpoint  # noqa: E402
from src.spectral_analysis import distance_ratios, rq_histogram  # noqa: E402
from src.training import TrainConfig, evaluate, gradient_errors, train, write_history  # noqa: E402
from src.utils import ensure_dir, make_rng, to_jsonable, write_json  # noqa: E402
from src.verification import run_verification_suite  # noqa: E402

# Set up logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s'
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

SWEEP_PARAMS = ("d", "q", "K", "beta", "gamma", "lr", "dropout", "variant")


# Argument parsing

def _default(value):
    return f"(default: {value})"


def _add_common(parser):
    parser.add_argument("--data", help="Directory holding <name>_A.txt and the other TUDataset files "
                                       "(default: none; required unless --synthetic)")
    parser.add_argument("--name", help="Dataset name (default: directory name of --data)")
    parser.add_argument("--synthetic", action="store_true",
                        help="Use a perturbed Erdős–Rényi corpus instead of --data (default: off)")
    parser.add_argument("--out", default="output", help=f"Output directory or .json file {_default('output')}")
    parser.add_argument("--seed", type=int, help=f"Root seed {_default(TRAIN_PARAMS['seed'])}")
    parser.add_argument("--config", help="key = value config file (default: none)")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level (default: off)")
    parser.add_argument("--num-graphs", dest="num_graphs", type=int,
                        help=f"Synthetic corpus size {_default(SYNTHETIC_PARAMS['num_graphs'])}")
    parser.add_argument("--fraction", type=float,
                        help=f"Share of normal graphs perturbed {_default(PERTURB_PARAMS['fraction'])}")


def _add_model(parser):
    for name, kind, text in (
        ("lr", float, "Adam step size"),
        ("batch-size", int, "Graphs per step"),
        ("epochs", int, "Training epochs"),
        ("d", int, "Hidden dimension"),
        ("q", int, "Number of wavelets"),
        ("K", int, "Base Chebyshev order"),
        ("dropout", float, "Dropout rate before the head"),
        ("beta", float, "Class-balance factor"),
        ("gamma", float, "Focal exponent"),
    ):
        key = name.replace("-", "_")
        parser.add_argument(f"--{name}", dest=key, type=kind, help=f"{text} {_default(TRAIN_PARAMS[key])}")
    parser.add_argument("--variant", choices=VARIANTS, help=f"Model variant {_default(TRAIN_PARAMS['variant'])}")
    parser.add_argument("--kernel-id", dest="kernel_id",
                        help=f"Wavelet kernel {_default(WAVELET_PARAMS['kernel_id'])}")


def build_parser():
    parser = argparse.ArgumentParser(prog="rqgnn", description="Rayleigh Quotient graph anomaly detection")
    commands = parser.add_subparsers(dest="command", required=True)

    command = commands.add_parser("train", help="Train and evaluate on a stratified split")
    _add_common(command)
    _add_model(command)

    command = commands.add_parser("eval", help="Evaluate a saved checkpoint")
    _add_common(command)
    command.add_argument("--checkpoint", required=True,
                         help="Checkpoint JSON written by train (default: none; required)")
    command.add_argument("--split", choices=("all", "train", "val", "test"), default="all",
                         help=f"Part of the dataset to evaluate {_default('all')}")

    command = commands.add_parser("rq-dist", help="Class histograms of Rayleigh Quotient values")
    _add_common(command)
    command.add_argument("--bins", type=int, help=f"Equal-width bins {_default(ANALYSIS_PARAMS['bins'])}")
    command.add_argument("--n-jobs", dest="n_jobs", type=int,
                         help=f"Parallel workers {_default(ANALYSIS_PARAMS['n_jobs'])}")

    command = commands.add_parser("distance-ratio", help="Inter/intra class histogram distances")
    _add_common(command)
    command.add_argument("--subsamples", type=int,
                         help=f"Parts per class {_default(ANALYSIS_PARAMS['subsamples'])}")
    command.add_argument("--bins", type=int, help=f"Equal-width bins {_default(ANALYSIS_PARAMS['bins'])}")
    command.add_argument("--n-jobs", dest="n_jobs", type=int,
                         help=f"Parallel workers {_default(ANALYSIS_PARAMS['n_jobs'])}")

    command = commands.add_parser("perturb", help="Build perturbation anomaly datasets")
    _add_common(command)
    command.add_argument("--prob", help=f"Flip probability or comma list {_default(PERTURB_PARAMS['prob'])}")
    command.add_argument("--subsamples", type=int,
                         help=f"Parts per class for the ratio report {_default(ANALYSIS_PARAMS['subsamples'])}")
    command.add_argument("--bins", type=int, help=f"Equal-width bins {_default(ANALYSIS_PARAMS['bins'])}")

    command = commands.add_parser("verify", help="Monte-Carlo checks of the spectral identities")
    _add_common(command)
    command.add_argument("--trials", type=int, help=f"Perturbation trials {_default(ANALYSIS_PARAMS['trials'])}")

    command = commands.add_parser("sweep", help="Train once per value of one hyperparameter")
    _add_common(command)
    _add_model(command)
    command.add_argument("--param", required=True, choices=SWEEP_PARAMS,
                         help="Hyperparameter to vary (default: none; required)")
    command.add_argument("--values", required=True, help="Comma-separated values (default: none; required)")

    command = commands.add_parser("gradcheck", help="Finite-difference check of the model gradient")
    _add_common(command)
    _add_model(command)
    command.add_argument("--step", dest="h", type=float, default=GRADCHECK_PARAMS["h"],
                         help=f"Central-difference step {_default(GRADCHECK_PARAMS['h'])}")
    command.add_argument("--max-entries", dest="max_entries", type=int, default=GRADCHECK_PARAMS["max_entries"],
                         help=f"Entries checked per tensor {_default(GRADCHECK_PARAMS['max_entries'])}")

    command = commands.add_parser("stats", help="Dataset statistics")
    _add_common(command)
    return parser


# Helpers

def _artifact_path(out, default_name):
    """--out names the file itself when it ends in .json/.jsonl, else the directory."""
    out = Path(out)
    if out.suffix in (".json", ".jsonl"):
        ensure_dir(out.parent)
        return out
    return ensure_dir(out) / default_name


def _output_dir(out):
    out = Path(out)
    return ensure_dir(out.parent if out.suffix in (".json", ".jsonl") else out)


def _comma_list(raw, key):
    values = [v for v in raw.split(",") if v.strip()]
    if not values:
        raise ConfigError(f"Empty value list for {key}")
    return [coerce_value(key, v) for v in values]


def load_dataset(args, config):
    """Dataset from --data, or a perturbed synthetic corpus with --synthetic."""
    if args.synthetic:
        corpus = generate_er_corpus(config["num_graphs"], config["num_nodes"], config["edge_prob"],
                                    config["num_node_labels"], config["seed"])
        return perturb_dataset(corpus, config["fraction"], config["prob"], config["seed"])
    if not args.data:
        raise ConfigError("Either --data or --synthetic is required")
    name = args.name or Path(args.data).name
    return parse_tudataset(args.data, name)


def _split(dataset, config):
    spec = SplitSpec((config["train_ratio"], config["val_ratio"], config["test_ratio"]), config["seed"])
    return stratified_split(dataset, spec)


def _train_and_score(splits, cfg):
    train_set, val_set, test_set = splits
    bank = cfg.build_bank()
    params, history = train(train_set, val_set, cfg, bank)
    loss_cfg = cfg.loss_config(train_set.class_counts)
    return params, bank, history, evaluate(params, bank, val_set, loss_cfg), evaluate(params, bank, test_set, loss_cfg)


# Commands

def run_train(args, config):
    dataset = load_dataset(args, config)
    cfg = TrainConfig.from_config(config)
    params, bank, history, val_metrics, test_metrics = _train_and_score(_split(dataset, config), cfg)
    out = _output_dir(args.out)
    write_history(history, out / "history.jsonl")
    save_checkpoint(out / "checkpoint.json", params, bank)
    best_epoch = max(history, key=lambda h: h["val_macro_f1"])["epoch"] if history else 0
    write_json(to_jsonable({
        "dataset": dataset.name,
        "config": {name: config[name] for name in TrainConfig.__dataclass_fields__},
        "best_epoch": best_epoch,
        "val": val_metrics.to_json(),
        "test": test_metrics.to_json(),
    }), out / "metrics.json")
    logging.info(f"Test AUC {test_metrics.auc}, Macro-F1 {test_metrics.macro_f1:.4f}")
    return EXIT_OK


def run_eval(args, config):
    params, bank = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args, config)
    if args.split != "all":
        dataset = dict(zip(("train", "val", "test"), _split(dataset, config)))[args.split]
    metrics = evaluate(params, bank, dataset)
    write_json(to_jsonable({"dataset": dataset.name, "split": args.split, **metrics.to_json()}),
               _artifact_path(args.out, "eval.json"))
    return EXIT_OK


def run_rq_dist(args, config):
    dataset = load_dataset(args, config)
    histogram = rq_histogram(dataset.records, config["bins"], config["n_jobs"])
    write_json(to_jsonable(histogram.to_json()), _artifact_path(args.out, "rq_histogram.json"))
    return EXIT_OK


def _class_members(dataset):
    return ([r for r in dataset if r.label == ANOMALOUS], [r for r in dataset if r.label == NORMAL])


def run_distance_ratio(args, config):
    dataset = load_dataset(args, config)
    anomalous, normal = _class_members(dataset)
    ratios = distance_ratios(anomalous, normal, config["subsamples"], config["seed"], config["bins"],
                             config["n_jobs"])
    write_json(to_jsonable(ratios.to_json()), _artifact_path(args.out, "distance_ratios.json"))
    return EXIT_OK


def run_perturb(args, config):
    if args.synthetic:
        source = generate_er_corpus(config["num_graphs"], config["num_nodes"], config["edge_prob"],
                                    config["num_node_labels"], config["seed"])
    else:
        if not args.data:
            raise ConfigError("Either --data or --synthetic is required")
        source = parse_tudataset(args.data, args.name or Path(args.data).name)
    probabilities = _comma_list(args.prob, "prob") if args.prob else [config["prob"]]
    out = _output_dir(args.out)

    reports = []
    for prob in probabilities:
        dataset = perturb_dataset(source, config["fraction"], prob, config["seed"])
        directory = write_tudataset(dataset, out / dataset.name, dataset.name)
        anomalous, normal = _class_members(dataset)
        report = {
            "prob": prob,
            "directory": str(directory),
            "statistics": dataset_statistics(dataset),
            "rq_histogram": rq_histogram(dataset.records, config["bins"], config["n_jobs"]).to_json(),
        }
        if min(len(anomalous), len(normal)) >= config["subsamples"]:
            report["distance_ratios"] = distance_ratios(
                anomalous, normal, config["subsamples"], config["seed"], config["bins"], config["n_jobs"]
            ).to_json()
        else:
            logging.warning(f"Too few graphs for {config['subsamples']} subsamples at prob={prob}; "
                            "skipping distance ratios")
        reports.append(report)
    write_json(to_jsonable({"fraction": config["fraction"], "source": source.name, "datasets": reports}),
               out / "perturb_report.json")
    return EXIT_OK


def run_verify(args, config):
    report = run_verification_suite(config["trials"], config["seed"])
    write_json(to_jsonable(report), _artifact_path(args.out, "verify.json"))
    if not report["passed"]:
        logging.error("Verification found violations")
        return EXIT_NUMERICAL
    return EXIT_OK


def run_sweep(args, config):
    dataset = load_dataset(args, config)
    splits = _split(dataset, config)
    rows = []
    for value in _comma_list(args.values, args.param):
        cfg = TrainConfig.from_config({**config, args.param: value})
        logging.info(f"Sweep point {args.param}={value}")
        _, _, history, val_metrics, test_metrics = _train_and_score(splits, cfg)
        rows.append({
            "param": args.param,
            "value": value,
            "epochs_run": len(history),
            "val_auc": val_metrics.auc,
            "val_macro_f1": val_metrics.macro_f1,
            "test_auc": test_metrics.auc,
            "test_macro_f1": test_metrics.macro_f1,
        })
    path = _artifact_path(args.out, "sweep.jsonl")
    pd.DataFrame(rows).to_json(path, orient="records", lines=True, double_precision=15)
    logging.info(f"Wrote {len(rows)} sweep points to {path}")
    return EXIT_OK


def gradcheck_fixture(feature_dim=3, num_nodes=6, graphs=4, seed=0):
    """Small graphs of both classes for the finite-difference check."""
    rng = make_rng(seed, "gradcheck-fixture")
    return [er_graph(num_nodes, 0.5, feature_dim, rng, label=k % 2) for k in range(graphs)]


def run_gradcheck(args, config):
    cfg = TrainConfig.from_config(config)
    fixture = gradcheck_fixture(seed=cfg.seed)
    bank = cfg.build_bank()
    params = init_params(fixture[0].feature_dim, cfg.d, cfg.q, cfg.variant, cfg.seed)
    errors = gradient_errors(params, bank, fixture, args.h, dropout=cfg.dropout, beta=cfg.beta,
                             gamma=cfg.gamma, seed=cfg.seed, max_entries=args.max_entries)
    worst = max(errors.values())
    write_json({"h": args.h, "max_relative_error": worst, "errors": errors},
               _artifact_path(args.out, "gradcheck.json"))
    logging.info(f"Largest relative gradient error {worst:.3e}")
    return EXIT_OK if worst <= GRADCHECK_PARAMS["tolerance"] else EXIT_NUMERICAL


def run_stats(args, config):
    dataset = load_dataset(args, config)
    write_json(to_jsonable(dataset_statistics(dataset)), _artifact_path(args.out, "stats.json"))
    return EXIT_OK


COMMANDS = {
    "train": run_train,
    "eval": run_eval,
    "rq-dist": run_rq_dist,
    "distance-ratio": run_distance_ratio,
    "perturb": run_perturb,
    "verify": run_verify,
    "sweep": run_sweep,
    "gradcheck": run_gradcheck,
    "stats": run_stats,
}


def dispatch(argv):
    """
    Parse `argv`, run the subcommand and map failures to exit codes.

    Returns:
        int: 0 success, 1 usage or configuration error, 2 data error, 3 numerical failure
    """
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    overrides = {key: value for key, value in vars(args).items() if key in CONFIGURABLE and key != "prob"}
    try:
        config = merge_config(args.config, overrides)
        return COMMANDS[args.command](args, config)
    except ConfigError as e:
        logging.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except (DataError, ShapeError) as e:
        logging.error(f"Data error: {e}")
        return EXIT_DATA
    except NumericalError as e:
        logging.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except ContractError as e:
        logging.error(f"Invalid use: {e}")
        return EXIT_USAGE
    except RQGNNError as e:
        logging.error(f"Failed: {e}")
        return EXIT_USAGE


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
