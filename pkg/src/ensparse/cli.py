"""Batch experiment driver.

Subcommands ``train | recover | superres | cluster | oracle-demo`` wrap the
library pipelines into reproducible runs: every command resolves its config
(file < environment < flags), persists the resolved values next to its
results, and emits versioned CSV tables plus a JSON summary. Outputs carry
no timestamps, so a repeated run with the same seed is byte-identical.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure (the message carries the final KKT residual when available).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .clustering import (build_dictionary_code_graph, build_ensemble_graph,
                         build_l1_graph, center_normalize, load_dataset_csv,
                         spectral_cluster)
from .config import (CLUSTER_METHODS, load_config_file, persist_resolved,
                     resolve)
from .dictionaries import (TrainingSet, draw_random_example_dictionary,
                           learn_alt_opt)
from .ensemble import (CONSTRAINT_CASES, ApproximationStack, betas_from_alphas,
                       residual, solve_weights, train_boosted, train_ex_mld,
                       train_randexav)
from .errors import ConfigError, ContractViolation, ConvergenceError, DataError
from .images import bicubic_resize, read_image, write_image
from .operators import BlurDownsample, RandomProjection
from .patches import extract_patches
from .restoration import compressive_recover, psnr
from .serialization import load_model, save_model
from .sisr import PairedDictionary, PairedEnsemble, superresolve, train_paired_ensemble
from .sparse_coding import code_batch
from .synthetic import patch_corpus

CSV_VERSION = 1

METHOD_FLAG_CHOICES = ("altopt", "boostex", "boostkm", "randexav", "exmld",
                       "l1graph")


# ---------------------------------------------------------------------------
# Versioned CSV / JSON emission


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, name: str, header, rows) -> None:
    """Write a versioned CSV table and validate it by re-parsing."""
    header = list(header)
    with open(path, "w", newline="") as fh:
        fh.write(f"# ensparse-csv {name} v{CSV_VERSION}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])
    parsed_name, version, parsed_header, parsed_rows = read_csv(path)
    if (parsed_name, version, parsed_header) != (name, CSV_VERSION, header):
        raise DataError(f"round-trip validation failed for {path}")
    if len(parsed_rows) != len(list(rows)):
        raise DataError(f"round-trip row count mismatch for {path}")


def read_csv(path):
    """Parse a versioned CSV; returns (name, version, header, rows)."""
    try:
        with open(path, newline="") as fh:
            parts = fh.readline().strip().split()
            if (len(parts) != 4 or parts[0] != "#"
                    or parts[1] != "ensparse-csv" or not parts[3].startswith("v")):
                raise DataError(f"{path}: missing ensparse-csv schema line")
            name = parts[2]
            try:
                version = int(parts[3][1:])
            except ValueError:
                raise DataError(f"{path}: bad schema version {parts[3]!r}") from None
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{path}: missing CSV header")
            rows = []
            for row in reader:
                if len(row) != len(header):
                    raise DataError(f"{path}: row width {len(row)} != header "
                                    f"width {len(header)}")
                rows.append(row)
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from err
    return name, version, header, rows


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


# ---------------------------------------------------------------------------
# train


def _training_set_from_config(cfg) -> TrainingSet:
    has_images = cfg["train_images"] is not None
    has_csv = cfg["train_csv"] is not None
    if has_images == has_csv:
        raise ConfigError("train needs exactly one of train_images / train_csv")
    if has_images:
        pools = []
        for path in cfg["train_images"]:
            grid = extract_patches(read_image(path), cfg["patch_size"],
                                   cfg["stride"], remove_mean=True,
                                   variance_floor=cfg["variance_floor"])
            if grid.patches.shape[1]:
                pools.append(grid.patches)
        if not pools:
            raise DataError("no training patches survive the variance floor")
        return TrainingSet(np.concatenate(pools, axis=1))
    try:
        raw = np.loadtxt(cfg["train_csv"], delimiter=",", ndmin=2)
    except (OSError, ValueError) as err:
        raise DataError(f"cannot read training CSV {cfg['train_csv']}: {err}") from err
    return TrainingSet(raw.T)


def cmd_train(cfg) -> int:
    method = cfg["method"]
    out = cfg["out"]
    if cfg["operator_n"] is not None and method not in ("boostex", "boostkm"):
        raise ConfigError("operator_n applies only to boostex/boostkm training")
    train = _training_set_from_config(cfg)

    trace_path = os.path.join(out, "training_trace.csv")
    summary: dict = {"method": method, "n_samples": train.size,
                     "sample_dim": train.dim}
    if method == "altopt":
        model, trace = learn_alt_opt(train, cfg["k"], cfg["lambda_train"],
                                     iterations=cfg["alt_iterations"],
                                     seed=cfg["seed"], return_trace=True)
        write_csv(trace_path, "train-trace-altopt", ("round", "cost"),
                  [(i + 1, float(c)) for i, c in enumerate(trace)])
        summary["final_cost"] = float(trace[-1])
    elif method == "randexav":
        model = train_randexav(train, cfg["k"], cfg["l"], seed=cfg["seed"],
                               lambda_train=cfg["lambda_train"])
        write_csv(trace_path, "train-trace-weights", ("round", "beta"),
                  [(i + 1, float(b)) for i, b in enumerate(model.betas.betas)])
    elif method in ("boostex", "boostkm"):
        operator = None
        if cfg["operator_n"] is not None:
            operator = RandomProjection(train.dim, cfg["operator_n"],
                                        cfg["operator_seed"])
        model, traces = train_boosted(train, cfg["k"], cfg["l"],
                                      cfg["lambda_train"], method,
                                      operator=operator, seed=cfg["seed"],
                                      q=cfg["q"], s=cfg["s"])
        betas = model.betas.betas
        write_csv(trace_path, "train-trace-boost",
                  ("round", "alpha", "beta", "cumulative_error"),
                  [(t.round, float(t.alpha), float(betas[i]),
                    float(t.cumulative_error)) for i, t in enumerate(traces)])
        summary["final_cumulative_error"] = float(traces[-1].cumulative_error)
        summary["rounds_trained"] = len(traces)
    elif method == "exmld":
        model, energies = train_ex_mld(train, cfg["levels"],
                                       cfg["atoms_per_level"], cfg["l"],
                                       seed=cfg["seed"])
        write_csv(trace_path, "train-trace-levels", ("level", "energy"),
                  [(i + 1, float(e)) for i, e in enumerate(energies)])
        summary["final_level_energy"] = float(energies[-1])
    else:  # pragma: no cover - schema choices prevent this
        raise ConfigError(f"unknown train method {method!r}")

    model_path = cfg["model"] or os.path.join(out, f"{method}.model")
    save_model(model_path, model)
    summary["model_path"] = model_path
    summary["trace_path"] = trace_path
    write_json(os.path.join(out, "train_summary.json"), summary)
    print(f"wrote {model_path}")
    return 0


# ---------------------------------------------------------------------------
# recover


_DICT_METHOD_LABELS = {"learned": "altopt", "example_subset": "examples",
                       "kmeans_centers": "kmeans"}


def _model_method_label(model) -> str:
    method = getattr(model, "method", None)
    if method is not None:
        return method
    atom_source = getattr(model, "atom_source", None)
    if atom_source in _DICT_METHOD_LABELS:
        return _DICT_METHOD_LABELS[atom_source]
    if model.__class__.__name__ == "ExMLDModel":
        return "exmld"
    return "model"


def cmd_recover(cfg) -> int:
    model = load_model(cfg["model"])
    if isinstance(model, (PairedEnsemble, PairedDictionary)):
        raise DataError("recover needs a patch-domain model, got a paired "
                        "superresolution model")
    method = _model_method_label(model)
    out = cfg["out"]
    rows = []
    for path in cfg["images"]:
        image = read_image(path)
        name = os.path.basename(path)
        for n in cfg["n_list"]:
            seed_psnrs = []
            for r in range(cfg["n_seeds"]):
                op_seed = cfg["operator_seed"] + r
                recovered, db = compressive_recover(
                    image, model, n, cfg["lambda_test"], op_seed,
                    patch_size=cfg["patch_size"])
                rows.append((name, method, n, str(op_seed), float(db)))
                seed_psnrs.append(float(db))
                if cfg["save_images"]:
                    write_image(os.path.join(
                        out, f"{_stem(path)}_n{n}_s{op_seed}.png"), recovered)
            rows.append((name, method, n, "mean",
                         float(np.mean(seed_psnrs))))
    csv_path = os.path.join(out, "recovery.csv")
    write_csv(csv_path, "recovery",
              ("image", "method", "n", "seed", "psnr_db"), rows)
    mean_rows = [row for row in rows if row[3] == "mean"]
    summary = {
        "method": method,
        "model": cfg["model"],
        "rows": len(rows),
        "mean_psnr_db": {f"{img}:n={n}": db
                         for img, _, n, _, db in mean_rows},
    }
    write_json(os.path.join(out, "recovery_summary.json"), summary)
    print(f"wrote {csv_path} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# superres


def cmd_superres(cfg) -> int:
    out = cfg["out"]
    scale = cfg["scale"]
    if cfg["model"] is not None:
        model = load_model(cfg["model"])
        if not isinstance(model, (PairedEnsemble, PairedDictionary)):
            raise DataError("superres needs a paired model "
                            f"(got {type(model).__name__})")
        method = _model_method_label(model) if isinstance(model, PairedEnsemble) \
            else "paired"
        if isinstance(model, PairedEnsemble) and model.scale != scale:
            raise DataError(f"model trained for scale {model.scale}, "
                            f"config requests {scale}")
    else:
        if cfg["train_images"] is None:
            raise ConfigError("superres needs either model or train_images")
        train_images = [read_image(p) for p in cfg["train_images"]]
        method = cfg["method"]
        model = train_paired_ensemble(train_images, method, cfg["k"], cfg["l"],
                                      seed=cfg["seed"], scale=scale,
                                      patch_size=cfg["patch_size"],
                                      stride=cfg["stride"],
                                      max_pairs=cfg["max_pairs"])
        model_path = os.path.join(out, f"superres_{method}.model")
        save_model(model_path, model)
        print(f"wrote {model_path}")

    rows = []
    for path in cfg["images"]:
        ref = read_image(path)
        h = (ref.shape[0] // scale) * scale
        w = (ref.shape[1] // scale) * scale
        if h < scale or w < scale:
            raise DataError(f"{path}: image too small for scale {scale}")
        ref = ref[:h, :w]
        operator = BlurDownsample(ref.shape, scale)
        low = operator.apply(ref)
        name = os.path.basename(path)
        bicubic = np.clip(bicubic_resize(low, scale), 0.0, 1.0)
        rows.append((name, "bicubic", scale, cfg["seed"],
                     float(psnr(ref, bicubic))))
        estimate = superresolve(low, model, scale, cfg["lambda_test"],
                                cfg["backproject_c"],
                                cfg["backproject_iterations"])
        rows.append((name, method, scale, cfg["seed"],
                     float(psnr(ref, estimate))))
        if cfg["save_images"]:
            write_image(os.path.join(out, f"{_stem(path)}_bicubic.png"), bicubic)
            write_image(os.path.join(out, f"{_stem(path)}_{method}.png"),
                        estimate)
    csv_path = os.path.join(out, "superres.csv")
    write_csv(csv_path, "superres",
              ("image", "method", "scale", "seed", "psnr_db"), rows)
    by_method: dict[str, list[float]] = {}
    for _, row_method, _, _, db in rows:
        by_method.setdefault(row_method, []).append(db)
    summary = {"scale": scale,
               "mean_psnr_db": {m: float(np.mean(v))
                                for m, v in by_method.items()}}
    write_json(os.path.join(out, "superres_summary.json"), summary)
    print(f"wrote {csv_path} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# cluster


def _cluster_graph(method: str, data: TrainingSet, cfg, seed):
    if method == "l1graph":
        return build_l1_graph(data, cfg["lambda_test"])
    if method == "altopt":
        dictionary = learn_alt_opt(data, cfg["k_atoms"], cfg["lambda_test"],
                                   iterations=cfg["alt_iterations"], seed=seed)
        return build_dictionary_code_graph(data, dictionary, cfg["lambda_test"])
    if method == "randexav":
        model = train_randexav(data, cfg["k_atoms"], cfg["l"], seed=seed,
                               lambda_train=cfg["lambda_test"])
        return build_ensemble_graph(data, model)
    if method in ("boostex", "boostkm"):
        model, _ = train_boosted(data, cfg["k_atoms"], cfg["l"],
                                 cfg["lambda_test"], method, seed=seed)
        return build_ensemble_graph(data, model)
    raise ConfigError(f"unknown cluster method {method!r}")


def cmd_cluster(cfg) -> int:
    if cfg["manifest"] is None:
        raise DataError("missing dataset manifest (set manifest in the config)")
    for method in cfg["methods"]:
        if method not in CLUSTER_METHODS:
            raise ConfigError(f"methods: {method!r} not one of "
                              f"{', '.join(CLUSTER_METHODS)}")
    samples, labels, manifest = load_dataset_csv(cfg["dataset_csv"],
                                                 cfg["manifest"])
    dataset = manifest["name"]
    k = manifest["k"]
    data = TrainingSet(center_normalize(samples) if cfg["preprocess"]
                       else samples)

    rows = []
    summary_rows = {}
    for method in cfg["methods"]:
        accs, nmis = [], []
        cached_graph = None
        for r in range(cfg["n_seeds"]):
            seed = cfg["seed"] + r
            if method == "l1graph":
                # The l1 graph is seed-free; only spectral K-Means reseeds.
                if cached_graph is None:
                    cached_graph = _cluster_graph(method, data, cfg, seed)
                graph = cached_graph
            else:
                graph = _cluster_graph(method, data, cfg, seed)
            result = spectral_cluster(graph, k, seed=seed, truth=labels)
            rows.append((dataset, method, str(seed),
                         float(result.accuracy), float(result.nmi)))
            accs.append(float(result.accuracy))
            nmis.append(float(result.nmi))
        rows.append((dataset, method, "max", max(accs), max(nmis)))
        rows.append((dataset, method, "avg", float(np.mean(accs)),
                     float(np.mean(nmis))))
        summary_rows[method] = {"max_accuracy": max(accs),
                                "avg_accuracy": float(np.mean(accs)),
                                "max_nmi": max(nmis),
                                "avg_nmi": float(np.mean(nmis))}
    csv_path = os.path.join(cfg["out"], "clustering.csv")
    write_csv(csv_path, "clustering",
              ("dataset", "method", "seed", "accuracy", "nmi"), rows)
    write_json(os.path.join(cfg["out"], "clustering_summary.json"),
               {"dataset": dataset, "k": k, "methods": summary_rows})
    print(f"wrote {csv_path} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# oracle-demo


def _mean_case_residuals(test_x: np.ndarray, approximations) -> dict:
    t = test_x.shape[1]
    sums = dict.fromkeys(CONSTRAINT_CASES, 0.0)
    for i in range(t):
        stack = ApproximationStack(
            np.stack([a[:, i] for a in approximations], axis=1), test_x[:, i])
        for case in CONSTRAINT_CASES:
            r = residual(stack, solve_weights(stack, case))
            sums[case] += float(r @ r)
    return {case: value / t for case, value in sums.items()}


def _member_estimates(model, test_x: np.ndarray, lam: float):
    return [d.atoms @ code_batch(test_x, d, lam) for d in model.dictionaries]


def _mean_energy(test_x: np.ndarray, estimate: np.ndarray) -> float:
    diff = test_x - estimate
    return float(np.mean(np.sum(diff * diff, axis=0)))


def cmd_oracle_demo(cfg) -> int:
    out = cfg["out"]
    lam = cfg["lambda_test"]
    train = patch_corpus(cfg["n_patches"], cfg["patch_size"], seed=cfg["seed"],
                         kind=cfg["image_kind"])
    test = patch_corpus(cfg["n_test"], cfg["patch_size"], seed=cfg["seed"] + 1,
                        kind=cfg["image_kind"])
    test_x = test.samples

    case_rows = []
    for k in cfg["k_list"]:
        if k > train.size:
            raise DataError(f"corpus too small for K={k} "
                            f"(only {train.size} patches)")
        seeds = np.random.SeedSequence([cfg["seed"], k]).spawn(cfg["l"])
        dictionaries = [draw_random_example_dictionary(train, k, s)
                        for s in seeds]
        approximations = [d.atoms @ code_batch(test_x, d, lam)
                          for d in dictionaries]
        means = _mean_case_residuals(test_x, approximations)
        for case in CONSTRAINT_CASES:
            case_rows.append((k, case, means[case]))
    cases_path = os.path.join(out, "oracle_cases.csv")
    write_csv(cases_path, "oracle-cases", ("k", "case", "mean_residual"),
              case_rows)

    trainer_rows = []
    k_tr = cfg["k_trainers"]
    if k_tr > train.size:
        raise DataError(f"corpus too small for K={k_tr} "
                        f"(only {train.size} patches)")
    for method in ("randexav", "boostex", "boostkm"):
        if method == "randexav":
            model = train_randexav(train, k_tr, cfg["l"], seed=cfg["seed"],
                                   lambda_train=lam)
        else:
            model, _ = train_boosted(train, k_tr, cfg["l"], lam, method,
                                     seed=cfg["seed"])
        estimates = _member_estimates(model, test_x, lam)
        for l in range(1, len(estimates) + 1):
            if model.alphas is None:
                betas = np.full(l, 1.0 / l)
            else:
                betas = betas_from_alphas(np.asarray(model.alphas[:l]))
            blended = sum(b * e for b, e in zip(betas, estimates[:l]))
            trainer_rows.append((method, l, _mean_energy(test_x, blended)))
        best_single = min(_mean_energy(test_x, e) for e in estimates)
        # l = 0 marks the best-constituent baseline row.
        trainer_rows.append((f"min_individual_{method}", 0, best_single))
    trainers_path = os.path.join(out, "oracle_trainers.csv")
    write_csv(trainers_path, "oracle-trainers", ("method", "l", "mean_residual"),
              trainer_rows)

    write_json(os.path.join(out, "oracle_summary.json"), {
        "n_patches": train.size,
        "n_test": test_x.shape[1],
        "k_list": list(cfg["k_list"]),
        "k_trainers": k_tr,
        "cases_csv": cases_path,
        "trainers_csv": trainers_path,
    })
    print(f"wrote {cases_path} ({len(case_rows)} rows)")
    print(f"wrote {trainers_path} ({len(trainer_rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# Argument plumbing


COMMANDS = {
    "train": cmd_train,
    "recover": cmd_recover,
    "superres": cmd_superres,
    "cluster": cmd_cluster,
    "oracle-demo": cmd_oracle_demo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ensparse",
        description="Ensemble sparse model experiments: training, compressed "
                    "recovery, superresolution, and spectral clustering.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    help_text = {
        "train": "train a model and write it with its training trace",
        "recover": "compressed recovery of images from random projections",
        "superres": "single-image superresolution against a bicubic baseline",
        "cluster": "sparse-graph spectral clustering of a CSV dataset",
        "oracle-demo": "oracle ensemble residual tables (constraint cases "
                       "and trainer comparison)",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=help_text[name])
        sp.add_argument("--config", metavar="PATH",
                        help="JSON config file (lowest-precedence layer)")
        sp.add_argument("--seed", type=int, metavar="U64")
        sp.add_argument("--workers", type=int, metavar="N",
                        help="worker budget (accepted; execution is "
                             "single-process)")
        sp.add_argument("--out", metavar="DIR")
        if name in ("train", "recover", "superres"):
            sp.add_argument("--model", metavar="PATH")
        if name in ("train", "superres", "cluster"):
            sp.add_argument("--method", choices=METHOD_FLAG_CHOICES)
    return parser


def _flag_values(args: argparse.Namespace) -> dict:
    flags = {}
    for key in ("seed", "workers", "out", "model", "method"):
        value = getattr(args, key, None)
        if value is not None:
            flags[key] = value
    if args.command == "cluster" and "method" in flags:
        flags["methods"] = [flags.pop("method")]
    return flags


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_values = load_config_file(args.config) if args.config else {}
        cfg = resolve(args.command, file_values, _flag_values(args))
        os.makedirs(cfg["out"], exist_ok=True)
        slug = args.command.replace("-", "_")
        persist_resolved(cfg, args.command,
                         os.path.join(cfg["out"], f"{slug}_config.json"))
        return COMMANDS[args.command](cfg)
    except ConfigError as err:
        print(f"ensparse: config error: {err}", file=sys.stderr)
        return 2
    except (DataError, ContractViolation) as err:
        print(f"ensparse: data error: {err}", file=sys.stderr)
        return 3
    except ConvergenceError as err:
        print(f"ensparse: numerical failure: {err} "
              f"(final KKT residual {err.kkt_residual:.6e})", file=sys.stderr)
        return 4
    except np.linalg.LinAlgError as err:
        print(f"ensparse: numerical failure: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
