"""Command-line entry point.

Subcommands: synth, train, eval, bench-cp, grad-check, export-embeddings.
Exit codes: 0 success, 1 usage/config error, 2 runtime or numeric failure.
Heavy imports happen inside main() so that --threads can pin the BLAS pool
before numpy loads.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                   "NUMEXPR_NUM_THREADS")


def _apply_threads(argv):
    for idx, arg in enumerate(argv):
        if arg == "--threads" and idx + 1 < len(argv):
            value = argv[idx + 1]
        elif arg.startswith("--threads="):
            value = arg.split("=", 1)[1]
        else:
            continue
        if value.isdigit() and int(value) > 0:
            for var in THREAD_ENV_VARS:
                os.environ[var] = value
        return


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynfuse",
        description="Train and evaluate a per-item dynamic multimodal fusion recommender.")
    parser.add_argument("--threads", type=int, default=0,
                        help="cap worker/BLAS threads; 1 guarantees bitwise reproducibility")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("overrides", nargs="*", metavar="KEY=VALUE")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", default="10,20")
    p.add_argument("--out", default=None, help="report directory (default: model's)")

    p = sub.add_parser("bench-cp", help="compare full vs factorized generators")
    p.add_argument("--config", required=True)
    p.add_argument("overrides", nargs="*", metavar="KEY=VALUE")

    p = sub.add_parser("grad-check", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("export-embeddings", help="dump final representations to CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    return parser


def _echo_comments(echo: dict) -> str:
    return "".join(f"# {k}={echo[k]}\n" for k in sorted(echo))


def cmd_synth(args) -> int:
    from . import data as data_mod

    overrides = {}
    for item in args.spec:
        if "=" not in item:
            raise data_mod.DataFormatError(f"--spec expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    overrides.setdefault("seed", str(args.seed))
    spec = data_mod.synth_spec_from_overrides(overrides)
    dataset = data_mod.generate_synthetic(spec)
    out = Path(args.out)
    data_mod.write_dataset(dataset, out)
    echo = {f"synth.{k}": str(getattr(spec, k)) for k in data_mod.SYNTH_KEYS}
    (out / "synth.meta").write_text(_echo_comments(echo), encoding="utf-8")
    print(f"wrote {dataset.n_users} users, {dataset.n_items} items, "
          f"{len(dataset.interactions)} interactions to {out}")
    return 0


def _load_run_config(args):
    from .config import build_run_config, parse_config_file, parse_overrides

    mapping = parse_config_file(args.config)
    mapping.update(parse_overrides(args.overrides))
    return build_run_config(mapping)


def _run_echo(run) -> dict:
    from .config import train_config_echo

    echo = train_config_echo(run.train)
    echo["data.dir"] = run.data_dir
    echo["eval.ks"] = ",".join(str(k) for k in run.ks)
    return echo


def cmd_train(args) -> int:
    from . import data as data_mod
    from . import training
    from .errors import ConfigError

    run = _load_run_config(args)
    if not run.data_dir:
        raise ConfigError("data.dir is required for training")
    dataset = data_mod.load_dataset(run.data_dir)
    split = data_mod.split_dataset(dataset, run.train.seed)
    result = training.train(run.train, dataset, split)

    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.model.save(out / "model.ckpt")
    echo = _run_echo(run)
    history = _echo_comments(echo) + "\n".join(
        training.history_lines(result.history, run.train.eval_k)) + "\n"
    (out / "history.tsv").write_text(history, encoding="utf-8")
    timing = _echo_comments(echo) + "\n".join(
        training.timing_lines(result.history)) + "\n"
    (out / "timing.tsv").write_text(timing, encoding="utf-8")
    print(f"best val p@{run.train.eval_k} = {result.best_val:.6f} "
          f"at epoch {result.best_epoch} ({len(result.history)} epochs run)")
    if result.aborted:
        print("training aborted on divergence; checkpoint holds the last good state",
              file=sys.stderr)
        return 2
    return 0


def _load_model_and_data(model_path, data_dir):
    from . import data as data_mod
    from .errors import ConfigError
    from .heads import InteractionGraph
    from .model import Recommender

    model = Recommender.load(model_path)
    dataset = data_mod.load_dataset(data_dir)
    if (dataset.n_users, dataset.n_items) != (model.n_users, model.n_items):
        raise ConfigError(
            f"dataset has {dataset.n_users} users / {dataset.n_items} items, "
            f"checkpoint expects {model.n_users} / {model.n_items}")
    if dataset.input_dim != model.input_dim:
        raise ConfigError(
            f"dataset feature dim {dataset.input_dim} differs from "
            f"checkpoint input dim {model.input_dim}")
    split = data_mod.split_dataset(dataset, model.config.seed)
    graph = None
    if model.config.head == "gcn":
        graph = InteractionGraph(dataset.n_users, dataset.n_items, split.train_pairs())
    return model, dataset, split, graph


def cmd_eval(args) -> int:
    from . import evaluation
    from .config import train_config_echo
    from .errors import ConfigError

    try:
        ks = tuple(int(k) for k in args.k.split(","))
    except ValueError:
        raise ConfigError(f"--k expects a comma-separated list, got {args.k!r}") from None
    model, dataset, split, graph = _load_model_and_data(args.model, args.data)
    report = evaluation.evaluate(model, dataset, split, ks=ks, part="test", graph=graph)
    out = Path(args.out) if args.out else Path(args.model).parent
    out.mkdir(parents=True, exist_ok=True)
    echo = train_config_echo(model.config)
    (out / "report.tsv").write_text(
        _echo_comments(echo) + report.to_tsv(), encoding="utf-8")
    (out / "report.kv").write_text(
        _echo_comments(echo) + report.to_keyvalues(), encoding="utf-8")
    print(report.to_tsv(), end="")
    return 0


def cmd_bench_cp(args) -> int:
    from dataclasses import replace

    from . import data as data_mod
    from . import training
    from .errors import ConfigError
    from .fusion import build_tower, generator_count_cp, generator_count_full

    run = _load_run_config(args)
    if not run.data_dir:
        raise ConfigError("data.dir is required for bench-cp")
    dataset = data_mod.load_dataset(run.data_dir)
    split = data_mod.split_dataset(dataset, run.train.seed)
    widths = build_tower(dataset.input_dim, run.train.out_dim, run.train.layers)
    closed_forms = {
        "dynamic-full": generator_count_full(widths, run.train.meta_dim),
        "dynamic-cp": generator_count_cp(widths, run.train.meta_dim, run.train.rank),
    }
    rows = []
    for mode in ("dynamic-full", "dynamic-cp"):
        config = replace(run.train, mode=mode)
        result = training.train(config, dataset, split)
        generator = result.model.fusion.generator_param_count()
        assert generator == closed_forms[mode], (generator, closed_forms[mode])
        rows.append({
            "mode": mode,
            "param_count": result.model.param_count(),
            "generator_params": generator,
            "sec_per_epoch": result.mean_epoch_seconds(),
            "epochs_to_best": result.best_epoch,
            "best_val": result.best_val,
        })
    header = ["mode", "param_count", "generator_params", "sec_per_epoch",
              "epochs_to_best", "best_val"]
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join([
            row["mode"], str(row["param_count"]), str(row["generator_params"]),
            f"{row['sec_per_epoch']:.4f}", str(row["epochs_to_best"]),
            f"{row['best_val']:.6f}"]))
    table = "\n".join(lines) + "\n"
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench_cp.tsv").write_text(_echo_comments(_run_echo(run)) + table,
                                      encoding="utf-8")
    print(table, end="")
    return 0


def cmd_grad_check(args) -> int:
    from . import gradcheck

    results = gradcheck.run_all(args.seed)
    failed = False
    for name, err in results.items():
        ok = err <= gradcheck.RTOL
        failed |= not ok
        print(f"{name:24s} max_rel_err={err:.3e} {'PASS' if ok else 'FAIL'}")
    return 2 if failed else 0


def cmd_export_embeddings(args) -> int:
    model, dataset, split, graph = _load_model_and_data(args.model, args.data)
    u_reps, i_reps = model.final_representations(dataset.feature_matrix(), graph=graph)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dim = u_reps.shape[1]
    with out.open("w", encoding="utf-8") as fh:
        fh.write("id,type," + ",".join(f"e{d}" for d in range(dim)) + "\n")
        for u in range(model.n_users):
            row = ",".join(repr(float(v)) for v in u_reps[u])
            fh.write(f"{dataset.user_labels[u]},user,{row}\n")
        for i in range(model.n_items):
            row = ",".join(repr(float(v)) for v in i_reps[i])
            fh.write(f"{dataset.item_labels[i]},item,{row}\n")
    print(f"wrote {model.n_users + model.n_items} rows to {out}")
    return 0


_HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench-cp": cmd_bench_cp,
    "grad-check": cmd_grad_check,
    "export-embeddings": cmd_export_embeddings,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_threads(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    from .errors import (CheckpointError, ConfigError, DataFormatError,
                         DivergenceError, DynfuseError, NonFiniteError)

    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, DataFormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, NonFiniteError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except DynfuseError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
