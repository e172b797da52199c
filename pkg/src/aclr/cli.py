"""Command-line entry point: ``aclr {train,cv,early,export-features,synth,sweep}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .data import DatasetError, EmbeddingError, HashingEmbedder, load_dataset, load_embeddings
from .evaluation import (
    DEFAULT_POST_CHECKPOINTS,
    cross_validate,
    early_detection_curve,
    export_features,
    sweep,
)
from .graph import Corpus
from .model import load_checkpoint, save_checkpoint
from .synth import SynthConfig, SynthConfigError, generate_benchmark, write_benchmark
from .trainer import ACLR, CONTRASTIVE_REGIMES, NEEDS_SOURCE, REGIMES, TrainConfig, TrainingError, train

OUTPUT_ENV = "ACLR_OUTPUT_DIR"
log = logging.getLogger("aclr")


class UsageError(Exception):
    pass


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _checkpoint_list(text: str) -> list[float | None]:
    out: list[float | None] = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if tok == "all":
            out.append(None)
            continue
        try:
            out.append(float(tok))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad checkpoint {tok!r}") from exc
    return out


def _seed_list(text: str) -> list[int]:
    """``5`` means seeds 0..4; ``3,7,11`` lists them explicitly."""
    try:
        if "," in text:
            return [int(x) for x in text.split(",") if x.strip()]
        return list(range(int(text)))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc


def sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, argv: list[str], config: dict, inputs: dict,
                   outputs: dict, seed) -> Path:
    manifest = {
        "tool": "aclr",
        "version": __version__,
        "command": command,
        "argv": argv,
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "seed": seed,
        "config": config,
        "inputs": {k: {"path": str(v), "sha256": sha256(v)} for k, v in inputs.items() if v},
        "outputs": {k: str(v) for k, v in outputs.items()},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ------------------------------------------------------------------ parser


def _add_data_args(p: argparse.ArgumentParser, source: bool = True) -> None:
    g = p.add_argument_group("data")
    if source:
        g.add_argument("--source", help="source event file (JSON Lines)")
        g.add_argument("--source-emb", help="source embedding file")
    g.add_argument("--target", required=True, help="target event file (JSON Lines)")
    g.add_argument("--target-emb", help="target embedding file")
    g.add_argument("--hash-dim", type=int, default=64,
                   help="dimension of the hashing embedder used when no embedding file is given")


def _add_train_args(p: argparse.ArgumentParser, skip: tuple[str, ...] = ()) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--regime", choices=REGIMES, default=ACLR)
    g.add_argument("--lr", type=float)
    g.add_argument("--dropout", type=float)
    g.add_argument("--tau", type=float)
    for name in ("alpha", "epsilon"):
        if name not in skip:
            g.add_argument("--" + name, type=float)
    g.add_argument("--layers", type=int)
    g.add_argument("--hidden-dim", type=int)
    g.add_argument("--out-dim", type=int)
    g.add_argument("--batch-source", type=int)
    g.add_argument("--batch-target", type=int)
    g.add_argument("--max-epochs", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--pairing", choices=("nested", "zip"))
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--val-fraction", type=float)
    g.add_argument("--adv-in-scl", action="store_true", default=None,
                   help="let adversarial target vectors act as extra contrastive anchors")
    defaults = TrainConfig()
    for action in g._group_actions:
        if action.dest != "regime" and hasattr(defaults, action.dest):
            action.help = (action.help + " " if action.help else "") + f"(default {getattr(defaults, action.dest)})"


def _add_output_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./aclr-out)")
    p.add_argument("--figures", action="store_true", help="also render PNG figures next to the CSVs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aclr", description=__doc__)
    parser.add_argument("--version", action="version", version=f"aclr {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and save its checkpoint and loss history")
    _add_data_args(p)
    _add_train_args(p)
    _add_output_args(p)

    p = sub.add_parser("cv", help="inverted k-fold cross-validation on the target data")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--folds", type=int, default=5, help="number of folds k (default 5)")
    p.add_argument("--only-folds", type=lambda s: [int(x) for x in s.split(",")],
                   help="run a subset of folds, e.g. 0,2")
    _add_output_args(p)

    p = sub.add_parser("early", help="early-detection curve of a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--emb")
    p.add_argument("--hash-dim", type=int, default=64)
    grid = p.add_mutually_exclusive_group()
    grid.add_argument("--grid", type=_checkpoint_list,
                      help="post-count checkpoints, e.g. 1,5,10,20,50,100,all")
    grid.add_argument("--time-grid", type=_checkpoint_list,
                      help="elapsed-seconds checkpoints, e.g. 0,600,3600,all")
    _add_output_args(p)

    p = sub.add_parser("export-features", help="event vectors with a 2-D PCA projection")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--emb")
    p.add_argument("--hash-dim", type=int, default=64)
    _add_output_args(p)

    p = sub.add_parser("synth", help="generate a synthetic source/target benchmark")
    defaults = SynthConfig()
    for f in fields(SynthConfig):
        if f.name in ("mu_rumor", "mu_nonrumor", "shift"):
            p.add_argument("--" + f.name.replace("_", "-"), type=_float_list,
                           help="comma-separated vector (default: generated from the seed)")
            continue
        kind = type(getattr(defaults, f.name))
        p.add_argument("--" + f.name.replace("_", "-"), type=kind, default=getattr(defaults, f.name),
                       help=f"(default {getattr(defaults, f.name)})")
    _add_output_args(p)

    p = sub.add_parser("sweep", help="hyperparameter sweep over epsilon, alpha or target training fraction")
    _add_data_args(p)
    _add_train_args(p, skip=("alpha", "epsilon"))
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--epsilon", dest="epsilon_grid", type=_float_list,
                       help="perturbation norms, e.g. 0.5,1.0,1.5,2.0,2.5 (0 = no augmentation)")
    which.add_argument("--alpha", dest="alpha_grid", type=_float_list,
                       help="trade-off values, e.g. 0.1,0.3,0.5,0.7,0.9")
    which.add_argument("--target-fraction", type=_float_list,
                       help="fractions of target data used for training, e.g. 0.05,0.1,0.2,0.4,0.6")
    p.add_argument("--seeds", type=_seed_list, default=list(range(5)),
                   help="seed count (5 -> 0..4) or explicit list (default 5)")
    p.add_argument("--train-fraction", type=float, default=0.2,
                   help="target training fraction for the epsilon/alpha sweeps (default 0.2)")
    _add_output_args(p)
    return parser


# --------------------------------------------------------------- helpers


def _out_dir(args, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUTPUT_ENV, "aclr-out")) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _provider(emb_path: str | None, hash_dim: int):
    if emb_path:
        return load_embeddings(emb_path)
    return HashingEmbedder(hash_dim)


def _check_file(path: str | None, flag: str) -> None:
    if path is not None and not Path(path).is_file():
        raise UsageError(f"{flag}: no such file {path!r}")


def _load_corpora(args, need_source: bool):
    for flag in ("source", "source_emb", "target", "target_emb"):
        _check_file(getattr(args, flag, None), "--" + flag.replace("_", "-"))
    source = None
    if getattr(args, "source", None):
        source = Corpus(load_dataset(args.source, "source"), _provider(args.source_emb, args.hash_dim))
    elif need_source:
        raise UsageError(f"regime {args.regime} needs --source")
    target = Corpus(load_dataset(args.target, "target"), _provider(args.target_emb, args.hash_dim))
    return source, target


def _train_config(args, sweep_param: str | None = None) -> TrainConfig:
    regime = args.regime
    explicit = {f.name: getattr(args, f.name) for f in fields(TrainConfig)
                if f.name != "regime" and getattr(args, f.name, None) is not None}
    if regime not in CONTRASTIVE_REGIMES and (explicit.get("alpha", 0) != 0 or sweep_param == "alpha"):
        raise UsageError(f"--alpha has no effect under regime {regime}; it only applies to "
                         f"{', '.join(CONTRASTIVE_REGIMES)}")
    if regime != ACLR and ("epsilon" in explicit or explicit.get("adv_in_scl")):
        raise UsageError(f"--epsilon/--adv-in-scl only apply to regime {ACLR}")
    if sweep_param == "epsilon" and regime != ACLR:
        raise UsageError(f"an epsilon sweep needs regime {ACLR}")
    try:
        return TrainConfig(regime=regime, **explicit)
    except TrainingError as exc:
        raise UsageError(str(exc)) from exc


def _inputs(args, *names) -> dict:
    return {n: getattr(args, n, None) for n in names}


# ------------------------------------------------------------- commands


def cmd_synth(args, argv) -> None:
    kw = {f.name: getattr(args, f.name) for f in fields(SynthConfig)}
    for name in ("mu_rumor", "mu_nonrumor", "shift"):
        if kw[name] is not None:
            kw[name] = tuple(kw[name])
    try:
        cfg = SynthConfig(**kw)
    except SynthConfigError as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(args, "synth")
    planned = {k: out / f"{k}.jsonl" for k in ("source", "source_emb", "target", "target_emb")}
    write_manifest(out, "synth", argv, cfg.to_dict(), {}, planned, cfg.seed)
    write_benchmark(generate_benchmark(cfg), out)
    print(f"wrote synthetic benchmark to {out}")


def cmd_train(args, argv) -> None:
    cfg = _train_config(args)
    source, target = _load_corpora(args, cfg.regime in NEEDS_SOURCE)
    out = _out_dir(args, "train")
    outputs = {"history": out / "history.csv", "checkpoint": out / "checkpoint.json"}
    write_manifest(out, "train", argv, asdict(cfg),
                   _inputs(args, "source", "source_emb", "target", "target_emb"), outputs, cfg.seed)
    result = train(source, target, cfg)
    result.history.to_csv(outputs["history"])
    save_checkpoint(result.params, outputs["checkpoint"],
                    {"regime": cfg.regime, "best_epoch": result.history.best_epoch})
    if args.figures:
        from .figures import plot_history
        plot_history(result.history, out / "history.png")
    print(f"trained {cfg.regime}: {result.history.n_steps} steps, best epoch {result.history.best_epoch}; "
          f"outputs in {out}")


def cmd_cv(args, argv) -> None:
    cfg = _train_config(args)
    source, target = _load_corpora(args, cfg.regime in NEEDS_SOURCE)
    out = _out_dir(args, "cv")
    outputs = {"metrics": out / "metrics.csv"}
    config = {**asdict(cfg), "folds": args.folds, "only_folds": args.only_folds}
    write_manifest(out, "cv", argv, config,
                   _inputs(args, "source", "source_emb", "target", "target_emb"), outputs, cfg.seed)
    result = cross_validate(source, target, cfg, k=args.folds, folds=args.only_folds)
    result.to_csv(outputs["metrics"])
    if args.figures:
        from .figures import plot_cv
        plot_cv(result, out / "metrics.png")
    mean, std = result.summary()["macro_f1"]
    print(f"{cfg.regime} inverted {args.folds}-fold CV: macro-F1 {mean:.3f} +/- {std:.3f}")


def cmd_early(args, argv) -> None:
    _check_file(args.checkpoint, "--checkpoint")
    _check_file(args.events, "--events")
    _check_file(args.emb, "--emb")
    params = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.events)
    provider = _provider(args.emb, args.hash_dim)
    if args.time_grid is not None:
        mode, grid = "seconds", args.time_grid
    else:
        mode, grid = "posts", args.grid if args.grid is not None else list(DEFAULT_POST_CHECKPOINTS)
        if any(c is not None and not float(c).is_integer() for c in grid):
            raise UsageError(f"post-count checkpoints must be integers, got {grid}")
        grid = [None if c is None else int(c) for c in grid]
    out = _out_dir(args, "early")
    outputs = {"curve": out / "early.csv"}
    write_manifest(out, "early", argv, {"mode": mode, "checkpoints": grid},
                   _inputs(args, "checkpoint", "events", "emb"), outputs, None)
    try:
        curve = early_detection_curve(params, dataset, provider, grid, mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    curve.to_csv(outputs["curve"])
    if args.figures:
        from .figures import plot_early_curve
        plot_early_curve(curve, out / "early.png")
    print(f"early-detection curve ({len(curve.points)} checkpoints) written to {outputs['curve']}")


def cmd_export(args, argv) -> None:
    _check_file(args.checkpoint, "--checkpoint")
    _check_file(args.events, "--events")
    _check_file(args.emb, "--emb")
    params = load_checkpoint(args.checkpoint)
    corpus = Corpus(load_dataset(args.events), _provider(args.emb, args.hash_dim))
    out = _out_dir(args, "export-features")
    outputs = {"features": out / "features.csv"}
    write_manifest(out, "export-features", argv, {}, _inputs(args, "checkpoint", "events", "emb"),
                   outputs, None)
    table = export_features(params, corpus.graphs())
    table.to_csv(outputs["features"])
    if args.figures:
        from .figures import plot_features
        plot_features(table, out / "features.png")
    note = "" if table.pca is not None else " (fewer than 3 events: PCA skipped)"
    print(f"exported {len(table.event_ids)} event vectors to {outputs['features']}{note}")


def cmd_sweep(args, argv) -> None:
    if args.epsilon_grid is not None:
        param, values = "epsilon", args.epsilon_grid
    elif args.alpha_grid is not None:
        param, values = "alpha", args.alpha_grid
    else:
        param, values = "target_fraction", args.target_fraction
    if not values:
        raise UsageError("empty sweep grid")
    cfg = _train_config(args, param)
    source, target = _load_corpora(args, cfg.regime in NEEDS_SOURCE)
    out = _out_dir(args, "sweep")
    outputs = {"summary": out / f"sweep_{param}.csv", "runs": out / f"sweep_{param}_runs.csv"}
    config = {**asdict(cfg), "sweep": param, "values": values, "seeds": args.seeds,
              "train_fraction": args.train_fraction}
    write_manifest(out, "sweep", argv, config,
                   _inputs(args, "source", "source_emb", "target", "target_emb"), outputs, args.seeds)
    try:
        result = sweep(source, target, cfg, param, values, args.seeds, args.train_fraction)
    except ValueError as exc:
        if isinstance(exc, (DatasetError, EmbeddingError)):
            raise
        raise UsageError(str(exc)) from exc
    result.to_csv(outputs["summary"], outputs["runs"])
    if args.figures:
        from .figures import plot_sweep
        plot_sweep(result, out / f"sweep_{param}.png")
    print(f"{param} sweep: {len(values)} values x {len(args.seeds)} seeds -> {outputs['summary']}")


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "cv": cmd_cv,
    "early": cmd_early,
    "export-features": cmd_export,
    "sweep": cmd_sweep,
}


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if name in getattr(action, "choices", {}):
            return action.choices[name]
    return parser


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args, argv)
    except UsageError as exc:
        _subparser(parser, args.command).print_usage(sys.stderr)
        print(f"aclr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, EmbeddingError, TrainingError, OSError, ValueError) as exc:
        print(f"aclr {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
