"""Command-line entry point: ``timemagnet <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError, export_metrics, load_checkpoint, save_checkpoint
from .config import MODALITIES, ConfigError, echo_config, load_config
from .data import MexFormatError, build_dataset, make_split, prepare, read_mex_tree, synth_dataset, synth_export
from .fed import evaluate, predict, run_centralized, run_federated
from .fusion import build_model

log = logging.getLogger("timemagnet")

COMMANDS = ("synth", "train-centralized", "train-federated", "evaluate", "ablate", "gradcheck")


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with configuration overrides")
    p.add_argument("--preset", choices=("desk", "paper"), help="base preset (default desk)")
    p.add_argument("--seed", type=int)
    p.add_argument("--modalities", help="comma-separated subset of act,acw,dc,pm")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="MEx-layout dataset root (synthetic data is generated when omitted)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--rounds", type=int)
    p.add_argument("--local-epochs", type=int, dest="local_epochs")
    p.add_argument("--batch", type=int)
    p.add_argument("--sample-ratio", type=float, dest="sample_ratio")
    p.add_argument("--epochs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timemagnet", description="Multimodal federated activity recognition")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")

    p = sub.add_parser("synth", help="write a synthetic dataset in MEx CSV layout")
    _common(p)
    p.add_argument("--out", required=True, help="dataset root to create")

    for name in ("train-centralized", "train-federated"):
        p = sub.add_parser(name, help=f"{name.split('-')[1]} training run")
        _common(p)
        _train_flags(p)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="train on every three-modality subset plus the full set")
    _common(p)
    _train_flags(p)
    p.add_argument("--mode", choices=("centralized", "federated"), default="centralized")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _common(p)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if getattr(args, "modalities", None):
        mods = [m.strip() for m in args.modalities.split(",") if m.strip()]
        bad = [m for m in mods if m not in MODALITIES]
        if bad:
            raise UsageError(f"--modalities: unknown modality {bad[0]!r}; choose from {','.join(MODALITIES)}")
        out["modalities"] = mods
    for flag, key in (("rounds", "rounds"), ("local_epochs", "local_epochs"), ("batch", "batch_size"),
                      ("sample_ratio", "sample_ratio"), ("epochs", "epochs")):
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = v
    if getattr(args, "data", None):
        out["data_root"] = args.data
    return out


def _config(args, extra=None):
    return load_config(args.config, args.preset, {**_overrides(args), **(extra or {})})


def load_data(cfg):
    """Windowed, split and normalised data from ``cfg.data_root`` or the synthetic generator."""
    if cfg.data_root:
        ds = build_dataset(read_mex_tree(cfg.data_root), cfg, modalities=MODALITIES)
    else:
        ds = synth_dataset(cfg)
    if len(ds) == 0:
        raise UsageError("dataset produced no windows")
    ds = ds.select_modalities(cfg.modalities)
    return prepare(ds, make_split(ds.participant_ids(), cfg.split_counts))


def train_run(cfg, mode: str, run_dir, data=None) -> dict:
    run_dir = Path(run_dir)
    echo_config(cfg, run_dir)
    data = data if data is not None else load_data(cfg)
    if data.train.modalities != [m for m in MODALITIES if m in cfg.modalities]:
        data = type(data)(*(d.select_modalities(cfg.modalities) for d in (data.train, data.val, data.test)),
                          data.stats, data.split)
    model = build_model(cfg)
    runner = run_centralized if mode == "centralized" else run_federated
    result = runner(cfg, data, model, run_dir)
    save_checkpoint(result.model, run_dir / "checkpoints" / "best.tmgn")
    rep = evaluate(result.model, data.test, cfg.n_classes)
    logits, fused = predict(result.model, data.test, return_fused=True)
    export_metrics(rep, run_dir, embeddings=fused, labels=data.test.labels,
                   extra={"mode": mode, "modalities": list(cfg.modalities), "best_step": result.best_step})
    return rep.scalars()


def cmd_synth(args) -> int:
    cfg = _config(args)
    recs = synth_export(args.out, cfg)
    print(f"wrote {len(recs)} recordings for {cfg.synth_participants} participants to {args.out}")
    return 0


def cmd_train(args, mode: str) -> int:
    cfg = _config(args)
    s = train_run(cfg, mode, args.out)
    print(f"{mode}: test accuracy {s['accuracy']:.4f} macro-F1 {s['macro_f1']:.4f} -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise UsageError(f"--checkpoint: {ckpt} does not exist")
    cfg_file = args.config
    if cfg_file is None:
        echo = ckpt.parent.parent / "config.json"
        cfg_file = str(echo) if echo.exists() else None
    cfg = load_config(cfg_file, args.preset, _overrides(args))
    data = load_data(cfg)
    model = build_model(cfg)
    load_checkpoint(ckpt, model)
    rep = evaluate(model, data.test, cfg.n_classes)
    _, fused = predict(model, data.test, return_fused=True)
    export_metrics(rep, args.out, embeddings=fused, labels=data.test.labels)
    print(f"test accuracy {rep.accuracy:.4f} macro-F1 {rep.macro_f1:.4f} -> {args.out}")
    return 0


def ablation_subsets(mods=MODALITIES) -> list:
    mods = list(mods)
    return [list(c) for c in itertools.combinations(mods, len(mods) - 1)] + [mods]


def cmd_ablate(args) -> int:
    base = _config(args, {"modalities": list(MODALITIES)})
    out = Path(args.out)
    data = load_data(base)
    rows = []
    for subset in ablation_subsets():
        cfg = base.replace(modalities=subset)
        name = "+".join(subset)
        s = train_run(cfg, args.mode, out / name, data)
        rows.append({"modalities": name, "accuracy": s["accuracy"], "macro_f1": s["macro_f1"]})
        print(f"{name}: accuracy {s['accuracy']:.4f} macro-F1 {s['macro_f1']:.4f}")
    with (out / "ablation.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["modalities", "accuracy", "macro_f1"])
        w.writeheader()
        w.writerows(rows)
    (out / "ablation.json").write_text(json.dumps(rows, indent=2) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import gradcheck_suite

    results = gradcheck_suite(seed=args.seed or 0, tol=args.tol)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:20s} max rel err {r.error:.2e} ({r.seconds:.1f}s)")
    return 0 if all(r.passed for r in results) else 1


def dispatch(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    handlers = {"synth": cmd_synth, "train-centralized": lambda a: cmd_train(a, "centralized"),
                "train-federated": lambda a: cmd_train(a, "federated"), "evaluate": cmd_evaluate,
                "ablate": cmd_ablate, "gradcheck": cmd_gradcheck}
    try:
        return handlers[args.command](args)
    except (ConfigError, UsageError, MexFormatError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
