"""Command-line interface: ``lmr gen-data | train | eval | ablate | export-mesh``.

Errors go to stderr as a single line ``lmr-error E<code> <kind>: <message>``
and the process exits with that code (2 config, 3 data, 4 numeric).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from . import config as config_mod
from .body_model import ModelFileError, build_synthetic_model, export_obj, mesh
from .bundle import BundleError
from .metrics import write_report_csv
from .network import N_THETA
from .synth import DataError, load_dataset, make_dataset, save_dataset
from .training import (
    Checkpoint, CheckpointError, NumericError, ablation_run, build_network, evaluate, load_checkpoint,
    save_checkpoint, train,
)

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

log = logging.getLogger("lmr")


def _write_text(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _load_data(directory, cfg=None):
    if not os.path.isdir(directory):
        raise DataError(f"data directory {directory} does not exist")
    body, train_seqs, val_seqs, manifest = load_dataset(directory)
    if cfg is not None and manifest.get("config") is not None:
        wanted = json.loads(cfg.dumps())["data"]
        if manifest["config"].get("data") != wanted:
            raise config_mod.ConfigError(
                f"data section of the config does not match the one {directory} was generated with"
            )
    return body, train_seqs, val_seqs, manifest


def _prepare_out(directory):
    os.makedirs(directory, exist_ok=True)


# ---------------------------------------------------------------- commands


def cmd_gen_data(args):
    cfg = config_mod.load(args.config)
    if os.path.isdir(args.out) and os.listdir(args.out) and not args.force:
        raise DataError(f"output directory {args.out} is not empty (use --force to overwrite)")
    body = build_synthetic_model(cfg.data.model_seed, cfg.data.n_vertices)
    train_seqs, val_seqs = make_dataset(body, cfg.data)
    save_dataset(args.out, body, train_seqs, val_seqs, cfg.to_dict())
    print(f"wrote {len(train_seqs)} train and {len(val_seqs)} val sequences to {args.out}")


def cmd_train(args):
    cfg = config_mod.load(args.config)
    tcfg = cfg.train_config(args.variant)
    tcfg.validate()
    body, train_seqs, val_seqs, _ = _load_data(args.data, cfg)
    _prepare_out(args.out)
    ckpt_path = os.path.join(args.out, cfg.paths.checkpoint)
    resolved = {**cfg.to_dict(), "resolved_variant": tcfg.variant}
    state = None
    if args.resume and os.path.exists(ckpt_path):
        ckpt = load_checkpoint(ckpt_path)
        old = {k: v for k, v in ckpt.config.get("training", {}).items() if k != "epochs"}
        new = {k: v for k, v in json.loads(json.dumps(tcfg.to_dict())).items() if k != "epochs"}
        if old != new:
            raise config_mod.ConfigError("cannot resume: training config differs from the checkpoint's")
        net = ckpt.network()
        state = ckpt.state
        log.info("resuming from epoch %d", state.epoch)
    else:
        net = build_network(tcfg, train_seqs[0].features.shape[1])
    if net.n_features != train_seqs[0].features.shape[1]:
        raise DataError(f"checkpoint expects {net.n_features} features, data has {train_seqs[0].features.shape[1]}")
    state = train(net, body, train_seqs, tcfg, val_seqs=val_seqs, state=state)
    save_checkpoint(Checkpoint.from_training(net, state, {**resolved, "training": tcfg.to_dict()}), ckpt_path)
    with open(os.path.join(args.out, cfg.paths.log), "w") as fh:
        for record in state.history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        for record in state.val_history:
            fh.write(json.dumps({"val": record}, sort_keys=True) + "\n")
    _write_text(os.path.join(args.out, cfg.paths.resolved_config), json.dumps(resolved, indent=1, sort_keys=True) + "\n")
    last = state.history[-1]["loss"] if state.history else float("nan")
    print(f"trained {tcfg.variant} for {state.epoch} epochs ({state.adam.step} steps), last loss {last:.6f}")


def _checkpoint_and_data(args):
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise DataError(f"checkpoint {args.checkpoint} does not exist") from None
    body, train_seqs, val_seqs, manifest = _load_data(args.data)
    want = ckpt.net_config.get("n_features")
    if want != manifest["n_features"]:
        raise DataError(f"checkpoint expects {want} features, data {args.data} has {manifest['n_features']}")
    return ckpt, body, {"train": train_seqs, "val": val_seqs}


def cmd_eval(args):
    ckpt, body, splits = _checkpoint_and_data(args)
    seqs = splits[args.split]
    if not seqs:
        raise DataError(f"split {args.split!r} of {args.data} is empty")
    fps = args.fps if args.fps is not None else ckpt.config.get("metrics", {}).get("fps", 30.0)
    report = evaluate(ckpt.predictor(), body, seqs, fps)
    variant = ckpt.net_config.get("variant")
    text = write_report_csv([(variant, f"synthetic-{args.split}", report)], args.report)
    sys.stdout.write(text)


def cmd_ablate(args):
    cfg = config_mod.load(args.config)
    body, train_seqs, val_seqs, _ = _load_data(args.data, cfg)
    if not val_seqs:
        raise DataError(f"{args.data} has no validation sequences")
    _prepare_out(args.out)
    text, checkpoints, _ = ablation_run(cfg.train_config(), body, train_seqs, val_seqs)
    for variant, ckpt in checkpoints.items():
        ckpt.config = {**cfg.to_dict(), "training": ckpt.config["training"]}
        save_checkpoint(ckpt, os.path.join(args.out, f"{variant}.lmrb"))
    _write_text(os.path.join(args.out, "ablation.csv"), text)
    _write_text(os.path.join(args.out, cfg.paths.resolved_config), cfg.dumps())
    sys.stdout.write(text)


def cmd_export_mesh(args):
    ckpt, body, splits = _checkpoint_and_data(args)
    seqs = splits[args.split]
    if not 0 <= args.seq < len(seqs):
        raise DataError(f"--seq {args.seq} out of range: split {args.split!r} has {len(seqs)} sequences")
    seq = seqs[args.seq]
    if not 0 <= args.frame < seq.n_frames:
        raise DataError(f"--frame {args.frame} out of range: sequence has {seq.n_frames} frames")
    theta = ckpt.predictor().predict(seq.features[None], [seq])[0, args.frame]
    result = mesh(body, theta[72:82], theta[:72])
    export_obj(result, body, args.out)
    sidecar = os.path.splitext(args.out)[0] + ".theta.json"
    doc = {
        "variant": ckpt.net_config.get("variant"), "split": args.split, "seq": args.seq, "frame": args.frame,
        "pose": theta[:72].tolist(), "shape": theta[72:82].tolist(), "camera": theta[82:].tolist(),
        "theta": theta.tolist(),
    }
    assert len(doc["theta"]) == N_THETA
    _write_text(sidecar, json.dumps(doc, indent=1) + "\n")
    print(f"wrote {args.out} ({body.n_vertices} vertices) and {sidecar}")


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="lmr", description="Train and evaluate per-part recurrent mesh regressors.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--config", help="experiment config JSON (defaults if omitted)")
    g.add_argument("--out", required=True, help="dataset directory to write")
    g.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one variant")
    t.add_argument("--config", help="experiment config JSON (defaults if omitted)")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="run directory for checkpoint, log and resolved config")
    t.add_argument("--variant", choices=("lmr", "lmr_no_root", "single_rnn"), help="override model.variant")
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out if present")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True, help="checkpoint file")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--report", required=True, help="CSV report to write")
    e.add_argument("--split", choices=("train", "val"), default="val", help="dataset split (default val)")
    e.add_argument("--fps", type=float, help="frame rate for acceleration error (default from checkpoint config)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train all three variants and write the comparison table")
    a.add_argument("--config", help="experiment config JSON (defaults if omitted)")
    a.add_argument("--data", required=True, help="dataset directory")
    a.add_argument("--out", required=True, help="output directory")
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("export-mesh", help="write the predicted mesh of one frame as OBJ")
    x.add_argument("--checkpoint", required=True, help="checkpoint file")
    x.add_argument("--data", required=True, help="dataset directory")
    x.add_argument("--seq", type=int, required=True, help="sequence index within the split")
    x.add_argument("--frame", type=int, required=True, help="frame index within the sequence")
    x.add_argument("--out", required=True, help="OBJ path; the parameters go to <stem>.theta.json")
    x.add_argument("--split", choices=("train", "val"), default="val", help="dataset split (default val)")
    x.set_defaults(func=cmd_export_mesh)
    return p


def _classify(exc):
    if isinstance(exc, config_mod.ConfigError):
        return EXIT_CONFIG, "config"
    if isinstance(exc, (NumericError, FloatingPointError)):
        return EXIT_NUMERIC, "numeric"
    if isinstance(exc, (DataError, ModelFileError, CheckpointError, BundleError, OSError)):
        return EXIT_DATA, "data"
    if isinstance(exc, ValueError):
        return EXIT_CONFIG, "config"
    return None


def _threads():
    raw = os.environ.get("LMR_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise config_mod.ConfigError(f"LMR_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise config_mod.ConfigError(f"LMR_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        with threadpool_limits(limits=_threads()):
            args.func(args)
    except Exception as exc:
        kind = _classify(exc)
        if kind is None:
            raise
        code, name = kind
        message = " ".join(str(exc).split())
        print(f"lmr-error E{code} {name}: {message}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
