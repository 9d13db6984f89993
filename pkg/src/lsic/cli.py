"""Command-line entry point: the full pipeline behind one `lsic` command.

Machine-readable output goes to stdout as JSON lines; progress and
diagnostics go to stderr. Exit codes: 0 success, 1 domain error, 2 usage.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import model_store
from .audio_io import MODEL_WINDOW_SAMPLES, read_wav, write_wav
from .augment import AugmentParams, augment_triplet
from .bus import COMMAND_TOPIC, GateConfig, gate, publish_command
from .dataset_eval import (
    extract_features, load_manifest, render_grid_table, run_experiment_grid,
    split_check,
)
from .devices import run_fleet
from .dsp_frontend import FrontendConfig, mfcc, save_features
from .errors import LsicError
from .mqtt import MqttClient
from .nn import TrainConfig, build_model, count_params, predict, train
from .quantize import QUANT_MODES, quantize_model, size_report


def _env_seed() -> int:
    return int(os.environ.get("LSIC_SEED", "0"))


def _env_broker() -> str | None:
    return os.environ.get("LSIC_BROKER_URL")


def _emit(record: dict) -> None:
    sys.stdout.write(json.dumps(record) + "\n")
    sys.stdout.flush()


def _open_bus(args):
    broker = args.broker or _env_broker()
    if not broker:
        raise LsicError("no broker: pass --broker or set LSIC_BROKER_URL")
    client = MqttClient.from_url(broker, client_id=args.client_id)
    return client.connect()


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        patience=args.patience,
        dropout_rate=args.dropout,
        seed=args.seed if args.seed is not None else _env_seed(),
    )


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-epochs", type=int, default=300)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--dropout", type=float, default=0.3)


def cmd_features(args) -> int:
    cfg = FrontendConfig(n_mfcc=args.n_mfcc)
    if not ((args.wav and args.out) or (args.manifest and args.out_dir)):
        print("features: need --wav/--out or --manifest/--out-dir", file=sys.stderr)
        return 2
    if args.wav:
        clip = read_wav(args.wav).require_rate()
        mat = mfcc(clip, cfg)
        save_features(args.out, mat)
        _emit({"wav": args.wav, "out": args.out,
               "frames": mat.n_frames, "n_mfcc": mat.n_mfcc})
        return 0
    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for record in manifest.for_split(args.split):
        clip = read_wav(record.path).require_rate()
        mat = mfcc(clip, cfg)
        dest = out_dir / (Path(record.path).stem + ".mfcc")
        save_features(dest, mat)
        _emit({"wav": record.path, "out": str(dest), "frames": mat.n_frames})
    return 0


def cmd_augment(args) -> int:
    clip = read_wav(args.wav).require_rate()
    params = AugmentParams(snr_db=args.snr_db, semitones=args.semitones,
                           seed=args.seed if args.seed is not None else _env_seed())
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.wav).stem
    names = ["original", "noise", "pitch"]
    for name, variant in zip(names, augment_triplet(clip, params)):
        dest = out_dir / f"{stem}_{name}.wav"
        write_wav(dest, variant)
        _emit({"variant": name, "out": str(dest)})
    return 0


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _train_config(args)
    frontend = FrontendConfig(n_mfcc=args.n_mfcc)
    aug = AugmentParams(snr_db=args.snr_db, semitones=args.semitones, seed=cfg.seed)
    train_set = extract_features(manifest, "train", frontend, heads=args.heads,
                                 augment=args.augment, augment_params=aug)
    val_set = extract_features(manifest, "val", frontend, heads=args.heads)
    model = build_model(args.arch, args.n_mfcc, args.heads,
                        frontend=frontend, seed=cfg.seed)
    model, history = train(model, train_set.x, train_set.y,
                           val_set.x, val_set.y, cfg)
    for row in history:
        _emit(row)
    bytes_written = model_store.save(model, args.out)
    print(f"saved {args.out} ({bytes_written} bytes, "
          f"{count_params(model)} parameters, {len(history)} epochs)",
          file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    from .dataset_eval import evaluate

    model = model_store.load(args.model)
    manifest = load_manifest(args.manifest)
    metrics = evaluate(model, manifest, args.split)
    record = {"split": args.split, "accuracy": metrics.accuracy,
              "mean_loss": metrics.mean_loss}
    if metrics.action_accuracy is not None:
        record["action_accuracy"] = metrics.action_accuracy
        record["object_accuracy"] = metrics.object_accuracy
    _emit(record)
    if args.confusion_out:
        from .labels import CANONICAL
        Path(args.confusion_out).write_text(
            metrics.confusion_csv(CANONICAL.intents) + "\n", encoding="utf-8")
    return 0


def cmd_quantize(args) -> int:
    model = model_store.load(args.model)
    manifest = load_manifest(args.manifest)
    modes = args.modes.split(",") if args.modes else list(QUANT_MODES)
    calib_clips = None
    if "int8_full" in modes:
        records = manifest.for_split(args.calib_split)[:args.calib_clips]
        calib_clips = [read_wav(r.path).require_rate() for r in records]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    variants = {}
    for mode in modes:
        q = quantize_model(model, mode, calib=calib_clips if mode == "int8_full" else None)
        variants[mode] = q
        model_store.save(q, out_dir / f"{Path(args.model).stem}.{mode}.lsic")
    eval_set = extract_features(manifest, args.eval_split, model.frontend,
                                heads=model.heads,
                                window_samples=model.window_samples)
    report = size_report(variants, eval_set.x, eval_set.y)
    print(report.render())
    for record in report.to_records():
        _emit(record)
    return 0


def cmd_infer(args) -> int:
    model = model_store.load(args.model)
    clip = read_wav(args.wav).require_rate()
    pred = predict(model, clip)
    _emit({
        "intent": pred.intent,
        "confidence": round(pred.confidence, 6),
        "top3": [{"label": lab, "prob": round(p, 6)} for lab, p in pred.top_k(3)],
    })
    return 0


def _serve_one(model, wav_path, gate_cfg, bus, topic, source, seq) -> dict:
    clip = read_wav(wav_path).require_rate()
    pred = predict(model, clip)
    result = gate(pred, gate_cfg, source=source, seq=seq)
    record = {"wav": str(wav_path), "intent": pred.intent,
              "confidence": round(pred.confidence, 6)}
    if result.accepted:
        publish_command(bus, result.msg, topic)
        record["published"] = True
        record["seq"] = result.msg.seq
    else:
        record["published"] = False
        record["reject_reason"] = result.reason
    return record


def cmd_serve(args) -> int:
    model = model_store.load(args.model)
    gate_cfg = GateConfig(threshold=args.threshold)
    bus = _open_bus(args)
    seq = 0
    try:
        for wav_path in args.wav or []:
            seq += 1
            _emit(_serve_one(model, wav_path, gate_cfg, bus, args.topic,
                             args.client_id, seq))
        if args.watch_dir:
            seen: set = set()
            print(f"watching {args.watch_dir} for .wav files", file=sys.stderr)
            while True:
                for wav_path in sorted(Path(args.watch_dir).glob("*.wav")):
                    if wav_path in seen:
                        continue
                    seen.add(wav_path)
                    seq += 1
                    _emit(_serve_one(model, wav_path, gate_cfg, bus, args.topic,
                                     args.client_id, seq))
                time.sleep(args.poll_interval)
    except KeyboardInterrupt:
        pass
    finally:
        bus.close()
    return 0


def cmd_devices(args) -> int:
    bus = _open_bus(args)
    fleet = run_fleet(bus, command_topic=args.topic)
    print(f"{len(fleet.nodes)} device nodes online; Ctrl-C to stop", file=sys.stderr)
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        fleet.shutdown()
        bus.close()
    return 0


def cmd_experiments(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _train_config(args)
    rows = run_experiment_grid(
        args.grid, manifest, cfg,
        progress=lambda row: print(f"done: exp {row['exp']} "
                                   f"acc={100 * row['accuracy']:.2f}%", file=sys.stderr))
    print(render_grid_table(rows))
    for row in rows:
        _emit(row)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    return 0


def cmd_split_check(args) -> int:
    manifest = load_manifest(args.manifest)
    report = split_check(manifest)
    print(report.render())
    return 0 if report.speaker_disjoint else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsic",
        description="Luganda speech-intent pipeline: features, training, "
                    "quantization, inference, and smart-home command fan-out.")
    parser.add_argument("--seed", type=int, default=None,
                        help="RNG seed (default: $LSIC_SEED or 0)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="extract MFCC features to cache files")
    p.add_argument("--wav")
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.add_argument("--split", default="train")
    p.add_argument("--out-dir")
    p.add_argument("--n-mfcc", type=int, choices=(10, 13), default=13)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("augment", help="write the 3-way augmentation of one clip")
    p.add_argument("--wav", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--snr-db", type=float, default=20.0)
    p.add_argument("--semitones", type=float, default=2.0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train a classifier from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-mfcc", type=int, choices=(10, 13), default=13)
    p.add_argument("--arch", choices=("gmp", "flatten"), default="gmp")
    p.add_argument("--heads", choices=("single_intent", "slots"),
                   default="single_intent")
    p.add_argument("--augment", action="store_true")
    p.add_argument("--snr-db", type=float, default=20.0)
    p.add_argument("--semitones", type=float, default=2.0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a manifest split")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--confusion-out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("quantize", help="quantize a model and report size/accuracy")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--modes", help=f"comma list from {','.join(QUANT_MODES)}")
    p.add_argument("--calib-split", default="train")
    p.add_argument("--calib-clips", type=int, default=20)
    p.add_argument("--eval-split", default="test")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("infer", help="classify one WAV file")
    p.add_argument("--model", required=True)
    p.add_argument("--wav", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("serve", help="WAV files -> gate -> publish commands")
    p.add_argument("--model", required=True)
    p.add_argument("--wav", nargs="*")
    p.add_argument("--watch-dir")
    p.add_argument("--poll-interval", type=float, default=0.5)
    p.add_argument("--broker", help="mqtt://host:port (default: $LSIC_BROKER_URL)")
    p.add_argument("--topic", default=COMMAND_TOPIC)
    p.add_argument("--threshold", type=float, default=0.75)
    p.add_argument("--client-id", default="lsic-serve")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("devices", help="run the virtual device fleet")
    p.add_argument("--broker", help="mqtt://host:port (default: $LSIC_BROKER_URL)")
    p.add_argument("--topic", default=COMMAND_TOPIC)
    p.add_argument("--client-id", default="lsic-fleet")
    p.set_defaults(func=cmd_devices)

    p = sub.add_parser("experiments", help="run a published experiment grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", choices=("rpi", "wio"), required=True)
    p.add_argument("--out")
    _add_train_flags(p)
    p.set_defaults(func=cmd_experiments)

    p = sub.add_parser("split-check", help="verify speaker-disjoint splits")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_split_check)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "seed", None) is None:
        args.seed = _env_seed()
    try:
        return args.func(args)
    except LsicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
