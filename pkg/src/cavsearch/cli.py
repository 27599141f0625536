"""Command-line pipeline: synth, split, train, calibrate, predict,
evaluate, report.

One executable orchestrates the whole workflow so a run is auditable
end to end.  Every subcommand accepts ``--config FILE`` (JSON whose
keys are the long flag names); explicit flags override file values.
Beside each primary output the command writes a run manifest — a JSON
record of the fully resolved configuration — sufficient to re-execute
the step exactly.  All randomness flows from ``--seed``, so repeated
invocations are byte-identical.

Exit codes: 0 success, 1 validation or configuration error (including
usage errors), 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dataset import load_manifest, read_pgm, save_manifest, split_dataset
from .errors import CavSearchError
from .evaluation import (EvalConfig, MatchOutcome, aggregate_and_report,
                         match_detections, render_table, report_from_counts,
                         report_to_json, score_reader_polygons)
from .fcnn.checkpoint import load_checkpoint, save_checkpoint
from .fcnn.network import NetworkConfig, UNet
from .fcnn.training import TrainConfig, train
from .postprocess import (PostprocessConfig, calibrate_threshold, detect,
                          save_predictions, load_predictions)
from .synth import PhantomConfig, generate_dataset

_PREDICT_BATCH = 8


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_run_manifest(path: Path, command: str, options: dict) -> None:
    """Record the fully resolved configuration beside an output.

    Deliberately contains no timestamps or host details so identical
    runs write identical bytes.
    """
    _write_json(path, {"command": command, "options": options})


def _effective_options(args: argparse.Namespace) -> dict:
    skip = {"func", "config", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# -- subcommand implementations ----------------------------------------


def _cmd_synth(args) -> int:
    config = PhantomConfig(
        image_width=args.width, image_height=args.height,
        sample_count=args.samples, lesions_min=args.lesions_min,
        lesions_max=args.lesions_max, radius_min=args.radius_min,
        radius_max=args.radius_max, looseness=args.looseness,
        noise_sigma=args.noise_sigma, seed=args.seed)
    out = Path(args.out)
    generate_dataset(config, out)
    _write_run_manifest(out / "run_synth.json", "synth",
                        _effective_options(args))
    print(f"wrote {config.sample_count} samples to {out}", file=sys.stderr)
    return 0


def _cmd_split(args) -> int:
    data = Path(args.data)
    manifest = load_manifest(data / "manifest.json")
    manifest = split_dataset(manifest, args.test_fraction,
                             args.val_fraction, args.seed)
    save_manifest(manifest, data / "manifest.json")
    _write_run_manifest(data / "run_split.json", "split",
                        _effective_options(args))
    counts = {s: sum(r.split == s for r in manifest.records)
              for s in ("train", "val", "test")}
    print(f"split {len(manifest)} samples: {counts}", file=sys.stderr)
    return 0


def _cmd_train(args) -> int:
    net_config = NetworkConfig(depth=args.depth,
                               base_channels=args.base_channels,
                               kernel_size=args.kernel_size)
    train_config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size,
        learning_rate=args.learning_rate, momentum=args.momentum,
        positive_class_weight=args.positive_class_weight,
        early_stop_patience=args.early_stop_patience, seed=args.seed)
    manifest = load_manifest(Path(args.data) / "manifest.json")
    checkpoint, log = train(net_config, train_config, manifest, args.data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(checkpoint, out)
    _write_json(Path(str(out) + ".log.json"), {"epochs": log})
    _write_run_manifest(Path(str(out) + ".run.json"), "train",
                        _effective_options(args))
    print(f"best epoch {checkpoint.epoch} "
          f"(val loss {checkpoint.best_val_loss:.6f}) -> {out}",
          file=sys.stderr)
    return 0


def _load_split_records(data_dir: Path, split: str | None):
    manifest = load_manifest(data_dir / "manifest.json")
    records = manifest.records
    if split:
        records = manifest.subset(split)
        if not records:
            raise CavSearchError(f"no samples in split {split!r}")
    return records


def _probability_maps(net: UNet, data_dir: Path, records):
    """Forward all records in fixed order; returns image -> (H, W) map."""
    maps = {}
    for start in range(0, len(records), _PREDICT_BATCH):
        chunk = records[start:start + _PREDICT_BATCH]
        batch = np.stack([
            read_pgm(data_dir / r.image_path).astype(np.float32) / 255.0
            for r in chunk])[:, None]
        probs = net.forward(batch)
        for r, p in zip(chunk, probs[:, 0]):
            maps[r.image_path] = p
    return maps


def _cmd_calibrate(args) -> int:
    data = Path(args.data)
    records = _load_split_records(data, args.split)
    dims = (records[0].width, records[0].height)
    checkpoint = load_checkpoint(args.checkpoint)
    net = UNet(checkpoint.config, params=checkpoint.params)
    maps = _probability_maps(net, data, records)
    truths = {r.image_path: list(r.regions) for r in records}
    base = PostprocessConfig(min_component_area=args.min_area)
    best, sweep = calibrate_threshold(maps, truths, dims, base_config=base,
                                      iou_cutoff=args.iou)
    payload = {"best_threshold": best, "split": args.split, "sweep": sweep}
    if args.out:
        _write_json(Path(args.out), payload)
        _write_run_manifest(Path(str(args.out) + ".run.json"), "calibrate",
                            _effective_options(args))
    print(best)
    return 0


def _cmd_predict(args) -> int:
    data = Path(args.data)
    records = _load_split_records(data, args.split)
    checkpoint = load_checkpoint(args.checkpoint)
    net = UNet(checkpoint.config, params=checkpoint.params)
    maps = _probability_maps(net, data, records)
    config = PostprocessConfig(threshold=args.threshold,
                               min_component_area=args.min_area)
    predictions = {image: detect(prob, config)
                   for image, prob in maps.items()}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_predictions(predictions, out)
    _write_run_manifest(Path(str(out) + ".run.json"), "predict",
                        _effective_options(args))
    boxes = sum(len(v) for v in predictions.values())
    print(f"{boxes} detections over {len(predictions)} images -> {out}",
          file=sys.stderr)
    return 0


def _parse_named_path(spec: str, default_name: str) -> tuple[str, str]:
    if "=" in spec:
        name, _, path = spec.partition("=")
        if not name or not path:
            raise CavSearchError(f"expected NAME=PATH, got {spec!r}")
        return name, path
    return default_name, spec


def _cmd_evaluate(args) -> int:
    truth_manifest = load_manifest(args.truth)
    records = truth_manifest.records
    if args.split:
        records = truth_manifest.subset(args.split)
        if not records:
            raise CavSearchError(f"no samples in split {args.split!r}")
    truths = {r.image_path: list(r.regions) for r in records}
    dims = {(r.width, r.height) for r in records}
    if len(dims) > 1:
        raise CavSearchError(f"evaluation set mixes image sizes: {dims}")
    dim = next(iter(dims))
    config = EvalConfig(iou_cutoff=args.iou)

    outcomes: dict[str, dict[str, MatchOutcome]] = {}
    sys_name, sys_path = _parse_named_path(args.pred, "System")
    predictions = load_predictions(sys_path)
    missing = set(truths) - set(predictions)
    if missing:
        raise CavSearchError(
            f"{sys_path}: no predictions for {len(missing)} evaluation "
            f"images (e.g. {sorted(missing)[0]})")
    outcomes[sys_name] = {
        image: match_detections(predictions[image], truths[image], dim,
                                config)
        for image in sorted(truths)}

    for spec in args.reader or []:
        name, path = _parse_named_path(spec, "")
        if not name:
            raise CavSearchError(f"--reader requires NAME=PATH, got {spec!r}")
        reader_manifest = load_manifest(path)
        regions = {r.image_path: list(r.regions)
                   for r in reader_manifest.records
                   if r.image_path in truths}
        missing = set(truths) - set(regions)
        if missing:
            raise CavSearchError(
                f"{path}: reader {name!r} missing {len(missing)} evaluation "
                f"images (e.g. {sorted(missing)[0]})")
        outcomes[name] = {
            image: score_reader_polygons(regions[image], truths[image],
                                         dim, config)
            for image in sorted(truths)}

    report = aggregate_and_report(outcomes)
    table = render_table(report)
    payload = report_to_json(report)
    payload["iou_cutoff"] = args.iou
    payload["table"] = table
    if args.out:
        _write_json(Path(args.out), payload)
        _write_run_manifest(Path(str(args.out) + ".run.json"), "evaluate",
                            _effective_options(args))
    print(table)
    return 0


def _cmd_report(args) -> int:
    doc = json.loads(Path(args.counts).read_text())
    readers = doc.get("readers")
    if not isinstance(readers, list) or not readers:
        raise CavSearchError(
            f"{args.counts}: expected a non-empty 'readers' list")
    counts: dict[str, tuple[int, int, int]] = {}
    for entry in readers:
        name = entry["name"]
        if name in counts:
            raise CavSearchError(f"duplicate reader name {name!r}")
        counts[name] = (int(entry["tp"]), int(entry["fp"]),
                        int(entry["fn"]))
    report = report_from_counts(counts)
    table = render_table(report)
    payload = report_to_json(report)
    payload["table"] = table
    if args.out:
        _write_json(Path(args.out), payload)
        _write_run_manifest(Path(str(args.out) + ".run.json"), "report",
                            _effective_options(args))
    print(table)
    return 0


# -- argument plumbing --------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def _build_parser() -> tuple[argparse.ArgumentParser,
                             dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="cavsearch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers: dict[str, argparse.ArgumentParser] = {}

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file of default option values")
        subparsers[name] = p
        return p

    p = add("synth", "generate a phantom dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--samples", type=int, default=PhantomConfig.sample_count)
    p.add_argument("--width", type=int, default=PhantomConfig.image_width)
    p.add_argument("--height", type=int, default=PhantomConfig.image_height)
    p.add_argument("--lesions-min", type=int,
                   default=PhantomConfig.lesions_min)
    p.add_argument("--lesions-max", type=int,
                   default=PhantomConfig.lesions_max)
    p.add_argument("--radius-min", type=float,
                   default=PhantomConfig.radius_min)
    p.add_argument("--radius-max", type=float,
                   default=PhantomConfig.radius_max)
    p.add_argument("--looseness", type=float, default=PhantomConfig.looseness)
    p.add_argument("--noise-sigma", type=float,
                   default=PhantomConfig.noise_sigma)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = add("split", "assign train/val/test labels in a dataset manifest")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--val-fraction", type=float, default=0.05,
                   help="fraction of the non-test remainder used for "
                        "validation")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_split)

    p = add("train", "train the network on the train split")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--depth", type=int, default=NetworkConfig.depth)
    p.add_argument("--base-channels", type=int,
                   default=NetworkConfig.base_channels)
    p.add_argument("--kernel-size", type=int,
                   default=NetworkConfig.kernel_size)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--learning-rate", type=float,
                   default=TrainConfig.learning_rate)
    p.add_argument("--momentum", type=float, default=TrainConfig.momentum)
    p.add_argument("--positive-class-weight", type=float,
                   default=TrainConfig.positive_class_weight)
    p.add_argument("--early-stop-patience", type=int,
                   default=TrainConfig.early_stop_patience)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = add("calibrate", "sweep detection thresholds on a split")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--min-area", type=int,
                   default=PostprocessConfig.min_component_area)
    p.add_argument("--iou", type=float, default=EvalConfig.iou_cutoff)
    p.add_argument("--out", help="sweep results JSON path")
    p.set_defaults(func=_cmd_calibrate)

    p = add("predict", "write box detections for a split")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--threshold", type=float,
                   default=PostprocessConfig.threshold)
    p.add_argument("--min-area", type=int,
                   default=PostprocessConfig.min_component_area)
    p.add_argument("--out", required=True, help="predictions JSON path")
    p.set_defaults(func=_cmd_predict)

    p = add("evaluate", "score predictions (and readers) against truth")
    p.add_argument("--truth", required=True, help="dataset manifest JSON")
    p.add_argument("--pred", required=True,
                   help="predictions JSON, optionally NAME=PATH")
    p.add_argument("--reader", action="append",
                   help="NAME=PATH of a reader's region manifest "
                        "(repeatable)")
    p.add_argument("--split", help="restrict truth to one split")
    p.add_argument("--iou", type=float, default=EvalConfig.iou_cutoff)
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(func=_cmd_evaluate)

    p = add("report", "render a metrics table from raw counts")
    p.add_argument("--counts", required=True,
                   help='JSON {"readers":[{"name","tp","fp","fn"},...]}')
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(func=_cmd_report)

    return parser, subparsers


def _apply_config_file(parser: argparse.ArgumentParser,
                       subparsers: dict[str, argparse.ArgumentParser],
                       argv: list[str]) -> argparse.Namespace:
    """Two-phase parse: --config supplies defaults, flags override.

    Defaults go onto the subcommand's own parser — subparsers parse
    into a fresh namespace, so top-level defaults would be ignored.
    """
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise CavSearchError(f"{args.config}: not valid JSON: {exc}")
        if not isinstance(doc, dict):
            raise CavSearchError(f"{args.config}: expected a JSON object")
        valid = set(vars(args)) - {"func", "command", "config"}
        unknown = set(doc) - valid
        if unknown:
            raise CavSearchError(
                f"{args.config}: unknown option(s) {sorted(unknown)}")
        subparsers[args.command].set_defaults(**doc)
        args = parser.parse_args(argv)
    return args


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = _build_parser()
    try:
        args = _apply_config_file(parser, subparsers, argv)
        return args.func(args)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return 1 if code == 2 else code
    except CavSearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
