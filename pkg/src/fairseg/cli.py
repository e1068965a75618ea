"""Command-line entry point: synth, train, eval, report, weights.

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .core import ATTRIBUTE_GROUPS, GroupPartition, SoftPrediction
from .dataio import DataFormatError, atomic_write, load_dataset, read_pred, write_dataset
from .loss import DiceLossConfig, GroupWeights
from .metrics import EVAL_REGIONS, SampleScore, format_table, reports_to_csv
from .report import compare, comparison_csv, comparison_table
from .synth import SynthConfig, generate
from .trainer import MODES, NumericalError, PixelClassifier, TrainConfig, evaluate_masks, train

log = logging.getLogger("fairseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MODEL_FILE = "model.npy"
LOG_FILE = "train_log.csv"
WEIGHTS_FILE = "weights.csv"
MANIFEST_FILE = "manifest.json"
SCORES_FILE = "scores.csv"
LOCK_FILE = ".fairseg.lock"
# manifest fields that legitimately differ between identical reruns
VOLATILE_FIELDS = ("wall_clock_seconds",)

_DEFAULT_DICE = DiceLossConfig()
_DEFAULT_TRAIN = TrainConfig()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@contextlib.contextmanager
def _locked(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_FILE
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"{out_dir} is in use by another fairseg process (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)


def _write_manifest(out_dir: Path, command: str, config: dict, seed, inputs: dict, outputs: list[str], started: float):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "inputs": inputs,
        "outputs": sorted(outputs),
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
    }
    atomic_write(out_dir / MANIFEST_FILE, json.dumps(manifest, indent=2, sort_keys=True, default=list) + "\n")


def _csv(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# --- synth ------------------------------------------------------------------------


def _parse_value(text: str):
    parts = [p.strip() for p in text.split(",")]
    values = []
    for p in parts:
        try:
            values.append(int(p))
        except ValueError:
            try:
                values.append(float(p))
            except ValueError:
                raise UsageError(f"cannot parse override value {text!r}") from None
    return values[0] if len(values) == 1 else tuple(values)


def apply_overrides(cfg_kwargs: dict, overrides: Sequence[str]) -> dict:
    """Apply ``key=value`` overrides; dotted keys reach into dict fields (``contrast.black=0.8``)."""
    names = {f.name for f in fields(SynthConfig)}
    defaults = SynthConfig(n_samples=0).to_dict()
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        path = key.strip().split(".")
        if path[0] not in names:
            raise UsageError(f"unknown config key {path[0]!r}; known: {', '.join(sorted(names))}")
        value = _parse_value(text)
        if len(path) == 1:
            cfg_kwargs[path[0]] = value
            continue
        target = cfg_kwargs.setdefault(path[0], json.loads(json.dumps(defaults[path[0]])))
        for part in path[1:-1]:
            if not isinstance(target, dict) or part not in target:
                raise UsageError(f"unknown config key {key!r}")
            target = target[part]
        if not isinstance(target, dict) or path[-1] not in target:
            raise UsageError(f"unknown config key {key!r}")
        target[path[-1]] = value
    return cfg_kwargs


def cmd_synth(args) -> int:
    started = time.perf_counter()
    kwargs = apply_overrides({"n_samples": args.n, "seed": args.seed}, args.config_overrides)
    try:
        cfg = SynthConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid synth configuration: {exc}") from None
    out = Path(args.out)
    with _locked(out):
        images, masks, records = generate(cfg)
        write_dataset(out, images, masks, records, visual=args.visual)
        _write_manifest(
            out, "synth", cfg.to_dict(), cfg.seed, {}, ["attributes.csv", "images/", "masks/"], started
        )
    n_train = sum(r.split == "train" for r in records)
    log.info("wrote %d samples (%d train, %d test) to %s", len(records), n_train, len(records) - n_train, out)
    return EXIT_OK


# --- train ------------------------------------------------------------------------


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(
            mode=args.mode,
            attribute=args.attribute,
            seed=args.seed,
            epochs=args.epochs,
            batch_size=args.batch_size,
            learning_rate=args.lr,
            lr_decay=args.lr_decay,
            lambda_ce=args.lambda_ce,
            lambda_dice=args.lambda_dice,
            gamma=args.gamma,
            momentum=args.momentum,
            eta=args.eta,
            epsilon=args.epsilon,
            class_weights=tuple(args.class_weights),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _fmt(v: float) -> str:
    return repr(float(v))


def cmd_train(args) -> int:
    started = time.perf_counter()
    cfg = _train_config(args)
    images, masks, records = load_dataset(args.data, required=(cfg.attribute,))
    out = Path(args.out)
    with _locked(out):
        model, train_log = train(images, masks, records, cfg)
        buf = io.BytesIO()
        np.save(buf, model.theta, allow_pickle=False)
        atomic_write(out / MODEL_FILE, buf.getvalue())
        rows = [
            (epoch, group, _fmt(loss), "" if w is None else _fmt(w))
            for epoch, group, loss, w in train_log.rows()
        ]
        atomic_write(out / LOG_FILE, _csv(rows, ["epoch", "group", "mean_loss", "W_or_q"]))
        outputs = [MODEL_FILE, LOG_FILE]
        state = train_log.final_state
        if state is not None:
            weights = state.weights if isinstance(state, GroupWeights) else state.q
            wrows = [
                (g, "" if np.isnan(loss) else _fmt(loss), _fmt(w))
                for g, loss, w in zip(state.groups, state.running_loss, weights)
            ]
            atomic_write(out / WEIGHTS_FILE, _csv(wrows, ["group", "running_loss", "weight"]))
            outputs.append(WEIGHTS_FILE)
        _write_manifest(
            out, "train", cfg.to_dict(), cfg.seed, {"data": str(args.data)}, outputs, started
        )
    log.info("trained %s model (%d epochs) -> %s", cfg.mode, cfg.epochs, out)
    return EXIT_OK


def load_model(path) -> PixelClassifier:
    path = Path(path)
    if path.is_dir():
        path = path / MODEL_FILE
    try:
        theta = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"cannot read model {path}: {exc}", field="model") from None
    return PixelClassifier(theta)


# --- eval -------------------------------------------------------------------------


def cmd_eval(args) -> int:
    started = time.perf_counter()
    if (args.model is None) == (args.pred_dir is None):
        raise UsageError("give exactly one of --model or --pred-dir")
    regions = tuple(r.strip() for r in args.regions.split(",") if r.strip())
    bad = [r for r in regions if r not in EVAL_REGIONS]
    if not regions or bad:
        raise UsageError(f"--regions must be drawn from {','.join(EVAL_REGIONS)}")
    if args.attribute not in ATTRIBUTE_GROUPS:
        raise UsageError(f"unknown attribute {args.attribute!r}")

    images, masks, records = load_dataset(args.data, required=(args.attribute,))
    test = [i for i, r in enumerate(records) if r.split == "test"]
    if not test:
        raise DataFormatError("dataset has no test samples", field="split")
    test_records = [records[i] for i in test]
    if args.model is not None:
        preds = load_model(args.model).predict_masks([images[i] for i in test])
        source = {"model": str(args.model)}
    else:
        pred_dir = Path(args.pred_dir)
        preds = []
        for r in test_records:
            path = pred_dir / f"{r.id}.pred"
            if not path.exists():
                raise DataFormatError(f"missing prediction file {path}", field=r.id)
            preds.append(SoftPrediction(read_pred(path)).argmax())
        source = {"pred_dir": str(args.pred_dir)}

    reports, scores = evaluate_masks(preds, [masks[i] for i in test], test_records, args.attribute, regions)
    partition = GroupPartition.from_records(test_records, args.attribute)
    out = Path(args.out)
    with _locked(out):
        ordered = [reports[r] for r in regions]
        atomic_write(out / "report.csv", reports_to_csv(ordered))
        atomic_write(out / "report.txt", format_table(ordered, label=args.label or out.name))
        rows = [
            (s.id, partition.groups[partition.group_of(s.id)], region, _fmt(s.dice), _fmt(s.iou))
            for region in regions
            for s in scores[region]
        ]
        atomic_write(out / SCORES_FILE, _csv(rows, ["id", "group", "region", "dice", "iou"]))
        _write_manifest(
            out,
            "eval",
            {"attribute": args.attribute, "regions": list(regions), "label": args.label},
            None,
            {"data": str(args.data), **source},
            ["report.csv", "report.txt", SCORES_FILE],
            started,
        )
    sys.stdout.write(format_table(ordered, label=args.label or out.name))
    return EXIT_OK


# --- report -----------------------------------------------------------------------


def _read_eval_dir(path: Path):
    manifest = json.loads((path / MANIFEST_FILE).read_text())
    attribute = manifest["config"]["attribute"]
    per_region: dict[str, list[SampleScore]] = {}
    members: dict[str, str] = {}
    with open(path / SCORES_FILE, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            per_region.setdefault(row["region"], []).append(
                SampleScore(row["id"], row["region"], float(row["dice"]), float(row["iou"]))
            )
            members[row["id"]] = row["group"]
    label = manifest["config"].get("label") or path.name
    return label, attribute, per_region, members


def cmd_report(args) -> int:
    started = time.perf_counter()
    runs, attribute, members = [], None, {}
    for d in args.eval_dirs:
        label, attr, per_region, mem = _read_eval_dir(Path(d))
        if attribute is not None and attr != attribute:
            raise DataFormatError(f"eval dirs mix attributes {attribute!r} and {attr!r}", field="attribute")
        attribute = attr
        members.update(mem)
        runs.append((label, per_region))
    groups = ATTRIBUTE_GROUPS[attribute]
    partition = GroupPartition(attribute, groups, {sid: groups.index(g) for sid, g in members.items()})
    rows = compare(runs, partition, n_boot=args.bootstrap, seed=args.seed)
    text = comparison_table(rows)
    out = Path(args.out)
    with _locked(out):
        atomic_write(out / "comparison.csv", comparison_csv(rows))
        atomic_write(out / "comparison.txt", text)
        _write_manifest(
            out,
            "report",
            {"bootstrap": args.bootstrap},
            args.seed,
            {"eval_dirs": [str(d) for d in args.eval_dirs]},
            ["comparison.csv", "comparison.txt"],
            started,
        )
    sys.stdout.write(text)
    return EXIT_OK


# --- weights ----------------------------------------------------------------------


def cmd_weights(args) -> int:
    path = Path(args.run) / WEIGHTS_FILE
    if not path.exists():
        raise DataFormatError(f"{args.run} has no group weights (ERM runs keep none)", field="weights")
    sys.stdout.write(path.read_text(encoding="utf-8"))
    return EXIT_OK


# --- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="fairseg", description=__doc__.split("\n")[0], formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic disc/cup dataset", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n", type=int, default=1000, help="number of subjects")
    p.add_argument("--seed", type=int, default=42, help="generator seed")
    p.add_argument(
        "--config-overrides",
        nargs="*",
        default=[],
        metavar="KEY=VALUE",
        help="generator settings, e.g. noise_sd=0.05 contrast.black=0.8 cdr.black=0.6,0.05",
    )
    p.add_argument("--visual", action="store_true", help="also write masks scaled for viewing")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the reference pixel classifier", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--mode", choices=MODES, default="erm")
    p.add_argument("--attribute", choices=tuple(ATTRIBUTE_GROUPS), default="race")
    p.add_argument("--seed", type=int, required=True, help="shuffling seed")
    p.add_argument("--epochs", type=int, default=_DEFAULT_TRAIN.epochs)
    p.add_argument("--batch-size", type=int, default=_DEFAULT_TRAIN.batch_size)
    p.add_argument("--lr", type=float, default=_DEFAULT_TRAIN.learning_rate, help="initial learning rate")
    p.add_argument("--lr-decay", type=float, default=_DEFAULT_TRAIN.lr_decay, help="per-epoch decay factor")
    p.add_argument("--lambda-ce", type=float, default=_DEFAULT_TRAIN.lambda_ce, help="cross-entropy weight")
    p.add_argument("--lambda-dice", type=float, default=_DEFAULT_TRAIN.lambda_dice, help="Dice loss weight")
    p.add_argument("--gamma", type=float, default=_DEFAULT_TRAIN.gamma, help="FEBS exponent")
    p.add_argument("--momentum", type=float, default=_DEFAULT_TRAIN.momentum, help="EMA momentum of group losses")
    p.add_argument("--eta", type=float, default=_DEFAULT_TRAIN.eta, help="GroupDRO step size")
    p.add_argument("--epsilon", type=float, default=_DEFAULT_DICE.epsilon, help="Dice smoothing constant")
    p.add_argument(
        "--class-weights", type=float, nargs=3, default=list(_DEFAULT_DICE.class_weights),
        metavar=("BG", "RIM", "CUP"), help="per-class Dice weights",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model or prediction files on the test split", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="evaluation output directory")
    p.add_argument("--model", help="run directory or model.npy")
    p.add_argument("--pred-dir", help="directory of <id>.pred soft predictions")
    p.add_argument("--attribute", default="race", help=f"one of {', '.join(ATTRIBUTE_GROUPS)}")
    p.add_argument("--regions", default="cup,rim", help="comma-separated subset of cup,rim")
    p.add_argument("--label", default=None, help="method name in tables; the output directory name if omitted")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="compare evaluation runs", formatter_class=fmt)
    p.add_argument("--eval-dirs", nargs="+", required=True, help="directories written by eval")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap replicates (0 disables intervals)")
    p.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("weights", help="print the final group weights of a training run", formatter_class=fmt)
    p.add_argument("--run", required=True, help="run directory")
    p.set_defaults(func=cmd_weights)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            raise
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fairseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"fairseg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataFormatError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"fairseg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
