"""Command-line entry point.

One binary, eight subcommands, shared seeding and config loading. Every
command is deterministic under a fixed ``--seed``; reports carry no paths
or timestamps so identical runs produce identical bytes.

Exit codes: 0 success, 2 input error, 3 dataset mismatch, 4 numerical
failure.

The optional ``--config`` file is JSON with up to six sections, each an
object of keyword arguments for the matching constructor:

    {
      "synth":    {"width": 64, "n_frames": 40, ...},
      "tracker":  {"d_model": 32, "heads": 2, ...},
      "train":    {"epochs": 10, "base_lr": 1e-3, ...},
      "pretrain": {"epochs": 15, "base_lr": 1e-3, "stride": 8},
      "loss":     {"lambda1": 0.5, "lambda2": 0.3},
      "eval":     {"lo": 20, "hi": 40}
    }

Unknown sections or keys are rejected before any work happens. Seeds come
from ``--seed`` only, never the config file. Commands read the sections
they use and ignore the rest, so one config can drive a whole pipeline.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Sequence,
    SynthConfig,
    load_dataset,
    load_sequence,
    parse_predictions,
    parse_vot_groundtruth,
    save_sequence,
    serialize_groundtruth,
    serialize_predictions,
    synth_sequence,
)
from .errors import (
    ConfigError,
    DatasetMismatch,
    EmptySequence,
    InvalidInterval,
    MissingAnnotation,
    NotARectangle,
    NoValidFrames,
    ParseError,
    ToolkitError,
)
from .evaluation import ReplayTracker, eao_curve, evaluate
from .geometry import FiveBB, corners_to_five, five_to_corners
from .loss import LossWeights, circular_loss, circular_loss_grad
from .plots import plot_eao_curve, plot_train_history
from .tracker import (
    ProtocolTracker,
    TrackerConfig,
    TrackerSession,
    TrainConfig,
    clone_params,
    gradient_check,
    init_params,
    pretrain_reinit,
    train,
)

_INPUT_ERRORS = (ParseError, ConfigError, NotARectangle, InvalidInterval)
_DATASET_ERRORS = (DatasetMismatch, MissingAnnotation, EmptySequence, NoValidFrames)


# ---------------------------------------------------------------------------
# Config loading


def _check_keys(section: str, raw: dict, allowed: set[str]) -> None:
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown {section} config keys: {sorted(unknown)}")


def _synth_config(raw: dict) -> SynthConfig:
    section = dict(raw.get("synth", {}))
    for key, val in section.items():
        if isinstance(val, list):
            section[key] = tuple(val)
    try:
        return SynthConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"bad synth config: {exc}") from exc


def _tracker_config(raw: dict) -> TrackerConfig:
    return TrackerConfig.from_dict(raw.get("tracker", {}))


def _train_config(raw: dict, seed: int) -> TrainConfig:
    section = dict(raw.get("train", {}))
    if "seed" in section:
        raise ConfigError("the training seed comes from --seed, not the config file")
    try:
        return TrainConfig(seed=seed, **section)
    except TypeError as exc:
        raise ConfigError(f"bad train config: {exc}") from exc


def _load_config(path: Path | None) -> dict:
    """Parse and fully validate a run config; empty dict when no file given."""
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys("run", raw, {"synth", "tracker", "train", "pretrain", "loss", "eval"})
    for key, val in raw.items():
        if not isinstance(val, dict):
            raise ConfigError(f"config section {key!r} must be an object")
    # every present section is validated up front, used or not
    _synth_config(raw)
    _tracker_config(raw)
    _train_config(raw, seed=0)
    _check_keys("pretrain", raw.get("pretrain", {}), {"epochs", "base_lr", "decay", "stride"})
    _check_keys("loss", raw.get("loss", {}), {"lambda1", "lambda2"})
    _check_keys("eval", raw.get("eval", {}), {"lo", "hi"})
    return raw


def _pick(flag, section: dict, key: str, default):
    """Explicit flag beats config section beats built-in default."""
    if flag is not None:
        return flag
    if key in section:
        return section[key]
    return default


# ---------------------------------------------------------------------------
# Shared I/O helpers


def _read_boxes_any(path: Path) -> list[FiveBB]:
    """Accept either five-parameter lines or axis-aligned/corner lines."""
    text = Path(path).read_text()
    first = next((line for line in text.splitlines() if line.strip()), "")
    if len(first.split(",")) == 5:
        return parse_predictions(text)
    return [corners_to_five(b) for b in parse_vot_groundtruth(text)]


def _load_model(path: Path) -> tuple[TrackerConfig, dict[str, np.ndarray]]:
    raw_cfg, params = load_checkpoint(path)
    return TrackerConfig.from_dict(raw_cfg), params


def _rollout(cfg: TrackerConfig, params: dict, seq: Sequence) -> list[FiveBB]:
    """Straight self-conditioned pass; line 0 is the initialization box."""
    if seq.frames is None:
        raise DatasetMismatch(f"{seq.sequence_id!r} has annotations but no frames")
    session = TrackerSession(cfg, clone_params(params))
    session.initialize(seq.frames[0], seq.groundtruth[0])
    fives = [corners_to_five(seq.groundtruth[0])]
    for frame in seq.frames[1:]:
        fives.append(session.step(frame))
    return fives


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands


def cmd_convert(args) -> int:
    text = Path(args.input).read_text()
    if args.direction == "to-five":
        fives = [corners_to_five(b) for b in parse_vot_groundtruth(text)]
        Path(args.output).write_text(serialize_predictions(fives))
    else:
        corners = [five_to_corners(f) for f in parse_predictions(text)]
        Path(args.output).write_text(serialize_groundtruth(corners))
    return 0


def cmd_loss(args) -> int:
    cfg = _load_config(args.config)
    section = cfg.get("loss", {})
    weights = LossWeights(
        lambda1=float(_pick(args.lambda1, section, "lambda1", LossWeights().lambda1)),
        lambda2=float(_pick(args.lambda2, section, "lambda2", LossWeights().lambda2)),
    )
    preds = _read_boxes_any(args.pred)
    gts = _read_boxes_any(args.gt)
    if len(preds) != len(gts):
        raise DatasetMismatch(f"{len(preds)} predictions vs {len(gts)} ground-truth lines")
    if not preds:
        raise EmptySequence("no boxes to score")

    header = "index,area,angle,arc,total"
    if args.grad:
        header += ",d_x1,d_y1,d_x2,d_y2,d_beta,boundary"
    lines = [header]
    sums = np.zeros(4)
    for i, (p, g) in enumerate(zip(preds, gts)):
        b = circular_loss(p, g, weights)
        sums += (b.area, b.angle, b.arc, b.total)
        row = f"{i},{b.area:.9g},{b.angle:.9g},{b.arc:.9g},{b.total:.9g}"
        if args.grad:
            d = circular_loss_grad(p, g, weights)
            row += (
                f",{d.d_x1:.9g},{d.d_y1:.9g},{d.d_x2:.9g},{d.d_y2:.9g},"
                f"{d.d_beta:.9g},{int(d.boundary_warning)}"
            )
        lines.append(row)
    means = sums / len(preds)

    out = _out_dir(args)
    (out / "loss.csv").write_text("\n".join(lines) + "\n")
    summary = {
        "n": len(preds),
        "lambda1": weights.lambda1,
        "lambda2": weights.lambda2,
        "mean": {
            "area": means[0],
            "angle": means[1],
            "arc": means[2],
            "total": means[3],
        },
    }
    (out / "loss_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"scored {len(preds)} boxes: mean total {means[3]:.6f}")
    return 0


def cmd_synth(args) -> int:
    cfg = _synth_config(_load_config(args.config))
    out = _out_dir(args)
    for i in range(args.n_sequences):
        seq = synth_sequence(cfg, seed=args.seed + i)
        save_sequence(seq, out)
        print(f"wrote {seq.sequence_id} ({len(seq)} frames)")
    return 0


def cmd_train(args) -> int:
    raw = _load_config(args.config)
    tcfg = _train_config(raw, seed=args.seed)
    if args.epochs is not None:
        tcfg = TrainConfig(
            epochs=args.epochs, base_lr=tcfg.base_lr, decay=tcfg.decay,
            batch_frames=tcfg.batch_frames, teacher_forcing=tcfg.teacher_forcing,
            push_noise=tcfg.push_noise, seed=tcfg.seed,
        )
    if args.checkpoint is not None:
        cfg, params = _load_model(args.checkpoint)
        if raw.get("tracker") and _tracker_config(raw) != cfg:
            raise ConfigError("--config tracker section conflicts with the checkpoint")
    else:
        cfg = _tracker_config(raw)
        params = init_params(cfg, np.random.default_rng(args.seed))

    dataset = load_dataset(args.dataset)
    params, history = train(params, dataset, cfg, tcfg)

    out = _out_dir(args)
    save_checkpoint(out / "checkpoint.bin", cfg.to_dict(), params)
    (out / "train_history.csv").write_text(history.to_csv())
    plot_train_history(history.rows, out / "train_history.png")

    by_epoch: dict[int, list[float]] = {}
    for r in history.rows:
        by_epoch.setdefault(r.epoch, []).append(r.total)
    first, last = min(by_epoch), max(by_epoch)
    mean = lambda xs: sum(xs) / len(xs)  # noqa: E731
    print(
        f"trained on {len(dataset)} sequences for {tcfg.epochs} epochs: "
        f"mean total {mean(by_epoch[first]):.6f} -> {mean(by_epoch[last]):.6f}"
    )
    return 0


def cmd_pretrain(args) -> int:
    raw = _load_config(args.config)
    section = raw.get("pretrain", {})
    epochs = int(_pick(args.epochs, section, "epochs", 15))
    stride = int(_pick(args.stride, section, "stride", 8))
    if stride < 1:
        raise ConfigError(f"stride must be positive, got {stride}")
    base_lr = float(section.get("base_lr", 1e-3))
    decay = float(section.get("decay", 0.94))

    if args.checkpoint is not None:
        cfg, params = _load_model(args.checkpoint)
        if raw.get("tracker") and _tracker_config(raw) != cfg:
            raise ConfigError("--config tracker section conflicts with the checkpoint")
    else:
        cfg = _tracker_config(raw)
        params = init_params(cfg, np.random.default_rng(args.seed))

    dataset = load_dataset(args.dataset)
    samples = [
        (seq.frames[i], seq.groundtruth[i])
        for seq in dataset
        for i in range(0, len(seq), stride)
    ]
    losses = pretrain_reinit(params, samples, cfg, epochs=epochs, base_lr=base_lr, decay=decay)

    out = _out_dir(args)
    save_checkpoint(out / "checkpoint.bin", cfg.to_dict(), params)
    rows = "\n".join(f"{i},{v:.9g}" for i, v in enumerate(losses))
    (out / "pretrain_losses.csv").write_text("update,loss\n" + rows + "\n")
    print(
        f"pretrained on {len(samples)} samples for {epochs} epochs: "
        f"loss {losses[0]:.6f} -> {losses[-1]:.6f}"
    )
    return 0


def cmd_track(args) -> int:
    cfg, params = _load_model(args.checkpoint)
    if args.sequence:
        sequences = [load_sequence(Path(args.dataset) / sid) for sid in args.sequence]
    else:
        sequences = load_dataset(args.dataset)
    pred_dir = _out_dir(args) / "predictions"
    pred_dir.mkdir(exist_ok=True)
    for seq in sequences:
        fives = _rollout(cfg, params, seq)
        (pred_dir / f"{seq.sequence_id}.txt").write_text(serialize_predictions(fives))
        print(f"tracked {seq.sequence_id} ({len(fives)} frames)")
    return 0


def cmd_eval(args) -> int:
    raw = _load_config(args.config)
    section = raw.get("eval", {})
    lo = _pick(args.lo, section, "lo", None)
    hi = _pick(args.hi, section, "hi", None)

    if args.predictions is not None:
        sequences = load_dataset(args.dataset, with_frames=False)
        replays = {}
        for seq in sequences:
            path = Path(args.predictions) / f"{seq.sequence_id}.txt"
            if not path.exists():
                raise DatasetMismatch(f"no predictions for sequence {seq.sequence_id!r}")
            boxes = parse_predictions(path.read_text())
            if len(boxes) != len(seq):
                raise DatasetMismatch(
                    f"{seq.sequence_id!r}: {len(boxes)} predictions vs {len(seq)} frames"
                )
            replays[seq.sequence_id] = boxes
        factory = lambda seq: ReplayTracker(replays[seq.sequence_id])  # noqa: E731
    else:
        cfg, params = _load_model(args.tracker)
        sequences = load_dataset(args.dataset)
        factory = lambda seq: ProtocolTracker(cfg, clone_params(params))  # noqa: E731

    report, traces = evaluate(sequences, factory, lo=lo, hi=hi)
    out = _out_dir(args)
    (out / "report.json").write_text(report.to_json())
    curve = eao_curve(traces, *report.interval)
    curve_lines = ["n,phi"] + [f"{n},{v:.9f}" for n, v in curve]
    (out / "eao_curve.csv").write_text("\n".join(curve_lines) + "\n")
    plot_eao_curve(curve, out / "eao_curve.png", eao=report.eao)
    print(
        f"accuracy {report.accuracy:.4f}  robustness {report.robustness:.4f}  "
        f"eao {report.eao:.4f}  interval {report.interval[0]}..{report.interval[1]}"
    )
    return 0


def cmd_gradcheck(args) -> int:
    raw = _load_config(args.config)
    if "tracker" in raw:
        cfg = _tracker_config(raw)
    else:
        # small desk model keeps the finite-difference sweep under a minute
        cfg = TrackerConfig(d_model=16, heads=2, n_history=2, input_size=32, patch_grid=4)
    params = init_params(cfg, np.random.default_rng(args.seed))
    seq = synth_sequence(SynthConfig(n_frames=2), seed=args.seed)
    report = gradient_check(
        params, cfg, seq.frames[0], seq.groundtruth[0], seq.frames[1], seq.groundtruth[1]
    )
    verdict = "PASS" if report.passed else "FAIL"
    print(
        f"{verdict} max relative error {report.max_rel_err:.3e} "
        f"(worst {report.worst_param}, {report.n_checked} parameters, tol {report.tol:g})"
    )
    return 0 if report.passed else 4


# ---------------------------------------------------------------------------
# Parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    p.add_argument("--config", type=Path, default=None, help="JSON run config")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arctrack",
        description="Rotated-box tracking toolkit: conversion, loss reports, "
        "synthetic data, training, and reset-protocol evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="corner <-> five-parameter box file conversion")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--direction", choices=("to-five", "to-corners"), required=True)
    _add_common(p)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("loss", help="per-line loss breakdown between two box files")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--grad", action="store_true", help="append analytic gradient columns")
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("synth", help="generate synthetic sequences")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--n-sequences", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit tracker weights on a dataset directory")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--checkpoint", type=Path, default=None, help="warm start from this model")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pretrain", help="fit weights on single-frame reinitializations")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--stride", type=int, default=None, help="sample every k-th frame")
    p.add_argument("--checkpoint", type=Path, default=None, help="warm start from this model")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("track", help="run a trained tracker, write prediction files")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--sequence", action="append", default=None, help="restrict to this id")
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="reset-protocol evaluation of predictions or a model")
    p.add_argument("--dataset", type=Path, required=True)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--predictions", type=Path, help="directory of <id>.txt files")
    source.add_argument("--tracker", type=Path, help="checkpoint to run live with resets")
    p.add_argument("--lo", type=int, default=None, help="averaging interval lower bound")
    p.add_argument("--hi", type=int, default=None, help="averaging interval upper bound")
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference model gradients")
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _DATASET_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
