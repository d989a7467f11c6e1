"""Command-line interface.

Subcommands: synth, train, eval, eer, det, params, gradcheck. Exit
codes: 0 success, 1 runtime failure, 2 usage error. Option values win
over --config file entries, which win over built-in defaults; every
run's randomness flows from one seeded generator.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, data, gradcheck, metrics, models, training

DEFAULT_INC_CHANNELS = {3: (8, 16, 32), 4: (8, 16, 32, 32), 5: (8, 16, 32, 64, 64)}

# keys accepted in a --config file; everything else is rejected
_MODEL_KEYS = ("family", "num_blocks", "channels", "branches", "dilations",
               "use_skip", "fc", "stem_channels", "stem_kernel", "input_length")
_TRAIN_KEYS = ("batch_size", "max_epochs", "base_lr", "lr_decay", "mixup_alpha", "seed")


class CliError(Exception):
    pass


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError as exc:
        raise CliError(f"expected comma-separated integers, got {text!r}") from exc


def default_res_channels(blocks: int) -> tuple[int, ...]:
    return tuple(min(32 * 2 ** i, 128) for i in range(blocks))


def load_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    allowed = set(_MODEL_KEYS) | set(_TRAIN_KEYS)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in allowed:
                raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = val.strip()
    return values


def _resolve(args_value, cfg: dict[str, str], key: str, convert, default):
    if args_value is not None:
        return args_value
    if key in cfg:
        return convert(cfg[key])
    return default


def _model_config(args, cfg: dict[str, str]) -> models.ModelConfig:
    family = _resolve(args.family, cfg, "family", str, None)
    if family is None:
        raise CliError("model family is required (--family res|inc)")
    blocks = _resolve(args.m, cfg, "num_blocks", int, None)
    if blocks is None:
        raise CliError("block count is required (--m)")

    channels = _resolve(args.channels and _ints(args.channels), cfg, "channels", _ints, None)
    if channels is None:
        if family == "res":
            channels = default_res_channels(blocks)
        elif blocks in DEFAULT_INC_CHANNELS:
            channels = DEFAULT_INC_CHANNELS[blocks]
        else:
            raise CliError(f"no default channel list for inc with {blocks} blocks; pass --channels")

    no_skip = args.no_skip if args.no_skip else None
    use_skip = not no_skip if no_skip is not None else _resolve(
        None, cfg, "use_skip", lambda s: s.lower() == "true", True)

    kwargs: dict = {
        "family": family,
        "num_blocks": blocks,
        "channels": channels,
        "use_skip": use_skip,
        "fc": _resolve(args.fc and _ints(args.fc), cfg, "fc", _ints, (64, 32)),
        "stem_channels": _resolve(args.stem_channels, cfg, "stem_channels", int, 16),
        "stem_kernel": _resolve(args.stem_kernel, cfg, "stem_kernel", int, 7),
        "input_length": _resolve(args.input_length, cfg, "input_length", int, 96000),
    }
    if family == "inc":
        branches = _resolve(args.branches, cfg, "branches", int, 4)
        kwargs["branches"] = branches
        dil = _resolve(args.dilations and _ints(args.dilations), cfg, "dilations", _ints, None)
        if dil is not None:
            kwargs["dilations"] = dil
    return models.ModelConfig(**kwargs)


def _add_model_options(parser: argparse.ArgumentParser):
    parser.add_argument("--family", choices=("res", "inc"), help="model family")
    parser.add_argument("--m", "--blocks", dest="m", type=int, help="number of stacked blocks")
    parser.add_argument("--channels", help="comma-separated per-block channel counts")
    parser.add_argument("--branches", type=int, help="parallel branches per inc block (default 4)")
    parser.add_argument("--dilations",
                        help="comma-separated branch dilations (default 1,2,4,... per branch)")
    parser.add_argument("--no-skip", action="store_const", const=True,
                        help="drop the 1x1 skip path in res blocks")
    parser.add_argument("--fc", help="two comma-separated hidden widths (default 64,32)")
    parser.add_argument("--stem-channels", type=int, help="stem conv channels (default 16)")
    parser.add_argument("--stem-kernel", type=int, help="stem conv kernel size (default 7)")
    parser.add_argument("--input-length", type=int, help="input samples per example (default 96000)")
    parser.add_argument("--config", help="key = value file; flags override its entries")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tssdnet",
        description="Raw-waveform synthetic speech detection: train, score, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--n", type=int, required=True, help="examples per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train a model, keeping the best-dev-EER epoch")
    _add_model_options(p)
    p.add_argument("--train-protocol", required=True)
    p.add_argument("--train-audio", required=True)
    p.add_argument("--dev-protocol", required=True)
    p.add_argument("--dev-audio", required=True)
    p.add_argument("--checkpoint", required=True, help="where to write the best model (.tssd)")
    p.add_argument("--log", help="epoch log file")
    p.add_argument("--epochs", type=int, help="training epochs (default 100)")
    p.add_argument("--batch-size", type=int, help="default 32")
    p.add_argument("--lr", type=float, help="base Adam learning rate (default 1e-3)")
    p.add_argument("--lr-decay", type=float, help="per-epoch LR factor (default 0.95)")
    p.add_argument("--mixup-alpha", type=float,
                   help="enable mixup training with this Beta concentration")
    p.add_argument("--seed", type=int, help="default 0")
    p.add_argument("--save-optimizer", action="store_true",
                   help="include final Adam state in the checkpoint")

    p = sub.add_parser("eval", help="score a protocol's audio with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--scores", required=True, help="output score file")
    p.add_argument("--batch-size", type=int, default=32)

    p = sub.add_parser("eer", help="equal error rate of a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--protocol", required=True, help="protocol file supplying labels")

    p = sub.add_parser("det", help="DET operating points (and figure) of a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--out", help="write threshold/FAR/FRR rows here (default stdout)")
    p.add_argument("--figure", help="render the DET curve to this image file")
    p.add_argument("--no-figure", action="store_true",
                   help="skip the figure that --out would render alongside the rows")

    p = sub.add_parser("params", help="parameter count for a model configuration")
    _add_model_options(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer kind")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--tolerance", type=float, default=gradcheck.TOLERANCE)

    return parser


def cmd_synth(args) -> int:
    protocol = data.synth_dataset(args.n, args.seed, args.out)
    entries = data.parse_protocol(protocol)
    print(f"wrote {len(entries)} files under {args.out} (protocol: {protocol})")
    return 0


def cmd_train(args) -> int:
    cfg_file = load_config_file(args.config) if args.config else {}
    model_config = _model_config(args, cfg_file)
    train_config = training.TrainConfig(
        batch_size=_resolve(args.batch_size, cfg_file, "batch_size", int, 32),
        max_epochs=_resolve(args.epochs, cfg_file, "max_epochs", int, 100),
        base_lr=_resolve(args.lr, cfg_file, "base_lr", float, 1e-3),
        lr_decay=_resolve(args.lr_decay, cfg_file, "lr_decay", float, 0.95),
        mixup_alpha=_resolve(args.mixup_alpha, cfg_file, "mixup_alpha", float, None),
        seed=_resolve(args.seed, cfg_file, "seed", int, 0),
        log_path=args.log,
    )

    rng = np.random.default_rng(train_config.seed)
    model = models.build_model(model_config, rng)

    train_utts = data.load_utterances(data.parse_protocol(args.train_protocol),
                                      args.train_audio, model_config.input_length)
    dev_utts = data.load_utterances(data.parse_protocol(args.dev_protocol),
                                    args.dev_audio, model_config.input_length)

    mode = (f"mixup alpha={train_config.mixup_alpha!r}"
            if train_config.mixup_alpha is not None else "wce")
    print(f"training family={model_config.family} blocks={model_config.num_blocks} "
          f"params={models.count_parameters(model)} loss={mode} seed={train_config.seed}")

    result = training.fit(model, train_utts, dev_utts, train_config, rng)
    model.load_state_dict(result.best_state)
    checkpoint.save_checkpoint(model, args.checkpoint,
                               result.optimizer_state if args.save_optimizer else None)
    print(f"best epoch={result.best_epoch} dev_eer={result.best_dev_eer!r} "
          f"checkpoint={args.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    model, _ = checkpoint.load_checkpoint(args.checkpoint)
    entries = data.parse_protocol(args.protocol, require_key=False)
    utts = data.load_utterances(entries, args.audio, model.config.input_length)
    scores = training.score_utterances(model, utts, args.batch_size)
    metrics.write_scores(scores, args.scores)
    print(f"wrote {len(scores.entries)} scores to {args.scores}")
    if scores.has_labels():
        eer, threshold = metrics.compute_eer(scores)
        print(f"EER = {100 * eer:.2f}% (threshold {threshold:.6g})")
    else:
        print("protocol has no keys; EER suppressed")
    return 0


def cmd_eer(args) -> int:
    entries = data.parse_protocol(args.protocol, require_key=False)
    scores = metrics.read_scores(args.scores, entries)
    eer, threshold = metrics.compute_eer(scores)
    print(f"EER = {100 * eer:.2f}% (threshold {threshold:.6g})")
    return 0


def cmd_det(args) -> int:
    entries = data.parse_protocol(args.protocol, require_key=False)
    scores = metrics.read_scores(args.scores, entries)
    points = metrics.det_points(scores)
    eer, _ = metrics.compute_eer(scores)
    if args.out:
        metrics.write_det_points(points, args.out)
        print(f"wrote {len(points)} DET points to {args.out}")
    else:
        for t, fa, fr in points:
            print(f"{t:.17g} {fa:.17g} {fr:.17g}")

    figure = args.figure
    if figure is None and args.out and not args.no_figure:
        figure = str(Path(args.out).with_suffix(".png"))
    if figure and not args.no_figure:
        from . import plotting

        plotting.save_det_figure(points, figure, eer=eer)
        print(f"wrote DET figure to {figure}")
    return 0


def cmd_params(args) -> int:
    cfg_file = load_config_file(args.config) if args.config else {}
    config = _model_config(args, cfg_file)
    model = models.build_model(config, np.random.default_rng(0))
    print(models.count_parameters(model))
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all_checks(seed=args.seed)
    failed = False
    for r in results:
        status = "PASS" if r.max_rel_err < args.tolerance else "FAIL"
        if status == "FAIL":
            failed = True
        print(f"{r.name:24s} max_rel_err={r.max_rel_err:.3e} {status}")
    print("gradient check: " + ("FAILED" if failed else "all passed"))
    return 1 if failed else 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "eer": cmd_eer,
    "det": cmd_det,
    "params": cmd_params,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth" and args.n < 1:
        parser.error("--n must be at least 1")
    try:
        return _COMMANDS[args.command](args)
    except (data.AudioError, data.ProtocolError, metrics.ScoreError,
            checkpoint.CheckpointError, training.TrainingError, CliError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
