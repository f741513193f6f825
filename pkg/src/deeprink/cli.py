"""Batch command-line interface.

Subcommands mirror the stages of a run:

    synth       generate a synthetic labeled video dataset + manifest
    preprocess  downscale/window/label/split/normalize into cached window sets
    train       train a single k-output network or a binary-relevance ensemble
    calibrate   re-run threshold softening for an existing single system
    evaluate    score a trained system on a cached window set
    predict     print per-window bits and confidences

Every option can also come from a `--config` file of key=value lines (same
names as the long flags, underscores for dashes); explicit flags win. All
randomness flows from --seed. Exit codes: 0 success, 1 user error, 2
internal error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import dataio, pipeline, strategy
from .errors import ConfigError, DeeprinkError
from .imbalance import save_calibration
from .metrics import render_report
from .nn import Hyperparameters, arch_from_text, default_architecture

PARTS = ("train", "val", "test")


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage text + exit 1 instead of argparse's exit 2
        raise _ArgumentError(f"{self.prog}: {message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="deeprink", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, help="key=value option file")
        p.add_argument("--seed", type=int, help="seed for all randomness")
        p.add_argument("--out", type=Path, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    add_common(p)
    p.add_argument("--k", type=int, help="class count (default 4)")
    p.add_argument("--videos", type=int, help="number of videos (default 6)")
    p.add_argument("--frames", type=int, help="frames per video (default 120)")
    p.add_argument("--width", type=int, help="frame width (default 128)")
    p.add_argument("--height", type=int, help="frame height (default 128)")
    p.add_argument("--prevalence", help="comma list of per-class frame rates")

    p = sub.add_parser("preprocess", help="manifest -> cached window sets")
    add_common(p)
    p.add_argument("--manifest", type=Path, help="dataset manifest path")
    p.add_argument("--split", choices=("window", "video"), help="split granularity")
    p.add_argument("--resize", type=int, help="downscale factor (default 4)")

    p = sub.add_parser("train", help="train a system on cached windows")
    add_common(p)
    p.add_argument("--windows", type=Path, help="preprocess output directory")
    p.add_argument("--arch", type=Path, help="architecture text file")
    p.add_argument("--strategy", choices=("single", "ensemble"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("calibrate", help="re-soften thresholds from validation")
    add_common(p)
    p.add_argument("--system", type=Path, help="trained system directory")
    p.add_argument("--windows", type=Path)
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("evaluate", help="score a system on a window set")
    add_common(p)
    p.add_argument("--system", type=Path)
    p.add_argument("--windows", type=Path)
    p.add_argument("--part", choices=PARTS, help="which split to score (default test)")

    p = sub.add_parser("predict", help="per-window bits and confidences")
    add_common(p)
    p.add_argument("--system", type=Path)
    p.add_argument("--windows", type=Path)
    p.add_argument("--part", choices=PARTS)

    return parser


def _read_config(path: Path) -> dict:
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _opt(args, config: dict, name: str, default=None, convert=str):
    """Flag value if given, else config file value, else default."""
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    if name in config:
        return convert(config[name])
    return default


def _require(value, name: str):
    if value is None:
        raise ConfigError(f"missing required option --{name.replace('_', '-')}")
    return value


def _write_run_echo(out: Path, options: dict) -> None:
    lines = [f"{k}={options[k]}" for k in sorted(options)]
    (out / "run.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_part(windows: Path, part: str, k: int):
    return pipeline.load_window_set(windows, part, k)


def _read_preprocess_meta(windows: Path) -> dict:
    meta_path = windows / "preprocess.txt"
    if not meta_path.exists():
        raise ConfigError(f"{windows} has no preprocess.txt; run preprocess first")
    return _read_config(meta_path)


def _cmd_synth(args, config) -> int:
    seed = _opt(args, config, "seed", 0, int)
    out = Path(_require(_opt(args, config, "out", convert=Path), "out"))
    k = _opt(args, config, "k", 4, int)
    prevalence = _opt(args, config, "prevalence")
    if prevalence:
        rates = [float(p) for p in str(prevalence).split(",")]
    else:
        rates = None
    cfg = dataio.SynthConfig(
        k=k,
        videos=_opt(args, config, "videos", 6, int),
        frames_per_video=_opt(args, config, "frames", 120, int),
        width=_opt(args, config, "width", 128, int),
        height=_opt(args, config, "height", 128, int),
        class_prevalence=rates,
    )
    manifest = dataio.synth_dataset(cfg, seed=seed, out_dir=out)
    print(f"wrote {len(manifest.entries)} videos and manifest.txt to {out}")
    return 0


def _cmd_preprocess(args, config) -> int:
    seed = _opt(args, config, "seed", 0, int)
    manifest_path = Path(_require(_opt(args, config, "manifest", convert=Path), "manifest"))
    out = Path(_require(_opt(args, config, "out", convert=Path), "out"))
    granularity = _opt(args, config, "split", "window")
    resize = _opt(args, config, "resize", 4, int)
    hyper = Hyperparameters()

    manifest = dataio.read_manifest(manifest_path)
    sequences = dataio.load_sequences(manifest, manifest_path.parent)
    result = pipeline.preprocess_sequences(
        sequences,
        resize_factor=resize,
        window_size=hyper.window_size,
        window_overlap=hyper.window_overlap,
        split_ratio=hyper.split_ratio,
        seed=seed,
        granularity=granularity,
    )
    out.mkdir(parents=True, exist_ok=True)
    for part, samples in (("train", result.train), ("val", result.val), ("test", result.test)):
        pipeline.save_window_set(out, part, samples)
    meta = {
        "manifest": manifest_path,
        "k": manifest.k,
        "class_names": ",".join(manifest.class_names),
        "resize_factor": resize,
        "window_size": hyper.window_size,
        "window_overlap": hyper.window_overlap,
        "split_ratio": hyper.split_ratio,
        "split": granularity,
        "seed": seed,
        "norm_mean": repr(result.normalizer.mean),
        "norm_std": repr(result.normalizer.std),
    }
    (out / "preprocess.txt").write_text(
        "\n".join(f"{k}={v}" for k, v in meta.items()) + "\n", encoding="utf-8"
    )
    print(
        f"cached {len(result.train)}/{len(result.val)}/{len(result.test)} "
        f"train/val/test windows to {out}"
    )
    return 0


def _cmd_train(args, config) -> int:
    seed = _opt(args, config, "seed", 0, int)
    windows = Path(_require(_opt(args, config, "windows", convert=Path), "windows"))
    out = Path(_require(_opt(args, config, "out", convert=Path), "out"))
    kind = _opt(args, config, "strategy", "single")
    if kind not in ("single", "ensemble"):
        raise ConfigError(f"unknown strategy {kind!r}")

    meta = _read_preprocess_meta(windows)
    k = int(meta["k"])
    class_names = meta["class_names"].split(",")
    train = _load_part(windows, "train", k)
    val = _load_part(windows, "val", k)
    test = _load_part(windows, "test", k)

    hyper = Hyperparameters(
        learning_rate=_opt(args, config, "lr", 0.01, float),
        momentum=_opt(args, config, "momentum", 0.9, float),
        epochs=_opt(args, config, "epochs", 30, int),
        batch_size=_opt(args, config, "batch_size", 8, int),
        mu=_opt(args, config, "mu", 0.7, float),
        alpha=_opt(args, config, "alpha", 0.5, float),
    )

    arch_path = _opt(args, config, "arch", convert=Path)
    outputs = k if kind == "single" else 1
    if arch_path is not None:
        arch = arch_from_text(Path(arch_path).read_text(encoding="utf-8"))
    else:
        arch = default_architecture(outputs)
    input_shape = train[0].volume.shape
    if tuple(arch.input_shape) != input_shape:
        raise ConfigError(
            f"architecture input {arch.input_shape} does not match window "
            f"shape {input_shape}; pass --arch"
        )
    if arch.output_count() != outputs:
        raise ConfigError(
            f"architecture has {arch.output_count()} outputs, need {outputs}"
        )

    if kind == "single":
        system, log = strategy.train_single(
            train, val, arch, hyper, seed, class_names=class_names
        )
    else:
        system, log = strategy.train_ensemble(
            train, val, arch, hyper, seed, class_names=class_names
        )
    system.manifest = str(meta.get("manifest", ""))

    out.mkdir(parents=True, exist_ok=True)
    strategy.save_system(system, out / "system")
    reloaded = strategy.load_system(out / "system")
    report = strategy.evaluate(reloaded, test)
    report_text = render_report(report, class_names)
    (out / "report_test.txt").write_text(report_text, encoding="utf-8")

    log_lines = []
    if kind == "single":
        for e, loss in enumerate(log.epoch_losses):
            log_lines.append(f"epoch {e} loss={loss:.6f}")
    else:
        for j in sorted(log.member_losses):
            for e, loss in enumerate(log.member_losses[j]):
                log_lines.append(f"member {j} epoch {e} loss={loss:.6f}")
        for j in log.skipped_members:
            log_lines.append(f"member {j} skipped (no positive instances)")
    log_lines.append(f"test_macro_f1={report.macro_f1:.6f}")
    (out / "train_log.txt").write_text("\n".join(log_lines) + "\n", encoding="utf-8")

    _write_run_echo(out, {
        "command": "train", "strategy": kind, "seed": seed,
        "windows": windows, "arch": arch_path if arch_path else "default",
        "epochs": hyper.epochs, "lr": hyper.learning_rate,
        "momentum": hyper.momentum, "batch_size": hyper.batch_size,
        "mu": hyper.mu, "alpha": hyper.alpha,
    })
    print(report_text, end="")
    print(f"saved system to {out / 'system'}")
    return 0


def _cmd_calibrate(args, config) -> int:
    system_dir = Path(_require(_opt(args, config, "system", convert=Path), "system"))
    windows = Path(_require(_opt(args, config, "windows", convert=Path), "windows"))
    alpha = _opt(args, config, "alpha", None, float)

    system = strategy.load_system(system_dir)
    meta = _read_preprocess_meta(windows)
    val = _load_part(windows, "val", int(meta["k"]))
    strategy.recalibrate(system, val, alpha=alpha)
    save_calibration(system_dir / "calibration.txt", system.calibration, system.class_names)
    for name, th in zip(system.class_names, system.calibration.thresholds):
        print(f"{name} threshold={th:.9g}")
    return 0


def _cmd_evaluate(args, config) -> int:
    system_dir = Path(_require(_opt(args, config, "system", convert=Path), "system"))
    windows = Path(_require(_opt(args, config, "windows", convert=Path), "windows"))
    part = _opt(args, config, "part", "test")
    out = _opt(args, config, "out", convert=Path)

    system = strategy.load_system(system_dir)
    samples = _load_part(windows, part, len(system.class_names))
    report = strategy.evaluate(system, samples)
    text = render_report(report, system.class_names)
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def _cmd_predict(args, config) -> int:
    system_dir = Path(_require(_opt(args, config, "system", convert=Path), "system"))
    windows = Path(_require(_opt(args, config, "windows", convert=Path), "windows"))
    part = _opt(args, config, "part", "test")

    system = strategy.load_system(system_dir)
    samples = _load_part(windows, part, len(system.class_names))
    volumes = pipeline.volumes_of(samples)
    bits, conf = strategy.predict_batch(system, volumes)
    for i, s in enumerate(samples):
        bitstring = "".join(str(b) for b in bits[i])
        confs = " ".join(f"{c:.6f}" for c in conf[i])
        print(f"video={s.source[0]} start={s.source[1]} bits={bitstring} {confs}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "preprocess": _cmd_preprocess,
    "train": _cmd_train,
    "calibrate": _cmd_calibrate,
    "evaluate": _cmd_evaluate,
    "predict": _cmd_predict,
}


def dispatch(argv) -> int:
    """Parse argv and run one subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        config = _read_config(args.config) if getattr(args, "config", None) else {}
        return _COMMANDS[args.command](args, config)
    except _ArgumentError as e:
        print(e, file=sys.stderr)
        return 1
    except (DeeprinkError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # argparse --help
        return int(e.code or 0)
    except Exception as e:  # pragma: no cover - internal failure path
        print(f"internal error: {e!r}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
