"""Command-line entry point: ``thermogyro <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import evaluation as E
from . import model as M
from .dataset import DataError, NormalizationSpec, load_acquisition, load_dataset, read_manifest
from .simulator import DIFFICULTY_BLOBS, SimConfig, generate_dataset
from .tensor import NumericError
from .training import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
RUN_CONFIG = "run_config.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _subsample(text: str) -> int:
    value = int(text)
    if value not in M.SUBSAMPLE_FACTORS:
        raise argparse.ArgumentTypeError(f"--nr must be one of {M.SUBSAMPLE_FACTORS}, got {value}")
    return value


def _subsample_list(text: str) -> list[int]:
    values = _int_list(text)
    for v in values:
        _subsample(str(v))
    return values


def read_config_file(path) -> dict[str, str]:
    """Plain ``key = value`` lines; ``#`` starts a comment. Keys match flag names."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


# --------------------------------------------------------------------------
# argument groups
# --------------------------------------------------------------------------


def _common(p, data=True, out=True):
    p.add_argument("--config", help="key=value file; explicit flags take precedence")
    if data:
        p.add_argument("--data", help="dataset root (environment dir or parent of several)")
    if out:
        p.add_argument("--out", required=False, help="output directory")
    p.add_argument("--seed", type=int, default=0)


def _model_flags(p, lists=False):
    if lists:
        return
    p.add_argument("--nf", type=int, default=3, help="frames per input window")
    p.add_argument("--nr", type=_subsample, default=1, help="resolution subsampling factor (1, 2, 3)")
    p.add_argument("--variant", choices=M.VARIANTS, default="fusion")


def _train_flags(p):
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--loss", choices=("berhu", "mse"), default="berhu")
    p.add_argument("--no-shuffle", dest="shuffle", action="store_false")


def _fold_flags(p):
    p.add_argument("--held-env", default="garden", help="environment whose acquisitions are the test folds")
    p.add_argument("--pool", choices=("all", "env"), default="all",
                   help="train on all other acquisitions, or only the held-out environment's")


def build_parser() -> _Parser:
    parser = _Parser(prog="thermogyro", description="Thermal-gyro rotational odometry toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _common(p, data=False)
    p.add_argument("--environment", default="garden")
    p.add_argument("--n-acq", type=int, default=6)
    p.add_argument("--segments", type=int, default=20)
    p.add_argument("--segment-seconds", type=float, default=4.0)
    p.add_argument("--difficulty", choices=sorted(DIFFICULTY_BLOBS), default="medium")
    p.add_argument("--blobs", type=int, help="blob count; overrides --difficulty")
    p.add_argument("--ambient", type=float, default=20.0)
    p.add_argument("--pixel-noise", type=float, default=0.3)
    p.add_argument("--gyro-bias", type=float, default=2.0)
    p.add_argument("--gyro-noise", type=float, default=1.0)
    p.add_argument("--fps", type=float, default=8.0)
    p.add_argument("--h-fov", type=float, default=55.0)
    p.add_argument("--v-fov", type=float, default=35.0)

    p = sub.add_parser("train", help="train one model")
    _common(p)
    _model_flags(p)
    _train_flags(p)
    p.add_argument("--exclude", action="append", default=[], help="acquisition name to leave out (repeatable)")

    p = sub.add_parser("kfold", help="leave-one-acquisition-out evaluation")
    _common(p)
    _model_flags(p)
    _train_flags(p)
    _fold_flags(p)

    p = sub.add_parser("sweep-nf", help="k-fold for each frame count")
    _common(p)
    _train_flags(p)
    _fold_flags(p)
    p.add_argument("--nf-list", type=_int_list, default=[2, 3, 4, 5, 6])
    p.add_argument("--nr", type=_subsample, default=1)
    p.add_argument("--variants", type=lambda s: s.split(","), default=list(M.VARIANTS))

    p = sub.add_parser("sweep-nr", help="k-fold for each subsampling factor")
    _common(p)
    _train_flags(p)
    _fold_flags(p)
    p.add_argument("--nr-list", type=_subsample_list, default=[1, 2, 3])
    p.add_argument("--nf", type=int, default=3)
    p.add_argument("--variants", type=lambda s: s.split(","), default=list(M.VARIANTS))

    p = sub.add_parser("complexity", help="parameter and FLOP counts")
    _common(p, data=False)
    p.add_argument("--nf", type=_int_list, default=[3], help="frame count(s), comma-separated")
    p.add_argument("--nr", type=_subsample_list, default=[1, 2, 3], help="subsampling factor(s)")
    p.add_argument("--variant", choices=M.VARIANTS, default="fusion")

    p = sub.add_parser("drift", help="integrated-angle traces: truth, gyro-only, fusion")
    _common(p, data=False)
    p.add_argument("--model", required=False, help="weight file")
    p.add_argument("--acquisition", required=False, help="acquisition CSV")

    p = sub.add_parser("kg-hist", help="histogram of the fusion gain over a dataset")
    _common(p)
    p.add_argument("--model", required=False, help="weight file; without it an untrained model is used")
    p.add_argument("--nf", type=int, default=3, help="untrained model only")
    p.add_argument("--nr", type=_subsample, default=1, help="untrained model only")
    p.add_argument("--bins", type=int, default=20)
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
    if getattr(args, "config", None):
        values = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        # keys may name the flag ("no-shuffle") or its destination ("shuffle")
        by_key = {a.dest: a for a in sub._actions if a.option_strings}
        for a in sub._actions:
            for opt in a.option_strings:
                by_key[opt.lstrip("-").replace("-", "_")] = a
        by_key.pop("config", None)
        by_key.pop("help", None)
        unknown = sorted(set(values) - set(by_key))
        if unknown:
            raise UsageError(f"{args.config}: unknown keys {', '.join(unknown)}")
        # file values go before the command-line flags, so the latter win
        flags = []
        for key, value in values.items():
            action = by_key[key]
            if action.nargs == 0:
                truth = value.lower()
                if truth not in ("1", "true", "yes", "0", "false", "no"):
                    raise UsageError(f"{args.config}: {key} expects true or false, got {value!r}")
                wanted = truth in ("1", "true", "yes")
                # "shuffle = false" and "no-shuffle = true" both mean the flag is set
                if (key == action.dest and action.const == wanted) or (key != action.dest and wanted):
                    flags.append(action.option_strings[0])
            else:
                flags += [action.option_strings[0], value]
        i = argv.index(args.command)
        args = parser.parse_args(argv[:i + 1] + flags + argv[i + 1 :])
    return args


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) in (None, ""):
            raise UsageError(f"{args.command}: --{name.replace('_', '-')} is required")


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(args.lr, args.batch, args.epochs, args.seed, args.shuffle, args.loss)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}
    E.write_json(echo, out / RUN_CONFIG)
    return out


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    _require(args, "out")
    n_blobs = args.blobs if args.blobs is not None else DIFFICULTY_BLOBS[args.difficulty]
    try:
        cfg = SimConfig(
            environment=args.environment, n_acquisitions=args.n_acq, n_segments=args.segments,
            segment_seconds=args.segment_seconds, n_blobs=n_blobs, ambient=args.ambient,
            pixel_noise=args.pixel_noise, gyro_bias=args.gyro_bias, gyro_noise=args.gyro_noise,
            fps=args.fps, h_fov=args.h_fov, v_fov=args.v_fov, seed=args.seed,
        )
        out = Path(args.out)
        acqs = generate_dataset(cfg, out)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    E.write_json(asdict(cfg), out / "simulation.json")
    for acq in acqs:
        print(f"{acq.name}: {len(acq)} frames")
    return EXIT_OK


def _load(args):
    _require(args, "data")
    return load_dataset(args.data)


def cmd_train(args) -> int:
    _require(args, "out")
    acqs = _load(args)
    missing = set(args.exclude) - {a.name for a in acqs}
    if missing:
        raise UsageError(f"unknown acquisition(s) for --exclude: {', '.join(sorted(missing))}")
    acqs = [a for a in acqs if a.name not in args.exclude]
    cfg = _train_config(args)
    model_cfg = M.ModelConfig(args.nf, args.nr, args.variant)
    samples = E.windows_for(acqs, args.nf, args.nr, NormalizationSpec())
    if samples is None:
        raise DataError("no training windows in the dataset")
    out = _out_dir(args)
    model = M.build_model(model_cfg, args.seed)
    model, history = train(model, samples, cfg)
    M.save_weights(model, out / "model.weights")
    E.write_csv(out / "history.csv", ["epoch", "loss"], ((i + 1, h) for i, h in enumerate(history)))
    print(f"trained {model.n_params} parameters on {len(samples)} windows; final loss {history[-1]:.6g}")
    return EXIT_OK


def _write_sweep(out: Path, name: str, result: dict) -> None:
    E.write_json(result, out / f"{name}.json")
    E.write_csv(out / f"{name}_boxplot.csv", ["variant", "n_frames", "subsample", "fold", "mse"],
                E.boxplot_rows(result["reports"]))


def cmd_kfold(args) -> int:
    _require(args, "out")
    acqs = _load(args)
    cfg = _train_config(args)
    try:
        report = E.kfold(acqs, args.held_env, cfg, args.nf, args.nr, args.variant, args.pool)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    out = _out_dir(args)
    result = {"held_out_env": args.held_env, "pool": args.pool, "train": asdict(cfg),
              "reports": [report.to_dict()],
              "complexity": E.complexity_rows([args.nf], [args.nr], args.variant)}
    _write_sweep(out, "kfold", result)
    print(f"{len(report.mse)} folds: median MSE {report.median:.6g}, IQR {report.iqr:.6g}")
    return EXIT_OK


def _check_variants(variants):
    bad = [v for v in variants if v not in M.VARIANTS]
    if bad:
        raise UsageError(f"unknown variant(s): {', '.join(bad)}")


def cmd_sweep_nf(args) -> int:
    _require(args, "out")
    _check_variants(args.variants)
    acqs = _load(args)
    try:
        result = E.sweep_nf(acqs, args.held_env, _train_config(args), args.nf_list, args.nr,
                            variants=args.variants, pool=args.pool)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    _write_sweep(_out_dir(args), "sweep_nf", result)
    for r in result["reports"]:
        print(f"N_f={r['n_frames']} {r['variant']}: median {r['median']:.6g} IQR {r['iqr']:.6g}")
    return EXIT_OK


def cmd_sweep_nr(args) -> int:
    _require(args, "out")
    _check_variants(args.variants)
    acqs = _load(args)
    try:
        result = E.sweep_nr(acqs, args.held_env, _train_config(args), args.nr_list, args.nf,
                            variants=args.variants, pool=args.pool)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    _write_sweep(_out_dir(args), "sweep_nr", result)
    for r in result["reports"]:
        print(f"N_r={r['subsample']} {r['variant']}: median {r['median']:.6g} IQR {r['iqr']:.6g}")
    return EXIT_OK


def cmd_complexity(args) -> int:
    _require(args, "out")
    rows = E.complexity_rows(args.nf, args.nr, args.variant)
    out = _out_dir(args)
    header = ["n_frames", "subsample", "variant", "params", "flops"]
    E.write_csv(out / "complexity.csv", header, ([r[h] for h in header] for r in rows))
    for r in rows:
        print(f"N_f={r['n_frames']} N_r={r['subsample']}: {r['params']} params, {r['flops']} FLOPs")
    return EXIT_OK


def _acquisition_with_manifest(path) -> object:
    path = Path(path)
    env, fps = "unknown", 8.0
    try:
        manifest = read_manifest(path.parent)
        env, fps = manifest["environment"], float(manifest["fps"])
    except DataError:
        pass
    return load_acquisition(path, environment=env, fps=fps, name=f"{env}/{path.stem}")


def cmd_drift(args) -> int:
    _require(args, "out", "model", "acquisition")
    model = M.load_weights(args.model)
    acq = _acquisition_with_manifest(args.acquisition)
    trace = E.drift_trace(model, acq)
    out = _out_dir(args)
    E.write_csv(out / "drift.csv", ["time_s", "truth_deg", "gyro_deg", "fusion_deg"], trace.rows())
    gyro_err, fus_err = trace.terminal_errors()
    print(f"after {trace.time_s[-1]:.3f} s: gyro-only error {gyro_err:.3f} deg, fusion error {fus_err:.3f} deg")
    return EXIT_OK


def cmd_kg_hist(args) -> int:
    _require(args, "out")
    if args.model:
        model = M.load_weights(args.model)
    else:
        model = M.build_model(M.ModelConfig(args.nf, args.nr, "fusion"), args.seed)
    if args.bins < 1:
        raise UsageError("--bins must be >= 1")
    if not model.config.fusion:
        raise UsageError("kg-hist needs a fusion model")
    samples = E.windows_for(_load(args), model.config.n_frames, model.config.subsample, NormalizationSpec())
    if samples is None:
        raise DataError("no windows in the dataset")
    counts, edges = E.kg_histogram(model, samples, args.bins)
    out = _out_dir(args)
    E.write_csv(out / "kg_hist.csv", ["bin_lo", "bin_hi", "count"],
                ((edges[i], edges[i + 1], int(c)) for i, c in enumerate(counts)))
    print(f"{int(counts.sum())} samples, modal bin [{edges[np.argmax(counts)]:.2f}, {edges[np.argmax(counts) + 1]:.2f})")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "kfold": cmd_kfold,
    "sweep-nf": cmd_sweep_nf,
    "sweep-nr": cmd_sweep_nr,
    "complexity": cmd_complexity,
    "drift": cmd_drift,
    "kg-hist": cmd_kg_hist,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, M.ConfigError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
