"""Command-line pipelines: synth, train, attribute, evaluate.

Every command writes a manifest next to its primary output with the resolved
configuration, seeds, inputs/outputs, tool version, and wall clock, so runs
are reproducible from the manifest alone. Exit codes: 0 success, 2 usage,
3 data error, 4 numerical failure. Flag defaults can be overridden with
FREQLENS_<FLAG> environment variables (e.g. FREQLENS_SEED=7) for CI.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import __version__, attribution as attr, evalharness, inspection, net as nets
from . import spectral, synth
from .errors import (
    ColaConditionError,
    ConfigError,
    DataFormatError,
    FreqlensError,
    InvalidInputError,
    ModelFormatError,
    PropagationError,
    StaleSpectrumError,
    SymmetryError,
    TrainingFailureError,
    WindowAdmissibilityError,
)

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

_DATA_ERRORS = (DataFormatError, ModelFormatError, InvalidInputError)
_NUMERICAL_ERRORS = (
    TrainingFailureError,
    PropagationError,
    ColaConditionError,
    WindowAdmissibilityError,
    StaleSpectrumError,
    SymmetryError,
)

_WINDOW_NAMES = {"rect": "rectangular", "halfsine": "half_sine", "hann": "hann"}


def _env_default(flag: str, fallback, cast=str):
    raw = os.environ.get(f"FREQLENS_{flag.upper().replace('-', '_')}")
    if raw is None:
        return fallback
    return cast(raw)


def _args_config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _write_manifest(primary_output: str, command: str, config: dict, inputs: list, outputs: list, started: float):
    manifest = {
        "command": command,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "wall_clock_seconds": time.time() - started,
    }
    path = f"{primary_output}.manifest.json"
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    os.replace(tmp, path)


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=_env_default("seed", 0, int))
    parser.add_argument("--jobs", type=int, default=_env_default("jobs", 1, int))


def cmd_synth(args) -> int:
    started = time.time()
    overrides = {}
    if args.n is not None:
        overrides["n"] = args.n
    if args.k_star is not None:
        overrides["k_star"] = tuple(int(k) for k in args.k_star.split(","))
    if args.sigma is not None:
        overrides["noise_sigma"] = args.sigma
    if args.num_samples is not None:
        overrides["num_samples"] = args.num_samples
    if args.subset_only is not None:
        overrides["subset_only"] = args.subset_only
    overrides["amplitude_rule"] = args.amplitude_rule
    if args.preset is not None:
        cfg = synth.preset(args.preset, seed=args.seed, **overrides)
    else:
        missing = {"n", "k_star", "noise_sigma", "num_samples"} - set(overrides)
        if missing:
            raise ConfigError(f"without --preset you must pass {sorted(missing)}")
        cfg = synth.SynthConfig(seed=args.seed, **overrides)
    dataset = synth.generate(cfg)
    synth.save_dataset(dataset, args.out)
    _write_manifest(args.out, "synth", _args_config(args) | {"resolved": dataclasses.asdict(cfg) | {"k_star": list(cfg.k_star)}}, [], [args.out], started)
    print(f"wrote {len(dataset)} samples (N={cfg.n}, classes={cfg.num_classes}) to {args.out}")
    return 0


def _split(dataset: synth.Dataset, fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    cut = int(len(dataset) * (1.0 - fraction))
    tr, te = order[:cut], order[cut:]
    return (
        dataset.signals[tr],
        dataset.labels[tr],
        dataset.signals[te],
        dataset.labels[te],
    )


def cmd_train(args) -> int:
    started = time.time()
    dataset = synth.load_dataset(args.data)
    hidden = tuple(int(w) for w in args.hidden.split(",")) if args.hidden else (256, 256)
    network = nets.build_mlp(dataset.config.n, hidden, dataset.config.num_classes, seed=args.seed)
    cfg = nets.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        seed=args.seed,
    )
    xs_tr, ys_tr, xs_te, ys_te = _split(dataset, args.test_split, args.seed)
    metrics = nets.train(network, xs_tr, ys_tr, cfg, xs_te, ys_te)
    nets.save_network(network, args.out)
    metrics_path = f"{args.out}.metrics.json"
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2)
    _write_manifest(
        args.out, "train", _args_config(args) | {"hidden": list(hidden)}, [args.data],
        [args.out, metrics_path], started,
    )
    print(
        f"trained on {xs_tr.shape[0]} samples: train_acc={metrics['train_accuracy']:.4f}"
        + (f" test_acc={metrics['test_accuracy']:.4f}" if "test_accuracy" in metrics else "")
    )
    return 0


def _load_input_signal(args, n: int) -> tuple[np.ndarray, int | None]:
    if args.input is not None:
        signal = spectral.load_signal_csv(args.input, row=args.index)
        return signal.samples, None
    if args.data is not None:
        dataset = synth.load_dataset(args.data)
        if not (0 <= args.index < len(dataset)):
            raise DataFormatError(f"sample index {args.index} out of range")
        return dataset.signals[args.index], int(dataset.labels[args.index])
    raise ConfigError("need --input or --data")


def _window_from_args(args, n: int) -> spectral.WindowSpec:
    shape = _WINDOW_NAMES[args.window]
    width = args.width if args.width is not None else max(1, n // 10)
    hop = args.hop if args.hop is not None else width
    return spectral.WindowSpec(shape, width, hop)


def cmd_attribute(args) -> int:
    started = time.time()
    network = nets.load_network(args.model)
    x, label = _load_input_signal(args, network.input_length)
    if x.shape[0] != network.input_length:
        raise DataFormatError(
            f"signal length {x.shape[0]} does not match model input {network.input_length}"
        )
    if args.target is not None:
        target = args.target
    elif label is not None:
        target = label
    else:
        target = int(np.argmax(attr.model_forward(network, x)))

    domain = args.domain.replace("-", "_")
    if domain == "time":
        bundle = {"network": network, "aug": None}
        window = None
    elif domain == "frequency":
        bundle = {"network": network, "aug": attr.augment_with_inverse_fourier(network, "dft")}
        window = None
    elif domain == "time_frequency":
        window = _window_from_args(args, network.input_length)
        bundle = {
            "network": network,
            "aug": attr.augment_with_inverse_fourier(network, "stdft", window=window),
        }
    else:
        raise ConfigError(f"unknown domain {args.domain!r}")
    rmap = evalharness.compute_map(bundle, args.method, x, target, ig_steps=args.ig_steps)

    out_json = f"{args.out}.json"
    out_csv = f"{args.out}.csv"
    attr.save_map_json(rmap, out_json)
    attr.save_map_csv(rmap, out_csv)
    outputs = [out_json, out_csv]
    if args.svg:
        if rmap.values.ndim != 2:
            raise ConfigError("--svg is only available for time-frequency maps")
        out_svg = f"{args.out}.svg"
        inspection.save_heatmap_svg(rmap, out_svg)
        outputs.append(out_svg)
    _write_manifest(out_json, "attribute", _args_config(args) | {"target": target},
                    [args.model, args.input or args.data], outputs, started)
    print(f"wrote {rmap.method} {rmap.domain} map to {out_json}")
    return 0


def cmd_evaluate(args) -> int:
    started = time.time()
    network = nets.load_network(args.model)
    dataset = synth.load_dataset(args.data)
    methods = tuple(m for m in args.methods.split(",") if m)
    domains = tuple(d.replace("-", "_") for d in args.domains.split(",") if d)
    widths = tuple(int(w) for w in args.stdft_widths.split(",")) if args.stdft_widths else ()
    cfg = evalharness.BenchmarkConfig(
        methods=methods,
        domains=domains,
        stdft_widths=widths,
        num_samples=args.num_samples,
        ig_steps=args.ig_steps,
        include_flipping=args.flip,
        flip_domains=tuple(d.replace("-", "_") for d in args.flip_domains.split(",") if d),
        flip_samples=args.flip_samples,
        seed=args.seed,
        jobs=args.jobs,
    )
    report = evalharness.run_benchmark(network, dataset, cfg)
    report.to_json(args.out)
    prefix = args.out[:-5] if args.out.endswith(".json") else args.out
    report.save_csv_tables(prefix)
    _write_manifest(args.out, "evaluate", _args_config(args), [args.model, args.data],
                    [args.out, f"{prefix}_localization.csv", f"{prefix}_flipping.csv"], started)
    for method, by_dom in sorted(report.localization.items()):
        for dom, cell in sorted(by_dom.items()):
            print(f"lambda[{method}][{dom}] = {cell['mean']:.4f} +- {cell['stderr']:.4f} (n={cell['n']})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqlens",
        description="Explain time-series classifiers in time, frequency, and "
        "time-frequency domains via virtual inverse-Fourier input layers.",
    )
    parser.add_argument("--version", action="version", version=f"freqlens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled sinusoid-detection dataset")
    p.add_argument("--preset", choices=sorted(synth._PRESETS))
    p.add_argument("--n", type=int)
    p.add_argument("--k-star", dest="k_star")
    p.add_argument("--sigma", type=float)
    p.add_argument("--num-samples", dest="num_samples", type=int)
    p.add_argument("--subset-only", dest="subset_only", type=int)
    p.add_argument("--amplitude-rule", dest="amplitude_rule", choices=synth.AMPLITUDE_RULES, default="fixed")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train an MLP classifier on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hidden", default="256,256")
    p.add_argument("--epochs", type=int, default=_env_default("epochs", 5, int))
    p.add_argument("--batch-size", dest="batch_size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--test-split", dest="test_split", type=float, default=0.1)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attribute", help="compute one attribution map for one signal")
    p.add_argument("--model", required=True)
    p.add_argument("--input", help="CSV signal file (one signal per row)")
    p.add_argument("--data", help="dataset file to pick a sample from")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--method", required=True, choices=evalharness.METHODS)
    p.add_argument("--domain", required=True, choices=("time", "frequency", "time-frequency"))
    p.add_argument("--window", choices=sorted(_WINDOW_NAMES), default="rect")
    p.add_argument("--width", type=int)
    p.add_argument("--hop", type=int)
    p.add_argument("--target", type=int)
    p.add_argument("--ig-steps", dest="ig_steps", type=int, default=256)
    p.add_argument("--svg", action="store_true")
    p.add_argument("--out", required=True, help="output prefix (.json/.csv/.svg appended)")
    _add_common(p)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("evaluate", help="run the quantitative benchmark on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--methods", default="lrp,ig,gxi,sensitivity")
    p.add_argument("--domains", default="frequency")
    p.add_argument("--stdft-widths", dest="stdft_widths", default="")
    p.add_argument("--num-samples", dest="num_samples", type=int, default=500)
    p.add_argument("--ig-steps", dest="ig_steps", type=int, default=256)
    p.add_argument("--flip", action="store_true")
    p.add_argument("--flip-domains", dest="flip_domains", default="frequency")
    p.add_argument("--flip-samples", dest="flip_samples", type=int, default=100)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _NUMERICAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FreqlensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
