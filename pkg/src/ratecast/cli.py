"""Command line entry point: ``ratecast <subcommand> ...``.

Exit codes: 0 success, 2 input error, 3 numeric failure. Every subcommand
writing ``--out PATH`` also writes ``PATH.manifest`` recording the resolved
parameters, input digests, seed and tool version.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import zlib
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (FormatError, SplitSpec, generate_synthetic, load_metric_matrix, load_ratings,
                     resolve_path, save_metric_matrix, save_ratings, save_split, split)
from .evaluation import evaluate, peer_selection_experiment, singular_spectrum
from .factorization import (ModelKind, TrainConfig, TrainingDiverged, default_ensemble_members,
                            load_models, save_models, train)
from .ratings import MetricKind, RatingScale, quantize, thresholds_by_percentile, thresholds_even
from .simulator import SimConfig, Simulation, default_k

EXIT_INPUT = 2
EXIT_NUMERIC = 3


class InputError(Exception):
    pass


def derive_seed(seed: int, stage: str) -> int:
    """Stage-specific sub-seed so one ``--seed`` drives a whole pipeline."""
    return int(np.random.SeedSequence([seed, zlib.crc32(stage.encode())]).generate_state(1)[0])


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _input(path: str) -> Path:
    p = resolve_path(path)
    if not p.is_file():
        raise InputError(f"input file not found: {path}")
    return p


def write_manifest(out: str | Path, subcommand: str, params: dict, inputs: dict[str, Path], seed) -> None:
    manifest = {
        "subcommand": subcommand,
        "tool_version": __version__,
        "seed": seed,
        "parameters": params,
        "inputs": {name: {"path": str(p), "sha256": _digest(p)} for name, p in inputs.items()},
    }
    Path(str(out) + ".manifest").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _fmt_tau(scale: RatingScale) -> str:
    return "[" + ", ".join(format(t, ".6g") for t in scale.thresholds) + "]"


def _scale_for(metric, strategy: str, R: int) -> RatingScale:
    if strategy == "percentile":
        return thresholds_by_percentile(metric, R)
    if strategy.startswith("even:"):
        try:
            upper = float(strategy.split(":", 1)[1])
        except ValueError:
            raise InputError(f"bad strategy {strategy!r}; expected even:<upper>") from None
        return thresholds_even(upper, R, metric.kind)
    raise InputError(f"unknown strategy {strategy!r}; use 'percentile' or 'even:<upper>'")


def _load_metric(path: str, metric: str | None):
    return load_metric_matrix(_input(path), None if metric is None else MetricKind.parse(metric))


def _train_config(args, stage_seed: int) -> TrainConfig:
    return TrainConfig(eta=args.eta, lam=args.lam, rank=args.rank, epochs=args.epochs,
                       seed=stage_seed, learn_theta=not args.fixed_theta)


def _parse_sizes(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise InputError(f"bad size list {text!r}") from None


def cmd_generate(args) -> int:
    seed = derive_seed(args.seed, "generate")
    lo, hi = (float(x) for x in args.range.split(","))
    noise = args.noise if args.noise is not None else args.noise_frac * (hi - lo)
    m = generate_synthetic(args.n, args.rank, (lo, hi), noise, MetricKind.parse(args.metric), seed,
                           args.unit, args.decay)
    save_metric_matrix(m, args.out)
    write_manifest(args.out, "generate", {"n": args.n, "rank": args.rank, "range": [lo, hi],
                                          "noise_sd": noise, "metric": m.kind.value, "decay": args.decay,
                                          "stage_seed": seed}, {}, args.seed)
    return 0


def cmd_quantize(args) -> int:
    path = _input(args.matrix)
    metric = _load_metric(args.matrix, args.metric)
    scale = _scale_for(metric, args.strategy, args.R)
    ratings = quantize(metric, scale)
    print(f"tau={_fmt_tau(scale)}")
    print(f"entries={len(ratings)} class_counts={','.join(str(c) for c in ratings.class_counts())}")
    if args.out:
        save_ratings(ratings, args.out, metric=metric.kind.value,
                     tau=",".join(repr(t) for t in scale.thresholds))
        write_manifest(args.out, "quantize", {"strategy": args.strategy, "R": args.R,
                                              "metric": metric.kind.value,
                                              "tau": list(scale.thresholds)}, {"matrix": path}, None)
    return 0


def cmd_split(args) -> int:
    path = _input(args.ratings)
    ratings = load_ratings(path)
    spec = SplitSpec(args.mode, k=args.k, fraction=args.fraction, seed=derive_seed(args.seed, "split"),
                     bidirectional=args.bidirectional)
    train_part, test_part = split(ratings, spec)
    paths = save_split(train_part, test_part, args.out)
    print(f"train={len(train_part)} test={len(test_part)} "
          f"train_fraction={len(train_part) / (ratings.n * (ratings.n - 1)):.6f}")
    for p in paths:
        write_manifest(p, "split", spec.describe(), {"ratings": path}, args.seed)
    return 0


def _read_grid(path: Path, base: TrainConfig) -> list[tuple[ModelKind, TrainConfig]]:
    keys = {"eta": float, "lam": float, "rank": int, "epochs": int, "seed": int}
    members = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = dict(tok.split("=", 1) for tok in line.split() if "=" in tok)
        try:
            kind = ModelKind.parse(fields.pop("model"))
            updates = {k: keys[k](v) for k, v in fields.items()}
        except (KeyError, ValueError):
            raise InputError(f"{path}:{lineno}: expected 'model=<kind> [eta=.. lam=.. rank=.. epochs=.. seed=..]'"
                             ) from None
        updates.setdefault("seed", base.seed + len(members))
        members.append((kind, replace(base, **updates)))
    if not members:
        raise InputError(f"{path}: no ensemble members listed")
    return members


def cmd_train(args) -> int:
    path = _input(args.ratings)
    ratings = load_ratings(path)
    config = _train_config(args, derive_seed(args.seed, "train"))
    inputs = {"ratings": path}
    if args.model == "ensemble":
        if args.configs:
            inputs["configs"] = _input(args.configs)
            members = _read_grid(inputs["configs"], config)
        else:
            members = default_ensemble_members(config)
    else:
        members = [(ModelKind.parse(args.model), config)]
    models = []
    for kind, cfg in members:
        result = train(kind, ratings, cfg)
        models.append(result.model)
        print(f"{kind.value} rank={cfg.rank} seed={cfg.seed} final_loss={result.final_loss:.6f}")
    save_models(models, args.out)
    write_manifest(args.out, "train", {"model": args.model,
                                       "members": [{"kind": k.value, **asdict(c)} for k, c in members]},
                   inputs, args.seed)
    return 0


def cmd_evaluate(args) -> int:
    mpath, tpath = _input(args.model), _input(args.test)
    models = load_models(mpath)
    test = load_ratings(tpath)
    report = evaluate(models, test)
    text = report.to_text()
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text)
        Path(args.out + ".confusion.csv").write_text(report.confusion_csv())
        write_manifest(args.out, "evaluate", {"members": len(models)}, {"model": mpath, "test": tpath}, None)
    return 0


def cmd_simulate(args) -> int:
    if args.matrix:
        path = _input(args.matrix)
        metric = _load_metric(args.matrix, args.metric)
        if args.n not in (None, "auto") and int(args.n) != metric.n:
            raise InputError(f"--n {args.n} disagrees with the matrix size {metric.n}")
        inputs = {"matrix": path}
    else:
        if args.n in (None, "auto"):
            raise InputError("--n must be an integer when no matrix file is given")
        n = int(args.n)
        metric = generate_synthetic(n, 5, (10.0, 500.0), 0.05 * 490.0, MetricKind.parse(args.metric or "rtt"),
                                    derive_seed(args.seed, "generate"))
        inputs = {}
    k = default_k(metric.n) if args.k == "auto" else int(args.k)
    scale = _scale_for(metric, args.strategy, args.R)
    config = _train_config(args, derive_seed(args.seed, "train"))
    if args.model == "mmmf":
        config = replace(config, learn_theta=False)
    sim = SimConfig(k=k, rounds=args.rounds, train=config, seed=derive_seed(args.seed, "simulate"),
                    bidirectional=args.bidirectional)
    result = Simulation(args.model, metric, scale, sim).run()
    text = result.report()
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text)
        write_manifest(args.out, "simulate", {"k": k, "rounds": args.rounds, "strategy": args.strategy,
                                              "bidirectional": args.bidirectional, "model": args.model,
                                              "train": asdict(config), "sim_seed": sim.seed}, inputs, args.seed)
    if args.model_out:
        save_models(result.model, args.model_out)
    return 0


def cmd_peer_select(args) -> int:
    mpath, modelpath = _input(args.matrix), _input(args.model)
    metric = _load_metric(args.matrix, args.metric)
    models = load_models(modelpath)
    if models[0].n != metric.n:
        raise InputError(f"model has n={models[0].n} but the matrix has n={metric.n}")
    sizes = _parse_sizes(args.sizes)
    report = peer_selection_experiment(metric, models, sizes, args.trials,
                                       derive_seed(args.seed, "peer-select"), tie=args.tie)
    print(report.to_text(), end="")
    if args.out:
        Path(args.out).write_text(report.to_csv())
        write_manifest(args.out, "peer-select", {"sizes": sizes, "trials": args.trials, "tie": args.tie},
                       {"matrix": mpath, "model": modelpath}, args.seed)
    return 0


def cmd_spectrum(args) -> int:
    path = _input(args.matrix)
    metric = _load_metric(args.matrix, args.metric)
    off = ~np.eye(metric.n, dtype=bool)
    if np.any(metric.missing & off):
        raise InputError("spectrum needs a complete matrix; missing off-diagonal entries found")
    if args.strategy:
        ratings = quantize(metric, _scale_for(metric, args.strategy, args.R))
        dense = ratings.to_dense(np.nan)
    else:
        dense = np.where(metric.missing, np.nan, metric.values)
    # the diagonal is never measured; fill it with the mean of the observed entries
    np.fill_diagonal(dense, np.nanmean(dense))
    spectrum = singular_spectrum(dense)
    shown = spectrum[:args.top] if args.top else spectrum
    print("normalized_singular_values=" + ",".join(format(x, ".6g") for x in shown))
    if args.out:
        Path(args.out).write_text("index,normalized_singular_value\n"
                                  + "".join(f"{i + 1},{x:.10g}\n" for i, x in enumerate(spectrum)))
        write_manifest(args.out, "spectrum", {"strategy": args.strategy, "R": args.R}, {"matrix": path}, None)
    return 0


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eta", type=float, default=0.05, help="SGD learning rate")
    p.add_argument("--lam", type=float, default=0.1, help="regularization coefficient")
    p.add_argument("--rank", type=int, default=10)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--fixed-theta", action="store_true", help="keep MMMF thresholds at their initial values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ratecast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ratecast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic low-rank metric matrix")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--range", default="10,500", help="lo,hi of the noiseless values")
    p.add_argument("--noise", type=float, default=None, help="absolute noise standard deviation")
    p.add_argument("--noise-frac", type=float, default=0.05, help="noise sd as a fraction of the range")
    p.add_argument("--decay", type=float, default=0.5)
    p.add_argument("--metric", default="rtt", help="rtt|abw|lower_is_better|higher_is_better")
    p.add_argument("--unit", default="")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("quantize", help="turn a metric matrix into ratings")
    p.add_argument("matrix")
    p.add_argument("--strategy", default="percentile", help="percentile | even:<upper>")
    p.add_argument("--R", type=int, default=5)
    p.add_argument("--metric", default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("split", help="split ratings into train/test files")
    p.add_argument("ratings")
    p.add_argument("--mode", choices=["neighbor_k", "fraction"], default="neighbor_k")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--bidirectional", action="store_true", help="probers also measure the reverse path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="prefix; writes PREFIX.train and PREFIX.test")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="fit a factor model (or ensemble) on ratings")
    p.add_argument("ratings")
    p.add_argument("--model", choices=["rmf", "mmmf", "nmf", "ensemble"], default="rmf")
    p.add_argument("--configs", help="ensemble grid: one 'model=<kind> key=value ...' per line")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model on held-out ratings")
    p.add_argument("model")
    p.add_argument("test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="decentralized neighbor-probing simulation")
    p.add_argument("matrix", nargs="?")
    p.add_argument("--n", default="auto", help="'auto' (from the matrix) or a synthetic size")
    p.add_argument("--k", default="auto", help="neighbors per node, or 'auto' (32 if n >= 1000 else 10)")
    p.add_argument("--rounds", type=int, default=30)
    p.add_argument("--strategy", default="percentile")
    p.add_argument("--R", type=int, default=5)
    p.add_argument("--metric", default=None)
    p.add_argument("--model", choices=["rmf", "mmmf", "nmf"], default="rmf")
    p.add_argument("--bidirectional", action="store_true")
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--model-out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("peer-select", help="peer-selection stretch experiment")
    p.add_argument("matrix")
    p.add_argument("model")
    p.add_argument("--sizes", default="2,4,8,16,32")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--tie", choices=["raw", "random"], default="raw")
    p.add_argument("--metric", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV output, one row per peer-set size")
    p.set_defaults(func=cmd_peer_select)

    p = sub.add_parser("spectrum", help="normalized singular values of a complete matrix")
    p.add_argument("matrix")
    p.add_argument("--strategy", default=None, help="quantize first: percentile | even:<upper>")
    p.add_argument("--R", type=int, default=5)
    p.add_argument("--metric", default=None)
    p.add_argument("--top", type=int, default=10, help="values to print (0 = all)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, FormatError, FileNotFoundError) as exc:
        print(f"ratecast: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"ratecast: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"ratecast: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
