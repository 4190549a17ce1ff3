"""Batch command line: train, predict, eval, cv, synth, inspect.

Exit codes: 0 success, 2 input error, 3 training error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings

import numpy as np

from sl1max import io as sio
from sl1max.core import DistributionKind
from sl1max.ensemble import EnsembleModel
from sl1max.errors import InputError, SL1MaxError, TrainingError, Unsupported
from sl1max.evaluation import (ALL_KINDS, count_nonzero, cross_validate, evaluate, fit, format_csv, format_report,
                               nonzero_per_class, predict_classes, synth_generate)
from sl1max.multilabel import expand
from sl1max.trainers import TrainConfig, softmax

log = logging.getLogger("sl1max")


def _add_train_options(p):
    p.add_argument("--kind", choices=ALL_KINDS, default="ensemble-cond")
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--beta-scaling", choices=("uniform", "stddev"), default="stddev")
    p.add_argument("--multilabel-mode", choices=("duplicate", "inversek"), default="inversek")
    p.add_argument("--rounds", type=int, default=None, help="maximum updates per problem")
    p.add_argument("--max-evals", type=int, default=None, help="candidate-evaluation budget per problem")
    p.add_argument("--eps", type=float, default=1e-6, help="stop when the best predicted decrease is above -eps")
    p.add_argument("--valid", default=None, help="validation file for early stopping (tied kinds)")
    p.add_argument("--parallel-classes", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)


def _config(args) -> TrainConfig:
    valid = sio.read_dataset(args.valid) if getattr(args, "valid", None) else None
    return TrainConfig(beta=args.beta, beta_scaling=args.beta_scaling, max_rounds=args.rounds,
                       max_evaluations=args.max_evals, eps=args.eps, validation=valid,
                       parallel_classes=args.parallel_classes, seed=args.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sl1max", description="Sequential L1-regularized maxent classifiers")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--model", required=True, help="output model file")
    _add_train_options(p)

    p = sub.add_parser("predict", help="apply a model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default="-")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--proba", action="store_true", help="class probabilities (cond, ensemble-cond)")
    g.add_argument("--code", action="store_true", help="0/1 output code (ensemble-cond)")

    p = sub.add_parser("eval", help="score a model on labeled data")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--metric", choices=("error", "microf"), action="append")
    p.add_argument("--csv", default=None)

    p = sub.add_parser("cv", help="k-fold cross-validation")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--metric", choices=("error", "microf"), action="append")
    p.add_argument("--csv", default=None)
    _add_train_options(p)

    p = sub.add_parser("synth", help="write a synthetic class-indicator dataset")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")

    p = sub.add_parser("inspect", help="summarize a model")
    p.add_argument("--model", required=True)
    return parser


def _write(path, text):
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_train(args):
    data = sio.read_dataset(args.input)
    if args.kind in ("joint", "classcond", "cond") and not data.is_single_label():
        _, report = expand(data, args.multilabel_mode)
        log.warning("multi-label input expanded (%s): %d rows -> %d, %d without labels dropped",
                    report.weighting_mode.value, report.original_count, report.expanded_count,
                    report.dropped_zero_label)
    model = fit(data, args.kind, _config(args), args.multilabel_mode)
    sio.write_model(model, args.model)
    lines = [f"kind={args.kind}", f"nonzero={count_nonzero(model)}"]
    if not isinstance(model, EnsembleModel):
        lines.append(f"rounds={model.rounds}")
    print("\n".join(lines))


def cmd_predict(args):
    model = sio.read_model(args.model)
    data = sio.read_dataset(args.input)
    ens = isinstance(model, EnsembleModel)
    if args.code:
        if not ens or model.kind is not DistributionKind.CONDITIONAL:
            raise Unsupported("--code needs an ensemble-cond model")
        rows = (model.proba_matrix(data.X) > model.threshold).astype(int)
        lines = [" ".join(map(str, r)) for r in rows]
    elif args.proba:
        if ens:
            P = model.proba_matrix(data.X)
        elif model.kind is DistributionKind.CONDITIONAL:
            P = softmax(model.decision_scores(data.X), axis=1)
        else:
            raise Unsupported("--proba needs a cond or ensemble-cond model")
        lines = [" ".join("%.6g" % v for v in r) for r in P]
    else:
        pred = predict_classes(model, data)
        names = model.class_names
        lines = [names[c] if names else str(c) for c in pred]
    _write(args.out, "\n".join(lines) + ("\n" if lines else ""))


def cmd_eval(args):
    model = sio.read_model(args.model)
    data = sio.read_dataset(args.input, num_classes=model.num_classes)
    res = evaluate(model, data, tuple(args.metric or ("error", "microf")))
    _write("-", format_report(res))
    if args.csv:
        _write(args.csv, format_csv([res]))


def cmd_cv(args):
    data = sio.read_dataset(args.input)
    metrics = tuple(args.metric or ("error",))
    rows = cross_validate(data, args.kind, args.k, args.seed, _config(args), args.multilabel_mode, metrics)
    summary = {"kind": args.kind, "folds": args.k}
    for key in metrics:
        summary[f"mean_{key}"] = float(np.mean([r[key] for r in rows]))
    summary["mean_nonzero"] = float(np.mean([r["nonzero"] for r in rows]))
    out = "".join(f"fold={r['fold']} " + " ".join(f"{k}={r[k]:.6g}" for k in metrics) + "\n" for r in rows)
    _write("-", out + format_report(summary))
    if args.csv:
        _write(args.csv, format_csv(rows))


def cmd_synth(args):
    data = synth_generate(args.m, args.n, args.l, args.noise, args.seed)
    _write(args.out, sio.format_dataset(data))


def cmd_inspect(args):
    model = sio.read_model(args.model)
    ens = isinstance(model, EnsembleModel)
    kind = ("ensemble-" if ens else "") + model.kind.value
    lines = [f"kind={kind}", f"classes={model.num_classes}", f"features={model.num_features}",
             f"beta={model.config.get('beta')}", f"nonzero={count_nonzero(model)}"]
    names = model.class_names
    for c, k in enumerate(nonzero_per_class(model)):
        lines.append(f"class[{names[c] if names else c}]={k}")
    _write("-", "\n".join(lines) + "\n")


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "eval": cmd_eval, "cv": cmd_cv, "synth": cmd_synth,
            "inspect": cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s: %(message)s")
    warnings.simplefilter("once")
    try:
        COMMANDS[args.command](args)
    except (InputError, Unsupported, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, SL1MaxError) as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
