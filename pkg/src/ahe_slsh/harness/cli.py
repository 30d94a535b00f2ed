"""Command line entry point: ``ahe-slsh <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data/configuration error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ahe_slsh.errors import AheError, DataError, NumericError
from ahe_slsh.harness.evaluation import classify, metrics
from ahe_slsh.harness.experiment import ExperimentConfig, Report, run_experiment
from ahe_slsh.harness.report import export_report, load_contexts, save_contexts
from ahe_slsh.harness.synth import SynthSpec
from ahe_slsh.seqae import ARCHITECTURES, ModelConfig, Schedule, encode_batch, load_model, save_model, train
from ahe_slsh.signal_core import load_csv, load_dataset, preprocess, save_dataset, write_csv
from ahe_slsh.slsh import KINDS, METRICS, SlshParams, build, load_index, save_index

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("ahe_slsh")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


_SLSH_FLAGS = {
    "L_out": ("--L-out", int), "m_out": ("--m-out", int), "L_in": ("--L-in", int),
    "m_in": ("--m-in", int), "alpha": ("--alpha", float), "k": ("--k", int),
    "outer_kind": ("--outer-kind", str), "inner_kind": ("--inner-kind", str),
    "metric": ("--metric", str),
}
_SCHEDULE_FLAGS = {"epochs": ("--epochs", int), "lr": ("--lr", float),
                   "batch_size": ("--batch-size", int)}


def _add_slsh(p):
    g = p.add_argument_group("SLSH parameters")
    for name, (flag, typ) in _SLSH_FLAGS.items():
        kw = {"choices": KINDS} if name.endswith("kind") else {"choices": METRICS} if name == "metric" else {}
        g.add_argument(flag, dest=name, type=typ, default=None, **kw)


def _add_schedule(p):
    g = p.add_argument_group("training schedule")
    for name, (flag, typ) in _SCHEDULE_FLAGS.items():
        g.add_argument(flag, dest=name, type=typ, default=None)


def _slsh_from(args, base: SlshParams | None = None) -> SlshParams:
    base = base or SlshParams()
    over = {n: getattr(args, n) for n in _SLSH_FLAGS if getattr(args, n, None) is not None}
    return dataclasses.replace(base, **over)


def _schedule_from(args, base: Schedule | None = None) -> Schedule:
    base = base or Schedule()
    over = {n: getattr(args, n) for n in _SCHEDULE_FLAGS if getattr(args, n, None) is not None}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    return dataclasses.replace(base, **over)


def cmd_synth(args):
    spec = SynthSpec.from_file(args.spec) if args.spec else SynthSpec()
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    if args.n_stays is not None:
        spec = dataclasses.replace(spec, n_stays=args.n_stays)
    from ahe_slsh.harness.synth import synth_generate
    stays = synth_generate(spec)
    write_csv(stays, args.out)
    log.info("wrote %d stays to %s", len(stays), args.out)


def cmd_preprocess(args):
    stays = load_csv(args.csv)
    split = preprocess(stays, args.lead, args.window_hours, tuple(args.ratios), args.seed or 0,
                       args.exclusion_threshold, args.map_channel)
    save_dataset(split, args.out)
    log.info("train/validation/test = %d/%d/%d", len(split.train), len(split.validation), len(split.test))


def _train_array(split):
    if not split.train:
        raise DataError("dataset has an empty train split")
    return np.stack([ex.window.values for ex in split.train])


def cmd_train(args):
    split = load_dataset(args.dataset)
    cfg = ModelConfig(args.arch, args.hidden, args.section_len, args.layers)
    model, history = train(cfg, _train_array(split), _schedule_from(args))
    save_model(model, args.out)
    if args.history:
        Path(args.history).write_text("epoch,loss\n" + "".join(
            f"{i + 1},{v!r}\n" for i, v in enumerate(history)), encoding="utf-8")


def cmd_encode(args):
    model = load_model(args.model)
    split = load_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in split.parts().items():
        if part:
            vecs = encode_batch(model, np.stack([ex.window.values for ex in part]))
        else:
            vecs = np.empty((0, model.context_dim))
        save_contexts(out / f"{name}.csv", [ex.label for ex in part], vecs)


def cmd_index(args):
    ids, _, vecs = load_contexts(args.contexts)
    if not ids:
        raise DataError(f"{args.contexts}: no vectors to index")
    index = build(dict(zip(ids, vecs)), _slsh_from(args), seed=args.seed or 0)
    save_index(index, args.out)


def cmd_evaluate(args):
    index = load_index(args.index)
    lab_ids, labs, _ = load_contexts(args.labels)
    q_ids, q_labels, q_vecs = load_contexts(args.contexts)
    res = classify(index, dict(zip(lab_ids, labs)), dict(zip(q_ids, q_vecs)),
                   dict(zip(q_ids, q_labels)), k=args.k)
    if res.counts.total == 0:
        raise DataError("no query vectors to evaluate")
    acc, mcc = metrics(res.counts)
    out = {"accuracy": acc, "mcc": mcc, **dataclasses.asdict(res.counts),
           "fallback_rate": res.fallback_rate, "mean_candidates": res.mean_candidates,
           "predictions": {str(k): v for k, v in res.predictions.items()}}
    text = json.dumps(out, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(f"accuracy={acc:.4f} mcc={mcc:.4f} fallback_rate={res.fallback_rate:.4f}")


def cmd_experiment(args):
    config = ExperimentConfig.from_file(args.config)
    config = dataclasses.replace(config, slsh=_slsh_from(args, config.slsh),
                                 schedule=_schedule_from(args, config.schedule))
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    report = run_experiment(config)
    for path in export_report(report, args.out):
        log.info("wrote %s", path)
    for row in report.results:
        print(f"{row['model']:>16} lead={row['lead_minutes']:>3} {row['split']:>10} "
              f"acc={row['accuracy']:.4f} mcc={row['mcc']:.4f}")


def cmd_export(args):
    report = Report.load(args.report)
    for path in export_report(report, args.out):
        log.info("wrote %s", path)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ahe-slsh", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate synthetic stays as CSV")
    p.add_argument("--spec", help="SynthSpec as JSON or TOML")
    p.add_argument("--n-stays", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="CSV stays -> dataset directory")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lead", type=int, default=30, help="lead time in minutes")
    p.add_argument("--window-hours", type=float, default=6)
    p.add_argument("--ratios", type=int, nargs=3, default=[81, 9, 10])
    p.add_argument("--exclusion-threshold", type=float, default=0.85)
    p.add_argument("--map-channel", default="MAP")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train an auto-encoder on a dataset's train split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--arch", choices=ARCHITECTURES, default="BSS")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--section-len", type=int, default=0)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="optional CSV of per-epoch loss")
    p.add_argument("--seed", type=int)
    _add_schedule(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="model + dataset -> per-split context CSVs")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("index", help="context CSV -> SLSH index file")
    p.add_argument("--contexts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_slsh(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("evaluate", help="classify query contexts against an index")
    p.add_argument("--index", required=True)
    p.add_argument("--labels", required=True, help="context CSV of the indexed (train) vectors")
    p.add_argument("--contexts", required=True, help="context CSV of the query vectors")
    p.add_argument("--k", type=int)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a full experiment from one config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_slsh(p)
    _add_schedule(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("export", help="report.json -> csv/svg files")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (AheError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
