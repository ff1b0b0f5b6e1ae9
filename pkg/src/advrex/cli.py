"""Command-line driver: train, attack, diagnose, report, all.

The pipeline is staged through files (JSONL records and diagnoses, JSON
summaries, CSV figure data) so any stage can be rerun without repeating
the ones before it. Exit codes: 0 on success, 1 on a validation problem,
2 on an I/O problem.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .attack import (
    METHODS,
    AttackBudget,
    read_records_jsonl,
    run_attack_campaign,
    write_records_jsonl,
)
from .corpus import CorpusError, load_dataset, load_synonyms
from .diagnosis import (
    build_cooccurrence,
    diagnose_campaign,
    read_diagnoses_jsonl,
    write_diagnoses_jsonl,
)
from .model import ModelError, TrainConfig, accuracy, load_classifier, save_classifier, train
from .report import (
    CampaignStats,
    FigureData,
    compute_stats,
    emit,
    emit_bins_csv,
    emit_pairs_csv,
    pair_rows_from_diagnoses,
)


class _Parser(argparse.ArgumentParser):
    """Argument errors are validation errors, so exit 1 instead of 2."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="advrex", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", parents=[], help="fit the classifier")
    p_train.add_argument("--data", required=True, help="training JSONL")
    p_train.add_argument("--seed", type=int, required=True)
    p_train.add_argument("--out-dir", required=True)
    p_train.add_argument("--dim", type=int, default=64)
    p_train.add_argument("--hidden", type=int, default=64)
    p_train.add_argument("--epochs", type=int, default=40)
    p_train.add_argument("--lr", type=float, default=0.5)
    p_train.add_argument("--batch-size", type=int, default=32)
    p_train.add_argument("--min-freq", type=int, default=1)

    p_attack = sub.add_parser("attack", help="run one attack campaign")
    p_attack.add_argument("--model", required=True)
    p_attack.add_argument("--data", required=True, help="test JSONL")
    p_attack.add_argument("--method", required=True, choices=METHODS)
    p_attack.add_argument("--synonyms", help="TSV lexicon (pwws/textfooler)")
    p_attack.add_argument("--epsilon", type=float, default=0.85)
    p_attack.add_argument("--max-perturb", type=float, default=0.4)
    p_attack.add_argument("--max-queries", type=int, default=1000)
    p_attack.add_argument("--seed", type=int, required=True)
    p_attack.add_argument("--out-dir", required=True)

    p_diag = sub.add_parser("diagnose", help="analyze attack records")
    p_diag.add_argument("--model", required=True)
    p_diag.add_argument("--records", required=True)
    p_diag.add_argument("--data", required=True, help="training JSONL (co-occurrence)")
    p_diag.add_argument("--steps", type=int, default=50, help="integration steps")
    p_diag.add_argument("--top-n", type=int, default=3)
    p_diag.add_argument("--pmi-threshold", type=float, default=2.0)
    p_diag.add_argument("--bins", type=int, default=20)
    p_diag.add_argument("--out-dir", required=True)

    p_rep = sub.add_parser("report", help="emit campaign statistics")
    p_rep.add_argument("--records", nargs="+", required=True)
    p_rep.add_argument("--diagnoses", nargs="+", required=True)
    p_rep.add_argument("--campaign", nargs="+", required=True)
    p_rep.add_argument("--diag-meta", nargs="*", default=[])
    p_rep.add_argument("--format", default="json,csv,markdown")
    p_rep.add_argument("--out-dir", required=True)

    p_all = sub.add_parser("all", help="train, attack all methods, diagnose, report")
    p_all.add_argument("--data", required=True, help="training JSONL")
    p_all.add_argument("--test", required=True, help="test JSONL")
    p_all.add_argument("--synonyms", required=True)
    p_all.add_argument("--seed", type=int, required=True)
    p_all.add_argument("--out-dir", required=True)
    p_all.add_argument("--dim", type=int, default=64)
    p_all.add_argument("--hidden", type=int, default=64)
    p_all.add_argument("--epochs", type=int, default=40)
    p_all.add_argument("--lr", type=float, default=0.5)
    p_all.add_argument("--batch-size", type=int, default=32)
    p_all.add_argument("--min-freq", type=int, default=1)
    p_all.add_argument("--epsilon", type=float, default=0.85)
    p_all.add_argument("--max-perturb", type=float, default=0.4)
    p_all.add_argument("--max-queries", type=int, default=1000)
    p_all.add_argument("--steps", type=int, default=50)
    p_all.add_argument("--top-n", type=int, default=3)
    p_all.add_argument("--pmi-threshold", type=float, default=2.0)
    p_all.add_argument("--bins", type=int, default=20)
    p_all.add_argument("--format", default="json,csv,markdown")
    return parser


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    instances = load_dataset(args.data)
    config = TrainConfig(
        dim=args.dim,
        hidden=args.hidden,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        min_freq=args.min_freq,
    )
    clf = train(instances, config, args.seed)
    out = _out_dir(args)
    save_classifier(clf, out / "model.json")
    print(
        f"trained on {len(instances)} instances, {len(clf.labels)} labels, "
        f"vocab {len(clf.vocab)}, train accuracy {accuracy(clf, instances):.3f} "
        f"-> {out / 'model.json'}"
    )
    return 0


def _run_attack(clf, test, method, budget, lexicon, seed, dataset_name, model_name, out):
    records, summary = run_attack_campaign(clf, test, method, budget, lexicon)
    summary["seed"] = seed
    summary["dataset"] = dataset_name
    summary["model"] = model_name
    write_records_jsonl(records, out / f"records_{method}.jsonl")
    (out / f"campaign_{method}.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(
        f"{method}: {summary['n_success']}/{summary['n_correct']} "
        f"({summary['success_rate_percent']:.2f}%) -> {out / f'records_{method}.jsonl'}"
    )
    return records, summary


def cmd_attack(args) -> int:
    clf = load_classifier(args.model)
    test = load_dataset(args.data)
    lexicon = load_synonyms(args.synonyms) if args.synonyms else None
    budget = AttackBudget(
        max_perturb_frac=args.max_perturb,
        max_queries=args.max_queries,
        epsilon=args.epsilon,
    )
    out = _out_dir(args)
    model_name = _model_name(clf)
    _run_attack(
        clf, test, args.method, budget, lexicon, args.seed, Path(args.data).stem,
        model_name, out,
    )
    return 0


def _model_name(clf) -> str:
    return f"mlp-d{clf.config.dim}-h{clf.config.hidden}"


def _run_diagnose(clf, records, train_insts, args, out, method):
    table = build_cooccurrence(train_insts)
    bundle = diagnose_campaign(
        clf,
        records,
        clf.vocab,
        table,
        top_n=args.top_n,
        steps=args.steps,
        theta=args.pmi_threshold,
        bins=args.bins,
    )
    write_diagnoses_jsonl(bundle.diagnoses, out / f"diagnoses_{method}.jsonl")
    meta = {
        "method": method,
        "trend": bundle.trend,
        "top_n": bundle.top_n,
        "steps": bundle.steps,
        "pmi_threshold": bundle.theta,
        "bins": bundle.bins,
        "histogram": [
            {
                "lo": b.lo,
                "hi": b.hi,
                "token_count": b.token_count,
                "edited_count": b.edited_count,
                "ratio": b.ratio,
            }
            for b in bundle.histogram
        ],
    }
    (out / f"diag_meta_{method}.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    emit_pairs_csv(
        pair_rows_from_diagnoses(records, bundle.diagnoses),
        out / f"fig3_pairs_{method}.csv",
    )
    emit_bins_csv(bundle.histogram, out / f"fig4_bins_{method}.csv")
    trend = "n/a" if bundle.trend is None else f"{bundle.trend:.3f}"
    print(
        f"diagnosed {len(bundle.diagnoses)} successful {method} records, "
        f"salience-bin trend {trend}"
    )
    return bundle


def cmd_diagnose(args) -> int:
    clf = load_classifier(args.model)
    records = read_records_jsonl(args.records)
    train_insts = load_dataset(args.data)
    method = records[0].method if records else "unknown"
    out = _out_dir(args)
    _run_diagnose(clf, records, train_insts, args, out, method)
    return 0


def cmd_report(args) -> int:
    if len(args.records) != len(args.diagnoses) or len(args.records) != len(args.campaign):
        raise CorpusError("--records, --diagnoses and --campaign must align")
    metas = [json.loads(Path(p).read_text(encoding="utf-8")) for p in args.diag_meta]
    meta_by_method = {m["method"]: m for m in metas}
    stats: list[CampaignStats] = []
    trends = {}
    for rec_path, diag_path, camp_path in zip(args.records, args.diagnoses, args.campaign):
        records = read_records_jsonl(rec_path)
        diagnoses = read_diagnoses_jsonl(diag_path)
        campaign = json.loads(Path(camp_path).read_text(encoding="utf-8"))
        meta = meta_by_method.get(campaign["method"], {})
        stats.append(
            compute_stats(
                records,
                diagnoses,
                campaign["n_correct"],
                model_name=campaign.get("model", "mlp"),
                method=campaign["method"],
                dataset=campaign.get("dataset", "unknown"),
                epsilon=campaign["epsilon"],
                max_perturb_frac=campaign["max_perturb_frac"],
                max_queries=campaign["max_queries"],
                top_n=meta.get("top_n", 3),
                pmi_threshold=meta.get("pmi_threshold", 2.0),
                ig_steps=meta.get("steps", 50),
                seed=campaign.get("seed"),
            )
        )
        if "trend" in meta:
            trends[campaign["method"]] = meta["trend"]
    out = _out_dir(args)
    formats = [f.strip() for f in args.format.split(",") if f.strip()]
    extras = {"figure_trend": trends} if trends else None
    written = emit(stats, None, out, formats, extras=extras)
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_all(args) -> int:
    train_insts = load_dataset(args.data)
    test_insts = load_dataset(args.test)
    lexicon = load_synonyms(args.synonyms)
    config = TrainConfig(
        dim=args.dim,
        hidden=args.hidden,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        min_freq=args.min_freq,
    )
    clf = train(train_insts, config, args.seed)
    out = _out_dir(args)
    save_classifier(clf, out / "model.json")
    model_name = _model_name(clf)
    dataset_name = Path(args.test).stem
    budget = AttackBudget(
        max_perturb_frac=args.max_perturb,
        max_queries=args.max_queries,
        epsilon=args.epsilon,
    )
    stats: list[CampaignStats] = []
    trends = {}
    for method in METHODS:
        records, summary = _run_attack(
            clf, test_insts, method, budget, lexicon, args.seed, dataset_name,
            model_name, out,
        )
        bundle = _run_diagnose(clf, records, train_insts, args, out, method)
        trends[method] = bundle.trend
        stats.append(
            compute_stats(
                records,
                bundle.diagnoses,
                summary["n_correct"],
                model_name=model_name,
                method=method,
                dataset=dataset_name,
                epsilon=budget.epsilon,
                max_perturb_frac=budget.max_perturb_frac,
                max_queries=budget.max_queries,
                top_n=args.top_n,
                pmi_threshold=args.pmi_threshold,
                ig_steps=args.steps,
                seed=args.seed,
            )
        )
    formats = [f.strip() for f in args.format.split(",") if f.strip()]
    written = emit(stats, None, out, formats, extras={"figure_trend": trends})
    for path in written:
        print(f"wrote {path}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "diagnose": cmd_diagnose,
    "report": cmd_report,
    "all": cmd_all,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (CorpusError, ModelError, ValueError, KeyError) as exc:
        print(f"advrex: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"advrex: i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
