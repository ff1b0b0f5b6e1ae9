"""Campaign statistics and deterministic file emission.

The markdown table carries the per-method statistics columns in the
order Avg. Perturb, % Salience, % OOD, Avg. Confidence. JSON output
preserves raw doubles; tables render percentages to two decimals. With
zero successes the per-success averages are absent, not zero.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from .attack import AdversarialRecord
from .diagnosis import HistogramBin, SampleDiagnosis


def success_rate_percent(successes: int, correct: int) -> float:
    """Success percentage rounded to two decimals; 0.0 when nothing was correct."""
    if correct <= 0:
        return 0.0
    return round(100.0 * successes / correct, 2)


@dataclass
class CampaignStats:
    model_name: str
    method: str
    dataset: str
    n_correct: int
    n_success: int
    success_rate: float  # percent, two decimals
    avg_perturb: float | None
    pct_salience: float | None
    pct_ood: float | None
    avg_confidence: float | None
    epsilon: float
    max_perturb_frac: float
    max_queries: int
    top_n: int
    pmi_threshold: float
    ig_steps: int
    seed: int | None = None


def compute_stats(
    records: Sequence[AdversarialRecord],
    diagnoses: Sequence[SampleDiagnosis],
    n_correct: int,
    *,
    model_name: str,
    method: str,
    dataset: str,
    epsilon: float,
    max_perturb_frac: float,
    max_queries: int,
    top_n: int,
    pmi_threshold: float,
    ig_steps: int,
    seed: int | None = None,
) -> CampaignStats:
    """Aggregate a campaign; diagnoses must align 1:1 with successful records."""
    successes = [r for r in records if r.success]
    if len(successes) != len(diagnoses):
        raise ValueError(
            f"{len(diagnoses)} diagnoses for {len(successes)} successful records"
        )
    n = len(successes)
    if n:
        avg_perturb = sum(r.edit_script.cost for r in successes) / n
        pct_salience = 100.0 * sum(d.sample_type == "type1" for d in diagnoses) / n
        pct_ood = 100.0 * sum(bool(d.ood_tokens) for d in diagnoses) / n
        avg_confidence = sum(d.confidence_drop for d in diagnoses) / n
    else:
        avg_perturb = pct_salience = pct_ood = avg_confidence = None
    return CampaignStats(
        model_name=model_name,
        method=method,
        dataset=dataset,
        n_correct=n_correct,
        n_success=n,
        success_rate=success_rate_percent(n, n_correct),
        avg_perturb=avg_perturb,
        pct_salience=pct_salience,
        pct_ood=pct_ood,
        avg_confidence=avg_confidence,
        epsilon=epsilon,
        max_perturb_frac=max_perturb_frac,
        max_queries=max_queries,
        top_n=top_n,
        pmi_threshold=pmi_threshold,
        ig_steps=ig_steps,
        seed=seed,
    )


@dataclass(eq=False)
class FigureData:
    """Raw points behind the scatter and histogram exports."""

    pair_rows: list[dict]  # record_index, kind, orig_pos, adv_pos, orig/adv score
    bins: list[HistogramBin]
    trend: float | None


def pair_rows_from_diagnoses(
    records: Sequence[AdversarialRecord], diagnoses: Sequence[SampleDiagnosis]
) -> list[dict]:
    """Flatten perturbed-position score pairs for CSV export."""
    rows = []
    by_index = {r.index: r for r in records}
    for diag in diagnoses:
        record = by_index[diag.record_index]
        for op, (orig_score, adv_score) in zip(record.edit_script.ops, diag.pairs):
            rows.append(
                {
                    "record_index": diag.record_index,
                    "kind": op.kind,
                    "orig_pos": op.orig_pos,
                    "adv_pos": op.adv_pos,
                    "orig_score": orig_score,
                    "adv_score": adv_score,
                }
            )
    return rows


def _fmt2(value: float | None) -> str:
    return "" if value is None else f"{value:.2f}"


def _stats_dict(stats: CampaignStats) -> dict:
    payload = asdict(stats)
    payload["success_rate_raw"] = (
        100.0 * stats.n_success / stats.n_correct if stats.n_correct else 0.0
    )
    return payload


def emit_stats_json(stats: Sequence[CampaignStats], path: Path, extras: dict | None = None) -> None:
    payload = {"stats": [_stats_dict(s) for s in stats]}
    if extras:
        payload.update(extras)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_stats_json(path: str | Path) -> list[CampaignStats]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    out = []
    for entry in payload["stats"]:
        entry = dict(entry)
        entry.pop("success_rate_raw", None)
        out.append(CampaignStats(**entry))
    return out


_CSV_COLUMNS = [
    "model_name",
    "method",
    "dataset",
    "n_correct",
    "n_success",
    "success_rate",
    "avg_perturb",
    "pct_salience",
    "pct_ood",
    "avg_confidence",
    "epsilon",
    "max_perturb_frac",
    "max_queries",
    "top_n",
    "pmi_threshold",
    "ig_steps",
    "seed",
]


def emit_stats_csv(stats: Sequence[CampaignStats], path: Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for s in stats:
        row = []
        for col in _CSV_COLUMNS:
            value = getattr(s, col)
            if col in ("avg_perturb", "pct_salience", "pct_ood", "avg_confidence"):
                row.append(_fmt2(value))
            elif value is None:
                row.append("")
            else:
                row.append(value)
        writer.writerow(row)
    path.write_text(buf.getvalue(), encoding="utf-8")


def emit_stats_markdown(stats: Sequence[CampaignStats], path: Path) -> None:
    lines = [
        "| Model | Method | Dataset | Correct | Adversarial | Success Rate "
        "| Avg. Perturb | % Salience | % OOD | Avg. Confidence |",
        "|---|---|---|---|---|---|---|---|---|---|",
    ]
    for s in stats:
        lines.append(
            "| {model} | {method} | {dataset} | {correct} | {adv} | {rate:.2f}% "
            "| {perturb} | {salience} | {ood} | {conf} |".format(
                model=s.model_name,
                method=s.method,
                dataset=s.dataset,
                correct=s.n_correct,
                adv=s.n_success,
                rate=s.success_rate,
                perturb=_fmt2(s.avg_perturb) or "-",
                salience=_fmt2(s.pct_salience) or "-",
                ood=_fmt2(s.pct_ood) or "-",
                conf=_fmt2(s.avg_confidence) or "-",
            )
        )
    if stats:
        s = stats[0]
        lines.append("")
        lines.append(
            f"Budget: epsilon={s.epsilon}, max_perturb_frac={s.max_perturb_frac}, "
            f"max_queries={s.max_queries}; diagnosis: top_n={s.top_n}, "
            f"pmi_threshold={s.pmi_threshold}, ig_steps={s.ig_steps}."
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def emit_pairs_csv(rows: Sequence[dict], path: Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["record_index", "kind", "orig_pos", "adv_pos", "orig_score", "adv_score"])
    for row in rows:
        writer.writerow(
            [
                row["record_index"],
                row["kind"],
                "" if row["orig_pos"] is None else row["orig_pos"],
                "" if row["adv_pos"] is None else row["adv_pos"],
                repr(float(row["orig_score"])),
                repr(float(row["adv_score"])),
            ]
        )
    path.write_text(buf.getvalue(), encoding="utf-8")


def emit_bins_csv(bins: Sequence[HistogramBin], path: Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bin_index", "lo", "hi", "token_count", "edited_count", "perturbation_ratio"])
    for i, b in enumerate(bins):
        writer.writerow(
            [i, repr(b.lo), repr(b.hi), b.token_count, b.edited_count, repr(b.ratio)]
        )
    path.write_text(buf.getvalue(), encoding="utf-8")


def emit(
    stats: Sequence[CampaignStats],
    figures: FigureData | None,
    out_dir: str | Path,
    formats: Sequence[str] = ("json", "csv", "markdown"),
    extras: dict | None = None,
) -> list[Path]:
    """Write stats (and optional figure data) deterministically; same inputs,
    same bytes."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for fmt in formats:
        if fmt == "json":
            path = out_dir / "stats.json"
            if figures is not None:
                extras = dict(extras or {})
                extras.setdefault("figure_trend", figures.trend)
            emit_stats_json(stats, path, extras)
        elif fmt == "csv":
            path = out_dir / "stats.csv"
            emit_stats_csv(stats, path)
        elif fmt in ("markdown", "markdown-table", "md"):
            path = out_dir / "stats.md"
            emit_stats_markdown(stats, path)
        else:
            raise ValueError(f"unknown format {fmt!r}")
        written.append(path)
    if figures is not None:
        pairs_path = out_dir / "fig3_pairs.csv"
        emit_pairs_csv(figures.pair_rows, pairs_path)
        written.append(pairs_path)
        bins_path = out_dir / "fig4_bins.csv"
        emit_bins_csv(figures.bins, bins_path)
        written.append(bins_path)
    return written
