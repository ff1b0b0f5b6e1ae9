"""Analysis of adversarial records: alignment, salience types, OOD, spurious cues.

The token matcher is a unit-cost Levenshtein alignment whose ties prefer
substitutions, then deletions, resolved left to right, so the same pair
of sentences always yields the same edit script.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .attribution import SalienceProfile, integrated_gradients, salience_scores
from .corpus import Instance, MarkedSequence, Vocabulary, insert_markers

if TYPE_CHECKING:
    from .attack import AdversarialRecord
    from .model import Classifier

SUBSTITUTE = "substitute"
DELETE = "delete"
INSERT = "insert"

TYPE1 = "type1"
TYPE2 = "type2"


class UnseenTokenError(KeyError):
    """Raised when a spurious score is requested for a token never seen in training."""


@dataclass(frozen=True)
class EditOp:
    kind: str
    orig_pos: int | None = None
    adv_pos: int | None = None
    old_token: str | None = None
    new_token: str | None = None


@dataclass(frozen=True)
class EditScript:
    """Minimal edit operations plus the alignment of untouched tokens."""

    ops: tuple[EditOp, ...]
    matches: tuple[tuple[int, int], ...]
    orig_len: int
    adv_len: int

    @property
    def cost(self) -> int:
        return len(self.ops)

    def touched_original(self) -> frozenset[int]:
        return frozenset(
            op.orig_pos for op in self.ops if op.kind in (SUBSTITUTE, DELETE)
        )

    def introduced_tokens(self) -> tuple[str, ...]:
        """Adversarial-side tokens created by substitutions and insertions."""
        return tuple(op.new_token for op in self.ops if op.kind in (SUBSTITUTE, INSERT))

    def apply(self, original: Sequence[str]) -> list[str]:
        """Rebuild the adversarial token list from the original one."""
        if len(original) != self.orig_len:
            raise ValueError(
                f"script built for {self.orig_len} tokens, got {len(original)}"
            )
        out: list[str | None] = [None] * self.adv_len
        for i, j in self.matches:
            out[j] = original[i]
        for op in self.ops:
            if op.kind in (SUBSTITUTE, INSERT):
                out[op.adv_pos] = op.new_token
        if any(tok is None for tok in out):
            raise ValueError("edit script does not cover every adversarial position")
        return out  # type: ignore[return-value]


def align_tokens(original: Sequence[str], adversarial: Sequence[str]) -> EditScript:
    """Minimal-cost alignment under unit costs for substitute/insert/delete."""
    a, b = list(original), list(adversarial)
    n, m = len(a), len(b)
    # dist[i][j] = edit distance between a[i:] and b[j:]
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[n, :] = np.arange(m, -1, -1)
    dist[:, m] = np.arange(n, -1, -1)
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            same = a[i] == b[j]
            dist[i, j] = min(
                dist[i + 1, j + 1] + (0 if same else 1),
                dist[i + 1, j] + 1,
                dist[i, j + 1] + 1,
            )
    ops: list[EditOp] = []
    matches: list[tuple[int, int]] = []
    i = j = 0
    while i < n or j < m:
        here = dist[i, j]
        if i < n and j < m and a[i] == b[j] and dist[i + 1, j + 1] == here:
            matches.append((i, j))
            i, j = i + 1, j + 1
        elif i < n and j < m and dist[i + 1, j + 1] + 1 == here:
            ops.append(
                EditOp(SUBSTITUTE, orig_pos=i, adv_pos=j, old_token=a[i], new_token=b[j])
            )
            i, j = i + 1, j + 1
        elif i < n and dist[i + 1, j] + 1 == here:
            ops.append(EditOp(DELETE, orig_pos=i, old_token=a[i]))
            i += 1
        else:
            ops.append(EditOp(INSERT, adv_pos=j, new_token=b[j]))
            j += 1
    return EditScript(ops=tuple(ops), matches=tuple(matches), orig_len=n, adv_len=m)


def script_from_ops(ops: Sequence[EditOp], orig_len: int, adv_len: int) -> EditScript:
    """Rebuild a full script (with untouched-token alignment) from its ops."""
    touched_orig = {op.orig_pos for op in ops if op.kind in (SUBSTITUTE, DELETE)}
    touched_adv = {op.adv_pos for op in ops if op.kind in (SUBSTITUTE, INSERT)}
    free_orig = [i for i in range(orig_len) if i not in touched_orig]
    free_adv = [j for j in range(adv_len) if j not in touched_adv]
    if len(free_orig) != len(free_adv):
        raise ValueError("edit ops are inconsistent with the stated lengths")
    return EditScript(
        ops=tuple(ops),
        matches=tuple(zip(free_orig, free_adv)),
        orig_len=orig_len,
        adv_len=adv_len,
    )


def adversarial_instance(record: AdversarialRecord) -> Instance:
    """The adversarial sentence as an Instance, entity spans mapped through
    the alignment. Valid records never edit entity tokens, so the spans
    always survive."""
    amap = dict(record.edit_script.matches)

    def mapped(span: tuple[int, int]) -> tuple[int, int]:
        lo, hi = span
        cols = []
        for pos in range(lo, hi + 1):
            if pos not in amap:
                raise ValueError(f"entity position {pos} was edited")
            cols.append(amap[pos])
        if cols != list(range(cols[0], cols[0] + len(cols))):
            raise ValueError(f"entity span {span} no longer contiguous")
        return cols[0], cols[-1]

    return Instance(
        tokens=tuple(record.adversarial_tokens),
        head_span=mapped(record.original.head_span),
        tail_span=mapped(record.original.tail_span),
        label=record.original.label,
    )


def _rankable_positions(marked: MarkedSequence, instance: Instance) -> list[tuple[int, int]]:
    """(marked position, word position) pairs eligible for salience ranking:
    ordinary words outside the entity spans. Markers never rank."""
    entity = instance.entity_positions
    return [
        (pos, org)
        for pos, org in enumerate(marked.origin)
        if org is not None and org not in entity
    ]


def top_salience_positions(
    instance: Instance, marked: MarkedSequence, profile: SalienceProfile, n: int
) -> set[int]:
    """Word positions of the n highest-salience rankable tokens.

    Ties rank the earlier position first.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    eligible = _rankable_positions(marked, instance)
    ranked = sorted(eligible, key=lambda pw: (-profile.scores[pw[0]], pw[0]))
    return {word_pos for _, word_pos in ranked[:n]}


def classify_sample(
    record: AdversarialRecord, orig_salience: SalienceProfile, n: int = 3
) -> str:
    """"type1" if any edited original position is among the top-n salience
    positions of the original sample, else "type2"."""
    marked = insert_markers(record.original)
    top = top_salience_positions(record.original, marked, orig_salience, n)
    return TYPE1 if record.edit_script.touched_original() & top else TYPE2


def perturbed_salience_pairs(
    record: AdversarialRecord,
    orig_salience: SalienceProfile,
    adv_salience: SalienceProfile,
) -> list[tuple[float, float]]:
    """(original score, adversarial score) per edit.

    Insertions have no original position and score (0, adv); deletions
    score (orig, 0).
    """
    orig_marked = insert_markers(record.original)
    adv_marked = insert_markers(adversarial_instance(record))
    pairs: list[tuple[float, float]] = []
    for op in record.edit_script.ops:
        if op.kind == SUBSTITUTE:
            pairs.append(
                (
                    float(orig_salience.scores[orig_marked.marked_pos(op.orig_pos)]),
                    float(adv_salience.scores[adv_marked.marked_pos(op.adv_pos)]),
                )
            )
        elif op.kind == DELETE:
            pairs.append(
                (float(orig_salience.scores[orig_marked.marked_pos(op.orig_pos)]), 0.0)
            )
        else:
            pairs.append(
                (0.0, float(adv_salience.scores[adv_marked.marked_pos(op.adv_pos)]))
            )
    return pairs


@dataclass(frozen=True)
class HistogramBin:
    lo: float
    hi: float
    token_count: int
    edited_count: int
    ratio: float


def salience_histogram(
    instances: Sequence[Instance],
    profiles: Sequence[SalienceProfile],
    scripts: Sequence[EditScript],
    bins: int = 20,
) -> list[HistogramBin]:
    """Token counts and perturbation ratios over equal-width score bins.

    Counts every rankable (non-entity, non-marker) token of the original
    samples; a token is "edited" when its position appears in the
    sample's edit script. Requires normalized profiles.
    """
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    if not (len(instances) == len(profiles) == len(scripts)):
        raise ValueError("instances, profiles and scripts must align")
    counts = np.zeros(bins, dtype=np.int64)
    edited = np.zeros(bins, dtype=np.int64)
    for inst, prof, script in zip(instances, profiles, scripts):
        if not prof.normalized:
            raise ValueError("histogram requires normalized salience profiles")
        marked = insert_markers(inst)
        touched = script.touched_original()
        for marked_pos, word_pos in _rankable_positions(marked, inst):
            score = float(prof.scores[marked_pos])
            b = min(int(score * bins), bins - 1)
            counts[b] += 1
            if word_pos in touched:
                edited[b] += 1
    out = []
    for b in range(bins):
        ratio = float(edited[b] / counts[b]) if counts[b] else 0.0
        out.append(
            HistogramBin(
                lo=b / bins,
                hi=(b + 1) / bins,
                token_count=int(counts[b]),
                edited_count=int(edited[b]),
                ratio=ratio,
            )
        )
    return out


def histogram_trend(bins: Sequence[HistogramBin]) -> float | None:
    """Spearman rank correlation between bin index and perturbation ratio
    over non-empty bins; None when fewer than two bins qualify or the
    ratios are constant."""
    from scipy import stats

    pts = [(i, b.ratio) for i, b in enumerate(bins) if b.token_count > 0]
    if len(pts) < 2:
        return None
    idx, ratios = zip(*pts)
    if len(set(ratios)) == 1:
        return None
    rho = stats.spearmanr(idx, ratios).statistic
    return None if math.isnan(rho) else float(rho)


def detect_ood(record: AdversarialRecord, vocab: Vocabulary) -> list[str]:
    """Tokens the edit script introduced that never occur in training."""
    return [
        tok for tok in record.edit_script.introduced_tokens() if vocab.freq(tok) == 0
    ]


@dataclass(frozen=True, eq=False)
class CooccurrenceTable:
    """Sentence-level (token, label) co-occurrence counts from the training split."""

    joint: dict[tuple[str, str], int]
    token_counts: dict[str, int]
    label_counts: dict[str, int]
    total: int

    @property
    def n_tokens(self) -> int:
        return len(self.token_counts)

    @property
    def n_labels(self) -> int:
        return len(self.label_counts)


def build_cooccurrence(train: Sequence[Instance]) -> CooccurrenceTable:
    if not train:
        raise ValueError("cannot build a co-occurrence table from no instances")
    joint: Counter[tuple[str, str]] = Counter()
    token_counts: Counter[str] = Counter()
    label_counts: Counter[str] = Counter()
    for inst in train:
        label_counts[inst.label] += 1
        for tok in set(inst.tokens):
            joint[(tok, inst.label)] += 1
            token_counts[tok] += 1
    return CooccurrenceTable(
        joint=dict(joint),
        token_counts=dict(token_counts),
        label_counts=dict(label_counts),
        total=len(train),
    )


def spurious_score(table: CooccurrenceTable, token: str, label: str) -> float:
    """Add-one-smoothed pointwise mutual information, in nats.

    The smoothed joint distributes one pseudo-count over every
    (token, label) cell; marginals are taken from the smoothed joint so
    the three probabilities stay consistent.
    """
    if token not in table.token_counts:
        raise UnseenTokenError(token)
    if label not in table.label_counts:
        raise KeyError(f"label {label!r} not in the training label set")
    denom = table.total + table.n_tokens * table.n_labels
    p_joint = (table.joint.get((token, label), 0) + 1) / denom
    p_token = (table.token_counts[token] + table.n_labels) / denom
    p_label = (table.label_counts[label] + table.n_tokens) / denom
    return math.log(p_joint / (p_token * p_label))


def confidence_drop(record: AdversarialRecord) -> float:
    """Adversarial confidence minus original confidence (negative means
    the model got less sure)."""
    return record.adversarial_prediction.confidence - record.original_prediction.confidence


@dataclass(eq=False)
class SampleDiagnosis:
    record_index: int | None
    sample_type: str
    pairs: tuple[tuple[float, float], ...]
    ood_tokens: tuple[str, ...]
    spurious_scores: dict[str, float]
    spurious_flagged: bool
    confidence_drop: float

    def __post_init__(self) -> None:
        if not -1.0 <= self.confidence_drop <= 1.0:
            raise ValueError(f"confidence drop {self.confidence_drop} outside [-1, 1]")


def diagnose_record(
    clf: Classifier,
    record: AdversarialRecord,
    vocab: Vocabulary,
    table: CooccurrenceTable,
    *,
    top_n: int = 3,
    steps: int = 50,
    theta: float = 2.0,
) -> tuple[SampleDiagnosis, SalienceProfile]:
    """Full per-record analysis.

    Salience targets each sequence's own predicted label. Returns the
    diagnosis plus the original sample's normalized profile (reused for
    the histogram).
    """
    orig_marked = insert_markers(record.original)
    adv_marked = insert_markers(adversarial_instance(record))
    orig_prof = salience_scores(
        integrated_gradients(clf, orig_marked, record.original_prediction.label, steps)
    )
    adv_prof = salience_scores(
        integrated_gradients(clf, adv_marked, record.adversarial_prediction.label, steps)
    )
    sample_type = classify_sample(record, orig_prof, top_n)
    pairs = perturbed_salience_pairs(record, orig_prof, adv_prof)
    ood = detect_ood(record, vocab)
    spurious: dict[str, float] = {}
    for tok in record.edit_script.introduced_tokens():
        if tok in spurious or vocab.freq(tok) == 0:
            continue
        spurious[tok] = spurious_score(table, tok, record.adversarial_prediction.label)
    diag = SampleDiagnosis(
        record_index=record.index,
        sample_type=sample_type,
        pairs=tuple(pairs),
        ood_tokens=tuple(ood),
        spurious_scores=spurious,
        spurious_flagged=any(v >= theta for v in spurious.values()),
        confidence_drop=confidence_drop(record),
    )
    return diag, orig_prof


@dataclass(eq=False)
class CampaignDiagnosis:
    """Diagnoses for every successful record plus campaign-level curves."""

    diagnoses: list[SampleDiagnosis]
    histogram: list[HistogramBin]
    trend: float | None
    top_n: int
    steps: int
    theta: float
    bins: int


def diagnosis_to_dict(diag: SampleDiagnosis) -> dict:
    return {
        "record_index": diag.record_index,
        "sample_type": diag.sample_type,
        "pairs": [list(p) for p in diag.pairs],
        "ood_tokens": list(diag.ood_tokens),
        "spurious_scores": diag.spurious_scores,
        "spurious_flagged": diag.spurious_flagged,
        "confidence_drop": diag.confidence_drop,
    }


def diagnosis_from_dict(obj: dict) -> SampleDiagnosis:
    return SampleDiagnosis(
        record_index=obj["record_index"],
        sample_type=obj["sample_type"],
        pairs=tuple((float(a), float(b)) for a, b in obj["pairs"]),
        ood_tokens=tuple(obj["ood_tokens"]),
        spurious_scores={k: float(v) for k, v in obj["spurious_scores"].items()},
        spurious_flagged=bool(obj["spurious_flagged"]),
        confidence_drop=float(obj["confidence_drop"]),
    )


def write_diagnoses_jsonl(diagnoses: Sequence[SampleDiagnosis], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for diag in diagnoses:
            fh.write(json.dumps(diagnosis_to_dict(diag), sort_keys=True) + "\n")


def read_diagnoses_jsonl(path) -> list[SampleDiagnosis]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(diagnosis_from_dict(json.loads(line)))
    return out


def diagnose_campaign(
    clf: Classifier,
    records: Sequence[AdversarialRecord],
    vocab: Vocabulary,
    table: CooccurrenceTable,
    *,
    top_n: int = 3,
    steps: int = 50,
    theta: float = 2.0,
    bins: int = 20,
) -> CampaignDiagnosis:
    diagnoses: list[SampleDiagnosis] = []
    instances: list[Instance] = []
    profiles: list[SalienceProfile] = []
    scripts: list[EditScript] = []
    for record in records:
        if not record.success:
            continue
        diag, prof = diagnose_record(
            clf, record, vocab, table, top_n=top_n, steps=steps, theta=theta
        )
        diagnoses.append(diag)
        instances.append(record.original)
        profiles.append(prof)
        scripts.append(record.edit_script)
    histogram = (
        salience_histogram(instances, profiles, scripts, bins) if instances else []
    )
    return CampaignDiagnosis(
        diagnoses=diagnoses,
        histogram=histogram,
        trend=histogram_trend(histogram) if histogram else None,
        top_n=top_n,
        steps=steps,
        theta=theta,
        bins=bins,
    )
