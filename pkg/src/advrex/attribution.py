"""Integrated-gradients salience over input embeddings.

Attribution vectors are accumulated with a right-endpoint Riemann sum
over the straight line from an all-zeros baseline to the input
embeddings; per-token scores are vector norms, optionally max-normalized
per sentence. The attributed quantity is the pre-softmax score of the
target label, which keeps gradients informative when the softmax
saturates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import MarkedSequence
from .model import Classifier, EmbeddingMatrix


@dataclass(eq=False)
class AttributionSet:
    """One attribution vector (dimension d) per marked-sequence position."""

    vectors: np.ndarray  # (length, dim)
    target: str
    steps: int
    baseline: str = "zeros"


@dataclass(eq=False)
class SalienceProfile:
    """Nonnegative per-position scores, optionally scaled to max 1."""

    scores: np.ndarray  # (length,)
    normalized: bool


def integrated_gradients(
    clf: Classifier, marked: MarkedSequence, target: str, steps: int = 50
) -> AttributionSet:
    """Average input gradients along the zero-to-input path.

    Uses interpolation points j/steps for j = 1..steps, so a single step
    evaluates the gradient at the input itself.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    clf.label_index(target)
    e = clf.embed(marked)
    x = e.values
    total = np.zeros_like(x)
    for j in range(1, steps + 1):
        point = EmbeddingMatrix(
            values=(j / steps) * x,
            e1_open_pos=e.e1_open_pos,
            e2_open_pos=e.e2_open_pos,
        )
        total += clf.input_gradient(point, target)
    vectors = (total / steps) * x
    return AttributionSet(vectors=vectors, target=target, steps=steps)


def salience_scores(
    attribution: AttributionSet, normalize: bool = True, order: str = "l2"
) -> SalienceProfile:
    """Per-position norm of the attribution vectors.

    ``order`` may be "l2" (default) or "l1" for sensitivity checks. With
    ``normalize`` the scores are divided by the sequence maximum; an
    all-zero attribution stays all-zero.
    """
    if order == "l2":
        scores = np.linalg.norm(attribution.vectors, axis=1)
    elif order == "l1":
        scores = np.abs(attribution.vectors).sum(axis=1)
    else:
        raise ValueError(f"unknown norm order {order!r}")
    if normalize:
        peak = scores.max() if scores.size else 0.0
        if peak > 0.0:
            scores = scores / peak
    return SalienceProfile(scores=scores, normalized=normalize)


def completeness_gap(
    clf: Classifier, marked: MarkedSequence, target: str, steps: int
) -> float:
    """|sum of all attribution components - (score(x) - score(baseline))|.

    Shrinks as ``steps`` grows; exactly zero for a linear scorer.
    """
    att = integrated_gradients(clf, marked, target, steps)
    e = clf.embed(marked)
    baseline = EmbeddingMatrix(
        values=np.zeros_like(e.values),
        e1_open_pos=e.e1_open_pos,
        e2_open_pos=e.e2_open_pos,
    )
    span = clf.logit(e, target) - clf.logit(baseline, target)
    return float(abs(att.vectors.sum() - span))


def salience_rows(
    seq_id: str | int,
    marked: MarkedSequence,
    raw: SalienceProfile,
    normalized: SalienceProfile,
) -> list[dict]:
    """One export record per marked position (markers carry origin null)."""
    rows = []
    for pos, (token, org) in enumerate(zip(marked.tokens, marked.origin)):
        rows.append(
            {
                "sequence_id": seq_id,
                "position": pos,
                "token": token,
                "origin": org,
                "raw_score": float(raw.scores[pos]),
                "normalized_score": float(normalized.scores[pos]),
            }
        )
    return rows


def write_salience_jsonl(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
