"""Reproducible synthetic relation-extraction corpora.

Each sentence carries exactly one cue word that determines its label,
two entity mentions drawn from a shared name pool, and filler words.
Optionally a trigger word is planted into most sentences of one label,
giving that token a strong superficial association with the label. The
synonym lexicon offers same-label cues, cross-label cues, the trigger,
and never-seen variant words as substitution candidates, so score-based
attacks can produce both spurious and out-of-distribution edits.

Run ``python -m advrex.synth --out-dir data --seed 7`` to write
train.jsonl, test.jsonl and synonyms.tsv.
"""

from __future__ import annotations

import argparse
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Instance, SynonymLexicon

_LABEL_NAMES = [
    "birthplace",
    "founder",
    "spouse",
    "employer",
    "capital_of",
    "author_of",
    "parent_of",
    "member_of",
    "leader_of",
    "sibling",
    "resides_in",
    "educated_at",
]

_CONSONANTS = "bdfglmnprstvz"
_VOWELS = "aeiou"


@dataclass
class SynthConfig:
    n_labels: int = 10
    keywords_per_label: int = 3
    n_fillers: int = 40
    n_names: int = 24
    train_size: int = 1500
    test_size: int = 250
    trigger_rate: float = 0.95  # share of trigger-label sentences carrying the trigger
    trigger_label_index: int = 0
    seed: int = 7


@dataclass
class SynthPools:
    labels: list[str]
    keywords: dict[str, list[str]]  # label -> cue words
    fillers: list[str]
    names: list[str]
    trigger: str
    trigger_label: str
    ood_words: list[str]  # lexicon-only, never in any sentence


def _make_words(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    words: list[str] = []
    while len(words) < count:
        syllables = rng.integers(2, 4)
        word = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(syllables)
        )
        if word not in taken:
            taken.add(word)
            words.append(word)
    return words


def _build_pools(cfg: SynthConfig, rng: np.random.Generator) -> SynthPools:
    if cfg.n_labels > len(_LABEL_NAMES):
        raise ValueError(f"at most {len(_LABEL_NAMES)} labels supported")
    labels = _LABEL_NAMES[: cfg.n_labels]
    taken: set[str] = set()
    keywords = {
        label: _make_words(rng, cfg.keywords_per_label, taken) for label in labels
    }
    fillers = _make_words(rng, cfg.n_fillers, taken)
    names = _make_words(rng, cfg.n_names, taken)
    trigger = _make_words(rng, 1, taken)[0]
    n_ood = cfg.n_labels * cfg.keywords_per_label + cfg.n_fillers
    ood_words = _make_words(rng, n_ood, taken)
    return SynthPools(
        labels=labels,
        keywords=keywords,
        fillers=fillers,
        names=names,
        trigger=trigger,
        trigger_label=labels[cfg.trigger_label_index],
        ood_words=ood_words,
    )


def _filler_run(rng: np.random.Generator, pools: SynthPools, lo: int, hi: int) -> list[str]:
    k = int(rng.integers(lo, hi + 1))
    return [pools.fillers[rng.integers(len(pools.fillers))] for _ in range(k)]


def _entity(rng: np.random.Generator, pools: SynthPools) -> list[str]:
    k = int(rng.integers(1, 3))
    start = rng.integers(len(pools.names) - k + 1)
    return pools.names[start : start + k]


def _sentence(cfg: SynthConfig, pools: SynthPools, rng: np.random.Generator, label: str) -> Instance:
    kw_list = pools.keywords[label]
    keyword = kw_list[rng.integers(len(kw_list))]
    segments = [
        _filler_run(rng, pools, 0, 2),
        _entity(rng, pools),
        _filler_run(rng, pools, 1, 2),
        [keyword],
        _filler_run(rng, pools, 1, 2),
        _entity(rng, pools),
        _filler_run(rng, pools, 0, 2),
    ]
    if label == pools.trigger_label and rng.random() < cfg.trigger_rate:
        seg = segments[[0, 2, 4, 6][rng.integers(4)]]
        seg.insert(int(rng.integers(len(seg) + 1)), pools.trigger)

    tokens: list[str] = []
    spans: list[tuple[int, int]] = []
    for i, seg in enumerate(segments):
        if i in (1, 5):
            spans.append((len(tokens), len(tokens) + len(seg) - 1))
        tokens.extend(seg)
    first, second = spans
    head_first = rng.random() < 0.5
    return Instance(
        tokens=tuple(tokens),
        head_span=first if head_first else second,
        tail_span=second if head_first else first,
        label=label,
    )


def _build_lexicon(cfg: SynthConfig, pools: SynthPools, rng: np.random.Generator) -> SynonymLexicon:
    entries: dict[str, tuple[tuple[str, float], ...]] = {}
    all_keywords = [(label, kw) for label in pools.labels for kw in pools.keywords[label]]
    ood_iter = iter(pools.ood_words)
    for label, kw in all_keywords:
        cands: list[tuple[str, float]] = []
        for other in pools.keywords[label]:
            if other != kw:
                cands.append((other, 0.92))
        cross = [w for lab, w in all_keywords if lab != label]
        picks = rng.choice(len(cross), size=min(6, len(cross)), replace=False)
        for idx in sorted(picks):
            cands.append((cross[idx], 0.88))
        cands.append((pools.trigger, 0.86))
        cands.append((next(ood_iter), 0.80))
        entries[kw] = tuple(cands)
    for filler in pools.fillers:
        cands = []
        others = [f for f in pools.fillers if f != filler]
        picks = rng.choice(len(others), size=3, replace=False)
        for idx in sorted(picks):
            cands.append((others[idx], 0.90))
        if rng.random() < 0.5:
            cands.append((next(ood_iter), 0.78))
        entries[filler] = tuple(cands)
    return SynonymLexicon(entries=entries)


def generate(cfg: SynthConfig) -> tuple[list[Instance], list[Instance], SynonymLexicon, SynthPools]:
    """Deterministic (train, test, lexicon, pools) for one config."""
    rng = np.random.default_rng(cfg.seed)
    pools = _build_pools(cfg, rng)
    train = [
        _sentence(cfg, pools, rng, pools.labels[i % cfg.n_labels])
        for i in range(cfg.train_size)
    ]
    test = [
        _sentence(cfg, pools, rng, pools.labels[i % cfg.n_labels])
        for i in range(cfg.test_size)
    ]
    lexicon = _build_lexicon(cfg, pools, rng)
    return train, test, lexicon, pools


def write_instances_jsonl(instances: Sequence[Instance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(
                json.dumps(
                    {
                        "token": list(inst.tokens),
                        "h": {"pos": list(inst.head_span)},
                        "t": {"pos": list(inst.tail_span)},
                        "relation": inst.label,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def write_synonyms_tsv(lexicon: SynonymLexicon, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word in sorted(lexicon.entries):
            cells = [word] + [f"{sub}:{weight}" for sub, weight in lexicon.entries[word]]
            fh.write("\t".join(cells) + "\n")


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="generate a synthetic RE corpus")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--labels", type=int, default=10)
    parser.add_argument("--train-size", type=int, default=1500)
    parser.add_argument("--test-size", type=int, default=250)
    parser.add_argument("--trigger-rate", type=float, default=0.95)
    args = parser.parse_args(argv)
    cfg = SynthConfig(
        n_labels=args.labels,
        train_size=args.train_size,
        test_size=args.test_size,
        trigger_rate=args.trigger_rate,
        seed=args.seed,
    )
    train, test, lexicon, pools = generate(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_instances_jsonl(train, out / "train.jsonl")
    write_instances_jsonl(test, out / "test.jsonl")
    write_synonyms_tsv(lexicon, out / "synonyms.tsv")
    print(
        f"wrote {len(train)} train / {len(test)} test instances, "
        f"{len(lexicon)} lexicon entries (trigger {pools.trigger!r} for "
        f"label {pools.trigger_label!r}) to {out}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
