"""Dataset ingestion, entity markers, vocabulary, and synonym lexicon.

The dataset format is line-delimited JSON with fields ``token`` (array of
words), ``h`` / ``t`` (objects with a two-element inclusive ``pos`` span)
and ``relation`` (label string). Words are lowercased at ingestion; the
structural marker tokens keep their bracketed spelling.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
E1_OPEN = "[E1]"
E1_CLOSE = "[/E1]"
E2_OPEN = "[E2]"
E2_CLOSE = "[/E2]"

MARKER_TOKENS = (CLS_TOKEN, E1_OPEN, E1_CLOSE, E2_OPEN, E2_CLOSE)
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN) + MARKER_TOKENS


class CorpusError(ValueError):
    """Base error for corpus loading and validation."""


class ParseError(CorpusError):
    """A line of an input file could not be parsed."""


class SpanError(CorpusError):
    """An entity span is inconsistent with its sentence."""


@dataclass(frozen=True)
class Instance:
    """One labeled sentence with head and tail entity spans.

    Spans are inclusive token-index intervals into ``tokens``.
    """

    tokens: tuple[str, ...]
    head_span: tuple[int, int]
    tail_span: tuple[int, int]
    label: str

    def __post_init__(self) -> None:
        if not self.tokens:
            raise SpanError("instance has an empty token list")
        if not self.label:
            raise CorpusError("instance has an empty label")
        n = len(self.tokens)
        for name, (lo, hi) in (("head", self.head_span), ("tail", self.tail_span)):
            if lo > hi:
                raise SpanError(f"{name} span {lo}..{hi} is reversed")
            if lo < 0 or hi >= n:
                raise SpanError(f"{name} span {lo}..{hi} outside sentence of {n} tokens")
        h0, h1 = self.head_span
        t0, t1 = self.tail_span
        if h0 <= t1 and t0 <= h1:
            raise SpanError(f"head span {h0}..{h1} overlaps tail span {t0}..{t1}")

    @property
    def entity_positions(self) -> frozenset[int]:
        h0, h1 = self.head_span
        t0, t1 = self.tail_span
        return frozenset(range(h0, h1 + 1)) | frozenset(range(t0, t1 + 1))


@dataclass(frozen=True)
class MarkedSequence:
    """Token sequence with a leading [CLS] and entity markers inserted.

    ``origin`` gives, per marked position, the source position in the
    underlying instance, or None for the five structural markers.
    """

    tokens: tuple[str, ...]
    origin: tuple[int | None, ...]
    e1_open_pos: int
    e2_open_pos: int
    word_to_marked: tuple[int, ...] = field(repr=False)

    def marked_pos(self, word_pos: int) -> int:
        """Marked-sequence position of an original word position."""
        return self.word_to_marked[word_pos]

    def __len__(self) -> int:
        return len(self.tokens)


def insert_markers(instance: Instance) -> MarkedSequence:
    """Wrap the entity spans in marker pairs and prepend [CLS].

    [E1]/[/E1] always surround the head span and [E2]/[/E2] the tail
    span, whichever comes first in the sentence.
    """
    h0, h1 = instance.head_span
    t0, t1 = instance.tail_span
    opens = {h0: E1_OPEN, t0: E2_OPEN}
    closes = {h1: E1_CLOSE, t1: E2_CLOSE}

    tokens: list[str] = [CLS_TOKEN]
    origin: list[int | None] = [None]
    word_to_marked: list[int] = []
    for pos, word in enumerate(instance.tokens):
        if pos in opens:
            tokens.append(opens[pos])
            origin.append(None)
        word_to_marked.append(len(tokens))
        tokens.append(word)
        origin.append(pos)
        if pos in closes:
            tokens.append(closes[pos])
            origin.append(None)
    return MarkedSequence(
        tokens=tuple(tokens),
        origin=tuple(origin),
        e1_open_pos=tokens.index(E1_OPEN),
        e2_open_pos=tokens.index(E2_OPEN),
        word_to_marked=tuple(word_to_marked),
    )


def strip_markers(marked: MarkedSequence) -> tuple[str, ...]:
    """Recover the original word sequence from a marked one."""
    return tuple(tok for tok, org in zip(marked.tokens, marked.origin) if org is not None)


def load_dataset(path: str | Path, split: str | None = None) -> list[Instance]:
    """Read instances from a JSONL file, preserving order.

    ``path`` may be a directory, in which case ``split`` ("train" or
    "test") selects ``<split>.jsonl`` inside it. Tokens are lowercased.
    """
    path = Path(path)
    if split is not None and split not in ("train", "test"):
        raise CorpusError(f"unknown split {split!r}, expected 'train' or 'test'")
    if path.is_dir():
        if split is None:
            raise CorpusError(f"{path} is a directory; a split name is required")
        path = path / f"{split}.jsonl"
    instances: list[Instance] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}, line {lineno}: invalid JSON ({exc.msg})") from exc
            instances.append(_instance_from_obj(obj, path, lineno))
    return instances


def _instance_from_obj(obj: object, path: Path, lineno: int) -> Instance:
    try:
        raw_tokens = obj["token"]
        head = obj["h"]["pos"]
        tail = obj["t"]["pos"]
        label = obj["relation"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}, line {lineno}: missing field ({exc})") from exc
    if not isinstance(raw_tokens, list) or not all(isinstance(t, str) for t in raw_tokens):
        raise ParseError(f"{path}, line {lineno}: 'token' must be an array of strings")
    for name, span in (("h.pos", head), ("t.pos", tail)):
        if (
            not isinstance(span, list)
            or len(span) != 2
            or not all(isinstance(v, int) for v in span)
        ):
            raise ParseError(f"{path}, line {lineno}: '{name}' must be a two-element int array")
    if not isinstance(label, str):
        raise ParseError(f"{path}, line {lineno}: 'relation' must be a string")
    try:
        return Instance(
            tokens=tuple(t.lower() for t in raw_tokens),
            head_span=(head[0], head[1]),
            tail_span=(tail[0], tail[1]),
            label=label,
        )
    except CorpusError as exc:
        raise SpanError(f"{path}, line {lineno}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """Token/id maps plus raw training frequencies.

    Ids 0..6 are reserved for padding, unknown, [CLS] and the four
    entity markers. Words below ``min_freq`` get no id but keep their
    frequency so that "rare" and "never seen" stay distinguishable.
    """

    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]
    frequencies: dict[str, int]
    min_freq: int

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def n_reserved(self) -> int:
        return len(RESERVED_TOKENS)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def token_of(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def freq(self, token: str) -> int:
        return self.frequencies.get(token, 0)

    def seen(self, token: str) -> bool:
        return self.freq(token) > 0

    def encode(self, tokens) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def word_ids(self) -> list[int]:
        """Ids of ordinary words (everything past the reserved block)."""
        return list(range(self.n_reserved, len(self.id_to_token)))

    def hash_hex(self) -> str:
        payload = json.dumps(list(self.id_to_token), ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def build_vocab(train: list[Instance], min_freq: int = 1) -> Vocabulary:
    """Build the vocabulary from the training split.

    Words are ordered by descending frequency, then alphabetically, so
    two builds over the same data produce identical id assignments.
    """
    if not train:
        raise CorpusError("cannot build a vocabulary from an empty training list")
    if min_freq < 1:
        raise CorpusError(f"min_freq must be >= 1, got {min_freq}")
    counts: Counter[str] = Counter()
    for inst in train:
        counts.update(inst.tokens)
    id_to_token = list(RESERVED_TOKENS)
    for token, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if counts[token] >= min_freq and token not in RESERVED_TOKENS:
            id_to_token.append(token)
    token_to_id = {tok: i for i, tok in enumerate(id_to_token)}
    return Vocabulary(
        token_to_id=token_to_id,
        id_to_token=tuple(id_to_token),
        frequencies=dict(counts),
        min_freq=min_freq,
    )


@dataclass(frozen=True, eq=False)
class SynonymLexicon:
    """Ordered substitution candidates per word, each with a weight in [0,1]."""

    entries: dict[str, tuple[tuple[str, float], ...]]

    def candidates(self, word: str) -> tuple[tuple[str, float], ...]:
        return self.entries.get(word, ())

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __len__(self) -> int:
        return len(self.entries)


def load_synonyms(path: str | Path) -> SynonymLexicon:
    """Parse a TSV lexicon: word, then tab-separated ``substitute:weight`` pairs.

    Self-substitutions are dropped silently; a weight outside [0,1] is a
    parse error.
    """
    path = Path(path)
    entries: dict[str, tuple[tuple[str, float], ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cells = line.split("\t")
            word = cells[0]
            cands: list[tuple[str, float]] = []
            for cell in cells[1:]:
                if not cell:
                    continue
                sub, sep, weight_text = cell.rpartition(":")
                if not sep or not sub:
                    raise ParseError(f"{path}, line {lineno}: bad pair {cell!r}")
                try:
                    weight = float(weight_text)
                except ValueError as exc:
                    raise ParseError(
                        f"{path}, line {lineno}: bad weight in {cell!r}"
                    ) from exc
                if not 0.0 <= weight <= 1.0:
                    raise ParseError(
                        f"{path}, line {lineno}: weight {weight} outside [0, 1]"
                    )
                if sub == word:
                    continue
                cands.append((sub, weight))
            entries[word] = tuple(cands)
    return SynonymLexicon(entries=entries)
