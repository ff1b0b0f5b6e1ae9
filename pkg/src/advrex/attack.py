"""Entity-aware adversarial attacks: HotFlip, PWWS and TextFooler variants.

Every attack substitutes words in place, never touches the entity spans,
re-inserts the structural markers before each model query, and succeeds
only when the predicted label changes while the sentence similarity
stays at or above the budget's epsilon. Ties are broken by the lowest
position index, then the lowest vocabulary id (or lexicon order for
synonym candidates), so a given classifier, instance and budget always
produce the same record.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Instance, SynonymLexicon, UNK_TOKEN, insert_markers
from .diagnosis import EditOp, EditScript, align_tokens, script_from_ops
from .model import Classifier, Prediction

METHODS = ("hotflip", "pwws", "textfooler")


@dataclass(frozen=True)
class AttackBudget:
    """Limits on edits, model queries and minimum sentence similarity."""

    max_perturb_frac: float = 0.4
    max_queries: int = 1000
    epsilon: float = 0.85

    def __post_init__(self) -> None:
        if not 0.0 < self.max_perturb_frac <= 1.0:
            raise ValueError(f"max_perturb_frac {self.max_perturb_frac} outside (0, 1]")
        if self.max_queries < 1:
            raise ValueError(f"max_queries must be >= 1, got {self.max_queries}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon {self.epsilon} outside [0, 1]")


@dataclass(eq=False)
class AdversarialRecord:
    original: Instance
    adversarial_tokens: tuple[str, ...]
    method: str
    edit_script: EditScript
    original_prediction: Prediction
    adversarial_prediction: Prediction
    similarity: float
    query_count: int
    success: bool
    index: int | None = None

    def __post_init__(self) -> None:
        if not self.adversarial_tokens:
            raise ValueError("adversarial token list is empty")
        if not 0.0 <= self.similarity <= 1.0:
            raise ValueError(f"similarity {self.similarity} outside [0, 1]")
        self._check_entities()
        if self.success and (
            self.adversarial_prediction.label == self.original_prediction.label
        ):
            raise ValueError("successful record whose label did not change")

    def _check_entities(self) -> None:
        orig, adv = self.original.tokens, self.adversarial_tokens
        if len(orig) == len(adv):
            for pos in self.original.entity_positions:
                if orig[pos] != adv[pos]:
                    raise ValueError(f"entity token at position {pos} was modified")
            return
        amap = dict(self.edit_script.matches)
        for pos in self.original.entity_positions:
            if pos not in amap or adv[amap[pos]] != orig[pos]:
                raise ValueError(f"entity token at position {pos} was modified")


def similarity(clf: Classifier, original: Sequence[str], adversarial: Sequence[str]) -> float:
    """Cosine similarity of the two sentences' mean embeddings, clamped to
    [0, 1]. Identical token lists score exactly 1."""
    if not original or not adversarial:
        raise ValueError("similarity of an empty sentence is undefined")
    if list(original) == list(adversarial):
        return 1.0
    va = clf.embeddings[clf.vocab.encode(original)].mean(axis=0)
    vb = clf.embeddings[clf.vocab.encode(adversarial)].mean(axis=0)
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(min(1.0, max(0.0, va @ vb / (na * nb))))


class _OutOfQueries(Exception):
    pass


class _Session:
    """Shared attack state: query accounting, permitted positions, record assembly."""

    def __init__(self, clf: Classifier, inst: Instance, budget: AttackBudget, method: str):
        self.clf = clf
        self.inst = inst
        self.budget = budget
        self.method = method
        self.queries = 0
        entity = inst.entity_positions
        self.permitted = [p for p in range(len(inst.tokens)) if p not in entity]
        self.max_edits = (
            math.ceil(budget.max_perturb_frac * len(self.permitted))
            if self.permitted
            else 0
        )
        self.tokens = list(inst.tokens)
        self.edited: set[int] = set()
        self.orig_marked = insert_markers(inst)
        self.orig_prediction = self.predict(self.tokens)
        if self.orig_prediction.label != inst.label:
            raise ValueError(
                "attack precondition violated: the model does not predict this "
                "instance correctly"
            )
        self.last_prediction = self.orig_prediction

    def _charge(self) -> None:
        if self.queries >= self.budget.max_queries:
            raise _OutOfQueries
        self.queries += 1

    def predict(self, tokens: Sequence[str]) -> Prediction:
        self._charge()
        variant = Instance(
            tokens=tuple(tokens),
            head_span=self.inst.head_span,
            tail_span=self.inst.tail_span,
            label=self.inst.label,
        )
        return self.clf.predict(insert_markers(variant))

    def gradient(self, tokens: Sequence[str], target: str) -> np.ndarray:
        self._charge()
        variant = Instance(
            tokens=tuple(tokens),
            head_span=self.inst.head_span,
            tail_span=self.inst.tail_span,
            label=self.inst.label,
        )
        marked = insert_markers(variant)
        return self.clf.input_gradient(self.clf.embed(marked), target)

    def masked_probability(self, word_pos: int, target_index: int) -> float:
        """Probability of the target label with one word's embedding zeroed."""
        self._charge()
        e = self.clf.embed(self.orig_marked)
        e.values[self.orig_marked.marked_pos(word_pos)] = 0.0
        return float(self.clf.forward_from_embeddings(e)[target_index])

    def sim(self, tokens: Sequence[str]) -> float:
        return similarity(self.clf, self.inst.tokens, tokens)

    def finish(self, success: bool) -> AdversarialRecord:
        return AdversarialRecord(
            original=self.inst,
            adversarial_tokens=tuple(self.tokens),
            method=self.method,
            edit_script=align_tokens(self.inst.tokens, self.tokens),
            original_prediction=self.orig_prediction,
            adversarial_prediction=self.last_prediction,
            similarity=self.sim(self.tokens),
            query_count=self.queries,
            success=success,
        )


def hotflip(clf: Classifier, inst: Instance, budget: AttackBudget) -> AdversarialRecord:
    """Greedy first-order word flips against the originally predicted label.

    Each round scores every remaining permitted position against every
    vocabulary word by the predicted change in the target logit,
    g_i . (e_v - e_i), applies the single best flip, and stops on a label
    flip, an epsilon violation, or budget exhaustion. A position is
    flipped at most once.
    """
    session = _Session(clf, inst, budget, "hotflip")
    target = session.orig_prediction.label
    word_ids = np.asarray(clf.vocab.word_ids())
    if word_ids.size == 0:
        return session.finish(False)
    word_emb = clf.embeddings[word_ids]
    try:
        while True:
            remaining = sorted(set(session.permitted) - session.edited)
            if not remaining or len(session.edited) >= session.max_edits:
                return session.finish(False)
            grad = session.gradient(session.tokens, target)
            best: tuple[float, int, int] | None = None  # (score, position, vocab id)
            for pos in remaining:
                g = grad[session.orig_marked.marked_pos(pos)]
                cur_id = clf.vocab.id_of(session.tokens[pos])
                deltas = word_emb @ g - float(g @ clf.embeddings[cur_id])
                deltas[word_ids == cur_id] = np.inf
                v = int(np.argmin(deltas))
                if best is None or deltas[v] < best[0]:
                    best = (float(deltas[v]), pos, int(word_ids[v]))
            if best is None:
                return session.finish(False)
            _, pos, new_id = best
            candidate = list(session.tokens)
            candidate[pos] = clf.vocab.token_of(new_id)
            if session.sim(candidate) < budget.epsilon:
                return session.finish(False)
            session.tokens = candidate
            session.edited.add(pos)
            session.last_prediction = session.predict(session.tokens)
            if session.last_prediction.label != target:
                return session.finish(True)
    except _OutOfQueries:
        return session.finish(False)


def pwws(
    clf: Classifier, inst: Instance, lex: SynonymLexicon, budget: AttackBudget
) -> AdversarialRecord:
    """Probability-weighted word saliency attack.

    Word saliency is the probability drop when a token is replaced by the
    unknown token; each position's best synonym maximizes the probability
    drop; positions are attacked in decreasing order of
    softmax(saliency) * drop, skipping positions whose best synonym does
    not lower the target probability at all.
    """
    session = _Session(clf, inst, budget, "pwws")
    target = session.orig_prediction.label
    t_idx = clf.label_index(target)
    p_orig = session.orig_prediction.confidence
    try:
        saliency = np.empty(len(session.permitted))
        for k, pos in enumerate(session.permitted):
            probe = list(session.tokens)
            probe[pos] = UNK_TOKEN
            saliency[k] = p_orig - float(session.predict(probe).probabilities[t_idx])

        best_sub: dict[int, str] = {}
        best_drop: dict[int, float] = {}
        for pos in session.permitted:
            for cand, _weight in lex.candidates(inst.tokens[pos]):
                probe = list(session.tokens)
                probe[pos] = cand
                drop = p_orig - float(session.predict(probe).probabilities[t_idx])
                if pos not in best_drop or drop > best_drop[pos]:
                    best_drop[pos] = drop
                    best_sub[pos] = cand

        if session.permitted:
            weights = np.exp(saliency - saliency.max())
            weights /= weights.sum()
        priority = [
            (float(weights[k]) * best_drop[pos], pos)
            for k, pos in enumerate(session.permitted)
            if pos in best_sub and best_drop[pos] > 0.0
        ]
        priority.sort(key=lambda hp: (-hp[0], hp[1]))

        for _, pos in priority:
            if len(session.edited) + 1 > session.max_edits:
                return session.finish(False)
            candidate = list(session.tokens)
            candidate[pos] = best_sub[pos]
            if session.sim(candidate) < budget.epsilon:
                return session.finish(False)
            prediction = session.predict(candidate)
            session.tokens = candidate
            session.edited.add(pos)
            session.last_prediction = prediction
            if prediction.label != target:
                return session.finish(True)
        return session.finish(False)
    except _OutOfQueries:
        return session.finish(False)


def textfooler(
    clf: Classifier,
    inst: Instance,
    lex: SynonymLexicon,
    budget: AttackBudget,
    min_weight: float = 0.5,
) -> AdversarialRecord:
    """Importance-ranked synonym substitution.

    A token's importance is the probability drop when its embedding is
    zeroed out. Candidates need lexicon weight >= min_weight and must
    keep the sentence similarity at or above epsilon; the one that
    minimizes the target probability is substituted in.
    """
    session = _Session(clf, inst, budget, "textfooler")
    target = session.orig_prediction.label
    t_idx = clf.label_index(target)
    p_orig = session.orig_prediction.confidence
    try:
        importance = {
            pos: p_orig - session.masked_probability(pos, t_idx)
            for pos in session.permitted
        }
        order = sorted(session.permitted, key=lambda pos: (-importance[pos], pos))
        for pos in order:
            cands = [
                cand
                for cand, weight in lex.candidates(inst.tokens[pos])
                if weight >= min_weight
            ]
            best: tuple[float, str, Prediction] | None = None
            for cand in cands:
                candidate = list(session.tokens)
                candidate[pos] = cand
                if session.sim(candidate) < budget.epsilon:
                    continue
                prediction = session.predict(candidate)
                p = float(prediction.probabilities[t_idx])
                if best is None or p < best[0]:
                    best = (p, cand, prediction)
            if best is None:
                continue
            if len(session.edited) + 1 > session.max_edits:
                return session.finish(False)
            _, cand, prediction = best
            session.tokens[pos] = cand
            session.edited.add(pos)
            session.last_prediction = prediction
            if prediction.label != target:
                return session.finish(True)
        return session.finish(False)
    except _OutOfQueries:
        return session.finish(False)


def run_attack_campaign(
    clf: Classifier,
    test_set: Sequence[Instance],
    method: str,
    budget: AttackBudget,
    lexicon: SynonymLexicon | None = None,
) -> tuple[list[AdversarialRecord], dict]:
    """Attack every correctly predicted instance of the test set.

    Returns the records (one per attacked instance, in input order) and a
    summary echoing the budget, since epsilon and the perturbation limits
    shape every downstream number.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
    if method in ("pwws", "textfooler") and lexicon is None:
        raise ValueError(f"{method} requires a synonym lexicon")

    records: list[AdversarialRecord] = []
    n_correct = 0
    for index, inst in enumerate(test_set):
        if clf.predict_instance(inst).label != inst.label:
            continue
        n_correct += 1
        if method == "hotflip":
            record = hotflip(clf, inst, budget)
        elif method == "pwws":
            record = pwws(clf, inst, lexicon, budget)
        else:
            record = textfooler(clf, inst, lexicon, budget)
        record.index = index
        records.append(record)
    n_success = sum(r.success for r in records)
    summary = {
        "method": method,
        "n_instances": len(test_set),
        "n_correct": n_correct,
        "n_success": n_success,
        "success_rate_percent": round(100.0 * n_success / n_correct, 2) if n_correct else 0.0,
        "epsilon": budget.epsilon,
        "max_perturb_frac": budget.max_perturb_frac,
        "max_queries": budget.max_queries,
    }
    return records, summary


def record_to_dict(record: AdversarialRecord) -> dict:
    return {
        "index": record.index,
        "method": record.method,
        "tokens": list(record.original.tokens),
        "head_span": list(record.original.head_span),
        "tail_span": list(record.original.tail_span),
        "gold_label": record.original.label,
        "adv_tokens": list(record.adversarial_tokens),
        "edits": [
            {
                "kind": op.kind,
                "orig_pos": op.orig_pos,
                "adv_pos": op.adv_pos,
                "old_token": op.old_token,
                "new_token": op.new_token,
            }
            for op in record.edit_script.ops
        ],
        "orig_label": record.original_prediction.label,
        "orig_confidence": record.original_prediction.confidence,
        "orig_probs": record.original_prediction.probabilities.tolist(),
        "adv_label": record.adversarial_prediction.label,
        "adv_confidence": record.adversarial_prediction.confidence,
        "adv_probs": record.adversarial_prediction.probabilities.tolist(),
        "similarity": record.similarity,
        "queries": record.query_count,
        "success": record.success,
    }


def record_from_dict(obj: dict) -> AdversarialRecord:
    original = Instance(
        tokens=tuple(obj["tokens"]),
        head_span=tuple(obj["head_span"]),
        tail_span=tuple(obj["tail_span"]),
        label=obj["gold_label"],
    )
    ops = tuple(
        EditOp(
            kind=e["kind"],
            orig_pos=e["orig_pos"],
            adv_pos=e["adv_pos"],
            old_token=e["old_token"],
            new_token=e["new_token"],
        )
        for e in obj["edits"]
    )
    return AdversarialRecord(
        original=original,
        adversarial_tokens=tuple(obj["adv_tokens"]),
        method=obj["method"],
        edit_script=script_from_ops(ops, len(obj["tokens"]), len(obj["adv_tokens"])),
        original_prediction=Prediction(
            label=obj["orig_label"],
            probabilities=np.asarray(obj["orig_probs"], dtype=np.float64),
            confidence=float(obj["orig_confidence"]),
        ),
        adversarial_prediction=Prediction(
            label=obj["adv_label"],
            probabilities=np.asarray(obj["adv_probs"], dtype=np.float64),
            confidence=float(obj["adv_confidence"]),
        ),
        similarity=float(obj["similarity"]),
        query_count=int(obj["queries"]),
        success=bool(obj["success"]),
        index=obj["index"],
    )


def write_records_jsonl(records: Sequence[AdversarialRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record), sort_keys=True) + "\n")


def read_records_jsonl(path: str | Path) -> list[AdversarialRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(record_from_dict(json.loads(line)))
    return records
