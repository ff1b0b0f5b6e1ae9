"""A small relation classifier with analytic input-embedding gradients.

The encoder concatenates the mean-pooled sequence embedding with the
embeddings at the [E1] and [E2] marker positions, feeds the result
through one tanh hidden layer and a linear softmax head. Every gradient
used here (parameters during training, inputs for attribution and
attacks) is written out by hand so it can be checked against finite
differences.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Instance, MarkedSequence, Vocabulary, build_vocab, insert_markers

FORMAT_VERSION = 1


class ModelError(Exception):
    """Base error for training and serialization."""


class TrainingError(ModelError):
    """Training aborted or failed to meet its contract."""


class ModelFormatError(ModelError):
    """A parameter file is malformed or inconsistent."""


@dataclass
class TrainConfig:
    """Hyperparameters for plain minibatch gradient descent."""

    dim: int = 64
    hidden: int = 64
    learning_rate: float = 0.5
    epochs: int = 40
    batch_size: int = 32
    min_freq: int = 1
    activation: str = "tanh"  # "identity" gives a fully linear scorer

    def validate(self) -> None:
        if self.dim <= 0 or self.hidden <= 0:
            raise TrainingError("dim and hidden must be positive")
        if self.learning_rate <= 0:
            raise TrainingError("learning rate must be positive")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise TrainingError("epochs and batch size must be positive")
        if self.activation not in ("tanh", "identity"):
            raise TrainingError(f"unknown activation {self.activation!r}")


@dataclass(eq=False)
class Prediction:
    label: str
    probabilities: np.ndarray
    confidence: float


@dataclass(eq=False)
class EmbeddingMatrix:
    """Per-position embedding rows for one marked sequence."""

    values: np.ndarray  # (length, dim)
    e1_open_pos: int
    e2_open_pos: int

    def __len__(self) -> int:
        return self.values.shape[0]


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else z


def _act_grad(h: np.ndarray, kind: str) -> np.ndarray:
    return 1.0 - h * h if kind == "tanh" else np.ones_like(h)


@dataclass(eq=False)
class Classifier:
    """Trained parameters plus the vocabulary they were trained against."""

    vocab: Vocabulary
    labels: tuple[str, ...]
    embeddings: np.ndarray  # (vocab, dim)
    w_hidden: np.ndarray  # (hidden, 3*dim)
    b_hidden: np.ndarray  # (hidden,)
    w_out: np.ndarray  # (labels, hidden)
    b_out: np.ndarray  # (labels,)
    config: TrainConfig
    label_to_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.label_to_index = {lab: i for i, lab in enumerate(self.labels)}

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def label_index(self, label: str) -> int:
        try:
            return self.label_to_index[label]
        except KeyError:
            raise KeyError(f"label {label!r} not in the model's label set") from None

    def embed(self, marked: MarkedSequence) -> EmbeddingMatrix:
        ids = self.vocab.encode(marked.tokens)
        return EmbeddingMatrix(
            values=self.embeddings[ids].copy(),
            e1_open_pos=marked.e1_open_pos,
            e2_open_pos=marked.e2_open_pos,
        )

    def _forward(self, values: np.ndarray, p1: int, p2: int):
        feat = np.concatenate([values.mean(axis=0), values[p1], values[p2]])
        z = self.w_hidden @ feat + self.b_hidden
        h = _act(z, self.config.activation)
        logits = self.w_out @ h + self.b_out
        return feat, z, h, logits

    def logits_from_embeddings(self, e: EmbeddingMatrix) -> np.ndarray:
        if e.values.ndim != 2 or e.values.shape[1] != self.dim:
            raise ValueError(
                f"embedding rows have dimension {e.values.shape[-1]}, model expects {self.dim}"
            )
        return self._forward(e.values, e.e1_open_pos, e.e2_open_pos)[3]

    def forward_from_embeddings(self, e: EmbeddingMatrix) -> np.ndarray:
        """Probability vector for raw (possibly interpolated) embeddings."""
        return softmax(self.logits_from_embeddings(e))

    def logit(self, e: EmbeddingMatrix, target: str) -> float:
        return float(self.logits_from_embeddings(e)[self.label_index(target)])

    def predict(self, marked: MarkedSequence) -> Prediction:
        probs = self.forward_from_embeddings(self.embed(marked))
        best = int(np.argmax(probs))
        return Prediction(
            label=self.labels[best],
            probabilities=probs,
            confidence=float(probs[best]),
        )

    def predict_instance(self, instance: Instance) -> Prediction:
        return self.predict(insert_markers(instance))

    def input_gradient(self, e: EmbeddingMatrix, target: str) -> np.ndarray:
        """d(logit of target) / d(embedding row), one row per position."""
        t = self.label_index(target)
        if e.values.ndim != 2 or e.values.shape[1] != self.dim:
            raise ValueError("embedding dimension mismatch")
        _, _, h, _ = self._forward(e.values, e.e1_open_pos, e.e2_open_pos)
        dz = _act_grad(h, self.config.activation) * self.w_out[t]
        dfeat = self.w_hidden.T @ dz
        d = self.dim
        length = e.values.shape[0]
        grad = np.tile(dfeat[:d] / length, (length, 1))
        grad[e.e1_open_pos] += dfeat[d : 2 * d]
        grad[e.e2_open_pos] += dfeat[2 * d :]
        return grad


def _sample_loss_and_grads(clf: Classifier, ids: np.ndarray, p1: int, p2: int, y: int):
    """Cross-entropy of one sample and its gradients w.r.t. all parameters."""
    values = clf.embeddings[ids]
    feat, z, h, logits = clf._forward(values, p1, p2)
    probs = softmax(logits)
    loss = -math.log(max(probs[y], 1e-300))

    dlogits = probs.copy()
    dlogits[y] -= 1.0
    g_w_out = np.outer(dlogits, h)
    g_b_out = dlogits
    dh = clf.w_out.T @ dlogits
    dz = _act_grad(h, clf.config.activation) * dh
    g_w_hidden = np.outer(dz, feat)
    g_b_hidden = dz
    dfeat = clf.w_hidden.T @ dz
    d = clf.dim
    length = len(ids)
    dvalues = np.tile(dfeat[:d] / length, (length, 1))
    dvalues[p1] += dfeat[d : 2 * d]
    dvalues[p2] += dfeat[2 * d :]
    g_emb = np.zeros_like(clf.embeddings)
    np.add.at(g_emb, ids, dvalues)
    return loss, {
        "embeddings": g_emb,
        "w_hidden": g_w_hidden,
        "b_hidden": g_b_hidden,
        "w_out": g_w_out,
        "b_out": g_b_out,
    }


def batch_loss_and_grads(clf: Classifier, batch: list[tuple[MarkedSequence, str]]):
    """Mean cross-entropy over a batch plus mean parameter gradients.

    Exposed so the training gradients can be checked against finite
    differences on a frozen minibatch.
    """
    if not batch:
        raise ValueError("empty batch")
    total_loss = 0.0
    totals = {
        "embeddings": np.zeros_like(clf.embeddings),
        "w_hidden": np.zeros_like(clf.w_hidden),
        "b_hidden": np.zeros_like(clf.b_hidden),
        "w_out": np.zeros_like(clf.w_out),
        "b_out": np.zeros_like(clf.b_out),
    }
    for marked, label in batch:
        ids = np.asarray(clf.vocab.encode(marked.tokens))
        loss, grads = _sample_loss_and_grads(
            clf, ids, marked.e1_open_pos, marked.e2_open_pos, clf.label_index(label)
        )
        total_loss += loss
        for name, g in grads.items():
            totals[name] += g
    n = len(batch)
    return total_loss / n, {name: g / n for name, g in totals.items()}


def train(train_set: list[Instance], config: TrainConfig, seed: int) -> Classifier:
    """Fit the classifier with plain minibatch gradient descent.

    Fully reproducible from the seed. Raises TrainingError if the loss
    goes non-finite or the final training accuracy does not beat the
    majority-class baseline.
    """
    if not train_set:
        raise TrainingError("training set is empty")
    config.validate()
    rng = np.random.default_rng(seed)

    vocab = build_vocab(train_set, config.min_freq)
    labels = tuple(sorted({inst.label for inst in train_set}))
    d, hdim, k = config.dim, config.hidden, len(labels)
    clf = Classifier(
        vocab=vocab,
        labels=labels,
        embeddings=rng.normal(0.0, 0.1, size=(len(vocab), d)),
        w_hidden=rng.normal(0.0, 1.0 / math.sqrt(3 * d), size=(hdim, 3 * d)),
        b_hidden=np.zeros(hdim),
        w_out=rng.normal(0.0, 1.0 / math.sqrt(hdim), size=(k, hdim)),
        b_out=np.zeros(k),
        config=config,
    )

    encoded = []
    for inst in train_set:
        marked = insert_markers(inst)
        encoded.append(
            (
                np.asarray(vocab.encode(marked.tokens)),
                marked.e1_open_pos,
                marked.e2_open_pos,
                clf.label_index(inst.label),
            )
        )

    n = len(encoded)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            batch_loss = 0.0
            sums = {
                "embeddings": np.zeros_like(clf.embeddings),
                "w_hidden": np.zeros_like(clf.w_hidden),
                "b_hidden": np.zeros_like(clf.b_hidden),
                "w_out": np.zeros_like(clf.w_out),
                "b_out": np.zeros_like(clf.b_out),
            }
            for i in batch_idx:
                ids, p1, p2, y = encoded[i]
                loss, grads = _sample_loss_and_grads(clf, ids, p1, p2, y)
                batch_loss += loss
                for name, g in grads.items():
                    sums[name] += g
            m = len(batch_idx)
            if not math.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting at {start}"
                )
            step = config.learning_rate / m
            clf.embeddings -= step * sums["embeddings"]
            clf.w_hidden -= step * sums["w_hidden"]
            clf.b_hidden -= step * sums["b_hidden"]
            clf.w_out -= step * sums["w_out"]
            clf.b_out -= step * sums["b_out"]

    accuracy = training_accuracy(clf, encoded)
    majority = max(Counter(y for _, _, _, y in encoded).values()) / n
    if accuracy <= majority:
        raise TrainingError(
            f"training accuracy {accuracy:.3f} does not beat the majority baseline "
            f"{majority:.3f}; increase epochs or the learning rate"
        )
    return clf


def training_accuracy(clf: Classifier, encoded) -> float:
    correct = 0
    for ids, p1, p2, y in encoded:
        logits = clf._forward(clf.embeddings[ids], p1, p2)[3]
        if int(np.argmax(logits)) == y:
            correct += 1
    return correct / len(encoded)


def accuracy(clf: Classifier, instances: list[Instance]) -> float:
    if not instances:
        raise ValueError("no instances")
    hits = sum(clf.predict_instance(i).label == i.label for i in instances)
    return hits / len(instances)


def save_classifier(clf: Classifier, path: str | Path) -> None:
    """Write parameters, config and the embedded vocabulary as JSON."""
    payload = {
        "format_version": FORMAT_VERSION,
        "vocab": {
            "id_to_token": list(clf.vocab.id_to_token),
            "frequencies": clf.vocab.frequencies,
            "min_freq": clf.vocab.min_freq,
        },
        "vocab_hash": clf.vocab.hash_hex(),
        "labels": list(clf.labels),
        "config": asdict(clf.config),
        "params": {
            "embeddings": clf.embeddings.tolist(),
            "w_hidden": clf.w_hidden.tolist(),
            "b_hidden": clf.b_hidden.tolist(),
            "w_out": clf.w_out.tolist(),
            "b_out": clf.b_out.tolist(),
        },
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_classifier(path: str | Path, vocab: Vocabulary | None = None) -> Classifier:
    """Load a parameter file, verifying format version and vocabulary hash.

    If ``vocab`` is given, its hash must match the one stored in the
    file; otherwise the embedded vocabulary is rehashed and checked.
    """
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc.msg})") from exc
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version!r}")

    vdata = payload["vocab"]
    embedded = Vocabulary(
        token_to_id={tok: i for i, tok in enumerate(vdata["id_to_token"])},
        id_to_token=tuple(vdata["id_to_token"]),
        frequencies=dict(vdata["frequencies"]),
        min_freq=int(vdata["min_freq"]),
    )
    stored_hash = payload["vocab_hash"]
    if embedded.hash_hex() != stored_hash:
        raise ModelFormatError(f"{path}: embedded vocabulary does not match its hash")
    if vocab is not None and vocab.hash_hex() != stored_hash:
        raise ModelFormatError(f"{path}: vocabulary hash mismatch")

    params = payload["params"]
    return Classifier(
        vocab=vocab if vocab is not None else embedded,
        labels=tuple(payload["labels"]),
        embeddings=np.asarray(params["embeddings"], dtype=np.float64),
        w_hidden=np.asarray(params["w_hidden"], dtype=np.float64),
        b_hidden=np.asarray(params["b_hidden"], dtype=np.float64),
        w_out=np.asarray(params["w_out"], dtype=np.float64),
        b_out=np.asarray(params["b_out"], dtype=np.float64),
        config=TrainConfig(**payload["config"]),
    )
