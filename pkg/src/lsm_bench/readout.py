"""Readout classifiers on liquid state vectors.

* ``sgd``  - single softmax layer trained with mini-batch SGD on cross-entropy
* ``svm1`` - one-vs-rest linear SVM on binarized state vectors
* ``svm2`` - the same SVM on the raw normalized vectors

Both SVM variants are trained by primal subgradient descent on the hinge
loss plus an L2 penalty, sharing the optimizer loop with the softmax model.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

READOUT_KINDS = ("sgd", "svm1", "svm2")
_MODEL_MAGIC = b"LSMR"
_MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sHBII")


def binarize(x) -> np.ndarray:
    """1 where an element exceeds 0.5, else 0 (0.5 itself maps to 0)."""
    return (np.asarray(x, dtype=np.float64) > 0.5).astype(np.float64)


@dataclass(frozen=True)
class ReadoutHyper:
    learning_rate: float = 0.05
    epochs: int = 100
    batch_size: int = 32
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0 or self.l2 < 0:
            raise ValueError(f"invalid readout hyper-parameters {self}")


@dataclass(eq=False)
class ReadoutModel:
    kind: str
    weights: np.ndarray  # (n_classes, n_features)
    biases: np.ndarray  # (n_classes,)
    classes: np.ndarray  # label value of each row, ascending
    hyper: ReadoutHyper = field(default_factory=ReadoutHyper)

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def features(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[1]}")
        return binarize(x) if self.kind == "svm1" else x

    def scores(self, x) -> np.ndarray:
        return self.features(x) @ self.weights.T + self.biases

    def predict(self, x) -> np.ndarray:
        # argmax returns the first maximum, i.e. the lowest class id on ties
        return self.classes[np.argmax(self.scores(x), axis=1)]

    def save(self, path) -> None:
        kind = READOUT_KINDS.index(self.kind)
        c, f = self.weights.shape
        blob = (_MODEL_HEADER.pack(_MODEL_MAGIC, _MODEL_VERSION, kind, c, f)
                + self.classes.astype("<i8").tobytes()
                + self.weights.astype("<f8").tobytes()
                + self.biases.astype("<f8").tobytes())
        Path(path).write_bytes(blob)

    @classmethod
    def load(cls, path) -> "ReadoutModel":
        data = Path(path).read_bytes()
        magic, version, kind, c, f = _MODEL_HEADER.unpack_from(data)
        if magic != _MODEL_MAGIC or version != _MODEL_VERSION:
            raise ValueError(f"{path}: not a readout model file")
        if len(data) != _MODEL_HEADER.size + 8 * (c + c * f + c):
            raise ValueError(f"{path}: truncated readout model")
        off = _MODEL_HEADER.size
        classes = np.frombuffer(data, "<i8", c, off).astype(np.int64)
        off += 8 * c
        weights = np.frombuffer(data, "<f8", c * f, off).reshape(c, f).copy()
        off += 8 * c * f
        biases = np.frombuffer(data, "<f8", c, off).copy()
        return cls(READOUT_KINDS[kind], weights, biases, classes)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_loss_grad(weights, biases, x, y_idx, l2: float = 0.0):
    """Mean cross-entropy + (l2/2)||W||^2 and its gradients."""
    n = len(x)
    p = softmax(x @ weights.T + biases)
    loss = -np.mean(np.log(p[np.arange(n), y_idx] + 1e-300)) + 0.5 * l2 * np.sum(weights ** 2)
    p[np.arange(n), y_idx] -= 1.0
    p /= n
    return loss, p.T @ x + l2 * weights, p.sum(axis=0)


def hinge_loss_grad(weights, biases, x, y_idx, l2: float = 0.0):
    """One-vs-rest hinge loss, mean over samples and summed over classes,
    + (l2/2)||W||^2, with a subgradient (zero at the kink)."""
    n = len(x)
    target = -np.ones((n, weights.shape[0]))
    target[np.arange(n), y_idx] = 1.0
    margin = 1.0 - target * (x @ weights.T + biases)
    active = margin > 0
    loss = np.sum(margin[active]) / n + 0.5 * l2 * np.sum(weights ** 2)
    g = -(target * active) / n
    return loss, g.T @ x + l2 * weights, g.sum(axis=0)


_OBJECTIVES = {"sgd": softmax_loss_grad, "svm1": hinge_loss_grad, "svm2": hinge_loss_grad}


def _check_training_set(x, labels):
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(labels):
        raise ValueError("vectors must be 2-D with one label per row")
    classes, y_idx = np.unique(labels, return_inverse=True)
    if classes.size < 2:
        raise ValueError("training set needs at least two classes")
    return x, classes, y_idx


def _train(kind: str, x, labels, hyper: ReadoutHyper, history: list | None = None) -> ReadoutModel:
    x, classes, y_idx = _check_training_set(x, labels)
    rng = np.random.default_rng(hyper.seed)
    weights = rng.normal(0.0, 0.01, size=(classes.size, x.shape[1]))
    biases = np.zeros(classes.size)
    model = ReadoutModel(kind, weights, biases, classes, hyper)
    if kind == "svm1":
        x = binarize(x)
    objective = _OBJECTIVES[kind]
    n = len(x)
    for epoch in range(hyper.epochs):
        lr = hyper.learning_rate / np.sqrt(epoch + 1.0)
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            _, gw, gb = objective(weights, biases, x[idx], y_idx[idx], hyper.l2)
            weights -= lr * gw
            biases -= lr * gb
        if history is not None:
            history.append(objective(weights, biases, x, y_idx, hyper.l2)[0])
    return model


def train_sgd(vectors, labels, hyper: ReadoutHyper = ReadoutHyper(), history: list | None = None) -> ReadoutModel:
    """Softmax readout.  If ``history`` is given, the full-batch loss after each
    epoch is appended to it."""
    return _train("sgd", vectors, labels, hyper, history)


def train_svm(vectors, labels, hyper: ReadoutHyper = ReadoutHyper(), binarize_first: bool = False,
              history: list | None = None) -> ReadoutModel:
    return _train("svm1" if binarize_first else "svm2", vectors, labels, hyper, history)


def train_readout(kind: str, vectors, labels, hyper: ReadoutHyper = ReadoutHyper()) -> ReadoutModel:
    if kind not in READOUT_KINDS:
        raise ValueError(f"unknown readout {kind!r}; expected one of {READOUT_KINDS}")
    return _train(kind, vectors, labels, hyper)


def evaluate(model: ReadoutModel, vectors, labels) -> float:
    labels = np.asarray(labels)
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty set")
    if vectors.ndim != 2 or len(vectors) != len(labels):
        raise ValueError("vectors and labels do not line up")
    return float(np.mean(model.predict(vectors) == labels))
