"""Linear probes on frozen encoders and the agreement / accuracy metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._training import minibatches, mix_seed
from .exceptions import DataError, DimensionError
from .nn import functional as F
from .nn.autograd import Tensor, no_grad
from .nn.model import Head
from .nn.optim import Adam
from .validation import check_embeddings, check_labels


@dataclass
class ProbeHyper:
    epochs: int = 100
    lr: float = 3e-4
    batch_size: int = 128


@dataclass
class EvalResult:
    agreement: float
    accuracy: float
    n_eval: int

    @property
    def gap(self):
        return abs(self.accuracy - self.agreement)


class LinearProbe(ClassifierMixin, BaseEstimator):
    """Softmax regression on fixed embeddings, trained with Adam on cross-entropy.

    ``n_classes=None`` infers the class count from the labels seen in ``fit``.
    """

    def __init__(self, n_classes=None, epochs=100, lr=3e-4, batch_size=128, random_state=0):
        self.n_classes = n_classes
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X = check_embeddings(X)
        n_classes = self.n_classes if self.n_classes is not None else int(np.max(y)) + 1
        y = check_labels(y, len(X), n_classes)
        self.head_ = Head.create((X.shape[1], n_classes), np.random.default_rng(self.random_state), "probe")
        opt = Adam(self.head_.params, lr=self.lr)
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            total = 0.0
            for idx in minibatches(len(X), self.batch_size, mix_seed(self.random_state, 3), epoch):
                opt.zero_grad()
                loss = F.cross_entropy(self.head_(Tensor(X[idx])), y[idx])
                loss.backward()
                opt.step()
                total += float(loss) * len(idx)
            self.loss_curve_.append(total / len(X))
        self.head_.set_trainable(False)
        self.classes_ = np.arange(n_classes)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_head(cls, head, **params):
        """A fitted probe wrapping an existing single-layer ``head`` (e.g. from a checkpoint)."""
        if len(head.dims) != 2:
            raise DimensionError(f"a linear probe has one layer, got dims {head.dims}")
        if head.prefix != "probe":
            head = Head(head.dims, {k.replace(head.prefix, "probe", 1): v.data for k, v in head.params.items()}, "probe")
        probe = cls(n_classes=head.dims[1], **params)
        probe.head_ = head.set_trainable(False)
        probe.classes_ = np.arange(head.dims[1])
        probe.n_features_in_ = head.dims[0]
        probe.loss_curve_ = []
        return probe

    @property
    def weight(self):
        return self.head_.params["probe.0.weight"].data

    @property
    def bias(self):
        return self.head_.params["probe.0.bias"].data

    def decision_function(self, X):
        check_is_fitted(self, "head_")
        X = check_embeddings(X, self.n_features_in_)
        return X @ self.weight.T + self.bias

    def predict_proba(self, X):
        logits = self.decision_function(X).astype(np.float64)
        with no_grad():
            return F.softmax(Tensor(logits)).data

    def predict(self, X):
        # np.argmax breaks ties towards the lowest class index
        return np.argmax(self.decision_function(X), axis=1)


def train_probe(encoder, labeled_ds, hyper=None, seed=0):
    """Fit a LinearProbe on the frozen ``encoder``'s embeddings of ``labeled_ds``."""
    hyper = hyper or ProbeHyper()
    if labeled_ds.labels is None:
        raise DataError("probe training needs labels")
    if labeled_ds.labels.min() < 0 or labeled_ds.labels.max() >= labeled_ds.classes:
        raise DataError(f"labels must lie in [0, {labeled_ds.classes})")
    emb = encoder.embed(labeled_ds.images)
    probe = LinearProbe(labeled_ds.classes, hyper.epochs, hyper.lr, hyper.batch_size, seed)
    return probe.fit(emb, labeled_ds.labels)


def _fraction_equal(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"prediction vectors differ in shape: {a.shape} vs {b.shape}")
    if len(a) == 0:
        raise DimensionError("need at least one prediction")
    return int(np.count_nonzero(a == b)) / len(a)


def agreement(preds_s, preds_t):
    """Fraction of samples on which surrogate and target predict the same class."""
    return _fraction_equal(preds_s, preds_t)


def accuracy(preds, labels):
    return _fraction_equal(preds, labels)


def evaluate(preds_s, preds_t, labels):
    return EvalResult(agreement(preds_s, preds_t), accuracy(preds_s, labels), len(labels))


def export_embeddings(encoder, dataset, path):
    """Write ``sample_id,label,e_1..e_D`` rows; values use 9 significant digits (float32 round-trip)."""
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    emb = encoder.embed(dataset.images)
    header = ["sample_id", "label"] + [f"e_{i + 1}" for i in range(emb.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k in range(len(dataset)):
            label = "" if dataset.labels is None else int(dataset.labels[k])
            writer.writerow([int(dataset.ids[k]), label] + [f"{v:.9g}" for v in emb[k]])
    return path
