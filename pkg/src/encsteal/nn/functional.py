"""Differentiable building blocks used by models and losses."""
import numpy as np

from ..exceptions import DegenerateInputError, DimensionError
from .autograd import Tensor, as_tensor, logsumexp


def linear(x, weight, bias=None):
    out = x @ weight.T
    return out if bias is None else out + bias


def l2_normalize(x, axis=-1):
    """Scale rows to unit norm. Zero rows raise instead of yielding NaN or 0."""
    x = as_tensor(x)
    norms = (x * x).sum(axis=axis, keepdims=True).sqrt()
    if np.any(norms.data == 0):
        raise DegenerateInputError("cannot normalize a zero-norm vector")
    return x / norms


def cosine_matrix(a, b):
    """Pairwise cosine similarities between rows of ``a`` [N,D] and ``b`` [M,D]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"cosine_matrix needs [N,D] and [M,D], got {a.shape}, {b.shape}")
    return l2_normalize(a) @ l2_normalize(b).T


def cosine_sim(u, v):
    """Cosine similarity of two equal-length non-zero vectors, as a float."""
    u = np.asarray(u.data if isinstance(u, Tensor) else u, dtype=np.float64).ravel()
    v = np.asarray(v.data if isinstance(v, Tensor) else v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def log_softmax(logits, axis=-1):
    lse = logsumexp(logits, axis=axis)
    return logits - lse.reshape(lse.shape[:axis % logits.ndim] + (1,) + lse.shape[axis % logits.ndim:])


def softmax(logits, axis=-1):
    return log_softmax(logits, axis=axis).exp()


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} and labels {labels.shape} disagree")
    logits = logits.astype(np.float64)
    picked = logits[np.arange(len(labels)), labels]
    return (logsumexp(logits, axis=1) - picked).mean()


def mse(pred, target):
    """Mean over all elements of the squared difference, reduced in float64."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    return (diff * diff).mean()
