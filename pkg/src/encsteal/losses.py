"""Contrastive and regression objectives for pretraining and stealing.

All losses cast to float64 before reducing and return a scalar ``Tensor``;
``float(loss)`` gives the value. Arguments documented as gradient-free are
detached inside the loss, so callers cannot accidentally backpropagate into a
momentum encoder, an EMA target or an oracle response.

Row indices are 0-based: in a ``[2N, D]`` SimCLR batch rows ``2k`` and
``2k + 1`` are the two views of sample ``k``.
"""
import numpy as np

from .exceptions import DimensionError
from .nn import functional as F
from .nn.autograd import as_tensor, concat, logsumexp


def _rows(x, name):
    x = as_tensor(x).astype(np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimensionError(f"{name} must be a non-empty [N, D] array, got {x.shape}")
    return x


def _const_rows(x, name):
    return _rows(as_tensor(x).detach(), name)


def _similarity_logits(z, tau):
    zn = F.l2_normalize(z)
    return (zn @ zn.T) * (1.0 / tau)


def simclr_pair_loss(z, i, j, tau=0.5):
    """-log(exp(s_ij/tau) / sum_{k != i} exp(s_ik/tau)) over the 2N rows of ``z``."""
    z = _rows(z, "z")
    n = z.shape[0]
    if not (0 <= i < n and 0 <= j < n) or i == j:
        raise DimensionError(f"need distinct row indices in [0, {n}), got ({i}, {j})")
    logits = _similarity_logits(z, tau)[i]
    mask = np.ones(n, dtype=bool)
    mask[i] = False
    return logsumexp(logits, axis=0, mask=mask) - logits[j]


def simclr_batch_loss(z, tau=0.5):
    """Mean of l(2k, 2k+1) and l(2k+1, 2k) over all N positive pairs."""
    z = _rows(z, "z")
    n = z.shape[0]
    if n % 2:
        raise DimensionError(f"SimCLR batch needs an even row count, got {n}")
    logits = _similarity_logits(z, tau)
    partner = np.arange(n) ^ 1
    positives = logits[np.arange(n), partner]
    return (logsumexp(logits, axis=1, mask=~np.eye(n, dtype=bool)) - positives).mean()


def _queue_array(queue):
    keys = getattr(queue, "queue", queue)
    return None if keys is None or len(keys) == 0 else keys


def moco_batch_loss(q, k_pos, queue, tau=0.07):
    """Mean InfoNCE of queries against their momentum keys plus queued negatives."""
    q = _rows(q, "q")
    k_pos = _const_rows(k_pos, "k_pos")
    if k_pos.shape != q.shape:
        raise DimensionError(f"q {q.shape} and k_pos {k_pos.shape} disagree")
    qn = F.l2_normalize(q)
    pos = (qn * F.l2_normalize(k_pos)).sum(axis=1, keepdims=True) * (1.0 / tau)
    keys = _queue_array(queue)
    if keys is None:
        logits = pos
    else:
        keys = _const_rows(keys, "queue")
        logits = concat([pos, (qn @ F.l2_normalize(keys).T) * (1.0 / tau)], axis=1)
    return (logsumexp(logits, axis=1) - pos.reshape(-1)).mean()


def moco_loss(q, k_pos, queue, tau=0.07):
    """Single-query MoCo loss; ``queue`` is a MoCoState or a [K, D] array (may be empty)."""
    return moco_batch_loss(q, k_pos, queue, tau)


def byol_loss(online_out, target_out):
    """||a/|a| - b/|b|||^2 = 2 - 2 cos(a, b), averaged over rows; target is detached."""
    online = _rows(online_out, "online_out")
    target = _const_rows(target_out, "target_out")
    if online.shape != target.shape:
        raise DimensionError(f"shape mismatch {online.shape} vs {target.shape}")
    cos = (F.l2_normalize(online) * F.l2_normalize(target)).sum(axis=1)
    return (2.0 - 2.0 * cos).mean()


def simsiam_loss(h_i, h_j, p_i, p_j):
    """-(cos(sg(h_i), p_j) + cos(sg(h_j), p_i)) / 2 with ``p = g(h)``; h sides stop-gradient."""
    h_i, h_j = _const_rows(h_i, "h_i"), _const_rows(h_j, "h_j")
    p_i, p_j = _rows(p_i, "p_i"), _rows(p_j, "p_j")
    if not h_i.shape == h_j.shape == p_i.shape == p_j.shape:
        raise DimensionError("SimSiam inputs must share one [N, D] shape")
    a = (F.l2_normalize(h_i) * F.l2_normalize(p_j)).sum(axis=1)
    b = (F.l2_normalize(h_j) * F.l2_normalize(p_i)).sum(axis=1)
    return ((a + b) * -0.5).mean()


def cont_steal_loss(
    emb_s, emb_t, tau=0.5, include_d_self=True, include_d_encoder_negatives=True, reduction="mean"
):
    """Contrastive stealing loss between surrogate and (detached) target embeddings.

    For sample ``i`` with s_i = e_s(view_s(x_i)) and t_k = e_t(view_t(x_k)):

        pos      = exp(cos(s_i, t_i) / tau)
        enc_neg  = sum_k exp(cos(s_i, t_k) / tau)          (k = i included)
        self_neg = sum_{k != i} exp(cos(s_i, s_k) / tau)
        l(i)     = -log(pos / (enc_neg + self_neg))

    ``include_d_self=False`` drops ``self_neg``; ``include_d_encoder_negatives=False``
    replaces ``enc_neg`` by ``pos`` alone. ``reduction="none"`` returns l(i) per row.
    """
    s = _rows(emb_s, "emb_s")
    t = _const_rows(emb_t, "emb_t")
    if s.shape != t.shape:
        raise DimensionError(f"emb_s {s.shape} and emb_t {t.shape} disagree")
    n = s.shape[0]
    sn, tn = F.l2_normalize(s), F.l2_normalize(t)
    cross = (sn @ tn.T) * (1.0 / tau)
    eye = np.eye(n, dtype=bool)
    blocks, masks = [cross], [np.ones((n, n), bool) if include_d_encoder_negatives else eye]
    if include_d_self:
        blocks.append((sn @ sn.T) * (1.0 / tau))
        masks.append(~eye)
    logits = concat(blocks, axis=1)
    per_sample = logsumexp(logits, axis=1, mask=np.concatenate(masks, axis=1)) - cross[np.arange(n), np.arange(n)]
    if reduction == "none":
        return per_sample
    if reduction != "mean":
        raise ValueError(f"unknown reduction {reduction!r}")
    return per_sample.mean()


def embedding_mse_loss(emb_s, emb_t):
    """Conventional encoder stealing: mean squared error to detached target embeddings."""
    return F.mse(as_tensor(emb_s), as_tensor(emb_t).detach())


def posterior_mse_loss(logits, target_posteriors):
    """Conventional classifier stealing with posterior responses: MSE between softmax outputs."""
    return F.mse(F.softmax(as_tensor(logits).astype(np.float64)), as_tensor(target_posteriors).detach())


def label_cross_entropy_loss(logits, target_labels):
    """Conventional classifier stealing with label responses."""
    return F.cross_entropy(logits, target_labels)
