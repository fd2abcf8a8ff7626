"""Target encoder pretraining: SimCLR, MoCo, BYOL, SimSiam and supervised."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import losses
from ._training import merged_params, minibatches, mix_seed, weighted_mean
from .augment import AugmentPolicy, make_views
from .exceptions import ConfigurationError, DimensionError
from .nn import functional as F
from .nn.autograd import Tensor, no_grad
from .nn.model import ArchSpec, Head, init_model
from .nn.optim import Adam
from .validation import as_dataset, check_images

METHODS = ("SimCLR", "MoCo", "BYOL", "SimSiam", "Supervised")


@dataclass
class PretrainHyper:
    epochs: int = 50
    batch_size: int = 128
    lr: float = 1e-3
    tau: float = 0.5
    moco_tau: float = 0.07
    moco_k: int = 1024
    moco_momentum: float = 0.99
    byol_decay: float = 0.99
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)

    def __post_init__(self):
        if isinstance(self.policy, dict):
            self.policy = AugmentPolicy.from_dict(self.policy)
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.tau <= 0 or self.moco_tau <= 0:
            raise ConfigurationError("temperatures must be > 0")
        if not 0 < self.moco_momentum <= 1 or not 0 < self.byol_decay <= 1:
            raise ConfigurationError("momentum and decay must lie in (0, 1]")
        if self.moco_k < 1:
            raise ConfigurationError("moco_k must be >= 1")

    def to_dict(self):
        d = dict(self.__dict__)
        d["policy"] = self.policy.to_dict()
        return d


@dataclass
class MoCoState:
    """Momentum encoder plus a FIFO of at most ``K`` L2-normalised keys (oldest first)."""

    momentum_encoder: object
    K: int = 1024
    momentum: float = 0.99
    queue: np.ndarray | None = None

    def __post_init__(self):
        if self.K < 1:
            raise ConfigurationError("K must be >= 1")
        if self.queue is None:
            self.queue = np.zeros((0, self.momentum_encoder.out_dim), dtype=np.float32)


@dataclass
class ByolState:
    target: object
    decay: float = 0.99


def ema_update(target_params, online_params, decay):
    """target <- decay * target + (1 - decay) * online, in place."""
    for name, p in target_params.items():
        online = online_params[name]
        online = online.data if isinstance(online, Tensor) else np.asarray(online)
        p.data = (decay * p.data + (1.0 - decay) * online).astype(p.data.dtype)


def moco_update(state, online_params, new_keys):
    """Momentum step on the key encoder, then enqueue ``new_keys`` and drop the oldest."""
    new_keys = np.asarray(getattr(new_keys, "data", new_keys), dtype=np.float32)
    if new_keys.ndim != 2:
        raise DimensionError(f"new_keys must be [N, D], got {new_keys.shape}")
    if len(new_keys) > state.K:
        raise ConfigurationError(f"cannot enqueue {len(new_keys)} keys into a queue of size {state.K}")
    ema_update(state.momentum_encoder.params, online_params, state.momentum)
    norms = np.linalg.norm(new_keys, axis=1, keepdims=True)
    keys = new_keys / np.where(norms == 0, 1, norms)
    state.queue = np.concatenate([state.queue, keys.astype(np.float32)])[-state.K :]
    return state


@dataclass
class PretrainResult:
    model: object  # backbone only, frozen
    losses: list
    method: str
    full_model: object = None  # backbone + projector as trained
    heads: dict = field(default_factory=dict)


def _interleave(a, b):
    out = np.empty((2 * len(a),) + a.shape[1:], dtype=a.dtype)
    out[0::2], out[1::2] = a, b
    return out


def pretrain_encoder(method, dataset, arch, hyper=None, seed=0, on_epoch=None):
    """Train an encoder on ``dataset`` and return its frozen backbone.

    ``on_epoch(epoch, mean_loss)`` is called after every epoch.
    """
    hyper = hyper or PretrainHyper()
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "Supervised" and dataset.labels is None:
        raise ConfigurationError("Supervised pretraining needs labelled data")
    if method in ("SimCLR", "MoCo", "BYOL") and not arch.with_projector:
        raise ConfigurationError(f"{method} trains through a projection head; set with_projector")
    check_images(dataset.images, arch.input_shape)

    model = init_model(arch, seed)
    head_rng = np.random.default_rng([seed, 1])
    heads = {}
    moco = byol = None
    if method == "MoCo":
        moco = MoCoState(model.clone(trainable=False), hyper.moco_k, hyper.moco_momentum)
    elif method == "BYOL":
        heads["predictor"] = Head.create((arch.proj_dim, arch.proj_dim, arch.proj_dim), head_rng, "predictor")
        byol = ByolState(model.clone(trainable=False), hyper.byol_decay)
    elif method == "SimSiam":
        heads["predictor"] = Head.create((arch.embed_dim, arch.proj_dim, arch.embed_dim), head_rng, "predictor")
    elif method == "Supervised":
        heads["classifier"] = Head.create((arch.embed_dim, dataset.classes), head_rng, "classifier")

    opt = Adam(merged_params(model, *heads.values()), lr=hyper.lr)
    policy_seed = mix_seed(hyper.policy.rng_seed, seed)
    policy = AugmentPolicy(hyper.policy.n, hyper.policy.m, hyper.policy.op_set, policy_seed)
    images, ids = dataset.images, dataset.ids
    history = []
    for epoch in range(hyper.epochs):
        batch_losses, sizes = [], []
        for idx in minibatches(len(dataset), hyper.batch_size, mix_seed(seed, 2), epoch):
            vt, vs = make_views(images[idx], policy, epoch, ids[idx])
            opt.zero_grad()
            if method == "SimCLR":
                z = model(_interleave(vt, vs), use_projector=True)
                loss = losses.simclr_batch_loss(z, hyper.tau)
            elif method == "MoCo":
                q = model(vt, use_projector=True)
                with no_grad():
                    k = moco.momentum_encoder(vs, use_projector=True)
                loss = losses.moco_batch_loss(q, k, moco, hyper.moco_tau)
            elif method == "BYOL":
                pred = heads["predictor"]
                p1 = pred(model(vt, use_projector=True))
                p2 = pred(model(vs, use_projector=True))
                with no_grad():
                    t1 = byol.target(vt, use_projector=True)
                    t2 = byol.target(vs, use_projector=True)
                loss = (losses.byol_loss(p1, t2) + losses.byol_loss(p2, t1)) * 0.5
            elif method == "SimSiam":
                pred = heads["predictor"]
                h1, h2 = model(vt), model(vs)
                loss = losses.simsiam_loss(h1, h2, pred(h1), pred(h2))
            else:
                logits = heads["classifier"](model(vt))
                loss = F.cross_entropy(logits, dataset.labels[idx])
            loss.backward()
            opt.step()
            if method == "MoCo":
                moco_update(moco, model.params, k.data[: moco.K])
            elif method == "BYOL":
                ema_update(byol.target.params, model.params, byol.decay)
            batch_losses.append(float(loss))
            sizes.append(len(idx))
        history.append(weighted_mean(batch_losses, sizes))
        if on_epoch is not None:
            on_epoch(epoch, history[-1])

    backbone = model.without_projector().set_trainable(False)
    return PretrainResult(backbone, history, method, model.set_trainable(False), heads)


class SelfSupervisedEncoder(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` pretrains, ``transform`` returns backbone embeddings.

    ``arch=None`` builds the default SmallConv for the image shape seen in ``fit``.
    """

    def __init__(
        self,
        method="SimCLR",
        arch=None,
        epochs=50,
        batch_size=128,
        lr=1e-3,
        tau=0.5,
        moco_tau=0.07,
        moco_k=1024,
        moco_momentum=0.99,
        byol_decay=0.99,
        policy=None,
        random_state=0,
    ):
        self.method = method
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.tau = tau
        self.moco_tau = moco_tau
        self.moco_k = moco_k
        self.moco_momentum = moco_momentum
        self.byol_decay = byol_decay
        self.policy = policy
        self.random_state = random_state

    def fit(self, X, y=None):
        ds = as_dataset(X, y)
        arch = self.arch or ArchSpec(input_shape=ds.images.shape[1:])
        hyper = PretrainHyper(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            tau=self.tau,
            moco_tau=self.moco_tau,
            moco_k=self.moco_k,
            moco_momentum=self.moco_momentum,
            byol_decay=self.byol_decay,
            policy=self.policy or AugmentPolicy(),
        )
        result = pretrain_encoder(self.method, ds, arch, hyper, self.random_state)
        self.encoder_ = result.model
        self.loss_curve_ = result.losses
        self.embed_dim_ = result.model.embed_dim
        return self

    def transform(self, X):
        check_is_fitted(self, "encoder_")
        return self.encoder_.embed(check_images(X, self.encoder_.arch.input_shape))


class FrozenEncoder(TransformerMixin, BaseEstimator):
    """Wrap an already-trained EncoderModel as a stateless transformer (e.g. in a Pipeline)."""

    def __init__(self, encoder=None):
        self.encoder = encoder

    def fit(self, X=None, y=None):
        if self.encoder is None:
            raise ConfigurationError("FrozenEncoder needs an encoder")
        self.encoder_ = self.encoder
        return self

    def transform(self, X):
        check_is_fitted(self, "encoder_")
        return self.encoder_.embed(check_images(X, self.encoder_.arch.input_shape))

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
