"""Black-box target oracle and the stealing attacks run against it."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import losses
from ._training import merged_params, minibatches, mix_seed, weighted_mean
from .augment import AugmentPolicy, make_views
from .exceptions import BudgetExhaustedError, ConfigurationError
from .nn import functional as F
from .nn.autograd import Tensor, no_grad
from .nn.model import Head, init_model
from .nn.optim import Adam
from .validation import as_dataset, check_images

RESPONSE_TYPES = ("Label", "Posterior", "Embedding")
ATTACKS = ("ConvClassifier", "ConvEncoder", "ContSteal")


class TargetOracle:
    """Query-only access to a frozen target.

    With ``response_type="Embedding"`` the oracle returns backbone embeddings.
    ``Label`` and ``Posterior`` need a fitted ``probe`` (the downstream linear
    layer) and return its argmax / softmax. Every accepted call adds the batch
    size to ``query_count``; a call that would exceed ``query_budget`` is
    rejected whole with :class:`BudgetExhaustedError` and not counted.
    """

    def __init__(self, encoder, response_type="Embedding", probe=None, query_budget=None):
        if response_type not in RESPONSE_TYPES:
            raise ConfigurationError(f"unknown response type {response_type!r}")
        if response_type != "Embedding" and probe is None:
            raise ConfigurationError(f"{response_type} responses need a downstream probe")
        if query_budget is not None and query_budget < 1:
            raise ConfigurationError("query_budget must be a positive integer")
        self._encoder = encoder.clone(trainable=False)
        self._weight = self._bias = None
        if probe is not None:
            self._weight = np.array(probe.weight, dtype=np.float32)
            self._bias = np.array(probe.bias, dtype=np.float32)
        self.response_type = response_type
        self.query_budget = query_budget
        self.query_count = 0
        self.query_log = []

    @property
    def input_shape(self):
        return self._encoder.arch.input_shape

    @property
    def embed_dim(self):
        return self._encoder.embed_dim

    @property
    def n_classes(self):
        return None if self._weight is None else self._weight.shape[0]

    @property
    def remaining(self):
        return None if self.query_budget is None else self.query_budget - self.query_count

    def param_hash(self):
        h = hashlib.sha256(self._encoder.param_hash().encode())
        if self._weight is not None:
            h.update(self._weight.tobytes())
            h.update(self._bias.tobytes())
        return h.hexdigest()

    def query(self, batch, ids=None):
        batch = check_images(batch, self.input_shape)
        n = len(batch)
        if self.query_budget is not None and self.query_count + n > self.query_budget:
            raise BudgetExhaustedError(n, self.query_count, self.query_budget)
        emb = self._encoder.embed(batch)
        self.query_count += n
        if ids is not None:
            self.query_log.append(np.asarray(ids, dtype=np.int64).copy())
        if self.response_type == "Embedding":
            return emb
        logits = emb @ self._weight.T + self._bias
        if self.response_type == "Label":
            return np.argmax(logits, axis=1)
        with no_grad():
            return F.softmax(Tensor(logits.astype(np.float64))).data

    def queried_ids(self):
        return np.concatenate(self.query_log) if self.query_log else np.zeros(0, np.int64)


@dataclass
class StealConfig:
    attack: str = "ContSteal"
    tau: float = 0.5
    epochs: int = 50
    batch_size: int = 128
    lr: float = 1e-3
    include_d_self: bool = True
    include_d_encoder_negatives: bool = True
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)
    seed: int = 0
    adapter: bool = False

    def __post_init__(self):
        if isinstance(self.policy, dict):
            self.policy = AugmentPolicy.from_dict(self.policy)
        if self.attack not in ATTACKS:
            raise ConfigurationError(f"unknown attack {self.attack!r}; expected one of {ATTACKS}")
        if self.tau <= 0:
            raise ConfigurationError("tau must be > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")

    def to_dict(self):
        d = dict(self.__dict__)
        d["policy"] = self.policy.to_dict()
        return d


@dataclass
class StealResult:
    surrogate: object  # frozen EncoderModel (backbone)
    losses: list
    query_count: int
    exhausted: bool = False
    head: object = None  # classifier head (ConvClassifier) or adapter (optional)

    def predict(self, images):
        """Surrogate classifier predictions; only for ConvClassifier results."""
        if self.head is None or self.head.prefix != "classifier":
            raise ConfigurationError("this result has no classifier head")
        with no_grad():
            return np.argmax(self.head(Tensor(self.surrogate.embed(images))).data, axis=1)


def _surrogate(arch, seed, init_encoder=None):
    if init_encoder is not None:
        model = init_encoder.clone(trainable=True)
        return model.without_projector().set_trainable(True) if model.arch.with_projector else model
    return init_model(arch, seed).without_projector().set_trainable(True)


def _train_loop(oracle, ds, cfg, step):
    """Shared epoch/batch loop. ``step(epoch, idx) -> loss`` queries and updates.

    Stops cleanly if the oracle budget runs out after at least one update.
    """
    history, exhausted, updates = [], False, 0
    for epoch in range(cfg.epochs):
        batch_losses, sizes = [], []
        try:
            for idx in minibatches(len(ds), cfg.batch_size, mix_seed(cfg.seed, 4), epoch):
                batch_losses.append(step(epoch, idx))
                sizes.append(len(idx))
                updates += 1
        except BudgetExhaustedError:
            if updates == 0:
                raise
            exhausted = True
        if sizes:
            history.append(weighted_mean(batch_losses, sizes))
        if exhausted:
            break
    return history, exhausted


def conv_steal_classifier(oracle, surrogate_ds, surrogate_arch, cfg, n_classes=None, init_encoder=None, init_head=None):
    """Imitate a target classifier: cross-entropy on labels, MSE on posteriors."""
    if oracle.response_type not in ("Label", "Posterior"):
        raise ConfigurationError("classifier stealing needs Label or Posterior responses")
    n_classes = oracle.n_classes if n_classes is None else n_classes
    if n_classes != oracle.n_classes:
        raise ConfigurationError(f"surrogate head has {n_classes} classes, oracle returns {oracle.n_classes}")
    model = _surrogate(surrogate_arch, cfg.seed, init_encoder)
    if init_head is not None:
        head = Head(init_head.dims, {k.replace(init_head.prefix, "classifier", 1): v.data.copy() for k, v in init_head.params.items()}, "classifier")
    else:
        head = Head.create((model.embed_dim, n_classes), np.random.default_rng([cfg.seed, 5]), "classifier")
    if head.dims[-1] != oracle.n_classes:
        raise ConfigurationError(f"surrogate head has {head.dims[-1]} classes, oracle returns {oracle.n_classes}")
    opt = Adam(merged_params(model, head), lr=cfg.lr)
    images, ids = surrogate_ds.images, surrogate_ds.ids

    def step(epoch, idx):
        resp = oracle.query(images[idx], ids[idx])
        opt.zero_grad()
        logits = head(model(images[idx]))
        if oracle.response_type == "Label":
            loss = losses.label_cross_entropy_loss(logits, resp)
        else:
            loss = losses.posterior_mse_loss(logits, resp)
        loss.backward()
        opt.step()
        return float(loss)

    history, exhausted = _train_loop(oracle, surrogate_ds, cfg, step)
    return StealResult(model.set_trainable(False), history, oracle.query_count, exhausted, head.set_trainable(False))


def _adapter(cfg, model, oracle):
    if model.embed_dim == oracle.embed_dim:
        return None
    if not cfg.adapter:
        raise ConfigurationError(
            f"surrogate embed_dim {model.embed_dim} != target embed_dim {oracle.embed_dim}; "
            "enable the adapter to bridge them"
        )
    return Head.create((model.embed_dim, oracle.embed_dim), np.random.default_rng([cfg.seed, 6]), "adapter")


def conv_steal_encoder(oracle, surrogate_ds, surrogate_arch, cfg, init_encoder=None):
    """Regress surrogate embeddings onto target embeddings of the original images (MSE)."""
    if oracle.response_type != "Embedding":
        raise ConfigurationError("encoder stealing needs Embedding responses")
    model = _surrogate(surrogate_arch, cfg.seed, init_encoder)
    adapter = _adapter(cfg, model, oracle)
    modules = [model] + ([adapter] if adapter else [])
    opt = Adam(merged_params(*modules), lr=cfg.lr)
    images, ids = surrogate_ds.images, surrogate_ds.ids

    def step(epoch, idx):
        resp = oracle.query(images[idx], ids[idx])
        opt.zero_grad()
        emb = model(images[idx])
        loss = losses.embedding_mse_loss(adapter(emb) if adapter else emb, resp)
        loss.backward()
        opt.step()
        return float(loss)

    history, exhausted = _train_loop(oracle, surrogate_ds, cfg, step)
    return StealResult(model.set_trainable(False), history, oracle.query_count, exhausted, adapter)


def cont_steal_train(oracle, surrogate_ds, surrogate_arch, cfg, init_encoder=None):
    """Contrastive stealing: query the target with one view, train the surrogate on the other."""
    if oracle.response_type != "Embedding":
        raise ConfigurationError("contrastive stealing needs Embedding responses")
    model = _surrogate(surrogate_arch, cfg.seed, init_encoder)
    adapter = _adapter(cfg, model, oracle)
    modules = [model] + ([adapter] if adapter else [])
    opt = Adam(merged_params(*modules), lr=cfg.lr)
    p = cfg.policy
    policy = AugmentPolicy(p.n, p.m, p.op_set, mix_seed(p.rng_seed, cfg.seed))
    images, ids = surrogate_ds.images, surrogate_ds.ids

    def step(epoch, idx):
        views_t, views_s = make_views(images[idx], policy, epoch, ids[idx])
        emb_t = oracle.query(views_t, ids[idx])
        opt.zero_grad()
        emb_s = model(views_s)
        loss = losses.cont_steal_loss(
            adapter(emb_s) if adapter else emb_s,
            emb_t,
            cfg.tau,
            cfg.include_d_self,
            cfg.include_d_encoder_negatives,
        )
        if loss.requires_grad:
            loss.backward()
            opt.step()
        return float(loss)

    history, exhausted = _train_loop(oracle, surrogate_ds, cfg, step)
    return StealResult(model.set_trainable(False), history, oracle.query_count, exhausted, adapter)


ATTACK_FUNCTIONS = {
    "ConvClassifier": conv_steal_classifier,
    "ConvEncoder": conv_steal_encoder,
    "ContSteal": cont_steal_train,
}


def run_attack(oracle, surrogate_ds, surrogate_arch, cfg):
    return ATTACK_FUNCTIONS[cfg.attack](oracle, surrogate_ds, surrogate_arch, cfg)


class _StealEstimator(BaseEstimator):
    _attack = None

    def _config(self):
        params = self.get_params()
        keys = StealConfig.__dataclass_fields__
        kwargs = {k: v for k, v in params.items() if k in keys}
        kwargs["seed"] = self.random_state
        if kwargs.get("policy") is None:
            kwargs.pop("policy", None)
        return StealConfig(attack=self._attack, **kwargs)

    def fit(self, X, y=None, ids=None):
        """Train a surrogate by querying ``self.oracle`` on ``X``; ``y`` is ignored."""
        ds = as_dataset(X, ids=ids)
        arch = self.arch or self.oracle._encoder.arch
        result = ATTACK_FUNCTIONS[self._attack](self.oracle, ds, arch, self._config())
        self.result_ = result
        self.surrogate_ = result.surrogate
        self.loss_curve_ = result.losses
        self.queries_ = result.query_count
        return self

    def transform(self, X):
        check_is_fitted(self, "surrogate_")
        return self.surrogate_.embed(check_images(X, self.surrogate_.arch.input_shape))


class ContStealAttack(TransformerMixin, _StealEstimator):
    """Contrastive stealing as an estimator; ``transform`` gives surrogate embeddings."""

    _attack = "ContSteal"

    def __init__(
        self,
        oracle=None,
        arch=None,
        epochs=50,
        batch_size=128,
        lr=1e-3,
        tau=0.5,
        include_d_self=True,
        include_d_encoder_negatives=True,
        policy=None,
        adapter=False,
        random_state=0,
    ):
        self.oracle = oracle
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.tau = tau
        self.include_d_self = include_d_self
        self.include_d_encoder_negatives = include_d_encoder_negatives
        self.policy = policy
        self.adapter = adapter
        self.random_state = random_state


class EncoderStealAttack(TransformerMixin, _StealEstimator):
    """Conventional embedding regression (MSE) as an estimator."""

    _attack = "ConvEncoder"

    def __init__(self, oracle=None, arch=None, epochs=50, batch_size=128, lr=1e-3, adapter=False, random_state=0):
        self.oracle = oracle
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.adapter = adapter
        self.random_state = random_state


class ClassifierStealAttack(ClassifierMixin, _StealEstimator):
    """Conventional classifier stealing from Label or Posterior responses."""

    _attack = "ConvClassifier"

    def __init__(self, oracle=None, arch=None, epochs=50, batch_size=128, lr=1e-3, random_state=0):
        self.oracle = oracle
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def fit(self, X, y=None, ids=None):
        super().fit(X, y, ids)
        self.classes_ = np.arange(self.oracle.n_classes)
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return self.result_.predict(check_images(X, self.surrogate_.arch.input_shape))
