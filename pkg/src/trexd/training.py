"""Mini-batch SGD with momentum for the classifiers and the VAE."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .datasets import SyntheticDataset
from .errors import ConfigError, ContractError
from .models import MlpClassifier, VaeModel, gaussian_kl

log = logging.getLogger(__name__)

LOSS_KINDS = ("cross-entropy", "kl-target", "elbo")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    loss: str = "cross-entropy"

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch size must be at least 1")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}")


def ambiguous_targets(y: np.ndarray, K: int) -> np.ndarray:
    """Half the mass on class y and half on (y + 1) mod K."""
    p = np.zeros((len(y), K))
    idx = np.arange(len(y))
    p[idx, y] += 0.5
    p[idx, (y + 1) % K] += 0.5
    return p


def kl_target_loss(p: np.ndarray, logits: Tensor) -> Tensor:
    """Mean over the batch of KL(p || softmax(logits)), with 0 log 0 = 0."""
    p = np.atleast_2d(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        entropy_term = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0).sum()
    cross = ad.tsum(Tensor(p) * ad.log_softmax(logits))
    return (entropy_term - cross) / p.shape[0]


def cross_entropy_loss(y: np.ndarray, logits: Tensor) -> Tensor:
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(y)), y] = 1.0
    return -ad.tsum(Tensor(onehot) * ad.log_softmax(logits)) / len(y)


class _Sgd:
    def __init__(self, params: dict[str, np.ndarray], lr: float, momentum: float):
        self.params = {k: v.copy() for k, v in params.items()}
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}
        self.lr, self.momentum = lr, momentum

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            v = self.velocity[k]
            v *= self.momentum
            v -= self.lr * g
            self.params[k] += v


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def _fit_classifier(data: SyntheticDataset, cfg: TrainConfig, targets: np.ndarray | None,
                    hidden: Sequence[int], activation: str, history: list | None,
                    meta: dict | None) -> MlpClassifier:
    if len(data) == 0:
        raise ContractError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    widths = [data.X.shape[1], *hidden, data.K]
    model = MlpClassifier.init(widths, activation, seed=int(rng.integers(2**31)), meta=meta)
    names = list(model.params())
    opt = _Sgd(model.params(), cfg.lr, cfg.momentum)
    for epoch in range(cfg.epochs):
        for idx in _batches(len(data), cfg.batch_size, rng):
            with Tape() as tape:
                leaves = [tape.watch(opt.params[k]) for k in names]
                logits = model.logits(Tensor(data.X[idx]), leaves)
                if targets is None:
                    loss = cross_entropy_loss(data.y[idx], logits)
                else:
                    loss = kl_target_loss(targets[idx], logits)
            grads = backward(tape, loss)
            opt.step({k: grads[leaf] for k, leaf in zip(names, leaves)})
            if history is not None:
                history.append(loss.item())
        log.debug("epoch %d loss %.5f", epoch, loss.item())
    return MlpClassifier([opt.params[f"W{k}"] for k in range(len(widths) - 1)],
                         [opt.params[f"b{k}"] for k in range(len(widths) - 1)],
                         activation, dict(meta or {}))


def train_classifier(data: SyntheticDataset, cfg: TrainConfig, hidden: Sequence[int] = (64,),
                     activation: str = "relu", history: list | None = None,
                     meta: dict | None = None) -> MlpClassifier:
    """Cross-entropy training. Per-batch losses are appended to ``history`` if given."""
    if cfg.loss != "cross-entropy":
        raise ConfigError("train_classifier needs loss='cross-entropy'")
    return _fit_classifier(data, cfg, None, hidden, activation, history, meta)


def train_ambiguous_classifier(data: SyntheticDataset, cfg: TrainConfig, hidden: Sequence[int] = (64,),
                               activation: str = "relu", history: list | None = None,
                               meta: dict | None = None) -> MlpClassifier:
    """Train towards the always-ambiguous target: 0.5 on y and 0.5 on y+1 (mod K)."""
    if cfg.loss != "kl-target":
        raise ConfigError("train_ambiguous_classifier needs loss='kl-target'")
    if data.K < 2:
        raise ContractError("ambiguous targets need at least two classes")
    return _fit_classifier(data, cfg, ambiguous_targets(data.y, data.K), hidden, activation, history, meta)


def bce_with_logits(logits: Tensor, x: np.ndarray) -> Tensor:
    """Binary cross-entropy summed over pixels, per row."""
    return ad.tsum(ad.softplus(logits) - Tensor(x) * logits, axis=-1)


def vae_loss_terms(vae: VaeModel, x: np.ndarray, eps: np.ndarray, params: dict | None = None):
    """Per-row reconstruction BCE and KL for one reparameterised draw."""
    mu, logvar = vae.encode(Tensor(x), params)
    z = mu + ad.exp(0.5 * logvar) * Tensor(eps)
    recon = bce_with_logits(vae.decode_logits(z, params), x)
    return recon, gaussian_kl(mu, logvar)


def reconstruction_error(vae: VaeModel, X: np.ndarray) -> float:
    """Mean BCE of decoding the encoder mean."""
    mu, _ = vae.encode(Tensor(X))
    return float(bce_with_logits(vae.decode_logits(mu), X).data.mean())


def train_vae(data: SyntheticDataset, cfg: TrainConfig, hidden: int = 128,
              history: list | None = None) -> VaeModel:
    """Maximise the ELBO (Bernoulli likelihood, unit-Gaussian prior)."""
    if cfg.loss != "elbo":
        raise ConfigError("train_vae needs loss='elbo'")
    if len(data) == 0:
        raise ContractError("cannot train on an empty dataset")
    if data.X.min() < 0 or data.X.max() > 1:
        raise ContractError("VAE inputs must lie in [0, 1]")
    side = int(round(np.sqrt(data.X.shape[1])))
    rng = np.random.default_rng(cfg.seed)
    vae = VaeModel.init(side, hidden, seed=int(rng.integers(2**31)))
    opt = _Sgd(vae.params(), cfg.lr, cfg.momentum)
    for _ in range(cfg.epochs):
        for idx in _batches(len(data), cfg.batch_size, rng):
            eps = rng.standard_normal((len(idx), vae.latent_dim))
            with Tape() as tape:
                leaves = {k: tape.watch(v) for k, v in opt.params.items()}
                recon, kl = vae_loss_terms(vae, data.X[idx], eps, leaves)
                loss = ad.tmean(recon + kl)
            grads = backward(tape, loss)
            opt.step({k: grads[leaf] for k, leaf in leaves.items()})
            if history is not None:
                history.append(loss.item())
    return VaeModel(opt.params, side, dict(vae.meta))


def accuracy(model: MlpClassifier, data: SyntheticDataset) -> float:
    pred = model.predict(data.X).argmax(axis=1)
    return float((pred == data.y).mean())
