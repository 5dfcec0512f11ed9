"""Relaxed level-set likelihoods and the latent posterior built from them.

Every target observes one or more scalar summaries of the confidence vector
through Gaussian noise and conditions on a fixed observed value::

    GeneralVector(p, s)        u_k = f_k                     observed p_k
    HighConfidence(i, s)       u   = f_i                     observed 1
    AmbiguousPair(i, j, s1, s2) u_1 = |f_i - f_j|            observed 0
                               u_2 = min(f_i, f_j) - max_{k != i,j} f_k   observed 0.5
    UniformAmbiguous(s)        u   = max_k f_k - min_k f_k   observed 0

Gaussian normalising constants are kept so values stay comparable when the
width is annealed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .errors import ContractError, NonFiniteError, UnsupportedOperation

DEFAULT_SIGMA = 0.05
SIMPLEX_TOL = 1e-6
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def gaussian_log_density(observed: float, mean, sigma: float):
    """log N(observed; mean, sigma^2); ``mean`` may be a Tensor."""
    return -0.5 * ((mean - observed) / sigma) ** 2 - (math.log(sigma) + _LOG_SQRT_2PI)


def check_simplex(conf: np.ndarray, tol: float = SIMPLEX_TOL) -> None:
    conf = np.asarray(conf)
    if conf.ndim != 1 or conf.min() < -tol or abs(conf.sum() - 1.0) > tol:
        raise ContractError("confidence vector is not on the probability simplex")


class TargetSpec:
    """Base for level-set targets. Subclasses define the observation map."""

    variant: str = ""

    def observations(self, conf: Tensor) -> Tensor:
        raise NotImplementedError

    def observed(self, n_classes: int) -> np.ndarray:
        raise NotImplementedError

    def sigmas(self, n_classes: int) -> np.ndarray:
        raise NotImplementedError

    def tracked_classes(self, n_classes: int) -> list[int]:
        raise NotImplementedError

    def target_confidence(self, n_classes: int) -> np.ndarray:
        """The confidence vector this target asks for, on the tracked classes."""
        raise NotImplementedError

    def with_sigma(self, sigma: float) -> "TargetSpec":
        raise NotImplementedError

    def validate(self, n_classes: int) -> None:
        pass

    def log_likelihood_tensor(self, conf: Tensor) -> Tensor:
        K = conf.shape[-1]
        obs = self.observations(conf)
        starred = self.observed(K)
        sig = self.sigmas(K)
        return ad.tsum(-0.5 * ((obs - starred) / sig) ** 2) - float(np.sum(np.log(sig)) + len(sig) * _LOG_SQRT_2PI)

    def log_likelihood(self, conf) -> float:
        conf = np.asarray(conf, dtype=np.float64)
        check_simplex(conf)
        self.validate(len(conf))
        return self.log_likelihood_tensor(Tensor(conf)).item()

    def observation_values(self, conf) -> np.ndarray:
        return np.atleast_1d(self.observations(Tensor(np.asarray(conf, dtype=np.float64))).data)

    def to_dict(self) -> dict:
        raise NotImplementedError


def _positive(*sigmas: float) -> None:
    if any(not s > 0 for s in sigmas):
        raise ContractError("level-set widths must be positive")


@dataclass(frozen=True)
class GeneralVector(TargetSpec):
    p: tuple
    sigma: float = DEFAULT_SIGMA
    variant = "GeneralVector"

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        _positive(self.sigma)
        check_simplex(np.array(self.p))

    def validate(self, n_classes):
        if len(self.p) != n_classes:
            raise ContractError(f"target vector has {len(self.p)} entries, classifier has {n_classes} classes")

    def observations(self, conf):
        return conf

    def observed(self, n_classes):
        return np.array(self.p)

    def sigmas(self, n_classes):
        return np.full(n_classes, self.sigma)

    def tracked_classes(self, n_classes):
        return [k for k, v in enumerate(self.p) if v > 0]

    def target_confidence(self, n_classes):
        return np.array(self.p)[self.tracked_classes(n_classes)]

    def with_sigma(self, sigma):
        return replace(self, sigma=sigma)

    def to_dict(self):
        return {"variant": self.variant, "params": {"p": list(self.p), "sigma": self.sigma}}


@dataclass(frozen=True)
class HighConfidence(TargetSpec):
    cls: int
    sigma: float = DEFAULT_SIGMA
    variant = "HighConfidence"

    def __post_init__(self):
        _positive(self.sigma)

    def validate(self, n_classes):
        if not 0 <= self.cls < n_classes:
            raise ContractError(f"class {self.cls} out of range for {n_classes} classes")

    def observations(self, conf):
        return conf[self.cls]

    def observed(self, n_classes):
        return np.array([1.0])

    def sigmas(self, n_classes):
        return np.array([self.sigma])

    def log_likelihood_tensor(self, conf):
        return gaussian_log_density(1.0, conf[self.cls], self.sigma)

    def tracked_classes(self, n_classes):
        return [self.cls]

    def target_confidence(self, n_classes):
        return np.array([1.0])

    def with_sigma(self, sigma):
        return replace(self, sigma=sigma)

    def to_dict(self):
        return {"variant": self.variant, "params": {"class": self.cls, "sigma": self.sigma}}


@dataclass(frozen=True)
class AmbiguousPair(TargetSpec):
    i: int
    j: int
    sigma1: float = DEFAULT_SIGMA
    sigma2: float = DEFAULT_SIGMA
    variant = "AmbiguousPair"

    def __post_init__(self):
        if self.i == self.j:
            raise ContractError("ambiguous pair needs two distinct classes")
        _positive(self.sigma1, self.sigma2)

    def validate(self, n_classes):
        if not (0 <= self.i < n_classes and 0 <= self.j < n_classes):
            raise ContractError(f"pair ({self.i}, {self.j}) out of range for {n_classes} classes")

    def observations(self, conf):
        K = conf.shape[-1]
        fi, fj = conf[self.i], conf[self.j]
        gap = ad.absolute(fi - fj)
        lower = ad.tmin(ad.stack([fi, fj]))
        rest = [k for k in range(K) if k not in (self.i, self.j)]
        # empty "rest" (K = 2) contributes 0
        margin = lower - ad.tmax(conf[rest]) if rest else lower
        return ad.stack([gap, margin])

    def observed(self, n_classes):
        return np.array([0.0, 0.5])

    def sigmas(self, n_classes):
        return np.array([self.sigma1, self.sigma2])

    def tracked_classes(self, n_classes):
        return [self.i, self.j]

    def target_confidence(self, n_classes):
        return np.array([0.5, 0.5])

    def with_sigma(self, sigma):
        return replace(self, sigma1=sigma, sigma2=sigma)

    def to_dict(self):
        return {"variant": self.variant,
                "params": {"i": self.i, "j": self.j, "sigma1": self.sigma1, "sigma2": self.sigma2}}


@dataclass(frozen=True)
class UniformAmbiguous(TargetSpec):
    sigma: float = DEFAULT_SIGMA
    variant = "UniformAmbiguous"

    def __post_init__(self):
        _positive(self.sigma)

    def observations(self, conf):
        return ad.tmax(conf) - ad.tmin(conf)

    def observed(self, n_classes):
        return np.array([0.0])

    def sigmas(self, n_classes):
        return np.array([self.sigma])

    def tracked_classes(self, n_classes):
        return list(range(n_classes))

    def target_confidence(self, n_classes):
        return np.full(n_classes, 1.0 / n_classes)

    def with_sigma(self, sigma):
        return replace(self, sigma=sigma)

    def to_dict(self):
        return {"variant": self.variant, "params": {"sigma": self.sigma}}


def target_from_dict(d: dict) -> TargetSpec:
    variant, params = d["variant"], dict(d.get("params", {}))
    if variant == "GeneralVector":
        return GeneralVector(tuple(params["p"]), params.get("sigma", DEFAULT_SIGMA))
    if variant == "HighConfidence":
        return HighConfidence(int(params["class"]), params.get("sigma", DEFAULT_SIGMA))
    if variant == "AmbiguousPair":
        s = params.get("sigma", DEFAULT_SIGMA)
        return AmbiguousPair(int(params["i"]), int(params["j"]), params.get("sigma1", s), params.get("sigma2", s))
    if variant == "UniformAmbiguous":
        return UniformAmbiguous(params.get("sigma", DEFAULT_SIGMA))
    raise ContractError(f"unknown target variant {variant!r}")


def log_likelihood(target: TargetSpec, conf) -> float:
    return target.log_likelihood(conf)


@dataclass(frozen=True)
class InterpolationSchedule:
    a: int
    b: int
    alphas: tuple = tuple(round(0.1 * k, 10) for k in range(11))
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        al = tuple(float(v) for v in self.alphas)
        if any(not 0.0 <= v <= 1.0 for v in al) or list(al) != sorted(al):
            raise ContractError("interpolation weights must be sorted and lie in [0, 1]")
        if self.a == self.b:
            raise ContractError("interpolation needs two distinct classes")
        object.__setattr__(self, "alphas", al)


def target_from_alpha(sched: InterpolationSchedule, alpha: float, n_classes: int) -> GeneralVector:
    """Target with ``1 - alpha`` on class a and ``alpha`` on class b."""
    if not 0.0 <= alpha <= 1.0:
        raise ContractError("alpha must lie in [0, 1]")
    p = np.zeros(n_classes)
    p[sched.a] = 1.0 - alpha
    p[sched.b] = alpha
    return GeneralVector(tuple(p), sched.sigma)


# ---------------------------------------------------------------------------
# latent posterior


class StandardNormalPrior:
    """N(0, I_d) over vector latents, with a Gaussian random-walk proposal."""

    differentiable = True

    def __init__(self, dim: int):
        self.dim = dim

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.dim)

    def log_prob(self, z) -> float:
        z = np.asarray(z, dtype=np.float64)
        return float(-0.5 * z @ z - self.dim * _LOG_SQRT_2PI)

    def log_prob_tensor(self, z: Tensor) -> Tensor:
        return -0.5 * ad.tsum(z * z) - self.dim * _LOG_SQRT_2PI

    def propose(self, z, cfg, rng: np.random.Generator) -> np.ndarray:
        return z + cfg.proposal_std * rng.standard_normal(self.dim)

    def proposal_log_density(self, src, dst, cfg) -> float:
        diff = np.asarray(dst) - np.asarray(src)
        s = cfg.proposal_std
        return float(-0.5 * diff @ diff / s**2 - self.dim * (math.log(s) + _LOG_SQRT_2PI))

    def flatten(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64).reshape(-1)


@dataclass
class Evaluation:
    log_post: float
    conf: np.ndarray | None
    grad: np.ndarray | None = None


class RelaxedPosterior:
    """``log p(z) + log p(u = u* | f(g(z)))`` for a generator/classifier pair."""

    def __init__(self, generator, classifier, target: TargetSpec, prior: Any = None):
        self.generator = generator
        self.classifier = classifier
        self.target = target
        if prior is None:
            prior = (StandardNormalPrior(generator.latent_dim) if generator.differentiable
                     else generator.default_prior())
        self.prior = prior
        if generator.differentiable and getattr(prior, "dim", None) != generator.latent_dim:
            raise ContractError("prior and generator latent dimensions differ")
        target.validate(classifier.n_classes)

    @property
    def differentiable(self) -> bool:
        return bool(self.generator.differentiable and getattr(self.prior, "differentiable", False))

    @property
    def n_classes(self) -> int:
        return self.classifier.n_classes

    def with_target(self, target: TargetSpec) -> "RelaxedPosterior":
        return RelaxedPosterior(self.generator, self.classifier, target, self.prior)

    def with_sigma(self, sigma: float) -> "RelaxedPosterior":
        return self.with_target(self.target.with_sigma(sigma))

    def _check_latent(self, z) -> None:
        if self.generator.differentiable and np.shape(z) != (self.generator.latent_dim,):
            raise ContractError(f"latent must have shape ({self.generator.latent_dim},), got {np.shape(z)}")

    def _traced(self, z: Tensor) -> tuple[Tensor, Tensor]:
        conf = self.classifier.forward(self.generator.forward(z))
        return self.prior.log_prob_tensor(z) + self.target.log_likelihood_tensor(conf), conf

    def evaluate(self, z) -> Evaluation:
        self._check_latent(z)
        lp_prior = self.prior.log_prob(z)
        if lp_prior == -np.inf:
            return Evaluation(-np.inf, None)
        x = self.generator.forward(Tensor(z)) if self.generator.differentiable else Tensor(self.generator.generate(z))
        conf = self.classifier.forward(x)
        ll = self.target.log_likelihood_tensor(conf).item()
        return Evaluation(lp_prior + ll, conf.data)

    def evaluate_with_grad(self, z) -> Evaluation:
        if not self.differentiable:
            raise UnsupportedOperation("gradient needs a differentiable generator and prior")
        self._check_latent(z)
        with Tape() as tape:
            zt = tape.watch(z)
            lp, conf = self._traced(zt)
        return Evaluation(lp.item(), conf.data, backward(tape, lp)[zt])

    def log_posterior(self, z) -> float:
        try:
            return self.evaluate(z).log_post
        except NonFiniteError as exc:
            raise NonFiniteError(f"log posterior is not finite: {exc}") from None

    def grad_log_posterior(self, z) -> np.ndarray:
        return self.evaluate_with_grad(z).grad


def log_posterior(rp: RelaxedPosterior, z) -> float:
    return rp.log_posterior(z)


def grad_log_posterior(rp: RelaxedPosterior, z) -> np.ndarray:
    return rp.grad_log_posterior(z)
