"""Random-walk Metropolis and fixed-length HMC over a :class:`RelaxedPosterior`."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NonFiniteError, SamplingFailure, UnsupportedOperation
from .targets import RelaxedPosterior, TargetSpec

log = logging.getLogger(__name__)

DEFAULT_BAND = 0.15
ACCEPTANCE_FLOOR = 0.01
LATENT_DOMAIN_KEEP = 2000
SCENE_DOMAIN_KEEP = 500


@dataclass(frozen=True)
class RwmConfig:
    proposal_std: float = 0.2
    flip_prob: float = 0.3
    burn_in: int = 500
    thin: int = 1
    max_iterations: int = 10_000_000
    seed: int = 0

    def __post_init__(self):
        if not self.proposal_std > 0:
            raise ConfigError("proposal std must be positive")
        if not 0 < self.flip_prob <= 1:
            raise ConfigError("resample probability must lie in (0, 1]")
        _check_schedule(self.burn_in, self.thin)


@dataclass(frozen=True)
class HmcConfig:
    step_size: float = 0.05
    n_leapfrog: int = 20
    burn_in: int = 500
    thin: int = 1
    max_iterations: int = 10_000_000
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ConfigError("HMC step size must be positive")
        if self.n_leapfrog < 1:
            raise ConfigError("HMC needs at least one leapfrog step")
        _check_schedule(self.burn_in, self.thin)


def _check_schedule(burn_in: int, thin: int) -> None:
    if burn_in < 0 or thin < 1:
        raise ConfigError("burn-in must be >= 0 and thinning >= 1")


@dataclass
class Chain:
    latent: Any
    log_post: float
    conf: np.ndarray
    rng: np.random.Generator
    grad: np.ndarray | None = None
    accepted: int = 0
    proposed: int = 0
    rejected_invalid: int = 0
    rejected_nonfinite: int = 0
    iteration: int = 0
    trace: list = field(default_factory=list)  # (iteration, log_post, conf)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


@dataclass(frozen=True)
class SampleRecord:
    chain_id: int
    iteration: int
    z: np.ndarray
    conf: np.ndarray
    log_post: float
    sigma: float
    accept_rate: float
    latent: Any = None


def target_sigma(target: TargetSpec) -> float:
    return float(getattr(target, "sigma", getattr(target, "sigma2", np.nan)))


def init_chain(rp: RelaxedPosterior, rng: np.random.Generator, sampler: str = "rwm") -> Chain:
    """Draw the starting latent from the prior and cache its log posterior."""
    latent = rp.prior.sample(rng)
    ev = rp.evaluate_with_grad(latent) if sampler == "hmc" else rp.evaluate(latent)
    return Chain(latent, ev.log_post, ev.conf, rng, ev.grad)


def _refresh(chain: Chain, rp: RelaxedPosterior, sampler: str) -> None:
    ev = rp.evaluate_with_grad(chain.latent) if sampler == "hmc" else rp.evaluate(chain.latent)
    chain.log_post, chain.conf, chain.grad = ev.log_post, ev.conf, ev.grad


def rwm_step(chain: Chain, rp: RelaxedPosterior, cfg: RwmConfig) -> Chain:
    """One Metropolis step with the prior's symmetric proposal kernel."""
    proposal = rp.prior.propose(chain.latent, cfg, chain.rng)
    log_u = math.log(chain.rng.random())
    chain.proposed += 1
    chain.iteration += 1
    try:
        ev = rp.evaluate(proposal)
    except NonFiniteError:
        chain.rejected_nonfinite += 1
        ev = None
    if ev is not None:
        if ev.log_post == -np.inf:
            chain.rejected_invalid += 1
        elif not math.isfinite(ev.log_post):
            chain.rejected_nonfinite += 1
        elif log_u < ev.log_post - chain.log_post:
            chain.latent, chain.log_post, chain.conf = proposal, ev.log_post, ev.conf
            chain.accepted += 1
    chain.trace.append((chain.iteration, chain.log_post, chain.conf))
    return chain


def leapfrog(z: np.ndarray, momentum: np.ndarray, value_and_grad: Callable, step_size: float,
             n_steps: int, start: tuple | None = None) -> tuple[np.ndarray, np.ndarray, tuple]:
    """Integrate Hamilton's equations for ``H = -log_prob(z) + |m|^2 / 2``.

    ``value_and_grad(z)`` returns a tuple whose first two entries are the log
    density and its gradient. ``start`` may carry that tuple for the initial
    ``z`` to save one evaluation. Returns the final position, momentum and the
    evaluation at the final position.
    """
    z = np.array(z, dtype=np.float64)
    m = np.array(momentum, dtype=np.float64)
    ev = start if start is not None else value_and_grad(z)
    m = m + 0.5 * step_size * ev[1]
    for k in range(n_steps):
        z = z + step_size * m
        ev = value_and_grad(z)
        if k < n_steps - 1:
            m = m + step_size * ev[1]
    m = m + 0.5 * step_size * ev[1]
    return z, m, ev


def hmc_step(chain: Chain, rp: RelaxedPosterior, cfg: HmcConfig) -> Chain:
    if not rp.differentiable:
        raise UnsupportedOperation("HMC needs a differentiable posterior; use RWM")
    rng = chain.rng
    m0 = rng.standard_normal(np.shape(chain.latent))
    log_u = math.log(rng.random())
    chain.proposed += 1
    chain.iteration += 1

    def vg(z):
        ev = rp.evaluate_with_grad(z)
        return ev.log_post, ev.grad, ev.conf

    if chain.grad is None:
        _refresh(chain, rp, "hmc")
    try:
        z1, m1, (lp1, g1, conf1) = leapfrog(chain.latent, m0, vg, cfg.step_size, cfg.n_leapfrog,
                                            start=(chain.log_post, chain.grad, chain.conf))
        h0 = -chain.log_post + 0.5 * float(m0 @ m0)
        h1 = -lp1 + 0.5 * float(m1 @ m1)
        ok = math.isfinite(h1)
    except NonFiniteError:
        ok = False
    if not ok:
        chain.rejected_nonfinite += 1
    elif log_u < h0 - h1:
        chain.latent, chain.log_post, chain.grad, chain.conf = z1, lp1, g1, conf1
        chain.accepted += 1
    chain.trace.append((chain.iteration, chain.log_post, chain.conf))
    return chain


_STEPS = {"rwm": rwm_step, "hmc": hmc_step}


def _check_sampler(sampler: str, cfg) -> None:
    expected = {"rwm": RwmConfig, "hmc": HmcConfig}.get(sampler)
    if expected is None:
        raise ConfigError(f"unknown sampler {sampler!r}")
    if not isinstance(cfg, expected):
        raise ConfigError(f"sampler {sampler!r} needs a {expected.__name__}")


def _advance(chain: Chain, rp: RelaxedPosterior, sampler: str, cfg, n_steps: int, keep_from: int | None,
             chain_id: int, records: list, debug: bool) -> None:
    step = _STEPS[sampler]
    sigma = target_sigma(rp.target)
    start = chain.iteration
    for _ in range(n_steps):
        step(chain, rp, cfg)
        if debug and chain.iteration % 100 == 0:
            fresh = rp.evaluate(chain.latent).log_post
            assert abs(fresh - chain.log_post) <= 1e-9 * max(1.0, abs(fresh)), "stale log-posterior cache"
        if keep_from is not None:
            offset = chain.iteration - start - keep_from
            if offset > 0 and offset % cfg.thin == 0:
                records.append(SampleRecord(chain_id, chain.iteration, rp.prior.flatten(chain.latent),
                                            np.array(chain.conf), chain.log_post, sigma,
                                            chain.acceptance_rate, chain.latent))


def _budget(cfg, n_keep: int, extra: int = 0) -> int:
    if n_keep < 1:
        raise ContractError("n_keep must be at least 1")
    total = extra + cfg.burn_in + n_keep * cfg.thin
    if total > cfg.max_iterations:
        raise ConfigError(f"run needs {total} iterations, above max_iterations={cfg.max_iterations}")
    return cfg.burn_in + n_keep * cfg.thin


def run_chain(rp: RelaxedPosterior, sampler: str, cfg, n_keep: int, chain_id: int = 0,
              band: float | None = None, debug: bool = False) -> list[SampleRecord]:
    """Initialise from the prior, discard burn-in, thin, keep ``n_keep`` records.

    With ``band`` set, :func:`detect_failure` is applied and a
    :class:`SamplingFailure` raised if the chain missed its target.
    """
    _check_sampler(sampler, cfg)
    steps = _budget(cfg, n_keep)
    chain = init_chain(rp, np.random.default_rng(cfg.seed), sampler)
    records: list[SampleRecord] = []
    _advance(chain, rp, sampler, cfg, steps, cfg.burn_in, chain_id, records, debug)
    if band is not None:
        report = detect_failure(records, rp.target, band)
        if not report.success:
            raise SamplingFailure(report, records)
    return records


@dataclass(frozen=True)
class AnnealSchedule:
    """Widths for successive segments; every segment but the last runs
    ``segment_iters`` iterations and is discarded."""

    sigmas: tuple
    segment_iters: int = 500

    def __post_init__(self):
        s = tuple(float(v) for v in self.sigmas)
        if not s or any(v <= 0 for v in s) or any(b > a for a, b in zip(s, s[1:])):
            raise ConfigError("anneal schedule must be non-empty, positive and non-increasing")
        if self.segment_iters < 0:
            raise ConfigError("segment length must be non-negative")
        object.__setattr__(self, "sigmas", s)


def anneal_run(rp: RelaxedPosterior, sampler: str, cfg, sched: AnnealSchedule, n_keep: int,
               chain_id: int = 0, band: float | None = None, debug: bool = False) -> list[SampleRecord]:
    """Run through the schedule, keeping samples from the final width only."""
    _check_sampler(sampler, cfg)
    steps = _budget(cfg, n_keep, extra=sched.segment_iters * (len(sched.sigmas) - 1))
    rng = np.random.default_rng(cfg.seed)
    chain = None
    records: list[SampleRecord] = []
    for k, sigma in enumerate(sched.sigmas):
        rp_k = rp.with_sigma(sigma)
        if chain is None:
            chain = init_chain(rp_k, rng, sampler)
        else:
            _refresh(chain, rp_k, sampler)
        if k < len(sched.sigmas) - 1:
            _advance(chain, rp_k, sampler, cfg, sched.segment_iters, None, chain_id, records, debug)
        else:
            _advance(chain, rp_k, sampler, cfg, steps, cfg.burn_in, chain_id, records, debug)
    if band is not None:
        report = detect_failure(records, rp.with_sigma(sched.sigmas[-1]).target, band)
        if not report.success:
            raise SamplingFailure(report, records)
    return records


@dataclass(frozen=True)
class ClassSummary:
    cls: int
    mean: float
    std: float
    n: int

    def __str__(self) -> str:
        return f"{self.mean:.2f} ± {self.std:.2f}"


def summarize(records: Sequence[SampleRecord], classes: Sequence[int] | None = None,
              target: TargetSpec | None = None) -> list[ClassSummary]:
    """Mean and population standard deviation of confidence per tracked class."""
    if not records:
        raise ContractError("cannot summarise an empty record list")
    conf = np.stack([r.conf for r in records])
    if classes is None:
        classes = target.tracked_classes(conf.shape[1]) if target is not None else range(conf.shape[1])
    return [ClassSummary(int(c), float(conf[:, c].mean()), float(conf[:, c].std()), len(records))
            for c in classes]


@dataclass(frozen=True)
class FailureReport:
    success: bool
    reason: str
    deviation: float
    acceptance: float


def detect_failure(records: Sequence[SampleRecord], target: TargetSpec, band: float = DEFAULT_BAND,
                   acceptance_floor: float = ACCEPTANCE_FLOOR) -> FailureReport:
    """Flag a chain whose mean observations miss their targets by more than
    ``band``, or whose acceptance rate fell below ``acceptance_floor``."""
    if not band > 0:
        raise ContractError("failure band must be positive")
    if not records:
        return FailureReport(False, "no samples", float("inf"), 0.0)
    K = len(records[0].conf)
    obs = np.stack([target.observation_values(r.conf) for r in records])
    deviation = float(np.max(np.abs(obs.mean(axis=0) - target.observed(K))))
    acceptance = float(records[-1].accept_rate)
    if acceptance < acceptance_floor:
        return FailureReport(False, "chain stuck", deviation, acceptance)
    if deviation > band:
        return FailureReport(False, "mean deviation", deviation, acceptance)
    return FailureReport(True, "ok", deviation, acceptance)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def samples_csv(records: Sequence[SampleRecord]) -> str:
    """chain_id, iter, sigma, z_0..z_{d-1}, conf_0..conf_{K-1}, log_post."""
    if not records:
        raise ContractError("no records to write")
    d, K = len(records[0].z), len(records[0].conf)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["chain_id", "iter", "sigma", *(f"z_{k}" for k in range(d)),
                *(f"conf_{k}" for k in range(K)), "log_post"])
    for r in records:
        w.writerow([r.chain_id, r.iteration, _fmt(r.sigma), *map(_fmt, r.z), *map(_fmt, r.conf),
                    _fmt(r.log_post)])
    return buf.getvalue()


def write_samples_csv(path, records: Sequence[SampleRecord]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(samples_csv(records))
