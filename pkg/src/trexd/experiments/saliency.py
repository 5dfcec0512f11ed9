"""SmoothGrad saliency for differentiable classifiers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tape, backward
from ..errors import ContractError, UnsupportedOperation

DEFAULT_NOISE_STD = 0.1
DEFAULT_SAMPLES = 50


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray
    noise_std: float
    n_samples: int

    def normalized(self) -> np.ndarray:
        peak = self.values.max()
        return self.values / peak if peak > 0 else np.zeros_like(self.values)


def input_gradient(classifier, x: np.ndarray, cls: int) -> np.ndarray:
    """d f_cls / dx for one flat input."""
    if not hasattr(classifier, "forward"):
        raise UnsupportedOperation("saliency needs a differentiable classifier")
    with Tape() as tape:
        xt = tape.watch(x)
        conf = classifier.forward(xt)[cls]
    return backward(tape, conf)[xt]


def smoothgrad(classifier, x, cls: int, noise_std: float = DEFAULT_NOISE_STD,
               n_samples: int = DEFAULT_SAMPLES, seed: int = 0) -> SaliencyMap:
    """Mean absolute input gradient over ``n_samples`` Gaussian-perturbed copies."""
    x = np.asarray(x, dtype=np.float64)
    if noise_std < 0 or n_samples < 1:
        raise ContractError("noise std must be >= 0 and sample count >= 1")
    if not 0 <= cls < classifier.n_classes:
        raise ContractError(f"class {cls} out of range")
    shape = x.shape
    flat = x.reshape(-1)
    rng = np.random.default_rng(seed)
    total = np.zeros_like(flat)
    for _ in range(n_samples):
        noisy = flat + noise_std * rng.standard_normal(flat.size) if noise_std > 0 else flat
        total += np.abs(input_gradient(classifier, noisy, cls))
    return SaliencyMap((total / n_samples).reshape(shape), float(noise_std), int(n_samples))
