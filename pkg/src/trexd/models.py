"""MLP classifiers, the VAE, and differentiable generators."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError

VAE_LATENT_DIM = 5


def _init_layer(rng: np.random.Generator, n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    bound = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_in, n_out)), np.zeros(n_out)


@dataclass
class MlpClassifier:
    """Fully connected softmax classifier ``f: X -> simplex``.

    ``weights[k]`` has shape ``(widths[k], widths[k + 1])``. With a single
    layer the model is multinomial logistic regression.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = [np.array(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.array(b, dtype=np.float64) for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],) or (k and w.shape[0] != self.weights[k - 1].shape[1]):
                raise DimensionError(f"layer {k} shapes do not chain: {w.shape}, {b.shape}")
        self._params = [Tensor(p) for pair in zip(self.weights, self.biases) for p in pair]

    @classmethod
    def init(cls, widths: Sequence[int], activation: str = "relu", seed: int = 0, meta: dict | None = None):
        rng = np.random.default_rng(seed)
        layers = [_init_layer(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]
        return cls([w for w, _ in layers], [b for _, b in layers], activation, dict(meta or {}))

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{k}"] = w
            out[f"b{k}"] = b
        return out

    def logits(self, x, params: Sequence[Tensor] | None = None) -> Tensor:
        x = ad.as_tensor(x)
        if x.shape[-1] != self.input_dim:
            raise DimensionError(f"classifier expects inputs of width {self.input_dim}, got {x.shape}")
        p = self._params if params is None else params
        h = x
        n_layers = len(self.weights)
        for k in range(n_layers):
            h = ad.linear(h, p[2 * k], p[2 * k + 1])
            if k < n_layers - 1:
                h = ad.activation(h, self.activation)
        return h

    def forward(self, x, params: Sequence[Tensor] | None = None) -> Tensor:
        return ad.softmax(self.logits(x, params))

    def predict(self, x) -> np.ndarray:
        return self.forward(x).data


def classify(model: MlpClassifier, x) -> Tensor:
    return model.forward(x)


@dataclass
class VaeModel:
    """Single-hidden-layer VAE with a 5-d latent and sigmoid image decoder."""

    params_: dict[str, np.ndarray]
    side: int
    meta: dict = field(default_factory=dict)

    NAMES = ("enc_W", "enc_b", "mu_W", "mu_b", "lv_W", "lv_b", "dec_W1", "dec_b1", "dec_W2", "dec_b2")

    def __post_init__(self):
        self.params_ = {k: np.array(self.params_[k], dtype=np.float64) for k in self.NAMES}
        if self.params_["mu_W"].shape[1] != VAE_LATENT_DIM:
            raise DimensionError("VAE latent dimension must be 5")
        self._t = {k: Tensor(v) for k, v in self.params_.items()}

    @classmethod
    def init(cls, side: int, hidden: int = 128, seed: int = 0):
        rng = np.random.default_rng(seed)
        d = side * side
        p = {}
        p["enc_W"], p["enc_b"] = _init_layer(rng, d, hidden)
        p["mu_W"], p["mu_b"] = _init_layer(rng, hidden, VAE_LATENT_DIM)
        p["lv_W"], p["lv_b"] = _init_layer(rng, hidden, VAE_LATENT_DIM)
        p["dec_W1"], p["dec_b1"] = _init_layer(rng, VAE_LATENT_DIM, hidden)
        p["dec_W2"], p["dec_b2"] = _init_layer(rng, hidden, d)
        return cls(p, side)

    @property
    def latent_dim(self) -> int:
        return VAE_LATENT_DIM

    def params(self) -> dict[str, np.ndarray]:
        return dict(self.params_)

    def encode(self, x, params: dict | None = None) -> tuple[Tensor, Tensor]:
        p = self._t if params is None else params
        h = ad.relu(ad.linear(x, p["enc_W"], p["enc_b"]))
        return ad.linear(h, p["mu_W"], p["mu_b"]), ad.linear(h, p["lv_W"], p["lv_b"])

    def decode_logits(self, z, params: dict | None = None) -> Tensor:
        p = self._t if params is None else params
        h = ad.relu(ad.linear(z, p["dec_W1"], p["dec_b1"]))
        return ad.linear(h, p["dec_W2"], p["dec_b2"])

    def decode(self, z, params: dict | None = None) -> Tensor:
        z = ad.as_tensor(z)
        if z.shape[-1] != VAE_LATENT_DIM:
            raise DimensionError(f"decoder expects latent width {VAE_LATENT_DIM}, got {z.shape}")
        return ad.sigmoid(self.decode_logits(z, params))


def gaussian_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over the last axis."""
    return -0.5 * ad.tsum(1.0 + logvar - mu * mu - ad.exp(logvar), axis=-1)


# ---------------------------------------------------------------------------
# generators


class IdentityGenerator:
    differentiable = True

    def __init__(self, dim: int):
        self.latent_dim = self.output_dim = dim

    def forward(self, z) -> Tensor:
        return ad.as_tensor(z)


class AffineGenerator:
    """``x = A z + b``."""

    differentiable = True

    def __init__(self, A, b):
        self.A = np.atleast_2d(np.array(A, dtype=np.float64))
        self.b = np.array(b, dtype=np.float64).reshape(-1)
        self.output_dim, self.latent_dim = self.A.shape
        self._At, self._b = Tensor(self.A.T), Tensor(self.b)

    def forward(self, z) -> Tensor:
        return ad.linear(z, self._At, self._b)


class LogisticWarpGenerator:
    """Elementwise ``x = sigmoid(w * z + b)``."""

    differentiable = True

    def __init__(self, w, b):
        self.w = np.array(w, dtype=np.float64).reshape(-1)
        self.b = np.array(b, dtype=np.float64).reshape(-1)
        self.latent_dim = self.output_dim = self.w.size
        self._w, self._b = Tensor(self.w), Tensor(self.b)

    def forward(self, z) -> Tensor:
        return ad.sigmoid(self._w * z + self._b)


class DecoderGenerator:
    """The VAE decoder as a generator with prior N(0, I_5)."""

    differentiable = True

    def __init__(self, vae: VaeModel):
        self.vae = vae
        self.latent_dim = vae.latent_dim
        self.output_dim = vae.side * vae.side
        self.image_shape = (vae.side, vae.side)

    def forward(self, z) -> Tensor:
        return self.vae.decode(z)


def generate(g, z) -> np.ndarray:
    """Deterministic ``x = g(z)`` for any generator."""
    if getattr(g, "differentiable", False):
        z = ad.as_tensor(z)
        if z.shape != (g.latent_dim,):
            raise DimensionError(f"generator expects latent shape ({g.latent_dim},), got {z.shape}")
        return g.forward(z).data
    return g.generate(z)
