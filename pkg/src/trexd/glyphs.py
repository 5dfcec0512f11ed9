"""Mini-glyphs: ten procedurally drawn seven-segment characters.

Each image is produced from a class label and five jitter coordinates
``u`` (rotation, scale, x shift, y shift, stroke width). The jitter
coordinates live on a standard-normal scale and are squashed through
``tanh`` into bounded ranges, so the same parameterisation serves as a
latent prior for sampling and as the recipe for synthetic datasets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# segment endpoints in glyph units, x right / y up
_SEGMENTS = {
    "a": ((-0.5, 1.0), (0.5, 1.0)),
    "b": ((0.5, 1.0), (0.5, 0.0)),
    "c": ((0.5, 0.0), (0.5, -1.0)),
    "d": ((-0.5, -1.0), (0.5, -1.0)),
    "e": ((-0.5, -1.0), (-0.5, 0.0)),
    "f": ((-0.5, 0.0), (-0.5, 1.0)),
    "g": ((-0.5, 0.0), (0.5, 0.0)),
}
GLYPH_SEGMENTS = ("abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abcdfg")
N_GLYPHS = len(GLYPH_SEGMENTS)
N_JITTER = 5

# (centre, half-range) of rotation [rad], scale, shift x [px], shift y [px], stroke half-width [px]
_JITTER = np.array([
    (0.0, 0.15),
    (1.0, 0.1),
    (0.0, 1.0),
    (0.0, 1.0),
    (0.85, 0.2),
])
_HALF_W = 3.5   # glyph half-width in px at unit scale
_HALF_H = 5.5


def jitter_params(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    return _JITTER[:, 0] + _JITTER[:, 1] * np.tanh(u)


def _segment_distance(px: np.ndarray, seg: np.ndarray) -> np.ndarray:
    # px: (P, 2); seg: (S, 2, 2) -> distances (P, S)
    a = seg[:, 0, :]
    d = seg[:, 1, :] - a
    rel = px[:, None, :] - a[None, :, :]
    t = np.clip((rel * d[None]).sum(-1) / (d * d).sum(-1)[None], 0.0, 1.0)
    closest = a[None] + t[..., None] * d[None]
    return np.sqrt(((px[:, None, :] - closest) ** 2).sum(-1))


def render_glyph(label: int, u: np.ndarray, side: int = 16) -> np.ndarray:
    """Render glyph ``label`` with jitter ``u`` to a ``side x side`` image in [0, 1]."""
    rot, scale, tx, ty, width = jitter_params(u)
    pts = np.array([p for s in GLYPH_SEGMENTS[label] for p in _SEGMENTS[s]], dtype=np.float64)
    pts = pts * np.array([_HALF_W, -_HALF_H]) * (side / 16.0) * scale  # y down in image space
    c, s = np.cos(rot), np.sin(rot)
    pts = pts @ np.array([[c, s], [-s, c]])
    pts += np.array([(side - 1) / 2.0 + tx, (side - 1) / 2.0 + ty])
    seg = pts.reshape(-1, 2, 2)
    ys, xs = np.mgrid[0:side, 0:side]
    px = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    dist = _segment_distance(px, seg).min(axis=1)
    img = np.clip(width + 0.5 - dist, 0.0, 1.0)
    return img.reshape(side, side)


@dataclass(frozen=True)
class GlyphLatent:
    label: int
    jitter: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, GlyphLatent) and self.label == other.label
                and np.array_equal(self.jitter, other.jitter))

    def __hash__(self):
        return hash((self.label, self.jitter.tobytes()))


class GlyphPrior:
    """Uniform label over the allowed classes times N(0, I) jitter."""

    differentiable = False
    dim = 1 + N_JITTER

    def __init__(self, allowed: tuple[int, ...] | None = None):
        allowed = tuple(range(N_GLYPHS)) if allowed is None else tuple(sorted(set(allowed)))
        if not allowed or any(not 0 <= k < N_GLYPHS for k in allowed):
            raise ValueError(f"allowed glyph classes must be a non-empty subset of 0..{N_GLYPHS - 1}")
        self.allowed = allowed

    def sample(self, rng: np.random.Generator) -> GlyphLatent:
        label = self.allowed[int(rng.integers(len(self.allowed)))]
        return GlyphLatent(label, rng.standard_normal(N_JITTER))

    def log_prob(self, latent: GlyphLatent) -> float:
        if latent.label not in self.allowed:
            return -np.inf
        u = latent.jitter
        return float(-np.log(len(self.allowed)) - 0.5 * u @ u - 0.5 * N_JITTER * np.log(2 * np.pi))

    def propose(self, latent: GlyphLatent, cfg, rng: np.random.Generator) -> GlyphLatent:
        jitter = latent.jitter + cfg.proposal_std * rng.standard_normal(N_JITTER)
        label = latent.label
        if rng.random() < cfg.flip_prob:
            label = self.allowed[int(rng.integers(len(self.allowed)))]
        return GlyphLatent(label, jitter)

    def proposal_log_density(self, src: GlyphLatent, dst: GlyphLatent, cfg) -> float:
        diff = dst.jitter - src.jitter
        std = cfg.proposal_std
        logp = float(-0.5 * diff @ diff / std**2 - N_JITTER * np.log(std * np.sqrt(2 * np.pi)))
        n = len(self.allowed)
        same = cfg.flip_prob / n + (1.0 - cfg.flip_prob)
        return logp + np.log(same if dst.label == src.label else cfg.flip_prob / n)

    def flatten(self, latent: GlyphLatent) -> np.ndarray:
        return np.concatenate([[float(latent.label)], latent.jitter])

    def ground_truth(self, latent: GlyphLatent) -> int:
        return latent.label


class GlyphGenerator:
    """Deterministic, non-differentiable map from :class:`GlyphLatent` to a flat image."""

    differentiable = False

    def __init__(self, side: int = 16):
        self.side = side
        self.output_dim = side * side
        self.image_shape = (side, side)

    def default_prior(self) -> GlyphPrior:
        return GlyphPrior()

    def generate(self, latent: GlyphLatent) -> np.ndarray:
        return render_glyph(latent.label, latent.jitter, self.side).ravel()
