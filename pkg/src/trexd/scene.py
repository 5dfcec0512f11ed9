"""Scene-graph latent space with a deterministic 32x32 rasterizer.

A scene is an ordered tuple of objects (shape, colour, size, centre). The
prior is uniform over an object-count range, categorical over the shapes
permitted by the support policy and over the four grey levels, and uniform
over size and position ranges, truncated to scenes whose objects keep a
minimum centre separation. Rendering is not differentiable, so scenes are
explored with the mixed Gaussian/categorical random-walk kernel only.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError

BASE_SHAPES = ("square", "disc", "triangle")
NOVEL_SHAPES = ("cross",)
GRAY_LEVELS = (0.35, 0.55, 0.75, 0.95)
N_COLORS = len(GRAY_LEVELS)
SIZE_RANGE = (2.0, 6.0)
POS_RANGE = (6.0, 26.0)
MIN_SEPARATION = 0.8
MAX_OBJECTS = 6
_SAMPLE_TRIES = 1000


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: int
    size: float
    cx: float
    cy: float


SceneGraph = tuple  # tuple[SceneObject, ...]


def scene_to_json(scene: Sequence[SceneObject]) -> str:
    return json.dumps([asdict(o) for o in scene])


def scene_from_json(text: str) -> SceneGraph:
    return tuple(SceneObject(**o) for o in json.loads(text))


def separated(scene: Sequence[SceneObject]) -> bool:
    for a_i in range(len(scene)):
        a = scene[a_i]
        for b in scene[a_i + 1:]:
            if np.hypot(a.cx - b.cx, a.cy - b.cy) < MIN_SEPARATION * (a.size + b.size):
                return False
    return True


class ScenePrior:
    """Scene distribution together with its support policy.

    ``excluded`` shapes are never generated; ``novel`` shapes (from
    :data:`NOVEL_SHAPES`) are added to the support.
    """

    differentiable = False

    def __init__(self, count_range: tuple[int, int] = (1, 3), excluded: Sequence[str] = (),
                 novel: Sequence[str] = ()):
        lo, hi = count_range
        if not 1 <= lo <= hi <= MAX_OBJECTS:
            raise ConfigError(f"object count range must lie within [1, {MAX_OBJECTS}], got {count_range}")
        unknown = set(excluded) - set(BASE_SHAPES) - set(NOVEL_SHAPES)
        if unknown or set(novel) - set(NOVEL_SHAPES):
            raise ConfigError(f"unknown shapes in support policy: {sorted(unknown | (set(novel) - set(NOVEL_SHAPES)))}")
        self.count_range = (lo, hi)
        self.excluded = tuple(excluded)
        self.novel = tuple(novel)
        self.shapes = tuple(s for s in BASE_SHAPES + tuple(novel) if s not in self.excluded)
        if not self.shapes:
            raise ConfigError("support policy excludes every shape")

    @property
    def dim(self) -> int:
        return 5 * self.count_range[1]

    def valid(self, scene: Sequence[SceneObject]) -> bool:
        lo, hi = self.count_range
        if not lo <= len(scene) <= hi:
            return False
        for o in scene:
            if o.shape not in self.shapes or not 0 <= o.color < N_COLORS:
                return False
            if not SIZE_RANGE[0] <= o.size <= SIZE_RANGE[1]:
                return False
            if not (POS_RANGE[0] <= o.cx <= POS_RANGE[1] and POS_RANGE[0] <= o.cy <= POS_RANGE[1]):
                return False
        return separated(scene)

    def sample(self, rng: np.random.Generator, count: int | None = None) -> SceneGraph:
        lo, hi = self.count_range
        n = int(rng.integers(lo, hi + 1)) if count is None else count
        shapes = [self.shapes[int(k)] for k in rng.integers(len(self.shapes), size=n)]
        colors = [int(k) for k in rng.integers(N_COLORS, size=n)]
        # whole-configuration rejection keeps the draw exact under truncation
        for _ in range(_SAMPLE_TRIES):
            sizes = rng.uniform(*SIZE_RANGE, size=n)
            pos = rng.uniform(*POS_RANGE, size=(n, 2))
            scene = tuple(SceneObject(shapes[k], colors[k], float(sizes[k]), float(pos[k, 0]), float(pos[k, 1]))
                          for k in range(n))
            if separated(scene):
                return scene
        raise ConfigError(f"could not place {n} separated objects in {_SAMPLE_TRIES} tries")

    def log_prob(self, scene: Sequence[SceneObject]) -> float:
        """Log density up to the (count-dependent) truncation constant; -inf off support."""
        if not self.valid(scene):
            return -np.inf
        lo, hi = self.count_range
        per_object = (np.log(len(self.shapes)) + np.log(N_COLORS)
                      + np.log(SIZE_RANGE[1] - SIZE_RANGE[0]) + 2 * np.log(POS_RANGE[1] - POS_RANGE[0]))
        return float(-np.log(hi - lo + 1) - len(scene) * per_object)

    def propose(self, scene: Sequence[SceneObject], cfg, rng: np.random.Generator) -> SceneGraph:
        return propose_scene(scene, cfg, self, rng)

    def proposal_log_density(self, src: Sequence[SceneObject], dst: Sequence[SceneObject], cfg) -> float:
        if len(src) != len(dst):
            return -np.inf
        std, p = cfg.proposal_std, cfg.flip_prob
        n_shapes = len(self.shapes)
        total = 0.0
        for a, b in zip(src, dst):
            diff = np.array([b.cx - a.cx, b.cy - a.cy, b.size - a.size])
            total += float(-0.5 * diff @ diff / std**2 - 3 * np.log(std * np.sqrt(2 * np.pi)))
            total += np.log(p / n_shapes + (1 - p) if a.shape == b.shape else p / n_shapes)
            total += np.log(p / N_COLORS + (1 - p) if a.color == b.color else p / N_COLORS)
        return total

    def flatten(self, scene: Sequence[SceneObject]) -> np.ndarray:
        """Fixed-width vector: (shape index, colour, size, cx, cy) per slot, NaN-free zero padding."""
        order = BASE_SHAPES + NOVEL_SHAPES
        out = np.zeros(self.dim)
        for k, o in enumerate(scene):
            out[5 * k:5 * k + 5] = (order.index(o.shape), o.color, o.size, o.cx, o.cy)
        return out

    def ground_truth(self, scene: Sequence[SceneObject]) -> dict:
        return {s: sum(o.shape == s for o in scene) for s in BASE_SHAPES + NOVEL_SHAPES}


def sample_scene(prior: ScenePrior, rng: np.random.Generator) -> SceneGraph:
    return prior.sample(rng)


def log_scene_prior(prior: ScenePrior, scene: Sequence[SceneObject]) -> float:
    return prior.log_prob(scene)


def propose_scene(scene: Sequence[SceneObject], cfg, support: ScenePrior,
                  rng: np.random.Generator) -> SceneGraph:
    """Symmetric mixed proposal.

    Position and size get isotropic Gaussian jitter; shape and colour are
    each resampled uniformly (current value included) with probability
    ``cfg.flip_prob``. Out-of-range or overlapping results are returned
    as-is and rejected by the caller through a -inf prior.
    """
    out = []
    for o in scene:
        dx, dy, ds = cfg.proposal_std * rng.standard_normal(3)
        shape, color = o.shape, o.color
        if rng.random() < cfg.flip_prob:
            shape = support.shapes[int(rng.integers(len(support.shapes)))]
        if rng.random() < cfg.flip_prob:
            color = int(rng.integers(N_COLORS))
        out.append(SceneObject(shape, color, o.size + ds, o.cx + dx, o.cy + dy))
    return tuple(out)


class Rasterizer:
    """Painter's-order grayscale rasterizer, no anti-aliasing."""

    def __init__(self, side: int = 32):
        self.side = side
        c = np.arange(side) + 0.5
        self._xs, self._ys = np.meshgrid(c, c)

    def mask(self, o: SceneObject) -> np.ndarray:
        dx = self._xs - o.cx
        dy = self._ys - o.cy
        r = o.size
        if o.shape == "square":
            return (np.abs(dx) <= r) & (np.abs(dy) <= r)
        if o.shape == "disc":
            return dx * dx + dy * dy <= r * r
        if o.shape == "triangle":
            # apex up (image y grows downward), base at cy + r
            inside_y = (dy >= -r) & (dy <= r)
            half_width = (dy + r) / 2.0
            return inside_y & (np.abs(dx) <= half_width)
        if o.shape == "cross":
            arm = r / 3.0
            return (((np.abs(dx) <= arm) & (np.abs(dy) <= r))
                    | ((np.abs(dy) <= arm) & (np.abs(dx) <= r)))
        raise ContractError(f"unknown shape {o.shape!r}")

    def render(self, scene: Sequence[SceneObject]) -> np.ndarray:
        canvas = np.zeros((self.side, self.side))
        for o in scene:
            canvas[self.mask(o)] = GRAY_LEVELS[o.color]
        return canvas


def render(r: Rasterizer, scene: Sequence[SceneObject]) -> np.ndarray:
    return r.render(scene)


class SceneGenerator:
    """Generator adapter: scene -> flattened rendered image."""

    differentiable = False

    def __init__(self, rasterizer: Rasterizer | None = None):
        self.rasterizer = rasterizer or Rasterizer()
        self.output_dim = self.rasterizer.side ** 2
        self.image_shape = (self.rasterizer.side, self.rasterizer.side)

    def default_prior(self) -> ScenePrior:
        return ScenePrior()

    def generate(self, scene: Sequence[SceneObject]) -> np.ndarray:
        return self.rasterizer.render(scene).ravel()


def remove_object_probe(scene: Sequence[SceneObject], classifier, target_class: int,
                        rasterizer: Rasterizer | None = None) -> list[tuple[int, float]]:
    """Confidence in ``target_class`` after deleting each object in turn.

    Returned as ``(object index, confidence)`` sorted by confidence drop,
    largest drop first; ties keep object order.
    """
    if len(scene) < 2:
        raise ContractError("removal probe needs a scene with at least two objects")
    rasterizer = rasterizer or Rasterizer()
    out = []
    for k in range(len(scene)):
        reduced = tuple(o for j, o in enumerate(scene) if j != k)
        conf = classifier.predict(rasterizer.render(reduced).ravel())
        out.append((k, float(conf[target_class])))
    out.sort(key=lambda kc: kc[1])
    return out


def with_object(scene: Sequence[SceneObject], index: int, **changes) -> SceneGraph:
    s = list(scene)
    s[index] = replace(s[index], **changes)
    return tuple(s)
