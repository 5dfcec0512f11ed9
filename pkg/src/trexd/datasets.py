"""Synthetic labelled datasets regenerable from a JSON recipe."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .glyphs import N_GLYPHS, N_JITTER, render_glyph
from .scene import BASE_SHAPES, Rasterizer, ScenePrior

RECIPES = ("blobs", "glyphs", "scene-count")


@dataclass(frozen=True)
class DatasetRecipe:
    """``recipe_id`` names the generator; ``label_map`` optionally relabels
    class ``k`` as ``label_map[k]`` and ``classes`` restricts which classes
    are drawn."""

    recipe_id: str
    seed: int
    K: int
    n: int
    side: int = 0
    label_map: tuple | None = None
    classes: tuple | None = None
    counted_shape: str = "square"
    count_range: tuple = (1, 3)

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        for k in ("label_map", "classes", "count_range"):
            if k in d:
                d[k] = list(d[k])
        if self.recipe_id != "scene-count":
            d.pop("counted_shape")
            d.pop("count_range")
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetRecipe":
        try:
            kw = dict(d)
            for k in ("label_map", "classes", "count_range"):
                if kw.get(k) is not None:
                    kw[k] = tuple(kw[k])
            recipe = cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"bad dataset recipe: {exc}") from None
        recipe.validate()
        return recipe

    @classmethod
    def from_json(cls, text: str) -> "DatasetRecipe":
        return cls.from_dict(json.loads(text))

    def validate(self) -> None:
        if self.recipe_id not in RECIPES:
            raise ConfigError(f"unknown recipe {self.recipe_id!r}; expected one of {RECIPES}")
        if self.n < 1 or self.K < 1:
            raise ConfigError("recipe needs n >= 1 and K >= 1")
        if self.recipe_id == "glyphs" and self.K != N_GLYPHS:
            raise ConfigError(f"glyph recipe has exactly {N_GLYPHS} classes")
        if self.label_map is not None and (len(self.label_map) != self.K
                                           or any(not 0 <= k < self.K for k in self.label_map)):
            raise ConfigError("label_map must map every class into range(K)")


@dataclass
class SyntheticDataset:
    X: np.ndarray
    y: np.ndarray
    K: int
    recipe: DatasetRecipe | None = None
    extras: list = field(default_factory=list)  # generating latents, when kept

    def __post_init__(self):
        if len(self.X) != len(self.y):
            raise ConfigError("X and y lengths differ")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.K):
            raise ConfigError("labels must lie in [0, K)")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def items(self) -> list[tuple[np.ndarray, int]]:
        return [(self.X[i], int(self.y[i])) for i in range(len(self))]

    def subset(self, idx: np.ndarray) -> "SyntheticDataset":
        extras = [self.extras[i] for i in idx] if self.extras else []
        return SyntheticDataset(self.X[idx], self.y[idx], self.K, self.recipe, extras)

    def split(self, holdout: float = 0.2, seed: int | None = None) -> tuple["SyntheticDataset", "SyntheticDataset"]:
        """Deterministic train/held-out split."""
        seed = (self.recipe.seed if self.recipe else 0) if seed is None else seed
        perm = np.random.default_rng([seed, 7919]).permutation(len(self))
        n_test = int(round(holdout * len(self)))
        return self.subset(np.sort(perm[n_test:])), self.subset(np.sort(perm[:n_test]))


def blob_centers(K: int, separation: float = 6.0) -> np.ndarray:
    if K == 1:
        return np.zeros((1, 2))
    radius = separation / (2 * np.sin(np.pi / K))
    ang = 2 * np.pi * np.arange(K) / K
    return np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)


def glyph_prototypes(side: int = 16) -> np.ndarray:
    """Un-jittered glyph images, one per class (flattened)."""
    return np.stack([render_glyph(k, np.zeros(N_JITTER), side).ravel() for k in range(N_GLYPHS)])


def make_dataset(recipe: DatasetRecipe, keep_latents: bool = False) -> SyntheticDataset:
    recipe.validate()
    rng = np.random.default_rng(recipe.seed)
    classes = np.array(recipe.classes if recipe.classes is not None else range(recipe.K))
    extras = []
    if recipe.recipe_id == "blobs":
        y = classes[rng.integers(len(classes), size=recipe.n)]
        X = blob_centers(recipe.K)[y] + rng.standard_normal((recipe.n, 2))
    elif recipe.recipe_id == "glyphs":
        side = recipe.side or 16
        y = classes[rng.integers(len(classes), size=recipe.n)]
        U = rng.standard_normal((recipe.n, N_JITTER))
        X = np.stack([render_glyph(int(k), u, side).ravel() for k, u in zip(y, U)])
        extras = [(int(k), u) for k, u in zip(y, U)] if keep_latents else []
    else:
        if recipe.counted_shape not in BASE_SHAPES:
            raise ConfigError(f"counted shape must be one of {BASE_SHAPES}")
        prior = ScenePrior(count_range=recipe.count_range)
        raster = Rasterizer(recipe.side or 32)
        scenes = [prior.sample(rng) for _ in range(recipe.n)]
        X = np.stack([raster.render(s).ravel() for s in scenes])
        y = np.array([min(sum(o.shape == recipe.counted_shape for o in s), recipe.K - 1) for s in scenes])
        extras = scenes if keep_latents else []
    y = np.asarray(y, dtype=np.int64)
    if recipe.label_map is not None:
        y = np.asarray(recipe.label_map, dtype=np.int64)[y]
    return SyntheticDataset(np.asarray(X, dtype=np.float64), y, recipe.K, recipe, extras)
