"""Run-config parsing. Everything is validated before any compute starts."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..checkpoint import load_model
from ..datasets import DatasetRecipe
from ..errors import ConfigError, ContractError, TrexError
from ..glyphs import GlyphGenerator
from ..models import AffineGenerator, DecoderGenerator, IdentityGenerator, LogisticWarpGenerator, MlpClassifier, VaeModel
from ..samplers import LATENT_DOMAIN_KEEP, SCENE_DOMAIN_KEEP, AnnealSchedule, HmcConfig, RwmConfig
from ..scene import Rasterizer, SceneGenerator
from ..targets import InterpolationSchedule, TargetSpec, target_from_dict
from ..training import TrainConfig

SPEC_VERSION = 1
SAMPLE_KINDS = ("high_conf", "ambiguous_pair", "uniform_ambiguous", "interpolate", "misclassify", "novel_class")
KINDS = SAMPLE_KINDS + ("compare_classifiers", "testset_scan", "saliency", "train")
COMMAND_KINDS = {
    "train": ("train",),
    "sample": SAMPLE_KINDS,
    "scan": ("testset_scan",),
    "compare": ("compare_classifiers",),
    "saliency": ("saliency",),
}
_TARGET_FOR_KIND = {
    "high_conf": "HighConfidence",
    "misclassify": "HighConfidence",
    "novel_class": "HighConfidence",
    "ambiguous_pair": "AmbiguousPair",
    "uniform_ambiguous": "UniformAmbiguous",
}
GENERATOR_SOURCES = ("identity", "affine", "logistic_warp", "decoder", "glyphs", "scene")
TRAIN_MODELS = ("classifier", "ambiguous_classifier", "vae")


@dataclass(frozen=True)
class SamplerSpec:
    kind: str
    config: RwmConfig | HmcConfig
    n_keep: int
    band: float
    anneal: AnnealSchedule | None
    seeds: tuple[int, ...]


@dataclass
class RunSpec:
    kind: str
    raw: dict
    base_dir: Path
    seed: int = 0
    spec_version: int = SPEC_VERSION
    _cache: dict = field(default_factory=dict, repr=False)

    def get(self, key: str, default: Any = None) -> Any:
        return self.raw.get(key, default)

    def require(self, key: str) -> Any:
        if key not in self.raw:
            raise ConfigError(f"run kind {self.kind!r} needs {key!r}")
        return self.raw[key]

    def path(self, ref: str) -> Path:
        p = Path(ref)
        return p if p.is_absolute() else self.base_dir / p

    # -- components ---------------------------------------------------------

    def classifier(self, key: str = "classifier") -> MlpClassifier:
        return self._load_classifier(self.require(key))

    def _load_classifier(self, ref) -> MlpClassifier:
        if isinstance(ref, dict):
            try:
                return MlpClassifier(ref["weights"], ref["biases"], ref.get("activation", "relu"))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad inline classifier: {exc}") from None
        key = ("model", str(ref))
        if key not in self._cache:
            model = load_model(self.path(ref))
            if not isinstance(model, MlpClassifier):
                raise ConfigError(f"{ref} is not a classifier checkpoint")
            self._cache[key] = model
        return self._cache[key]

    def generator(self):
        g = self.require("generator")
        src = g.get("source")
        try:
            if src == "identity":
                return IdentityGenerator(int(g["dim"]))
            if src == "affine":
                return AffineGenerator(g["A"], g["b"])
            if src == "logistic_warp":
                return LogisticWarpGenerator(g["w"], g["b"])
            if src == "decoder":
                vae = load_model(self.path(g["vae"]))
                if not isinstance(vae, VaeModel):
                    raise ConfigError(f"{g['vae']} is not a VAE checkpoint")
                return DecoderGenerator(vae)
            if src == "glyphs":
                return GlyphGenerator(int(g.get("side", 16)))
            if src == "scene":
                return SceneGenerator(Rasterizer(int(g.get("side", 32))))
        except KeyError as exc:
            raise ConfigError(f"generator {src!r} needs {exc}") from None
        raise ConfigError(f"generator source must be one of {GENERATOR_SOURCES}, got {src!r}")

    def target(self) -> TargetSpec:
        try:
            return target_from_dict(self.require("target"))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad target: {exc}") from None

    def interpolation(self) -> InterpolationSchedule:
        d = self.require("interpolate")
        kw = {"a": int(d["a"]), "b": int(d["b"])}
        if "alphas" in d:
            kw["alphas"] = tuple(d["alphas"])
        if "sigma" in d:
            kw["sigma"] = float(d["sigma"])
        return InterpolationSchedule(**kw)

    def sampler(self, scene_domain: bool = False) -> SamplerSpec:
        d = dict(self.require("sampler"))
        kind = d.pop("kind", "rwm")
        n_keep = int(d.pop("n_keep", SCENE_DOMAIN_KEEP if scene_domain else LATENT_DOMAIN_KEEP))
        band = float(d.pop("band", 0.15))
        sigmas = d.pop("anneal", None)
        segment = int(d.pop("segment_iters", 500))
        chains = int(d.pop("chains", 1))
        seeds = d.pop("seeds", None)
        d.pop("seed", None)
        if seeds is None:
            seeds = [self.seed + k for k in range(chains)]
        cls = {"rwm": RwmConfig, "hmc": HmcConfig}.get(kind)
        if cls is None:
            raise ConfigError(f"sampler kind must be 'rwm' or 'hmc', got {kind!r}")
        try:
            cfg = cls(**d, seed=int(seeds[0]))
        except TypeError as exc:
            raise ConfigError(f"bad sampler config: {exc}") from None
        if n_keep < 1 or not seeds:
            raise ConfigError("sampler needs n_keep >= 1 and at least one seed")
        anneal = AnnealSchedule(tuple(sigmas), segment) if sigmas else None
        return SamplerSpec(kind, cfg, n_keep, band, anneal, tuple(int(s) for s in seeds))

    def recipe(self, key: str = "dataset") -> DatasetRecipe:
        ref = self.require(key)
        if isinstance(ref, str):
            try:
                ref = json.loads(self.path(ref).read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read dataset recipe: {exc}") from None
        return DatasetRecipe.from_dict(ref)

    def train_config(self) -> tuple[str, TrainConfig, dict]:
        d = dict(self.require("train"))
        model = d.pop("model", "classifier")
        if model not in TRAIN_MODELS:
            raise ConfigError(f"train.model must be one of {TRAIN_MODELS}")
        arch = {k: d.pop(k) for k in ("hidden", "activation") if k in d}
        d.setdefault("loss", {"classifier": "cross-entropy", "ambiguous_classifier": "kl-target", "vae": "elbo"}[model])
        try:
            cfg = TrainConfig(**d, seed=self.seed)
        except TypeError as exc:
            raise ConfigError(f"bad training config: {exc}") from None
        return model, cfg, arch


def _check_files(spec: RunSpec) -> None:
    refs = []
    for key in ("classifier", "classifier_b"):
        if isinstance(spec.get(key), str):
            refs.append(spec.get(key))
    for ref in spec.get("classifiers", []) or []:
        if isinstance(ref, str):
            refs.append(ref)
    gen = spec.get("generator") or {}
    if gen.get("source") == "decoder" and "vae" in gen:
        refs.append(gen["vae"])
    if isinstance(spec.get("dataset"), str):
        refs.append(spec.get("dataset"))
    for ref in refs:
        if not spec.path(ref).is_file():
            raise ConfigError(f"referenced file does not exist: {ref}")


def parse_runspec(data: dict, base_dir: Path | str = ".", seed: int | None = None) -> RunSpec:
    """Build and fully validate a :class:`RunSpec` from its JSON object."""
    if not isinstance(data, dict):
        raise ConfigError("run spec must be a JSON object")
    version = data.get("spec_version")
    if version != SPEC_VERSION:
        raise ConfigError(f"spec_version must be {SPEC_VERSION}, got {version!r}")
    kind = data.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    spec = RunSpec(kind, data, Path(base_dir), int(data.get("seed", 0) if seed is None else seed))
    _check_files(spec)
    try:
        _validate_kind(spec)
    except ConfigError:
        raise
    except (TrexError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid run spec: {exc}") from None
    return spec


def _validate_kind(spec: RunSpec) -> None:
    kind = spec.kind
    if kind == "train":
        spec.recipe()
        spec.train_config()
        return
    if kind in SAMPLE_KINDS:
        gen = spec.generator()
        clf = spec.classifier()
        if clf.input_dim != gen.output_dim:
            raise ConfigError(f"classifier input width {clf.input_dim} != generator output {gen.output_dim}")
        spec.sampler(scene_domain=isinstance(gen, SceneGenerator))
        if kind == "interpolate":
            sched = spec.interpolation()
            if not (0 <= sched.a < clf.n_classes and 0 <= sched.b < clf.n_classes):
                raise ConfigError("interpolation classes out of range")
        else:
            target = spec.target()
            if target.variant != _TARGET_FOR_KIND[kind]:
                raise ConfigError(f"kind {kind!r} needs a {_TARGET_FOR_KIND[kind]} target, got {target.variant}")
            target.validate(clf.n_classes)
        if kind in ("misclassify", "novel_class") and not isinstance(gen, (GlyphGenerator, SceneGenerator)):
            raise ConfigError(f"{kind} needs a generator with known ground truth (glyphs or scene)")
        if kind == "novel_class" and not isinstance(gen, SceneGenerator):
            raise ConfigError("novel_class needs the scene generator")
        return
    if kind == "compare_classifiers":
        refs = spec.require("classifiers")
        if len(refs) != 2:
            raise ConfigError("compare_classifiers needs exactly two classifiers")
        a, b = (spec._load_classifier(r) for r in refs)
        if a.input_dim != b.input_dim or a.n_classes != b.n_classes:
            raise ConfigError("compared classifiers have incompatible input or class dimensions")
        gen = spec.generator()
        if not isinstance(gen, (GlyphGenerator, DecoderGenerator)):
            raise ConfigError("compare_classifiers needs the glyph or decoder generator for labelling")
        if a.input_dim != gen.output_dim:
            raise ConfigError("classifier input width does not match the generator output")
        spec.sampler()
        return
    if kind == "testset_scan":
        clf = spec.classifier()
        recipe = spec.recipe()
        if recipe.K != clf.n_classes:
            raise ConfigError("dataset and classifier class counts differ")
        if spec.get("split", "test") not in ("test", "all"):
            raise ConfigError("split must be 'test' or 'all'")
        return
    if kind == "saliency":
        clf = spec.classifier()
        inp = spec.require("input")
        if not any(k in inp for k in ("image", "scene", "dataset")):
            raise ConfigError("saliency input needs 'image', 'scene' or 'dataset'")
        cls = int(spec.require("class"))
        if not 0 <= cls < clf.n_classes:
            raise ContractError(f"class {cls} out of range")
        if "dataset" in inp:
            DatasetRecipe.from_dict(inp["dataset"])


def load_runspec(path, seed: int | None = None) -> RunSpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read run spec: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"run spec is not valid JSON: {exc}") from None
    return parse_runspec(data, path.parent, seed)


def image_input(spec: RunSpec) -> tuple[np.ndarray, Any]:
    """The saliency input image and, for scene inputs, the scene itself."""
    from ..datasets import make_dataset
    from ..scene import SceneObject

    inp = spec.require("input")
    if "image" in inp:
        return np.asarray(inp["image"], dtype=np.float64), None
    if "scene" in inp:
        scene = tuple(SceneObject(**o) for o in inp["scene"])
        side = int(inp.get("side", 32))
        return Rasterizer(side).render(scene), scene
    data = make_dataset(DatasetRecipe.from_dict(inp["dataset"]), keep_latents=True)
    idx = int(inp.get("index", 0))
    if not 0 <= idx < len(data):
        raise ConfigError(f"dataset index {idx} out of range")
    side = int(round(np.sqrt(data.X.shape[1])))
    scene = data.extras[idx] if data.recipe.recipe_id == "scene-count" else None
    return data.X[idx].reshape(side, side), scene
