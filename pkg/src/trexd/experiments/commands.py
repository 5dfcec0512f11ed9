"""Experiment drivers behind the ``trexd`` subcommands.

Every command computes first and writes its files at the end, so a failed
run never leaves partial outputs behind.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..checkpoint import dumps
from ..datasets import glyph_prototypes, make_dataset
from ..errors import ConfigError, ContractError
from ..glyphs import N_GLYPHS, GlyphGenerator, GlyphPrior
from ..models import DecoderGenerator, generate
from ..samplers import (FailureReport, SampleRecord, anneal_run, detect_failure, run_chain, samples_csv,
                        summarize)
from ..scene import BASE_SHAPES, NOVEL_SHAPES, SceneGenerator, ScenePrior, remove_object_probe
from ..targets import HighConfidence, RelaxedPosterior, TargetSpec, target_from_alpha
from ..training import accuracy, kl_target_loss, reconstruction_error, train_ambiguous_classifier, train_classifier, train_vae
from .pgm import export_grid, pgm_bytes, to_bytes
from .runspec import RunSpec, SamplerSpec
from .saliency import smoothgrad
from .scan import scan_confidences

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SAMPLING = 3
GRID_MAX = 64
GRID_COLUMNS = 8


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _csv_text(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _write_all(out: Path, files: dict[str, bytes | str]) -> None:
    for name, content in files.items():
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(content, str):
            path.write_text(content, encoding="utf-8")
        else:
            path.write_bytes(content)


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("TREXD_THREADS", "1")))
    except ValueError:
        raise ConfigError("TREXD_THREADS must be an integer") from None


# ---------------------------------------------------------------------------
# train


def cmd_train(spec: RunSpec, out: Path) -> dict:
    """Train one model and write ``<model>.ckpt``, ``dataset.json`` and ``manifest.json``."""
    recipe = spec.recipe()
    model_kind, cfg, arch = spec.train_config()
    data = make_dataset(recipe)
    train, test = data.split(float(spec.get("holdout", 0.2)))
    recipe_dict = json.loads(recipe.to_json())
    history: list[float] = []
    if model_kind == "vae":
        model = train_vae(train, cfg, hidden=int(arch.get("hidden", 128)), history=history)
        model.meta["recipe"] = recipe_dict
        metrics = {"heldout_reconstruction_bce": reconstruction_error(model, test.X)}
    else:
        trainer = train_classifier if model_kind == "classifier" else train_ambiguous_classifier
        hidden = arch.get("hidden", [64])
        model = trainer(train, cfg, hidden=tuple(int(h) for h in np.atleast_1d(hidden)),
                        activation=arch.get("activation", "relu"), history=history,
                        meta={"recipe": recipe_dict, "trained_as": model_kind})
        metrics = {"heldout_accuracy": accuracy(model, test), "train_accuracy": accuracy(model, train)}
        if model_kind == "ambiguous_classifier":
            from ..training import ambiguous_targets
            metrics["heldout_kl"] = kl_target_loss(ambiguous_targets(test.y, test.K),
                                                   model.logits(test.X)).item()
    metrics["final_batch_loss"] = history[-1]
    blob = dumps(model)
    ckpt = f"{model_kind}.ckpt"
    manifest = {
        "spec_version": spec.spec_version,
        "kind": "train",
        "model": model_kind,
        "seed": spec.seed,
        "recipe": recipe_dict,
        "train": asdict(cfg),
        "architecture": arch,
        "n_train": len(train),
        "n_heldout": len(test),
        "metrics": metrics,
        "checkpoint": {"file": ckpt, "sha256": hashlib.sha256(blob).hexdigest()},
    }
    _write_all(out, {ckpt: blob, "dataset.json": recipe.to_json() + "\n",
                     "manifest.json": json.dumps(manifest, indent=2, sort_keys=True) + "\n"})
    return manifest


# ---------------------------------------------------------------------------
# sample


@dataclass
class ChainResult:
    records: list[SampleRecord]
    report: FailureReport


def run_chains(rp: RelaxedPosterior, sampler: SamplerSpec) -> list[ChainResult]:
    """Independent chains, one per seed, optionally on a thread pool."""

    def one(args):
        chain_id, seed = args
        cfg = replace(sampler.config, seed=seed)
        if sampler.anneal is not None:
            recs = anneal_run(rp, sampler.kind, cfg, sampler.anneal, sampler.n_keep, chain_id)
            final = rp.with_sigma(sampler.anneal.sigmas[-1]).target
        else:
            recs = run_chain(rp, sampler.kind, cfg, sampler.n_keep, chain_id)
            final = rp.target
        return ChainResult(recs, detect_failure(recs, final, sampler.band))

    jobs = list(enumerate(sampler.seeds))
    workers = min(thread_cap(), len(jobs))
    if workers == 1:
        return [one(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, jobs))


def _counted_shape(spec: RunSpec, clf) -> str:
    gen = spec.get("generator", {})
    shape = gen.get("counted_shape") or clf.meta.get("recipe", {}).get("counted_shape", "square")
    if shape not in BASE_SHAPES:
        raise ConfigError(f"counted shape must be one of {BASE_SHAPES}")
    return shape


def build_prior(spec: RunSpec, gen, clf, target: TargetSpec | None):
    """Latent prior for the run's support regime."""
    g = spec.get("generator", {})
    kind = spec.kind
    if isinstance(gen, SceneGenerator):
        count_range = tuple(g.get("count_range") or clf.meta.get("recipe", {}).get("count_range", (1, 3)))
        excluded = list(g.get("excluded", []))
        novel = list(g.get("novel", []))
        if kind in ("misclassify", "novel_class"):
            if target.cls == 0:
                raise ConfigError("a zero-count target cannot be made a guaranteed misclassification")
            excluded.append(_counted_shape(spec, clf))
        if kind == "novel_class":
            novel.extend(s for s in NOVEL_SHAPES if s not in novel)
        return ScenePrior(count_range, tuple(dict.fromkeys(excluded)), tuple(novel))
    if isinstance(gen, GlyphGenerator):
        allowed = g.get("allowed")
        allowed = list(range(N_GLYPHS)) if allowed is None else [int(k) for k in allowed]
        if kind == "misclassify":
            allowed = [k for k in allowed if k != target.cls]
        try:
            return GlyphPrior(tuple(allowed))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return None


def _support_violations(spec: RunSpec, records: Sequence[SampleRecord], target: TargetSpec, clf) -> int:
    if spec.kind not in ("misclassify", "novel_class"):
        return 0
    bad = 0
    for r in records:
        if isinstance(r.latent, tuple):
            bad += any(o.shape == _counted_shape(spec, clf) for o in r.latent)
        else:
            bad += r.latent.label == target.cls
    return bad


def summary_rows(results: Sequence[ChainResult], classes: Sequence[int], label: str) -> list[list]:
    rows = []
    for res in results:
        recs = res.records
        for s in summarize(recs, classes):
            rows.append([s.cls, _fmt(s.mean), _fmt(s.std), s.n, _fmt(recs[-1].sigma), int(res.report.success),
                         res.report.reason, recs[0].chain_id, label, str(s)])
    return rows


SUMMARY_HEADER = ["class", "mean", "std", "n", "sigma", "success", "reason", "chain_id", "target", "display"]


def _grid(gen, records: Sequence[SampleRecord], spec: RunSpec) -> bytes | None:
    shape = getattr(gen, "image_shape", None)
    if shape is None:
        return None
    n_max = int(spec.get("grid_max", GRID_MAX))
    idx = np.unique(np.linspace(0, len(records) - 1, min(n_max, len(records))).round().astype(int))
    images = [generate(gen, records[k].latent).reshape(shape) for k in idx]
    return pgm_bytes(export_grid(images, int(spec.get("grid_columns", GRID_COLUMNS))))


def _sample_files(gen, results: Sequence[ChainResult], classes, label: str, spec: RunSpec) -> dict:
    records = [r for res in results for r in res.records]
    files = {"samples.csv": samples_csv(records),
             "summary.csv": _csv_text([SUMMARY_HEADER, *summary_rows(results, classes, label)])}
    grid = _grid(gen, records, spec)
    if grid is not None:
        files["grid.pgm"] = grid
    return files


def cmd_sample(spec: RunSpec, out: Path) -> int:
    """Run every chain of a sampling regime; returns the process exit code."""
    gen = spec.generator()
    clf = spec.classifier()
    sampler = spec.sampler(scene_domain=isinstance(gen, SceneGenerator))
    if spec.kind == "interpolate":
        sched = spec.interpolation()
        targets = [(f"alpha={a:.2f}", target_from_alpha(sched, a, clf.n_classes), [sched.a, sched.b])
                   for a in sched.alphas]
    else:
        t = spec.target()
        targets = [(t.variant, t, t.tracked_classes(clf.n_classes))]
    files: dict[str, bytes | str] = {}
    all_rows = [SUMMARY_HEADER]
    ok = True
    for label, target, classes in targets:
        prior = build_prior(spec, gen, clf, target)
        rp = RelaxedPosterior(gen, clf, target, prior)
        results = run_chains(rp, sampler)
        records = [r for res in results for r in res.records]
        violations = _support_violations(spec, records, target, clf)
        if violations:
            raise RuntimeError(f"{violations} kept samples left the restricted support")
        part = _sample_files(gen, results, classes, label, spec)
        ok &= all(res.report.success for res in results)
        for res in results:
            log.info("%s chain %d: %s (%s)", label, res.records[0].chain_id,
                     ", ".join(str(s) for s in summarize(res.records, classes)), res.report.reason)
        if len(targets) == 1:
            files.update(part)
        else:
            sub = label.replace("=", "_")
            files.update({f"{sub}/{k}": v for k, v in part.items()})
            all_rows.extend(summary_rows(results, classes, label))
    if len(targets) > 1:
        files["summary.csv"] = _csv_text(all_rows)
    _write_all(out, files)
    return EXIT_OK if ok else EXIT_SAMPLING


# ---------------------------------------------------------------------------
# scan / compare / saliency


def cmd_testset_scan(spec: RunSpec, out: Path):
    clf = spec.classifier()
    data = make_dataset(spec.recipe())
    if spec.get("split", "test") == "test":
        data = data.split(float(spec.get("holdout", 0.2)))[1]
    if len(data) == 0:
        raise ContractError("cannot scan an empty test set")
    report = scan_confidences(clf.predict(data.X), data.y)
    _write_all(out, {"scan.json": report.to_json() + "\n"})
    return report


def ground_truth_labels(gen, records: Sequence[SampleRecord]) -> np.ndarray:
    """Generating label for glyph latents; nearest clean prototype for decoded images."""
    if isinstance(gen, GlyphGenerator):
        return np.array([r.latent.label for r in records])
    if isinstance(gen, DecoderGenerator):
        protos = glyph_prototypes(gen.vae.side)
        X = np.stack([generate(gen, r.latent) for r in records])
        d2 = ((X[:, None, :] - protos[None]) ** 2).sum(-1)
        return d2.argmin(axis=1)
    raise ContractError("ground-truth labelling needs the glyph or decoder generator")


def compare_rows(spec: RunSpec) -> list[list]:
    gen = spec.generator()
    sampler = spec.sampler()
    sigma = float(spec.get("sigma", 0.05))
    names = spec.get("names") or ["A", "B"]
    models = [spec._load_classifier(r) for r in spec.require("classifiers")]
    K = models[0].n_classes
    rows = [["model", *map(str, range(K)), "All"]]
    for name, clf in zip(names, models):
        hits, totals = np.zeros(K), np.zeros(K)
        for c in range(K):
            rp = RelaxedPosterior(gen, clf, HighConfidence(c, sigma))
            records = [r for res in run_chains(rp, sampler) for r in res.records]
            labels = ground_truth_labels(gen, records)
            hits[c], totals[c] = float((labels == c).sum()), len(labels)
        rows.append([name, *(f"{h / n:.4f}" for h, n in zip(hits, totals)), f"{hits.sum() / totals.sum():.4f}"])
    return rows


def cmd_compare(spec: RunSpec, out: Path) -> list[list]:
    rows = compare_rows(spec)
    _write_all(out, {"comparison.csv": _csv_text(rows)})
    return rows


def cmd_saliency(spec: RunSpec, out: Path):
    from .runspec import image_input

    clf = spec.classifier()
    img, scene = image_input(spec)
    if img.size != clf.input_dim:
        raise ConfigError(f"input has {img.size} pixels, classifier expects {clf.input_dim}")
    cls = int(spec.require("class"))
    smap = smoothgrad(clf, img, cls, float(spec.get("noise_std", 0.1)), int(spec.get("n_samples", 50)), spec.seed)
    files = {"saliency.pgm": pgm_bytes(to_bytes(smap.normalized())),
             "saliency.csv": _csv_text([[_fmt(v) for v in row] for row in np.atleast_2d(smap.values)])}
    if scene is not None and len(scene) >= 2:
        base = float(clf.predict(img.reshape(-1))[cls])
        probe = remove_object_probe(scene, clf, cls)
        rows = [["rank", "object", "shape", "confidence", "drop"]]
        rows += [[k, idx, scene[idx].shape, _fmt(conf), _fmt(base - conf)] for k, (idx, conf) in enumerate(probe)]
        files["removal.csv"] = _csv_text(rows)
    _write_all(out, files)
    return smap
