"""End-to-end acceptance checks, one test per criterion.

Each test appends a PASS/FAIL line to ``conftest.CRITERIA``; the lines are
printed in the pytest terminal summary.
"""
import json
import time

import numpy as np
import pytest

from trexd.autodiff import finite_difference_gradient
from trexd.checkpoint import save_model
from trexd.cli import main
from trexd.datasets import DatasetRecipe, make_dataset
from trexd.experiments.saliency import input_gradient, smoothgrad
from trexd.experiments.scan import scan_confidences
from trexd.glyphs import GlyphGenerator, GlyphPrior
from trexd.models import AffineGenerator, DecoderGenerator, LogisticWarpGenerator, MlpClassifier
from trexd.samplers import HmcConfig, RwmConfig, detect_failure, leapfrog, run_chain, summarize
from trexd.scene import GRAY_LEVELS, Rasterizer, SceneGenerator, ScenePrior, remove_object_probe
from trexd.targets import (AmbiguousPair, GeneralVector, HighConfidence, RelaxedPosterior, UniformAmbiguous,
                           grad_log_posterior)

from conftest import CRITERIA, TRAIN_SECONDS, GaussianPosterior, grid_total_variation, logistic_posterior


def report(number: int, title: str, ok: bool, detail: str) -> None:
    CRITERIA.append(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    print(CRITERIA[-1])
    assert ok, CRITERIA[-1]


# -- 1 ------------------------------------------------------------------------------------------

@pytest.mark.parametrize("sampler,cfg", [
    ("rwm", RwmConfig(proposal_std=0.08, thin=2, burn_in=500, seed=0)),
    ("hmc", HmcConfig(step_size=0.045, n_leapfrog=2, burn_in=200, seed=0)),
])
def test_criterion_1_oracle_posterior_agreement(sampler, cfg):
    rp = logistic_posterior((0.5, 0.5), 0.05)
    start = time.perf_counter()
    recs = run_chain(rp, sampler, cfg, 20000)
    elapsed = time.perf_counter() - start
    tv = grid_total_variation(rp, np.array([r.z[0] for r in recs]))
    report(1, f"oracle posterior agreement ({sampler})", tv <= 0.05 and elapsed <= 30.0,
           f"TV={tv:.4f} (<= 0.05), {elapsed:.1f}s (<= 30s), accept={recs[-1].accept_rate:.2f}")


# -- 2 ------------------------------------------------------------------------------------------

def _gradient_configs():
    rng = np.random.default_rng(0)
    yield RelaxedPosterior(AffineGenerator(rng.standard_normal((4, 3)), rng.standard_normal(4)),
                           MlpClassifier.init([4, 8, 3], "tanh", seed=1), HighConfidence(1))
    yield RelaxedPosterior(AffineGenerator(rng.standard_normal((5, 2)), rng.standard_normal(5)),
                           MlpClassifier.init([5, 6, 6, 4], "sigmoid", seed=2), AmbiguousPair(0, 3))
    yield RelaxedPosterior(LogisticWarpGenerator(rng.standard_normal(6), rng.standard_normal(6)),
                           MlpClassifier.init([6, 10, 5], "relu", seed=3), UniformAmbiguous(0.1))
    yield RelaxedPosterior(AffineGenerator(rng.standard_normal((3, 4)), rng.standard_normal(3)),
                           MlpClassifier.init([3, 2], seed=4), GeneralVector((0.3, 0.7), 0.2))
    yield RelaxedPosterior(LogisticWarpGenerator(rng.standard_normal(4), rng.standard_normal(4)),
                           MlpClassifier.init([4, 16, 3], "tanh", seed=5), AmbiguousPair(1, 2, 0.05, 0.1))


def test_criterion_2_gradient_correctness():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for rp in _gradient_configs():
        for _ in range(100):
            z = rng.standard_normal(rp.prior.dim)
            g = grad_log_posterior(rp, z)
            fd = finite_difference_gradient(lambda t: rp.log_posterior(t.data), z)
            rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-8)
            worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - start
    report(2, "gradient correctness", worst <= 1e-4 and elapsed <= 10.0,
           f"max rel err={worst:.2e} (<= 1e-4) over 500 latents, {elapsed:.1f}s (<= 10s)")


# -- 3 ------------------------------------------------------------------------------------------

def test_criterion_3_sigma_limit():
    medians = []
    for sigma in (0.2, 0.1, 0.05):
        rp = logistic_posterior((0.5, 0.5), sigma)
        per_seed = []
        for seed in range(10):
            recs = run_chain(rp, "rwm", RwmConfig(proposal_std=0.08, burn_in=500, seed=seed), 2000)
            per_seed.append(np.mean([abs(r.conf[0] - 0.5) for r in recs]))
        medians.append(float(np.median(per_seed)))
    ok = medians[1] <= medians[0] and medians[2] <= medians[1]
    report(3, "sigma limit", ok, "median mean|f-0.5| at sigma 0.2/0.1/0.05 = " + "/".join(f"{m:.4f}" for m in medians))


# -- 4 ------------------------------------------------------------------------------------------

def test_criterion_4_concentration(glyph_classifier, glyph_vae):
    gen = DecoderGenerator(glyph_vae)
    start = time.perf_counter()
    good, lines = 0, []
    for c in range(10):
        rp = RelaxedPosterior(gen, glyph_classifier, HighConfidence(c))
        recs = run_chain(rp, "hmc", HmcConfig(step_size=0.1, n_leapfrog=5, burn_in=300, seed=c), 2000)
        s = summarize(recs, [c])[0]
        ok = detect_failure(recs, rp.target).success and s.mean >= 0.95 and s.std <= 0.05
        good += ok
        lines.append(f"{c}:{s}")
    elapsed = time.perf_counter() - start + TRAIN_SECONDS.get("glyph_classifier", 0.0) + TRAIN_SECONDS.get("glyph_vae", 0.0)
    report(4, "high-confidence concentration", good >= 8 and elapsed <= 300.0,
           f"{good}/10 classes (>= 8), {elapsed:.0f}s incl. training (<= 300s) [{', '.join(lines)}]")


# -- 5 ------------------------------------------------------------------------------------------

def _ambiguous_successes(classifier):
    gen = GlyphGenerator()
    flags = []
    for i in range(10):
        rp = RelaxedPosterior(gen, classifier, AmbiguousPair(i, (i + 1) % 10), GlyphPrior())
        recs = run_chain(rp, "rwm", RwmConfig(proposal_std=0.2, flip_prob=0.3, burn_in=500, seed=i), 2000)
        flags.append(detect_failure(recs, rp.target, band=0.15).success)
    return flags


def test_criterion_5_kl_ambiguous_pattern(glyph_kl_classifier, glyph_classifier):
    kl = _ambiguous_successes(glyph_kl_classifier)
    std = _ambiguous_successes(glyph_classifier)
    pattern = lambda flags: "".join("1" if f else "0" for f in flags)  # noqa: E731
    report(5, "ambiguous success pattern", all(kl) and sum(std) < sum(kl),
           f"KL-target {sum(kl)}/10 [{pattern(kl)}], standard {sum(std)}/10 [{pattern(std)}]")


# -- 6 ------------------------------------------------------------------------------------------

def test_criterion_6_misclassification_mining(scene_classifier):
    prior = ScenePrior((1, 3), excluded=("square",))
    rp = RelaxedPosterior(SceneGenerator(), scene_classifier, HighConfidence(1), prior)
    recs = run_chain(rp, "rwm", RwmConfig(proposal_std=0.5, flip_prob=0.2, burn_in=5000, seed=0), 500)
    frac = float(np.mean([r.conf[1] >= 0.85 for r in recs]))
    squares = sum(o.shape == "square" for r in recs for o in r.latent)
    report(6, "misclassification mining", frac >= 0.5 and squares == 0 and len(recs) == 500,
           f"{frac:.1%} of 500 kept at >= 0.85 (>= 50%), {squares} squares in kept scenes (== 0)")


# -- 7 ------------------------------------------------------------------------------------------

def reference_scan(conf, labels):
    """Brute-force restatement of the scan predicates."""
    amb, mis = {}, {}
    for idx, row in enumerate(conf.tolist()):
        ranked = sorted(range(len(row)), key=lambda k: -row[k])
        top, second = ranked[0], ranked[1]
        rest_low = all(row[k] < 0.40 for k in ranked[2:])
        if 0.40 <= row[top] <= 0.60 and 0.40 <= row[second] <= 0.60 and rest_low:
            key = f"{min(top, second)}-{max(top, second)}"
            amb[key] = amb.get(key, 0) + 1
        if top != labels[idx] and row[top] >= 0.85:
            mis[str(top)] = mis.get(str(top), 0) + 1
    return amb, mis


def test_criterion_7_scan_cross_check(glyph_classifier, glyph_kl_classifier):
    data = make_dataset(DatasetRecipe("glyphs", seed=7, K=10, n=2000, side=16))
    details, ok = [], True
    for name, clf in (("standard", glyph_classifier), ("kl-target", glyph_kl_classifier)):
        conf = clf.predict(data.X)
        rep = scan_confidences(conf, data.y)
        amb, mis = reference_scan(conf, data.y)
        ok &= rep.ambiguous_counts == amb and rep.misclassified_counts == mis
        details.append(f"{name}: {sum(amb.values())} ambiguous, {sum(mis.values())} confident misses")
    report(7, "test-set scan cross-check", ok, "exact match on 2000 items; " + "; ".join(details))


# -- 8 ------------------------------------------------------------------------------------------

def test_criterion_8_hmc_sanity():
    recs = run_chain(GaussianPosterior(2), "hmc", HmcConfig(step_size=0.1, n_leapfrog=10, burn_in=200, seed=0), 20000)
    z = np.stack([r.z for r in recs])
    var = z.var(axis=0)
    rng = np.random.default_rng(0)
    z0, m0 = rng.standard_normal(2), rng.standard_normal(2)

    def vg(x):
        return -0.5 * float(x @ x), -x

    z1, m1, _ = leapfrog(z0, m0, vg, 0.1, 10)
    z2, m2, _ = leapfrog(z1, -m1, vg, 0.1, 10)
    rev = float(max(np.abs(z2 - z0).max(), np.abs(m2 + m0).max()))
    acc = recs[-1].accept_rate
    ok = acc >= 0.95 and bool(np.all(np.abs(var - 1.0) <= 0.05)) and rev <= 1e-8
    report(8, "HMC sanity", ok, f"accept={acc:.3f} (>= 0.95), var={np.round(var, 4).tolist()} (1 +- 0.05), "
                                f"reversibility={rev:.1e} (<= 1e-8)")


# -- 9 ------------------------------------------------------------------------------------------

def test_criterion_9_saliency_and_removal(scene_classifier):
    x = make_dataset(DatasetRecipe("scene-count", seed=3, K=4, n=1, side=32)).X[0]
    exact = np.array_equal(smoothgrad(scene_classifier, x, 1, 0.0, 1).values,
                           np.abs(input_gradient(scene_classifier, x, 1)))
    prior = ScenePrior((2, 4))
    rng = np.random.default_rng(9)
    raster = Rasterizer()
    matches = 0
    for _ in range(20):
        scene = prior.sample(rng)
        cls = int(rng.integers(4))
        brute = []
        for k in range(len(scene)):
            img = np.zeros((32, 32))
            for j, o in enumerate(scene):
                if j != k:
                    img[raster.mask(o)] = GRAY_LEVELS[o.color]
            brute.append((k, float(scene_classifier.predict(img.ravel())[cls])))
        brute.sort(key=lambda kc: kc[1])
        matches += remove_object_probe(scene, scene_classifier, cls) == brute
    report(9, "saliency degenerate case and removal probe", exact and matches == 20,
           f"s=0,n=1 bit-exact={exact}, removal ranking matches on {matches}/20 scenes")


# -- 10 -----------------------------------------------------------------------------------------

def test_criterion_10_determinism(tmp_path, glyph_classifier):
    save_model(glyph_classifier, tmp_path / "clf.ckpt")
    specs = {
        "sample": {"kind": "high_conf", "seed": 4, "classifier": "clf.ckpt", "generator": {"source": "glyphs"},
                   "target": {"variant": "HighConfidence", "params": {"class": 2}},
                   "sampler": {"kind": "rwm", "burn_in": 500, "n_keep": 200, "chains": 2}},
        "saliency": {"kind": "saliency", "seed": 1, "classifier": "clf.ckpt", "class": 5, "n_samples": 5,
                     "input": {"dataset": {"recipe_id": "glyphs", "seed": 2, "K": 10, "n": 4, "side": 16},
                               "index": 2}},
    }
    compared, same = [], True
    for command, body in specs.items():
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps({"spec_version": 1, **body}))
        for run in ("a", "b"):
            main([command, "--spec", str(path), "--out", str(tmp_path / f"{command}_{run}")])
        for f in sorted((tmp_path / f"{command}_a").iterdir()):
            same &= f.read_bytes() == (tmp_path / f"{command}_b" / f.name).read_bytes()
            compared.append(f.name)
    needed = {"samples.csv", "summary.csv", "grid.pgm", "saliency.pgm"}
    report(10, "determinism", same and needed <= set(compared),
           f"byte-identical reruns of {', '.join(compared)}")
