"""Session-wide trained models and oracles shared by several test modules."""
import time

import numpy as np
import pytest

from trexd.datasets import DatasetRecipe, make_dataset
from trexd.models import IdentityGenerator, MlpClassifier
from trexd.targets import Evaluation, GeneralVector, HighConfidence, RelaxedPosterior, StandardNormalPrior
from trexd.training import TrainConfig, train_ambiguous_classifier, train_classifier, train_vae

GLYPH_RECIPE = DatasetRecipe("glyphs", seed=0, K=10, n=5000, side=16)
SCENE_RECIPE = DatasetRecipe("scene-count", seed=0, K=4, n=30000, side=32)


def logistic_classifier(slope: float = 4.0) -> MlpClassifier:
    """Two-class logistic model with f_0(x) = sigmoid(slope * x)."""
    return MlpClassifier([np.array([[slope, 0.0]])], [np.zeros(2)])


def logistic_posterior(p=(0.5, 0.5), sigma=0.05) -> RelaxedPosterior:
    return RelaxedPosterior(IdentityGenerator(1), logistic_classifier(), GeneralVector(p, sigma))


def grid_total_variation(rp, samples, n_bins=50):
    """TV distance between a 1-d sample histogram and trapezoid quadrature of ``rp``.

    Bins span the 0.0005..0.9995 quantiles of the grid density on 2001
    points in [-4, 4]; the remaining mass forms one extra tail bin.
    """
    grid = np.linspace(-4, 4, 2001)
    lp = np.array([rp.log_posterior(np.array([g])) for g in grid])
    w = np.exp(lp - lp.max())
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    lo, hi = np.interp([0.0005, 0.9995], cdf, grid)
    edges = np.linspace(lo, hi, n_bins + 1)
    p = np.diff(np.interp(edges, grid, cdf))
    p = np.append(p, 1.0 - p.sum())
    h = np.histogram(samples, edges)[0] / len(samples)
    h = np.append(h, 1.0 - h.sum())
    return 0.5 * float(np.abs(h - p).sum())


class GaussianPosterior:
    """Standard normal log-density with its analytic gradient."""

    target = HighConfidence(0)
    differentiable = True

    def __init__(self, dim=2):
        self.prior = StandardNormalPrior(dim)

    def evaluate(self, z):
        return Evaluation(-0.5 * float(z @ z), np.array([0.5, 0.5]))

    def evaluate_with_grad(self, z):
        return Evaluation(-0.5 * float(z @ z), np.array([0.5, 0.5]), -np.asarray(z, dtype=float))


TRAIN_SECONDS: dict[str, float] = {}
CRITERIA: list[str] = []


def _timed(name, fn):
    start = time.perf_counter()
    out = fn()
    TRAIN_SECONDS[name] = time.perf_counter() - start
    return out


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def glyph_split():
    return make_dataset(GLYPH_RECIPE).split()


@pytest.fixture(scope="session")
def glyph_classifier(glyph_split):
    train, _ = glyph_split
    return _timed("glyph_classifier", lambda: train_classifier(train, TrainConfig(epochs=10, lr=0.05, seed=0),
                                                               hidden=(64,)))


@pytest.fixture(scope="session")
def glyph_kl_classifier(glyph_split):
    train, _ = glyph_split
    return train_ambiguous_classifier(train, TrainConfig(epochs=10, lr=0.05, seed=0, loss="kl-target"),
                                      hidden=(64,))


@pytest.fixture(scope="session")
def glyph_vae(glyph_split):
    train, _ = glyph_split
    return _timed("glyph_vae", lambda: train_vae(train, TrainConfig(epochs=100, lr=0.005, seed=0, loss="elbo"),
                                                 hidden=256))


@pytest.fixture(scope="session")
def scene_split():
    return make_dataset(SCENE_RECIPE).split()


@pytest.fixture(scope="session")
def scene_classifier(scene_split):
    train, _ = scene_split
    return train_classifier(train, TrainConfig(epochs=15, lr=0.01, seed=0), hidden=(128,),
                            meta={"recipe": {"counted_shape": "square", "count_range": [1, 3]}})
