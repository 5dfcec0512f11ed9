import math
from collections import Counter

import numpy as np
import pytest

from trexd.errors import ConfigError, ContractError
from trexd.glyphs import N_GLYPHS, GlyphGenerator, GlyphLatent, GlyphPrior, jitter_params, render_glyph
from trexd.samplers import RwmConfig
from trexd.scene import (BASE_SHAPES, GRAY_LEVELS, MIN_SEPARATION, N_COLORS, POS_RANGE, SIZE_RANGE, Rasterizer,
                         SceneGenerator, SceneObject, ScenePrior, remove_object_probe, scene_from_json,
                         scene_to_json, separated, with_object)


class MeanIntensity:
    """Two-class stub: confidence in class 0 is the mean pixel value."""

    def predict(self, x):
        m = float(np.mean(x))
        return np.array([m, 1.0 - m])


def obj(shape="disc", color=3, size=4.0, cx=16.0, cy=16.0):
    return SceneObject(shape, color, size, cx, cy)


# -- prior -------------------------------------------------------------------------

def test_count_range_one_gives_single_objects():
    prior = ScenePrior((1, 1))
    rng = np.random.default_rng(0)
    assert all(len(prior.sample(rng)) == 1 for _ in range(200))


def test_excluded_shape_never_sampled():
    prior = ScenePrior(excluded=("square",))
    rng = np.random.default_rng(1)
    shapes = Counter(o.shape for _ in range(10000) for o in prior.sample(rng))
    assert shapes["square"] == 0
    assert set(shapes) == {"disc", "triangle"}


def test_shape_and_count_frequencies():
    prior = ScenePrior((1, 3))
    rng = np.random.default_rng(2)
    scenes = [prior.sample(rng) for _ in range(6000)]
    counts = Counter(len(s) for s in scenes)
    for k in (1, 2, 3):
        # binomial sd for p=1/3, n=6000 is about 36.5
        assert abs(counts[k] - 2000) <= 4 * 36.5
    shapes = Counter(o.shape for s in scenes for o in s)
    n = sum(shapes.values())
    sd = math.sqrt(n * (1 / 3) * (2 / 3))
    for s in BASE_SHAPES:
        assert abs(shapes[s] - n / 3) <= 4 * sd


def test_samples_respect_support():
    prior = ScenePrior((2, 4), novel=("cross",))
    rng = np.random.default_rng(3)
    for _ in range(500):
        s = prior.sample(rng)
        assert prior.valid(s) and separated(s)
        for o in s:
            assert SIZE_RANGE[0] <= o.size <= SIZE_RANGE[1]
            assert POS_RANGE[0] <= o.cx <= POS_RANGE[1]


def test_prior_validation():
    with pytest.raises(ConfigError):
        ScenePrior((0, 2))
    with pytest.raises(ConfigError):
        ScenePrior((3, 2))
    with pytest.raises(ConfigError):
        ScenePrior(excluded=("hexagon",))
    with pytest.raises(ConfigError):
        ScenePrior(excluded=BASE_SHAPES)


def test_log_prob_analytic():
    prior = ScenePrior((1, 3))
    scene = (obj(), obj("triangle", 0, 3.0, 8.0, 8.0))
    per_object = math.log(3) + math.log(N_COLORS) + math.log(4.0) + 2 * math.log(20.0)
    assert prior.log_prob(scene) == pytest.approx(-math.log(3) - 2 * per_object, abs=1e-12)


@pytest.mark.parametrize("scene", [
    (obj("square"),),                                   # excluded shape
    (obj(size=7.0),),                                   # size out of range
    (obj(cx=2.0),),                                     # position out of range
    (obj(), obj(cx=17.0)),                              # overlapping
    tuple(obj(cx=8.0 + 3 * k) for k in range(4)),       # too many objects
])
def test_log_prob_off_support(scene):
    assert ScenePrior((1, 3), excluded=("square",)).log_prob(scene) == -np.inf


def test_separation_threshold():
    a = obj(size=2.5, cx=10.0)
    gap = MIN_SEPARATION * 5.0
    assert gap == 4.0
    assert separated((a, obj(size=2.5, cx=10.0 + gap)))
    assert not separated((a, obj(size=2.5, cx=10.0 + gap - 1e-9)))


# -- proposal -------------------------------------------------------------------------

def test_single_shape_support_keeps_shape():
    prior = ScenePrior(excluded=("square", "triangle"))
    rng = np.random.default_rng(4)
    cfg = RwmConfig(proposal_std=0.5, flip_prob=1.0)
    scene = prior.sample(rng)
    for _ in range(200):
        scene = prior.propose(scene, cfg, rng)
        assert all(o.shape == "disc" for o in scene)


def test_proposals_never_use_excluded_shapes():
    prior = ScenePrior(excluded=("square",))
    rng = np.random.default_rng(5)
    cfg = RwmConfig(proposal_std=0.3, flip_prob=0.5)
    scene = prior.sample(rng)
    for _ in range(10000):
        proposal = prior.propose(scene, cfg, rng)
        assert all(o.shape != "square" for o in proposal)
        if prior.valid(proposal):
            scene = proposal


def test_proposal_keeps_object_count():
    prior = ScenePrior((1, 4))
    rng = np.random.default_rng(6)
    s = prior.sample(rng, count=3)
    assert len(prior.propose(s, RwmConfig(), rng)) == 3
    assert prior.proposal_log_density(s, s[:2], RwmConfig()) == -np.inf


def test_proposal_density_matches_monte_carlo():
    # shape-flip frequencies against the closed-form kernel
    prior = ScenePrior()
    cfg = RwmConfig(proposal_std=0.1, flip_prob=0.3)
    rng = np.random.default_rng(7)
    s = (obj("disc", 1),)
    shapes = Counter(prior.propose(s, cfg, rng)[0].shape for _ in range(20000))
    stay = cfg.flip_prob / 3 + (1 - cfg.flip_prob)
    assert shapes["disc"] / 20000 == pytest.approx(stay, abs=0.01)
    assert shapes["square"] / 20000 == pytest.approx(cfg.flip_prob / 3, abs=0.01)


# -- rasterizer -------------------------------------------------------------------------

def test_disc_area_and_mirror_symmetry():
    img = Rasterizer().render((obj("disc", 3, 4.0, 16.0, 16.0),))
    mask = img > 0
    assert abs(mask.sum() - math.pi * 16) <= 0.15 * math.pi * 16
    assert np.array_equal(mask, mask[:, ::-1])
    assert np.array_equal(mask, mask[::-1, :])
    assert set(np.unique(img)) == {0.0, GRAY_LEVELS[3]}


def test_square_pixel_count():
    img = Rasterizer().render((obj("square", 0, 3.0, 16.0, 16.0),))
    assert (img > 0).sum() == 36


def test_triangle_points_up():
    mask = Rasterizer().render((obj("triangle", 2, 5.0, 16.0, 16.0),)) > 0
    rows = mask.sum(axis=1)
    filled = rows[rows > 0]
    assert np.all(np.diff(filled) >= 0)
    assert filled[-1] > filled[0]


def test_render_deterministic_and_painter_order():
    a, b = obj("square", 0, 4.0, 12.0, 16.0), obj("disc", 3, 4.0, 18.0, 16.0)
    r = Rasterizer()
    assert np.array_equal(r.render((a, b)), r.render((a, b)))
    assert r.render((a, b))[16, 15] == GRAY_LEVELS[3]
    assert r.render((b, a))[16, 15] == GRAY_LEVELS[0]


def test_generator_shapes():
    g = SceneGenerator()
    assert g.generate((obj(),)).shape == (1024,)
    assert g.image_shape == (32, 32)


def test_json_round_trip():
    scene = ScenePrior((2, 3)).sample(np.random.default_rng(8))
    assert scene_from_json(scene_to_json(scene)) == scene


def test_with_object_replaces_one_field():
    s = (obj(), obj("triangle", cx=8.0))
    t = with_object(s, 1, color=0)
    assert t[1].color == 0 and t[1].shape == "triangle" and t[0] == s[0]


# -- removal probe --------------------------------------------------------------------------

def test_removal_probe_matches_brute_force():
    prior = ScenePrior((2, 4))
    rng = np.random.default_rng(9)
    clf, r = MeanIntensity(), Rasterizer()
    for _ in range(20):
        s = prior.sample(rng, count=int(rng.integers(2, 5)))
        brute = []
        for k in range(len(s)):
            img = np.zeros((32, 32))
            for j, o in enumerate(s):
                if j != k:
                    img[r.mask(o)] = GRAY_LEVELS[o.color]
            brute.append((k, float(img.mean())))
        brute.sort(key=lambda kc: kc[1])
        assert remove_object_probe(s, clf, 0) == brute


def test_removal_probe_ranks_largest_object_first():
    s = (obj("square", 3, 2.0, 8.0, 8.0), obj("square", 3, 6.0, 20.0, 20.0))
    assert remove_object_probe(s, MeanIntensity(), 0)[0][0] == 1


def test_removal_probe_duplicates_tie_in_order():
    a = obj("disc", 2, 3.0, 10.0, 10.0)
    ranking = remove_object_probe((a, a), MeanIntensity(), 0)
    assert [k for k, _ in ranking] == [0, 1]
    assert ranking[0][1] == ranking[1][1]


def test_removal_probe_hidden_confuser_has_no_effect():
    # an object fully painted over by a later one changes nothing when removed
    small, big = obj("disc", 0, 2.0, 16.0, 16.0), obj("square", 3, 5.0, 16.0, 16.0)
    ranking = dict(remove_object_probe((small, big), MeanIntensity(), 0))
    full = float(Rasterizer().render((small, big)).mean())
    assert ranking[0] == full
    assert ranking[1] < full


def test_removal_probe_needs_two_objects():
    with pytest.raises(ContractError):
        remove_object_probe((obj(),), MeanIntensity(), 0)


# -- glyphs --------------------------------------------------------------------------------

def test_glyph_render_range_and_determinism():
    u = np.random.default_rng(0).standard_normal(5)
    for label in range(N_GLYPHS):
        img = render_glyph(label, u)
        assert img.shape == (16, 16)
        assert img.min() >= 0.0 and img.max() <= 1.0
        assert np.array_equal(img, render_glyph(label, u))


def test_glyphs_are_distinct():
    imgs = [render_glyph(k, np.zeros(5)) for k in range(N_GLYPHS)]
    for i in range(N_GLYPHS):
        for j in range(i + 1, N_GLYPHS):
            assert not np.array_equal(imgs[i], imgs[j])


def test_eight_covers_every_other_glyph():
    eight = render_glyph(8, np.zeros(5))
    for k in range(N_GLYPHS):
        assert np.all(render_glyph(k, np.zeros(5)) <= eight + 1e-12)


def test_one_is_left_right_asymmetric_and_narrow():
    one = render_glyph(1, np.zeros(5)) > 0
    assert one[:, :8].sum() < one[:, 8:].sum()


def test_jitter_is_bounded():
    p = jitter_params(np.array([1e3, -1e3, 1e3, -1e3, 1e3]))
    assert p[0] == pytest.approx(0.15) and p[1] == pytest.approx(0.9) and p[4] == pytest.approx(1.05)
    assert np.array_equal(jitter_params(np.zeros(5)), [0.0, 1.0, 0.0, 0.0, 0.85])


def test_glyph_prior_support():
    prior = GlyphPrior((1, 4))
    assert prior.log_prob(GlyphLatent(2, np.zeros(5))) == -np.inf
    ref = -math.log(2) - 2.5 * math.log(2 * math.pi)
    assert prior.log_prob(GlyphLatent(4, np.zeros(5))) == pytest.approx(ref, abs=1e-12)
    rng = np.random.default_rng(1)
    lat = prior.sample(rng)
    for _ in range(1000):
        lat = prior.propose(lat, RwmConfig(flip_prob=0.9), rng)
        assert lat.label in (1, 4)


def test_glyph_generator_output():
    g = GlyphGenerator()
    lat = GlyphLatent(3, np.zeros(5))
    assert np.array_equal(g.generate(lat), render_glyph(3, np.zeros(5)).ravel())
    assert GlyphPrior().flatten(lat).tolist() == [3.0, 0, 0, 0, 0, 0]
