from __future__ import annotations

import numpy as np
import pytest

import oracles
from defectkit.config import SynthesisRanges
from defectkit.imagetypes import Patch, ValidationError
from defectkit.rng import derive_rng
from defectkit.synthesis import (
    DefectTexture,
    SynthesisError,
    SynthesisParams,
    apply_defect,
    sample_params,
    synthesize,
    walk_texture,
)


def make_params(**overrides) -> SynthesisParams:
    defaults = dict(
        n_steps=40,
        momentum=0.5,
        turn_sigma=0.3,
        brush_radius=(1.0, 2.0),
        intensity_delta=(80, 80),
        polarity="bright",
        falloff="hard",
        mask_threshold=8,
        center_box=(64, 64, 192, 192),
    )
    defaults.update(overrides)
    return SynthesisParams(**defaults)


def bbox_aspect(support: np.ndarray) -> float:
    rows = np.any(support, axis=1).nonzero()[0]
    cols = np.any(support, axis=0).nonzero()[0]
    h = rows[-1] - rows[0] + 1
    w = cols[-1] - cols[0] + 1
    return max(h, w) / min(h, w)


def eccentricity(support: np.ndarray) -> float:
    ys, xs = np.nonzero(support)
    cov = np.cov(np.stack([ys, xs]))
    evals = np.linalg.eigvalsh(cov)
    if evals[1] <= 0:
        return 0.0
    return float(np.sqrt(1.0 - max(evals[0], 0.0) / evals[1]))


# -- walk_texture ------------------------------------------------------------


def test_single_step_hard_brush_touches_one_pixel():
    params = make_params(n_steps=1, brush_radius=(1.0, 1.0), intensity_delta=(200, 200),
                         mask_threshold=1)
    tex = walk_texture(params, 256, derive_rng(0, (1,)))
    assert tex.support.sum() == 1
    assert tex.delta[tex.support][0] == 200.0
    y, x = np.argwhere(tex.support)[0]
    assert 64 <= x < 192 and 64 <= y < 192  # started inside the center box


def test_walk_is_deterministic():
    params = make_params(n_steps=120)
    a = walk_texture(params, 256, derive_rng(9, (3, 7)))
    b = walk_texture(params, 256, derive_rng(9, (3, 7)))
    assert np.array_equal(a.delta, b.delta)
    assert np.array_equal(a.support, b.support)


def test_support_is_exactly_the_thresholded_delta(rng):
    for i in range(20):
        params = make_params(n_steps=int(rng.integers(1, 200)), falloff="gaussian",
                             brush_radius=(1.0, 4.0), mask_threshold=12)
        tex = walk_texture(params, 256, derive_rng(2, (i,)))
        assert np.array_equal(tex.support, np.abs(tex.delta) >= params.mask_threshold)
        assert tex.support.any()


def test_walk_locality_stays_near_the_start_box():
    params = make_params(n_steps=30, brush_radius=(1.0, 3.0))
    tex = walk_texture(params, 256, derive_rng(4, (0,)))
    ys, xs = np.nonzero(tex.support)
    reach = params.n_steps + params.brush_radius[1] + 1
    assert xs.min() >= 64 - reach and xs.max() < 192 + reach
    assert ys.min() >= 64 - reach and ys.max() < 192 + reach


def test_delta_saturates_at_eight_bit_magnitude():
    params = make_params(n_steps=300, momentum=0.0, turn_sigma=2.0,
                         intensity_delta=(120, 120), brush_radius=(3.0, 5.0))
    tex = walk_texture(params, 256, derive_rng(11, (0,)))
    assert np.abs(tex.delta).max() <= 255.0


def test_empty_support_raises_after_bounded_retries():
    params = make_params(intensity_delta=(5, 5), mask_threshold=50, falloff="gaussian")
    with pytest.raises(SynthesisError, match="empty support"):
        walk_texture(params, 256, derive_rng(1, (0,)))


def test_high_momentum_walks_are_elongated():
    hits = 0
    n_draws = 1000
    for i in range(n_draws):
        rng = derive_rng(5, (7, i))
        momentum = 0.9 + 0.09 * rng.random()
        tex = walk_texture(make_params(momentum=momentum, n_steps=400), 256, rng)
        hits += bbox_aspect(tex.support) > 2
    assert hits / n_draws >= 0.5


def test_momentum_raises_mean_eccentricity_on_paired_seeds():
    high, low = [], []
    for i in range(500):
        high.append(eccentricity(
            walk_texture(make_params(momentum=0.95, n_steps=400), 256, derive_rng(5, (8, i))).support))
        low.append(eccentricity(
            walk_texture(make_params(momentum=0.0, n_steps=400), 256, derive_rng(5, (8, i))).support))
    assert np.mean(high) > np.mean(low)


# -- sample_params ------------------------------------------------------------


def test_collapsed_ranges_reproduce_their_values():
    ranges = SynthesisRanges(
        n_steps=(17, 17), momentum=(0.4, 0.4), turn_sigma=(0.2, 0.2),
        brush_radius=(2.5, 2.5), intensity=(60, 60), polarity="bright",
        falloff="hard", mask_threshold=9, center_box=(0.25, 0.75),
    )
    params = sample_params(ranges, 256, derive_rng(3, (0,)))
    assert params.n_steps == 17
    assert params.momentum == 0.4
    assert params.turn_sigma == 0.2
    assert params.brush_radius == (2.5, 2.5)
    assert params.intensity_delta == (60, 60)
    assert params.mask_threshold == 9
    assert params.center_box == (64, 64, 192, 192)


def test_polarity_resolution():
    base = dict(n_steps=(5, 5), momentum=(0.1, 0.1), turn_sigma=(0.1, 0.1),
                brush_radius=(2.0, 2.0), intensity=(30, 90))
    dark = sample_params(SynthesisRanges(polarity="dark", **base), 256, derive_rng(0, (0,)))
    assert dark.intensity_delta == (-90, -30)
    bright = sample_params(SynthesisRanges(polarity="bright", **base), 256, derive_rng(0, (0,)))
    assert bright.intensity_delta == (30, 90)
    signs = set()
    for i in range(50):
        p = sample_params(SynthesisRanges(polarity="mixed", **base), 256, derive_rng(1, (i,)))
        signs.add(1 if p.intensity_delta[0] > 0 else -1)
    assert signs == {1, -1}


def test_pinhole_style_draws_give_compact_round_support():
    ranges = SynthesisRanges(n_steps=(2, 4), momentum=(0.0, 0.2), turn_sigma=(0.3, 0.6),
                             brush_radius=(2.0, 3.0), intensity=(90, 120), polarity="dark",
                             falloff="hard", mask_threshold=8)
    for i in range(50):
        rng = derive_rng(6, (i,))
        params = sample_params(ranges, 256, rng)
        assert params.n_steps <= 4
        tex = walk_texture(params, 256, rng)
        assert bbox_aspect(tex.support) <= 2.0
        assert tex.support.sum() <= 200


def test_params_validation():
    with pytest.raises(ValidationError):
        make_params(n_steps=0)
    with pytest.raises(ValidationError):
        make_params(momentum=1.0)
    with pytest.raises(ValidationError):
        make_params(mask_threshold=0)
    with pytest.raises(ValidationError):
        make_params(intensity_delta=(100, 300))


# -- apply_defect ------------------------------------------------------------


def test_zero_delta_leaves_patch_unchanged_and_mask_empty(flat_patch):
    tex = DefectTexture(delta=np.zeros((256, 256), np.float32),
                        support=np.zeros((256, 256), bool), threshold=8)
    out, mask = apply_defect(flat_patch, tex)
    assert np.array_equal(out.pixels, flat_patch.pixels)
    assert mask.empty


def test_saturated_pixel_is_clamped_and_masked():
    patch = Patch(pixels=np.full((256, 256), 240, np.uint8), modality="asm")
    delta = np.zeros((256, 256), np.float32)
    delta[10, 10] = 200.0
    support = delta != 0
    out, mask = apply_defect(patch, DefectTexture(delta=delta, support=support, threshold=8))
    assert out.pixels[10, 10] == 255
    assert mask.pixels[10, 10]
    assert mask.positive_pixel_count == 1


def test_mask_matches_pixel_diff_oracle(rng):
    for i in range(30):
        base = rng.integers(0, 256, size=(256, 256)).astype(np.uint8)
        patch = Patch(pixels=base, modality="lsm1")
        params = make_params(n_steps=int(rng.integers(1, 150)), falloff="gaussian",
                             polarity="mixed",
                             intensity_delta=(-90, 90) if i % 2 else (40, 120))
        tex = walk_texture(params, 256, derive_rng(3, (1, i)))
        out, mask = apply_defect(patch, tex)
        expected = oracles.pixel_diff_mask(base, out.pixels, tex.support)
        assert np.array_equal(mask.pixels, expected)


def test_dimension_mismatch_is_rejected(flat_patch):
    tex = DefectTexture(delta=np.zeros((512, 512), np.float32),
                        support=np.zeros((512, 512), bool), threshold=8)
    with pytest.raises(ValidationError, match="shape"):
        apply_defect(flat_patch, tex)


# -- synthesize ------------------------------------------------------------


def test_synthesize_returns_nonempty_mask_and_keeps_metadata():
    patch = Patch(pixels=np.full((256, 256), 100, np.uint8), modality="lsm2",
                  source="frame7.png", offset=(32, 48))
    defective, mask, params = synthesize(patch, SynthesisRanges(), derive_rng(0, (2, 5)))
    assert not mask.empty
    assert defective.source == "frame7.png"
    assert defective.offset == (32, 48)
    assert defective.modality == "lsm2"
    assert params.to_record()["texture_model"] == "walk-v1"


def test_synthesize_is_deterministic():
    patch = Patch(pixels=np.full((256, 256), 100, np.uint8), modality="asm")
    a = synthesize(patch, SynthesisRanges(), derive_rng(1, (2, 9)))
    b = synthesize(patch, SynthesisRanges(), derive_rng(1, (2, 9)))
    assert np.array_equal(a[0].pixels, b[0].pixels)
    assert np.array_equal(a[1].pixels, b[1].pixels)


def test_synthesize_fails_cleanly_when_blend_always_saturates():
    patch = Patch(pixels=np.full((256, 256), 255, np.uint8), modality="asm")
    bright_only = SynthesisRanges(polarity="bright")
    with pytest.raises(SynthesisError, match="attempts"):
        synthesize(patch, bright_only, derive_rng(0, (3,)))


def test_synthesize_recovers_via_retry_with_mixed_polarity():
    # white patch: bright draws wash out, dark draws succeed; retries find one
    patch = Patch(pixels=np.full((256, 256), 255, np.uint8), modality="asm")
    for i in range(8):
        defective, mask, params = synthesize(patch, SynthesisRanges(polarity="mixed"),
                                             derive_rng(0, (4, i)))
        assert not mask.empty
        assert params.intensity_delta[0] < 0
