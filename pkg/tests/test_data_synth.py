import json
import math
from collections import Counter

import numpy as np
import pytest
from PIL import Image
from hypothesis import given, settings, strategies as st

from symbiodiff.data_synth import (TEST_OFFSET, SynthSpec, augment_subject, benchmark_indices,
                                   dataset_checksum, draw_augment, gen_pair, generate_pairs, hflip,
                                   optical_distort, read_dataset, read_mask_file, rotate, validate_pair,
                                   weighted_sampler, write_dataset)

SPEC = SynthSpec()


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(category_weights=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        SynthSpec(category_weights=(1.2, -0.1, -0.1))
    with pytest.raises(ValueError):
        SynthSpec(mask_area_range=(0.3, 0.1))
    with pytest.raises(ValueError):
        SynthSpec(categories=("photo", "shape_logo", "tryon_patch"))


def test_pair_is_deterministic():
    a, b = gen_pair(SPEC, 17), gen_pair(SPEC, 17)
    assert a.scene.tobytes() == b.scene.tobytes()
    assert a.mask.tobytes() == b.mask.tobytes()
    assert a.subject.tobytes() == b.subject.tobytes()
    assert (a.category, a.bbox) == (b.category, b.bbox)
    c = gen_pair(SynthSpec(rng_seed=1), 17)
    assert c.scene.tobytes() != a.scene.tobytes()


def test_pair_layout():
    p = gen_pair(SPEC, 3)
    assert p.scene.shape == p.subject.shape == (64, 64, 3)
    assert p.scene.dtype == np.uint8 and p.mask.dtype == np.uint8
    x0, y0, x1, y1 = p.bbox
    assert all(v % SPEC.align == 0 for v in p.bbox)
    assert p.scene[y0:y1, x0:x1].std() > 0


def test_category_frequencies_thousand_samples():
    counts = Counter(p.category for p in generate_pairs(SPEC, range(1000)))
    for cat, w in zip(SPEC.categories, SPEC.category_weights):
        assert abs(counts[cat] / 1000 - w) <= 0.03


def test_validation_over_ten_thousand_samples():
    bad = [i for i in range(10_000) if validate_pair(SPEC, gen_pair(SPEC, i))]
    assert bad == []


def test_area_range_respected_for_other_specs():
    spec = SynthSpec(image_size=32, mask_area_range=(0.2, 0.4), rng_seed=5)
    for i in range(200):
        p = gen_pair(spec, i)
        assert 0.2 <= p.area_fraction <= 0.4
        assert validate_pair(spec, p) == []


def test_unsatisfiable_area_fails_after_retries():
    spec = SynthSpec(image_size=16, mask_area_range=(0.01, 0.02))
    with pytest.raises(RuntimeError):
        gen_pair(spec, 0)


def test_benchmark_split_is_disjoint():
    assert benchmark_indices(5)[0] == TEST_OFFSET
    assert set(benchmark_indices(100)).isdisjoint(range(TEST_OFFSET))


# -- augmentation -------------------------------------------------------------------------


def test_identity_augmentation_leaves_subject_unchanged():
    s = gen_pair(SPEC, 0).subject
    out = augment_subject(s, 123, flip_p=0, rotate_p=0, distort_p=0, sharpen_p=0)
    assert out.tobytes() == s.tobytes()
    assert draw_augment(123, flip_p=0, rotate_p=0, distort_p=0, sharpen_p=0).is_identity


def test_double_flip_is_identity():
    s = gen_pair(SPEC, 1).subject
    assert np.array_equal(hflip(hflip(s)), s)
    assert not np.array_equal(hflip(s), s)


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=200, deadline=None)
def test_drawn_angles_are_bounded(seed):
    p = draw_augment(seed)
    assert abs(p.angle) <= 15.0
    assert abs(p.distortion) <= 0.08


@pytest.mark.parametrize("angle", [-15.0, -7.0, 4.0, 15.0])
def test_rotation_moves_corners_within_bound(angle):
    size = 64
    img = np.zeros((size, size, 3), dtype=np.uint8)
    img[8:11, 8:11] = 255  # marker towards the top-left corner, still inside after rotation
    out = rotate(img, angle)
    ys, xs = np.nonzero(out[..., 0] > 64)
    moved = math.hypot(xs.mean() - 9, ys.mean() - 9)
    assert moved <= size * math.sqrt(2) * math.sin(math.radians(15)) + 1
    assert moved > 0


def test_optical_distortion_fixes_centre_and_zero_is_identity():
    s = gen_pair(SPEC, 2).subject
    assert np.array_equal(optical_distort(s, 0.0), s)
    out = optical_distort(s, 0.08)
    assert out.shape == s.shape and out.dtype == np.uint8


def test_augment_is_seeded():
    s = gen_pair(SPEC, 4).subject
    assert np.array_equal(augment_subject(s, 9), augment_subject(s, 9))


# -- sampler ------------------------------------------------------------------------------


def test_weighted_sampler_rates():
    cats = ["a"] * 50 + ["b"] * 30 + ["c"] * 20
    stream = weighted_sampler(cats, {"a": 0.7, "b": 0.2, "c": 0.1}, seed=0)
    draws = [cats[next(stream)] for _ in range(10_000)]
    counts = Counter(draws)
    for c, w in (("a", 0.7), ("b", 0.2), ("c", 0.1)):
        assert abs(counts[c] / 10_000 - w) <= 0.02


def test_weighted_sampler_round_robin_and_prefix():
    stream = weighted_sampler(["a"] * 5, {"a": 1.0}, seed=3)
    first = [next(stream) for _ in range(10)]
    assert sorted(first[:5]) == sorted(first[5:]) == list(range(5))
    again = weighted_sampler(["a"] * 5, {"a": 1.0}, seed=3)
    assert [next(again) for _ in range(10)] == first


def test_weighted_sampler_empty_category():
    with pytest.raises(ValueError):
        next(weighted_sampler(["a"], {"a": 0.5, "b": 0.5}, seed=0))


# -- storage ------------------------------------------------------------------------------


def test_dataset_roundtrip_and_checksum(tmp_path):
    spec = SynthSpec(image_size=32, rng_seed=1)
    write_dataset(tmp_path / "a", spec, range(6))
    write_dataset(tmp_path / "b", spec, range(6))
    assert dataset_checksum(tmp_path / "a") == dataset_checksum(tmp_path / "b")
    header = json.loads((tmp_path / "a" / "dataset.json").read_text())
    assert header["count"] == 6 and header["format"].startswith("symbiodiff-dataset/")
    pairs = read_dataset(tmp_path / "a")
    for p, q in zip(pairs, generate_pairs(spec, range(6))):
        assert np.array_equal(p.scene, q.scene) and np.array_equal(p.mask, q.mask)
        assert np.array_equal(p.subject, q.subject) and p.category == q.category
    first = json.loads((tmp_path / "a" / "manifest.jsonl").read_text().splitlines()[0])
    m = read_mask_file(tmp_path / "a" / first["mask"])
    assert m.sum() == (m == 1).sum()  # binary
    raw = np.asarray(Image.open(tmp_path / "a" / first["mask"]))
    assert set(np.unique(raw)) == {0, 255}
    assert np.array_equal(raw == 255, pairs[0].mask == 0)
