import numpy as np
import pytest

from modules.data_model import LabelSpace, MaskStack, load_ground_truth, load_manifest, load_samples
from modules.synth import (
    BACKGROUND_GRAY,
    SynthConfig,
    benchmark_config,
    export_dataset,
    generate,
    render,
    resample_keypoints,
    sample_keypoints,
)
from utils.seeding import make_rng


def test_full_overlap_gives_identical_planes():
    cfg = SynthConfig(image_size=24, class_count=2, overlap_probability=1.0, rng_seed=1)
    for s in generate(cfg, 5):
        np.testing.assert_array_equal(s.ground_truth.plane(0), s.ground_truth.plane(1))


def test_color_determines_label_set_without_noise():
    cfg = SynthConfig(image_size=32, class_count=3, noise=0.0, overlap_probability=0.5, rng_seed=2)
    colors = {}
    for s in generate(cfg, 10):
        pixels = s.image.to_uint8()
        for y, x in zip(*np.nonzero(s.ground_truth.bits.any(axis=0))):
            label_set = tuple(np.nonzero(s.ground_truth.bits[:, y, x])[0])
            color = tuple(pixels[y, x])
            assert colors.setdefault(label_set, color) == color


def test_complementary_overlap_stays_away_from_background():
    cfg = SynthConfig(image_size=32, class_count=2, noise=0.0, overlap_probability=0.5, rng_seed=6)
    gaps = []
    for s in generate(cfg, 10):
        pixels = s.image.to_uint8().reshape(-1, 3).astype(int)
        bits = s.ground_truth.bits.reshape(2, -1)
        background = pixels[~bits.any(axis=0)]
        overlap = pixels[bits.all(axis=0)]
        if len(overlap) and len(background):
            gaps.append(np.abs(overlap[:, None, :] - background[None, :, :]).max(axis=2).min())
    assert gaps
    assert min(gaps) >= 30


def test_contrast_pulls_shapes_toward_background_gray():
    vivid = SynthConfig(image_size=24, noise=0.0, rng_seed=1)
    faded = SynthConfig(image_size=24, noise=0.0, contrast_range=(0.5, 0.5), rng_seed=1)
    image_a, gt_a = render(vivid, make_rng(1, 'synth', 0))
    image_b, gt_b = render(faded, make_rng(1, 'synth', 0))
    assert gt_a == gt_b

    gray = BACKGROUND_GRAY * 255
    a = image_a.to_uint8().astype(float)
    b = image_b.to_uint8().astype(float)
    shapes = gt_a.bits.any(axis=0)
    np.testing.assert_array_equal(a[~shapes], b[~shapes])
    assert np.abs(2 * (b[shapes] - gray) - (a[shapes] - gray)).max() <= 2.0


def test_generation_is_deterministic():
    cfg = SynthConfig(image_size=20, rng_seed=7)
    first, second = generate(cfg, 3), generate(cfg, 3)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.image.data, b.image.data)
        assert a.ground_truth == b.ground_truth
        assert a.keypoints == b.keypoints
    other = generate(SynthConfig(image_size=20, rng_seed=8), 3)
    assert any(not np.array_equal(a.image.data, b.image.data) for a, b in zip(first, other))


def test_offset_gives_distinct_test_images():
    cfg = SynthConfig(image_size=20, rng_seed=0)
    train, test = generate(cfg, 2), generate(cfg, 2, offset=100_000)
    assert [s.name for s in test] == ['100000', '100001']
    assert not np.array_equal(train[0].image.data, test[0].image.data)


def test_one_keypoint_per_present_class():
    for s in generate(SynthConfig(image_size=24, rng_seed=4), 8):
        present = {l for l in range(s.ground_truth.classes) if s.ground_truth.plane(l).any()}
        assert s.keypoints.classes_present() == present
        for l in present:
            assert len(s.keypoints.for_class(l)) == 1
        for k in s.keypoints.entries:
            assert s.ground_truth.bits[k.class_index, k.y, k.x]


def test_small_region_returns_all_pixels_and_reports_shortfall():
    bits = np.zeros((2, 4, 4), dtype=bool)
    bits[0, 1, 1:4] = True
    keypoints, shortfalls = sample_keypoints(MaskStack(bits), 5, seed=0)
    assert sorted((k.x, k.y) for k in keypoints.entries) == [(1, 1), (2, 1), (3, 1)]
    assert shortfalls == {0: 2}


def test_background_keypoints_lie_outside_every_region():
    cfg = SynthConfig(image_size=24, background_keypoints=4, keypoints_per_class=3, rng_seed=9)
    for s in generate(cfg, 4):
        assert len(s.keypoints.background) == 4
        for x, y in s.keypoints.background:
            assert not s.ground_truth.bits[:, y, x].any()


def test_benchmark_region_sizes_vary_strongly():
    cfg = benchmark_config()
    assert cfg.contrast_range[1] >= 2 * cfg.contrast_range[0]
    areas = [int(s.ground_truth.plane(0).sum()) for s in generate(cfg, 60)]
    present = [a for a in areas if a > 0]
    assert max(present) >= 4 * min(present)


def test_resample_keypoints_changes_count_only():
    dataset = generate(SynthConfig(image_size=24, rng_seed=5), 4)
    samples = [s.as_sample() for s in dataset]
    resampled = resample_keypoints(samples, [s.ground_truth for s in dataset], 3, seed=0)
    for before, after, s in zip(samples, resampled, dataset):
        assert after.image is before.image
        assert after.keypoints.classes_present() == before.keypoints.classes_present()
        for l in after.keypoints.classes_present():
            assert len(after.keypoints.for_class(l)) == min(3, int(s.ground_truth.plane(l).sum()))
    with pytest.raises(ValueError):
        resample_keypoints(samples, [], 3, seed=0)


def test_export_roundtrip_and_identical_bytes(tmp_path):
    cfg = SynthConfig(image_size=16, class_count=2, rng_seed=3)
    dataset = generate(cfg, 3)
    first = export_dataset(dataset, cfg.labels(), tmp_path / 'a')
    second = export_dataset(generate(cfg, 3), cfg.labels(), tmp_path / 'b')

    files_a = sorted(p.relative_to(tmp_path / 'a') for p in (tmp_path / 'a').rglob('*') if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / 'b') for p in (tmp_path / 'b').rglob('*') if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / 'a' / rel).read_bytes() == (tmp_path / 'b' / rel).read_bytes()

    manifest = load_manifest(first)
    assert manifest.labels == LabelSpace(('grasp', 'cut'))
    samples = load_samples(manifest)
    assert [s.keypoints for s in samples] == [s.keypoints for s in dataset]
    assert load_ground_truth(manifest) == [s.ground_truth for s in dataset]
    assert second.name == 'manifest.yaml'


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(class_count=1)
    with pytest.raises(ValueError):
        SynthConfig(image_size=8)
    with pytest.raises(ValueError):
        SynthConfig(shape_kinds=('triangle',))
    with pytest.raises(ValueError):
        SynthConfig(class_count=2, class_colors=((1, 0, 0),))
    with pytest.raises(ValueError):
        SynthConfig(overlap_probability=1.5)
    with pytest.raises(ValueError):
        SynthConfig(contrast_range=(0.6, 0.4))
    with pytest.raises(ValueError):
        SynthConfig(contrast_range=(0.0, 1.0))
