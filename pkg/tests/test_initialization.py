import numpy as np
import pytest

from modules.data_model import ImageTensor, Keypoint, KeypointAnnotation, LabelSpace
from modules.initialization import InitConfig, init_masks_from_keypoints


LABELS = LabelSpace(('grasp', 'cut', 'pour'))


def _image(width=100, height=100):
    return ImageTensor(np.zeros((height, width, 1)))


def _lattice_count(cx, cy, sigma, width, height):
    """Oracle: parcours exhaustif des pixels entiers à distance <= sigma"""
    count = 0
    for y in range(height):
        for x in range(width):
            if (x - cx) ** 2 + (y - cy) ** 2 <= sigma * sigma:
                count += 1
    return count


def _init(keypoints, sigma_fraction, width=100, height=100, background=()):
    annotation = KeypointAnnotation(tuple(Keypoint(*k) for k in keypoints), background)
    return init_masks_from_keypoints(_image(width, height), annotation, LABELS,
                                     InitConfig(sigma_fraction))


def test_no_keypoints_gives_empty_stack():
    mask = _init([], 0.06)
    assert mask.bits.shape == (3, 100, 100)
    assert not mask.bits.any()


def test_interior_disk_sigma_3():
    mask = _init([(0, 50, 50)], 0.03)
    assert int(mask.plane(0).sum()) == 29
    assert not mask.plane(1).any() and not mask.plane(2).any()


def test_corner_disk_is_clipped_quarter():
    mask = _init([(0, 0, 0)], 0.03)
    assert int(mask.plane(0).sum()) == 11


@pytest.mark.parametrize('sigma', range(1, 11))
@pytest.mark.parametrize('center', [(50, 50), (0, 37), (99, 0), (0, 0), (99, 99)])
def test_disk_matches_lattice_oracle(sigma, center):
    fraction = sigma / 100
    mask = _init([(1, *center)], fraction)
    expected = _lattice_count(*center, InitConfig(fraction).sigma(100), 100, 100)
    assert int(mask.plane(1).sum()) == expected


def test_sigma_uses_image_width_not_height():
    mask = _init([(0, 10, 10)], 0.1, width=20, height=60)
    assert int(mask.plane(0).sum()) == _lattice_count(10, 10, 2.0, 20, 60)


def test_background_keypoints_are_not_painted():
    mask = _init([], 0.1, background=((5, 5),))
    assert not mask.bits.any()


def test_monotone_in_sigma_and_union_property():
    rng = np.random.default_rng(7)
    for _ in range(20):
        points = [(int(rng.integers(3)), int(rng.integers(40)), int(rng.integers(30)))
                  for _ in range(rng.integers(1, 6))]
        small = _init(points, 0.05, width=40, height=30)
        large = _init(points, 0.15, width=40, height=30)
        assert not (small.bits & ~large.bits).any()

        union = np.zeros_like(large.bits)
        for p in points:
            union |= _init([p], 0.15, width=40, height=30).bits
        np.testing.assert_array_equal(union, large.bits)

        for cls, x, y in points:
            assert small.bits[cls, y, x]


def test_classes_are_independent():
    mask = _init([(0, 20, 20), (2, 22, 20)], 0.05, width=40, height=40)
    assert mask.bits[0, 20, 21] and mask.bits[2, 20, 21]
    assert not mask.plane(1).any()


def test_invalid_sigma_fraction():
    with pytest.raises(ValueError):
        InitConfig(0.0)
    with pytest.raises(ValueError):
        InitConfig(1.5)
