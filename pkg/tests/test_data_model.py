import numpy as np
import pytest
import yaml

from modules.data_model import (
    FormatError,
    ImageTensor,
    Keypoint,
    KeypointAnnotation,
    LabelSpace,
    ManifestError,
    ManifestRecord,
    MaskStack,
    ProbMapStack,
    load_ground_truth,
    load_manifest,
    load_samples,
    read_image,
    read_mask_stack,
    read_prob_map,
    write_image,
    write_manifest,
    write_mask_stack,
    write_prob_map,
)
from tests.helpers import random_stack
from utils.netpbm import read_netpbm_header


def _write_manifest_doc(path, doc):
    path.write_text(yaml.safe_dump(doc), encoding='utf-8')
    return path


@pytest.fixture
def image_10(tmp_path):
    path = tmp_path / 'img.ppm'
    write_image(ImageTensor(np.full((10, 10, 3), 0.5)), path)
    return path


# ============================================
# MANIFESTE
# ============================================

def test_empty_manifest(tmp_path):
    path = _write_manifest_doc(tmp_path / 'm.yaml', {'labels': ['grasp'], 'records': []})
    manifest = load_manifest(path)
    assert len(manifest) == 0
    assert manifest.labels.names == ('grasp',)


def test_minimal_manifest(tmp_path, image_10):
    path = _write_manifest_doc(tmp_path / 'm.yaml', {
        'labels': ['grasp'],
        'records': [{'image': 'img.ppm', 'keypoints': [{'class': 0, 'x': 5, 'y': 5}]}],
    })
    manifest = load_manifest(path)
    assert len(manifest) == 1
    assert manifest.records[0].keypoints.entries == (Keypoint(0, 5, 5),)


def test_keypoint_out_of_bounds_names_record(tmp_path, image_10):
    path = _write_manifest_doc(tmp_path / 'm.yaml', {
        'labels': ['grasp'],
        'records': [{'image': 'img.ppm', 'keypoints': [{'class': 0, 'x': 10, 'y': 5}]}],
    })
    with pytest.raises(ManifestError, match='record 0'):
        load_manifest(path)


@pytest.mark.parametrize('field, value', [
    ('x', 'abc'),
    ('x', 9.9),
    ('y', True),
    ('class', 0.5),
])
def test_non_integer_keypoint_names_record(tmp_path, image_10, field, value):
    bad = {'class': 0, 'x': 5, 'y': 5, field: value}
    path = _write_manifest_doc(tmp_path / 'm.yaml', {
        'labels': ['grasp'],
        'records': [
            {'image': 'img.ppm', 'keypoints': [{'class': 0, 'x': 1, 'y': 1}]},
            {'image': 'img.ppm', 'keypoints': [bad]},
        ],
    })
    with pytest.raises(ManifestError, match='record 1'):
        load_manifest(path)


def test_fractional_background_keypoint_names_record(tmp_path, image_10):
    path = _write_manifest_doc(tmp_path / 'm.yaml', {
        'labels': ['grasp'],
        'records': [{'image': 'img.ppm', 'background_keypoints': [{'x': 1.5, 'y': 2}]}],
    })
    with pytest.raises(ManifestError, match='record 0'):
        load_manifest(path)


def test_missing_manifest(tmp_path):
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / 'absent.yaml')


def test_malformed_record(tmp_path, image_10):
    path = _write_manifest_doc(tmp_path / 'm.yaml', {
        'labels': ['grasp'],
        'records': [{'image': 'img.ppm'}, {'keypoints': []}],
    })
    with pytest.raises(ManifestError, match='record 1'):
        load_manifest(path)


def test_unknown_record_field(tmp_path, image_10):
    path = _write_manifest_doc(tmp_path / 'm.yaml', {
        'labels': ['grasp'],
        'records': [{'image': 'img.ppm', 'masks': []}],
    })
    with pytest.raises(ManifestError, match='record 0'):
        load_manifest(path)


def test_class_given_by_name(tmp_path, image_10):
    path = _write_manifest_doc(tmp_path / 'm.yaml', {
        'labels': ['grasp', 'cut'],
        'records': [{'image': 'img.ppm', 'keypoints': [{'class': 'cut', 'x': 1, 'y': 2}]}],
    })
    assert load_manifest(path).records[0].keypoints.entries == (Keypoint(1, 1, 2),)


def test_ground_truth_dimension_mismatch(tmp_path, image_10):
    write_mask_stack(MaskStack.zeros(1, 4, 4), tmp_path, 'small')
    path = _write_manifest_doc(tmp_path / 'm.yaml', {
        'labels': ['grasp'],
        'records': [{'image': 'img.ppm', 'gt_masks': ['small.class0.pgm']}],
    })
    with pytest.raises(ManifestError, match='record 0'):
        load_manifest(path)


def test_manifest_roundtrip_preserves_order(tmp_path):
    labels = LabelSpace(('grasp', 'cut'))
    records = []
    for n in range(3):
        image_path = tmp_path / 'images' / f'{n}.ppm'
        write_image(ImageTensor(np.full((6, 8, 3), n / 4)), image_path)
        gt = MaskStack(np.zeros((2, 6, 8), dtype=bool))
        gt_paths = write_mask_stack(gt, tmp_path / 'gt', str(n))
        keypoints = KeypointAnnotation((Keypoint(n % 2, n, 1),), ((7, 5),))
        records.append(ManifestRecord(image_path, keypoints, tuple(gt_paths)))

    manifest = load_manifest(write_manifest(tmp_path / 'manifest.yaml', labels, records))

    assert [r.name for r in manifest.records] == ['0', '1', '2']
    assert manifest.records[2].keypoints.entries == (Keypoint(0, 2, 1),)
    assert manifest.records[0].keypoints.background == ((7, 5),)
    assert manifest.has_ground_truth
    assert len(load_ground_truth(manifest)) == 3
    samples = load_samples(manifest, threads=2)
    assert [s.name for s in samples] == ['0', '1', '2']


def test_ground_truth_missing(tmp_path, image_10):
    path = _write_manifest_doc(tmp_path / 'm.yaml', {
        'labels': ['grasp'], 'records': [{'image': 'img.ppm'}],
    })
    with pytest.raises(ManifestError, match='record 0'):
        load_ground_truth(load_manifest(path))


# ============================================
# TYPES
# ============================================

def test_label_space_rejects_duplicates_and_background():
    with pytest.raises(ValueError):
        LabelSpace(('grasp', 'grasp'))
    with pytest.raises(ValueError):
        LabelSpace(('grasp', 'Bck'))
    with pytest.raises(ValueError):
        LabelSpace(())


def test_label_space_mapping():
    labels = LabelSpace(('grasp', 'cut', 'pour'))
    assert labels.count == 3
    assert all(labels.index(labels.name(i)) == i for i in range(3))
    with pytest.raises(KeyError):
        labels.index('open')


def test_mask_stack_rejects_non_binary():
    with pytest.raises(ValueError):
        MaskStack(np.full((1, 2, 2), 2))


def test_prob_map_rejects_out_of_range():
    with pytest.raises(ValueError):
        ProbMapStack(np.full((1, 2, 2), 1.5))


# ============================================
# FICHIERS
# ============================================

def test_prob_map_roundtrip(tmp_path):
    probs = ProbMapStack(np.array([[[0.0, 0.25], [0.5, 1.0]]]))
    write_prob_map(probs, tmp_path / 'p.fpm')
    np.testing.assert_array_equal(read_prob_map(tmp_path / 'p.fpm').values, probs.values)


@pytest.mark.parametrize('values', [
    np.array([[[0.1, 0.3], [0.7, 0.9]]]),
    np.random.default_rng(5).random((3, 4, 5)),
])
def test_prob_map_roundtrip_arbitrary_values(tmp_path, values):
    probs = ProbMapStack(values)
    assert probs.values.dtype == np.float32
    write_prob_map(probs, tmp_path / 'p.fpm')
    np.testing.assert_array_equal(read_prob_map(tmp_path / 'p.fpm').values, probs.values)


def test_prob_map_layout_is_class_major(tmp_path):
    values = np.arange(12, dtype=np.float32).reshape(2, 2, 3) / 16
    write_prob_map(ProbMapStack(values), tmp_path / 'p.fpm')
    data = (tmp_path / 'p.fpm').read_bytes()
    assert data.startswith(b'FPM1\n3 2 2\n')
    payload = np.frombuffer(data[len(b'FPM1\n3 2 2\n'):], dtype='<f4')
    np.testing.assert_array_equal(payload, values.reshape(-1))


def test_prob_map_wrong_magic(tmp_path):
    (tmp_path / 'p.fpm').write_bytes(b'FPM2\n1 1 1\n' + np.zeros(1, '<f4').tobytes())
    with pytest.raises(FormatError):
        read_prob_map(tmp_path / 'p.fpm')


def test_prob_map_value_outside_unit_interval(tmp_path):
    (tmp_path / 'p.fpm').write_bytes(b'FPM1\n1 1 1\n' + np.array([1.5], '<f4').tobytes())
    with pytest.raises(FormatError):
        read_prob_map(tmp_path / 'p.fpm')


def test_prob_map_truncated(tmp_path):
    (tmp_path / 'p.fpm').write_bytes(b'FPM1\n2 2 1\n' + np.zeros(3, '<f4').tobytes())
    with pytest.raises(FormatError):
        read_prob_map(tmp_path / 'p.fpm')


def test_mask_stack_roundtrip(tmp_path):
    stack = random_stack(np.random.default_rng(0), classes=3, height=5, width=7)
    paths = write_mask_stack(stack, tmp_path, 'rec')
    assert [p.name for p in paths] == ['rec.class0.pgm', 'rec.class1.pgm', 'rec.class2.pgm']
    assert read_mask_stack(tmp_path, 'rec', (7, 5, 3)) == stack


def test_mask_stack_dimension_mismatch(tmp_path):
    write_mask_stack(MaskStack.zeros(1, 5, 7), tmp_path, 'rec')
    with pytest.raises(FormatError):
        read_mask_stack(tmp_path, 'rec', (5, 7, 1))


def test_mask_byte_other_than_0_or_255(tmp_path):
    (tmp_path / 'rec.class0.pgm').write_bytes(b'P5\n2 1\n255\n' + bytes([0, 128]))
    with pytest.raises(FormatError):
        read_mask_stack(tmp_path, 'rec', (2, 1, 1))


def test_image_roundtrip_and_normalization(tmp_path):
    pixels = np.random.default_rng(1).integers(0, 256, size=(4, 6, 3), dtype=np.uint8)
    image = ImageTensor.from_uint8(pixels)
    write_image(image, tmp_path / 'i.ppm')
    loaded = read_image(tmp_path / 'i.ppm')
    assert (loaded.width, loaded.height, loaded.channels) == (6, 4, 3)
    np.testing.assert_array_equal(loaded.to_uint8(), pixels)
    np.testing.assert_array_equal(loaded.data, pixels / 255.0)


def test_pgm_with_header_comment_is_single_channel(tmp_path):
    (tmp_path / 'g.pgm').write_bytes(b'P5\n# commentaire\n2 2\n255\n' + bytes([0, 51, 102, 255]))
    image = read_image(tmp_path / 'g.pgm')
    assert image.channels == 1
    np.testing.assert_allclose(image.data[:, :, 0], [[0.0, 0.2], [0.4, 1.0]])


def test_long_header_comments_pass_manifest_validation(tmp_path):
    comments = b''.join(b'# ' + b'x' * 90 + b'\n' for _ in range(12))
    (tmp_path / 'c.ppm').write_bytes(b'P6\n' + comments + b' 3 2\n255\n' + bytes(18))
    assert read_netpbm_header(tmp_path / 'c.ppm') == (3, 2, 3)
    path = _write_manifest_doc(tmp_path / 'm.yaml', {
        'labels': ['grasp'],
        'records': [{'image': 'c.ppm', 'keypoints': [{'class': 0, 'x': 2, 'y': 1}]}],
    })
    assert len(load_manifest(path)) == 1
    assert read_image(tmp_path / 'c.ppm').width == 3


def test_truncated_header(tmp_path):
    (tmp_path / 't.pgm').write_bytes(b'P5\n# ' + b'y' * 700)
    with pytest.raises(FormatError, match='tronqué'):
        read_netpbm_header(tmp_path / 't.pgm')


def test_image_wrong_magic(tmp_path):
    (tmp_path / 'x.ppm').write_bytes(b'P3\n1 1\n255\n0 0 0\n')
    with pytest.raises(FormatError):
        read_image(tmp_path / 'x.ppm')
