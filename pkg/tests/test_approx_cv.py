import math

import numpy as np
import pytest

import modules.approx_cv as approx_cv
from modules.approx_cv import (
    ApproxJaccardEstimate,
    ConditionalEstimates,
    IndeterminateEstimate,
    SweepResult,
    SweepRow,
    approx_jaccard,
    estimate_conditionals,
    negative_keypoints,
    pooled_estimate,
    sigma_sweep,
    write_sweep_report,
)
from modules.data_model import Keypoint, KeypointAnnotation, LabelSpace, MaskStack
from modules.em_trainer import EmConfig
from modules.evaluation import JaccardReport
from tests.helpers import brute_force_jaccard


def _estimates(tpr, fpr, prior):
    return ConditionalEstimates(tpr, fpr, prior * tpr + (1 - prior) * fpr, prior)


# ============================================
# ESTIMATEURS
# ============================================

def test_prior_from_rates():
    est = ConditionalEstimates.from_rates(0.8, 0.1, 0.24)
    assert est.prior == pytest.approx(0.2)
    assert not est.prior_clamped

    est = ConditionalEstimates.from_rates(1.0, 0.0, 0.4)
    assert est.prior == pytest.approx(0.4)


def test_prior_is_clamped():
    est = ConditionalEstimates.from_rates(0.5, 0.2, 0.9)
    assert est.prior == 1.0
    assert est.prior_clamped
    assert ConditionalEstimates.from_rates(0.5, 0.2, 0.1).prior == 0.0


def test_equal_rates_are_indeterminate():
    with pytest.raises(IndeterminateEstimate):
        ConditionalEstimates.from_rates(0.3, 0.3, 0.5, class_index=2)


@pytest.mark.parametrize('tpr, fpr, prior, expected', [
    (1.0, 0.0, 0.3, 1.0),
    (1.0, 0.5, 0.5, 2 / 3),
    (0.0, 0.4, 0.5, 0.0),
    (0.7, 0.0, 0.0, 0.0),
])
def test_approx_jaccard_examples(tpr, fpr, prior, expected):
    assert approx_jaccard(_estimates(tpr, fpr, prior)) == pytest.approx(expected)


def test_approx_jaccard_is_monotone():
    grid = np.linspace(0.05, 0.95, 10)
    for prior in (0.1, 0.5, 0.9):
        for fpr in grid:
            values = [approx_jaccard(_estimates(t, fpr, prior)) for t in grid]
            assert all(a <= b for a, b in zip(values, values[1:]))
        for tpr in grid:
            values = [approx_jaccard(_estimates(tpr, f, prior)) for f in grid]
            assert all(a >= b for a, b in zip(values, values[1:]))


def test_exact_when_every_pixel_is_a_keypoint():
    """Avec tous les pixels annotés, J_approx coïncide avec le vrai Jaccard"""
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(1000):
        gt = rng.random((8, 8)) < rng.uniform(0.1, 0.9)
        pred = rng.random((8, 8)) < rng.uniform(0.1, 0.9)
        if gt.all() or not gt.any():
            continue
        ys, xs = np.nonzero(gt)
        bys, bxs = np.nonzero(~gt)
        annotation = KeypointAnnotation(
            tuple(Keypoint(0, int(x), int(y)) for x, y in zip(xs, ys)),
            tuple((int(x), int(y)) for x, y in zip(bxs, bys)),
        )
        try:
            est = estimate_conditionals([MaskStack(pred[None])], [annotation], 0)
        except IndeterminateEstimate:
            continue
        assert approx_jaccard(est) == pytest.approx(brute_force_jaccard([gt], [pred]), abs=1e-12)
        checked += 1
    assert checked > 900


# ============================================
# POOL NÉGATIF
# ============================================

def test_negative_pool_uses_images_without_the_class():
    keypoints = [
        KeypointAnnotation((Keypoint(0, 1, 1), Keypoint(1, 2, 2))),
        KeypointAnnotation((Keypoint(1, 3, 3),)),
        KeypointAnnotation((Keypoint(0, 0, 0),), ((4, 4),)),
    ]
    assert negative_keypoints(keypoints, 0) == [(1, 3, 3), (2, 4, 4)]
    assert negative_keypoints(keypoints, 1) == [(2, 0, 0), (2, 4, 4)]


def test_background_keypoints_alone_make_class_determinate():
    annotation = KeypointAnnotation((Keypoint(0, 0, 0),), ((3, 0),))
    pred = MaskStack(np.array([[[True, True, False, False]]]))
    est = estimate_conditionals([pred], [annotation], 0)
    assert (est.tpr, est.fpr, est.pred_rate) == (1.0, 0.0, 0.5)


def test_missing_pools_are_indeterminate():
    only_positive = [KeypointAnnotation((Keypoint(0, 0, 0),))]
    masks = [MaskStack.zeros(1, 2, 2)]
    with pytest.raises(IndeterminateEstimate, match='négatif'):
        estimate_conditionals(masks, only_positive, 0)
    with pytest.raises(IndeterminateEstimate, match='positif'):
        estimate_conditionals(masks, [KeypointAnnotation()], 0)


def test_pooled_estimate_excludes_indeterminate_classes():
    keypoints = [KeypointAnnotation((Keypoint(0, 0, 0),), ((1, 1),))]
    masks = [MaskStack(np.array([[[True, False], [False, False]], [[False] * 2] * 2]))]
    estimate = pooled_estimate(masks, keypoints, 2)
    assert estimate.per_class[1] is None
    assert estimate.excluded == (1,)
    assert estimate.mean == pytest.approx(estimate.per_class[0])

    nothing = pooled_estimate(masks, [KeypointAnnotation()], 2)
    assert nothing.mean == -math.inf


# ============================================
# BALAYAGE DE σ
# ============================================

def _fake_sweep(monkeypatch, scores):
    """run_em factice: le « résultat » est le σ; l'estimation vient de `scores`"""
    monkeypatch.setattr(approx_cv, 'run_em',
                        lambda samples, labels, config, **kw: config.init.sigma_fraction)
    monkeypatch.setattr(approx_cv, 'cross_validated_estimate',
                        lambda sigma, count: ApproxJaccardEstimate((scores[sigma],) * count,
                                                                   scores[sigma]))


def test_sweep_picks_best_and_breaks_ties_toward_smaller_sigma(monkeypatch):
    _fake_sweep(monkeypatch, {0.03: 0.5, 0.06: 0.7, 0.09: 0.7})
    result = sigma_sweep([], LabelSpace(('grasp',)), [0.09, 0.03, 0.06], EmConfig())
    assert [r.sigma_fraction for r in result.rows] == [0.09, 0.03, 0.06]
    assert result.best_sigma == 0.06
    assert result.best_test_sigma is None


def test_sweep_all_indeterminate_falls_back_to_smallest_sigma(monkeypatch):
    _fake_sweep(monkeypatch, {0.03: -math.inf, 0.06: -math.inf})
    monkeypatch.setattr(approx_cv, 'cross_validated_estimate',
                        lambda sigma, count: ApproxJaccardEstimate((None,) * count, -math.inf))
    result = sigma_sweep([], LabelSpace(('grasp',)), [0.06, 0.03], EmConfig())
    assert result.best_sigma == 0.03


def test_sweep_rejects_empty_grid():
    with pytest.raises(ValueError):
        sigma_sweep([], LabelSpace(('grasp',)), [], EmConfig())


def _report(mean):
    return JaccardReport(('Bck', 'grasp'), (mean, mean), mean)


def test_best_test_sigma_and_report(tmp_path):
    labels = LabelSpace(('grasp',))
    rows = (
        SweepRow(0.03, ApproxJaccardEstimate((0.4,), 0.4), _report(0.6)),
        SweepRow(0.06, ApproxJaccardEstimate((0.5,), 0.5), _report(0.7)),
        SweepRow(0.09, ApproxJaccardEstimate((None,), -math.inf), _report(0.7)),
    )
    result = SweepResult(rows, best_sigma=0.06)
    assert result.best_test_sigma == 0.06

    path = write_sweep_report(result, labels, tmp_path / 'sweep.tsv')
    lines = open(path, encoding='utf-8').read().splitlines()
    assert lines[0].split('\t') == ['sigma', 'approx_grasp', 'approx_mean', 'excluded',
                                    'test_Bck', 'test_grasp', 'test_mean']
    assert lines[1].split('\t')[:4] == ['0.03w', '0.400000', '0.400000', '-']
    assert lines[3].split('\t')[1:4] == ['NA', '-inf', 'grasp']
    assert lines[4:] == ['# winner_approx sigma=0.06w', '# winner_test sigma=0.06w']
