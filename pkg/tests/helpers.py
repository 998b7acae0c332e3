"""
Constructeurs de petits objets pour les tests
"""
import numpy as np

from modules.data_model import ImageTensor, Keypoint, KeypointAnnotation, MaskStack, Sample


def make_sample(name, width, height, keypoints, channels=3, seed=0, background=()):
    """Échantillon à image aléatoire, points-clés (classe, x, y)"""
    rng = np.random.default_rng(seed)
    image = ImageTensor(rng.random((height, width, channels)))
    return Sample(name, image, KeypointAnnotation(tuple(Keypoint(*k) for k in keypoints), background))


def random_stack(rng, classes=2, height=8, width=8, density=0.4):
    return MaskStack(rng.random((classes, height, width)) < density)


def brute_force_jaccard(gt_planes, pred_planes):
    """Jaccard par ensembles de pixels, sans numpy vectorisé"""
    truth, predicted = set(), set()
    for n, (g, p) in enumerate(zip(gt_planes, pred_planes)):
        for y in range(g.shape[0]):
            for x in range(g.shape[1]):
                if g[y, x]:
                    truth.add((n, y, x))
                if p[y, x]:
                    predicted.add((n, y, x))
    false_positives = predicted - truth
    if not truth:
        return 1.0 if not false_positives else 0.0
    return len(truth & predicted) / (len(truth) + len(false_positives))
