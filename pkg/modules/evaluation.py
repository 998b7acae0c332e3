"""
Évaluation: indice de Jaccard par classe (fond dérivé inclus) et moyenne
Statistiques agrégées sur tous les pixels du jeu de test
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from modules.binarization import binarize_supervised
from modules.classifier import LogisticSegmenter, PixelClassifier
from modules.data_model import BACKGROUND_NAME, LabelSpace, MaskStack, Sample
from utils.logger import logger
from utils.reports import log_table, write_table


@dataclass(frozen=True)
class JaccardReport:
    """Colonnes dans l'ordre des tableaux: Bck, classes; moyenne à part"""
    names: Tuple[str, ...]
    values: Tuple[float, ...]
    mean: float
    includes_background_in_mean: bool = True

    def value(self, name: str) -> float:
        return self.values[self.names.index(name)]


def _check_pools(gt: Sequence[MaskStack], pred: Sequence[MaskStack]):
    if len(gt) != len(pred):
        raise ValueError(f"{len(gt)} masques de vérité terrain pour {len(pred)} prédictions")
    for i, (g, p) in enumerate(zip(gt, pred)):
        if g.bits.shape != p.bits.shape:
            raise ValueError(f"Image {i}: dimensions {g.bits.shape} et {p.bits.shape} différentes")


def jaccard_planes(gt_planes: Sequence[np.ndarray], pred_planes: Sequence[np.ndarray]) -> float:
    """
    J = TP / (|y=1| + FP), compté sur tous les pixels du pool

    Conventions: |y=1| = 0 et FP = 0 -> 1; |y=1| = 0 et FP > 0 -> 0
    """
    tp = positives = fp = 0
    for g, p in zip(gt_planes, pred_planes):
        tp += int(np.count_nonzero(g & p))
        positives += int(np.count_nonzero(g))
        fp += int(np.count_nonzero(~g & p))
    if positives == 0:
        return 1.0 if fp == 0 else 0.0
    return tp / (positives + fp)


def jaccard(gt: Sequence[MaskStack], pred: Sequence[MaskStack], class_index: int) -> float:
    """
    Jaccard de la classe l, agrégé sur toutes les images

    Raises:
        ValueError: Dimensions différentes
    """
    _check_pools(gt, pred)
    return jaccard_planes([g.plane(class_index) for g in gt], [p.plane(class_index) for p in pred])


def background_mask(stack: MaskStack) -> np.ndarray:
    """Fond: pixels sans aucune affordance (plan bool H x W)"""
    return ~stack.bits.any(axis=0)


def jaccard_report(gt: Sequence[MaskStack], pred: Sequence[MaskStack], labels: LabelSpace,
                   include_background: bool = True) -> JaccardReport:
    """
    Rapport complet: Bck puis chaque classe, moyenne non pondérée

    Args:
        include_background: Bck compte dans la moyenne (L+1 entrées) ou non (L entrées)
    """
    _check_pools(gt, pred)
    bck = jaccard_planes([background_mask(g) for g in gt], [background_mask(p) for p in pred])
    per_class = [jaccard(gt, pred, l) for l in range(labels.count)]

    averaged = ([bck] if include_background else []) + per_class
    return JaccardReport(
        names=(BACKGROUND_NAME,) + labels.names,
        values=tuple([bck] + per_class),
        mean=float(np.mean(averaged)),
        includes_background_in_mean=include_background,
    )


def evaluate(samples: Sequence[Sample], ground_truth: Sequence[MaskStack], model,
             labels: LabelSpace, backend: PixelClassifier = None,
             include_background: bool = True, threads: int = 1) -> JaccardReport:
    """
    Prédit avec la règle du test (P >= 0.5) et compare à la vérité terrain

    Args:
        samples: Images de test
        ground_truth: Masques de vérité terrain alignés sur samples
        model: Modèle entraîné
        labels: Espace des classes
        backend: Classifieur (défaut: régression logistique)
        include_background: Bck inclus dans la moyenne
        threads: Prédictions concurrentes (réduction dans l'ordre des images)

    Returns:
        JaccardReport
    """
    if len(samples) != len(ground_truth):
        raise ValueError("Vérité terrain manquante pour une partie des images")
    backend = backend or LogisticSegmenter(getattr(model, 'feature_config', None))

    def predict_mask(sample):
        return binarize_supervised(backend.predict(model, sample.image)[1])

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        predictions = list(pool.map(predict_mask, samples))

    report = jaccard_report(ground_truth, predictions, labels, include_background)
    logger.info(f"📊 Jaccard moyen: {report.mean:.4f} sur {len(samples)} images")
    return report


def write_jaccard_table(rows: Sequence[Tuple[str, JaccardReport]], path) -> str:
    """
    Tableau au format des résultats: une ligne par configuration, classes en colonnes, Mean en dernier

    Args:
        rows: (nom de la ligne, rapport)
        path: Fichier TSV
    """
    if not rows:
        raise ValueError("Aucun rapport à écrire")
    header = ['run', *rows[0][1].names, 'Mean']
    table = [[name, *report.values, report.mean] for name, report in rows]
    log_table('Indice de Jaccard', header, table)
    return write_table(path, header, table)
