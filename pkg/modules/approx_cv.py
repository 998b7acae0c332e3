"""
Validation croisée approchée: indice de Jaccard estimé à partir des points-clés seuls
Sert à choisir σ sans masque de vérité terrain
"""
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from modules.classifier import PixelClassifier
from modules.data_model import KeypointAnnotation, LabelSpace, MaskStack, Sample
from modules.em_trainer import EmConfig, EmResult, run_em
from modules.evaluation import JaccardReport, evaluate
from modules.initialization import InitConfig
from utils.logger import logger
from utils.reports import log_table, write_table


class IndeterminateEstimate(ValueError):
    """Estimateur dégénéré pour une classe (tpr = fpr, ou pool de points-clés vide)"""

    def __init__(self, class_index: Optional[int], reason: str):
        self.class_index = class_index
        self.reason = reason
        super().__init__(f"classe {class_index}: {reason}")


# ============================================
# ESTIMATIONS CONDITIONNELLES
# ============================================

@dataclass(frozen=True)
class ConditionalEstimates:
    """
    tpr = P(ŷ=1 | y=1), fpr = P(ŷ=1 | y=0), pred_rate = P(ŷ=1), prior = P(y=1)
    """
    tpr: float
    fpr: float
    pred_rate: float
    prior: float
    prior_clamped: bool = False

    @classmethod
    def from_rates(cls, tpr: float, fpr: float, pred_rate: float,
                   class_index: Optional[int] = None) -> 'ConditionalEstimates':
        """
        P(y=1) = (P(ŷ=1) - fpr) / (tpr - fpr), borné à [0, 1]

        Raises:
            IndeterminateEstimate: tpr = fpr
        """
        if tpr == fpr:
            raise IndeterminateEstimate(class_index, f"tpr = fpr = {tpr}")
        raw = (pred_rate - fpr) / (tpr - fpr)
        prior = min(1.0, max(0.0, raw))
        clamped = prior != raw
        if clamped:
            logger.warning(f"⚠️ Classe {class_index}: prior {raw:.4f} borné à {prior:.1f}")
        return cls(tpr, fpr, pred_rate, prior, clamped)


def negative_keypoints(keypoints: Sequence[KeypointAnnotation],
                       class_index: int) -> List[Tuple[int, int, int]]:
    """
    Pool négatif de la classe l: points-clés d'une autre classe situés dans
    des images sans point-clé de l, plus tous les points-clés de fond

    Returns:
        Liste de (index d'image, x, y)
    """
    pool = []
    for i, annotation in enumerate(keypoints):
        if class_index not in annotation.classes_present():
            pool.extend((i, k.x, k.y) for k in annotation.entries)
        pool.extend((i, x, y) for x, y in annotation.background)
    return pool


def estimate_conditionals(predicted_masks: Sequence[MaskStack],
                          keypoints: Sequence[KeypointAnnotation],
                          class_index: int) -> ConditionalEstimates:
    """
    Estime tpr, fpr et pred_rate sur un pool de validation

    Args:
        predicted_masks: Masques prédits des images du pool
        keypoints: Points-clés des mêmes images
        class_index: Classe l

    Returns:
        ConditionalEstimates

    Raises:
        IndeterminateEstimate: Pas de point-clé positif/négatif, ou tpr = fpr
    """
    if len(predicted_masks) != len(keypoints):
        raise ValueError(f"{len(predicted_masks)} masques pour {len(keypoints)} annotations")

    positives = [(i, k.x, k.y) for i, a in enumerate(keypoints) for k in a.for_class(class_index)]
    negatives = negative_keypoints(keypoints, class_index)
    if not positives:
        raise IndeterminateEstimate(class_index, "aucun point-clé positif")
    if not negatives:
        raise IndeterminateEstimate(class_index, "aucun point-clé négatif")

    hits = sum(bool(predicted_masks[i].bits[class_index, y, x]) for i, x, y in positives)
    false_hits = sum(bool(predicted_masks[i].bits[class_index, y, x]) for i, x, y in negatives)

    predicted = sum(int(m.plane(class_index).sum()) for m in predicted_masks)
    total = sum(m.width * m.height for m in predicted_masks)

    return ConditionalEstimates.from_rates(
        hits / len(positives), false_hits / len(negatives), predicted / total, class_index
    )


def approx_jaccard(est: ConditionalEstimates) -> float:
    """
    J_approx = tpr * prior / (prior + fpr * (1 - prior)), 0 si le dénominateur est nul
    """
    denominator = est.prior + est.fpr * (1.0 - est.prior)
    if denominator <= 0.0:
        return 0.0
    return min(1.0, max(0.0, est.tpr * est.prior / denominator))


# ============================================
# AGRÉGATION PAR FOLD
# ============================================

@dataclass(frozen=True)
class ApproxJaccardEstimate:
    """J_approx par classe (None = indéterminé) et moyenne (-inf si tout est indéterminé)"""
    per_class: Tuple[Optional[float], ...]
    mean: float

    @property
    def excluded(self) -> Tuple[int, ...]:
        return tuple(l for l, j in enumerate(self.per_class) if j is None)


def pooled_estimate(predicted_masks: Sequence[MaskStack], keypoints: Sequence[KeypointAnnotation],
                    class_count: int) -> ApproxJaccardEstimate:
    """J_approx par classe sur un pool (un fold), puis moyenne sur les classes déterminées"""
    per_class = []
    for l in range(class_count):
        try:
            per_class.append(approx_jaccard(estimate_conditionals(predicted_masks, keypoints, l)))
        except IndeterminateEstimate as e:
            logger.warning(f"⚠️ J_approx indéterminé, {e}")
            per_class.append(None)
    valid = [j for j in per_class if j is not None]
    return ApproxJaccardEstimate(tuple(per_class), float(np.mean(valid)) if valid else -math.inf)


def cross_validated_estimate(em_result: EmResult, class_count: int) -> ApproxJaccardEstimate:
    """
    J_approx sur les folds retenus de la dernière étape E:
    par classe sur chaque fold, moyenne sur les classes, puis sur les folds

    Args:
        em_result: Résultat de run_em (masques de validation et partition)
        class_count: Nombre de classes
    """
    fold_estimates = []
    for fold in em_result.folds.folds():
        masks = [em_result.validation_masks[i] for i in fold]
        keypoints = [em_result.keypoints[i] for i in fold]
        fold_estimates.append(pooled_estimate(masks, keypoints, class_count))

    per_class = []
    for l in range(class_count):
        values = [e.per_class[l] for e in fold_estimates if e.per_class[l] is not None]
        per_class.append(float(np.mean(values)) if values else None)

    means = [e.mean for e in fold_estimates if math.isfinite(e.mean)]
    return ApproxJaccardEstimate(tuple(per_class), float(np.mean(means)) if means else -math.inf)


# ============================================
# BALAYAGE DE σ
# ============================================

@dataclass(frozen=True)
class SweepRow:
    sigma_fraction: float
    estimate: ApproxJaccardEstimate
    test_report: Optional[JaccardReport] = None


@dataclass(frozen=True)
class SweepResult:
    rows: Tuple[SweepRow, ...]
    best_sigma: float

    @property
    def best_test_sigma(self) -> Optional[float]:
        """σ qui maximise le vrai Jaccard de test (si évalué), égalités vers le plus petit σ"""
        rows = [r for r in self.rows if r.test_report is not None]
        if not rows:
            return None
        return _argmax(rows, lambda r: r.test_report.mean)


def _argmax(rows: Sequence[SweepRow], score) -> float:
    best = None
    for row in sorted(rows, key=lambda r: r.sigma_fraction):
        if best is None or score(row) > score(best):
            best = row
    return best.sigma_fraction


def sigma_sweep(samples: Sequence[Sample], labels: LabelSpace, sigma_grid: Sequence[float],
                config: EmConfig, backend: PixelClassifier = None, threads: int = 1,
                test_set: Tuple[Sequence[Sample], Sequence[MaskStack]] = None,
                include_background: bool = True) -> SweepResult:
    """
    Pipeline EM complet pour chaque σ de la grille, J_approx moyen sur les folds retenus

    Args:
        samples: Jeu d'entraînement (images + points-clés)
        labels: Espace des classes
        sigma_grid: Fractions de largeur à essayer
        config: Configuration EM de base (init remplacée pour chaque σ)
        backend: Classifieur (défaut: régression logistique)
        threads: Nombre de workers
        test_set: (échantillons, vérité terrain) optionnels pour le vrai Jaccard de test
        include_background: Fond inclus dans la moyenne du Jaccard de test

    Returns:
        SweepResult: Lignes par σ et σ gagnant (égalités vers le plus petit σ)
    """
    if not sigma_grid:
        raise ValueError("Grille de σ vide")

    rows = []
    for sigma in sigma_grid:
        logger.info(f"🔄 Balayage: σ = {sigma}w")
        run_config = replace(config, init=InitConfig(sigma))
        result = run_em(samples, labels, run_config, backend=backend, threads=threads)
        estimate = cross_validated_estimate(result, labels.count)
        if estimate.excluded:
            excluded = ', '.join(labels.name(l) for l in estimate.excluded)
            logger.warning(f"⚠️ σ = {sigma}w: classes exclues de la moyenne: {excluded}")
        if not math.isfinite(estimate.mean):
            logger.warning(f"⚠️ σ = {sigma}w: toutes les classes indéterminées, score -inf")

        report = None
        if test_set is not None:
            test_samples, ground_truth = test_set
            report = evaluate(test_samples, ground_truth, result.model, labels,
                              backend=backend, include_background=include_background)
        rows.append(SweepRow(float(sigma), estimate, report))

    best = _argmax(rows, lambda r: r.estimate.mean)
    logger.info(f"✅ σ retenu par J_approx: {best}w")
    return SweepResult(tuple(rows), best)


def write_sweep_report(result: SweepResult, labels: LabelSpace, path) -> str:
    """
    Tableau du balayage: σ, J_approx par classe, moyenne, puis le Jaccard de test si disponible

    Returns:
        str: Chemin écrit
    """
    with_test = any(r.test_report is not None for r in result.rows)
    header = ['sigma'] + [f'approx_{n}' for n in labels.names] + ['approx_mean', 'excluded']
    if with_test:
        header += [f'test_{n}' for n in result.rows[0].test_report.names] + ['test_mean']

    rows = []
    for r in result.rows:
        excluded = ','.join(labels.name(l) for l in r.estimate.excluded) or '-'
        row = [f'{r.sigma_fraction}w', *r.estimate.per_class, r.estimate.mean, excluded]
        if with_test:
            row += [*r.test_report.values, r.test_report.mean]
        rows.append(row)

    footer = [f'winner_approx sigma={result.best_sigma}w']
    if with_test:
        footer.append(f'winner_test sigma={result.best_test_sigma}w')
    log_table('Balayage de σ', header, rows)
    return write_table(path, header, rows, footer)
