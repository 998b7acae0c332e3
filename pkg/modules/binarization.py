"""
Binarisation adaptative des cartes de probabilités (étape E)
Seuil par image et par classe: t = min(clamp_max, f(P aux points-clés)), f = moyenne ou médiane
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from modules.data_model import KeypointAnnotation, MaskStack, ProbMapStack


AGGREGATORS = ('mean', 'median')
MODES = ('adaptive', 'class_average', 'fixed')

# Seuil du cadre entièrement supervisé (décision à 50%)
SUPERVISED_THRESHOLD = 0.5


@dataclass(frozen=True)
class ThresholdPolicy:
    """
    Politique de seuillage

    mode:
        adaptive      -- seuil par image et par classe
        class_average -- moyenne des seuils adaptatifs de la classe sur le jeu d'entraînement
        fixed         -- seuil constant fixed_threshold
    """
    aggregator: str = 'mean'
    clamp_max: float = 0.5
    mode: str = 'adaptive'
    fixed_threshold: Optional[float] = None
    force_keypoints_positive: bool = True

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator doit être dans {AGGREGATORS}, reçu {self.aggregator!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode doit être dans {MODES}, reçu {self.mode!r}")
        if not 0.0 < self.clamp_max <= 1.0:
            raise ValueError(f"clamp_max doit être dans ]0, 1], reçu {self.clamp_max}")
        if self.mode == 'fixed':
            if self.fixed_threshold is None or not 0.0 < self.fixed_threshold < 1.0:
                raise ValueError(f"fixed_threshold doit être dans ]0, 1[, reçu {self.fixed_threshold}")

    @classmethod
    def fixed(cls, t: float, **kwargs) -> 'ThresholdPolicy':
        return cls(mode='fixed', fixed_threshold=t, **kwargs)


def _aggregate(values: Sequence[float], aggregator: str) -> float:
    # Médiane d'un échantillon pair = moyenne des deux valeurs centrales
    if aggregator == 'median':
        return float(np.median(values))
    return float(np.mean(values))


def compute_threshold(probs: ProbMapStack, keypoints: KeypointAnnotation, class_index: int,
                      policy: ThresholdPolicy) -> Optional[float]:
    """
    Seuil adaptatif t = min(clamp_max, f({P(y_{i_k,l} = 1)}))

    Args:
        probs: Probabilités prédites pour l'image
        keypoints: Points-clés de l'image
        class_index: Classe l
        policy: Agrégateur et borne

    Returns:
        float, ou None (ABSENT) si l'image n'a aucun point-clé de la classe
    """
    samples = [probs.at(class_index, k.x, k.y) for k in keypoints.for_class(class_index)]
    if not samples:
        return None
    return min(policy.clamp_max, _aggregate(samples, policy.aggregator))


def image_thresholds(probs: ProbMapStack, keypoints: KeypointAnnotation, policy: ThresholdPolicy,
                     class_averages: Sequence[Optional[float]] = None) -> List[Optional[float]]:
    """
    Seuils de toutes les classes d'une image selon le mode de la politique

    Une classe sans point-clé dans l'image reste ABSENT quel que soit le mode.

    Args:
        class_averages: Seuils moyens par classe (requis en mode class_average)
    """
    present = keypoints.classes_present()
    thresholds = []
    for l in range(probs.classes):
        if l not in present:
            thresholds.append(None)
        elif policy.mode == 'adaptive':
            thresholds.append(compute_threshold(probs, keypoints, l, policy))
        elif policy.mode == 'fixed':
            thresholds.append(policy.fixed_threshold)
        else:
            if class_averages is None:
                raise ValueError("Mode class_average: seuils moyens par classe requis")
            thresholds.append(class_averages[l])
    return thresholds


def binarize(probs: ProbMapStack, thresholds: Sequence[Optional[float]],
             keypoints: KeypointAnnotation, policy: ThresholdPolicy) -> MaskStack:
    """
    ŷ_{i,l} = 1 ssi P_{i,l} >= t_l

    Les classes ABSENT donnent un plan vide. Avec force_keypoints_positive,
    chaque pixel de point-clé de la classe l est mis à 1.

    Returns:
        MaskStack de mêmes dimensions que probs
    """
    if len(thresholds) != probs.classes:
        raise ValueError(f"{len(thresholds)} seuils pour {probs.classes} classes")

    bits = np.zeros(probs.values.shape, dtype=bool)
    for l, t in enumerate(thresholds):
        if t is None:
            continue
        bits[l] = probs.values[l] >= t
        if policy.force_keypoints_positive:
            for k in keypoints.for_class(l):
                bits[l, k.y, k.x] = True
    return MaskStack(bits)


def binarize_supervised(probs: ProbMapStack) -> MaskStack:
    """Règle du test (aucun point-clé disponible): ŷ = 1 ssi P >= 0.5"""
    return MaskStack(probs.values >= SUPERVISED_THRESHOLD)


def class_average_thresholds(per_image: Sequence[Sequence[Optional[float]]],
                             class_index: int) -> Optional[float]:
    """
    Moyenne arithmétique des seuils (bornés) de la classe sur les images qui la contiennent

    Args:
        per_image: Pour chaque image, la liste des seuils par classe (None = ABSENT)
        class_index: Classe l

    Returns:
        float, ou None si aucune image ne contient la classe
    """
    pool = [t[class_index] for t in per_image if t[class_index] is not None]
    if not pool:
        return None
    return float(np.mean(pool))
