"""
Initialisation des pseudo-masques Ŷ à partir des points-clés
Chaque pixel à distance euclidienne <= σ d'un point-clé de la classe l est étiqueté l
"""
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from modules.data_model import ImageTensor, KeypointAnnotation, LabelSpace, MaskStack
from utils.logger import logger


# Grille de σ par défaut (fractions de la largeur d'image)
DEFAULT_SIGMA_GRID = (0.03, 0.06, 0.12)


@dataclass(frozen=True)
class InitConfig:
    """σ = sigma_fraction * largeur de l'image"""
    sigma_fraction: float = 0.06

    def __post_init__(self):
        if not 0.0 < self.sigma_fraction <= 1.0:
            raise ValueError(f"sigma_fraction doit être dans ]0, 1], reçu {self.sigma_fraction}")

    def sigma(self, width: int) -> float:
        return self.sigma_fraction * width


def disk_plane(width: int, height: int, centers: Sequence, sigma: float) -> np.ndarray:
    """
    Union des disques fermés de rayon sigma, coupés aux bords de l'image

    Args:
        width, height: Dimensions du plan
        centers: Points (x, y) entiers
        sigma: Rayon réel (non arrondi)

    Returns:
        np.ndarray bool (H, W)
    """
    plane = np.zeros((height, width), dtype=bool)
    if not centers:
        return plane
    ys, xs = np.ogrid[:height, :width]
    radius2 = sigma * sigma
    for x, y in centers:
        plane |= (xs - x) ** 2 + (ys - y) ** 2 <= radius2
    return plane


def init_masks_from_keypoints(image: ImageTensor, keypoints: KeypointAnnotation,
                              labels: LabelSpace, cfg: InitConfig) -> MaskStack:
    """
    Estimation initiale Ŷ: disques de rayon σ autour des points-clés, par classe

    Args:
        image: Image propriétaire des points-clés
        keypoints: Points-clés de l'image
        labels: Espace des classes
        cfg: Configuration d'initialisation

    Returns:
        MaskStack: Plan vide pour une classe sans point-clé
    """
    sigma = cfg.sigma(image.width)
    planes = np.zeros((labels.count, image.height, image.width), dtype=bool)
    for l in range(labels.count):
        centers = [(k.x, k.y) for k in keypoints.for_class(l)]
        planes[l] = disk_plane(image.width, image.height, centers, sigma)

    logger.debug(
        f"Initialisation σ={sigma:.3f}px: {int(planes.sum())} pixels positifs "
        f"sur {labels.count} classes"
    )
    return MaskStack(planes)
