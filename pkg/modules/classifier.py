"""
Classifieur multi-label pixel par pixel (sigmoïdes indépendantes par classe)
Modèle de remplacement léger: régression logistique sur des caractéristiques locales
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
import yaml
from scipy.ndimage import uniform_filter
from scipy.special import expit

from modules.data_model import ImageTensor, MaskStack, ProbMapStack
from utils.logger import logger
from utils.netpbm import read_wsm, write_wsm


class TrainingDivergedError(RuntimeError):
    """Perte non finie rencontrée pendant l'entraînement"""


# ============================================
# CONFIGURATIONS
# ============================================

@dataclass(frozen=True)
class FeatureConfig:
    """
    Caractéristiques par pixel:
    canaux bruts, canaux lissés (boîte de rayon s), moyenne/variance locales
    (fenêtre de rayon r), coordonnées normalisées optionnelles
    """
    window_radii: Tuple[int, ...] = (2, 4)
    include_coords: bool = False
    smoothing_scales: Tuple[int, ...] = (1, 3)

    def __post_init__(self):
        object.__setattr__(self, 'window_radii', tuple(int(r) for r in self.window_radii))
        object.__setattr__(self, 'smoothing_scales', tuple(int(s) for s in self.smoothing_scales))
        if any(r < 1 for r in self.window_radii):
            raise ValueError(f"window_radii doivent être >= 1, reçu {self.window_radii}")
        if any(s < 1 for s in self.smoothing_scales):
            raise ValueError(f"smoothing_scales doivent être >= 1, reçu {self.smoothing_scales}")

    def dimension(self, channels: int) -> int:
        """Dimension D pour un nombre de canaux donné"""
        per_channel = 1 + len(self.smoothing_scales) + 2 * len(self.window_radii)
        return channels * per_channel + (2 if self.include_coords else 0)

    def to_dict(self) -> dict:
        return {
            'window_radii': list(self.window_radii),
            'include_coords': bool(self.include_coords),
            'smoothing_scales': list(self.smoothing_scales),
        }


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 20
    minibatch_pixels: int = 4096
    l2_penalty: float = 1e-4
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate doit être > 0, reçu {self.learning_rate}")
        if int(self.epochs) < 1:
            raise ValueError(f"epochs doit être >= 1, reçu {self.epochs}")
        if int(self.minibatch_pixels) < 1:
            raise ValueError(f"minibatch_pixels doit être >= 1, reçu {self.minibatch_pixels}")
        if self.l2_penalty < 0:
            raise ValueError(f"l2_penalty doit être >= 0, reçu {self.l2_penalty}")


# ============================================
# MODÈLE
# ============================================

@dataclass(frozen=True, eq=False)
class SegmenterModel:
    """θ: une ligne (poids, biais) par classe, biais en dernière colonne"""
    weights: np.ndarray
    feature_config: FeatureConfig
    label_count: int

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        if weights.ndim != 2 or weights.shape[0] != self.label_count or weights.shape[1] < 2:
            raise ValueError(f"Poids de forme {weights.shape} pour {self.label_count} classes")
        if not np.all(np.isfinite(weights)):
            raise ValueError("Poids non finis")
        weights.setflags(write=False)
        object.__setattr__(self, 'weights', weights)

    @property
    def feature_dimension(self) -> int:
        return self.weights.shape[1] - 1

    @classmethod
    def zeros(cls, label_count: int, feature_dimension: int, feature_config: FeatureConfig):
        return cls(np.zeros((label_count, feature_dimension + 1)), feature_config, label_count)


@dataclass(frozen=True, eq=False)
class LogitMapStack:
    """Valeurs g_{i,l} avant la sigmoïde, (L, H, W)"""
    values: np.ndarray


@dataclass(frozen=True)
class TrainingHistory:
    """Objectif moyen par pixel: avant entraînement puis après chaque époque"""
    losses: Tuple[float, ...]
    pixels: int

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


# ============================================
# CARACTÉRISTIQUES
# ============================================

def extract_features(image: ImageTensor, cfg: FeatureConfig) -> np.ndarray:
    """
    Matrice de caractéristiques par pixel (n x D), pixels en ordre ligne-majeur

    Les fenêtres sont étendues aux bords par réplication (mode 'nearest').

    Args:
        image: Image source
        cfg: Configuration des caractéristiques

    Returns:
        np.ndarray float64 (width * height, D)
    """
    columns = []
    planes = [image.data[:, :, c] for c in range(image.channels)]

    columns.extend(planes)
    for s in cfg.smoothing_scales:
        columns.extend(uniform_filter(p, size=2 * s + 1, mode='nearest') for p in planes)
    for r in cfg.window_radii:
        size = 2 * r + 1
        means = [uniform_filter(p, size=size, mode='nearest') for p in planes]
        squares = [uniform_filter(p * p, size=size, mode='nearest') for p in planes]
        columns.extend(means)
        columns.extend(np.maximum(sq - m * m, 0.0) for sq, m in zip(squares, means))
    if cfg.include_coords:
        ys, xs = np.mgrid[:image.height, :image.width]
        columns.append(xs / image.width)
        columns.append(ys / image.height)

    return np.stack([c.reshape(-1) for c in columns], axis=1)


def _targets(mask: MaskStack) -> np.ndarray:
    """Pile (L, H, W) -> matrice (n, L) en ordre ligne-majeur"""
    return mask.bits.reshape(mask.classes, -1).T.astype(np.float64)


def _logits(weights: np.ndarray, features: np.ndarray) -> np.ndarray:
    return features @ weights[:, :-1].T + weights[:, -1]


def _penalty(weights: np.ndarray, l2_penalty: float) -> float:
    return float(l2_penalty * np.sum(weights[:, :-1] ** 2))


def _penalty_gradient(weights: np.ndarray, l2_penalty: float) -> np.ndarray:
    grad = 2.0 * l2_penalty * weights
    grad[:, -1] = 0.0
    return grad


def _check_shapes(model: SegmenterModel, image: ImageTensor, features: np.ndarray):
    if features.shape[1] != model.feature_dimension:
        raise ValueError(
            f"Le modèle attend D={model.feature_dimension}, l'image donne D={features.shape[1]} "
            f"({image.channels} canaux)"
        )


# ============================================
# PRÉDICTION, PERTE, GRADIENT
# ============================================

def predict(model: SegmenterModel, image: ImageTensor) -> Tuple[LogitMapStack, ProbMapStack]:
    """
    P(y_{i,l} = 1 | I; θ) = 1 / (1 + exp(-g_{i,l}))

    Returns:
        (LogitMapStack, ProbMapStack) de forme (L, H, W)
    """
    features = extract_features(image, model.feature_config)
    _check_shapes(model, image, features)
    g = _logits(model.weights, features)
    logits = g.T.reshape(model.label_count, image.height, image.width)
    return LogitMapStack(logits), ProbMapStack(expit(logits))


def nll_loss(model: SegmenterModel, image: ImageTensor, mask: MaskStack,
             l2_penalty: float = 0.0) -> float:
    """
    -J(θ) = -Σ_i Σ_l log P(y_{i,l} | I; θ), plus l2_penalty * ||W||² (biais exclu)

    Forme stable: -log P(y) = log(1 + exp(g)) - y * g
    """
    if not mask.matches(image, model.label_count):
        raise ValueError("Dimensions du masque différentes de l'image")
    features = extract_features(image, model.feature_config)
    _check_shapes(model, image, features)
    g = _logits(model.weights, features)
    y = _targets(mask)
    return float(np.sum(np.logaddexp(0.0, g) - y * g)) + _penalty(model.weights, l2_penalty)


def gradient(model: SegmenterModel, image: ImageTensor, mask: MaskStack,
             l2_penalty: float = 0.0) -> np.ndarray:
    """
    Gradient analytique de nll_loss par rapport aux poids

    Returns:
        np.ndarray de même forme que model.weights
    """
    if not mask.matches(image, model.label_count):
        raise ValueError("Dimensions du masque différentes de l'image")
    features = extract_features(image, model.feature_config)
    _check_shapes(model, image, features)
    residual = expit(_logits(model.weights, features)) - _targets(mask)
    grad = np.empty_like(model.weights)
    grad[:, :-1] = residual.T @ features
    grad[:, -1] = residual.sum(axis=0)
    return grad + _penalty_gradient(model.weights, l2_penalty)


# ============================================
# ENTRAÎNEMENT (étape M)
# ============================================

def _mean_objective(weights, features, targets, l2_penalty) -> float:
    g = _logits(weights, features)
    nll = np.sum(np.logaddexp(0.0, g) - targets * g) / len(features)
    return float(nll) + _penalty(weights, l2_penalty)


def fit(pairs: Sequence[Tuple[ImageTensor, MaskStack]], cfg: TrainConfig,
        feat_cfg: FeatureConfig) -> Tuple[SegmenterModel, TrainingHistory]:
    """
    SGD par mini-lots de pixels sur l'entropie croisée sigmoïde par classe

    Les caractéristiques sont standardisées pendant l'optimisation, puis les
    poids sont ramenés dans l'espace des caractéristiques brutes.

    Args:
        pairs: (image, pseudo-masque) d'entraînement
        cfg: Hyperparamètres d'optimisation
        feat_cfg: Caractéristiques à extraire

    Returns:
        (SegmenterModel, TrainingHistory)

    Raises:
        ValueError: Aucune paire, ou masques incohérents
        TrainingDivergedError: Perte non finie
    """
    if not pairs:
        raise ValueError("Entraînement impossible: aucune paire (image, masque)")
    label_count = pairs[0][1].classes
    channels = pairs[0][0].channels
    for i, (image, mask) in enumerate(pairs):
        if not mask.matches(image, label_count) or image.channels != channels:
            raise ValueError(f"Paire {i}: masque ou canaux incohérents avec la première paire")

    features = np.concatenate([extract_features(img, feat_cfg) for img, _ in pairs])
    targets = np.concatenate([_targets(mask) for _, mask in pairs])
    n, dims = features.shape

    mean = features.mean(axis=0)
    scale = features.std(axis=0)
    scale[scale < 1e-12] = 1.0
    z = (features - mean) / scale

    rng = np.random.default_rng(cfg.rng_seed)
    weights = np.zeros((label_count, dims + 1))
    batch = int(cfg.minibatch_pixels)
    losses = [_mean_objective(weights, z, targets, cfg.l2_penalty)]

    for epoch in range(1, int(cfg.epochs) + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            zb = z[idx]
            residual = expit(_logits(weights, zb)) - targets[idx]
            grad = np.empty_like(weights)
            grad[:, :-1] = residual.T @ zb / len(idx)
            grad[:, -1] = residual.mean(axis=0)
            grad += _penalty_gradient(weights, cfg.l2_penalty)
            weights -= cfg.learning_rate * grad

        loss = _mean_objective(weights, z, targets, cfg.l2_penalty)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"Perte non finie ({loss}) à l'époque {epoch}/{cfg.epochs}, "
                f"learning_rate={cfg.learning_rate}"
            )
        losses.append(loss)
        logger.debug(f"   Époque {epoch}/{cfg.epochs}: perte moyenne {loss:.6f}")

    if losses[-1] > losses[0]:
        logger.warning(f"⚠️ Perte finale {losses[-1]:.6f} > perte initiale {losses[0]:.6f}")

    raw = np.empty_like(weights)
    raw[:, :-1] = weights[:, :-1] / scale
    raw[:, -1] = weights[:, -1] - (weights[:, :-1] * (mean / scale)).sum(axis=1)

    model = SegmenterModel(raw, feat_cfg, label_count)
    return model, TrainingHistory(tuple(losses), n)


def train(pairs: Sequence[Tuple[ImageTensor, MaskStack]], cfg: TrainConfig,
          feat_cfg: FeatureConfig) -> SegmenterModel:
    """Étape M: maximise log P(Ŷ | I; θ) sur les paires données"""
    return fit(pairs, cfg, feat_cfg)[0]


# ============================================
# INTERFACE ABSTRAITE
# ============================================

class PixelClassifier(ABC):
    """
    Contrat dont dépend l'entraîneur EM: tout classifieur qui fournit
    fit/predict avec ces signatures est substituable
    """

    @abstractmethod
    def fit(self, pairs: Sequence[Tuple[ImageTensor, MaskStack]],
            cfg: TrainConfig) -> Tuple[object, TrainingHistory]:
        """Entraîne un modèle sur des paires (image, masque)"""

    @abstractmethod
    def predict(self, model, image: ImageTensor) -> Tuple[LogitMapStack, ProbMapStack]:
        """Logits et probabilités (L, H, W)"""


class LogisticSegmenter(PixelClassifier):
    """Régression logistique multi-label sur caractéristiques locales"""

    def __init__(self, feature_config: FeatureConfig = None):
        self.feature_config = feature_config or FeatureConfig()

    def fit(self, pairs, cfg):
        return fit(pairs, cfg, self.feature_config)

    def predict(self, model, image):
        return predict(model, image)


# ============================================
# SÉRIALISATION
# ============================================

def _sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + '.features.yaml')


def save_model(model: SegmenterModel, path) -> Path:
    """
    Écrit les poids (WSM1) et la configuration des caractéristiques à côté

    Returns:
        Path: Chemin des poids
    """
    write_wsm(path, model.weights)
    _sidecar(path).write_text(
        yaml.safe_dump(model.feature_config.to_dict(), sort_keys=True), encoding='utf-8'
    )
    return Path(path)


def load_model(path) -> SegmenterModel:
    """Relit un modèle écrit par save_model"""
    weights = read_wsm(path)
    sidecar = _sidecar(path)
    doc = yaml.safe_load(sidecar.read_text(encoding='utf-8')) if sidecar.is_file() else {}
    return SegmenterModel(weights, FeatureConfig(**(doc or {})), weights.shape[0])
