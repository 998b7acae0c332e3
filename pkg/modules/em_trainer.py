"""
Boucle EM faiblement supervisée
Partition en trois folds, étapes M sur deux folds, étapes E sur le fold retenu,
puis entraînement final sur tout le jeu avec les derniers pseudo-masques
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Sized, Tuple

import numpy as np

from modules.binarization import (
    ThresholdPolicy,
    binarize,
    binarize_supervised,
    class_average_thresholds,
    image_thresholds,
)
from modules.classifier import (
    LogisticSegmenter,
    PixelClassifier,
    SegmenterModel,
    TrainConfig,
    TrainingHistory,
    save_model,
)
from modules.data_model import (
    KeypointAnnotation,
    LabelSpace,
    MaskStack,
    ProbMapStack,
    Sample,
    write_mask_stack,
)
from modules.database import FINAL_FOLD, RunLog
from modules.initialization import InitConfig, init_masks_from_keypoints
from utils.logger import logger
from utils.seeding import derive_seed


FOLD_NAMES = ('A', 'B', 'C')


class FoldError(ValueError):
    """Partition impossible ou paire de folds vide"""


# ============================================
# PARTITION EN TROIS FOLDS
# ============================================

@dataclass(frozen=True)
class FoldSplit:
    """assignment[i] = fold (0, 1, 2) de l'enregistrement i"""
    assignment: Tuple[int, ...]

    def folds(self) -> List[List[int]]:
        return [[i for i, f in enumerate(self.assignment) if f == k] for k in range(3)]

    def training_indices(self, held_out: int) -> List[int]:
        """Enregistrements des deux autres folds, dans l'ordre du jeu"""
        return [i for i, f in enumerate(self.assignment) if f != held_out]

    def sizes(self) -> Tuple[int, int, int]:
        return tuple(len(f) for f in self.folds())


def split_three_folds(dataset: Sized, seed: int) -> FoldSplit:
    """
    Partition uniforme aléatoire en folds A, B, C (tailles à 1 près)

    Args:
        dataset: Tout objet de taille connue (liste d'échantillons, manifeste...)
        seed: Graine de la partition

    Raises:
        FoldError: Moins de 3 enregistrements
    """
    n = len(dataset)
    if n < 3:
        raise FoldError(f"Au moins 3 enregistrements requis pour 3 folds, reçu {n}")
    order = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=int)
    assignment[order] = np.arange(n) % 3
    return FoldSplit(tuple(int(f) for f in assignment))


# ============================================
# CONFIGURATION ET RÉSULTATS
# ============================================

@dataclass(frozen=True)
class EmConfig:
    em_iterations: int = 2
    init: InitConfig = field(default_factory=InitConfig)
    policy: ThresholdPolicy = field(default_factory=ThresholdPolicy)
    train: TrainConfig = field(default_factory=TrainConfig)
    rng_seed: int = 0

    def __post_init__(self):
        if int(self.em_iterations) < 1:
            raise ValueError(f"em_iterations doit être >= 1, reçu {self.em_iterations}")


@dataclass(frozen=True)
class TrainingEvent:
    iteration: int
    fold: str
    train_indices: Tuple[int, ...]
    held_out_indices: Tuple[int, ...]
    history: Optional[TrainingHistory] = None


@dataclass(frozen=True)
class EStepOutput:
    masks: Dict[int, MaskStack]
    thresholds: Dict[int, List[Optional[float]]]
    probs: Dict[int, ProbMapStack]


@dataclass(frozen=True)
class EmResult:
    """
    pseudo_masks: Ŷ final de chaque enregistrement
    validation_masks: probabilités retenues de la dernière étape E, seuillées à 0.5
    thresholds: seuils de la dernière étape E, par enregistrement
    """
    pseudo_masks: Tuple[MaskStack, ...]
    model: object
    folds: FoldSplit
    keypoints: Tuple[KeypointAnnotation, ...]
    validation_masks: Tuple[MaskStack, ...]
    thresholds: Tuple[Tuple[Optional[float], ...], ...]
    trainings: Tuple[TrainingEvent, ...]


def record_stem(index: int, sample: Sample) -> str:
    return f'{index:04d}_{sample.name}'


# ============================================
# ÉTAPES M ET E
# ============================================

def m_step(samples: Sequence[Sample], pseudo_masks: Sequence[MaskStack],
           train_indices: Sequence[int], config: EmConfig, backend: PixelClassifier,
           seed: int) -> Tuple[object, TrainingHistory]:
    """
    Entraîne un modèle sur l'union de deux folds

    Args:
        samples: Tous les échantillons
        pseudo_masks: Pseudo-masques courants (alignés sur samples)
        train_indices: Enregistrements des deux folds d'entraînement
        config: Configuration EM (train utilisé tel quel, graine remplacée)
        backend: Classifieur
        seed: Graine de cet entraînement

    Raises:
        FoldError: Paire de folds vide
    """
    if not train_indices:
        raise FoldError("Paire de folds vide: rien à entraîner")
    pairs = [(samples[i].image, pseudo_masks[i]) for i in train_indices]
    return backend.fit(pairs, replace(config.train, rng_seed=seed))


def predict_fold(model, samples: Sequence[Sample], indices: Sequence[int],
                 backend: PixelClassifier) -> Dict[int, ProbMapStack]:
    return {i: backend.predict(model, samples[i].image)[1] for i in indices}


def e_step(model, samples: Sequence[Sample], held_out: Sequence[int], policy: ThresholdPolicy,
           backend: PixelClassifier, probs: Dict[int, ProbMapStack] = None,
           class_averages: Sequence[Optional[float]] = None) -> EStepOutput:
    """
    Prédit le fold retenu puis binarise avec les seuils de la politique

    Args:
        model: Modèle entraîné sans le fold retenu
        samples: Tous les échantillons
        held_out: Enregistrements du fold retenu
        policy: Politique de seuillage
        backend: Classifieur
        probs: Probabilités déjà prédites (sinon calculées ici)
        class_averages: Seuils moyens par classe (mode class_average)

    Returns:
        EStepOutput: nouveaux pseudo-masques, seuils et probabilités du fold
    """
    if probs is None:
        probs = predict_fold(model, samples, held_out, backend)
    masks, thresholds = {}, {}
    for i in held_out:
        t = image_thresholds(probs[i], samples[i].keypoints, policy, class_averages)
        thresholds[i] = t
        masks[i] = binarize(probs[i], t, samples[i].keypoints, policy)
    return EStepOutput(masks, thresholds, {i: probs[i] for i in held_out})


# ============================================
# BOUCLE COMPLÈTE
# ============================================

def _class_averages(probs: Dict[int, ProbMapStack], samples: Sequence[Sample],
                    policy: ThresholdPolicy, class_count: int) -> List[Optional[float]]:
    adaptive = replace(policy, mode='adaptive')
    per_image = [image_thresholds(probs[i], samples[i].keypoints, adaptive) for i in sorted(probs)]
    return [class_average_thresholds(per_image, l) for l in range(class_count)]


def _save_checkpoint(directory: Path, iteration: int, samples: Sequence[Sample],
                     masks: Sequence[MaskStack], models: Dict[str, object]):
    target = directory / f'iter{iteration}'
    for i, (sample, mask) in enumerate(zip(samples, masks)):
        write_mask_stack(mask, target / 'masks', record_stem(i, sample))
    for name, model in models.items():
        if isinstance(model, SegmenterModel):
            save_model(model, target / f'model_{name}.wsm')
    logger.debug(f"Checkpoint écrit: {target}")


def run_em(samples: Sequence[Sample], labels: LabelSpace, config: EmConfig,
           backend: PixelClassifier = None, threads: int = 1, run_log: RunLog = None,
           checkpoint_dir=None) -> EmResult:
    """
    Entraînement EM complet

    1. Ŷ initial par disques de rayon σ autour des points-clés
    2. em_iterations fois: trois étapes M (paires de folds), trois étapes E (folds retenus)
    3. Modèle final entraîné sur tous les enregistrements avec le dernier Ŷ

    Args:
        samples: Échantillons d'entraînement (images + points-clés)
        labels: Espace des classes
        config: Configuration EM
        backend: Classifieur (défaut: régression logistique)
        threads: Entraînements de folds concurrents (résultat identique quel que soit le nombre)
        run_log: Journal SQLite optionnel
        checkpoint_dir: Dossier de checkpoints optionnel

    Returns:
        EmResult
    """
    if not samples:
        raise ValueError("Jeu d'entraînement vide")
    if not any(len(s.keypoints) for s in samples):
        raise ValueError("Aucun point-clé dans le jeu d'entraînement")
    for s in samples:
        s.keypoints.validate(s.image.width, s.image.height, labels.count)

    backend = backend or LogisticSegmenter()
    seed = config.rng_seed
    folds = split_three_folds(samples, derive_seed(seed, 'folds'))
    fold_members = folds.folds()
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None

    logger.info(
        f"🚀 EM: {len(samples)} images, folds {folds.sizes()}, "
        f"{config.em_iterations} itérations, σ={config.init.sigma_fraction}w, "
        f"seuil {config.policy.mode}/{config.policy.aggregator} (max {config.policy.clamp_max})"
    )

    pseudo = [init_masks_from_keypoints(s.image, s.keypoints, labels, config.init) for s in samples]
    if checkpoint_dir:
        _save_checkpoint(checkpoint_dir, 0, samples, pseudo, {})

    events: List[TrainingEvent] = []
    validation: List[Optional[MaskStack]] = [None] * len(samples)
    last_thresholds: List[Tuple] = [()] * len(samples)

    for iteration in range(1, config.em_iterations + 1):
        logger.info(f"🔄 Itération EM {iteration}/{config.em_iterations}")

        # Étape M: un modèle par fold retenu, entraînés en parallèle
        def train_fold(held_out):
            return m_step(samples, pseudo, folds.training_indices(held_out), config, backend,
                          derive_seed(seed, 'train', iteration, held_out))

        with ThreadPoolExecutor(max_workers=max(1, min(threads, 3))) as pool:
            fitted = list(pool.map(train_fold, range(3)))

        models = {}
        for held_out, (model, history) in enumerate(fitted):
            name = FOLD_NAMES[held_out]
            models[name] = model
            event = TrainingEvent(iteration, name, tuple(folds.training_indices(held_out)),
                                  tuple(fold_members[held_out]), history)
            events.append(event)
            if run_log is not None:
                run_log.log_training(iteration, name, event.train_indices, event.held_out_indices,
                                     history.pixels, history.initial_loss, history.final_loss)
            logger.info(
                f"   Fold {name} retenu: perte {history.initial_loss:.4f} -> {history.final_loss:.4f}"
            )

        # Étape E: toutes les prédictions d'abord (barrière), puis binarisation
        probs = {}
        for held_out in range(3):
            probs.update(predict_fold(models[FOLD_NAMES[held_out]], samples,
                                      fold_members[held_out], backend))

        averages = None
        if config.policy.mode == 'class_average':
            averages = _class_averages(probs, samples, config.policy, labels.count)
            logger.debug(f"   Seuils moyens par classe: {averages}")

        updated = list(pseudo)
        for held_out in range(3):
            members = fold_members[held_out]
            output = e_step(models[FOLD_NAMES[held_out]], samples, members, config.policy,
                            backend, probs={i: probs[i] for i in members},
                            class_averages=averages)
            for i in members:
                updated[i] = output.masks[i]
                last_thresholds[i] = tuple(output.thresholds[i])
                validation[i] = binarize_supervised(output.probs[i])
                if run_log is not None:
                    run_log.log_thresholds(iteration, record_stem(i, samples[i]), output.thresholds[i])
                logger.debug(f"   {record_stem(i, samples[i])}: seuils {output.thresholds[i]}")
        pseudo = updated

        if checkpoint_dir:
            _save_checkpoint(checkpoint_dir, iteration, samples, pseudo, models)

    # Entraînement final sur tout le jeu
    everything = list(range(len(samples)))
    final_model, history = backend.fit(
        [(s.image, m) for s, m in zip(samples, pseudo)],
        replace(config.train, rng_seed=derive_seed(seed, 'train', 0)),
    )
    events.append(TrainingEvent(config.em_iterations, FINAL_FOLD, tuple(everything), (), history))
    if run_log is not None:
        run_log.log_training(config.em_iterations, FINAL_FOLD, everything, [],
                             history.pixels, history.initial_loss, history.final_loss)
    logger.info(f"✅ Modèle final: perte {history.initial_loss:.4f} -> {history.final_loss:.4f}")

    if checkpoint_dir and isinstance(final_model, SegmenterModel):
        save_model(final_model, checkpoint_dir / 'model_final.wsm')

    return EmResult(
        pseudo_masks=tuple(pseudo),
        model=final_model,
        folds=folds,
        keypoints=tuple(s.keypoints for s in samples),
        validation_masks=tuple(validation),
        thresholds=tuple(last_thresholds),
        trainings=tuple(events),
    )
