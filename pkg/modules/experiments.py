"""
Matrice d'ablation de la binarisation
{adaptive, class_average} x bornes x agrégateurs x nombres de points-clés
"""
import itertools
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

from modules.binarization import AGGREGATORS, ThresholdPolicy
from modules.classifier import PixelClassifier
from modules.data_model import LabelSpace, MaskStack, Sample
from modules.em_trainer import EmConfig, run_em
from modules.evaluation import JaccardReport, evaluate
from modules.synth import resample_keypoints
from utils.logger import logger
from utils.reports import log_table, write_table


ABLATION_MODES = ('adaptive', 'class_average')


@dataclass(frozen=True)
class AblationConfig:
    """
    keypoint_counts vide: points-clés du manifeste tels quels;
    sinon k points-clés par classe tirés de la vérité terrain d'entraînement
    """
    modes: Tuple[str, ...] = ABLATION_MODES
    clamps: Tuple[float, ...] = (0.5, 1.0)
    aggregators: Tuple[str, ...] = AGGREGATORS
    keypoint_counts: Tuple[int, ...] = ()
    rng_seed: int = 0

    def __post_init__(self):
        for name in ('modes', 'clamps', 'aggregators', 'keypoint_counts'):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.modes or set(self.modes) - set(ABLATION_MODES):
            raise ValueError(f"modes doit être un sous-ensemble non vide de {ABLATION_MODES}")
        if not self.aggregators or set(self.aggregators) - set(AGGREGATORS):
            raise ValueError(f"aggregators doit être un sous-ensemble non vide de {AGGREGATORS}")
        if not self.clamps or any(not 0.0 < c <= 1.0 for c in self.clamps):
            raise ValueError(f"clamps doivent être dans ]0, 1], reçu {self.clamps}")
        if any(k < 1 for k in self.keypoint_counts):
            raise ValueError(f"keypoint_counts doivent être >= 1, reçu {self.keypoint_counts}")

    def grid(self) -> List[Tuple[Optional[int], str, float, str]]:
        """Combinaisons (k, mode, borne, agrégateur) dans l'ordre du tableau"""
        counts = self.keypoint_counts or (None,)
        return list(itertools.product(counts, self.modes, self.clamps, self.aggregators))


@dataclass(frozen=True)
class AblationRow:
    keypoints: Optional[int]
    mode: str
    clamp_max: float
    aggregator: str
    report: JaccardReport

    @property
    def name(self) -> str:
        k = 'manifest' if self.keypoints is None else self.keypoints
        return f'{self.mode}/clamp={self.clamp_max}/{self.aggregator}/k={k}'


def run_ablation(train_samples: Sequence[Sample], labels: LabelSpace, em_config: EmConfig,
                 cfg: AblationConfig, test_samples: Sequence[Sample],
                 test_ground_truth: Sequence[MaskStack],
                 train_ground_truth: Sequence[MaskStack] = None,
                 backend: PixelClassifier = None, threads: int = 1,
                 include_background: bool = True) -> List[AblationRow]:
    """
    Lance un pipeline EM complet par configuration et évalue le modèle final

    Args:
        train_samples: Jeu d'entraînement (images + points-clés)
        labels: Espace des classes
        em_config: Configuration EM de base (politique remplacée par ligne)
        cfg: Axes de la matrice
        test_samples: Images de test
        test_ground_truth: Vérité terrain de test
        train_ground_truth: Requise si cfg.keypoint_counts est non vide
        backend: Classifieur (défaut: régression logistique)
        threads: Nombre de workers
        include_background: Fond inclus dans la moyenne

    Returns:
        List[AblationRow]: Une ligne par configuration

    Raises:
        ValueError: Vérité terrain d'entraînement absente pour le rééchantillonnage
    """
    if cfg.keypoint_counts and train_ground_truth is None:
        raise ValueError("keypoint_counts exige la vérité terrain du jeu d'entraînement")

    keypoint_sets = {None: list(train_samples)}
    for k in cfg.keypoint_counts:
        keypoint_sets[k] = resample_keypoints(train_samples, train_ground_truth, k, cfg.rng_seed)

    grid = cfg.grid()
    rows = []
    for n, (k, mode, clamp, aggregator) in enumerate(grid, start=1):
        policy = ThresholdPolicy(
            aggregator=aggregator, clamp_max=clamp, mode=mode,
            force_keypoints_positive=em_config.policy.force_keypoints_positive,
        )
        logger.info(f"🔄 Ablation {n}/{len(grid)}: {mode}, clamp {clamp}, {aggregator}, k={k or 'manifest'}")
        result = run_em(keypoint_sets[k], labels, replace(em_config, policy=policy),
                        backend=backend, threads=threads)
        report = evaluate(test_samples, test_ground_truth, result.model, labels,
                          backend=backend, include_background=include_background, threads=threads)
        rows.append(AblationRow(k, mode, clamp, aggregator, report))
    return rows


def write_ablation_table(rows: Sequence[AblationRow], path) -> str:
    """Tableau comparatif: une ligne par configuration, Jaccard par classe puis Mean"""
    if not rows:
        raise ValueError("Aucune ligne d'ablation à écrire")
    header = ['mode', 'clamp_max', 'aggregator', 'keypoints', *rows[0].report.names, 'Mean']
    table = [
        [r.mode, r.clamp_max, r.aggregator, 'manifest' if r.keypoints is None else r.keypoints,
         *r.report.values, r.report.mean]
        for r in rows
    ]
    log_table('Ablation de la binarisation', header, table)
    return write_table(path, header, table)
