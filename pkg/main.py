"""
Orchestrateur principal - harnais d'entraînement faiblement supervisé
Sous-commandes: synth-gen, init, train, sigma-sweep, eval, ablate
"""
import argparse
import logging
import os
import sys
import traceback
from pathlib import Path
from typing import Dict, List, Optional

import yaml

# Ajouter le dossier parent au path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config.run_config import ConfigError, RunConfig, load_run_config
from config.settings import VERSION, config
from modules.approx_cv import sigma_sweep, write_sweep_report
from modules.classifier import LogisticSegmenter, load_model, save_model
from modules.data_model import (
    DatasetManifest,
    load_ground_truth,
    load_manifest,
    load_samples,
    read_mask_stack,
    write_mask_stack,
)
from modules.database import RunLog
from modules.em_trainer import record_stem, run_em
from modules.evaluation import evaluate, write_jaccard_table
from modules.experiments import run_ablation, write_ablation_table
from modules.initialization import InitConfig, init_masks_from_keypoints
from modules.synth import TEST_INDEX_OFFSET, export_dataset, generate
from utils.logger import logger, set_console_level
from utils.reports import write_table


RUN_MANIFEST = 'run_manifest.yaml'


class Harness:
    """Exécute une sous-commande et écrit ses sorties dans un dossier"""

    def __init__(self, run_config: RunConfig, out_dir, threads: int = 1):
        """
        Args:
            run_config: Configuration de l'exécution
            out_dir: Dossier de sortie (créé si besoin)
            threads: Plafond de workers (n'influence pas les résultats)
        """
        self.run_config = run_config
        self.out_dir = Path(out_dir)
        self.threads = max(1, threads)
        self.outputs: List[Path] = []
        self.out_dir.mkdir(parents=True, exist_ok=True)

    # ============================================
    # OUTILS
    # ============================================

    def _manifest(self, path: Optional[str], role: str = 'train') -> DatasetManifest:
        if path is None:
            configured = getattr(self.run_config.paths, f'{role}_manifest')
            path = self.run_config.resolve_path(configured)
        if path is None:
            raise ConfigError(f'paths.{role}_manifest', "manifeste non fourni (argument ou configuration)")
        return load_manifest(path)

    def _backend(self) -> LogisticSegmenter:
        return LogisticSegmenter(self.run_config.features)

    def _record(self, path) -> Path:
        path = Path(path)
        self.outputs.append(path)
        return path

    def _validate_outputs(self):
        """Toutes les sorties déclarées existent et ne sont pas vides"""
        missing = [p for p in self.outputs if not p.is_file() or p.stat().st_size == 0]
        if missing:
            raise RuntimeError(f"Sorties manquantes ou vides: {', '.join(map(str, missing))}")

    def _write_run_manifest(self, command: str, inputs: Dict[str, Optional[str]],
                            extra: Dict = None):
        """Instantané de configuration, graine et version (sans horodatage)"""
        doc = {
            'command': command,
            'version': VERSION,
            'seed': self.run_config.seed,
            'inputs': {k: (str(v) if v is not None else None) for k, v in inputs.items()},
            'config': self.run_config.snapshot(),
        }
        if extra:
            doc.update(extra)
        doc['outputs'] = sorted(os.path.relpath(p, self.out_dir) for p in self.outputs)
        path = self.out_dir / RUN_MANIFEST
        path.write_text(yaml.safe_dump(doc, sort_keys=False, allow_unicode=True), encoding='utf-8')
        self._validate_outputs()
        logger.info(f"✅ Sorties écrites dans {self.out_dir} ({len(self.outputs)} fichiers)")

    # ============================================
    # SOUS-COMMANDES
    # ============================================

    def cmd_synth_gen(self):
        """Génère un jeu d'entraînement et, si demandé, un jeu de test"""
        synth = self.run_config.synth_config()
        sizes = self.run_config.sizes
        labels = synth.labels()

        train = generate(synth, sizes.train_images)
        self._record(export_dataset(train, labels, self.out_dir / 'train'))
        shortfalls = sum(len(s.shortfalls) for s in train)
        if shortfalls:
            logger.warning(f"⚠️ {shortfalls} classes avec moins de pixels que de points-clés demandés")

        if sizes.test_images:
            test = generate(synth, sizes.test_images, offset=TEST_INDEX_OFFSET)
            self._record(export_dataset(test, labels, self.out_dir / 'test'))

        self._write_run_manifest('synth-gen', {}, {'keypoint_shortfalls': shortfalls})

    def cmd_init(self, manifest_path: Optional[str], sigma: Optional[float]):
        """Initialisation par disques seulement: une pile de masques par image"""
        manifest = self._manifest(manifest_path)
        init = InitConfig(sigma) if sigma is not None else self.run_config.init
        samples = load_samples(manifest, self.threads)

        for i, sample in enumerate(samples):
            mask = init_masks_from_keypoints(sample.image, sample.keypoints, manifest.labels, init)
            for p in write_mask_stack(mask, self.out_dir / 'masks', record_stem(i, sample)):
                self._record(p)

        logger.info(f"✅ {len(samples)} piles initialisées (σ = {init.sigma_fraction}w)")
        self._write_run_manifest('init', {'manifest': manifest.path},
                                 {'sigma_fraction': init.sigma_fraction})

    def cmd_train(self, manifest_path: Optional[str], checkpoints: bool = False):
        """Pipeline EM complet: modèle final, pseudo-masques, journal des seuils"""
        manifest = self._manifest(manifest_path)
        samples = load_samples(manifest, self.threads)
        labels = manifest.labels

        db_path = self.out_dir / config.RUN_LOG
        if db_path.exists():
            db_path.unlink()

        with RunLog(str(db_path)) as run_log:
            result = run_em(
                samples, labels, self.run_config.em_config(), backend=self._backend(),
                threads=self.threads, run_log=run_log,
                checkpoint_dir=self.out_dir / 'checkpoints' if checkpoints else None,
            )

            self._record(save_model(result.model, self.out_dir / 'model.wsm'))
            self._record(self.out_dir / 'model.wsm.features.yaml')
            for i, (sample, mask) in enumerate(zip(samples, result.pseudo_masks)):
                for p in write_mask_stack(mask, self.out_dir / 'pseudo_masks', record_stem(i, sample)):
                    self._record(p)

            self._record(run_log.export_thresholds(self.out_dir / 'thresholds.tsv', labels.names))
            trainings = run_log.get_trainings()
            self._record(write_table(
                self.out_dir / 'trainings.tsv',
                ['iteration', 'fold', 'train_records', 'held_out_records', 'pixels',
                 'initial_loss', 'final_loss'],
                [[t['iteration'], t['fold'], len(t['train_records']), len(t['held_out_records']),
                  t['pixels'], t['initial_loss'], t['final_loss']] for t in trainings],
            ))
            fold_count, final_count = run_log.count_trainings(), run_log.count_trainings(final=True)

        self._check_written_masks(samples, labels.count)
        logger.info(f"📊 Entraînements: {fold_count} de fold + {final_count} final")
        self._write_run_manifest('train', {'manifest': manifest.path},
                                 {'fold_trainings': fold_count, 'final_trainings': final_count})

    def _check_written_masks(self, samples, class_count: int):
        for i, sample in enumerate(samples):
            dims = (sample.image.width, sample.image.height, class_count)
            read_mask_stack(self.out_dir / 'pseudo_masks', record_stem(i, sample), dims)

    def cmd_sigma_sweep(self, manifest_path: Optional[str], test_manifest_path: Optional[str]):
        """Balayage de σ par J_approx, avec le vrai Jaccard de test si un jeu de test est fourni"""
        manifest = self._manifest(manifest_path)
        samples = load_samples(manifest, self.threads)
        labels = manifest.labels

        test_set, test_path = None, None
        if test_manifest_path or self.run_config.paths.test_manifest:
            test_manifest = self._manifest(test_manifest_path, role='test')
            _check_labels(manifest, test_manifest)
            test_set = (load_samples(test_manifest, self.threads), load_ground_truth(test_manifest))
            test_path = test_manifest.path

        result = sigma_sweep(
            samples, labels, self.run_config.sweep.sigma_grid, self.run_config.em_config(),
            backend=self._backend(), threads=self.threads, test_set=test_set,
            include_background=self.run_config.evaluation.include_background,
        )
        self._record(write_sweep_report(result, labels, self.out_dir / 'sigma_sweep.tsv'))
        extra = {'best_sigma': result.best_sigma}
        if result.best_test_sigma is not None:
            extra['best_test_sigma'] = result.best_test_sigma
        self._write_run_manifest('sigma-sweep', {'manifest': manifest.path, 'test_manifest': test_path},
                                 extra)

    def cmd_eval(self, manifest_path: Optional[str], model_path: str):
        """Jaccard par classe (fond inclus) d'un modèle sauvegardé"""
        manifest = self._manifest(manifest_path, role='test')
        model = load_model(model_path)
        if model.label_count != manifest.labels.count:
            raise ValueError(
                f"Modèle à {model.label_count} classes pour un manifeste à {manifest.labels.count}"
            )
        report = evaluate(
            load_samples(manifest, self.threads), load_ground_truth(manifest), model, manifest.labels,
            backend=LogisticSegmenter(model.feature_config),
            include_background=self.run_config.evaluation.include_background, threads=self.threads,
        )
        self._record(write_jaccard_table([('eval', report)], self.out_dir / 'jaccard.tsv'))
        self._write_run_manifest('eval', {'manifest': manifest.path, 'model': model_path},
                                 {'mean_jaccard': report.mean})

    def cmd_ablate(self, manifest_path: Optional[str], test_manifest_path: Optional[str]):
        """Matrice d'ablation: une ligne par (k, mode, borne, agrégateur)"""
        manifest = self._manifest(manifest_path)
        samples = load_samples(manifest, self.threads)
        ablation = self.run_config.ablation_config()

        train_gt = load_ground_truth(manifest) if ablation.keypoint_counts else None
        if test_manifest_path or self.run_config.paths.test_manifest:
            test_manifest = self._manifest(test_manifest_path, role='test')
            _check_labels(manifest, test_manifest)
        else:
            logger.warning("⚠️ Aucun jeu de test: évaluation sur le jeu d'entraînement")
            test_manifest = manifest
        test_samples = load_samples(test_manifest, self.threads)
        test_gt = load_ground_truth(test_manifest)

        rows = run_ablation(
            samples, manifest.labels, self.run_config.em_config(), ablation, test_samples, test_gt,
            train_ground_truth=train_gt, backend=self._backend(), threads=self.threads,
            include_background=self.run_config.evaluation.include_background,
        )
        self._record(write_ablation_table(rows, self.out_dir / 'ablation.tsv'))
        self._write_run_manifest('ablate', {'manifest': manifest.path,
                                            'test_manifest': test_manifest.path},
                                 {'rows': len(rows)})


def _check_labels(train: DatasetManifest, test: DatasetManifest):
    if train.labels != test.labels:
        raise ValueError(f"Classes différentes: {train.labels.names} / {test.labels.names}")


# ============================================
# LIGNE DE COMMANDE
# ============================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='affordance-em',
        description="Segmentation d'affordances faiblement supervisée (EM + binarisation adaptative)",
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {VERSION}')
    sub = parser.add_subparsers(dest='command', required=True)

    def add(name, help_text, manifest=True, test=False):
        p = sub.add_parser(name, help=help_text)
        if manifest:
            p.add_argument('manifest', nargs='?', help='Manifeste YAML (défaut: paths.*_manifest)')
        if test:
            p.add_argument('--test-manifest', help='Manifeste de test avec vérité terrain')
        p.add_argument('--config', help='Configuration YAML de l\'exécution')
        p.add_argument('--out', required=True, help='Dossier de sortie')
        p.add_argument('--threads', type=int, default=None,
                       help='Plafond de workers (défaut: AFFORDANCE_THREADS)')
        p.add_argument('--verbose', '-v', action='store_true', help='Logs DEBUG en console')
        return p

    add('synth-gen', 'Génère un jeu synthétique', manifest=False)
    add('init', 'Initialise les masques par disques').add_argument(
        '--sigma', type=float, default=None, help='Fraction de largeur (défaut: init.sigma_fraction)')
    add('train', 'Pipeline EM complet').add_argument(
        '--checkpoints', action='store_true', help='Écrit masques et modèles de chaque itération')
    add('sigma-sweep', 'Choix de σ par J_approx', test=True)
    add('eval', 'Jaccard d\'un modèle sur un manifeste avec vérité terrain').add_argument(
        '--model', required=True, help='Modèle WSM1')
    add('ablate', 'Matrice d\'ablation de la binarisation', test=True)
    return parser


def main(argv=None) -> int:
    """Point d'entrée principal"""
    args = build_parser().parse_args(argv)
    set_console_level(logging.DEBUG if args.verbose else config.LOG_LEVEL)

    try:
        config.validate()
        run_config = load_run_config(args.config)
        threads = args.threads if args.threads is not None else config.THREADS

        logger.info("=" * 60)
        logger.info(f"🚀 AFFORDANCE EM {VERSION} - {args.command}")
        logger.info("=" * 60)

        harness = Harness(run_config, args.out, threads)
        if args.command == 'synth-gen':
            harness.cmd_synth_gen()
        elif args.command == 'init':
            harness.cmd_init(args.manifest, args.sigma)
        elif args.command == 'train':
            harness.cmd_train(args.manifest, args.checkpoints)
        elif args.command == 'sigma-sweep':
            harness.cmd_sigma_sweep(args.manifest, args.test_manifest)
        elif args.command == 'eval':
            harness.cmd_eval(args.manifest, args.model)
        elif args.command == 'ablate':
            harness.cmd_ablate(args.manifest, args.test_manifest)
        return 0

    except Exception as e:
        logger.error(f"❌ {args.command}: {e}")
        logger.debug(traceback.format_exc())
        return 1


if __name__ == "__main__":
    sys.exit(main())
