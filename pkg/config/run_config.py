"""
Configuration d'une exécution (fichier YAML)
Tout ce qui influence les résultats passe par ici; les options du CLI ne donnent que des chemins
"""
from dataclasses import MISSING, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

import yaml

from modules.binarization import ThresholdPolicy
from modules.classifier import FeatureConfig, TrainConfig
from modules.em_trainer import EmConfig
from modules.experiments import AblationConfig
from modules.initialization import DEFAULT_SIGMA_GRID, InitConfig
from modules.synth import BENCHMARK_TEST_IMAGES, BENCHMARK_TRAIN_IMAGES, SynthConfig
from utils.logger import logger
from utils.seeding import derive_seed


class ConfigError(ValueError):
    """Configuration invalide; path désigne la clé fautive (ex: 'train.epochs')"""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


# ============================================
# SECTIONS SANS DATACLASS DE MODULE
# ============================================

@dataclass(frozen=True)
class EmSection:
    em_iterations: int = 2

    def __post_init__(self):
        if self.em_iterations < 1:
            raise ValueError(f"em_iterations doit être >= 1, reçu {self.em_iterations}")


@dataclass(frozen=True)
class DatasetSizes:
    train_images: int = BENCHMARK_TRAIN_IMAGES
    test_images: int = BENCHMARK_TEST_IMAGES

    def __post_init__(self):
        if self.train_images < 3:
            raise ValueError(f"train_images doit être >= 3, reçu {self.train_images}")
        if self.test_images < 0:
            raise ValueError(f"test_images doit être >= 0, reçu {self.test_images}")


@dataclass(frozen=True)
class SweepSection:
    sigma_grid: Tuple[float, ...] = DEFAULT_SIGMA_GRID

    def __post_init__(self):
        object.__setattr__(self, 'sigma_grid', tuple(float(s) for s in self.sigma_grid))
        if not self.sigma_grid:
            raise ValueError("sigma_grid vide")
        for s in self.sigma_grid:
            InitConfig(s)


@dataclass(frozen=True)
class EvaluationSection:
    include_background: bool = True


@dataclass(frozen=True)
class PathsSection:
    train_manifest: Optional[str] = None
    test_manifest: Optional[str] = None


# Clés validées seulement avec leur section (contraintes entre clés)
CROSS_FIELD_KEYS = {
    (ThresholdPolicy, 'mode'),
    (ThresholdPolicy, 'fixed_threshold'),
    (SynthConfig, 'class_colors'),
    (SynthConfig, 'class_count'),
}

# Clés de synth réservées à la taille des jeux générés
SIZE_KEYS = ('train_images', 'test_images')


# ============================================
# CONFIGURATION COMPLÈTE
# ============================================

@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    init: InitConfig = field(default_factory=InitConfig)
    policy: ThresholdPolicy = field(default_factory=ThresholdPolicy)
    train: TrainConfig = field(default_factory=TrainConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    em: EmSection = field(default_factory=EmSection)
    synth: SynthConfig = field(default_factory=SynthConfig)
    sizes: DatasetSizes = field(default_factory=DatasetSizes)
    sweep: SweepSection = field(default_factory=SweepSection)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    paths: PathsSection = field(default_factory=PathsSection)
    source: Optional[str] = None

    def em_config(self) -> EmConfig:
        """EmConfig du pipeline, graines dérivées de seed"""
        return EmConfig(
            em_iterations=self.em.em_iterations,
            init=self.init,
            policy=self.policy,
            train=replace(self.train, rng_seed=derive_seed(self.seed, 'train')),
            rng_seed=self.seed,
        )

    def synth_config(self) -> SynthConfig:
        return replace(self.synth, rng_seed=self.seed)

    def ablation_config(self) -> AblationConfig:
        return replace(self.ablation, rng_seed=self.seed)

    def resolve_path(self, value: Optional[str]) -> Optional[Path]:
        """Chemin relatif au dossier du fichier de configuration"""
        if value is None:
            return None
        path = Path(value)
        if self.source and not path.is_absolute():
            path = Path(self.source).parent / path
        return path

    def snapshot(self) -> dict:
        """Dictionnaire simple, ordre de clés stable, pour le manifeste d'exécution"""
        synth = _section_dict(self.synth)
        synth.update(_section_dict(self.sizes))
        return {
            'seed': self.seed,
            'init': _section_dict(self.init),
            'policy': _section_dict(self.policy),
            'train': _section_dict(self.train),
            'features': _section_dict(self.features),
            'em': _section_dict(self.em),
            'synth': synth,
            'sweep': _section_dict(self.sweep),
            'ablation': _section_dict(self.ablation),
            'evaluation': _section_dict(self.evaluation),
            'paths': _section_dict(self.paths),
        }


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def _section_dict(obj) -> dict:
    return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj) if f.name != 'rng_seed'}


# ============================================
# CHARGEMENT
# ============================================

def _default(f):
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:
        return f.default_factory()
    return None


def _coerce(value, default, path: str):
    """Convertit une valeur YAML vers le type de la valeur par défaut"""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"booléen attendu, reçu {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"entier attendu, reçu {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"nombre attendu, reçu {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"texte attendu, reçu {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"liste attendue, reçu {value!r}")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value


def _build_section(cls, raw, section: str, skip: Tuple[str, ...] = ()):
    """
    Construit une dataclass de section depuis un dict YAML

    Chaque clé est validée seule (le chemin de l'erreur désigne la clé),
    puis la section complète (contraintes entre clés).

    Raises:
        ConfigError: Clé inconnue, type ou valeur invalide
    """
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(section, "table attendue")

    known = {f.name: f for f in fields(cls) if f.name != 'rng_seed'}
    kwargs = {}
    for key, value in raw.items():
        if key in skip:
            continue
        if key not in known:
            raise ConfigError(f'{section}.{key}', "clé inconnue")
        path = f'{section}.{key}'
        kwargs[key] = _coerce(value, _default(known[key]), path) if value is not None else None
        if (cls, key) in CROSS_FIELD_KEYS:
            continue
        try:
            cls(**{key: kwargs[key]})
        except (TypeError, ValueError) as e:
            raise ConfigError(path, str(e))

    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(section, str(e))


SECTIONS = {
    'init': InitConfig,
    'policy': ThresholdPolicy,
    'train': TrainConfig,
    'features': FeatureConfig,
    'em': EmSection,
    'synth': SynthConfig,
    'sweep': SweepSection,
    'ablation': AblationConfig,
    'evaluation': EvaluationSection,
    'paths': PathsSection,
}


def parse_run_config(doc, source: str = None) -> RunConfig:
    """
    Construit une RunConfig depuis un document YAML déjà chargé

    Args:
        doc: dict (None = toutes les valeurs par défaut)
        source: Fichier d'origine (résolution des chemins relatifs)

    Raises:
        ConfigError: Avec le chemin de la clé fautive
    """
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError('<racine>', "table attendue")

    unknown = set(doc) - set(SECTIONS) - {'seed'}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "clé inconnue")

    seed = _coerce(doc.get('seed', 0), 0, 'seed')
    if seed < 0:
        raise ConfigError('seed', f"doit être >= 0, reçu {seed}")

    parts = {}
    for name, cls in SECTIONS.items():
        skip = SIZE_KEYS if name == 'synth' else ()
        parts[name] = _build_section(cls, doc.get(name), name, skip)

    synth_raw = doc.get('synth') or {}
    sizes = _build_section(DatasetSizes, {k: synth_raw[k] for k in SIZE_KEYS if k in synth_raw}, 'synth')

    return RunConfig(seed=seed, sizes=sizes, source=source, **parts)


def load_run_config(path=None) -> RunConfig:
    """
    Charge une configuration YAML (valeurs par défaut si path est None)

    Raises:
        ConfigError: Fichier introuvable, YAML invalide, clé inconnue ou valeur hors domaine
    """
    if path is None:
        logger.info("⚙️ Aucune configuration fournie: valeurs par défaut")
        return RunConfig()

    path = Path(path)
    if not path.is_file():
        raise ConfigError('<fichier>', f"configuration introuvable: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding='utf-8'))
    except yaml.YAMLError as e:
        raise ConfigError('<fichier>', f"YAML invalide: {e}")

    run_config = parse_run_config(doc, source=str(path))
    logger.info(f"✅ Configuration chargée: {path} (seed {run_config.seed})")
    return run_config
