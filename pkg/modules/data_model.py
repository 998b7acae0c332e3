"""
Types du domaine, manifestes de jeux de données et E/S des fichiers
Convention partagée: l'index de pixel i est linéarisé ligne-majeur, i = y * width + x
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Set, Tuple

import numpy as np
import yaml

from utils.logger import logger
from utils.netpbm import (
    FormatError,
    read_fpm,
    read_netpbm,
    read_netpbm_header,
    write_fpm,
    write_netpbm,
)


BACKGROUND_NAME = 'Bck'

__all__ = [
    'BACKGROUND_NAME', 'FormatError', 'ManifestError', 'LabelSpace', 'ImageTensor',
    'Keypoint', 'KeypointAnnotation', 'MaskStack', 'ProbMapStack', 'ManifestRecord',
    'DatasetManifest', 'Sample', 'load_manifest', 'write_manifest', 'load_samples',
    'load_ground_truth', 'read_image', 'write_image', 'mask_path', 'write_mask_stack',
    'read_mask_stack', 'read_mask_files', 'write_prob_map', 'read_prob_map',
]


class ManifestError(ValueError):
    """Manifeste introuvable ou enregistrement invalide"""


# ============================================
# TYPES DU DOMAINE
# ============================================

@dataclass(frozen=True)
class LabelSpace:
    """Classes d'affordance ordonnées (le fond n'en fait pas partie)"""
    names: Tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, 'names', names)
        if not names:
            raise ValueError("LabelSpace vide: au moins une classe requise")
        if any(not isinstance(n, str) or not n for n in names):
            raise ValueError(f"Noms de classe invalides: {names!r}")
        if len(set(names)) != len(names):
            raise ValueError(f"Noms de classe dupliqués: {names!r}")
        if BACKGROUND_NAME in names:
            raise ValueError(f"'{BACKGROUND_NAME}' est réservé au fond dérivé")

    @property
    def count(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"Classe inconnue: {name!r}")

    def name(self, index: int) -> str:
        return self.names[index]


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """Image H x W x C, valeurs normalisées dans [0, 1]"""
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"Image de forme invalide {data.shape}")
        if not np.all((data >= 0.0) & (data <= 1.0)):
            raise ValueError("Valeurs d'image hors de [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def pixel_count(self) -> int:
        return self.width * self.height

    @classmethod
    def from_uint8(cls, pixels: np.ndarray, maxval: int = 255) -> 'ImageTensor':
        return cls(np.asarray(pixels, dtype=np.float64) / float(maxval))

    def to_uint8(self) -> np.ndarray:
        return np.rint(self.data * 255.0).astype(np.uint8)


class Keypoint(NamedTuple):
    class_index: int
    x: int
    y: int


@dataclass(frozen=True)
class KeypointAnnotation:
    """
    Ensemble Z des points-clés d'une image

    Une classe sans point-clé est absente de l'image. `background` liste des
    pixels (x, y) annotés sans aucune affordance.
    """
    entries: Tuple[Keypoint, ...] = ()
    background: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'entries', tuple(Keypoint(*map(int, e)) for e in self.entries))
        object.__setattr__(self, 'background', tuple((int(x), int(y)) for x, y in self.background))

    def for_class(self, class_index: int) -> List[Keypoint]:
        return [k for k in self.entries if k.class_index == class_index]

    def classes_present(self) -> Set[int]:
        return {k.class_index for k in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def validate(self, width: int, height: int, class_count: int):
        """
        Vérifie les invariants pour l'image propriétaire

        Raises:
            ValueError: Point-clé hors image ou classe inconnue
        """
        for k in self.entries:
            if not 0 <= k.class_index < class_count:
                raise ValueError(f"classe {k.class_index} hors de [0, {class_count})")
            if not (0 <= k.x < width and 0 <= k.y < height):
                raise ValueError(
                    f"point-clé ({k.x}, {k.y}) hors de l'image {width}x{height}"
                )
        for x, y in self.background:
            if not (0 <= x < width and 0 <= y < height):
                raise ValueError(f"point-clé de fond ({x}, {y}) hors de l'image {width}x{height}")


@dataclass(frozen=True, eq=False)
class MaskStack:
    """Pile binaire (L, H, W) de labels ŷ, multi-label: les classes peuvent se chevaucher"""
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 3 or min(bits.shape) < 1:
            raise ValueError(f"MaskStack de forme invalide {bits.shape}")
        if bits.dtype != np.bool_:
            if not np.all((bits == 0) | (bits == 1)):
                raise ValueError("MaskStack: valeurs différentes de 0/1")
        bits = np.array(bits, dtype=bool)
        bits.setflags(write=False)
        object.__setattr__(self, 'bits', bits)

    @classmethod
    def zeros(cls, classes: int, height: int, width: int) -> 'MaskStack':
        return cls(np.zeros((classes, height, width), dtype=bool))

    @property
    def classes(self) -> int:
        return self.bits.shape[0]

    @property
    def height(self) -> int:
        return self.bits.shape[1]

    @property
    def width(self) -> int:
        return self.bits.shape[2]

    def plane(self, class_index: int) -> np.ndarray:
        return self.bits[class_index]

    def matches(self, image: 'ImageTensor', class_count: int) -> bool:
        return (self.width, self.height, self.classes) == (image.width, image.height, class_count)

    def __eq__(self, other):
        if not isinstance(other, MaskStack):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ProbMapStack:
    """Probabilités a posteriori (L, H, W), sigmoïdes indépendantes par classe, en float32 comme FPM1"""
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValueError(f"ProbMapStack de forme invalide {values.shape}")
        if not np.all((values >= 0.0) & (values <= 1.0)):
            raise ValueError("ProbMapStack: probabilité hors de [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def classes(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def at(self, class_index: int, x: int, y: int) -> float:
        return float(self.values[class_index, y, x])


@dataclass(frozen=True)
class ManifestRecord:
    image_path: Path
    keypoints: KeypointAnnotation
    gt_mask_paths: Optional[Tuple[Path, ...]] = None

    @property
    def name(self) -> str:
        return Path(self.image_path).stem


@dataclass(frozen=True)
class DatasetManifest:
    labels: LabelSpace
    records: Tuple[ManifestRecord, ...] = ()
    path: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def has_ground_truth(self) -> bool:
        return bool(self.records) and all(r.gt_mask_paths for r in self.records)


class Sample(NamedTuple):
    """Entrée d'entraînement: l'image et ses points-clés, jamais la vérité terrain"""
    name: str
    image: ImageTensor
    keypoints: KeypointAnnotation


# ============================================
# MANIFESTE
# ============================================

def _integer(value, index: int, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ManifestError(f"record {index}: {name} entier attendu, reçu {value!r}")
    return value


def _parse_keypoints(raw, labels: LabelSpace, index: int) -> List[Keypoint]:
    entries = []
    for item in raw or []:
        if not isinstance(item, dict) or not {'class', 'x', 'y'} <= set(item):
            raise ManifestError(f"record {index}: point-clé mal formé {item!r}")
        cls = item['class']
        if isinstance(cls, str):
            try:
                cls = labels.index(cls)
            except KeyError as e:
                raise ManifestError(f"record {index}: {e}")
        entries.append(Keypoint(_integer(cls, index, 'class'), _integer(item['x'], index, 'x'),
                                _integer(item['y'], index, 'y')))
    return entries


def _parse_record(raw, labels: LabelSpace, root: Path, index: int) -> ManifestRecord:
    if not isinstance(raw, dict) or 'image' not in raw:
        raise ManifestError(f"record {index}: champ 'image' manquant")
    unknown = set(raw) - {'image', 'keypoints', 'background_keypoints', 'gt_masks'}
    if unknown:
        raise ManifestError(f"record {index}: champs inconnus {sorted(unknown)}")

    image_path = root / raw['image']
    if not image_path.is_file():
        raise ManifestError(f"record {index}: image introuvable {image_path}")
    try:
        width, height, _ = read_netpbm_header(image_path)
    except FormatError as e:
        raise ManifestError(f"record {index}: {e}")

    try:
        background = [(_integer(b['x'], index, 'x'), _integer(b['y'], index, 'y'))
                      for b in raw.get('background_keypoints') or []]
    except (TypeError, KeyError):
        raise ManifestError(f"record {index}: background_keypoints mal formé")
    keypoints = KeypointAnnotation(_parse_keypoints(raw.get('keypoints'), labels, index), background)
    try:
        keypoints.validate(width, height, labels.count)
    except ValueError as e:
        raise ManifestError(f"record {index}: {e}")

    gt_paths = None
    if raw.get('gt_masks') is not None:
        gt_paths = tuple(root / p for p in raw['gt_masks'])
        if len(gt_paths) != labels.count:
            raise ManifestError(
                f"record {index}: {len(gt_paths)} masques, {labels.count} classes"
            )
        for p in gt_paths:
            if not p.is_file():
                raise ManifestError(f"record {index}: masque introuvable {p}")
            try:
                mw, mh, _ = read_netpbm_header(p)
            except FormatError as e:
                raise ManifestError(f"record {index}: {e}")
            if (mw, mh) != (width, height):
                raise ManifestError(
                    f"record {index}: masque {p.name} {mw}x{mh} pour une image {width}x{height}"
                )

    return ManifestRecord(image_path, keypoints, gt_paths)


def load_manifest(path) -> DatasetManifest:
    """
    Charge et valide un manifeste YAML

    Args:
        path: Fichier manifeste (chemins relatifs à son dossier)

    Returns:
        DatasetManifest: Enregistrements dans l'ordre du fichier

    Raises:
        ManifestError: Fichier manquant, enregistrement mal formé, point-clé hors image
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"Manifeste introuvable: {path}")

    try:
        doc = yaml.safe_load(path.read_text(encoding='utf-8')) or {}
    except yaml.YAMLError as e:
        raise ManifestError(f"Manifeste illisible {path}: {e}")
    if not isinstance(doc, dict) or 'labels' not in doc:
        raise ManifestError(f"{path}: champ 'labels' manquant")

    try:
        labels = LabelSpace(tuple(doc['labels']))
    except (TypeError, ValueError) as e:
        raise ManifestError(f"{path}: labels invalides: {e}")

    raw_records = doc.get('records') or []
    if not isinstance(raw_records, list):
        raise ManifestError(f"{path}: 'records' doit être une liste")

    root = path.parent
    records = tuple(_parse_record(raw, labels, root, i) for i, raw in enumerate(raw_records))
    logger.debug(f"Manifeste chargé: {path} ({len(records)} enregistrements)")
    return DatasetManifest(labels, records, path)


def write_manifest(path, labels: LabelSpace, records: Sequence[ManifestRecord]) -> Path:
    """
    Écrit un manifeste YAML, chemins relatifs au dossier du manifeste

    Returns:
        Path: Chemin du manifeste
    """
    path = Path(path)
    root = path.parent
    root.mkdir(parents=True, exist_ok=True)

    def rel(p):
        return Path(os.path.relpath(p, root)).as_posix()

    doc_records = []
    for r in records:
        entry = {
            'image': rel(r.image_path),
            'keypoints': [{'class': k.class_index, 'x': k.x, 'y': k.y} for k in r.keypoints.entries],
        }
        if r.keypoints.background:
            entry['background_keypoints'] = [{'x': x, 'y': y} for x, y in r.keypoints.background]
        if r.gt_mask_paths:
            entry['gt_masks'] = [rel(p) for p in r.gt_mask_paths]
        doc_records.append(entry)

    doc = {'labels': list(labels.names), 'records': doc_records}
    path.write_text(yaml.safe_dump(doc, sort_keys=False), encoding='utf-8')
    return path


def load_samples(manifest: DatasetManifest, threads: int = 1) -> List[Sample]:
    """
    Charge les images et points-clés (entrées d'entraînement)

    Args:
        manifest: Manifeste validé
        threads: Nombre de lectures concurrentes

    Returns:
        List[Sample]: Dans l'ordre du manifeste
    """
    def load(record):
        return Sample(record.name, read_image(record.image_path), record.keypoints)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(load, manifest.records))


def load_ground_truth(manifest: DatasetManifest) -> List[MaskStack]:
    """
    Charge la vérité terrain (évaluation et oracle synthétique seulement)

    Raises:
        ManifestError: Un enregistrement sans vérité terrain
    """
    stacks = []
    for i, record in enumerate(manifest.records):
        if not record.gt_mask_paths:
            raise ManifestError(f"record {i}: vérité terrain manquante")
        stacks.append(read_mask_files(record.gt_mask_paths))
    return stacks


# ============================================
# IMAGES ET MASQUES
# ============================================

def read_image(path) -> ImageTensor:
    """
    Lit une image PPM (P6) ou PGM (P5, un canal) 8 bits

    Returns:
        ImageTensor: Valeurs divisées par maxval (255 en standard)
    """
    pixels, maxval = read_netpbm(path)
    return ImageTensor.from_uint8(pixels, maxval)


def write_image(image: ImageTensor, path):
    write_netpbm(path, image.to_uint8())


def mask_path(directory, stem: str, class_index: int) -> Path:
    return Path(directory) / f'{stem}.class{class_index}.pgm'


def write_mask_stack(mask: MaskStack, directory, stem: str) -> List[Path]:
    """
    Écrit un PGM par classe (0 ou 255), nommé `<stem>.class<k>.pgm`

    Returns:
        List[Path]: Fichiers écrits, dans l'ordre des classes
    """
    paths = []
    for k in range(mask.classes):
        p = mask_path(directory, stem, k)
        write_netpbm(p, mask.plane(k).astype(np.uint8) * 255)
        paths.append(p)
    return paths


def read_mask_files(paths: Sequence) -> MaskStack:
    """
    Lit une pile de masques depuis une liste de PGM (un par classe)

    Raises:
        FormatError: Octet autre que 0/255, fichier multi-canal ou dimensions incohérentes
    """
    planes = []
    for p in paths:
        pixels, _ = read_netpbm(p)
        if pixels.shape[2] != 1:
            raise FormatError(f"{p}: masque multi-canal")
        plane = pixels[:, :, 0]
        if not np.all((plane == 0) | (plane == 255)):
            raise FormatError(f"{p}: valeur de masque différente de 0/255")
        if planes and plane.shape != planes[0].shape:
            raise FormatError(f"{p}: dimensions {plane.shape}, {planes[0].shape} attendues")
        planes.append(plane == 255)
    if not planes:
        raise FormatError("Pile de masques vide")
    return MaskStack(np.stack(planes))


def read_mask_stack(directory, stem: str, dims: Tuple[int, int, int]) -> MaskStack:
    """
    Lit la pile `<stem>.class<k>.pgm` et vérifie ses dimensions

    Args:
        directory: Dossier des masques
        stem: Préfixe des fichiers
        dims: (width, height, classes) attendus

    Raises:
        FormatError: Dimensions différentes de dims
    """
    width, height, classes = dims
    stack = read_mask_files([mask_path(directory, stem, k) for k in range(classes)])
    if (stack.width, stack.height) != (width, height):
        raise FormatError(
            f"{stem}: masques {stack.width}x{stack.height}, {width}x{height} attendus"
        )
    return stack


def write_prob_map(probs: ProbMapStack, path):
    write_fpm(path, probs.values)


def read_prob_map(path) -> ProbMapStack:
    return ProbMapStack(read_fpm(path))

