"""
Générateur de jeux de données synthétiques multi-label avec vérité terrain exacte
Formes colorées (disques, rectangles) sur fond texturé, points-clés tirés de la vérité terrain
"""
import colorsys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from modules.data_model import (
    ImageTensor,
    Keypoint,
    KeypointAnnotation,
    LabelSpace,
    ManifestRecord,
    MaskStack,
    Sample,
    write_image,
    write_manifest,
    write_mask_stack,
)
from utils.logger import logger
from utils.seeding import derive_seed, make_rng


SHAPE_KINDS = ('disk', 'rectangle')
AFFORDANCE_NAMES = ('grasp', 'cut', 'contain', 'pour', 'support', 'hold', 'open')

# Gris du fond texturé, vers lequel le contraste atténue les formes
BACKGROUND_GRAY = 0.3

# Préréglage "benchmark": base de tous les contrôles directionnels
BENCHMARK_TRAIN_IMAGES = 60
BENCHMARK_TEST_IMAGES = 30
TEST_INDEX_OFFSET = 100_000


@dataclass(frozen=True)
class SynthConfig:
    """
    size_variation: rapport max/min du rayon des formes entre images
    (la surface des régions varie donc de size_variation² entre images)
    contrast_range: bornes du contraste des formes par rapport au fond, tiré
    une fois par image (1 = couleur de classe pure)
    """
    image_size: int = 48
    class_count: int = 3
    shapes_per_image: Tuple[int, int] = (1, 3)
    shape_kinds: Tuple[str, ...] = SHAPE_KINDS
    class_colors: Optional[Tuple[Tuple[float, float, float], ...]] = None
    noise: float = 0.04
    overlap_probability: float = 0.3
    keypoints_per_class: int = 1
    background_keypoints: int = 0
    size_variation: float = 3.0
    contrast_range: Tuple[float, float] = (1.0, 1.0)
    base_radius: float = 0.14
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'shapes_per_image', tuple(int(v) for v in self.shapes_per_image))
        object.__setattr__(self, 'shape_kinds', tuple(self.shape_kinds))
        object.__setattr__(self, 'contrast_range', tuple(float(v) for v in self.contrast_range))
        if self.class_colors is not None:
            object.__setattr__(self, 'class_colors',
                               tuple(tuple(float(c) for c in rgb) for rgb in self.class_colors))

        if self.image_size < 16:
            raise ValueError(f"image_size doit être >= 16, reçu {self.image_size}")
        if self.class_count < 2:
            raise ValueError(f"class_count doit être >= 2, reçu {self.class_count}")
        if self.keypoints_per_class < 1:
            raise ValueError(f"keypoints_per_class doit être >= 1, reçu {self.keypoints_per_class}")
        if self.background_keypoints < 0:
            raise ValueError("background_keypoints doit être >= 0")
        if self.noise < 0:
            raise ValueError(f"noise doit être >= 0, reçu {self.noise}")
        if not 0.0 <= self.overlap_probability <= 1.0:
            raise ValueError(f"overlap_probability doit être dans [0, 1], reçu {self.overlap_probability}")
        if self.size_variation < 1.0:
            raise ValueError(f"size_variation doit être >= 1, reçu {self.size_variation}")
        lo_c, hi_c = self.contrast_range
        if not 0.0 < lo_c <= hi_c <= 1.0:
            raise ValueError(f"contrast_range doit vérifier 0 < min <= max <= 1, reçu {self.contrast_range}")
        if not 0.0 < self.base_radius <= 0.5:
            raise ValueError(f"base_radius doit être dans ]0, 0.5], reçu {self.base_radius}")
        lo, hi = self.shapes_per_image
        if not 1 <= lo <= hi:
            raise ValueError(f"shapes_per_image invalide: {self.shapes_per_image}")
        if not self.shape_kinds or set(self.shape_kinds) - set(SHAPE_KINDS):
            raise ValueError(f"shape_kinds doit être un sous-ensemble de {SHAPE_KINDS}")
        if self.class_colors is not None:
            colors = np.asarray(self.class_colors)
            if colors.shape != (self.class_count, 3) or colors.min() < 0 or colors.max() > 1:
                raise ValueError(f"class_colors: {self.class_count} couleurs RGB dans [0, 1] requises")

    def palette(self) -> np.ndarray:
        """Couleur (L, 3) de chaque classe; teintes équidistantes par défaut"""
        if self.class_colors is not None:
            return np.asarray(self.class_colors, dtype=np.float64)
        return np.array([
            colorsys.hsv_to_rgb(l / self.class_count, 0.85, 0.9) for l in range(self.class_count)
        ])

    def labels(self) -> LabelSpace:
        names = [AFFORDANCE_NAMES[l] if l < len(AFFORDANCE_NAMES) else f'class{l}'
                 for l in range(self.class_count)]
        return LabelSpace(tuple(names))


def benchmark_config(**overrides) -> SynthConfig:
    """Préréglage figé: 3 classes, forte variation de taille et de contraste entre images"""
    params = dict(image_size=48, class_count=3, size_variation=3.0, contrast_range=(0.35, 1.0),
                  overlap_probability=0.3, noise=0.04, keypoints_per_class=1, rng_seed=0)
    params.update(overrides)
    return SynthConfig(**params)


@dataclass(frozen=True, eq=False)
class SyntheticSample:
    name: str
    image: ImageTensor
    ground_truth: MaskStack
    keypoints: KeypointAnnotation
    shortfalls: Dict[int, int]

    def as_sample(self) -> Sample:
        """Vue d'entraînement: la vérité terrain n'en fait pas partie"""
        return Sample(self.name, self.image, self.keypoints)


# ============================================
# RENDU
# ============================================

def _background(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    size = cfg.image_size
    ys, xs = np.mgrid[:size, :size]
    fx, fy = rng.uniform(1.0, 4.0, size=2)
    phase = rng.uniform(0.0, 2 * np.pi)
    texture = 0.06 * np.sin(2 * np.pi * (fx * xs + fy * ys) / size + phase)
    gray = BACKGROUND_GRAY + texture
    return np.repeat(gray[:, :, None], 3, axis=2)


def _shape_region(kind: str, cx: float, cy: float, radius: float, aspect: float,
                  size: int) -> np.ndarray:
    ys, xs = np.mgrid[:size, :size]
    if kind == 'disk':
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= radius ** 2
    half_w, half_h = radius * aspect, radius / aspect
    return (np.abs(xs - cx) <= half_w) & (np.abs(ys - cy) <= half_h)


def render(cfg: SynthConfig, rng: np.random.Generator) -> Tuple[ImageTensor, MaskStack]:
    """
    Dessine une image et sa vérité terrain

    Les formes sont peintes dans l'ordre: une forme plus récente recouvre les
    précédentes, image et labels compris. Une forme porte une classe principale
    et, avec la probabilité overlap_probability, une seconde classe (régions
    d'affordance superposées). Sa couleur est la moyenne des couleurs de ses classes,
    rapprochée du gris du fond selon le contraste tiré pour l'image.
    """
    size = cfg.image_size
    palette = cfg.palette()
    pixels = _background(cfg, rng)
    top = np.full((size, size), -1, dtype=int)

    scale = cfg.size_variation ** rng.uniform(-0.5, 0.5)
    contrast = rng.uniform(*cfg.contrast_range)
    count = int(rng.integers(cfg.shapes_per_image[0], cfg.shapes_per_image[1] + 1))
    label_sets = []
    for s in range(count):
        kind = cfg.shape_kinds[int(rng.integers(len(cfg.shape_kinds)))]
        primary = int(rng.integers(cfg.class_count))
        classes = {primary}
        if rng.random() < cfg.overlap_probability:
            others = [l for l in range(cfg.class_count) if l != primary]
            classes.add(others[int(rng.integers(len(others)))])
        label_sets.append(sorted(classes))

        radius = min(cfg.base_radius * size * scale * rng.uniform(0.85, 1.15), size / 2 - 1)
        aspect = rng.uniform(0.7, 1.4)
        cx, cy = rng.uniform(radius, size - 1 - radius, size=2)
        region = _shape_region(kind, cx, cy, radius, aspect, size)
        top[region] = s
        color = palette[sorted(classes)].mean(axis=0)
        pixels[region] = BACKGROUND_GRAY + contrast * (color - BACKGROUND_GRAY)

    bits = np.zeros((cfg.class_count, size, size), dtype=bool)
    for s, classes in enumerate(label_sets):
        for l in classes:
            bits[l] |= top == s

    if cfg.noise > 0:
        pixels = pixels + rng.normal(0.0, cfg.noise, size=pixels.shape)
    quantized = np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    return ImageTensor.from_uint8(quantized), MaskStack(bits)


def sample_keypoints(gt: MaskStack, k: int, seed: int,
                     background: int = 0) -> Tuple[KeypointAnnotation, Dict[int, int]]:
    """
    Tire k pixels sans remise dans chaque plan de classe non vide

    Args:
        gt: Vérité terrain
        k: Points-clés par classe présente
        seed: Graine du tirage
        background: Points-clés de fond (pixels sans affordance)

    Returns:
        (KeypointAnnotation, manques par classe): une région de moins de k pixels
        fournit tous ses pixels et le manque est signalé
    """
    if k < 1:
        raise ValueError(f"k doit être >= 1, reçu {k}")
    rng = np.random.default_rng(seed)
    entries, shortfalls = [], {}
    for l in range(gt.classes):
        flat = np.flatnonzero(gt.plane(l))
        if flat.size == 0:
            continue
        if flat.size < k:
            shortfalls[l] = k - int(flat.size)
            logger.warning(f"⚠️ Classe {l}: {flat.size} pixels pour {k} points-clés demandés")
            chosen = flat
        else:
            chosen = np.sort(rng.choice(flat, size=k, replace=False))
        entries.extend(Keypoint(l, int(i % gt.width), int(i // gt.width)) for i in chosen)

    bck = []
    if background:
        flat = np.flatnonzero(~gt.bits.any(axis=0))
        take = min(background, int(flat.size))
        chosen = np.sort(rng.choice(flat, size=take, replace=False)) if take else []
        bck = [(int(i % gt.width), int(i // gt.width)) for i in chosen]

    return KeypointAnnotation(tuple(entries), tuple(bck)), shortfalls


def generate(cfg: SynthConfig, n_images: int, offset: int = 0) -> List[SyntheticSample]:
    """
    Génère n_images échantillons, graine dérivée par image (index + offset)

    Args:
        cfg: Configuration du générateur
        n_images: Nombre d'images
        offset: Décalage d'index (sépare les jeux d'entraînement et de test)

    Returns:
        List[SyntheticSample]
    """
    samples = []
    for i in range(offset, offset + n_images):
        image, gt = render(cfg, make_rng(cfg.rng_seed, 'synth', i))
        keypoints, shortfalls = sample_keypoints(
            gt, cfg.keypoints_per_class, derive_seed(cfg.rng_seed, 'keypoints', i),
            cfg.background_keypoints,
        )
        samples.append(SyntheticSample(f'{i:06d}', image, gt, keypoints, shortfalls))
    logger.debug(f"{n_images} images synthétiques générées (offset {offset})")
    return samples


def resample_keypoints(samples: Sequence[Sample], ground_truth: Sequence[MaskStack], k: int,
                       seed: int) -> List[Sample]:
    """Mêmes images, k points-clés par classe tirés de nouveau depuis la vérité terrain"""
    if len(samples) != len(ground_truth):
        raise ValueError("Vérité terrain manquante pour une partie des images")
    resampled = []
    for i, (s, gt) in enumerate(zip(samples, ground_truth)):
        keypoints, _ = sample_keypoints(gt, k, derive_seed(seed, 'keypoints', i, k),
                                        len(s.keypoints.background))
        resampled.append(Sample(s.name, s.image, keypoints))
    return resampled


def export_dataset(samples: Sequence[SyntheticSample], labels: LabelSpace, out_dir,
                   manifest_name: str = 'manifest.yaml') -> Path:
    """
    Écrit images PPM, masques PGM et le manifeste YAML

    Returns:
        Path: Chemin du manifeste
    """
    out_dir = Path(out_dir)
    records = []
    for s in samples:
        image_path = out_dir / 'images' / f'{s.name}.ppm'
        write_image(s.image, image_path)
        gt_paths = write_mask_stack(s.ground_truth, out_dir / 'gt', s.name)
        records.append(ManifestRecord(image_path, s.keypoints, tuple(gt_paths)))
    path = write_manifest(out_dir / manifest_name, labels, records)
    logger.info(f"✅ {len(samples)} images exportées: {path}")
    return path
