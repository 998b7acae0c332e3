"""
Codecs binaires des fichiers du harnais
- PPM (P6) / PGM (P5) 8 bits: images et masques
- FPM1: piles de cartes de probabilités (float32 little-endian)
- WSM1: poids du segmenteur (float64 little-endian)
"""
import os
from typing import Tuple

import numpy as np


FPM_MAGIC = b'FPM1\n'
WSM_MAGIC = b'WSM1\n'

_WHITESPACE = b' \t\n\r\v\f'
HEADER_CHUNK = 512


class FormatError(ValueError):
    """Fichier mal formé (magic, dimensions ou valeurs hors domaine)"""


class TruncatedHeaderError(FormatError):
    """En-tête netpbm interrompu avant son dernier champ"""


# ============================================
# NETPBM (P5 / P6)
# ============================================

def _parse_netpbm_header(data: bytes, path) -> Tuple[bytes, int, int, int, int]:
    """
    Lit l'en-tête netpbm: magic, largeur, hauteur, maxval (commentaires '#' permis)

    Returns:
        (magic, width, height, maxval, offset du raster)
    """
    magic = data[:2]
    if magic not in (b'P5', b'P6'):
        raise FormatError(f"{path}: magic netpbm inattendu {magic!r} (P5 ou P6 requis)")

    tokens = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(data):
            raise TruncatedHeaderError(f"{path}: en-tête tronqué")
        byte = data[pos:pos + 1]
        if byte in _WHITESPACE:
            pos += 1
        elif byte == b'#':
            end = data.find(b'\n', pos)
            pos = len(data) if end < 0 else end + 1
        else:
            start = pos
            while pos < len(data) and data[pos:pos + 1] not in _WHITESPACE:
                pos += 1
            tokens.append(data[start:pos])

    if pos >= len(data):
        raise TruncatedHeaderError(f"{path}: en-tête tronqué")
    # Un seul caractère blanc sépare l'en-tête du raster
    pos += 1
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"{path}: en-tête netpbm non numérique {tokens!r}")

    if width < 1 or height < 1:
        raise FormatError(f"{path}: dimensions invalides {width}x{height}")
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: maxval {maxval} non supporté (8 bits seulement)")
    return magic, width, height, maxval, pos


def read_netpbm_header(path) -> Tuple[int, int, int]:
    """
    Lit seulement l'en-tête (pour valider un manifeste sans charger les pixels),
    par blocs tant que les commentaires le prolongent

    Returns:
        (width, height, channels)
    """
    with open(path, 'rb') as f:
        head = f.read(HEADER_CHUNK)
        while True:
            try:
                magic, width, height, _, _ = _parse_netpbm_header(head, path)
                break
            except TruncatedHeaderError:
                more = f.read(HEADER_CHUNK)
                if not more:
                    raise
                head += more
    return width, height, 1 if magic == b'P5' else 3


def read_netpbm(path) -> Tuple[np.ndarray, int]:
    """
    Lit un fichier P5/P6 8 bits

    Returns:
        (raster uint8 de forme (H, W, C), maxval)
    """
    with open(path, 'rb') as f:
        data = f.read()
    magic, width, height, maxval, offset = _parse_netpbm_header(data, path)
    channels = 1 if magic == b'P5' else 3

    expected = width * height * channels
    raster = data[offset:offset + expected]
    if len(raster) != expected:
        raise FormatError(f"{path}: raster de {len(raster)} octets, {expected} attendus")

    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    if pixels.max(initial=0) > maxval:
        raise FormatError(f"{path}: valeur de pixel au-dessus de maxval {maxval}")
    return pixels, maxval


def write_netpbm(path, pixels: np.ndarray):
    """
    Écrit un raster uint8 (H, W) ou (H, W, 1) en P5, (H, W, 3) en P6

    Args:
        path: Fichier de sortie
        pixels: Raster uint8
    """
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise FormatError(f"{path}: raster uint8 requis, reçu {pixels.dtype}")
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    height, width, channels = pixels.shape
    if channels == 1:
        magic = b'P5'
    elif channels == 3:
        magic = b'P6'
    else:
        raise FormatError(f"{path}: {channels} canaux non supportés")

    _ensure_parent(path)
    with open(path, 'wb') as f:
        f.write(magic + f'\n{width} {height}\n255\n'.encode('ascii'))
        f.write(np.ascontiguousarray(pixels).tobytes())


# ============================================
# CONTENEURS BINAIRES (FPM1 / WSM1)
# ============================================

def _read_container(path, magic: bytes, fields: int) -> Tuple[Tuple[int, ...], bytes]:
    with open(path, 'rb') as f:
        data = f.read()
    if not data.startswith(magic):
        raise FormatError(f"{path}: magic {data[:len(magic)]!r}, {magic!r} attendu")
    end = data.find(b'\n', len(magic))
    if end < 0:
        raise FormatError(f"{path}: ligne de dimensions manquante")
    try:
        dims = tuple(int(t) for t in data[len(magic):end].decode('ascii').split())
    except (UnicodeDecodeError, ValueError):
        raise FormatError(f"{path}: ligne de dimensions illisible")
    if len(dims) != fields or min(dims) < 1:
        raise FormatError(f"{path}: dimensions invalides {dims}")
    return dims, data[end + 1:]


def write_fpm(path, values: np.ndarray):
    """
    Écrit une pile de probabilités (classes, H, W): classe-majeur puis ligne-majeur

    Args:
        path: Fichier de sortie
        values: Tableau (L, H, W) de valeurs dans [0, 1]
    """
    values = np.asarray(values)
    classes, height, width = values.shape
    _ensure_parent(path)
    with open(path, 'wb') as f:
        f.write(FPM_MAGIC + f'{width} {height} {classes}\n'.encode('ascii'))
        f.write(np.ascontiguousarray(values, dtype='<f4').tobytes())


def read_fpm(path) -> np.ndarray:
    """
    Lit une pile FPM1

    Returns:
        np.ndarray float32 (L, H, W)
    """
    (width, height, classes), payload = _read_container(path, FPM_MAGIC, 3)
    expected = 4 * width * height * classes
    if len(payload) != expected:
        raise FormatError(f"{path}: {len(payload)} octets de données, {expected} attendus")
    values = np.frombuffer(payload, dtype='<f4').reshape(classes, height, width)
    if not np.all((values >= 0.0) & (values <= 1.0)):
        raise FormatError(f"{path}: probabilité hors de [0, 1]")
    return values.astype(np.float32)


def write_wsm(path, weights: np.ndarray):
    """
    Écrit les poids d'un segmenteur: en-tête `<L> <D>`, puis L x (D+1) float64

    Args:
        path: Fichier de sortie
        weights: Matrice (L, D+1), biais en dernière colonne
    """
    weights = np.asarray(weights, dtype=np.float64)
    classes, columns = weights.shape
    _ensure_parent(path)
    with open(path, 'wb') as f:
        f.write(WSM_MAGIC + f'{classes} {columns - 1}\n'.encode('ascii'))
        f.write(np.ascontiguousarray(weights, dtype='<f8').tobytes())


def read_wsm(path) -> np.ndarray:
    """
    Lit les poids d'un segmenteur

    Returns:
        np.ndarray float64 (L, D+1)
    """
    (classes, dims), payload = _read_container(path, WSM_MAGIC, 2)
    expected = 8 * classes * (dims + 1)
    if len(payload) != expected:
        raise FormatError(f"{path}: {len(payload)} octets de poids, {expected} attendus")
    weights = np.frombuffer(payload, dtype='<f8').reshape(classes, dims + 1)
    if not np.all(np.isfinite(weights)):
        raise FormatError(f"{path}: poids non finis")
    return weights.astype(np.float64)


def _ensure_parent(path):
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
