"""
Utilitaires pour formater et écrire les tableaux de résultats
Tableaux délimités (TSV), reproductibles à l'octet près
"""
import math
import os
from typing import List, Sequence

from utils.logger import logger


MISSING = 'NA'


def format_cell(value) -> str:
    """
    Formate une cellule de tableau

    Args:
        value: float, int, str ou None

    Returns:
        str: Float à 6 décimales, 'NA' pour None, '-inf' pour moins l'infini
    """
    if value is None:
        return MISSING
    if isinstance(value, bool):
        return 'yes' if value else 'no'
    if isinstance(value, float):
        if math.isinf(value):
            return '-inf' if value < 0 else 'inf'
        if math.isnan(value):
            return MISSING
        return f'{value:.6f}'
    return str(value)


def render_table(header: Sequence[str], rows: Sequence[Sequence], delimiter: str = '\t') -> str:
    """
    Construit le texte d'un tableau délimité

    Args:
        header: Noms de colonnes
        rows: Lignes (même longueur que header)
        delimiter: Séparateur de colonnes

    Returns:
        str: Tableau terminé par un saut de ligne
    """
    lines = [delimiter.join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"Ligne de {len(row)} cellules pour {len(header)} colonnes")
        lines.append(delimiter.join(format_cell(v) for v in row))
    return '\n'.join(lines) + '\n'


def write_table(path, header: Sequence[str], rows: Sequence[Sequence],
                footer: List[str] = None) -> str:
    """
    Écrit un tableau TSV (plus des lignes de pied optionnelles, ex: gagnant)

    Args:
        path: Fichier de sortie
        header: Noms de colonnes
        rows: Lignes
        footer: Lignes libres ajoutées après le tableau

    Returns:
        str: Chemin écrit
    """
    text = render_table(header, rows)
    if footer:
        text += ''.join(f'# {line}\n' for line in footer)

    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)

    logger.debug(f"Tableau écrit: {path} ({len(rows)} lignes)")
    return os.fspath(path)


def log_table(title: str, header: Sequence[str], rows: Sequence[Sequence]):
    """Affiche un tableau aligné dans les logs"""
    cells = [list(header)] + [[format_cell(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    logger.info(f"📊 {title}")
    for r in cells:
        logger.info('   ' + '  '.join(c.ljust(w) for c, w in zip(r, widths)))
