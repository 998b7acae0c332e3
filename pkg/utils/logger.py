"""
Système de logging avec couleurs et rotation de fichiers
Partagé par tous les modules du harnais d'entraînement
"""
import logging
import os
from logging.handlers import RotatingFileHandler

import colorlog
from dotenv import load_dotenv


DEFAULT_LOG_FILE = 'logs/affordance.log'


def log_file_setting(dotenv_path=None):
    """
    Fichier de log configuré: $AFFORDANCE_LOG_FILE, .env compris (vide = désactivé)

    Args:
        dotenv_path: Fichier .env explicite (défaut: recherche depuis le projet)
    """
    load_dotenv(dotenv_path)
    return os.getenv('AFFORDANCE_LOG_FILE', DEFAULT_LOG_FILE)


def setup_logger(name='affordance-em', log_file=None, level=logging.DEBUG):
    """
    Configure et retourne un logger avec:
    - Sortie console avec couleurs
    - Sortie fichier avec rotation automatique (désactivée si log_file vide)

    Args:
        name: Nom du logger
        log_file: Chemin du fichier de log (défaut: $AFFORDANCE_LOG_FILE)
        level: Niveau minimum de log (DEBUG, INFO, WARNING, ERROR, CRITICAL)

    Returns:
        Logger configuré
    """
    if log_file is None:
        log_file = log_file_setting()

    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = False

    # Éviter duplication des handlers si logger déjà configuré
    if logger.handlers:
        return logger

    # ============================================
    # FORMAT CONSOLE (avec couleurs)
    # ============================================
    console_formatter = colorlog.ColoredFormatter(
        '%(log_color)s%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S',
        log_colors={
            'DEBUG': 'cyan',
            'INFO': 'green',
            'WARNING': 'yellow',
            'ERROR': 'red',
            'CRITICAL': 'red,bg_white',
        }
    )

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.INFO)
    console_handler.setFormatter(console_formatter)
    logger.addHandler(console_handler)

    # ============================================
    # HANDLER FICHIER (avec rotation)
    # ============================================
    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)

        file_formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )
        # 5 MB par fichier, 5 fichiers max
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=5 * 1024 * 1024,
            backupCount=5,
            encoding='utf-8'
        )
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(file_formatter)
        logger.addHandler(file_handler)

    return logger


def set_console_level(level):
    """
    Change le niveau de la sortie console (--verbose du CLI)

    Args:
        level: Niveau logging (ex: logging.DEBUG)
    """
    for handler in logger.handlers:
        if not isinstance(handler, RotatingFileHandler):
            handler.setLevel(level)


# ============================================
# INSTANCE GLOBALE
# ============================================
logger = setup_logger()


# ============================================
# FONCTION DE TEST
# ============================================
def test_logger():
    """Teste tous les niveaux de log"""
    logger.debug("🔍 Message DEBUG (détails techniques)")
    logger.info("ℹ️ Message INFO (progression normale)")
    logger.warning("⚠️ Message WARNING (anomalie récupérable)")
    logger.error("❌ Message ERROR (erreur)")
    logger.critical("🚨 Message CRITICAL (fatal)")


if __name__ == "__main__":
    print("Test du système de logging...\n")
    test_logger()
