"""
Configuration de l'environnement d'exécution
Charge les variables depuis .env; aucune n'influence les résultats
"""
import os

from dotenv import load_dotenv

from utils.logger import logger

# Charger variables d'environnement depuis .env
load_dotenv()

VERSION = '1.0.0'

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')


class Config:
    """
    Réglages de l'environnement (journalisation, parallélisme, journal SQLite)
    Tout ce qui influence les résultats vit dans la configuration YAML
    """

    # ============================================
    # LOGS
    # ============================================
    LOG_LEVEL = os.getenv('AFFORDANCE_LOG_LEVEL', 'INFO').upper()
    LOG_FILE = os.getenv('AFFORDANCE_LOG_FILE', 'logs/affordance.log')

    # ============================================
    # PARALLÉLISME
    # ============================================
    THREADS = int(os.getenv('AFFORDANCE_THREADS', 1))

    # ============================================
    # JOURNAL D'EXÉCUTION
    # ============================================
    RUN_LOG = os.getenv('AFFORDANCE_RUN_LOG', 'run_log.db')

    @classmethod
    def validate(cls):
        """
        Valide les réglages d'environnement

        Returns:
            bool: True si config valide

        Raises:
            ValueError: Réglage invalide
        """
        problems = []
        if cls.LOG_LEVEL not in LOG_LEVELS:
            problems.append(f"AFFORDANCE_LOG_LEVEL={cls.LOG_LEVEL} (attendu: {', '.join(LOG_LEVELS)})")
        if cls.THREADS < 1:
            problems.append(f"AFFORDANCE_THREADS={cls.THREADS} (attendu: >= 1)")
        if not cls.RUN_LOG:
            problems.append("AFFORDANCE_RUN_LOG vide")

        if problems:
            logger.error(f"❌ Variables invalides dans .env: {'; '.join(problems)}")
            raise ValueError("Configuration d'environnement invalide. Vérifiez votre fichier .env")

        if not cls.LOG_FILE:
            logger.warning("⚠️ AFFORDANCE_LOG_FILE vide: pas de fichier de log")

        logger.debug("Configuration d'environnement validée")
        return True

    @classmethod
    def print_config(cls):
        """Affiche la configuration"""
        print("\n" + "=" * 60)
        print(f"CONFIGURATION ACTUELLE (version {VERSION})")
        print("=" * 60)

        print("\n📝 Logs:")
        print(f"  Niveau: {cls.LOG_LEVEL}")
        print(f"  Fichier: {cls.LOG_FILE or 'désactivé'}")

        print("\n⚙️ Exécution:")
        print(f"  Threads: {cls.THREADS}")
        print(f"  Journal SQLite: {cls.RUN_LOG}")

        print("\n" + "=" * 60 + "\n")


# ============================================
# INSTANCE GLOBALE
# ============================================
config = Config()


# ============================================
# FONCTION DE TEST
# ============================================
def test_config():
    """Teste la configuration"""
    print("⚙️ Test de la configuration...\n")

    config.print_config()

    try:
        config.validate()
        print("✅ Configuration valide!")
    except ValueError as e:
        print(f"❌ Erreur de configuration: {e}")
        print("\n💡 Vérifie ton fichier .env")


if __name__ == "__main__":
    test_config()
