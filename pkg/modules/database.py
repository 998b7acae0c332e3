"""
Journal d'exécution SQLite
Stocke l'historique des entraînements (folds + final) et les seuils de chaque étape E
"""
import json
import sqlite3
from typing import Dict, List, Optional, Sequence

from utils.logger import logger
from utils.reports import write_table


FINAL_FOLD = 'final'


class RunLog:
    """Gère la base SQLite d'une exécution EM"""

    def __init__(self, db_file: str = ':memory:'):
        """
        Initialise la connexion à la base de données

        Args:
            db_file: Chemin du fichier SQLite (':memory:' pour un journal éphémère)
        """
        self.db_file = db_file
        self.conn = sqlite3.connect(db_file, check_same_thread=False)
        self.cursor = self.conn.cursor()
        self._create_tables()
        logger.debug(f"RunLog initialisé: {db_file}")

    def _create_tables(self):
        """Crée les tables si elles n'existent pas"""

        # Une ligne par entraînement (étape M ou entraînement final)
        self.cursor.execute('''
            CREATE TABLE IF NOT EXISTS trainings (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                iteration INTEGER NOT NULL,
                fold TEXT NOT NULL,
                train_records TEXT NOT NULL,
                held_out_records TEXT NOT NULL,
                pixels INTEGER,
                initial_loss REAL,
                final_loss REAL
            )
        ''')

        # Seuil par (itération, image, classe); NULL = classe absente
        self.cursor.execute('''
            CREATE TABLE IF NOT EXISTS thresholds (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                iteration INTEGER NOT NULL,
                record TEXT NOT NULL,
                class_index INTEGER NOT NULL,
                threshold REAL
            )
        ''')

        self.conn.commit()

    def log_training(self, iteration: int, fold: str, train_records: Sequence[int],
                     held_out_records: Sequence[int], pixels: int = None,
                     initial_loss: float = None, final_loss: float = None):
        """
        Enregistre un entraînement

        Args:
            iteration: Itération EM (1..n), ou n pour l'entraînement final
            fold: 'A', 'B', 'C' (fold retenu) ou 'final'
            train_records: Index des enregistrements vus à l'entraînement
            held_out_records: Index des enregistrements retenus
        """
        self.cursor.execute('''
            INSERT INTO trainings
            (iteration, fold, train_records, held_out_records, pixels, initial_loss, final_loss)
            VALUES (?, ?, ?, ?, ?, ?, ?)
        ''', (
            iteration, fold,
            json.dumps([int(i) for i in train_records]),
            json.dumps([int(i) for i in held_out_records]),
            pixels, initial_loss, final_loss,
        ))
        self.conn.commit()

    def log_thresholds(self, iteration: int, record: str, thresholds: Sequence[Optional[float]]):
        """Enregistre les seuils de toutes les classes d'une image"""
        self.cursor.executemany('''
            INSERT INTO thresholds (iteration, record, class_index, threshold)
            VALUES (?, ?, ?, ?)
        ''', [(iteration, record, l, t) for l, t in enumerate(thresholds)])
        self.conn.commit()

    def get_trainings(self) -> List[Dict]:
        """
        Récupère l'historique des entraînements, dans l'ordre d'insertion

        Returns:
            List[Dict]: Un dict par entraînement
        """
        try:
            self.cursor.execute('''
                SELECT iteration, fold, train_records, held_out_records, pixels,
                       initial_loss, final_loss
                FROM trainings ORDER BY id ASC
            ''')
            return [
                {
                    'iteration': row[0],
                    'fold': row[1],
                    'train_records': json.loads(row[2]),
                    'held_out_records': json.loads(row[3]),
                    'pixels': row[4],
                    'initial_loss': row[5],
                    'final_loss': row[6],
                }
                for row in self.cursor.fetchall()
            ]
        except sqlite3.Error as e:
            logger.error(f"❌ Erreur lecture des entraînements: {e}")
            return []

    def count_trainings(self, final: bool = False) -> int:
        """Nombre d'entraînements de fold (ou finaux si final=True)"""
        op = '=' if final else '!='
        self.cursor.execute(f'SELECT COUNT(*) FROM trainings WHERE fold {op} ?', (FINAL_FOLD,))
        return int(self.cursor.fetchone()[0])

    def get_thresholds(self, iteration: int = None) -> List[Dict]:
        """
        Récupère les seuils (toutes itérations si iteration est None)

        Returns:
            List[Dict]: iteration, record, class_index, threshold (None = absent)
        """
        try:
            query = 'SELECT iteration, record, class_index, threshold FROM thresholds'
            params = ()
            if iteration is not None:
                query += ' WHERE iteration = ?'
                params = (iteration,)
            self.cursor.execute(query + ' ORDER BY id ASC', params)
            return [
                {'iteration': r[0], 'record': r[1], 'class_index': r[2], 'threshold': r[3]}
                for r in self.cursor.fetchall()
            ]
        except sqlite3.Error as e:
            logger.error(f"❌ Erreur lecture des seuils: {e}")
            return []

    def export_thresholds(self, path, class_names: Sequence[str]) -> str:
        """Écrit le journal des seuils en TSV (iteration, record, class, threshold)"""
        rows = [
            (t['iteration'], t['record'], class_names[t['class_index']], t['threshold'])
            for t in self.get_thresholds()
        ]
        return write_table(path, ['iteration', 'record', 'class', 'threshold'], rows)

    def close(self):
        """Ferme la connexion à la base de données"""
        self.conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
