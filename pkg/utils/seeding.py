"""
Sous-flux de graines nommés
Toute l'aléa d'une exécution dérive d'une seule graine (config `seed`)
"""
import numpy as np


# Identifiants des sous-flux (ne jamais renuméroter: casse la reproductibilité)
STREAMS = {
    'folds': 1,
    'train': 2,
    'synth': 3,
    'keypoints': 4,
}


def derive_seed(seed: int, stream: str, *keys: int) -> int:
    """
    Dérive une graine 32 bits pour un sous-flux nommé

    Args:
        seed: Graine globale de l'exécution
        stream: Nom du sous-flux (voir STREAMS)
        *keys: Clés entières supplémentaires (index d'image, itération, fold...)

    Returns:
        int: Graine dérivée, stable d'une exécution à l'autre
    """
    if stream not in STREAMS:
        raise ValueError(f"Sous-flux inconnu: {stream!r}")
    entropy = [int(seed), STREAMS[stream], *(int(k) for k in keys)]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def make_rng(seed: int, stream: str, *keys: int) -> np.random.Generator:
    """Générateur numpy pour un sous-flux nommé"""
    return np.random.default_rng(derive_seed(seed, stream, *keys))

