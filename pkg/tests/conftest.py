"""
Fixtures partagées: petits jeux synthétiques et configurations rapides
"""
import os

# Pas de fichier de log pendant les tests
os.environ.setdefault('AFFORDANCE_LOG_FILE', '')

import pytest

from modules.binarization import ThresholdPolicy
from modules.classifier import FeatureConfig, TrainConfig
from modules.data_model import LabelSpace
from modules.em_trainer import EmConfig
from modules.initialization import InitConfig
from modules.synth import SynthConfig, generate


@pytest.fixture
def labels():
    return LabelSpace(('grasp', 'cut'))


@pytest.fixture
def tiny_synth():
    return SynthConfig(image_size=16, class_count=2, noise=0.0, overlap_probability=0.3,
                       size_variation=2.0, base_radius=0.2, rng_seed=3)


@pytest.fixture
def tiny_dataset(tiny_synth):
    """6 images 16x16, vérité terrain comprise"""
    return generate(tiny_synth, 6)


@pytest.fixture
def tiny_samples(tiny_dataset):
    return [s.as_sample() for s in tiny_dataset]


@pytest.fixture
def fast_em_config():
    return EmConfig(
        em_iterations=2,
        init=InitConfig(0.12),
        policy=ThresholdPolicy(),
        train=TrainConfig(epochs=2, minibatch_pixels=256),
        rng_seed=11,
    )


@pytest.fixture
def small_features():
    return FeatureConfig(window_radii=(1,), smoothing_scales=(1,), include_coords=False)

