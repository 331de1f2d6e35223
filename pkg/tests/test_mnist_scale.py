"""
Full MNIST runs: teacher accuracy and noisy-versus-plain students over five seeds.

Needs the IDX files under $NOISY_TEACHER_DATA_DIR; otherwise every test here is skipped.
"""

import numpy as np
import pytest

from core.arch_dsl import KNOWN_ARCHS, parse_arch
from core.datasets import MNIST_FILES, SplitConfig, load_dataset
from core.distill import DistillConfig, NoiseConfig, NoiseTarget, distill
from core.metrics import evaluate
from core.teacher import compute_logits, train_teacher
from core.training import TrainConfig
from utils.config_loader import default_data_dir

SEEDS = [0, 1, 2, 3, 4]


def mnist_available(data_dir) -> bool:
    if data_dir is None:
        return False
    return all((data_dir / name).exists() or (data_dir / f"{name}.gz").exists()
               for name in MNIST_FILES['train'] + MNIST_FILES['test'])


DATA_DIR = default_data_dir("mnist")

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(not mnist_available(DATA_DIR), reason="MNIST IDX files not configured"),
]


@pytest.fixture(scope="module")
def splits():
    return load_dataset("mnist", DATA_DIR, SplitConfig(validation_count=10000))


@pytest.fixture(scope="module")
def teacher(splits):
    spec = parse_arch(KNOWN_ARCHS['mnist_teacher'])
    params, _ = train_teacher(spec, splits['train'], splits['validation'], TrainConfig(epochs=15), seed=0,
                              progress=False)
    return spec, params


class TestMnistScale:
    """Teacher and student error on the full MNIST split."""

    def test_teacher_error(self, teacher, splits):
        spec, params = teacher
        assert evaluate(params, spec, splits['test']) <= 0.015

    def test_noisy_students_beat_plain_students_on_average(self, teacher, splits):
        spec, params = teacher
        logit_set = compute_logits(params, spec, splits['train'])
        student = parse_arch(KNOWN_ARCHS['mnist_student'])

        def mean_error(noise: NoiseConfig) -> float:
            errors = []
            for seed in SEEDS:
                cfg = DistillConfig(student, noise, TrainConfig(epochs=15), seed=seed)
                _, metrics = distill(cfg, logit_set, splits['train'], splits['validation'], splits['test'],
                                     progress=False)
                errors.append(metrics.test_error)
            return float(np.mean(errors))

        plain = mean_error(NoiseConfig(sigma=0.0, alpha=0.0, target=NoiseTarget.NONE))
        noisy = mean_error(NoiseConfig(sigma=0.5, alpha=0.15, target=NoiseTarget.TEACHER))
        assert noisy <= plain
