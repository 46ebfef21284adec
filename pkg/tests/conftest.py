import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from cmma.model import Dataset, TrialRegistry  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_dataset(trial, treatment, mediator, outcome, H=None):
    """Dataset from plain lists; ``trial`` is 0-based."""
    trial = np.asarray(trial)
    K = int(trial.max()) + 1
    H = np.ones((K, 1)) if H is None else np.asarray(H, dtype=float)
    return Dataset(np.arange(1, trial.size + 1), trial, np.asarray(treatment), mediator, outcome, TrialRegistry(H))


def random_dataset(rng, K=5, n_per=20, J=2, order=1):
    """Small balanced dataset with a random linear-in-powers outcome."""
    trial = np.repeat(np.arange(K), n_per)
    treat = np.tile(np.r_[np.ones(n_per // 2), np.zeros(n_per - n_per // 2)], K).astype(int)
    types = np.r_[np.arange(J), rng.integers(0, J, K - J)]
    H = np.eye(J)[types]
    tau = rng.uniform(-3, 3, K) + 1.0
    M = tau[trial] * treat + rng.normal(size=trial.size)
    Y = sum(rng.normal() * M ** (p + 1) for p in range(order)) + (H @ rng.normal(size=J))[trial] * treat
    Y = Y + rng.normal(size=trial.size)
    return make_dataset(trial, treat, M, Y, H)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
