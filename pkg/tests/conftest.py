import os

import hypothesis
import numpy as np
import pytest

from weakmeas.model import qubit_bernoulli

hypothesis.settings.register_profile("default", deadline=None, max_examples=40,
                                     suppress_health_check=[hypothesis.HealthCheck.too_slow])
hypothesis.settings.register_profile("thorough", deadline=None, max_examples=400)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

G_QUBIT = 1 - np.sqrt(0.75)  # 0.1339746
I_QUBIT = -np.log(np.sqrt(0.75))  # 0.1438410
Q_QUBIT = 2 * 0.09 / G_QUBIT  # 1.3435383


@pytest.fixture
def qubit():
    return qubit_bernoulli(epsilon=0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
