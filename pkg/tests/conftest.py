"""Shared fixtures: random-but-valid observation builders and one synthetic
corpus reused across test modules."""

import numpy as np
import pandas as pd
import pytest

from navrisk import risk
from navrisk.synth import SynthConfig, generate
from navrisk.validation import to_arrays


def random_observations(n, seed=0, n_groups=2, v_max=40.0, zero_rate=0.05):
    """Contract-valid prepared observations with mixed zero/nonzero risks."""
    rng = np.random.default_rng(seed)
    v_obs = rng.uniform(0.0, v_max, n)
    v_obs = np.where(rng.random(n) < zero_rate, 0.0, v_obs)
    mu = rng.uniform(0.0, 20.0, n)
    whale = np.where(rng.random(n) < 0.3, 0.0, rng.lognormal(0.0, 1.0, n))
    ice = np.where(rng.random(n) < 0.3, 0.0, rng.uniform(0.0, 10.0, n))
    return pd.DataFrame(
        {
            "trajectory_id": [f"T{i % 37:03d}" for i in range(n)],
            "cell_id": [f"C{i % 11:02d}" for i in range(n)],
            "month": (np.arange(n) % 12 + 1).astype(np.int64),
            "group": [f"G{g}" for g in rng.integers(0, n_groups, n)],
            "v_obs": v_obs,
            "dt": rng.lognormal(np.log(0.018), 0.7, n),
            "mu": np.where(v_obs == 0.0, 0.0, mu),
            "whale": whale,
            "ice_tenths": ice,
            "v_safe": risk.v_safe(ice),
        }
    )


def random_arrays(n, seed=0, n_groups=2):
    return to_arrays(random_observations(n, seed=seed, n_groups=n_groups)).arrays


@pytest.fixture
def rand_obs():
    return random_observations


@pytest.fixture
def rand_arrays():
    return random_arrays


@pytest.fixture(scope="session")
def corpus_small():
    """4,000-observation two-group corpus; cheap, for mechanical tests (its
    scaling constants are too noisy for tight recovery assertions)."""
    config = SynthConfig(
        n_obs=4_000, n_groups=2, n_trajectories=80, theta_w_true=(0.3, 0.7),
        m_true=2, noise_sd=0.25, seed=11,
    )
    return generate(config)


@pytest.fixture(scope="session")
def fit_small(corpus_small):
    from navrisk.estimator import EstimationConfig, fit_weights

    df, _ = corpus_small
    grouped = to_arrays(df)
    return fit_weights(
        grouped.arrays, EstimationConfig(m=2),
        group_labels=grouped.group_labels, group_col=grouped.group_col,
    )
