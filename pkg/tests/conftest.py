import numpy as np
import pytest

from dsgl import DsgSpec, ModelConfig, ModelParams, SynthConfig, build_index, synth_generate


@pytest.fixture
def tiny_setup():
    """A small log, index and model sized for exact/gradient tests."""
    log = synth_generate(SynthConfig(num_users=6, num_items=5, num_clusters=2,
                                     num_events=80, drift_prob=0.05, noise_prob=0.3,
                                     seed=7))
    index = build_index(log)
    spec = DsgSpec(2, (3, 2), (2,))
    cfg = ModelConfig(num_users=log.num_users, num_items=log.num_items,
                      num_categories=log.num_categories,
                      d_user=4, d_item=2, d_cat=2, d_time=4, hidden=4, heads=2,
                      mlp_hidden=(5, 3), time_buckets=8, spec=spec)
    params = ModelParams(cfg, seed=3)
    return log, index, spec, cfg, params


def pytest_configure(config):
    np.seterr(over="raise", invalid="raise")
