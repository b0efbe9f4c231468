import numpy as np
import pytest

from trustgan.data import synth_blobs
from trustgan.models import (build_generator, build_target, default_generator_config,
                             default_target_config)


def tiny_mlp(seed=0, dropout=0.0, widths=(8, 8, 8)):
    target = build_target(default_target_config("mlp", widths=widths, dropout=dropout, seed=seed))
    generator = build_generator(default_generator_config("mlp", widths=(4,), seed=seed + 1),
                                target)
    return target, generator


@pytest.fixture
def blobs_small():
    return synth_blobs(per_class=20, seed=0), synth_blobs(per_class=10, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
