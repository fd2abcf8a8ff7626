import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from encsteal.data import SyntheticSpec, gen_synthetic, train_test_split  # noqa: E402
from encsteal.nn import Tensor, finite_diff_grad, max_rel_error  # noqa: E402


def grad_error(build, arrays, epsilon=1e-6):
    """Max element-wise relative error between reverse-mode and central differences.

    ``build`` maps a dict of float64 Tensors to a scalar loss Tensor.
    """
    leaves = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in arrays.items()}
    build(leaves).backward()
    analytic = {k: t.grad for k, t in leaves.items()}
    numeric = finite_diff_grad(lambda p: float(build({k: Tensor(v) for k, v in p.items()})), arrays, epsilon)
    return max_rel_error(analytic, numeric)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_split():
    """2-class blobs, 8x8x3, light noise: (train, test)."""
    ds = gen_synthetic(SyntheticSpec(classes=2, samples_per_class=60, noise_sigma=0.1, seed=3))
    return train_test_split(ds, 0.25, 0)
