"""Mini-batching and seeding shared by every training loop."""
import numpy as np

from .exceptions import ConfigurationError


def mix_seed(*parts):
    """Collapse several non-negative integers into one 32-bit seed."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def minibatches(n, batch_size, seed, epoch, shuffle=True):
    """Index arrays covering ``range(n)`` once; the last batch may be short."""
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng([seed, epoch]).permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def merged_params(*modules):
    out = {}
    for module in modules:
        for name, p in module.params.items():
            if name in out:
                raise ConfigurationError(f"duplicate parameter name {name!r}")
            out[name] = p
    return out


def weighted_mean(values, weights):
    return float(np.dot(values, weights) / np.sum(weights)) if len(values) else float("nan")
