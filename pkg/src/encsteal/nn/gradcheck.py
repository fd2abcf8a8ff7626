"""Central finite differences, used as an independent gradient oracle in tests."""
import numpy as np


def finite_diff_grad(loss_fn, params, epsilon=1e-5):
    """Gradient of ``loss_fn(params) -> float`` by central differences.

    ``params`` maps names to arrays; each is perturbed one scalar at a time in
    float64 and ``loss_fn`` receives the whole float64 mapping.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    grads = {}
    for name, arr in base.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = float(loss_fn(base))
            flat[i] = orig - epsilon
            lo = float(loss_fn(base))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * epsilon)
        grads[name] = g
    return grads


def max_rel_error(analytic, numeric, floor=1e-6):
    """Element-wise |a - n| / max(|n|, floor), maximised over all entries."""
    worst = 0.0
    for name, n in numeric.items():
        a = np.zeros_like(n) if analytic.get(name) is None else np.asarray(analytic[name], np.float64)
        err = np.abs(a - n) / np.maximum(np.abs(n), floor)
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst
