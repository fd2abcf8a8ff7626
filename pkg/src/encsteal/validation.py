"""Input checks for the estimator API, in the spirit of sklearn.utils.validation."""
import numpy as np

from .data import Dataset
from .exceptions import DataError, DimensionError


def check_images(X, input_shape=None):
    """Return ``X`` as a float32 [M, C, H, W] array with finite values in [0, 1]."""
    if isinstance(X, Dataset):
        X = X.images
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 4 or X.shape[0] == 0:
        raise DimensionError(f"expected a non-empty [M, C, H, W] image array, got shape {X.shape}")
    if input_shape is not None and tuple(X.shape[1:]) != tuple(input_shape):
        raise DimensionError(f"images have shape {X.shape[1:]}, model expects {tuple(input_shape)}")
    if not np.all(np.isfinite(X)):
        raise DataError("images contain NaN or infinity")
    if X.min() < 0 or X.max() > 1:
        raise DataError("image values must lie in [0, 1]")
    return X


def check_embeddings(E, dim=None):
    E = np.asarray(E, dtype=np.float32)
    if E.ndim != 2 or E.shape[0] == 0:
        raise DimensionError(f"expected a non-empty [M, D] array, got shape {E.shape}")
    if dim is not None and E.shape[1] != dim:
        raise DimensionError(f"expected {dim} features, got {E.shape[1]}")
    if not np.all(np.isfinite(E)):
        raise DataError("embeddings contain NaN or infinity")
    return E


def check_labels(y, n, classes=None):
    y = np.asarray(y)
    if y.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise DataError("labels must be integers")
    y = y.astype(np.int64)
    if y.min() < 0 or (classes is not None and y.max() >= classes):
        raise DataError(f"labels must lie in [0, {classes})")
    return y


def as_dataset(X, y=None, ids=None, classes=None):
    if isinstance(X, Dataset):
        return X
    X = check_images(X)
    if y is not None:
        y = check_labels(y, len(X))
        classes = int(y.max()) + 1 if classes is None else classes
    return Dataset(X, y, classes or 0, "all", ids)
