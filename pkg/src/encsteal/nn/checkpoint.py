"""Checkpoint container: ``manifest.json`` plus ``params.bin``.

The manifest is plain-text JSON listing the format version, an object kind,
free-form metadata (architecture, seeds) and the name/shape of every array.
``params.bin`` holds the arrays as little-endian float32, concatenated in
manifest order with no padding.
"""
import json
import os

import numpy as np

from ..exceptions import FormatError
from .model import ArchSpec, EncoderModel, Head

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "params.bin"


def save_arrays(path, arrays, kind, meta=None):
    os.makedirs(path, exist_ok=True)
    entries = []
    with open(os.path.join(path, BLOB), "wb") as fh:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            entries.append({"name": name, "shape": list(arr.shape)})
            fh.write(arr.tobytes())
    manifest = {"format_version": FORMAT_VERSION, "kind": kind, "meta": meta or {}, "arrays": entries}
    with open(os.path.join(path, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_arrays(path):
    try:
        with open(os.path.join(path, MANIFEST)) as fh:
            manifest = json.load(fh)
        with open(os.path.join(path, BLOB), "rb") as fh:
            blob = fh.read()
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint at {path}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {manifest.get('format_version')!r}")
    arrays = {}
    offset = 0
    for entry in manifest["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = offset + 4 * count
        if end > len(blob):
            raise FormatError(f"blob truncated at byte {offset} while reading {entry['name']}")
        arrays[entry["name"]] = (
            np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            .reshape(entry["shape"])
            .astype(np.float32)
        )
        offset = end
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes in {BLOB}")
    return arrays, manifest


def save_checkpoint(module, path, meta=None):
    """Write an EncoderModel or Head; returns ``path``."""
    meta = dict(meta or {})
    if isinstance(module, EncoderModel):
        meta["arch"] = module.arch.to_dict()
        kind = "encoder"
    elif isinstance(module, Head):
        meta["dims"] = list(module.dims)
        meta["prefix"] = module.prefix
        kind = "head"
    else:
        raise TypeError(f"cannot checkpoint {type(module).__name__}")
    return save_arrays(path, module.state_arrays(), kind, meta)


def load_checkpoint(path):
    arrays, manifest = load_arrays(path)
    meta = manifest["meta"]
    if manifest["kind"] == "encoder":
        return EncoderModel(ArchSpec.from_dict(meta["arch"]), arrays)
    if manifest["kind"] == "head":
        return Head(meta["dims"], arrays, meta["prefix"])
    raise FormatError(f"checkpoint kind {manifest['kind']!r} is not a model")
