"""Checkpoint container: a zip holding a JSON manifest plus named float arrays.

Arrays are stored as raw little-endian 32-bit floats with their shapes recorded
in the manifest. Writing is byte-deterministic (sorted entries, fixed
timestamps, no compression), so identical state always produces identical
archives and save -> load -> save round-trips byte-for-byte. Writes go through
a temp file and rename; a failed write never leaves a partial archive behind.
"""

from __future__ import annotations

import json
import os
import zipfile

import numpy as np
import torch

__all__ = ["write_archive", "read_archive", "ArchiveError"]

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)
_MANIFEST_NAME = "manifest.json"


class ArchiveError(RuntimeError):
    pass


def _to_f32_bytes(arr) -> tuple[bytes, list[int]]:
    if isinstance(arr, torch.Tensor):
        arr = arr.detach().cpu().numpy()
    arr = np.asarray(arr, dtype="<f4")
    return arr.tobytes(order="C"), list(arr.shape)


def write_archive(path: str | os.PathLike, manifest: dict, arrays: dict) -> None:
    """Write manifest + arrays; atomic (temp file then rename)."""
    path = os.fspath(path)
    shapes: dict[str, list[int]] = {}
    payloads: dict[str, bytes] = {}
    for name in sorted(arrays):
        data, shape = _to_f32_bytes(arrays[name])
        payloads[name] = data
        shapes[name] = shape
    doc = dict(manifest)
    doc["arrays"] = shapes
    doc["array_dtype"] = "float32-le"
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))

    tmp = path + ".tmp"
    try:
        with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
            info = zipfile.ZipInfo(_MANIFEST_NAME, date_time=_FIXED_DATE)
            zf.writestr(info, text)
            for name in sorted(payloads):
                info = zipfile.ZipInfo(f"arrays/{name}", date_time=_FIXED_DATE)
                zf.writestr(info, payloads[name])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_archive(path: str | os.PathLike) -> tuple[dict, dict[str, torch.Tensor]]:
    path = os.fspath(path)
    with zipfile.ZipFile(path) as zf:
        try:
            doc = json.loads(zf.read(_MANIFEST_NAME))
        except KeyError as e:
            raise ArchiveError(f"{path}: missing {_MANIFEST_NAME}") from e
        shapes = doc.pop("arrays", {})
        doc.pop("array_dtype", None)
        arrays: dict[str, torch.Tensor] = {}
        for name, shape in shapes.items():
            raw = zf.read(f"arrays/{name}")
            flat = np.frombuffer(raw, dtype="<f4")
            expected = int(np.prod(shape)) if shape else 1
            if flat.size != expected:
                raise ArchiveError(
                    f"{path}: array {name} has {flat.size} values, shape {shape} wants {expected}"
                )
            arrays[name] = torch.from_numpy(flat.reshape(shape).copy())
    return doc, arrays
