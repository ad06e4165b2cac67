"""Named-tensor weight archive.

Layout: an uncompressed zip holding ``manifest.json`` and ``tensors.bin``.
The manifest lists, per tensor, its UTF-8 name, a dtype tag, the shape and the
byte range of its little-endian raw buffer inside ``tensors.bin``; free-form
JSON metadata rides along under ``"metadata"``. Writes are byte-reproducible
(fixed zip timestamps, sorted keys).
"""

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

__all__ = ["Archive", "save", "load", "FORMAT", "DTYPE_TAGS"]

FORMAT = "ddunet-tensors"
VERSION = 1

DTYPE_TAGS = {
    torch.float32: ("f32", "<f4"),
    torch.float64: ("f64", "<f8"),
    torch.float16: ("f16", "<f2"),
    torch.int64: ("i64", "<i8"),
    torch.int32: ("i32", "<i4"),
    torch.uint8: ("u8", "|u1"),
    torch.bool: ("bool", "|b1"),
}
_BY_TAG = {tag: (dt, np_dt) for dt, (tag, np_dt) in DTYPE_TAGS.items()}
_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Archive:
    tensors: dict
    metadata: dict = field(default_factory=dict)


def _zipinfo(name):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save(path, tensors, metadata=None):
    entries = []
    blob = io.BytesIO()
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in DTYPE_TAGS:
            raise TypeError(f"tensor {name!r} has unsupported dtype {t.dtype}")
        tag, np_dt = DTYPE_TAGS[t.dtype]
        raw = t.numpy().astype(np_dt, copy=False).tobytes()
        entries.append({"name": name, "dtype": tag, "shape": list(t.shape), "offset": blob.tell(), "nbytes": len(raw)})
        blob.write(raw)
    manifest = {"format": FORMAT, "version": VERSION, "tensors": entries, "metadata": metadata or {}}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        zf.writestr(_zipinfo("manifest.json"), json.dumps(manifest, sort_keys=True, indent=1))
        zf.writestr(_zipinfo("tensors.bin"), blob.getvalue())
    tmp.replace(path)
    return path


def load(path):
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} archive")
        data = zf.read("tensors.bin")
    tensors = {}
    for e in manifest["tensors"]:
        dt, np_dt = _BY_TAG[e["dtype"]]
        buf = data[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(buf, dtype=np_dt).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.copy()).to(dt)
    return Archive(tensors, manifest.get("metadata", {}))
