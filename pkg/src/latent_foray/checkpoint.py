"""Binary checkpoint container for named float32 tensors.

Layout: magic "LBGM" | u32 version | u32 header length | UTF-8 JSON header |
raw little-endian float32 payload in header order.  Round trips are
bit-exact; unknown future versions are rejected.  Datasets travel in the
same container via a "dataset" header field.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .datasets import LabeledDataset
from .errors import CorruptCheckpoint, IoError, VersionUnsupported

MAGIC = b"LBGM"
VERSION = 1


def _header_bytes(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, tensors: dict[str, np.ndarray], extra: dict | None = None) -> None:
    """Write named tensors; `extra` lands in the JSON header (e.g. dataset metadata)."""
    names = list(tensors)
    if len(set(names)) != len(names):
        raise CorruptCheckpoint("duplicate tensor names")
    entries = []
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype=np.float32))
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "f32"})
        blobs.append(arr.astype("<f4").tobytes())
    header: dict = {"tensors": entries}
    if extra:
        header.update(extra)
    hb = _header_bytes(header)
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(int(VERSION).to_bytes(4, "little"))
            fh.write(len(hb).to_bytes(4, "little"))
            fh.write(hb)
            for blob in blobs:
                fh.write(blob)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def _read_container(path) -> tuple[dict, bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic")
    version = int.from_bytes(raw[4:8], "little")
    if version > VERSION:
        raise VersionUnsupported(f"{path}: format version {version} > supported {VERSION}")
    hlen = int.from_bytes(raw[8:12], "little")
    if 12 + hlen > len(raw):
        raise CorruptCheckpoint(f"{path}: header length exceeds file size")
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header: {exc}") from exc
    payload = raw[12 + hlen :]
    expected = sum(
        4 * int(np.prod(entry["shape"], dtype=np.int64)) for entry in header.get("tensors", [])
    )
    if len(payload) != expected:
        raise CorruptCheckpoint(f"{path}: payload is {len(payload)} bytes, header promises {expected}")
    return header, payload


def load_checkpoint(path) -> dict[str, np.ndarray]:
    header, payload = _read_container(path)
    out: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["tensors"]:
        if entry.get("dtype") != "f32":
            raise CorruptCheckpoint(f"{path}: unsupported dtype {entry.get('dtype')!r}")
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload[offset : offset + nbytes], dtype="<f4").reshape(shape)
        out[entry["name"]] = arr.astype(np.float32)
        offset += nbytes
    return out


def load_header(path) -> dict:
    header, _ = _read_container(path)
    return header


def save_dataset(path, dataset: LabeledDataset) -> None:
    """Dataset in the checkpoint container; labels stored as f32 (small exact ints)."""
    tensors = {
        "images": dataset.images,
        "labels": dataset.labels.astype(np.float32),
    }
    extra = {
        "dataset": {
            "class_count": dataset.class_count,
            "label_ndim": int(dataset.labels.ndim),
            "metadata": dataset.metadata,
        }
    }
    save_checkpoint(path, tensors, extra=extra)


def load_dataset(path) -> LabeledDataset:
    header, _ = _read_container(path)
    info = header.get("dataset")
    if info is None:
        raise CorruptCheckpoint(f"{path}: not a dataset container (no 'dataset' field)")
    tensors = load_checkpoint(path)
    labels = tensors["labels"].astype(np.int64)
    return LabeledDataset(tensors["images"], labels, int(info["class_count"]), dict(info["metadata"]))
