"""Wavefront OBJ and the "3DGH" little-endian binary container.

Container layouts (all integers u32, all payload values f32, little-endian)::

    tensor file:  "3DGH" | version | ndim | dims[ndim] | data (row-major)
    tensor table: "3DGH" | version | count | count x (name_len | name utf-8 | ndim | dims | data)
    blend model:  "3DGH" | version | V | F | K | rank | sigma (f32) | mean[3V] | components[K x 3V] | faces[F x 3] (u32)
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict

import numpy as np

from ..errors import DataError
from .types import TemplateMesh

MAGIC = b"3DGH"
VERSION = 1


def _header(f):
    if f.read(4) != MAGIC:
        raise DataError("not a 3DGH container (bad magic)")
    (version,) = struct.unpack("<I", f.read(4))
    if version != VERSION:
        raise DataError(f"unsupported 3DGH version {version}")


def _write_array(f, arr):
    arr = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.tobytes())


def _read_array(f):
    (ndim,) = struct.unpack("<I", f.read(4))
    dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim)) if ndim else ()
    count = int(np.prod(dims)) if dims else 1
    buf = f.read(4 * count)
    if len(buf) != 4 * count:
        raise DataError("truncated 3DGH payload")
    return np.frombuffer(buf, dtype="<f4").reshape(dims).astype(np.float32)


def save_tensor(path, array) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<I", VERSION))
        _write_array(f, array)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        _header(f)
        return _read_array(f)


def save_table(path, tensors: Dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)) + raw)
            _write_array(f, arr)


def load_table(path) -> Dict[str, np.ndarray]:
    out = {}
    with open(path, "rb") as f:
        _header(f)
        (count,) = struct.unpack("<I", f.read(4))
        for _ in range(count):
            (n,) = struct.unpack("<I", f.read(4))
            name = f.read(n).decode("utf-8")
            out[name] = _read_array(f)
    return out


def save_obj(path, mesh: TemplateMesh) -> None:
    lines = []
    labels = np.unique(mesh.labels)
    if labels.size == 1:
        lines.append(f"# gh3d-label {labels[0]:.17g}")
    lines += [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"vt {u:.17g} {v:.17g}" for u, v in mesh.uv.reshape(-1, 2)]
    for i, (a, b, c) in enumerate(mesh.faces):
        t = 3 * i + 1
        lines.append(f"f {a + 1}/{t} {b + 1}/{t + 1} {c + 1}/{t + 2}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path) -> TemplateMesh:
    verts, uvs, faces, corner_uv = [], [], [], []
    label = 0.0
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "#" and len(parts) >= 3 and parts[1] == "gh3d-label":
            label = float(parts[2])
        elif parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vt":
            uvs.append([float(x) for x in parts[1:3]])
        elif parts[0] == "f":
            if len(parts) != 4:
                raise DataError("only triangular faces are supported")
            idx = [p.split("/") for p in parts[1:]]
            if any(len(i) < 2 or not i[1] for i in idx):
                raise DataError("faces must carry per-corner texture coordinates")
            faces.append([int(i[0]) - 1 for i in idx])
            corner_uv.append([int(i[1]) - 1 for i in idx])
    if not faces:
        raise DataError(f"{path}: no faces")
    uv = np.asarray(uvs)[np.asarray(corner_uv)]
    verts = np.asarray(verts)
    return TemplateMesh(verts, np.asarray(faces), uv, np.full(len(verts), label))
