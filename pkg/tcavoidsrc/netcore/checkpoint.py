"""Binary formats for trained tensors and voxel grid dumps.

Checkpoint layout (all little-endian):
    magic ``TCAVCKPT`` | version u32 | tensor count u32
    per tensor: name length u16 | utf-8 name | ndim u8 | dims u32 * ndim
    payload: every tensor as float32, in table order, row-major

Grid dump layout: magic ``TCAVGRID`` | version u32 | dims u32 * 3 | origin f64 * 3 | resolution f64 | float32 payload.
"""
import io
from collections import OrderedDict
from typing import BinaryIO, Dict, Mapping

import numpy as np
import torch

from tcavoidsrc.world.voxel_grid import VoxelGrid

CHECKPOINT_MAGIC = b"TCAVCKPT"
GRID_MAGIC = b"TCAVGRID"
FORMAT_VERSION = 1


def _read(stream: BinaryIO, dtype: str, count: int = 1) -> np.ndarray:
    dtype = np.dtype(dtype)
    raw = stream.read(dtype.itemsize * count)
    if len(raw) != dtype.itemsize * count:
        raise ValueError("Unexpected end of file")
    return np.frombuffer(raw, dtype=dtype, count=count)


def _check_header(stream: BinaryIO, magic: bytes) -> None:
    if stream.read(len(magic)) != magic:
        raise ValueError(f"Bad magic, expected {magic!r}")
    (version,) = _read(stream, "<u4")
    if version != FORMAT_VERSION:
        raise ValueError(f"Unsupported format version {version}")


def dump_tensors(tensors: Mapping[str, torch.Tensor]) -> bytes:
    header, payload = io.BytesIO(), io.BytesIO()
    header.write(CHECKPOINT_MAGIC)
    header.write(np.array([FORMAT_VERSION, len(tensors)], dtype="<u4").tobytes())
    for name, tensor in tensors.items():
        encoded = name.encode("utf-8")
        values = tensor.detach().cpu().numpy()
        header.write(np.array([len(encoded)], dtype="<u2").tobytes())
        header.write(encoded)
        header.write(np.array([values.ndim], dtype="u1").tobytes())
        header.write(np.array(values.shape, dtype="<u4").tobytes())
        payload.write(np.ascontiguousarray(values, dtype="<f4").tobytes())
    return header.getvalue() + payload.getvalue()


def load_tensors(data: bytes) -> Dict[str, torch.Tensor]:
    stream = io.BytesIO(data)
    _check_header(stream, CHECKPOINT_MAGIC)
    (count,) = _read(stream, "<u4")
    table = []
    for _ in range(count):
        (name_length,) = _read(stream, "<u2")
        name = stream.read(int(name_length)).decode("utf-8")
        (ndim,) = _read(stream, "u1")
        dims = tuple(int(d) for d in _read(stream, "<u4", int(ndim)))
        table.append((name, dims))
    tensors = OrderedDict()
    for name, dims in table:
        values = _read(stream, "<f4", int(np.prod(dims, dtype=np.int64)))
        tensors[name] = torch.from_numpy(values.astype(np.float32).reshape(dims))
    return tensors


def save_checkpoint(path: str, tensors: Mapping[str, torch.Tensor]) -> None:
    with open(path, "wb") as f:
        f.write(dump_tensors(tensors))


def load_checkpoint(path: str) -> Dict[str, torch.Tensor]:
    with open(path, "rb") as f:
        return load_tensors(f.read())


def save_grid(path: str, grid: VoxelGrid) -> None:
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        f.write(np.array([FORMAT_VERSION, *grid.dims], dtype="<u4").tobytes())
        f.write(np.array([*grid.origin, grid.resolution], dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(grid.cells, dtype="<f4").tobytes())


def load_grid(path: str) -> VoxelGrid:
    with open(path, "rb") as f:
        _check_header(f, GRID_MAGIC)
        dims = tuple(int(d) for d in _read(f, "<u4", 3))
        origin_resolution = _read(f, "<f8", 4)
        cells = _read(f, "<f4", int(np.prod(dims))).reshape(dims)
    return VoxelGrid(origin_resolution[:3].copy(), float(origin_resolution[3]), cells.astype(np.float32))
