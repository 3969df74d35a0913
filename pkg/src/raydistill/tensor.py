"""Dense BEV tensors and the RTF on-disk format.

Two value types are shared by every other module: ``FeatureMap`` is a dense
``(D, H, W)`` stack of BEV feature channels, ``ScalarGrid`` a single
``(H, W)`` plane (attention maps, weight maps, occupancy logits).  All
in-memory arithmetic is float64; the serialized form (RTF) is little-endian
float32, which is the precision contract for files, not for computation.

RTF = a JSON manifest ``{"dtype": "f32le", "shape": [D, H, W]}`` written to
``<base>.json`` next to a raw row-major float32 payload in ``<base>.bin``.
ScalarGrids are stored with shape ``[1, H, W]``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .fileio import atomic_write_bytes, atomic_write_text

RTF_DTYPE = "f32le"


class FormatError(Exception):
    """Raised when an RTF manifest or payload violates the file contract."""


def _as_grid(data: np.ndarray, ndim: int, what: str) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{what} requires a {ndim}-d array, got shape {arr.shape}")
    if any(s < 1 for s in arr.shape):
        raise ValueError(f"{what} dimensions must all be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FeatureMap:
    """Immutable dense feature tensor of shape (channels, rows, cols)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _as_grid(self.data, 3, "FeatureMap"))

    @property
    def d(self) -> int:
        return self.data.shape[0]

    @property
    def h(self) -> int:
        return self.data.shape[1]

    @property
    def w(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class ScalarGrid:
    """Immutable (rows, cols) plane of float64 values."""

    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _as_grid(self.data, 2, "ScalarGrid"))

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def channel_abs_mean(f: FeatureMap) -> ScalarGrid:
    """Per-cell mean absolute activation, ``(1/D) * sum_d |f[d]|``."""
    return ScalarGrid(np.mean(np.abs(f.data), axis=0))


def softmax_flat(g: ScalarGrid) -> ScalarGrid:
    """Softmax over all H*W entries jointly, with max-subtraction.

    The output is strictly positive and sums to 1 (within 1e-12); adding a
    constant to every input entry leaves the output unchanged.
    """
    x = g.data
    e = np.exp(x - x.max())
    return ScalarGrid(e / e.sum())


def save_tensor(f: FeatureMap, base: str) -> None:
    """Write ``f`` as RTF: manifest to ``<base>.json``, payload to ``<base>.bin``."""
    manifest = {"dtype": RTF_DTYPE, "shape": [int(s) for s in f.shape]}
    payload = np.ascontiguousarray(f.data, dtype="<f4").tobytes()
    atomic_write_text(base + ".json", json.dumps(manifest))
    atomic_write_bytes(base + ".bin", payload)


def load_tensor(base: str) -> FeatureMap:
    """Read an RTF tensor written by :func:`save_tensor`.

    Raises ``FormatError`` on a malformed manifest or a payload whose length
    disagrees with the declared shape, and ``OSError`` on unreadable files.
    """
    manifest_path = base + ".json"
    payload_path = base + ".bin"
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{manifest_path}: manifest is not valid JSON") from exc
    if not isinstance(manifest, dict):
        raise FormatError(f"{manifest_path}: manifest must be a JSON object")
    if manifest.get("dtype") != RTF_DTYPE:
        raise FormatError(
            f"{manifest_path}: dtype must be {RTF_DTYPE!r}, got {manifest.get('dtype')!r}")
    shape = manifest.get("shape")
    if (not isinstance(shape, list) or len(shape) != 3
            or not all(isinstance(s, int) and s >= 1 for s in shape)):
        raise FormatError(f"{manifest_path}: shape must be a list of 3 positive ints")
    expected = 4 * shape[0] * shape[1] * shape[2]
    actual = os.path.getsize(payload_path)
    if actual != expected:
        raise FormatError(
            f"{payload_path}: payload is {actual} bytes, shape {shape} requires {expected}")
    with open(payload_path, "rb") as fh:
        raw = fh.read()
    values = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
    return FeatureMap(values)


def save_grid(g: ScalarGrid, base: str) -> None:
    """Write a ScalarGrid as an RTF tensor of shape [1, H, W]."""
    save_tensor(FeatureMap(g.data[np.newaxis]), base)


def load_grid(base: str) -> ScalarGrid:
    f = load_tensor(base)
    if f.d != 1:
        raise FormatError(f"{base}: expected a [1, H, W] grid, got shape {list(f.shape)}")
    return ScalarGrid(f.data[0])
