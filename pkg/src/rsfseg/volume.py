"""Dense scalar volumes and the ``.vmh`` header + raw payload file format.

Arrays are stored as ``(nz, ny, nx)`` C-ordered numpy arrays so the flat
index of voxel ``(x, y, z)`` is ``x + nx * (y + ny * z)``. Dimensions are
always reported in ``(nx, ny, nz)`` order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError, ShapeError, VolumeFormatError

_DTYPES = {"u8": np.dtype("<u1"), "u16": np.dtype("<u2"), "f32": np.dtype("<f4")}
_FULL_SCALE = {"u8": 255.0, "u16": 65535.0}


@dataclass
class Volume:
    """A 3D scalar field plus metadata.

    ``data`` is float32 with shape ``(nz, ny, nx)``. ``spacing`` is carried
    along for provenance; no operator in this package uses it.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    value_range: tuple[float, float] | None = None

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim == 2:
            a = a[np.newaxis]
        if a.ndim != 3 or min(a.shape) < 1:
            raise ShapeError(f"volume data must be 3D with positive dims, got shape {a.shape}")
        self.data = np.ascontiguousarray(a, dtype=np.float32)
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.value_range is None and self.data.size:
            self.value_range = (float(self.data.min()), float(self.data.max()))

    @classmethod
    def from_flat(cls, flat, dims, spacing=(1.0, 1.0, 1.0), value_range=None):
        nx, ny, nz = (int(d) for d in dims)
        flat = np.asarray(flat)
        if flat.size != nx * ny * nz:
            raise ShapeError(f"payload has {flat.size} values, dims {dims} need {nx * ny * nz}")
        return cls(flat.reshape(nz, ny, nx), spacing, value_range)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return nx, ny, nz

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def index(self, x, y, z):
        nx, ny, _ = self.dims
        return x + nx * (y + ny * z)

    def coords(self, i):
        nx, ny, _ = self.dims
        return i % nx, (i // nx) % ny, i // (nx * ny)


@dataclass(frozen=True)
class Kernel1D:
    """Symmetric, normalized 1D filter taps."""

    radius: int
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if self.radius < 0 or w.shape != (2 * self.radius + 1,):
            raise ParameterError(f"kernel of radius {self.radius} needs {2 * self.radius + 1} weights")
        if abs(w.sum() - 1.0) > 1e-6:
            raise ParameterError(f"kernel weights sum to {w.sum()}, expected 1")
        if not np.allclose(w, w[::-1], rtol=0, atol=1e-12):
            raise ParameterError("kernel weights are not symmetric")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def is_dirac(self):
        return self.radius == 0


def gaussian_kernel(sigma: float) -> Kernel1D:
    """Sampled Gaussian truncated at ``ceil(3 sigma)`` and renormalized to unit sum.

    ``sigma == 0`` gives the identity (Dirac) kernel.
    """
    sigma = float(sigma)
    if not sigma >= 0 or not math.isfinite(sigma):
        raise ParameterError(f"sigma must be a finite value >= 0, got {sigma}")
    if sigma == 0:
        return Kernel1D(0, np.ones(1))
    radius = int(math.ceil(3.0 * sigma))
    u = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(u * u) / (2.0 * sigma * sigma))
    w /= w.sum()
    # exact symmetry regardless of summation rounding
    w = 0.5 * (w + w[::-1])
    return Kernel1D(radius, w)


def _parse_header(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise VolumeFormatError(f"header not found: {path}") from exc
    except UnicodeDecodeError as exc:
        raise VolumeFormatError(f"header is not UTF-8 text: {path}") from exc
    fields = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise VolumeFormatError(f"{path}:{lineno}: expected 'key: value', got {line!r}")
        fields[key.strip()] = value.strip()
    for key in ("dims", "dtype", "data"):
        if key not in fields:
            raise VolumeFormatError(f"{path}: missing '{key}' line")
    return fields


def _numbers(text, count, kind, path, key):
    parts = text.split()
    if len(parts) != count:
        raise VolumeFormatError(f"{path}: '{key}' needs {count} values, got {text!r}")
    try:
        return tuple(kind(p) for p in parts)
    except ValueError as exc:
        raise VolumeFormatError(f"{path}: bad '{key}' value {text!r}") from exc


def read_volume(path) -> Volume:
    """Load a ``.vmh`` header and its raw payload.

    Integer payloads are converted to float32 and rescaled so the dtype's
    full scale maps to 255; float payloads are returned unchanged.
    """
    path = Path(path)
    fields = _parse_header(path)
    dims = _numbers(fields["dims"], 3, int, path, "dims")
    if min(dims) < 1:
        raise VolumeFormatError(f"{path}: dims must be positive, got {dims}")
    spacing = _numbers(fields.get("spacing", "1 1 1"), 3, float, path, "spacing")
    dtype_name = fields["dtype"]
    if dtype_name not in _DTYPES:
        raise VolumeFormatError(f"{path}: unsupported dtype {dtype_name!r}")
    raw_path = path.parent / fields["data"]
    try:
        payload = np.fromfile(raw_path, dtype=_DTYPES[dtype_name])
    except FileNotFoundError as exc:
        raise VolumeFormatError(f"payload not found: {raw_path}") from exc
    nx, ny, nz = dims
    if payload.size != nx * ny * nz:
        raise VolumeFormatError(
            f"{path}: header dims {dims} need {nx * ny * nz} values, payload has {payload.size}")
    source_range = None
    if "range" in fields:
        source_range = _numbers(fields["range"], 2, float, path, "range")
    elif payload.size:
        source_range = (float(payload.min()), float(payload.max()))
    if dtype_name in _FULL_SCALE:
        data = payload.astype(np.float32) * np.float32(255.0 / _FULL_SCALE[dtype_name])
    else:
        data = payload
    if not np.all(np.isfinite(data)):
        raise VolumeFormatError(f"{path}: payload contains NaN or Inf")
    return Volume.from_flat(data, dims, spacing, source_range)


def write_volume(path, vol: Volume, dtype: str = "f32") -> Path:
    """Write ``vol`` as ``path`` (header) plus a sibling ``.raw`` payload."""
    path = Path(path)
    if path.suffix != ".vmh":
        path = path.with_suffix(".vmh")
    if dtype not in _DTYPES:
        raise ParameterError(f"unsupported dtype {dtype!r}")
    if not isinstance(vol, Volume):
        vol = Volume(vol)
    raw_path = path.with_suffix(".raw")
    data = vol.data
    if dtype != "f32":
        info = np.iinfo(_DTYPES[dtype])
        # inverse of the read-side rescale, so u8/u16 round trips are stable
        scale = np.float32(_FULL_SCALE[dtype] / 255.0)
        data = np.clip(np.rint(data * scale), info.min, info.max)
    data.astype(_DTYPES[dtype]).tofile(raw_path)
    nx, ny, nz = vol.dims
    lines = [
        f"dims: {nx} {ny} {nz}",
        "spacing: " + " ".join(repr(float(s)) for s in vol.spacing),
        f"dtype: {dtype}",
        f"data: {raw_path.name}",
    ]
    if vol.value_range is not None:
        lines.append(f"range: {vol.value_range[0]!r} {vol.value_range[1]!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
