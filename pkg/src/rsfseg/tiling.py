"""Tile decomposition with curtain overlap, per-tile evolution and merging.

Cores partition the volume. Each core is padded by ``curtain`` voxels on
every face shared with another tile, so the Gaussian stencils evaluated
for core voxels stay inside the padded copy. Tile level sets are merged with
per-axis linear ramps across each overlap band: a band of width
``2 * curtain`` is centered on every interior core boundary.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ParameterError, ShapeError, VolumeFormatError
from .ops import as_grid
from .rsf import RsfParams, evolve, extract_mask
from .seeding import BlobParams, SeedSet, detect_seeds, init_phi
from .volume import Volume, read_volume, write_volume

log = logging.getLogger(__name__)

DEFAULT_TILE = (500, 500, 500)
MERGE_MODES = ("linear", "min", "max", "mean")


def curtain_width(sigma1, sigma2):
    return int(math.ceil(3.0 * max(float(sigma1), float(sigma2))))


@dataclass(frozen=True)
class Tile:
    """One tile; all tuples are (x, y, z)."""

    index: tuple[int, int, int]
    core_origin: tuple[int, int, int]
    core_extent: tuple[int, int, int]
    padded_origin: tuple[int, int, int]
    padded_extent: tuple[int, int, int]

    @property
    def name(self):
        ix, iy, iz = self.index
        return f"tile_z{iz:02d}_y{iy:02d}_x{ix:02d}"

    def _slices(self, origin, extent):
        (x, y, z), (ex, ey, ez) = origin, extent
        return np.s_[z:z + ez, y:y + ey, x:x + ex]

    @property
    def padded_slices(self):
        return self._slices(self.padded_origin, self.padded_extent)

    @property
    def core_slices(self):
        return self._slices(self.core_origin, self.core_extent)

    @property
    def padded_shape(self):
        ex, ey, ez = self.padded_extent
        return ez, ey, ex


@dataclass(frozen=True)
class TileLayout:
    dims: tuple[int, int, int]
    tile_size: tuple[int, int, int]
    curtain: int
    tiles: tuple[Tile, ...]

    def __len__(self):
        return len(self.tiles)

    def stencil_resident(self, radius):
        """True when every core voxel's ``radius`` neighborhood, clipped to the
        volume, lies inside its tile's padded region."""
        for t in self.tiles:
            for a in range(3):
                lo = max(0, t.core_origin[a] - radius)
                hi = min(self.dims[a], t.core_origin[a] + t.core_extent[a] + radius)
                if lo < t.padded_origin[a] or hi > t.padded_origin[a] + t.padded_extent[a]:
                    return False
        return True

    def to_text(self):
        lines = [
            "dims: " + " ".join(map(str, self.dims)),
            "tile_size: " + " ".join(map(str, self.tile_size)),
            f"curtain: {self.curtain}",
        ]
        for t in self.tiles:
            vals = (*t.index, *t.core_origin, *t.core_extent, *t.padded_origin, *t.padded_extent)
            lines.append("tile: " + " ".join(map(str, vals)))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        dims = tile_size = curtain = None
        tiles = []
        try:
            for line in text.splitlines():
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                key, _, value = line.partition(":")
                nums = [int(v) for v in value.split()]
                key = key.strip()
                if key == "dims":
                    dims = tuple(nums)
                elif key == "tile_size":
                    tile_size = tuple(nums)
                elif key == "curtain":
                    (curtain,) = nums
                elif key == "tile":
                    if len(nums) != 15:
                        raise ValueError(line)
                    tiles.append(Tile(*(tuple(nums[i:i + 3]) for i in range(0, 15, 3))))
                else:
                    raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise VolumeFormatError(f"malformed tile manifest: {exc}") from exc
        if dims is None or tile_size is None or curtain is None:
            raise VolumeFormatError("tile manifest needs dims, tile_size and curtain")
        return cls(dims, tile_size, curtain, tuple(tiles))


def _axis_cores(n, size, curtain):
    """Core (start, length) pairs along one axis.

    A trailing remainder shorter than ``2 * curtain`` is folded into the
    previous core so every interior core can host both overlap half-bands.
    """
    starts = list(range(0, n, size))
    if len(starts) > 1 and n - starts[-1] < 2 * curtain:
        starts.pop()
    bounds = starts + [n]
    return [(a, b - a) for a, b in zip(bounds[:-1], bounds[1:])]


def plan_tiles(dims, tile_size=DEFAULT_TILE, sigma1=5.0, sigma2=0.0) -> TileLayout:
    """Split ``dims`` (x, y, z) into cores of ``tile_size`` plus curtains.

    The curtain is ``ceil(3 * max(sigma1, sigma2))``. An axis that is
    actually split needs ``tile_size >= 2 * curtain`` there; an axis that
    fits in one tile has no interior faces and is not checked.
    """
    dims = tuple(int(d) for d in dims)
    tile_size = tuple(int(t) for t in tile_size)
    if len(dims) != 3 or len(tile_size) != 3 or min(dims) < 1 or min(tile_size) < 1:
        raise ParameterError("dims and tile_size need three positive entries (x, y, z)")
    c = curtain_width(sigma1, sigma2)
    for a, (n, t) in enumerate(zip(dims, tile_size)):
        if t < n and t < 2 * c:
            raise ParameterError(
                f"tile size {t} along axis {'xyz'[a]} is smaller than twice the curtain ({c})")
    per_axis = [_axis_cores(n, t, c) for n, t in zip(dims, tile_size)]
    tiles = []
    for iz, (oz, ez) in enumerate(per_axis[2]):
        for iy, (oy, ey) in enumerate(per_axis[1]):
            for ix, (ox, ex) in enumerate(per_axis[0]):
                core_o, core_e = (ox, oy, oz), (ex, ey, ez)
                po, pe = [], []
                for a in range(3):
                    lo = max(0, core_o[a] - c)
                    hi = min(dims[a], core_o[a] + core_e[a] + c)
                    po.append(lo)
                    pe.append(hi - lo)
                tiles.append(Tile((ix, iy, iz), core_o, core_e, tuple(po), tuple(pe)))
    return TileLayout(dims, tile_size, c, tuple(tiles))


def extract_tile(vol, tile: Tile) -> np.ndarray:
    """Copy of the padded region of ``vol`` (shape ``(nz, ny, nx)``)."""
    data = vol.data if isinstance(vol, Volume) else np.asarray(vol)
    if data.ndim == 2:
        data = data[np.newaxis]
    return np.array(data[tile.padded_slices], copy=True)


def _ramp_weights(tile: Tile, layout: TileLayout):
    """Per-axis weight vectors over the tile's padded extent."""
    c = layout.curtain
    out = []
    for a in range(3):
        po, pe = tile.padded_origin[a], tile.padded_extent[a]
        g = np.arange(po, po + pe, dtype=np.float64)
        w = np.ones(pe)
        core_lo = tile.core_origin[a]
        core_hi = core_lo + tile.core_extent[a]
        if core_lo > 0:
            start = core_lo - c
            band = (g >= start) & (g < start + 2 * c)
            w[band] = (g[band] - start + 0.5) / (2 * c)
        if core_hi < layout.dims[a]:
            start = core_hi - c
            band = (g >= start) & (g < start + 2 * c)
            w[band] = 1.0 - (g[band] - start + 0.5) / (2 * c)
        out.append(w)
    return out


def merge_weights(tile: Tile, layout: TileLayout) -> np.ndarray:
    """Product-of-ramps weight volume on the tile's padded region."""
    wx, wy, wz = _ramp_weights(tile, layout)
    return wz[:, None, None] * wy[None, :, None] * wx[None, None, :]


def merge_phi(tile_phis, layout: TileLayout, mode="linear") -> np.ndarray:
    """Reassemble a global level set from per-tile level sets.

    ``linear`` blends overlaps with renormalized products of per-axis
    ramps; ``min``, ``max`` and ``mean`` combine every tile whose padded
    region covers a voxel. Voxels covered by a single tile take its value
    unchanged in every mode.
    """
    if mode not in MERGE_MODES:
        raise ParameterError(f"merge mode must be one of {MERGE_MODES}, got {mode!r}")
    tile_phis = list(tile_phis)
    if len(tile_phis) != len(layout.tiles):
        raise ShapeError(f"{len(tile_phis)} tile level sets for a layout of {len(layout.tiles)} tiles")
    nx, ny, nz = layout.dims
    shape = (nz, ny, nx)
    for t, ph in zip(layout.tiles, tile_phis):
        if np.shape(ph) != t.padded_shape:
            raise ShapeError(f"{t.name}: level set shape {np.shape(ph)} != padded shape {t.padded_shape}")

    if mode == "linear":
        acc = np.zeros(shape)
        wsum = np.zeros(shape)
        for t, ph in zip(layout.tiles, tile_phis):
            w = merge_weights(t, layout)
            acc[t.padded_slices] += w * ph
            wsum[t.padded_slices] += w
        return acc / wsum
    if mode == "mean":
        acc = np.zeros(shape)
        cnt = np.zeros(shape)
        for t, ph in zip(layout.tiles, tile_phis):
            acc[t.padded_slices] += ph
            cnt[t.padded_slices] += 1.0
        return acc / cnt
    fill = np.inf if mode == "min" else -np.inf
    op = np.minimum if mode == "min" else np.maximum
    out = np.full(shape, fill)
    for t, ph in zip(layout.tiles, tile_phis):
        view = out[t.padded_slices]
        op(view, ph, out=view)
    return out


def _tile_seeds(seeds: SeedSet, tile: Tile):
    lo = np.asarray(tile.padded_origin)
    hi = lo + np.asarray(tile.padded_extent)
    keep = np.all((seeds.points >= lo) & (seeds.points < hi), axis=1)
    return SeedSet(seeds.points[keep] - lo, seeds.responses[keep],
                   seeds.detection_scale, seeds.response_threshold)


def _run_tile(image, tile, layout, rsf_params, blob_params, seed_radius, global_seeds):
    sub = extract_tile(image, tile)
    seeds = _tile_seeds(global_seeds, tile) if global_seeds is not None else detect_seeds(sub, blob_params)
    if len(seeds) == 0:
        log.warning("%s: no seeds, tile contributes an empty interior", tile.name)
        return np.full(sub.shape, float(layout.curtain))
    phi0, _ = init_phi(sub, blob_params, seed_radius=seed_radius, seeds=seeds)
    return evolve(phi0, sub, rsf_params)


def run_pipeline(vol, rsf_params: RsfParams, blob_params: BlobParams = BlobParams(),
                 layout: TileLayout | None = None, workers=1, seed_radius=2.0,
                 global_seeding=False, merge_mode="linear", spill_dir=None, return_tiles=False):
    """Seed, evolve and merge every tile; returns ``(phi, mask)``.

    Tiles are independent, so the result does not depend on ``workers`` or
    on completion order. With several workers each tile runs single-threaded
    kernels on its own thread. ``spill_dir`` writes every tile level set as
    ``tile_zZZ_yYY_xXX.vmh`` plus a ``layout.txt`` manifest. With
    ``return_tiles`` the per-tile level sets are returned as a third item.
    """
    image = as_grid(vol.data if isinstance(vol, Volume) else vol)
    nz, ny, nx = image.shape
    if layout is None:
        layout = plan_tiles((nx, ny, nz), DEFAULT_TILE, rsf_params.sigma1, rsf_params.sigma2)
    if tuple(layout.dims) != (nx, ny, nz):
        raise ShapeError(f"layout dims {layout.dims} do not match volume dims {(nx, ny, nz)}")
    workers = max(1, int(workers or 1))
    seeds = detect_seeds(image, blob_params) if global_seeding else None

    def job(tile):
        return _run_tile(image, tile, layout, rsf_params, blob_params, seed_radius, seeds)

    def threaded_job(tile):
        with kernels.serial_kernels():
            return job(tile)

    if workers == 1 or len(layout.tiles) == 1:
        with kernels.worker_threads(workers):
            phis = [job(t) for t in layout.tiles]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            phis = list(pool.map(threaded_job, layout.tiles))

    if spill_dir is not None:
        spill_tiles(spill_dir, layout, phis)
    phi = merge_phi(phis, layout, merge_mode)
    out = phi if np.ndim(vol) == 3 or isinstance(vol, Volume) else phi[0]
    if return_tiles:
        return out, extract_mask(out), phis
    return out, extract_mask(out)


def spill_tiles(directory, layout: TileLayout, tile_phis):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for t, ph in zip(layout.tiles, tile_phis):
        write_volume(d / f"{t.name}.vmh", Volume(ph))
    (d / "layout.txt").write_text(layout.to_text(), encoding="utf-8")
    return d


def load_spilled(directory):
    """Read back a spilled layout and its tile level sets."""
    d = Path(directory)
    try:
        layout = TileLayout.from_text((d / "layout.txt").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise VolumeFormatError(f"no layout manifest in {d}") from exc
    phis = [read_volume(d / f"{t.name}.vmh").data.astype(np.float64) for t in layout.tiles]
    return layout, phis
