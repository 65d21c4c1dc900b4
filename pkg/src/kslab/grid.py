"""Structured cell-centered grids, scalar/vector fields, and quadrature.

Conventions used throughout the package:

  - Cells are uniform per axis: spacing h_a = extent_a / cells_a, cell
    center at (index + 0.5) * h_a.
  - topology "neumann_box": homogeneous Neumann walls realized by mirror
    ghost cells (ghost value = adjacent interior value), so the discrete
    normal derivative at every wall face is exactly zero.
  - topology "periodic_torus": wraparound ghosts.
  - Face-centered vector components along axis a carry cells_a + 1 entries
    on that axis (faces at 0, h, ..., extent).  On the torus, face 0 and
    face cells_a are the same physical face and must store equal values;
    quadrature and divergence count each physical face once.
  - integrate() is the midpoint rule: sum(values) * cell_volume.  Sums are
    numpy pairwise reductions over C-contiguous arrays, so results are
    bit-identical across runs and independent of BLAS thread counts.
  - Fields are immutable once constructed (values exposed read-only) and
    validated finite at construction; NaN/Inf raises CorruptionError
    instead of propagating silently.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import CorruptionError, StaggeringError

NEUMANN_BOX = "neumann_box"
PERIODIC_TORUS = "periodic_torus"
TOPOLOGIES = (NEUMANN_BOX, PERIODIC_TORUS)

SNAPSHOT_MAGIC = b"KSF1"
_TOPOLOGY_BYTE = {NEUMANN_BOX: 0, PERIODIC_TORUS: 1}
_BYTE_TOPOLOGY = {v: k for k, v in _TOPOLOGY_BYTE.items()}


@dataclass(frozen=True)
class GridSpec:
    """Static description of a structured grid."""

    dim: int
    cells: tuple[int, ...]
    extent: tuple[float, ...]
    topology: str = NEUMANN_BOX

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(int(c) for c in self.cells))
        object.__setattr__(self, "extent", tuple(float(e) for e in self.extent))
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if len(self.cells) != self.dim or len(self.extent) != self.dim:
            raise ValueError(
                f"cells and extent must have length dim={self.dim}, "
                f"got {len(self.cells)} and {len(self.extent)}"
            )
        if any(c < 4 for c in self.cells):
            raise ValueError(f"every axis needs at least 4 cells, got {self.cells}")
        if any(e <= 0.0 for e in self.extent):
            raise ValueError(f"extent must be positive, got {self.extent}")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")


class Grid:
    """Grid handle with precomputed spacings, volume and center coordinates."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.h = np.array([e / c for e, c in zip(spec.extent, spec.cells)])
        self.cell_volume = float(np.prod(self.h))
        self.shape = spec.cells
        self.size = int(np.prod(spec.cells))
        self._meshes: tuple[np.ndarray, ...] | None = None

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def topology(self) -> str:
        return self.spec.topology

    @property
    def periodic(self) -> bool:
        return self.spec.topology == PERIODIC_TORUS

    def centers(self, axis: int) -> np.ndarray:
        """1D cell-center coordinates along one axis."""
        n = self.spec.cells[axis]
        return (np.arange(n) + 0.5) * self.h[axis]

    def meshes(self) -> tuple[np.ndarray, ...]:
        """Full center-coordinate arrays (ij indexing), cached."""
        if self._meshes is None:
            axes = [self.centers(a) for a in range(self.dim)]
            self._meshes = tuple(np.meshgrid(*axes, indexing="ij"))
        return self._meshes

    def compatible(self, other: "Grid") -> bool:
        return self is other or self.spec == other.spec

    def __repr__(self):
        return f"Grid({self.spec})"


def make_grid(spec: GridSpec) -> Grid:
    """Build a grid handle; GridSpec construction enforces the invariants."""
    return Grid(spec)


def _readonly(values: np.ndarray) -> np.ndarray:
    view = values.view()
    view.setflags(write=False)
    return view


@dataclass(frozen=True)
class Field:
    """One double-precision scalar per cell, immutable and finite."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.isfinite(v).all():
            raise CorruptionError("field contains non-finite values")
        if not v.flags.c_contiguous:
            v = np.ascontiguousarray(v)
        object.__setattr__(self, "values", _readonly(v))


@dataclass(frozen=True)
class VectorField:
    """Per-axis component arrays, face- or cell-centered.

    Face components along axis a have cells_a + 1 entries on that axis; on
    the torus entry 0 and entry cells_a describe the same physical face.
    """

    grid: Grid
    components: tuple[np.ndarray, ...]
    staggering: str = "face"

    def __post_init__(self):
        if self.staggering not in ("face", "cell"):
            raise StaggeringError(f"unknown staggering {self.staggering!r}")
        if len(self.components) != self.grid.dim:
            raise ValueError(
                f"need {self.grid.dim} components, got {len(self.components)}"
            )
        comps = []
        for axis, comp in enumerate(self.components):
            comp = np.asarray(comp, dtype=np.float64)
            want = list(self.grid.shape)
            if self.staggering == "face":
                want[axis] += 1
            if comp.shape != tuple(want):
                raise ValueError(
                    f"component {axis} shape {comp.shape} != expected {tuple(want)}"
                )
            if not np.isfinite(comp).all():
                raise CorruptionError("vector component contains non-finite values")
            comps.append(_readonly(np.ascontiguousarray(comp)))
        object.__setattr__(self, "components", tuple(comps))


def fill(grid: Grid, f: Callable) -> Field:
    """Sample f at cell centers: values[i] = f(center of cell i).

    f receives one coordinate array per axis (vectorized); plain scalar
    functions are wrapped with np.vectorize as a fallback.
    """
    meshes = grid.meshes()
    try:
        out = np.asarray(f(*meshes), dtype=np.float64)
    except (TypeError, ValueError):
        out = np.vectorize(f, otypes=[np.float64])(*meshes)
    if out.shape != grid.shape:
        out = np.broadcast_to(out, grid.shape)
    return Field(grid, np.array(out, dtype=np.float64))


def integrate(field: Field) -> float:
    """Midpoint quadrature: sum(values) * cell_volume (pairwise summation)."""
    total = float(np.sum(field.values)) * field.grid.cell_volume
    if not math.isfinite(total):
        raise CorruptionError("integral is non-finite")
    return total


def lp_norm(field: Field, p: float) -> float:
    """(integral of |f|^p)^(1/p); p = inf gives max|values|."""
    if p < 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    if math.isinf(p):
        return float(np.max(np.abs(field.values)))
    absv = np.abs(field.values)
    if p == 1.0:
        raw = float(np.sum(absv))
    elif p == 2.0:
        raw = float(np.sum(absv * absv))
    else:
        raw = float(np.sum(absv**p))
    total = raw * field.grid.cell_volume
    if not math.isfinite(total):
        raise CorruptionError("norm is non-finite")
    return total ** (1.0 / p)


def constant_field(grid: Grid, value: float) -> Field:
    return Field(grid, np.full(grid.shape, float(value)))


# --- snapshot file format -------------------------------------------------
#
# Little-endian binary, in this order:
#   4 bytes   magic "KSF1"
#   u32       dim
#   u32 * dim cells per axis
#   f64 * dim extent per axis
#   f64       time
#   u8        topology (0 = neumann_box, 1 = periodic_torus)
#   f64 * N   values, row-major (C order)


def write_snapshot(field: Field, time: float, path) -> None:
    spec = field.grid.spec
    header = SNAPSHOT_MAGIC
    header += struct.pack("<I", spec.dim)
    header += struct.pack(f"<{spec.dim}I", *spec.cells)
    header += struct.pack(f"<{spec.dim}d", *spec.extent)
    header += struct.pack("<d", float(time))
    header += struct.pack("<B", _TOPOLOGY_BYTE[spec.topology])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_snapshot(path) -> tuple[Field, float]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a KSF1 snapshot")
    off = 4
    (dim,) = struct.unpack_from("<I", raw, off)
    off += 4
    cells = struct.unpack_from(f"<{dim}I", raw, off)
    off += 4 * dim
    extent = struct.unpack_from(f"<{dim}d", raw, off)
    off += 8 * dim
    (time,) = struct.unpack_from("<d", raw, off)
    off += 8
    (topo_byte,) = struct.unpack_from("<B", raw, off)
    off += 1
    spec = GridSpec(dim=dim, cells=cells, extent=extent, topology=_BYTE_TOPOLOGY[topo_byte])
    grid = make_grid(spec)
    n = int(np.prod(cells))
    values = np.frombuffer(raw, dtype="<f8", count=n, offset=off)
    return Field(grid, values.astype(np.float64).reshape(cells)), time
