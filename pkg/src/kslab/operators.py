"""Second-order discrete differential operators, boundary-aware.

All operators run on the conventions of the grid module: face-centered
differences (value difference / h), mirror ghosts on neumann_box walls
(normal face components are exactly zero there) and wraparound on the
torus.  laplacian is literally divergence(gradient(f)), so the identity
div o grad == laplacian holds bit-exactly by construction.
"""

from __future__ import annotations

import numpy as np

from .errors import PositivityError, StaggeringError
from .grid import Field, Grid, VectorField

_NEG_TOL = 1e-12  # relative undershoot tolerated before a positivity error


def _sl(ndim: int, axis: int, s: slice) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def _face_gradient(values: np.ndarray, grid: Grid) -> list[np.ndarray]:
    """Raw face-centered central differences, one array per axis."""
    nd = grid.dim
    comps = []
    for axis in range(nd):
        h = grid.h[axis]
        shape = list(values.shape)
        shape[axis] += 1
        comp = np.zeros(shape)
        interior = (values[_sl(nd, axis, slice(1, None))]
                    - values[_sl(nd, axis, slice(None, -1))]) / h
        comp[_sl(nd, axis, slice(1, -1))] = interior
        if grid.periodic:
            wrap = (values[_sl(nd, axis, slice(0, 1))]
                    - values[_sl(nd, axis, slice(-1, None))]) / h
            comp[_sl(nd, axis, slice(0, 1))] = wrap
            comp[_sl(nd, axis, slice(-1, None))] = wrap
        # neumann_box: wall faces stay exactly 0
        comps.append(comp)
    return comps


def _face_divergence(comps: list[np.ndarray], grid: Grid) -> np.ndarray:
    """Per-cell (outflux - influx)/h summed over axes, fixed axis order."""
    nd = grid.dim
    out = None
    for axis in range(nd):
        d = np.diff(comps[axis], axis=axis) / grid.h[axis]
        out = d if out is None else out + d
    return out


def gradient(field: Field) -> VectorField:
    """Face-centered gradient; Neumann wall faces carry exact zeros."""
    return VectorField(field.grid, tuple(_face_gradient(field.values, field.grid)))


def divergence(v: VectorField) -> Field:
    if v.staggering != "face":
        raise StaggeringError("divergence needs a face-centered vector field")
    return Field(v.grid, _face_divergence(list(v.components), v.grid))


def laplacian(field: Field) -> Field:
    """(2*dim+1)-point Laplacian as divergence of the face gradient."""
    comps = _face_gradient(field.values, field.grid)
    return Field(field.grid, _face_divergence(comps, field.grid))


def _face_average(values: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """Arithmetic average of the two cells adjacent to each face."""
    nd = grid.dim
    shape = list(values.shape)
    shape[axis] += 1
    avg = np.zeros(shape)
    avg[_sl(nd, axis, slice(1, -1))] = 0.5 * (
        values[_sl(nd, axis, slice(1, None))] + values[_sl(nd, axis, slice(None, -1))]
    )
    if grid.periodic:
        wrap = 0.5 * (values[_sl(nd, axis, slice(0, 1))]
                      + values[_sl(nd, axis, slice(-1, None))])
        avg[_sl(nd, axis, slice(0, 1))] = wrap
        avg[_sl(nd, axis, slice(-1, None))] = wrap
    else:
        avg[_sl(nd, axis, slice(0, 1))] = values[_sl(nd, axis, slice(0, 1))]
        avg[_sl(nd, axis, slice(-1, None))] = values[_sl(nd, axis, slice(-1, None))]
    return avg


def _face_neighbors(values: np.ndarray, grid: Grid, axis: int):
    """(lower cell, upper cell) value arrays aligned with the faces of one axis.

    Wall faces of a box reuse the adjacent interior value on both sides;
    their fluxes are zeroed by construction elsewhere.
    """
    nd = grid.dim
    shape = list(values.shape)
    shape[axis] += 1
    lo = np.zeros(shape)
    hi = np.zeros(shape)
    lo[_sl(nd, axis, slice(1, None))] = values
    hi[_sl(nd, axis, slice(None, -1))] = values
    if grid.periodic:
        lo[_sl(nd, axis, slice(0, 1))] = values[_sl(nd, axis, slice(-1, None))]
        hi[_sl(nd, axis, slice(-1, None))] = values[_sl(nd, axis, slice(0, 1))]
    else:
        lo[_sl(nd, axis, slice(0, 1))] = values[_sl(nd, axis, slice(0, 1))]
        hi[_sl(nd, axis, slice(-1, None))] = values[_sl(nd, axis, slice(-1, None))]
    return lo, hi


def chemotactic_flux(n: Field, c: Field, chi: float, upwind: bool = False) -> VectorField:
    """Face flux chi * n_face * grad(c)_face.

    n_face is the arithmetic cell average, or with upwind=True the cell on
    the upstream side of the face velocity chi*grad(c); a face velocity of
    exactly zero falls back to the average (symmetry preservation).
    Neumann wall faces carry zero flux.
    """
    grid = n.grid
    if not grid.compatible(c.grid):
        raise ValueError("n and c live on different grids")
    n_sup = float(np.max(np.abs(n.values))) if n.values.size else 0.0
    if float(np.min(n.values)) < -_NEG_TOL * max(n_sup, 1.0):
        raise PositivityError("chemotactic_flux: n has negative cells")
    gc = _face_gradient(c.values, grid)
    comps = []
    for axis in range(grid.dim):
        if upwind:
            lo, hi = _face_neighbors(n.values, grid, axis)
            avg = 0.5 * (lo + hi)
            n_face = np.where(gc[axis] > 0.0, lo, np.where(gc[axis] < 0.0, hi, avg))
        else:
            n_face = _face_average(n.values, grid, axis)
        comps.append(chi * n_face * gc[axis])
    return VectorField(grid, tuple(comps))


def _hessian_parts(values: np.ndarray, grid: Grid):
    """Diagonal second differences and the Frobenius-squared array.

    Diagonals use the 3-point stencil; off-diagonals use centered cross
    differences.  Ghosts: mirror on the box (corners doubly mirrored via
    edge padding), wraparound on the torus.
    """
    nd = grid.dim
    mode = "wrap" if grid.periodic else "edge"
    pad = np.pad(values, 1, mode=mode)
    shape = values.shape

    def win(offsets):
        sl = tuple(slice(1 + o, 1 + o + n) for o, n in zip(offsets, shape))
        return pad[sl]

    center = win((0,) * nd)
    diags = []
    for axis in range(nd):
        plus = [0] * nd
        minus = [0] * nd
        plus[axis] = 1
        minus[axis] = -1
        d = (win(plus) - 2.0 * center + win(minus)) / (grid.h[axis] ** 2)
        diags.append(d)

    frob = None
    for d in diags:
        sq = d * d
        frob = sq if frob is None else frob + sq
    for a in range(nd):
        for b in range(a + 1, nd):
            pp = [0] * nd
            pm = [0] * nd
            mp = [0] * nd
            mm = [0] * nd
            pp[a], pp[b] = 1, 1
            pm[a], pm[b] = 1, -1
            mp[a], mp[b] = -1, 1
            mm[a], mm[b] = -1, -1
            cross = (win(pp) - win(pm) - win(mp) + win(mm)) / (
                4.0 * grid.h[a] * grid.h[b]
            )
            frob = frob + 2.0 * cross * cross
    return diags, frob


def hessian_frobenius_sq(field: Field) -> Field:
    """Per-cell squared Frobenius norm of the discrete Hessian."""
    _, frob = _hessian_parts(field.values, field.grid)
    return Field(field.grid, frob)
