"""Functional evaluation, inequality monitors and criterion accumulators.

Quadrature conventions (applied uniformly, mirrored by the brute-force
test oracle):

  - Gradient-based integrands are formed at cell centers by averaging the
    two adjacent face values per component, then squaring/summing.
  - The kinetic energy of the effective velocity w = chi*grad c - grad log n
    is the one face-centered quadrature: faces weigh one cell volume
    (half a volume on Neumann walls, where w vanishes anyway).
  - log/division diagnostics clip n (and c where divided) at a positivity
    floor, max(config floor, 1e-12 * sup); the floor never feeds back into
    the dynamics.  sqrt(c) clamps negative c at zero so signed verification
    fields remain evaluable.

V is the weighted nonnegative functional
    integral of [ n/2 |grad log n|^2 + k1/(2 chi) n^2 c + k1/chi^2 n^2
                  + (k1/2 + k2) n |grad c|^2 + k2 |lap c|^2 + k3 |grad c|^4 ]
and G is its companion dissipation rate
    k1/chi^2 |grad n|^2 + k1/(2 chi) c n^3 + k1/chi c|grad n|^2
    + k2/2 |grad c_t|^2 + k2/2 |grad lap c|^2 + (k1+k2)/4 n |lap c|^2
    + k3 |grad |grad c|^2|^2 + 4 k3 |hess c|^2 |grad c|^2
    + 1/16 n |hess log n|^2,
with c_t evaluated pointwise from the model as lap c - n c.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import PositivityError
from .grid import Field, Grid, VectorField, lp_norm
from .operators import (_face_average, _face_divergence, _face_gradient,
                        _hessian_parts, _sl)

WINKLER_CONSTANT = (2.0 + math.sqrt(3.0)) ** 2  # 13.9282...

_TINY_FLOOR = 1e-300


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One time-stamped row of every monitored functional."""

    t: float
    mass: float                 # integral n
    n_sup: float                # sup |n|
    c_sup: float                # sup |c|
    entropy: float              # integral n log n
    dirichlet_sqrt_c: float     # 2 integral |grad sqrt(c)|^2
    fisher: float               # integral |grad n|^2 / n
    n_gradlog_sq: float         # integral n |grad log n|^2
    n_gradc_sq: float           # integral n |grad c|^2
    n_l2_sq: float              # integral n^2
    cross_n2c: float            # integral n^2 c
    lap_c_l2_sq: float          # integral |lap c|^2
    gradc_l4_4: float           # integral |grad c|^4
    cn3: float                  # integral c n^3
    c_gradn_sq: float           # integral c |grad n|^2
    kinetic_E: float            # 1/2 integral n |w|^2, face quadrature
    V: float                    # weighted functional, see module docstring
    G: float                    # companion dissipation rate
    gradc_inf: float            # sup |grad c|
    n_ls_norm: float            # L^s norm of n for the configured s
    c_mass: float               # integral c
    n_gradc_sq_over_c: float    # integral n |grad c|^2 / c
    c_hesslog_c_sq: float       # integral c |hess log c|^2


CSV_FIELDS = [f.name for f in dataclasses.fields(DiagnosticsRecord)]


@dataclass(frozen=True)
class CriterionAccumulator:
    """Running space-time criterion integrals for one (s, r) pair.

    value_ns tracks integral_0^t ||n||_{L^s}^r dtau (running max of the
    norm when r is infinite); value_gc tracks integral_0^t ||grad c||_inf^2.
    """

    s: float
    r: float
    value_ns: float = 0.0
    value_gc: float = 0.0

    def __post_init__(self):
        if not self.s > 1.5:
            raise ValueError(f"s must exceed 3/2, got {self.s}")
        if self.r < 1.0:
            raise ValueError(f"r must be at least 1, got {self.r}")

    @property
    def admissible(self) -> bool:
        three_over_s = 0.0 if math.isinf(self.s) else 3.0 / self.s
        two_over_r = 0.0 if math.isinf(self.r) else 2.0 / self.r
        return three_over_s + two_over_r <= 2.0


def _cell_gradient(values: np.ndarray, grid: Grid) -> list[np.ndarray]:
    """Cell-centered gradient components: two adjacent faces averaged."""
    faces = _face_gradient(values, grid)
    nd = grid.dim
    out = []
    for axis in range(nd):
        lo = faces[axis][_sl(nd, axis, slice(None, -1))]
        hi = faces[axis][_sl(nd, axis, slice(1, None))]
        out.append(0.5 * (lo + hi))
    return out


def _cell_grad_sq(values: np.ndarray, grid: Grid) -> np.ndarray:
    comps = _cell_gradient(values, grid)
    out = comps[0] * comps[0]
    for comp in comps[1:]:
        out = out + comp * comp
    return out


def _face_quadrature(weight_values: np.ndarray, comps: Sequence[np.ndarray],
                     grid: Grid) -> float:
    """Sum over physical faces of weight_face * comp^2 * cell_volume."""
    nd = grid.dim
    total = 0.0
    for axis in range(nd):
        wf = _face_average(weight_values, grid, axis)
        contrib = wf * comps[axis] * comps[axis]
        if grid.periodic:
            total += float(np.sum(contrib[_sl(nd, axis, slice(None, -1))]))
        else:
            total += float(np.sum(contrib[_sl(nd, axis, slice(1, -1))]))
            total += 0.5 * float(np.sum(contrib[_sl(nd, axis, slice(0, 1))]))
            total += 0.5 * float(np.sum(contrib[_sl(nd, axis, slice(-1, None))]))
    return total * grid.cell_volume


def _check_nonnegative(values: np.ndarray, what: str) -> float:
    sup = float(np.max(np.abs(values))) if values.size else 0.0
    if float(np.min(values)) < -1e-12 * max(sup, 1.0):
        raise PositivityError(f"{what} has negative cells")
    return sup


def effective_velocity(n: Field, c: Field, chi: float,
                       floor: Optional[float] = None) -> VectorField:
    """Face-centered w = chi * grad c - grad log n.

    log n is taken after clipping n at the floor; with floor=None a
    nonpositive n is rejected instead of clipped.
    """
    grid = n.grid
    nv = n.values
    if floor is None:
        if float(np.min(nv)) <= 0.0:
            raise PositivityError("effective_velocity needs strictly positive n")
        n_reg = nv
    else:
        n_reg = np.maximum(nv, max(floor, _TINY_FLOOR))
    gc = _face_gradient(c.values, grid)
    glog = _face_gradient(np.log(n_reg), grid)
    comps = tuple(chi * gc[a] - glog[a] for a in range(grid.dim))
    return VectorField(grid, comps)


def kinetic_energy(n: Field, w: VectorField) -> float:
    """1/2 integral n |w|^2 by face quadrature with face-averaged n."""
    return 0.5 * _face_quadrature(n.values, w.components, n.grid)


def pointwise_hessian_check(field: Field) -> float:
    """max over cells of (trace of hess)^2 - dim * |hess|^2; <= 0 always.

    The trace reuses the same diagonal second differences as the Frobenius
    norm, so the bound is the cellwise Cauchy-Schwarz inequality on the
    diagonal and holds without tolerance.
    """
    diags, frob = _hessian_parts(field.values, field.grid)
    trace = diags[0]
    for d in diags[1:]:
        trace = trace + d
    return float(np.max(trace * trace - field.grid.dim * frob))


def winkler_ratio(n: Field, floor: Optional[float] = None) -> Optional[float]:
    """integral |grad n|^4 / n^3 over integral n |hess log n|^2.

    For positive fields with zero normal derivative the ratio is bounded by
    (2 + sqrt(dim))^2 <= WINKLER_CONSTANT.  Returns None for constant
    fields (0/0).
    """
    nv = n.values
    if floor is None:
        if float(np.min(nv)) <= 0.0:
            raise PositivityError("winkler_ratio needs strictly positive n")
        n_reg = nv
    else:
        if float(np.min(nv)) < 0.0:
            raise PositivityError("winkler_ratio: n has negative cells")
        n_reg = np.maximum(nv, max(floor, _TINY_FLOOR))
    grid = n.grid
    vol = grid.cell_volume
    gn_sq = _cell_grad_sq(n_reg, grid)
    num = float(np.sum(gn_sq * gn_sq / (n_reg**3))) * vol
    _, hess_log = _hessian_parts(np.log(n_reg), grid)
    den = float(np.sum(n_reg * hess_log)) * vol
    if den == 0.0:
        return None
    return num / den


def evaluate(state, kappas: tuple[float, float, float], chi: float, s: float,
             floor: float = 0.0) -> DiagnosticsRecord:
    """Evaluate every monitored functional on one state.

    kappas = (k1, k2, k3) weight the V/G pair; s selects the L^s norm
    tracked in n_ls_norm; floor is the diagnostics-only positivity clip.
    """
    k1, k2, k3 = (float(k) for k in kappas)
    grid = state.grid
    nv = state.n.values
    cv = state.c.values
    vol = grid.cell_volume

    n_sup = _check_nonnegative(nv, "n")
    c_sup = float(np.max(np.abs(cv))) if cv.size else 0.0

    floor_n = max(floor, 1e-12 * n_sup, _TINY_FLOOR)
    floor_c = max(floor, 1e-12 * c_sup, _TINY_FLOOR)
    n_reg = np.maximum(nv, floor_n)
    c_reg = np.maximum(cv, floor_c)
    c_pos = np.maximum(cv, 0.0)
    log_n = np.log(n_reg)
    log_c = np.log(c_reg)

    def integ(arr) -> float:
        return float(np.sum(arr)) * vol

    gn_sq = _cell_grad_sq(nv, grid)
    gc_sq = _cell_grad_sq(cv, grid)
    gsqrtc_sq = _cell_grad_sq(np.sqrt(c_pos), grid)
    glogn_sq = _cell_grad_sq(log_n, grid)

    lap_c = _face_divergence(_face_gradient(cv, grid), grid)
    c_t = lap_c - nv * cv

    mass = integ(nv)
    entropy = integ(nv * log_n)
    dirichlet_sqrt_c = 2.0 * integ(gsqrtc_sq)
    fisher = integ(gn_sq / n_reg)
    n_gradlog_sq = integ(nv * glogn_sq)
    n_gradc_sq = integ(nv * gc_sq)
    n_l2_sq = integ(nv * nv)
    cross_n2c = integ(nv * nv * cv)
    lap_c_l2_sq = integ(lap_c * lap_c)
    gradc_l4_4 = integ(gc_sq * gc_sq)
    cn3 = integ(cv * nv * nv * nv)
    c_gradn_sq = integ(cv * gn_sq)

    gc_faces = _face_gradient(cv, grid)
    glogn_faces = _face_gradient(log_n, grid)
    w_comps = [chi * gc_faces[a] - glogn_faces[a] for a in range(grid.dim)]
    kinetic = 0.5 * _face_quadrature(nv, w_comps, grid)

    V = (0.5 * n_gradlog_sq
         + (k1 / (2.0 * chi)) * cross_n2c
         + (k1 / chi**2) * n_l2_sq
         + (0.5 * k1 + k2) * n_gradc_sq
         + k2 * lap_c_l2_sq
         + k3 * gradc_l4_4)

    gradn_l2_sq = integ(gn_sq)
    grad_ct_sq = integ(_cell_grad_sq(c_t, grid))
    grad_lapc_sq = integ(_cell_grad_sq(lap_c, grid))
    grad_gcsq_sq = integ(_cell_grad_sq(gc_sq, grid))
    _, hess_c = _hessian_parts(cv, grid)
    hessc_gradc = integ(hess_c * gc_sq)
    n_lapc_sq = integ(nv * lap_c * lap_c)
    _, hess_logn = _hessian_parts(log_n, grid)
    n_hesslog_sq = integ(nv * hess_logn)

    G = ((k1 / chi**2) * gradn_l2_sq
         + (k1 / (2.0 * chi)) * cn3
         + (k1 / chi) * c_gradn_sq
         + 0.5 * k2 * grad_ct_sq
         + 0.5 * k2 * grad_lapc_sq
         + 0.25 * (k1 + k2) * n_lapc_sq
         + k3 * grad_gcsq_sq
         + 4.0 * k3 * hessc_gradc
         + (1.0 / 16.0) * n_hesslog_sq)

    gradc_inf = math.sqrt(float(np.max(gc_sq)))
    n_ls_norm = lp_norm(state.n, s)
    c_mass = integ(cv)
    n_gradc_sq_over_c = integ(nv * gc_sq / c_reg)
    _, hess_logc = _hessian_parts(log_c, grid)
    c_hesslog_c_sq = integ(c_pos * hess_logc)

    return DiagnosticsRecord(
        t=float(state.t), mass=mass, n_sup=n_sup, c_sup=c_sup,
        entropy=entropy, dirichlet_sqrt_c=dirichlet_sqrt_c, fisher=fisher,
        n_gradlog_sq=n_gradlog_sq, n_gradc_sq=n_gradc_sq, n_l2_sq=n_l2_sq,
        cross_n2c=cross_n2c, lap_c_l2_sq=lap_c_l2_sq, gradc_l4_4=gradc_l4_4,
        cn3=cn3, c_gradn_sq=c_gradn_sq, kinetic_E=kinetic, V=V, G=G,
        gradc_inf=gradc_inf, n_ls_norm=n_ls_norm, c_mass=c_mass,
        n_gradc_sq_over_c=n_gradc_sq_over_c, c_hesslog_c_sq=c_hesslog_c_sq,
    )


def update_accumulators(acc: CriterionAccumulator,
                        rec_prev: DiagnosticsRecord,
                        rec_next: DiagnosticsRecord) -> CriterionAccumulator:
    """Trapezoidal update; rec_prev/rec_next must carry acc's L^s norm."""
    if not rec_prev.t < rec_next.t:
        raise ValueError(
            f"records out of time order: {rec_prev.t} !< {rec_next.t}")
    dt = rec_next.t - rec_prev.t
    if math.isinf(acc.r):
        value_ns = max(acc.value_ns, rec_prev.n_ls_norm, rec_next.n_ls_norm)
    else:
        value_ns = acc.value_ns + 0.5 * dt * (
            rec_prev.n_ls_norm**acc.r + rec_next.n_ls_norm**acc.r)
    value_gc = acc.value_gc + 0.5 * dt * (
        rec_prev.gradc_inf**2 + rec_next.gradc_inf**2)
    return replace(acc, value_ns=value_ns, value_gc=value_gc)


def energy_inequality_residual(window: Sequence[DiagnosticsRecord],
                               C: float, chi: float) -> float:
    """Discrete residual of the entropy/Dirichlet energy inequality.

    residual = d/dt (entropy + dirichlet_sqrt_c)
               + fisher + chi/2 * (n_gradc_sq_over_c + c_hesslog_c_sq)
               - C * integral c,
    with the derivative taken between the window endpoints and the other
    terms trapezoid-averaged over the window.  Nonpositive residuals mean
    the inequality is numerically respected.
    """
    if len(window) < 2:
        raise ValueError("need at least two records")
    t = np.array([r.t for r in window])
    if not np.all(np.diff(t) > 0.0):
        raise ValueError("records out of time order")
    span = float(t[-1] - t[0])
    F = [r.entropy + r.dirichlet_sqrt_c for r in window]
    dF = (F[-1] - F[0]) / span
    rhs_minus_diss = np.array([
        r.fisher + 0.5 * chi * (r.n_gradc_sq_over_c + r.c_hesslog_c_sq)
        - C * r.c_mass
        for r in window
    ])
    avg = float(np.trapezoid(rhs_minus_diss, t)) / span
    return dF + avg


# --- CSV interface ----------------------------------------------------------


class DiagnosticsWriter:
    """Streaming CSV writer: fixed column order, 17 significant digits."""

    def __init__(self, path):
        self._fh = open(path, "w", encoding="utf-8")
        self._fh.write(",".join(CSV_FIELDS) + "\n")

    def write(self, record: DiagnosticsRecord) -> None:
        row = ",".join(f"{getattr(record, name):.17g}" for name in CSV_FIELDS)
        self._fh.write(row + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def write_diagnostics_csv(records: Sequence[DiagnosticsRecord], path) -> None:
    with DiagnosticsWriter(path) as writer:
        for rec in records:
            writer.write(rec)


def read_diagnostics_csv(path) -> list[DiagnosticsRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != CSV_FIELDS:
            raise ValueError(f"{path}: unexpected diagnostics header")
        records = []
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            records.append(DiagnosticsRecord(
                **{name: float(v) for name, v in zip(CSV_FIELDS, parts)}))
    return records
