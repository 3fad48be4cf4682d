"""Geometric size grid, cell-averaged densities and the sectional breakage operator.

Particles of cell ``i`` are represented at the pivot ``x_i``, the mean size of
a uniform density on the cell, so that ``number * pivot`` is exactly the cell
mass ``values * int_cell x dx``. Fragments landing in a cell are split between
that cell's pivot and one neighbour so that fragment number and fragment mass
are both reproduced; fragments below ``x_min`` leave through the escape channel.
In the bottom cell, where the fragment mean can sit below the first pivot, the
number stays on the pivot and the small mass surplus is debited from the escape
mass of that parent.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .model import (ConfigurationError, DaughterSpec, DomainError, KernelSpec, TruncationWindow,
                    daughter_partial_moment, kernel_eval)

logger = logging.getLogger(__name__)


class ContractViolation(RuntimeError):
    """Raised when an operation is handed inconsistent inputs."""


@dataclass(frozen=True, eq=False)
class SizeGrid:
    x_min: float
    x_max: float
    cell_count: int
    edges: np.ndarray = field(repr=False)
    pivots: np.ndarray = field(repr=False)
    widths: np.ndarray = field(repr=False)
    mass_weights: np.ndarray = field(repr=False)

    @property
    def ratio(self) -> float:
        return (self.x_max / self.x_min) ** (1.0 / self.cell_count)

    def cell_power_integral(self, m: float) -> np.ndarray:
        """``int_cell x**m dx`` for every cell, in closed form."""
        if m == 0.0:
            return self.widths
        if m == 1.0:
            return self.mass_weights
        lo = self.edges[:-1]
        log_r = np.log(self.edges[1:] / lo)
        q = m + 1.0
        if q == 0.0:
            return log_r
        # expm1 keeps the difference accurate when q*log(r) is small
        return lo ** q * np.expm1(q * log_r) / q

    def snap(self, x: float) -> tuple[int, float]:
        """Index and value of the edge nearest to ``x`` in log distance."""
        if not self.x_min * (1 - 1e-12) <= x <= self.x_max * (1 + 1e-12):
            raise ConfigurationError(f"size {x} outside grid [{self.x_min}, {self.x_max}]")
        k = int(np.argmin(np.abs(np.log(self.edges / x))))
        return k, float(self.edges[k])

    def locate(self, x: float) -> int:
        """Cell index containing ``x``."""
        if not self.x_min <= x <= self.x_max:
            raise ConfigurationError(f"size {x} outside grid [{self.x_min}, {self.x_max}]")
        return int(min(np.searchsorted(self.edges, x, side="right") - 1, self.cell_count - 1))

    def same_as(self, other: "SizeGrid") -> bool:
        return self is other or (self.cell_count == other.cell_count
                                 and np.array_equal(self.edges, other.edges))


def grid_from_edges(edges) -> SizeGrid:
    edges = np.asarray(edges, dtype=float)
    widths = np.diff(edges)
    if len(edges) < 2 or edges[0] <= 0.0 or np.any(widths <= 0.0):
        raise ConfigurationError("edges must be positive and strictly increasing")
    pivots = 0.5 * (edges[:-1] + edges[1:])
    return SizeGrid(float(edges[0]), float(edges[-1]), len(edges) - 1, edges, pivots,
                    widths, widths * pivots)


def build_grid(x_min: float, x_max: float, cells: int) -> SizeGrid:
    if not (0.0 < x_min < x_max and math.isfinite(x_max)):
        raise ConfigurationError(f"grid needs 0 < x_min < x_max, got ({x_min}, {x_max})")
    if int(cells) != cells or cells < 1:
        raise ConfigurationError(f"cell count must be a positive integer, got {cells}")
    cells = int(cells)
    log_r = math.log(x_max / x_min) / cells
    edges = x_min * np.exp(log_r * np.arange(cells + 1))
    edges[0], edges[-1] = x_min, x_max
    return grid_from_edges(edges)


@dataclass
class DensityState:
    """Cell averages of the number density on ``grid`` at ``time``."""

    grid: SizeGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.cell_count,):
            raise ContractViolation("state length does not match the grid")

    @property
    def numbers(self) -> np.ndarray:
        return self.values * self.grid.widths

    @property
    def masses(self) -> np.ndarray:
        return self.values * self.grid.mass_weights

    def copy(self, values=None, time=None) -> "DensityState":
        return DensityState(self.grid, self.values.copy() if values is None else values,
                            self.time if time is None else time)


# ---------------------------------------------------------------------------
# initial data

@dataclass(frozen=True)
class Exponential:
    """``amplitude * exp(-rate x)`` restricted to ``(lower, upper)``."""

    amplitude: float = 1.0
    rate: float = 1.0
    lower: float = 0.0
    upper: float = math.inf

    def mass_between(self, a, b):
        a = np.maximum(a, self.lower)
        b = np.minimum(b, self.upper)
        k = self.rate
        ka, kb = k * a, k * b
        # int_a^b x e^{-kx} dx = (P(2,kb) - P(2,ka)) / k^2; difference the small tail to avoid cancellation
        lower = special.gammainc(2.0, kb) - special.gammainc(2.0, ka)
        upper = special.gammaincc(2.0, ka) - special.gammaincc(2.0, kb)
        val = np.where(ka < 1.0, lower, upper)
        return np.where(b > a, self.amplitude * val / k ** 2, 0.0)

    def total_mass(self):
        return float(self.mass_between(0.0, math.inf))

    def moment(self, m: float) -> float:
        """Exact ``M_m`` of the continuous data (``m > -1``)."""
        if not m > -1.0:
            raise DomainError(f"moment of order {m} diverges for exponential data")
        k, s = self.rate, m + 1.0
        frac = special.gammainc(s, k * self.upper) - special.gammainc(s, k * self.lower)
        return float(self.amplitude * special.gamma(s) / k ** s * frac)


@dataclass(frozen=True)
class PowerLaw:
    """``amplitude * x**exponent`` on ``(lower, upper)``."""

    amplitude: float
    exponent: float
    lower: float
    upper: float

    def __post_init__(self):
        if not 0.0 <= self.lower < self.upper < math.inf:
            raise ConfigurationError("power law needs 0 <= lower < upper < inf")
        if self.lower == 0.0 and self.exponent <= -2.0:
            raise ConfigurationError("power-law mass diverges at the origin")

    def mass_between(self, a, b):
        a = np.maximum(a, self.lower)
        b = np.minimum(b, self.upper)
        q = self.exponent + 2.0
        if q == 0.0:
            val = np.log(np.where(b > a, b, 1.0) / np.where(b > a, a, 1.0))
        else:
            val = (b ** q - a ** q) / q
        return np.where(b > a, self.amplitude * val, 0.0)

    def total_mass(self):
        return float(self.mass_between(self.lower, self.upper))

    def moment(self, m: float) -> float:
        q = self.exponent + m + 1.0
        if q == 0.0:
            return float(self.amplitude * math.log(self.upper / self.lower))
        if self.lower == 0.0 and q < 0.0:
            raise DomainError(f"moment of order {m} diverges at the origin")
        return float(self.amplitude * (self.upper ** q - self.lower ** q) / q)


@dataclass(frozen=True)
class Monodisperse:
    mass: float
    location: float

    def moment(self, m: float) -> float:
        return self.mass * self.location ** (m - 1.0)


@dataclass(frozen=True)
class Tabulated:
    """Density samples, linearly interpolated in between and zero outside."""

    sizes: tuple
    densities: tuple

    def mass_between(self, a, b):
        xs = np.asarray(self.sizes, dtype=float)
        fs = np.asarray(self.densities, dtype=float)
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        out = np.zeros(np.broadcast(a, b).shape)
        a, b = np.broadcast_arrays(a, b)
        for s in range(len(xs) - 1):
            x0, x1, f0, f1 = xs[s], xs[s + 1], fs[s], fs[s + 1]
            lo = np.clip(a, x0, x1)
            hi = np.clip(b, x0, x1)
            slope = (f1 - f0) / (x1 - x0)
            c0 = f0 - slope * x0

            # integral of x (c0 + slope x)
            def prim(x):
                return c0 * x ** 2 / 2.0 + slope * x ** 3 / 3.0

            out += np.where(hi > lo, prim(hi) - prim(lo), 0.0)
        return out

    def total_mass(self):
        return float(self.mass_between(self.sizes[0], self.sizes[-1])[0])


def project_initial(grid: SizeGrid, f) -> tuple[DensityState, float]:
    """Mass-preserving cell projection of ``f``.

    Each cell receives exactly the mass of ``f`` on that cell. Returns the state
    and the projection loss, the mass of ``f`` outside ``[x_min, x_max]``.
    """
    if isinstance(f, Monodisperse):
        if not grid.x_min <= f.location <= grid.x_max:
            raise ConfigurationError(
                f"monodisperse location {f.location} outside grid [{grid.x_min}, {grid.x_max}]")
        values = np.zeros(grid.cell_count)
        k = grid.locate(f.location)
        values[k] = f.mass / grid.mass_weights[k]
        return DensityState(grid, values, 0.0), 0.0
    cell_mass = np.asarray(f.mass_between(grid.edges[:-1], grid.edges[1:]), dtype=float)
    cell_mass = np.maximum(cell_mass, 0.0)
    loss = f.total_mass() - float(cell_mass.sum())
    return DensityState(grid, cell_mass / grid.mass_weights, 0.0), max(loss, 0.0)


# ---------------------------------------------------------------------------
# sectional operator

@dataclass(frozen=True, eq=False)
class PrecomputedOperator:
    """Tabulated sectional form of the breakage operator.

    ``gain[i, k]`` is the number of fragments placed on pivot ``k`` when one
    particle of cell ``i`` breaks; ``escape_number[i]``/``escape_mass[i]`` is
    what leaves below ``x_min``. ``kernel[i, j]`` is the truncated collision
    rate between pivots.
    """

    grid: SizeGrid
    kspec: KernelSpec
    dspec: DaughterSpec
    window: TruncationWindow
    kernel: np.ndarray = field(repr=False)
    gain: np.ndarray = field(repr=False)
    escape_number: np.ndarray = field(repr=False)
    escape_mass: np.ndarray = field(repr=False)


def precompute_operator(grid: SizeGrid, kspec: KernelSpec, window: TruncationWindow | None,
                        dspec: DaughterSpec) -> PrecomputedOperator:
    if window is None:
        # no cutoff: the grid itself is the only truncation
        window = TruncationWindow(0.0, math.inf)
    elif (0.0 < window.lower < grid.x_min * (1 - 1e-12)
          or grid.x_max * (1 + 1e-12) < window.upper < math.inf):
        warnings.warn(f"truncation window ({window.lower:g}, {window.upper:g}) is not inside "
                      f"the grid [{grid.x_min:g}, {grid.x_max:g}]", stacklevel=2)
    n = grid.cell_count
    x = grid.pivots
    e = grid.edges
    inside = window.contains(x)
    kmat = kernel_eval(kspec, x[:, None], x[None, :])
    kmat = np.where(inside[:, None] & inside[None, :], kmat, 0.0)

    # fragments of parent i inside target cell k cover [e_k, min(e_{k+1}, x_i)]
    parent = x[:, None]
    lo = np.broadcast_to(e[None, :-1], (n, n))
    hi = np.minimum(e[None, 1:], parent)
    valid = lo < hi
    lo_c = np.where(valid, lo, 0.0)
    hi_c = np.where(valid, hi, 0.0)
    num = np.where(valid, daughter_partial_moment(dspec, 0.0, parent, lo_c, hi_c), 0.0)
    mass = np.where(valid, daughter_partial_moment(dspec, 1.0, parent, lo_c, hi_c), 0.0)

    gain = np.zeros((n, n))
    esc_num = daughter_partial_moment(dspec, 0.0, x, 0.0, np.full(n, e[0]))
    esc_mass = daughter_partial_moment(dspec, 1.0, x, 0.0, np.full(n, e[0]))
    excess = mass - num * x[None, :]
    # a mean size within rounding of the pivot counts as on the pivot
    excess = np.where(np.abs(excess) <= 8.0 * np.finfo(float).eps * mass, 0.0, excess)
    for i in range(n):
        for k in range(i + 1):
            nk, ex = num[i, k], excess[i, k]
            if nk == 0.0:
                continue
            if k == i:
                # fragments never sit above their parent
                ex = min(ex, 0.0)
            if ex > 0.0 and k < n - 1:
                up = ex / (x[k + 1] - x[k])
                gain[i, k + 1] += up
                gain[i, k] += nk - up
            elif ex < 0.0 and k > 0:
                down = -ex / (x[k] - x[k - 1])
                gain[i, k - 1] += down
                gain[i, k] += nk - down
            elif ex < 0.0 and -ex <= esc_mass[i]:
                # bottom cell: keep the number on x_0 and settle the mass surplus
                # against the mass escaping below x_min
                gain[i, 0] += nk
                esc_mass[i] += ex
            elif ex < 0.0:
                # coarse grids only: split towards a virtual pivot x_0 / r inside the escape channel
                x_virtual = x[0] / grid.ratio
                down = -ex / (x[0] - x_virtual)
                gain[i, 0] += nk - down
                esc_num[i] += down
                esc_mass[i] += down * x_virtual
            else:
                gain[i, k] += nk
    return PrecomputedOperator(grid, kspec, dspec, window, kmat, gain, esc_num, esc_mass)


def collision_rates(op: PrecomputedOperator, numbers: np.ndarray) -> np.ndarray:
    """Breakage events per unit time of particles from each cell."""
    return numbers * (op.kernel @ numbers)


def breakage_rhs(op: PrecomputedOperator, state: DensityState) -> tuple[np.ndarray, float]:
    """Time derivative of the cell values and the escaping mass rate."""
    if not op.grid.same_as(state.grid):
        raise ContractViolation("state and operator live on different grids")
    return _rhs_values(op, state.values)


def _rhs_values(op, values):
    widths = op.grid.widths
    c = collision_rates(op, values * widths)
    dn = op.gain.T @ c - c
    return dn / widths, float(c @ op.escape_mass)


def escape_number_rate(op: PrecomputedOperator, state: DensityState) -> float:
    return float(collision_rates(op, state.numbers) @ op.escape_number)


def weak_pairing(op: PrecomputedOperator, state: DensityState, phi_pivots, phi_daughter,
                 with_scale: bool = False):
    """Half the double sum of ``zeta_phi K n n`` over cell pairs.

    ``phi_daughter[i]`` is the phi-moment of the fragments of one parent from
    cell ``i``. With the moments of the deposited fragments (see
    :func:`deposited_moments`) this equals ``<phi, breakage_rhs>``; with full
    range moments it additionally counts the escaping fragments.
    """
    if phi_daughter is None:
        raise ContractViolation("daughter phi-moments are required")
    phi = np.asarray(phi_pivots, dtype=float)
    d = np.asarray(phi_daughter, dtype=float)
    n = op.grid.cell_count
    if phi.shape != (n,) or d.shape != (n,):
        raise ContractViolation("phi arrays must have one entry per cell")
    if not op.grid.same_as(state.grid):
        raise ContractViolation("state and operator live on different grids")
    num = state.numbers
    zeta = (d[:, None] + d[None, :]) - (phi[:, None] + phi[None, :])
    w = zeta * op.kernel * np.outer(num, num)
    # unordered pairs: full weight off the diagonal, half on it
    upper = np.triu(w, k=1).sum() + 0.5 * np.trace(w)
    if with_scale:
        # gross turnover: every term of zeta taken with its magnitude
        ad, ap = np.abs(d), np.abs(phi)
        aw = ((ad[:, None] + ad[None, :]) + (ap[:, None] + ap[None, :])) * op.kernel * np.outer(num, num)
        return float(upper), float(np.triu(aw, k=1).sum() + 0.5 * np.trace(aw))
    return float(upper)


def deposited_moments(op: PrecomputedOperator, phi_pivots) -> np.ndarray:
    """phi-moment of the fragments a parent from each cell leaves on the grid."""
    return op.gain @ np.asarray(phi_pivots, dtype=float)


def exact_daughter_moments(op: PrecomputedOperator, m: float, lower: float | None = None):
    """Closed-form ``int_lower^{x_i} z**m bbar(z, x_i) dz`` per parent pivot."""
    x = op.grid.pivots
    lower = op.grid.x_min if lower is None else lower
    return daughter_partial_moment(op.dspec, m, x, np.minimum(lower, x), x)


def exact_daughter_capped_mass(op: PrecomputedOperator, cap: float, lower: float | None = None):
    """Closed-form ``int_lower^{x_i} z 1_(0,cap)(z) bbar(z, x_i) dz`` per parent pivot."""
    x = op.grid.pivots
    lower = op.grid.x_min if lower is None else lower
    c = np.minimum(cap, x)
    a = np.minimum(lower, c)
    return daughter_partial_moment(op.dspec, 1.0, x, a, c)


# ---------------------------------------------------------------------------
# snapshot files

SNAPSHOT_COLUMNS = ("edge_left", "edge_right", "pivot", "value", "number", "mass")


def write_snapshot(path, state: DensityState) -> None:
    g = state.grid
    table = np.column_stack([g.edges[:-1], g.edges[1:], g.pivots, state.values,
                             state.numbers, state.masses])
    header = f"time={state.time!r}\n" + " ".join(SNAPSHOT_COLUMNS)
    np.savetxt(path, table, fmt="%.17g", header=header, comments="# ")


def read_snapshot(path) -> DensityState:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
    if not first.startswith("# time="):
        raise ValueError(f"{path}: missing '# time=' header")
    time = float(first.split("=", 1)[1])
    table = np.loadtxt(path, comments="#", ndmin=2)
    edges = np.append(table[:, 0], table[-1, 1])
    return DensityState(grid_from_edges(edges), table[:, 3], time)
