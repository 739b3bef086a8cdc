"""Domain types, grids, selection profiles and quadrature shared by every solver."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

# Minimum number of grid cells that must fall inside the selection window.
MIN_CELLS_IN_WINDOW = 4


class Domain(enum.Enum):
    """Trait-space domain.

    ``BOUNDED_UNIT`` is the interval [0, 1] with Neumann boundaries and the
    selection window glued to the left edge.  ``WHOLE_LINE`` is only used by
    the free-space kernels of :mod:`gcselect.green`.
    """

    BOUNDED_UNIT = "bounded"
    WHOLE_LINE = "whole"


@dataclass(frozen=True)
class ModelParams:
    """Scalar coefficients of the division-mutation-selection model.

    Parameters
    ----------
    Q0, Q1 : float
        Division rate before and after the selected population reaches
        ``rho0``.
    d : float
        Death rate (>= 0).
    mu : float
        Mutation (diffusion) coefficient (> 0).
    eps : float
        Width of the selection window, in (0, 1].
    rho0 : float
        Threshold on the selected population (> 0).
    s0 : float
        Selection amplitude inside the window.
    """

    Q0: float
    Q1: float
    d: float
    mu: float
    eps: float
    rho0: float
    s0: float = 1.0
    domain: Domain = Domain.BOUNDED_UNIT

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not 0 < self.eps <= 1:
            raise ValueError(f"eps must lie in (0, 1], got {self.eps}")
        if not self.rho0 > 0:
            raise ValueError(f"rho0 must be positive, got {self.rho0}")
        if self.d < 0:
            raise ValueError(f"death rate must be non-negative, got {self.d}")
        if self.s0 < 0:
            raise ValueError(f"s0 must be non-negative, got {self.s0}")

    @property
    def b(self) -> float:
        """Net growth rate ``Q0 - d`` before the threshold."""
        return self.Q0 - self.d

    def Q(self, rho: float) -> float:
        """Piecewise-constant division rate: ``Q0`` up to ``rho0``, ``Q1`` beyond."""
        return self.Q0 if rho <= self.rho0 else self.Q1

    def replace(self, **changes) -> "ModelParams":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return ModelParams(**kw)

    def selection(self) -> "SelectionProfile":
        return SelectionProfile.indicator(
            self.eps, self.s0, whole_line=self.domain is Domain.WHOLE_LINE)


@dataclass(frozen=True)
class SelectionProfile:
    """Piecewise-constant, non-negative selection function.

    ``values[i]`` is the amplitude on ``[breakpoints[i], breakpoints[i+1])``.
    Outside the first and last breakpoints the profile is zero.
    """

    breakpoints: tuple
    values: tuple

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        if len(bp) != len(vals) + 1:
            raise ValueError("need exactly one more breakpoint than values")
        if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if any(v < 0 for v in vals):
            raise ValueError("selection amplitudes must be non-negative")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def indicator(cls, eps: float, s0: float = 1.0, whole_line: bool = False):
        """``s0`` on ``[0, eps]`` (or ``[-eps, eps]`` on the whole line), zero elsewhere."""
        if whole_line:
            return cls((-eps, eps), (s0,))
        if eps >= 1:
            return cls((0.0, 1.0), (s0,))
        return cls((0.0, eps, 1.0), (s0, 0.0))

    @classmethod
    def zero(cls):
        return cls((0.0, 1.0), (0.0,))

    @classmethod
    def constant(cls, value: float):
        return cls((0.0, 1.0), (value,))

    @property
    def sup(self) -> float:
        """``||s||_inf``."""
        return max(self.values, default=0.0)

    @property
    def inf_on_unit(self) -> float:
        """Smallest amplitude taken on [0, 1]."""
        lo = [v for (a, b), v in zip(self.intervals(), self.values) if b > 0 and a < 1]
        if self.breakpoints[0] > 0 or self.breakpoints[-1] < 1:
            lo.append(0.0)
        return min(lo)

    @property
    def mean_fast(self) -> float:
        """Mean amplitude over the window, ``s_bar``; equals ``s0`` for the indicator."""
        width = self.support_length()
        return self.integral(-math.inf, math.inf) / width if width > 0 else 0.0

    def support_length(self) -> float:
        return sum(b - a for (a, b), v in zip(self.intervals(), self.values) if v > 0)

    def intervals(self):
        return list(zip(self.breakpoints[:-1], self.breakpoints[1:]))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for (a, b), v in zip(self.intervals(), self.values):
            out = np.where((x >= a) & (x < b), v, out)
        # right edge of the last piece is closed so s(1) is defined on [0, 1]
        out = np.where(x == self.breakpoints[-1], self.values[-1], out)
        return out

    def integral(self, a: float, b: float) -> float:
        """Exact ``int_a^b s(x) dx``."""
        total = 0.0
        for (lo, hi), v in zip(self.intervals(), self.values):
            left, right = max(lo, a), min(hi, b)
            if right > left:
                total += v * (right - left)
        return total

    def pieces_on(self, a: float, b: float):
        """Sub-intervals of ``[a, b]`` where the profile is constant, with their values."""
        cuts = [a] + [p for p in self.breakpoints if a < p < b] + [b]
        out = []
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            out.append((lo, hi, float(self(0.5 * (lo + hi)))))
        return out


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``n_cells`` cells on [0, 1].

    If ``eps`` is given, the constructor checks that the selection window
    holds at least ``MIN_CELLS_IN_WINDOW`` cells.
    """

    n_cells: int
    eps: float | None = None

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 1:
            raise ValueError(f"n_cells must be a positive integer, got {self.n_cells}")
        object.__setattr__(self, "n_cells", int(self.n_cells))
        if self.eps is not None:
            self.check_resolves(self.eps)

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_cells + 1)

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    def check_resolves(self, eps: float):
        if eps * self.n_cells < MIN_CELLS_IN_WINDOW - 1e-9:
            raise ValueError(
                f"grid with {self.n_cells} cells does not resolve eps={eps}: "
                f"need at least {MIN_CELLS_IN_WINDOW} cells in the window")

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_nodes, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal samples of a function on a :class:`Grid`."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.n_nodes,):
            raise ValueError(
                f"field has {vals.shape} values, grid has {self.grid.n_nodes} nodes")
        if np.isnan(vals).any():
            raise ValueError("field contains NaN")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, func: Callable) -> "Field":
        return cls(grid, np.broadcast_to(func(grid.nodes), (grid.n_nodes,)))

    def __call__(self, x):
        """Piecewise-linear interpolation."""
        return np.interp(x, self.grid.nodes, self.values)

    def norm(self) -> float:
        return math.sqrt(inner_product(self, self))

    def mass(self) -> float:
        return inner_product(self, Field(self.grid, np.ones(self.grid.n_nodes)))


def _same_grid(f: Field, g: Field):
    if f.grid.n_cells != g.grid.n_cells:
        raise ValueError(
            f"grid mismatch: {f.grid.n_cells} vs {g.grid.n_cells} cells")


def inner_product(f: Field, g: Field) -> float:
    """Composite trapezoidal approximation of ``int_0^1 f g dx``."""
    _same_grid(f, g)
    return float(np.dot(f.grid.trapezoid_weights(), f.values * g.values))


def selection_node_weights(s: SelectionProfile, grid: Grid) -> np.ndarray:
    """Vector ``w`` with ``w @ f.values == int s f_h dx`` for the P1 interpolant ``f_h``.

    Each cell is split at the profile breakpoints, so the result is exact
    for piecewise-linear fields.
    """
    nodes = grid.nodes
    w = np.zeros(grid.n_nodes)
    for i in range(grid.n_cells):
        x0, x1 = nodes[i], nodes[i + 1]
        for a, b, v in s.pieces_on(x0, x1):
            if v == 0.0:
                continue
            # int_a^b phi dx for the two hat functions, evaluated at the midpoint
            mid = 0.5 * (a + b)
            lam = (mid - x0) / (x1 - x0)
            w[i] += v * (b - a) * (1.0 - lam)
            w[i + 1] += v * (b - a) * lam
    return w


def weighted_mass(s: SelectionProfile, f: Field) -> float:
    """``int s(x) f(x) dx`` with exact breakpoint splitting against the P1 field."""
    return float(selection_node_weights(s, f.grid) @ f.values)


# --- initial data -----------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    c: float = 1.0

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("constant initial datum must be non-negative")

    def realize(self, grid: Grid) -> Field:
        return Field(grid, np.full(grid.n_nodes, float(self.c)))


@dataclass(frozen=True)
class Random:
    """I.i.d. uniform nodal values on ``[lower, upper]``, reproducible from ``seed``."""

    seed: int = 0
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if not 0 <= self.lower < self.upper:
            raise ValueError("need 0 <= lower < upper")

    def realize(self, grid: Grid) -> Field:
        rng = np.random.default_rng(self.seed)
        return Field(grid, rng.uniform(self.lower, self.upper, grid.n_nodes))


@dataclass(frozen=True)
class Dirac:
    """Unit point mass at ``z``; realized as a single-node spike of height ``1/h``."""

    z: float

    def __post_init__(self):
        if not 0 < self.z < 1:
            raise ValueError(f"Dirac support z={self.z} must lie inside (0, 1)")

    def node(self, grid: Grid) -> int:
        return int(round(self.z * grid.n_cells))

    def realize(self, grid: Grid) -> Field:
        i = self.node(grid)
        vals = np.zeros(grid.n_nodes)
        # boundary nodes carry half a cell of trapezoid weight
        vals[i] = 1.0 / grid.trapezoid_weights()[i]
        return Field(grid, vals)


@dataclass(frozen=True, eq=False)
class Samples:
    field: Field

    def realize(self, grid: Grid) -> Field:
        if grid.n_cells != self.field.grid.n_cells:
            return Field.from_function(grid, self.field)
        return self.field


InitialData = Constant | Random | Dirac | Samples


def realize_initial(data: InitialData, grid: Grid) -> Field:
    """Sample an initial datum on ``grid``."""
    if isinstance(data, Field):
        data = Samples(data)
    return data.realize(grid)


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])
