"""Grids and matrix representations of classical spatial dynamics:
spectral and finite-difference derivatives, flow, diffusion, velocity
fields, rotor phase increments and powder averaging grids.

Generators act in ``d rho / dt = G rho``; a flow generator ``v D1`` moves a
profile ``f(x)`` to ``f(x + v t)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .sparse import csparse

BOUNDARIES = ("periodic", "reflective", "absorptive")
DEFAULT_STENCIL = 5


@dataclass(frozen=True)
class PhaseGrid:
    """Uniform periodic grid ``phi_j = 2 pi j / n``."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"phase grid needs at least one point, got {self.n}")

    @property
    def points(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n) / self.n


@dataclass(frozen=True, eq=False)
class CoordinateGrid:
    """Ordered real grid with a boundary condition.

    ``period`` is the length of the periodic cell; by default it is the span
    of the points plus one end spacing.
    """

    points: np.ndarray
    boundary: str = "absorptive"
    period: float | None = None

    def __post_init__(self):
        x = np.asarray(self.points, dtype=float).ravel()
        if x.size < 3:
            raise ValueError(f"coordinate grid needs at least 3 points, got {x.size}")
        if np.any(np.diff(x) <= 0):
            raise ValueError("coordinate grid points must be strictly increasing")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        object.__setattr__(self, "points", x)
        if self.boundary == "periodic":
            period = self.period if self.period is not None else x[-1] - x[0] + (x[-1] - x[-2])
            if period <= x[-1] - x[0]:
                raise ValueError("period must exceed the span of the grid points")
            object.__setattr__(self, "period", float(period))

    @classmethod
    def uniform(cls, length, n, boundary="absorptive", start=None):
        """``n`` points over an interval of ``length`` centred on zero.

        Periodic grids tile the cell ``[start, start + length)``; other grids
        include both end points.
        """
        start = -length / 2 if start is None else start
        if boundary == "periodic":
            x = start + length * np.arange(n) / n
            return cls(x, boundary, period=length)
        return cls(np.linspace(start, start + length, n), boundary)

    @property
    def n(self) -> int:
        return self.points.size

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights, normalised to sum to one."""
        x = self.points
        if self.boundary == "periodic":
            ext = np.concatenate([[x[-1] - self.period], x, [x[0] + self.period]])
            w = (ext[2:] - ext[:-2]) / 2
        else:
            w = np.zeros_like(x)
            w[1:] += np.diff(x) / 2
            w[:-1] += np.diff(x) / 2
        return w / w.sum()


@dataclass(frozen=True, eq=False)
class SphericalGrid:
    """Orientations as z-y-z Euler triples with weights summing to one."""

    orientations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        o = np.atleast_2d(np.asarray(self.orientations, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if o.shape[1] != 3 or o.shape[0] != w.size or w.size == 0:
            raise ValueError("orientations must be an (n, 3) array matching n weights")
        if np.any(w <= 0):
            raise ValueError("spherical grid weights must be positive")
        object.__setattr__(self, "orientations", o)
        object.__setattr__(self, "weights", w / w.sum())

    def __len__(self):
        return self.weights.size


# --------------------------------------------------------------------------
# differentiation matrices

def fourier_diff(n: int) -> sp.csr_matrix:
    """Spectral first-derivative matrix on an ``n``-point periodic grid.

    Even ``n`` uses ``(-1)^(j+k) cot((j-k) pi / n) / 2``; odd ``n`` the
    ``csc`` form, which is exact for every resolvable Fourier mode.
    """
    if int(n) != n or n < 2:
        raise ValueError(f"Fourier differentiation needs n >= 2, got {n}")
    j = np.arange(n)
    diff = j[:, None] - j[None, :]
    sign = np.where(diff % 2 == 0, 1.0, -1.0)
    x = diff * np.pi / n
    with np.errstate(divide="ignore", invalid="ignore"):
        core = 1 / np.tan(x) if n % 2 == 0 else 1 / np.sin(x)
    d = np.where(diff == 0, 0.0, sign * core / 2)
    return csparse(d)


def phase_diff(n: int) -> sp.csr_matrix:
    """``fourier_diff`` extended to the single-point grid, where the phase
    derivative is zero."""
    return csparse(np.zeros((1, 1))) if n == 1 else fourier_diff(n)


def fornberg_weights(x0: float, x, m: int) -> np.ndarray:
    """Finite-difference weights for derivatives ``0..m`` at ``x0`` from
    nodes ``x`` (Fornberg's recursion). Returns an array of shape
    ``(m + 1, len(x))``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    c = np.zeros((m + 1, n))
    c1, c4 = 1.0, x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def fd_matrix(grid: CoordinateGrid, deriv_order: int = 1,
              stencil: int = DEFAULT_STENCIL) -> sp.csr_matrix:
    """Finite-difference derivative matrix on a coordinate grid.

    Periodic grids wrap the stencil around; absorptive grids use centred
    stencils with zero ghost values beyond the ends; reflective grids shift
    the stencil inwards to one-sided form near the ends.
    """
    n = grid.n
    if deriv_order < 1:
        raise ValueError("derivative order must be >= 1")
    if stencil < deriv_order + 1:
        raise ValueError(f"stencil of {stencil} points cannot represent derivative order {deriv_order}")
    if stencil > n:
        raise ValueError(f"stencil of {stencil} points exceeds the {n}-point grid")
    x = grid.points
    left = (stencil - 1) // 2
    offsets = np.arange(stencil) - left
    rows, cols, vals = [], [], []
    shared = None
    spacing = np.diff(x)
    if grid.boundary != "reflective" and np.allclose(spacing, spacing[0], rtol=1e-12, atol=0):
        if grid.boundary == "periodic" and abs(grid.period - n * spacing[0]) > 1e-12 * grid.period:
            pass
        else:
            # one shared row, with exact (anti)symmetry for centred stencils
            shared = fornberg_weights(0.0, offsets * spacing[0], deriv_order)[deriv_order]
            if stencil % 2 == 1:
                shared = (shared + (-1) ** deriv_order * shared[::-1]) / 2
                shared[left] = -(shared[:left].sum() + shared[left + 1:].sum())
    for i in range(n):
        if grid.boundary == "periodic":
            idx = i + offsets
            nodes = x[idx % n] + np.floor_divide(idx, n) * grid.period
            cols_i = idx % n
        elif grid.boundary == "reflective":
            start = min(max(i - left, 0), n - stencil)
            cols_i = np.arange(start, start + stencil)
            nodes = x[cols_i]
        else:
            idx = i + offsets
            nodes = _extend(x, idx)
            cols_i = idx
        if shared is not None:
            w = shared
        else:
            w = fornberg_weights(x[i], nodes, deriv_order)[deriv_order]
        keep = (cols_i >= 0) & (cols_i < n)
        rows.extend([i] * int(keep.sum()))
        cols.extend(cols_i[keep])
        vals.extend(w[keep])
    return csparse((np.array(rows), np.array(cols), np.array(vals)), shape=(n, n))


def _extend(x, idx):
    """Grid positions for indices that may lie off the grid, extrapolated
    with the end spacings."""
    n = x.size
    out = np.empty(idx.size)
    for k, j in enumerate(idx):
        if j < 0:
            out[k] = x[0] + j * (x[1] - x[0])
        elif j >= n:
            out[k] = x[-1] + (j - n + 1) * (x[-1] - x[-2])
        else:
            out[k] = x[j]
    return out


# --------------------------------------------------------------------------
# generators

def motion_generator(grid: CoordinateGrid, kind: str, value, stencil: int = DEFAULT_STENCIL):
    """Spatial dynamics generator.

    ``kind`` is ``"flow"`` (``value`` = v in m/s, generator ``v D1``),
    ``"diffusion"`` (``value`` = D in m^2/s, generator ``D D2``) or
    ``"velocity_field"`` (``value`` = per-point samples, generator
    ``diag(div v) + diag(v) D1``).
    """
    if kind == "flow":
        return csparse(float(value) * fd_matrix(grid, 1, stencil))
    if kind == "diffusion":
        if value < 0:
            raise ValueError(f"diffusion coefficient must be non-negative, got {value}")
        return csparse(float(value) * fd_matrix(grid, 2, stencil))
    if kind == "velocity_field":
        v = np.asarray(value, dtype=float).ravel()
        if v.size != grid.n:
            raise ValueError(f"velocity field has {v.size} samples for a {grid.n}-point grid")
        d1 = fd_matrix(grid, 1, stencil)
        # divergence of the field itself: one-sided stencils at open ends
        field_grid = grid if grid.boundary == "periodic" else CoordinateGrid(grid.points, "reflective")
        div = fd_matrix(field_grid, 1, stencil) @ v
        return csparse(sp.diags(div) + sp.diags(v) @ d1)
    raise ValueError(f"unknown motion kind {kind!r}")


def rotor_generator(grid: PhaseGrid, omega: float) -> sp.csr_matrix:
    """Phase increment generator ``omega d/dphi``; its exponential maps
    ``f(phi)`` to ``f(phi + omega t)``."""
    return csparse(float(omega) * phase_diff(grid.n))


def spherical_grid(scheme: str = "two_angle_spiral", n_points: int = 1,
                   orientations=None, weights=None) -> SphericalGrid:
    """Powder averaging grid.

    ``two_angle_spiral`` spreads ``n_points`` directions over the sphere on a
    golden-angle spiral with ``gamma = 0`` and equal weights;
    ``user_list`` takes explicit orientations and weights.
    """
    if scheme == "user_list":
        if orientations is None:
            raise ValueError("user_list needs orientations")
        o = np.atleast_2d(np.asarray(orientations, dtype=float))
        w = np.ones(len(o)) if weights is None else weights
        return SphericalGrid(o, w)
    if scheme != "two_angle_spiral":
        raise ValueError(f"unknown spherical grid scheme {scheme!r}")
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    if n_points == 1:
        return SphericalGrid(np.zeros((1, 3)), np.ones(1))
    i = np.arange(n_points)
    beta = np.arccos(1 - (2 * i + 1) / n_points)
    alpha = np.mod(i * np.pi * (3 - np.sqrt(5)), 2 * np.pi)
    o = np.column_stack([alpha, beta, np.zeros(n_points)])
    return SphericalGrid(o, np.full(n_points, 1.0 / n_points))
