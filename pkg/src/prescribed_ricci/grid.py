"""Model Einstein backgrounds on T^{n-1} x [a, b] and their finite-difference grids.

The last grid axis is the radial coordinate ``t``; the first ``n - 1`` axes
are periodic. Field arrays always carry the grid as their trailing axes, so a
symmetric 2-tensor on an ``n = 3`` grid has shape ``(3, 3, Nx, Ny, Nt)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import factorial

import numpy as np
import scipy.sparse as sp

KINDS = ("flat_slab", "hyperbolic_slab", "spherical_band")

DEFAULT_INTERVALS = {
    "flat_slab": (0.0, 1.0),
    "hyperbolic_slab": (0.0, 1.0),
    "spherical_band": (np.pi / 8, 3 * np.pi / 8),
}


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class ModelGeometry:
    """One of the three catalog warped products ``dt^2 + sum_A f_A(t)^2 dx_A^2``."""

    kind: str = "flat_slab"
    interval: tuple[float, float] | None = None
    periods: tuple[float, ...] | None = None
    n: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GridError(f"unknown geometry kind {self.kind!r}; expected one of {KINDS}")
        if self.n < 3:
            raise GridError("dimension must be at least 3")
        if self.kind == "spherical_band" and self.n != 3:
            raise GridError("spherical_band is only defined for n = 3")
        if self.interval is None:
            object.__setattr__(self, "interval", DEFAULT_INTERVALS[self.kind])
        if self.periods is None:
            object.__setattr__(self, "periods", (1.0,) * (self.n - 1))
        a, b = (float(x) for x in self.interval)
        object.__setattr__(self, "interval", (a, b))
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))
        if len(self.periods) != self.n - 1 or min(self.periods) <= 0:
            raise GridError("need n - 1 positive tangential periods")
        if not a < b:
            raise GridError(f"degenerate interval [{a}, {b}]")
        if self.kind == "spherical_band" and not (0.0 < a and b < np.pi / 2):
            raise GridError("spherical_band interval must lie strictly inside (0, pi/2)")

    @property
    def einstein_constant(self) -> float:
        return analytic_einstein_constant(self)

    def warp(self, t, deriv=0):
        """Warping factors ``f_A(t)`` (or their derivatives), shape ``(n-1,) + t.shape``."""
        t = np.asarray(t, dtype=float)
        m = self.n - 1
        if self.kind == "flat_slab":
            base = [np.ones_like(t) if deriv == 0 else np.zeros_like(t)] * m
        elif self.kind == "hyperbolic_slab":
            base = [np.exp(t)] * m
        else:
            # d^k cos = cos(t + k pi/2)
            base = [np.cos(t + deriv * np.pi / 2), np.sin(t + deriv * np.pi / 2)]
        return np.stack(base)


def analytic_einstein_constant(geometry: ModelGeometry) -> float:
    if geometry.kind == "flat_slab":
        return 0.0
    if geometry.kind == "hyperbolic_slab":
        return -(geometry.n - 1.0)
    return geometry.n - 1.0


def fd_weights(offsets, deriv):
    """Weights ``w`` with ``sum_j w_j f(x0 + offsets_j) ~ f^(deriv)(x0)`` (unit spacing)."""
    offsets = np.asarray(offsets, dtype=float)
    vander = np.vander(offsets, increasing=True).T
    rhs = np.zeros(len(offsets))
    rhs[deriv] = factorial(deriv)
    return np.linalg.solve(vander, rhs)


def periodic_matrix(num, spacing, deriv, order):
    half = order // 2
    offsets = np.arange(-half, half + 1)
    w = fd_weights(offsets, deriv) / spacing**deriv
    mat = np.zeros((num, num))
    for i in range(num):
        for off, wk in zip(offsets, w):
            mat[i, (i + off) % num] += wk
    return mat


def bounded_matrix(num, spacing, deriv, order):
    """Centered stencils inside, one-sided stencils of the same order near the ends."""
    half = order // 2
    width_one_sided = order + deriv
    mat = np.zeros((num, num))
    centered = fd_weights(np.arange(-half, half + 1), deriv)
    for i in range(num):
        if half <= i < num - half:
            mat[i, i - half : i + half + 1] = centered
            continue
        lo = 0 if i < half else num - width_one_sided
        nodes = np.arange(lo, lo + width_one_sided)
        mat[i, nodes] = fd_weights(nodes - i, deriv)
    return mat / spacing**deriv


@dataclass(frozen=True, eq=False)
class ChartGrid:
    geometry: ModelGeometry
    resolution: tuple[int, ...]
    fd_order: int = 4
    shape: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolution)
        n = self.geometry.n
        if len(res) != n:
            raise GridError(f"need {n} resolutions, got {len(res)}")
        if self.fd_order not in (2, 4):
            raise GridError("fd_order must be 2 or 4")
        if min(res) < 8:
            raise GridError("resolution below stencil width (minimum 8 points per axis)")
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "shape", res)

    @property
    def n(self) -> int:
        return self.geometry.n

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        a, b = self.geometry.interval
        tang = [p / r for p, r in zip(self.geometry.periods, self.resolution[:-1])]
        return tuple(tang) + ((b - a) / (self.resolution[-1] - 1),)

    @cached_property
    def axes(self) -> list[np.ndarray]:
        a, b = self.geometry.interval
        out = [np.arange(r) * h for r, h in zip(self.resolution[:-1], self.spacing[:-1])]
        out.append(np.linspace(a, b, self.resolution[-1]))
        return out

    @cached_property
    def coords(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes, indexing="ij")

    @property
    def t(self) -> np.ndarray:
        return self.coords[-1]

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[..., 0] = True
        mask[..., -1] = True
        return mask

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    @cached_property
    def boundary_node_index(self) -> np.ndarray:
        """Flat node indices of the t = a face followed by the t = b face."""
        idx = np.arange(self.size).reshape(self.shape)
        return np.concatenate([idx[..., 0].ravel(), idx[..., -1].ravel()])

    @cached_property
    def normal_sign(self) -> np.ndarray:
        """+1 on the upper half (outward = +d/dt at t = b), -1 below."""
        sign = np.where(np.arange(self.shape[-1]) >= self.shape[-1] / 2, 1.0, -1.0)
        return np.broadcast_to(sign, self.shape)

    def matrix(self, axis: int, deriv: int) -> np.ndarray:
        return self._matrices[(axis, deriv)]

    @cached_property
    def _matrices(self):
        mats = {}
        for ax in range(self.n):
            for d in (1, 2):
                build = bounded_matrix if ax == self.n - 1 else periodic_matrix
                mats[(ax, d)] = build(self.shape[ax], self.spacing[ax], d, self.fd_order)
        return mats

    def diff(self, arr, axis: int, deriv: int = 1) -> np.ndarray:
        """Partial derivative along a grid axis of an array whose trailing axes are the grid."""
        arr = np.asarray(arr)
        grid_axis = arr.ndim - self.n + axis
        moved = np.moveaxis(arr, grid_axis, -1)
        out = moved @ self.matrix(axis, deriv).T
        return np.moveaxis(out, -1, grid_axis)

    def sparse_derivative(self, axes: tuple[int, ...]) -> sp.csr_matrix:
        """Sparse matrix of the partial derivative along ``axes`` acting on flattened nodes.

        ``()`` is the identity, ``(l,)`` a first derivative, ``(l, l)`` the
        direct second-derivative stencil and ``(l, m)`` the product ``D_l D_m``.
        """
        key = tuple(sorted(axes))
        cache = self.__dict__.setdefault("_sparse_cache", {})
        if key in cache:
            return cache[key]
        factors = [sp.identity(r, format="csr") for r in self.shape]
        if len(key) == 2 and key[0] == key[1]:
            factors[key[0]] = sp.csr_matrix(self.matrix(key[0], 2))
        else:
            for ax in key:
                factors[ax] = sp.csr_matrix(self.matrix(ax, 1))
        mat = factors[0]
        for f in factors[1:]:
            mat = sp.kron(mat, f, format="csr")
        mat.eliminate_zeros()
        cache[key] = mat
        return mat


def build_grid(geometry: ModelGeometry, resolution, fd_order: int = 4) -> ChartGrid:
    if np.isscalar(resolution):
        resolution = (int(resolution),) * geometry.n
    return ChartGrid(geometry, tuple(resolution), fd_order)


def background_metric(geometry: ModelGeometry, grid: ChartGrid) -> np.ndarray:
    """Closed-form warped metric sampled at every node, shape ``(n, n) + grid.shape``."""
    n = geometry.n
    f = geometry.warp(grid.t)
    g = np.zeros((n, n) + grid.shape)
    for a in range(n - 1):
        g[a, a] = f[a] ** 2
    g[n - 1, n - 1] = 1.0
    return g
