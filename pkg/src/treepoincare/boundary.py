"""Boundary of F_k as infinite reduced words, cut into depth-N cylinders.

The Patterson-Sullivan measure is the uniform cylinder measure; the visual
parameter is 1, so the Busemann cocycle is integer valued and every
conformal weight is a power of q = 2k-1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateInputError, InputError, PrecisionError, ResourceCapError
from .group_core import (GroupParams, SparseGroupFunction, RadialFunction, enumerate_sphere,
                         gromov_product, inverse, multiply, reduce)

__all__ = [
    "Cylinder", "CylinderGrid", "cylinder_mass", "boundary_gromov_product", "busemann",
    "shadow", "act", "density_rep_matrix", "BoundaryOperator", "ball_density_sum",
    "prefix_bucket_counts", "prefix_bucket_probs", "busemann_average",
    "MAX_GRID_DEPTH",
]

MAX_GRID_DEPTH = 10


def cylinder_mass(prefix: str, k: int = 2) -> float:
    if not prefix:
        return 1.0
    q = 2 * k - 1
    return 1.0 / (2 * k) * float(q) ** (-(len(prefix) - 1))


@dataclass(frozen=True)
class Cylinder:
    prefix: str
    k: int = 2

    def __post_init__(self):
        if not self.prefix:
            raise InputError("cylinder prefix must be nonempty")
        if reduce(self.prefix, self.k) != self.prefix:
            raise InputError(f"cylinder prefix {self.prefix!r} is not reduced")

    @property
    def depth(self) -> int:
        return len(self.prefix)

    @property
    def mass(self) -> float:
        return cylinder_mass(self.prefix, self.k)

    def children(self) -> list["Cylinder"]:
        last = self.prefix[-1].swapcase()
        return [Cylinder(self.prefix + c, self.k) for c in GroupParams(self.k).alphabet if c != last]


class CylinderGrid:
    """All depth-N cylinders, in the order of ``enumerate_sphere(N)``."""

    def __init__(self, depth: int, k: int = 2):
        if depth < 1:
            raise InputError("depth must be >= 1")
        if depth > MAX_GRID_DEPTH:
            raise ResourceCapError(f"depth {depth} above grid cap {MAX_GRID_DEPTH}")
        self.depth = depth
        self.k = k
        self.prefixes = list(enumerate_sphere(depth, k))
        self.index = {w: i for i, w in enumerate(self.prefixes)}

    def __len__(self):
        return len(self.prefixes)

    @property
    def mass(self) -> float:
        return cylinder_mass(self.prefixes[0], self.k)

    @cached_property
    def masses(self) -> np.ndarray:
        return np.full(len(self), self.mass)

    @cached_property
    def blocks(self) -> dict[str, tuple[int, int]]:
        """Index range of the cylinders extending each shorter prefix (contiguous)."""
        out: dict[str, tuple[int, int]] = {}
        for i, w in enumerate(self.prefixes):
            for ell in range(1, self.depth + 1):
                p = w[:ell]
                lo, _ = out.get(p, (i, i))
                out[p] = (lo, i + 1)
        return out

    @cached_property
    def codes(self) -> np.ndarray:
        alpha = GroupParams(self.k).alphabet
        table = {c: i for i, c in enumerate(alpha)}
        return np.array([[table[c] for c in w] for w in self.prefixes], dtype=np.int8)

    @cached_property
    def common_prefix(self) -> np.ndarray:
        """Matrix of prefix Gromov products; the diagonal equals the depth."""
        n = len(self)
        cp = np.zeros((n, n), dtype=np.int16)
        run = np.ones((n, n), dtype=bool)
        for t in range(self.depth):
            col = self.codes[:, t]
            run &= col[:, None] == col[None, :]
            cp += run
        return cp

    def cylinders_under(self, u: str) -> range:
        if len(u) >= self.depth:
            return range(self.index[u[: self.depth]], self.index[u[: self.depth]] + 1)
        lo, hi = self.blocks[u]
        return range(lo, hi)

    def busemann_vector(self, g: str) -> np.ndarray:
        """b_xi(g, e) for xi in each cylinder."""
        if len(g) >= self.depth:
            raise PrecisionError(f"|g| = {len(g)} not resolved at depth {self.depth}")
        if not g:
            return np.zeros(len(self))
        cp = np.array([gromov_product(g, w) for w in self.prefixes])
        return len(g) - 2.0 * cp


def boundary_gromov_product(c1: Cylinder, c2: Cylinder) -> tuple[int, bool]:
    """Common prefix length; the flag is True when it is only a lower bound."""
    p = gromov_product(c1.prefix, c2.prefix)
    lower = p >= min(c1.depth, c2.depth)
    return p, lower


def busemann(c: Cylinder, g: str) -> int:
    """b_xi(g, e) = |g| - 2 (g, xi) for every xi in the cylinder."""
    if len(g) >= c.depth:
        raise PrecisionError(f"|g| = {len(g)} needs cylinder depth > {len(g)}, got {c.depth}")
    return len(g) - 2 * gromov_product(g, c.prefix)


def shadow(g: str, R0: float, k: int = 2) -> list[Cylinder]:
    """Boundary points xi with (xi, g) >= |g| - R0, as a list of cylinders."""
    if len(g) < 1:
        raise InputError("shadow needs |g| >= 1")
    need = len(g) - R0
    if need > len(g):
        raise DegenerateInputError(f"shadow of {g!r} at R0 = {R0} is empty")
    ell = max(0, math.ceil(need))
    if ell == 0:
        return [Cylinder(c, k) for c in GroupParams(k).alphabet]
    return [Cylinder(g[:ell], k)]


def act(g: str, c: Cylinder, s: float = 1.0) -> tuple[Cylinder, float]:
    """Image cylinder g.C and the weight exp(-s delta b_eta(g, e)) for eta in g.C."""
    if len(g) >= c.depth:
        raise PrecisionError(f"cylinder depth {c.depth} cannot carry |g| = {len(g)}")
    delta = GroupParams(c.k).delta
    image = multiply(g, c.prefix)
    # b_eta(g, e) = -b_xi(g^-1, e) with xi = g^-1 eta in c
    b_src = busemann(c, inverse(g))
    return Cylinder(image, c.k), math.exp(s * delta * b_src)


@dataclass
class BoundaryOperator:
    """Matrix of pi_s(f) on depth-N cylinder functions."""
    depth: int
    s: float
    k: int
    matrix: sp.csr_matrix
    grid: CylinderGrid = field(repr=False)

    def apply(self, psi: np.ndarray) -> np.ndarray:
        return self.matrix @ psi

    def on_constants(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()


def density_rep_matrix(f: SparseGroupFunction | RadialFunction, s: float, depth: int,
                       grid: CylinderGrid | None = None) -> BoundaryOperator:
    """pi_s(f) = sum_g f(g) pi_s(g), with pi_s(g)psi(xi) = e^{-s delta b_xi(g,e)} psi(g^-1 xi).

    When g^-1 maps a cylinder onto a coarser one the value is averaged over
    its depth-N subcylinders (conditional expectation onto the grid).
    """
    if isinstance(f, RadialFunction):
        f = f.embed()
    if f.support_radius >= depth:
        raise PrecisionError(f"r(f) = {f.support_radius} must be below depth {depth}")
    grid = grid or CylinderGrid(depth, f.k)
    delta = GroupParams(f.k).delta
    rows, cols, vals = [], [], []
    for g, fg in sorted(f.entries.items()):
        ginv = inverse(g)
        bvec = grid.busemann_vector(g)
        wts = np.exp(-s * delta * bvec) * fg
        for i, w in enumerate(grid.prefixes):
            u = multiply(ginv, w)
            r = grid.cylinders_under(u)
            share = wts[i] / len(r)
            rows.extend([i] * len(r))
            cols.extend(r)
            vals.extend([share] * len(r))
    n = len(grid)
    m = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    m.sum_duplicates()
    return BoundaryOperator(depth, s, f.k, m, grid)


@lru_cache(maxsize=None)
def prefix_bucket_counts(m: int, k: int = 2) -> tuple[tuple[int, int], ...]:
    """(j, number of g in C_m whose common prefix with a fixed boundary point is j)."""
    q = 2 * k - 1
    if m == 0:
        return ((0, 1),)
    out = [(0, q ** m)]
    out += [(j, (q - 1) * q ** (m - j - 1)) for j in range(1, m)]
    out.append((m, 1))
    return tuple(out)


def prefix_bucket_probs(m: int, k: int = 2) -> list[tuple[int, float]]:
    """(j, nu_PS of boundary points sharing exactly j letters with a fixed g in C_m)."""
    q = 2 * k - 1
    if m == 0:
        return [(0, 1.0)]
    out = [(0, q / (q + 1))]
    out += [(j, (q - 1) / ((q + 1) * float(q) ** j)) for j in range(1, m)]
    out.append((m, 1.0 / ((q + 1) * float(q) ** (m - 1))))
    return out


def ball_density_sum(L: int, s: float, c: Cylinder | int, k: int = 2) -> float:
    """sum_{|g| <= L} exp(-s delta b_xi(g, e)) for xi in the cylinder c.

    ``c`` may be a Cylinder or just its depth; the value does not depend on
    which cylinder is used.
    """
    depth = c.depth if isinstance(c, Cylinder) else int(c)
    k = c.k if isinstance(c, Cylinder) else k
    if depth <= L:
        raise PrecisionError(f"ball radius {L} needs depth > {L}, got {depth}")
    q = 2 * k - 1
    total = 0.0
    for m in range(L + 1):
        for j, cnt in prefix_bucket_counts(m, k):
            total += cnt * float(q) ** (-s * (m - 2 * j))
    return total


def busemann_average(s: float, m: int, k: int = 2) -> float:
    """int exp(-s delta b_xi(g, e)) d nu_PS(xi) for any g with |g| = m."""
    q = 2 * k - 1
    return float(sum(p * float(q) ** (-s * (m - 2 * j)) for j, p in prefix_bucket_probs(m, k)))
