"""Pair measures at finite truncation and the boundary objects built from them."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .boundary import (CylinderGrid, busemann_average, density_rep_matrix, shadow,
                       cylinder_mass)
from .errors import DegenerateInputError, DivergenceError, InputError, PrecisionError, ResourceCapError
from .group_core import (GroupParams, SparseGroupFunction, ball_keys, gromov_product,
                         inverse, key_lengths, keys_inverse, keys_multiply, keys_to_words,
                         multiply, reduce)
from .poincare import (SlowGrowthTheta, _estimated_exponent, _extrapolated_tail, _log_weights,
                       pair_kernel)
from .posdef import PosDefOracle, make_oracle

log = logging.getLogger(__name__)

__all__ = [
    "PairMeasure", "pair_measure", "conformal_check", "ConditionalExpectationMatrix",
    "conditional_expectation", "boundary_form", "KnappSteinMatrix", "knapp_stein_matrix",
    "ks_diagonal_average", "harish_chandra", "fusion_check", "mu_t_convergence",
    "upper_shadow_check", "upper_shadow_audit", "knapp_stein_defect", "sigma_schedule",
    "MASS_FLOOR",
]

MASS_FLOOR = 1e-6
BRUTE_M_CAP = 6


def sigma_schedule(s: float, j_max: int = 4, width: float = 0.2) -> list[float]:
    return [s + width * 2.0 ** (-j) for j in range(j_max + 1)]


# ---------------------------------------------------------------- pair sums

class _RadialPairs:
    """S(u, v) for prefixes u, v through the radial pair kernel."""

    def __init__(self, phi, sigma, theta, M):
        self.kernel = pair_kernel(phi, sigma, theta, M)
        self._memo = {}

    def _key(self, u: str, v: str):
        if len(u) > len(v):
            u, v = v, u
        p = gromov_product(u, v)
        return (len(u), len(v), p, p == len(u))

    def S(self, u: str, v: str) -> float:
        key = self._key(u, v)
        if key not in self._memo:
            lu, lv, p, nested = key
            self._memo[key] = (self.kernel.nested(lu, lv) if nested
                               else self.kernel.incomparable(lu, lv, p))
        return self._memo[key]


class _BrutePairs:
    """S(u, v) by summing the full pair matrix on B_M (small M only)."""

    def __init__(self, phi, sigma, theta, M):
        if M > BRUTE_M_CAP:
            raise ResourceCapError(f"non-radial pair measure needs M <= {BRUTE_M_CAP}, got {M}")
        k = phi.k
        keys = ball_keys(M, k)
        self.words = keys_to_words(keys, k)
        lens = key_lengths(keys, k)
        w = np.exp(_log_weights(sigma, phi.group.delta, theta, lens))
        inv = keys_inverse(keys, k)
        n = len(keys)
        W = np.empty((n, n))
        for i in range(n):
            prod = keys_multiply(np.full(n, inv[i]), keys, k, np.full(n, lens[i]), lens)
            W[i] = phi.eval_keys(prod) * w[i] * w
        self.W = W
        self._masks = {}
        self._rows = {}

    def _mask(self, u):
        if u not in self._masks:
            self._masks[u] = np.array([x.startswith(u) for x in self.words], dtype=float)
        return self._masks[u]

    def S(self, u: str, v: str) -> float:
        if u not in self._rows:
            self._rows[u] = self._mask(u) @ self.W
        return float(self._rows[u] @ self._mask(v))

    def block(self, prefixes) -> np.ndarray:
        A = np.array([self._mask(u) for u in prefixes])
        return A @ self.W @ A.T


@dataclass
class PairMeasure:
    sigma: float
    phi: PosDefOracle
    theta: SlowGrowthTheta | None
    truncation_m: int
    depth: int
    interior_mass: float
    block: np.ndarray
    normalization: float
    tail: float
    exponent: float
    exponent_source: str
    grid: CylinderGrid = field(repr=False)
    pairs: object = field(repr=False)
    flags: list = field(default_factory=list)

    def cell_mass(self, u: str, v: str) -> float:
        return self.pairs.S(u, v) / self.normalization

    @property
    def marginal(self) -> np.ndarray:
        return self.block.sum(axis=1)

    def to_record(self) -> dict:
        return {"sigma": self.sigma, "phi": self.phi.name, "truncation_m": self.truncation_m,
                "depth": self.depth, "interior_mass": self.interior_mass,
                "block_mass": float(self.block.sum()), "normalization": self.normalization,
                "tail": self.tail, "exponent": self.exponent,
                "exponent_source": self.exponent_source, "flags": list(self.flags)}


def _make_pairs(phi, sigma, theta, M):
    if phi.is_radial:
        return _RadialPairs(phi, sigma, theta, M)
    return _BrutePairs(phi, sigma, theta, M)


def pair_measure(phi: PosDefOracle, sigma: float, theta: SlowGrowthTheta | None = None,
                 truncation_m: int | None = None, depth: int = 4, tail_frac: float = 1e-3,
                 m_cap: int = 4096) -> PairMeasure:
    """Normalized pair measure m_n on B_M x B_M, pushed to depth-N cylinder pairs.

    A pair (g, h) with |g|, |h| >= depth lands in cell (g[:N], h[:N]); every
    other pair is interior. Without ``truncation_m`` the truncation doubles
    until the extrapolated tail of the normalization is below ``tail_frac``.
    """
    expo = _estimated_exponent(phi)
    source = "declared" if phi.declared_exponent is not None else "estimated"
    if expo < 0.5:
        # the double series only converges above 1/2, which sets the conformal dimension
        expo, source = 0.5, source + ", floored at 1/2"
    if not sigma > expo:
        raise DivergenceError(f"pair measure needs sigma > max(1/2, delta(phi)) = {expo}, got {sigma}")
    grid = CylinderGrid(depth, phi.k)
    flags = []
    if truncation_m is None:
        if not phi.is_radial:
            raise InputError("non-radial oracles need an explicit truncation_m")
        M = 4 * depth
        while True:
            step = max(1, M // 8)
            vals = [pair_kernel(phi, sigma, theta, m).nested(0, 0) for m in (M - 2 * step, M - step, M)]
            tail = _extrapolated_tail(vals)
            if tail <= tail_frac * vals[-1]:
                break
            if M >= m_cap:
                flags.append("tail above target")
                break
            M = min(2 * M, m_cap)
        pairs = _make_pairs(phi, sigma, theta, M)
    else:
        M = int(truncation_m)
        if M < depth:
            raise PrecisionError(f"truncation {M} below depth {depth}")
        pairs = _make_pairs(phi, sigma, theta, M)
        tail = math.nan
    P2 = pairs.S("", "")
    if isinstance(pairs, _RadialPairs):
        # cells depend only on the common prefix length of the two labels
        table = np.array([pairs.S(grid.prefixes[0], _partner(grid.prefixes[0], p, phi.k))
                          for p in range(depth + 1)])
        block = table[grid.common_prefix] / P2
    else:
        block = pairs.block(grid.prefixes) / P2
        block = 0.5 * (block + block.T)
    interior = 1.0 - float(block.sum())
    return PairMeasure(float(sigma), phi, theta, M, depth, interior, block, float(P2),
                       float(tail), float(expo), source, grid, pairs, flags)


def _partner(w: str, p: int, k: int) -> str:
    """A word of the same length as w sharing exactly p leading letters with it."""
    if p >= len(w):
        return w
    alpha = GroupParams(k).alphabet
    prev = w[p - 1].swapcase() if p else None
    for c in alpha:
        if c != w[p] and c != prev:
            tail = c
            break
    out = w[:p] + tail
    while len(out) < len(w):
        out += next(c for c in alpha if c != out[-1].swapcase())
    return out


def conformal_check(pm: PairMeasure, g: str, floor: float = MASS_FLOOR) -> float:
    """Max relative error of g_* m against e^{-delta(phi) (b_xi(g,e) + b_eta(g,e))} m."""
    g = reduce(g, pm.phi.k)
    if len(g) >= pm.depth:
        raise PrecisionError(f"|g| = {len(g)} needs depth > {len(g)}")
    if not g:
        return 0.0
    grid = pm.grid
    delta = pm.phi.group.delta
    ginv = inverse(g)
    b = grid.busemann_vector(g)
    src = [multiply(ginv, w) for w in grid.prefixes]
    total = pm.block.sum()
    keep = pm.block >= floor * total
    if not keep.any():
        raise DegenerateInputError("no cell above the mass floor")
    worst = 0.0
    idx = np.argwhere(keep)
    for i, j in idx:
        pushed = pm.cell_mass(src[i], src[j])
        pred = math.exp(-pm.exponent * delta * (b[i] + b[j])) * pm.block[i, j]
        worst = max(worst, abs(pushed - pred) / pred)
    return float(worst)


# ---------------------------------------------------------------- E and the forms

@dataclass
class ConditionalExpectationMatrix:
    depth: int
    matrix: np.ndarray
    marginal: np.ndarray
    kept: np.ndarray
    warnings: list = field(default_factory=list)

    def apply(self, psi: np.ndarray) -> np.ndarray:
        return self.matrix @ psi


def conditional_expectation(pm: PairMeasure) -> ConditionalExpectationMatrix:
    """E_ij = block_ij / nu_i with nu the row marginal of the boundary block."""
    if not pm.block.any():
        raise DegenerateInputError("boundary block is zero")
    nu = pm.marginal
    kept = nu > 0
    warns = []
    if not kept.all():
        warns.append(f"dropped {int((~kept).sum())} zero-marginal rows")
        log.warning(warns[-1])
    E = np.zeros_like(pm.block)
    E[kept] = pm.block[kept] / nu[kept, None]
    return ConditionalExpectationMatrix(pm.depth, E, nu, kept, warns)


def boundary_form(pm: PairMeasure, f1, f2=None, normalize: bool = False) -> float:
    """f1^T block f2; ``normalize`` rescales the block to total mass 1."""
    f1 = np.asarray(f1, dtype=float)
    f2 = f1 if f2 is None else np.asarray(f2, dtype=float)
    n = len(pm.grid)
    if f1.shape != (n,) or f2.shape != (n,):
        raise InputError(f"cylinder functions must have length {n}")
    block = pm.block / pm.block.sum() if normalize else pm.block
    return float(f1 @ block @ f2)


def ks_diagonal_average(s: float, depth: int, k: int = 2) -> float:
    """Average of e^{2(1-s) delta (xi, eta)} over a depth-N cylinder squared."""
    if not s > 0.5:
        raise InputError("diagonal cell average is finite only for s > 1/2")
    q = 2 * k - 1
    return float(q) ** (2 * (1 - s) * depth) * (1 - 1 / q) / (1 - float(q) ** (1 - 2 * s))


@dataclass
class KnappSteinMatrix:
    s: float
    depth: int
    kernel: np.ndarray
    masses: np.ndarray

    @property
    def form(self) -> np.ndarray:
        return self.masses[:, None] * self.kernel * self.masses[None, :]

    def eigenvalues(self) -> np.ndarray:
        return la.eigvalsh(self.form)

    def relative_eigenvalues(self) -> np.ndarray:
        Q = self.form
        return la.eigvalsh(Q) / (np.trace(Q) / len(Q))

    def quad(self, f1, f2=None) -> float:
        f1 = np.asarray(f1, dtype=float)
        f2 = f1 if f2 is None else np.asarray(f2, dtype=float)
        return float(f1 @ self.form @ f2)


def knapp_stein_matrix(s: float, depth: int, k: int = 2, dense_cap: int = 3000) -> KnappSteinMatrix:
    if not 0.5 < s <= 1.0:
        raise InputError(f"need 1/2 < s <= 1, got {s}")
    grid = CylinderGrid(depth, k)
    if len(grid) > dense_cap:
        raise ResourceCapError(f"{len(grid)} cylinders above dense cap {dense_cap}")
    q = 2 * k - 1
    K = float(q) ** (2 * (1 - s) * grid.common_prefix.astype(float))
    np.fill_diagonal(K, ks_diagonal_average(s, depth, k))
    return KnappSteinMatrix(s, depth, K, grid.masses.copy())


def harish_chandra(s: float, g: str, depth: int | None = None, k: int = 2,
                   method: str = "auto") -> dict:
    """c_s(g) by prefix buckets and Xi_s(g) = Q_s(pi_s(g)1, 1) / Q_s(1, 1).

    ``method='dense'`` builds the Knapp-Stein matrix; ``'buckets'`` uses the
    constant row sums of K nu, which reduce Xi_s to c_s on trees.
    """
    g = reduce(g, k)
    depth = depth if depth is not None else len(g) + 1
    if len(g) >= depth:
        raise PrecisionError(f"|g| = {len(g)} needs depth > {len(g)}")
    c = busemann_average(s, len(g), k)
    if method == "auto":
        method = "dense" if depth <= 6 else "buckets"
    if method == "dense":
        ks = knapp_stein_matrix(s, depth, k)
        grid = CylinderGrid(depth, k)
        delta = GroupParams(k).delta
        v = np.exp(-s * delta * grid.busemann_vector(g))
        one = np.ones(len(grid))
        xi = ks.quad(v, one) / ks.quad(one, one)
    elif method == "buckets":
        # K nu is constant on trees, so the pairing with 1 returns c_s itself
        xi = c
    else:
        raise InputError(f"unknown method {method!r}")
    return {"s": s, "g": g, "depth": depth, "c_s": c, "xi_s": float(xi), "method": method}


def _bracket(vals) -> dict:
    vals = np.asarray(vals, dtype=float)
    lo, hi = float(vals.min()), float(vals.max())
    return {"c": lo, "C": hi, "ratio": hi / lo}


def fusion_check(s: float, s_prime: float, t: float, m_max: int = 12, k: int = 2) -> dict:
    """Bracket of c_s c_{s'}(g) e^{(1-t) delta |g|} over |g| <= m_max, s + s' = 1 + t."""
    for name, x in (("s", s), ("s_prime", s_prime), ("t", t)):
        if not 0.5 < x <= 1.0:
            raise InputError(f"{name} must lie in (1/2, 1], got {x}")
    if abs(s + s_prime - 1 - t) > 1e-12:
        raise InputError("need s + s' = 1 + t")
    delta = GroupParams(k).delta
    ratios = [busemann_average(s, m, k) * busemann_average(s_prime, m, k) * math.exp((1 - t) * delta * m)
              for m in range(m_max + 1)]
    return {"s": s, "s_prime": s_prime, "t": t, "ratios": ratios, **_bracket(ratios)}


def mu_t_convergence(t_schedule, depth: int = 3, s: float = 0.75, k: int = 2,
                     tail_frac: float = 1e-3) -> dict:
    """Distance of mu_t to nu_PS and of m_{s;t} to m_s on depth-N cylinders."""
    group = GroupParams(k)
    delta, q = group.delta, group.q
    ks = knapp_stein_matrix(s, depth, k)
    target = ks.form / ks.form.sum()
    phi = make_oracle("haagerup", k, s=s)
    rows = []
    for t in t_schedule:
        if not t > delta:
            raise InputError(f"need t > delta, got {t}")
        P = 1.0 + 2 * k * math.exp(-t) / (1.0 - q * math.exp(-t))
        inner = sum(group.sphere_count(m) * math.exp(-t * m) for m in range(depth)) / P
        # cell masses are (1 - inner) nu_PS by homogeneity; the interior is an atom
        cells = (1.0 - inner) * group.sphere_count(depth) ** -1.0
        tv = 0.5 * (inner + len(CylinderGrid(depth, k)) * abs(cells - cylinder_mass("a" * depth, k)))
        sig = (t - (1 - s) * delta) / delta
        pm = pair_measure(phi, sig, None, None, depth, tail_frac)
        blk = pm.block / pm.block.sum()
        rows.append({"t": t, "mu_t_tv": tv, "mu_t_total": inner + cells * len(blk),
                     "sigma": sig, "pair_tv": 0.5 * float(np.abs(blk - target).sum()),
                     "pair_symmetry": float(np.abs(blk - blk.T).max()),
                     "pair_total": float(pm.block.sum() + pm.interior_mass),
                     "truncation_m": pm.truncation_m})
    return {"depth": depth, "s": s, "rows": rows}


def upper_shadow_check(pm: PairMeasure, gamma: str, R0: float = 0.5) -> float:
    """m(1_O x 1_O)^{1/2} e^{delta(phi) |gamma|} for O the shadow of gamma."""
    gamma = reduce(gamma, pm.phi.k)
    if len(gamma) >= pm.depth:
        raise PrecisionError(f"|gamma| = {len(gamma)} needs depth > {len(gamma)}")
    cells = shadow(gamma, R0, pm.phi.k)
    mask = np.zeros(len(pm.grid))
    for c in cells:
        mask[list(pm.grid.cylinders_under(c.prefix))] = 1.0
    mass = float(mask @ pm.block @ mask)
    return math.sqrt(mass) * math.exp(pm.exponent * pm.phi.group.delta * len(gamma))


def upper_shadow_audit(pm: PairMeasure, lengths=None, R0: float = 0.5) -> dict:
    from .group_core import enumerate_sphere
    lengths = lengths or range(1, pm.depth)
    ratios = {}
    for m in lengths:
        for gamma in enumerate_sphere(m, pm.phi.k):
            ratios[gamma] = upper_shadow_check(pm, gamma, R0)
    return {"ratios": ratios, **_bracket(list(ratios.values()))}


def knapp_stein_defect(pm: PairMeasure, g: str, s: float | None = None) -> float:
    """||E Pi_s(g) - Pi_s(g^-1)^* E||_inf, adjoint in the nu-weighted pairing."""
    s = pm.exponent if s is None else s
    k = pm.phi.k
    E = conditional_expectation(pm)
    nu = E.marginal
    P = density_rep_matrix(SparseGroupFunction.dirac(g, k), s, pm.depth, pm.grid).matrix.toarray()
    Pinv = density_rep_matrix(SparseGroupFunction.dirac(inverse(g), k), s, pm.depth, pm.grid).matrix.toarray()
    adj = (Pinv.T * nu[None, :]) / nu[:, None]
    D = E.matrix @ P - adj @ E.matrix
    return float(np.abs(D).sum(axis=1).max())
