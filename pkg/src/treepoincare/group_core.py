"""Words, metric and convolution algebra of the free group F_k.

Words are plain strings over ``a, A, b, B, ...`` with the uppercase letter
standing for the inverse generator. For vectorized work a word is also
packed into an int64 key: digit ``i`` (base ``2k+1``, little endian) holds
``code + 1`` of the i-th letter, where ``code = 2*generator + inverse``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import InputError, ResourceCapError

__all__ = [
    "GroupParams", "reduce", "inverse", "multiply", "length", "distance",
    "gromov_product", "enumerate_sphere", "enumerate_ball", "sphere_keys",
    "ball_keys", "word_to_key", "key_to_word", "keys_to_words", "key_lengths",
    "keys_multiply", "keys_inverse", "SparseGroupFunction", "RadialFunction",
    "convolve", "radial_convolve", "apply_radial", "DEFAULT_SPHERE_CAP",
    "DEFAULT_SUPPORT_CAP",
]

DEFAULT_SPHERE_CAP = 20          # largest sphere index enumerated by default
DEFAULT_SUPPORT_CAP = 4_000_000  # largest support produced by sparse convolution

_PAIR_CHUNK = 2_000_000


@dataclass(frozen=True)
class GroupParams:
    k: int = 2

    def __post_init__(self):
        if not isinstance(self.k, (int, np.integer)) or self.k < 2 or self.k > 13:
            raise InputError(f"rank k must be an integer in [2, 13], got {self.k!r}")

    @property
    def q(self) -> int:
        return 2 * self.k - 1

    @property
    def delta(self) -> float:
        return math.log(self.q)

    @property
    def alphabet(self) -> str:
        out = []
        for i in range(self.k):
            c = chr(ord("a") + i)
            out += [c, c.upper()]
        return "".join(out)

    def sphere_count(self, m: int) -> int:
        """|C_m| as an exact integer."""
        if m < 0:
            raise InputError("sphere index must be >= 0")
        return 1 if m == 0 else 2 * self.k * self.q ** (m - 1)

    def ball_count(self, m: int) -> int:
        return sum(self.sphere_count(j) for j in range(m + 1))

    def log_sphere_counts(self, m_max: int) -> np.ndarray:
        """log|C_m| for m = 0..m_max, safe far beyond float range of |C_m|."""
        m = np.arange(m_max + 1, dtype=float)
        out = math.log(2 * self.k) + (m - 1) * math.log(self.q)
        out[0] = 0.0
        return out

    @property
    def base(self) -> int:
        return 2 * self.k + 1

    @property
    def max_key_letters(self) -> int:
        return int(math.floor(63 * math.log(2) / math.log(self.base))) - 1


F2 = GroupParams(2)


def _letter_code(sym, k: int) -> int:
    if isinstance(sym, str):
        s = sym.strip()
        inv = False
        for suffix in ("^-1", "⁻¹", "'"):
            if len(s) > 1 and s.endswith(suffix):
                s, inv = s[: -len(suffix)], True
                break
        if len(s) == 1 and s.isalpha():
            g = ord(s.lower()) - ord("a")
            if 0 <= g < k:
                return 2 * g + (int(s.isupper()) ^ int(inv))
    raise InputError(f"unknown letter symbol {sym!r} for F_{k}")


def _code_char(c: int) -> str:
    ch = chr(ord("a") + c // 2)
    return ch.upper() if c % 2 else ch


def reduce(letters: Iterable, k: int = 2) -> str:
    """Freely reduce a letter sequence; a plain string is read one char per letter."""
    stack: list[int] = []
    for sym in letters:
        c = _letter_code(sym, k)
        if stack and stack[-1] == c ^ 1:
            stack.pop()
        else:
            stack.append(c)
    return "".join(_code_char(c) for c in stack)


def inverse(w: str) -> str:
    return w[::-1].swapcase()


def multiply(x: str, y: str) -> str:
    """Product of two reduced words."""
    j = 0
    n = min(len(x), len(y))
    while j < n and y[j] == x[-1 - j].swapcase():
        j += 1
    return x[: len(x) - j] + y[j:]


def length(w: str) -> int:
    return len(w)


def distance(x: str, y: str) -> int:
    return len(multiply(inverse(x), y))


def gromov_product(x: str, y: str) -> int:
    """(x, y)_e; on the Cayley tree this is the common prefix length."""
    return len(os.path.commonprefix([x, y]))


def _check_sphere(m: int, params: GroupParams, cap: int | None):
    if m < 0:
        raise InputError("sphere index must be >= 0")
    cap = DEFAULT_SPHERE_CAP if cap is None else cap
    if m > cap:
        raise ResourceCapError(
            f"sphere C_{m} has {params.sphere_count(m)} words, above cap index {cap}")


def enumerate_sphere(m: int, k: int = 2, cap: int | None = None) -> Iterator[str]:
    """Yield every reduced word of length m once, lexicographic in letter codes."""
    params = GroupParams(k)
    _check_sphere(m, params, cap)
    if m == 0:
        yield ""
        return
    chars = [_code_char(c) for c in range(2 * k)]

    def rec(prefix: str, last: int, left: int):
        if left == 0:
            yield prefix
            return
        for c in range(2 * k):
            if c != last ^ 1:
                yield from rec(prefix + chars[c], c, left - 1)

    for c in range(2 * k):
        yield from rec(chars[c], c, m - 1)


def enumerate_ball(r: int, k: int = 2, cap: int | None = None) -> Iterator[str]:
    for m in range(r + 1):
        yield from enumerate_sphere(m, k, cap)


# ---------------------------------------------------------------- int64 keys

def _powers(params: GroupParams) -> np.ndarray:
    return params.base ** np.arange(params.max_key_letters + 2, dtype=np.int64)


def word_to_key(w: str, k: int = 2) -> int:
    params = GroupParams(k)
    if len(w) > params.max_key_letters:
        raise ResourceCapError(f"word of length {len(w)} does not fit a packed key")
    key = 0
    for i, ch in enumerate(w):
        key += (_letter_code(ch, k) + 1) * params.base ** i
    return key


def key_to_word(key: int, k: int = 2) -> str:
    b = 2 * k + 1
    out = []
    key = int(key)
    while key:
        key, d = divmod(key, b)
        out.append(_code_char(d - 1))
    return "".join(out)


def keys_to_words(keys: np.ndarray, k: int = 2) -> list[str]:
    return [key_to_word(x, k) for x in np.asarray(keys).tolist()]


def key_lengths(keys: np.ndarray, k: int = 2) -> np.ndarray:
    pw = _powers(GroupParams(k))
    return np.searchsorted(pw, np.asarray(keys, dtype=np.int64), side="right").astype(np.int64)


def _inv_digit(d):
    return ((d - 1) ^ 1) + 1


def keys_inverse(keys: np.ndarray, k: int = 2) -> np.ndarray:
    params = GroupParams(k)
    pw = _powers(params)
    keys = np.asarray(keys, dtype=np.int64)
    lens = key_lengths(keys, k)
    out = np.zeros_like(keys)
    for t in range(int(lens.max(initial=0))):
        act = t < lens
        d = (keys // pw[t]) % params.base
        pos = np.where(act, lens - 1 - t, 0)
        out += np.where(act, _inv_digit(d) * pw[pos], 0)
    return out


def keys_multiply(kx: np.ndarray, ky: np.ndarray, k: int = 2,
                  lx: np.ndarray | None = None, ly: np.ndarray | None = None) -> np.ndarray:
    """Elementwise product of packed words."""
    params = GroupParams(k)
    pw = _powers(params)
    b = params.base
    kx = np.asarray(kx, dtype=np.int64)
    ky = np.asarray(ky, dtype=np.int64)
    lx = key_lengths(kx, k) if lx is None else lx
    ly = key_lengths(ky, k) if ly is None else ly
    j = np.zeros(kx.shape, dtype=np.int64)
    active = np.ones(kx.shape, dtype=bool)
    for t in range(int(min(lx.max(initial=0), ly.max(initial=0)))):
        ok = active & (t < lx) & (t < ly)
        if not ok.any():
            break
        xd = (kx // pw[np.maximum(lx - 1 - t, 0)]) % b
        yd = (ky // pw[t]) % b
        ok &= yd == _inv_digit(xd)
        j += ok
        active = ok
    if (lx + ly - 2 * j).max(initial=0) > params.max_key_letters:
        raise ResourceCapError("product word too long for packed keys")
    keep = lx - j
    return kx % pw[keep] + pw[keep] * (ky // pw[j])


def sphere_keys(m: int, k: int = 2, cap: int | None = None) -> np.ndarray:
    """Packed keys of C_m in the same order as :func:`enumerate_sphere`."""
    params = GroupParams(k)
    _check_sphere(m, params, cap)
    if m > params.max_key_letters:
        raise ResourceCapError("sphere too deep for packed keys")
    if m == 0:
        return np.zeros(1, dtype=np.int64)
    pw = _powers(params)
    digits = np.arange(1, 2 * k + 1, dtype=np.int64)
    keys, last = digits.copy(), digits.copy()
    for i in range(1, m):
        new = keys[:, None] + pw[i] * digits[None, :]
        mask = digits[None, :] != _inv_digit(last)[:, None]
        nl = np.broadcast_to(digits[None, :], new.shape)
        keys, last = new[mask], nl[mask]
    return keys


def ball_keys(r: int, k: int = 2, cap: int | None = None) -> np.ndarray:
    return np.concatenate([sphere_keys(m, k, cap) for m in range(r + 1)])


# ---------------------------------------------------------------- functions

def _reduce_pairs(keys: np.ndarray, vals: np.ndarray):
    u, inv = np.unique(keys, return_inverse=True)
    s = np.bincount(inv.ravel(), weights=vals.ravel(), minlength=len(u))
    nz = s != 0
    return u[nz], s[nz]


class SparseGroupFunction:
    """Finitely supported real function on F_k, stored as word -> value."""

    def __init__(self, entries: Mapping[str, float] | None = None, k: int = 2,
                 *, _reduced: bool = False):
        self.k = k
        self.entries: dict[str, float] = {}
        for w, v in (entries or {}).items():
            w = w if _reduced else reduce(w, k)
            v = float(v)
            if v != 0.0:
                self.entries[w] = self.entries.get(w, 0.0) + v
        self.entries = {w: v for w, v in self.entries.items() if v != 0.0}

    @classmethod
    def dirac(cls, w: str = "", k: int = 2) -> "SparseGroupFunction":
        return cls({w: 1.0}, k)

    @classmethod
    def from_keys(cls, keys, vals, k: int = 2) -> "SparseGroupFunction":
        words = keys_to_words(keys, k)
        return cls(dict(zip(words, np.asarray(vals, dtype=float).tolist())), k, _reduced=True)

    def to_keys(self) -> tuple[np.ndarray, np.ndarray]:
        ws = sorted(self.entries)
        keys = np.array([word_to_key(w, self.k) for w in ws], dtype=np.int64)
        vals = np.array([self.entries[w] for w in ws], dtype=float)
        order = np.argsort(keys)
        return keys[order], vals[order]

    def __call__(self, w: str) -> float:
        return self.entries.get(w, 0.0)

    def __len__(self):
        return len(self.entries)

    def __add__(self, other: "SparseGroupFunction") -> "SparseGroupFunction":
        out = dict(self.entries)
        for w, v in other.entries.items():
            out[w] = out.get(w, 0.0) + v
        return SparseGroupFunction(out, self.k, _reduced=True)

    def scale(self, c: float) -> "SparseGroupFunction":
        return SparseGroupFunction({w: c * v for w, v in self.entries.items()}, self.k, _reduced=True)

    @property
    def support_radius(self) -> int:
        return max((len(w) for w in self.entries), default=0)

    def adjoint(self) -> "SparseGroupFunction":
        return SparseGroupFunction({inverse(w): v for w, v in self.entries.items()}, self.k,
                                   _reduced=True)

    def l1_norm(self) -> float:
        return float(sum(abs(v) for v in self.entries.values()))

    def l2_norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.entries.values()))

    def total(self) -> float:
        return float(sum(self.entries.values()))

    def is_positive(self) -> bool:
        return all(v > 0 for v in self.entries.values())

    def allclose(self, other: "SparseGroupFunction", tol: float = 1e-12) -> bool:
        keys = set(self.entries) | set(other.entries)
        return all(abs(self(w) - other(w)) <= tol for w in keys)

    def __repr__(self):
        items = sorted(self.entries.items(), key=lambda t: (len(t[0]), t[0]))[:6]
        more = "" if len(self) <= 6 else ", ..."
        return f"SparseGroupFunction({dict(items)}{more})"


def convolve_keys(kf, vf, kg, vg, k: int = 2, max_support: int | None = None):
    """Convolution on packed representations; returns sorted unique keys and sums."""
    cap = DEFAULT_SUPPORT_CAP if max_support is None else max_support
    kf, vf = np.asarray(kf, dtype=np.int64), np.asarray(vf, dtype=float)
    kg, vg = np.asarray(kg, dtype=np.int64), np.asarray(vg, dtype=float)
    if len(kf) == 0 or len(kg) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    lf, lg = key_lengths(kf, k), key_lengths(kg, k)
    params = GroupParams(k)
    bound = params.ball_count(int(lf.max() + lg.max()))
    if min(bound, len(kf) * len(kg)) > cap:
        raise ResourceCapError(f"convolution output could reach {bound} words, cap {cap}")
    rows = max(1, _PAIR_CHUNK // len(kg))
    acc_k, acc_v = np.zeros(0, dtype=np.int64), np.zeros(0)
    for i in range(0, len(kf), rows):
        a = slice(i, i + rows)
        px = np.repeat(kf[a], len(kg))
        py = np.tile(kg, len(kf[a]))
        lpx = np.repeat(lf[a], len(kg))
        lpy = np.tile(lg, len(kf[a]))
        prod = keys_multiply(px, py, k, lpx, lpy)
        w = np.repeat(vf[a], len(kg)) * np.tile(vg, len(kf[a]))
        acc_k, acc_v = _reduce_pairs(np.concatenate([acc_k, prod]), np.concatenate([acc_v, w]))
    return acc_k, acc_v


def convolve(f: SparseGroupFunction, g: SparseGroupFunction,
             max_support: int | None = None) -> SparseGroupFunction:
    """(f*g)(z) = sum_x f(x) g(x^-1 z)."""
    if f.k != g.k:
        raise InputError("functions live on different free groups")
    kf, vf = f.to_keys()
    kg, vg = g.to_keys()
    keys, vals = convolve_keys(kf, vf, kg, vg, f.k, max_support)
    return SparseGroupFunction.from_keys(keys, vals, f.k)


# ---------------------------------------------------------------- radial algebra

class RadialFunction:
    """sum_m coeffs[m] * 1_{C_m}."""

    def __init__(self, coeffs, k: int = 2):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float)).copy()
        nz = np.nonzero(c)[0]
        self.coeffs = c[: nz[-1] + 1] if len(nz) else np.zeros(1)
        self.k = k

    @classmethod
    def sphere(cls, m: int, k: int = 2) -> "RadialFunction":
        c = np.zeros(m + 1)
        c[m] = 1.0
        return cls(c, k)

    @classmethod
    def ball(cls, r: int, k: int = 2) -> "RadialFunction":
        return cls(np.ones(r + 1), k)

    @classmethod
    def ball_average(cls, r: int, k: int = 2) -> "RadialFunction":
        return cls(np.full(r + 1, 1.0 / GroupParams(k).ball_count(r)), k)

    @classmethod
    def radialize(cls, f: SparseGroupFunction) -> "RadialFunction":
        """Average f over each sphere."""
        params = GroupParams(f.k)
        sums = np.zeros(f.support_radius + 1)
        for w, v in f.entries.items():
            sums[len(w)] += v
        counts = np.array([params.sphere_count(m) for m in range(len(sums))], dtype=float)
        return cls(sums / counts, f.k)

    @property
    def radius(self) -> int:
        return len(self.coeffs) - 1

    def embed(self, cap: int | None = None) -> SparseGroupFunction:
        out = {}
        for m, c in enumerate(self.coeffs):
            if c != 0.0:
                for w in enumerate_sphere(m, self.k, cap):
                    out[w] = c
        return SparseGroupFunction(out, self.k, _reduced=True)

    def sphere_counts(self) -> np.ndarray:
        params = GroupParams(self.k)
        return np.array([float(params.sphere_count(m)) for m in range(len(self.coeffs))])

    def l2_norm(self) -> float:
        return math.sqrt(float(np.sum(self.coeffs ** 2 * self.sphere_counts())))

    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.coeffs) * self.sphere_counts()))

    def __call__(self, w: str) -> float:
        return float(self.coeffs[len(w)]) if len(w) < len(self.coeffs) else 0.0

    def __repr__(self):
        return f"RadialFunction({self.coeffs.tolist()}, k={self.k})"


def _times_a1(c: np.ndarray, q: int) -> np.ndarray:
    """Coefficients of A_1 * sum c_m A_m (tree recurrence)."""
    n = len(c)
    d = np.zeros(n + 1)
    d[1:] += c                     # A_1 A_m -> A_{m+1}
    if n > 1:
        d[0] += (q + 1) * c[1]     # A_1 A_1 -> (q+1) A_0
        d[1 : n - 1] += q * c[2:]  # A_1 A_m -> q A_{m-1}, m >= 2
    return d


def radial_convolve(f: RadialFunction, g: RadialFunction) -> RadialFunction:
    """Product in the radial algebra via A_1 A_m = A_{m+1} + q A_{m-1}."""
    if f.k != g.k:
        raise InputError("functions live on different free groups")
    q = 2 * f.k - 1
    size = f.radius + g.radius + 1
    out = np.zeros(size)
    prev = np.zeros(size)
    cur = np.zeros(size)
    cur[: g.radius + 1] = g.coeffs          # A_0 * g
    for m, fm in enumerate(f.coeffs):
        if fm != 0.0:
            out += fm * cur
        if m == f.radius:
            break
        nxt = _times_a1(cur, q)[:size]
        if m == 1:
            nxt -= (q + 1) * prev
        elif m >= 2:
            nxt -= q * prev
        prev, cur = cur, nxt
    return RadialFunction(out, f.k)


def _sphere_transfer_terms(radius: int, q: int):
    """Counts N(m, j, n) of y in C_m with (y, x) = j for a fixed x in C_n.

    Yields (m, j, case, weight) where case says which n it applies to:
    'zero' (n = 0), 'all' (n > j), 'edge' (n = j) and weight is N.
    """
    for m in range(radius + 1):
        for j in range(m + 1):
            if j == m:
                yield m, j, "ge", 1.0
            elif j == 0:
                yield m, j, "zero", float((q + 1) * q ** (m - 1))
                yield m, j, "pos", float(q ** m)
            else:
                yield m, j, "gt", float((q - 1) * q ** (m - j - 1))
                yield m, j, "eq", float(q ** (m - j))


def apply_radial(f_coeffs: np.ndarray, u: np.ndarray, k: int = 2,
                 basis: str = "value") -> np.ndarray:
    """Radial coefficients of f * u using only nonnegative counting weights.

    ``basis='value'`` reads/writes sphere values c_m; ``basis='l2'`` uses the
    orthonormal coordinates c_m * sqrt|C_m|, which keep deep powers in range.
    """
    params = GroupParams(k)
    q = params.q
    f_coeffs = np.asarray(f_coeffs, dtype=float)
    u = np.asarray(u, dtype=float)
    R = len(f_coeffs) - 1
    L = len(u) - 1
    out_len = L + R + 1
    n = np.arange(out_len)
    logc = params.log_sphere_counts(out_len + R)
    v = np.zeros(out_len)
    for m, j, case, wgt in _sphere_transfer_terms(R, q):
        fm = f_coeffs[m]
        if fm == 0.0:
            continue
        if case == "ge":
            sel = n >= m
        elif case == "zero":
            sel = n == 0
        elif case == "pos":
            sel = n >= 1
        elif case == "gt":
            sel = n > j
        else:
            sel = n == j
        nn = n[sel]
        src = m + nn - 2 * j
        ok = src <= L
        nn, src = nn[ok], src[ok]
        if len(nn) == 0:
            continue
        contrib = fm * wgt * u[src]
        if basis == "l2":
            contrib = contrib * np.exp(0.5 * (logc[nn] - logc[src]))
        v[nn] += contrib
    return v
