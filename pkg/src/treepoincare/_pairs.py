"""Pair sums over prefix cylinders for radial kernels.

Computes, for prefixes u, v (possibly empty),

    S(u, v) = sum_{x >= u, y >= v, |x|, |y| <= M} phi(|x^-1 y|) w(|x|) w(|y|)

where ``x >= u`` means u is a prefix of x. For a radial phi the sum depends
only on |u|, |v| and how u and v sit relative to each other, so it is
computed from sphere counts in O(M^2). All arrays are rescaled by
exp(kappa * length) to keep deep truncations inside float range.
"""
from __future__ import annotations

import math

import numpy as np


def _exp(x):
    with np.errstate(under="ignore"):
        return np.exp(x)


class RadialPairKernel:
    """Precomputed weights for a radial phi and radial weight w on B_M."""

    def __init__(self, log_phi: np.ndarray, log_w: np.ndarray, q: int):
        self.M = len(log_w) - 1
        if len(log_phi) < 2 * self.M + 1:
            raise ValueError("log_phi must cover lengths 0..2M")
        self.q = q
        self.lq = math.log(q)
        self.log_w = np.asarray(log_w, dtype=float)
        a = np.arange(self.M + 1)
        log_a = a * self.lq + self.log_w
        finite = np.isfinite(log_a)
        self.kappa = 0.0
        if finite.sum() > 1:
            idx = a[finite]
            self.kappa = float((log_a[finite][-1] - log_a[finite][0]) / max(idx[-1] - idx[0], 1))
        self.shift = float(np.max(log_a[finite] - self.kappa * a[finite])) if finite.any() else 0.0
        # A~(a) = q^a w(a) e^{-kappa a - shift}
        self.At = _exp(log_a - self.kappa * a - self.shift)
        m = np.arange(2 * self.M + 1)
        self.phi_hat = _exp(np.asarray(log_phi[: 2 * self.M + 1]) + self.kappa * m)
        self.decay = _exp((2 * self.kappa - self.lq) * a)   # e^{(2 kappa - log q) c}
        self.scale = 2 * self.shift                          # log of the global factor

    def _Bt(self, lv: int) -> np.ndarray:
        """Weights for y >= v: (#y in C_b extending v) w(b), rescaled like A~."""
        b = np.arange(self.M + 1)
        q = self.q
        if lv == 0:
            cnt_log = np.where(b == 0, 0.0, math.log(q + 1) + (b - 1) * self.lq)
        else:
            cnt_log = (b - lv) * self.lq
        out = _exp(cnt_log + self.log_w - self.kappa * b - self.shift)
        out[b < lv] = 0.0
        return out

    def incomparable(self, lu: int, lv: int, p: int) -> float:
        """u, v diverge after p < min(|u|, |v|) common letters."""
        au = self.At.copy()
        au[:lu] = 0.0
        av = self.At.copy()
        av[:lv] = 0.0
        conv = np.convolve(au, av)                     # index d = a + b
        d = np.arange(len(conv))
        ok = d >= 2 * p
        val = float(np.dot(conv[ok], self.phi_hat[d[ok] - 2 * p]))
        # q^{-lu-lv} e^{2 kappa p} from counts and rescaling
        logf = -(lu + lv) * self.lq + 2 * self.kappa * p + self.scale
        return val * math.exp(logf) if val else 0.0

    def nested(self, lu: int, lv: int) -> float:
        """u is a prefix of v (u may be empty, u == v allowed)."""
        if lu > lv:
            raise ValueError("nested() needs |u| <= |v|")
        M, q = self.M, self.q
        At, Bt, ph, dec = self.At, self._Bt(lv), self.phi_hat, self.decay
        # x is a prefix of y: c = a <= b, a >= lu
        aq = At * dec
        aq[:lu] = 0.0
        t1 = float(np.dot(Bt, np.convolve(aq, ph[: M + 1])[: M + 1]))
        # y is a proper prefix of x: c = b < a, b >= lu
        bq = Bt * dec
        bq[:lu] = 0.0
        if lu == 0:
            bq[0] *= (q + 1) / q
        corr = np.array([np.dot(At[b + 1:], ph[1: M - b + 1]) for b in range(M + 1)])
        t2 = float(np.dot(bq, corr))
        # x and y branch after c letters, c < a, c < b
        t3 = 0.0
        D = np.zeros(2 * M + 1)
        for c in range(M - 1, lu - 1, -1):
            j = c + 1
            # add pairs with a = j (b >= j) and b = j (a > j)
            D[2 * j: j + M + 1] += At[j] * Bt[j: M + 1]
            D[2 * j + 1: j + M + 1] += Bt[j] * At[j + 1: M + 1]
            lo = 2 * c + 2
            s = float(np.dot(D[lo:], ph[lo - 2 * c: 2 * M + 1 - 2 * c]))
            cf = 1.0 if c == 0 else (q - 1) / q
            t3 += cf * dec[c] * s
        return (t1 + t2 + t3) * math.exp(self.scale)


def brute_pair_sum(phi_r, w, M, u="", v="", k=2):
    """Reference implementation by enumeration (small M only)."""
    from .group_core import enumerate_ball, distance
    xs = [x for x in enumerate_ball(M, k) if x.startswith(u)]
    ys = [y for y in enumerate_ball(M, k) if y.startswith(v)]
    tot = 0.0
    for x in xs:
        for y in ys:
            tot += phi_r(distance(x, y)) * w(len(x)) * w(len(y))
    return tot
