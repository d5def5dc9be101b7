"""Weighted Poincaré series, exponent regression, slow-growth weights and double series."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._pairs import RadialPairKernel
from .errors import DegenerateInputError, InputError, ResourceCapError
from .posdef import PosDefOracle

__all__ = [
    "SeriesValue", "ExponentEstimate", "SlowGrowthTheta", "poincare_series",
    "critical_exponent", "patterson_theta", "slow_growth_audit", "double_series",
    "sphericity_ratio", "DIVERGENCE_CAP", "pair_kernel",
]

DIVERGENCE_CAP = 1e12        # partial sums above this are reported as diverged
RATIO_RUN = 5                # consecutive non-decaying spheres that flag divergence
DEFAULT_M = 40
MAX_RADIAL_M = 4096


@dataclass
class SeriesValue:
    partial: float
    tail_bound: float
    truncation_m: int
    diverged: bool
    flags: list = field(default_factory=list)

    @property
    def upper(self) -> float:
        return self.partial + self.tail_bound

    def to_record(self) -> dict:
        return {"partial": self.partial, "tail_bound": self.tail_bound,
                "truncation_m": self.truncation_m, "diverged": self.diverged,
                "flags": list(self.flags)}


@dataclass
class ExponentEstimate:
    """Normalized exponent s_hat (units of delta) from a log-linear fit."""
    s_hat: float
    stderr: float
    window: tuple[int, int]
    spherical_sums: list
    intercept: float = 0.0
    method: str = "regression"

    def to_record(self) -> dict:
        return {"s_hat": self.s_hat, "stderr": self.stderr, "window": list(self.window),
                "spherical_sums": list(self.spherical_sums), "method": self.method}


class SlowGrowthTheta:
    """Piecewise log-linear, non-decreasing weight theta >= 1.

    On [t_j, t_{j+1}) the log-slope is ``rates[j]`` (per unit distance);
    after the last breakpoint theta is constant.
    """

    def __init__(self, breakpoints, rates, log_values, stages=None):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        self.rates = np.asarray(rates, dtype=float)
        self.log_values = np.asarray(log_values, dtype=float)
        if len(self.rates) != len(self.breakpoints) - 1:
            raise InputError("need one rate per segment")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise InputError("breakpoints must increase")
        if np.any(self.rates < 0) or np.any(np.diff(self.rates) > 0):
            raise InputError("rates must be non-negative and non-increasing")
        self.stages = stages or []

    @classmethod
    def constant(cls) -> "SlowGrowthTheta":
        return cls([0.0], [], [0.0])

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    def log(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        slopes = np.append(self.rates, 0.0)
        return self.log_values[idx] + slopes[idx] * (t - self.breakpoints[idx])

    def __call__(self, t):
        return np.exp(self.log(t))

    def slope_at(self, t: float) -> float:
        idx = int(np.searchsorted(self.breakpoints, max(t, 0.0), side="right")) - 1
        return float(self.rates[idx]) if idx < len(self.rates) else 0.0

    def to_record(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "rates": self.rates.tolist(),
                "log_values": self.log_values.tolist(), "stages": self.stages}


# ---------------------------------------------------------------- single series

def _log_weights(sigma: float, delta: float, theta: SlowGrowthTheta | None, m: np.ndarray):
    lw = -sigma * delta * m
    if theta is not None:
        lw = lw + theta.log(m)
    return lw


def _divergence_heuristic(log_terms: np.ndarray) -> bool:
    finite = log_terms[np.isfinite(log_terms)]
    if len(finite) == 0:
        return False
    total = np.logaddexp.reduce(finite)
    if total > math.log(DIVERGENCE_CAP):
        return True
    run = 0
    for a, b in zip(log_terms[:-1], log_terms[1:]):
        if np.isfinite(a) and np.isfinite(b) and b >= a:
            run += 1
            if run >= RATIO_RUN:
                return True
        else:
            run = 0
    return False


def _envelope_tail(phi: PosDefOracle, sigma: float, m_max: int,
                   theta: SlowGrowthTheta | None) -> tuple[float, str]:
    """Geometric bound for sum_{m > m_max} of the envelope times the weight."""
    if phi.support_radius is not None and m_max >= phi.support_radius:
        return 0.0, "exact"
    amp, rate = phi.envelope_or_default()
    if amp == 0.0:
        return 0.0, "exact"
    delta = phi.group.delta
    # log theta is concave, so theta(m) <= theta(M) exp(slope(M) (m - M))
    slope = theta.slope_at(m_max) if theta is not None else 0.0
    lt = float(theta.log(m_max)) if theta is not None else 0.0
    decay = (rate - sigma) * delta + slope
    if decay >= 0:
        return math.inf, "envelope"
    first = math.log(amp) + (rate - sigma) * delta * (m_max + 1) + lt + slope
    return math.exp(first) / (1.0 - math.exp(decay)), "envelope" if phi.envelope else "phi<=1"


def poincare_series(phi: PosDefOracle, sigma: float, m_max: int = DEFAULT_M,
                    theta: SlowGrowthTheta | None = None) -> SeriesValue:
    """sum_{|g| <= m_max} theta(|g|) e^{-sigma delta |g|} phi(g), with a tail bound."""
    delta = phi.group.delta
    if not sigma * delta > 0:
        raise InputError(f"sigma must be positive, got {sigma}")
    m = np.arange(m_max + 1)
    log_terms = phi.log_sphere_sums(m_max) + _log_weights(sigma, delta, theta, m)
    finite = log_terms[np.isfinite(log_terms)]
    partial = float(np.exp(np.logaddexp.reduce(finite))) if len(finite) else 0.0
    flags = []
    declared = phi.declared_exponent
    diverged = False
    if declared is not None and sigma <= declared and (phi.support_radius is None):
        diverged = True
        flags.append("declared exponent")
    elif _divergence_heuristic(log_terms) and phi.support_radius is None:
        diverged = True
        flags.append("numeric")
    if diverged:
        return SeriesValue(partial, math.inf, m_max, True, flags)
    tail, how = _envelope_tail(phi, sigma, m_max, theta)
    flags.append(f"tail:{how}")
    return SeriesValue(partial, tail, m_max, False, flags)


def critical_exponent(phi: PosDefOracle, window: tuple[int, int] = (4, 12)) -> ExponentEstimate:
    """Slope of log sum_{C_m} phi against m delta over the window."""
    m_min, m_max = window
    if m_min < 0 or m_max < m_min + 3:
        raise InputError(f"window {window} needs m_max >= m_min + 3")
    delta = phi.group.delta
    logs = phi.log_sphere_sums(m_max)[m_min:]
    ms = np.arange(m_min, m_max + 1)
    sums = [float(np.exp(x)) for x in logs]
    ok = np.isfinite(logs)
    if not ok.any():
        if phi("") > 0:
            # finitely supported: the series is a polynomial, exponent 0
            return ExponentEstimate(0.0, 0.0, (m_min, m_max), sums, 0.0, "finite support")
        raise DegenerateInputError("all spherical sums vanish on the window")
    if ok.sum() < 2:
        raise DegenerateInputError("fewer than two nonzero spherical sums on the window")
    x, y = ms[ok] * delta, logs[ok]
    fit = stats.linregress(x, y)
    # residual form; the 1 - r^2 form loses all digits on exact lines
    resid = y - (fit.slope * x + fit.intercept)
    dof = len(x) - 2
    stderr = math.sqrt(float(resid @ resid) / dof / float(((x - x.mean()) ** 2).sum())) if dof > 0 else math.inf
    return ExponentEstimate(float(fit.slope), stderr, (m_min, m_max), sums, float(fit.intercept))


# ---------------------------------------------------------------- slow growth

def _estimated_exponent(phi: PosDefOracle) -> float:
    if phi.declared_exponent is not None:
        return phi.declared_exponent
    return critical_exponent(phi).s_hat


def patterson_theta(phis, sigmas, eps_schedule=None, t_cap: int = 20000,
                    chunk: int = 256) -> SlowGrowthTheta:
    """Greedy breakpoints so each stage's weighted annulus sum reaches n.

    Stage n uses slope eps_n * delta on [t_n, t_{n+1}); t_{n+1} is the first
    integer > t_n + 1 at which the annulus sum over (t_n, t_{n+1}] of
    theta(m) e^{-sigma_n delta m} S_m reaches n, which certifies
    P_theta(phi_n; sigma_n) >= n.
    """
    phis = list(phis)
    sigmas = [float(s) for s in sigmas]
    if len(phis) != len(sigmas):
        raise InputError("phis and sigmas must have the same length")
    if eps_schedule is None:
        eps_schedule = [2.0 / n for n in range(1, len(phis) + 1)]
    eps = [float(e) for e in eps_schedule]
    if len(eps) != len(phis):
        raise InputError("eps_schedule must match phis")
    if any(a < b for a, b in zip(sigmas, sigmas[1:])):
        raise InputError("sigmas must be non-increasing")
    if any(e <= 0 for e in eps) or any(a < b for a, b in zip(eps, eps[1:])):
        raise InputError("eps_schedule must be positive and non-increasing")
    breakpoints, rates, logv, stages = [0.0], [], [0.0], []
    t = 0
    for n, (phi, sigma, e) in enumerate(zip(phis, sigmas, eps), start=1):
        delta = phi.group.delta
        expo = _estimated_exponent(phi)
        if sigma <= expo:
            series = poincare_series(phi, sigma, m_max=64)
            if not series.diverged:
                raise InputError(f"stage {n}: sigma {sigma} below exponent but series not flagged")
            # the undressed series already diverges, so theta stays flat here
            stages.append({"n": n, "sigma": sigma, "eps": 0.0, "t_start": t, "t_end": t,
                           "annulus_sum": math.inf, "certified": True})
            continue
        if not (sigma - e) < expo:
            raise InputError(f"stage {n}: need (sigma - eps) < exponent, got {sigma - e} >= {expo}")
        rate = e * delta
        lt0 = logv[-1]
        target = math.log(n)
        acc = -math.inf
        start = t + 1
        found = None
        while found is None:
            stop = min(start + chunk, t_cap + 1)
            if start >= stop:
                raise ResourceCapError(
                    f"stage {n}: annulus sum {math.exp(acc):.4g} < {n} by t = {t_cap}")
            ms = np.arange(start, stop)
            lsum = phi.log_sphere_sums(stop - 1)[start:]
            lterm = lt0 + rate * (ms - t) - sigma * delta * ms + lsum
            cum = np.logaddexp.accumulate(np.concatenate([[acc], lterm]))[1:]
            hit = np.nonzero((cum >= target) & (ms >= t + 2))[0]
            if len(hit):
                found = int(ms[hit[0]])
                acc = float(cum[hit[0]])
            else:
                acc = float(cum[-1])
                start = stop
        t_next = found
        stages.append({"n": n, "sigma": sigma, "eps": e, "t_start": t, "t_end": t_next,
                       "annulus_sum": math.exp(acc), "certified": acc >= target})
        rates.append(rate)
        breakpoints.append(float(t_next))
        logv.append(lt0 + rate * (t_next - t))
        t = t_next
    return SlowGrowthTheta(breakpoints, rates, logv, stages)


def slow_growth_audit(theta: SlowGrowthTheta, eps: float, u_max: float = 50.0,
                      t_span: float = 200.0, n_grid: int = 101) -> dict:
    """Count grid violations of theta(u + t) <= e^{eps u} theta(t) for t >= T."""
    rates = np.append(theta.rates, 0.0)
    big = np.nonzero(rates > eps)[0]
    T = float(theta.breakpoints[big[-1] + 1]) if len(big) else 0.0
    us = np.linspace(0.0, u_max, n_grid)
    ts = np.linspace(T, T + t_span, n_grid)
    U, Tg = np.meshgrid(us, ts)
    lhs = theta.log(U + Tg)
    rhs = eps * U + theta.log(Tg)
    violations = int(np.sum(lhs > rhs + 1e-12 * np.maximum(1.0, np.abs(rhs))))
    return {"eps": eps, "T": T, "violations": violations, "grid": [n_grid, n_grid],
            "u_max": u_max, "t_span": t_span}


# ---------------------------------------------------------------- double series

def pair_kernel(phi: PosDefOracle, sigma: float, theta: SlowGrowthTheta | None,
                m: int) -> RadialPairKernel:
    delta = phi.group.delta
    a = np.arange(m + 1)
    with np.errstate(divide="ignore"):
        log_phi = np.log(phi.radial_values(2 * m))
    return RadialPairKernel(log_phi, _log_weights(sigma, delta, theta, a), phi.group.q)


def _double_partial_general(phi: PosDefOracle, sigma: float, theta, M: int) -> float:
    """sum_n S_n K(n), K(n) = sum_{g in B_M, |g x| <= M} w(g) w(g x), x in C_n."""
    group = phi.group
    q = group.q
    delta = group.delta
    w = np.exp(_log_weights(sigma, delta, theta, np.arange(M + 1)))
    total = 0.0
    for n in range(2 * M + 1):
        S = phi.sphere_sum(n)
        if S == 0.0:
            continue
        K = 0.0
        for a in range(M + 1):
            # y = g^-1 in C_a with common prefix j with x
            for j in range(min(a, n) + 1):
                if j == a and a <= n:
                    cnt = 1.0
                elif j == 0:
                    cnt = float(group.sphere_count(a)) if n == 0 else float(q) ** a
                elif j < n:
                    cnt = (q - 1) * float(q) ** (a - j - 1)
                else:   # j == n < a
                    cnt = float(q) ** (a - j)
                b = a + n - 2 * j
                if b <= M:
                    K += cnt * w[a] * w[b]
        total += S * K
    return total


def _double_partial(phi, sigma, theta, M):
    if phi.is_radial:
        return pair_kernel(phi, sigma, theta, M).nested(0, 0)
    return _double_partial_general(phi, sigma, theta, M)


def _extrapolated_tail(values: list[float]) -> float:
    """Geometric extrapolation from three equally spaced partial sums."""
    p0, p1, p2 = values
    d1, d2 = p1 - p0, p2 - p1
    if d2 <= 0:
        return 0.0
    if d1 <= 0:
        return math.inf
    r = d2 / d1
    if r >= 1:
        return math.inf
    return d2 * r / (1 - r)


def double_series(phi: PosDefOracle, sigma: float, theta: SlowGrowthTheta | None = None,
                  m_max: int | None = None, tail_frac: float = 1e-12,
                  m_cap: int = MAX_RADIAL_M) -> SeriesValue:
    """P_{theta,2}(phi; sigma) = sum_{g,h} phi(g^-1 h) w(g) w(h), w = theta e^{-sigma delta |.|}.

    With ``m_max`` fixed the truncation is used as given; otherwise it doubles
    until the extrapolated tail drops below ``tail_frac`` of the partial sum.
    """
    group = phi.group
    delta = group.delta
    if not sigma * delta > 0:
        raise InputError(f"sigma must be positive, got {sigma}")
    expo = _estimated_exponent(phi)
    threshold = max(0.5, expo if phi.support_radius is None else 0.0)
    if sigma <= threshold:
        M = m_max or DEFAULT_M
        part = _double_partial(phi, sigma, theta, M) if phi.is_radial or M <= 7 else math.inf
        return SeriesValue(float(part), math.inf, M, True, ["threshold"])
    general_cap = 7 if not phi.is_radial else m_cap
    if not phi.is_radial and phi.sphere_sum_fn is not None:
        general_cap = 40

    def at(M):
        return _double_partial(phi, sigma, theta, M)

    def tail_at(M):
        step = max(1, M // 8)
        vals = [at(M - 2 * step), at(M - step), at(M)]
        return vals[-1], _extrapolated_tail(vals)

    if m_max is not None:
        if m_max > general_cap:
            raise ResourceCapError(f"truncation {m_max} above cap {general_cap} for {phi.name}")
        part, tail = tail_at(m_max) if m_max >= 2 else (at(m_max), math.inf)
        part, tail = float(part), float(tail)
        div = part > DIVERGENCE_CAP
        return SeriesValue(part, tail, m_max, div, ["tail:extrapolated"])
    M = 16
    while True:
        M = min(M, general_cap)
        part, tail = tail_at(M)
        part, tail = float(part), float(tail)
        if part > DIVERGENCE_CAP:
            return SeriesValue(part, math.inf, M, True, ["numeric"])
        if tail <= tail_frac * part or M >= general_cap:
            flags = ["tail:extrapolated"]
            if tail > tail_frac * part:
                flags.append("tail above target")
            return SeriesValue(part, tail, M, False, flags)
        M *= 2


def sphericity_ratio(phi: PosDefOracle, sigma_schedule, theta: SlowGrowthTheta | None = None,
                     c0: float = 0.05, tail_frac: float = 1e-3, m_cap: int = 2048) -> dict:
    """P_theta(phi; sigma) / sqrt(P_{theta,2}(phi; sigma)) along the schedule.

    Both sums use the same truncation, chosen from the single-series tail.
    """
    ratios, truncs = [], []
    for sigma in sigma_schedule:
        M = 16
        while True:
            single = poincare_series(phi, sigma, M, theta)
            if single.diverged:
                raise DegenerateInputError(f"single series diverges at sigma = {sigma}")
            if single.tail_bound <= tail_frac * single.partial or M >= m_cap:
                break
            M = min(2 * M, m_cap)
        if not phi.is_radial:
            M = min(M, 7 if phi.sphere_sum_fn is None else 40)
            single = poincare_series(phi, sigma, M, theta)
        pair = float(_double_partial(phi, sigma, theta, M))
        ratios.append(single.partial / math.sqrt(pair))
        truncs.append(M)
    return {"sigmas": [float(s) for s in sigma_schedule], "ratios": ratios,
            "truncations": truncs, "c0": c0, "spherical": bool(min(ratios) >= c0)}
