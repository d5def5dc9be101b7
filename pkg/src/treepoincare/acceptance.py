"""The fourteen numeric acceptance checks, shared by the test suite and ``verify-all``.

Each check returns a ``CheckResult``; ``details`` holds only deterministic
numbers so reports are byte-stable across runs with the same seed.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import logsumexp

from .boundary import ball_density_sum, busemann_average, shadow
from .gns import (boundary_form, conformal_check, fusion_check, knapp_stein_matrix,
                  pair_measure, sigma_schedule)
from .group_core import F2, RadialFunction, SparseGroupFunction, enumerate_sphere
from .poincare import (critical_exponent, double_series, patterson_theta, poincare_series,
                       slow_growth_audit)
from .posdef import make_oracle
from .spectral import (boundary_norm_bound, entropy_estimate, lp_transfer_check,
                       random_positive_function, regular_norm, rrd_check, transfer_bound_check)

__all__ = ["CheckResult", "CHECKS", "run_check", "run_all"]


@dataclass
class CheckResult:
    number: int
    title: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_record(self) -> dict:
        return {"number": self.number, "title": self.title, "passed": self.passed,
                "details": self.details}

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.number:2d}. {self.title} ({self.seconds:.1f}s)"


def _bracket(vals):
    vals = np.asarray(vals, dtype=float)
    return float(vals.min()), float(vals.max()), float(vals.max() / vals.min())


def check_exponents(seed: int = 0) -> tuple[bool, dict]:
    t0 = time.perf_counter()
    est = {name: critical_exponent(make_oracle(kind, **kw), (2, 12))
           for name, kind, kw in [("trivial", "trivial", {}), ("dirac", "dirac", {}),
                                  ("cyclic_a", "subgroup", {"generator": "a"}),
                                  ("haagerup_0.75", "haagerup", {"s": 0.75})]}
    elapsed = time.perf_counter() - t0
    ok = (abs(est["trivial"].s_hat - 1.0) <= 1e-10 and est["dirac"].s_hat == 0.0
          and abs(est["cyclic_a"].s_hat) <= 0.02
          and abs(est["haagerup_0.75"].s_hat - 0.75) <= 1e-10 and elapsed < 5.0)
    return ok, {name: {"s_hat": e.s_hat, "stderr": e.stderr} for name, e in est.items()}


def check_series(seed: int = 0) -> tuple[bool, dict]:
    target = 5.0 / 3.0
    p = poincare_series(make_oracle("trivial"), 2.0, 40)
    p2 = double_series(make_oracle("dirac"), 1.0)
    ok1 = abs(p.partial - target) <= 1e-9 and abs(p.upper - target) <= 1e-9
    ok2 = abs(p2.partial - target) <= 1e-9 and abs(p2.upper - target) <= 1e-9
    return ok1 and ok2, {"P(1;2)": p.to_record(), "P2(dirac;1)": p2.to_record()}


def check_shadows(seed: int = 0) -> tuple[bool, dict]:
    q, k = F2.q, F2.k
    exact, worst, count = True, 0.0, 0
    for n in range(1, 11):
        for g in enumerate_sphere(n):
            cyls = shadow(g, 0.5)
            frac = sum(Fraction(1, 2 * k * q ** (c.depth - 1)) for c in cyls) * q ** n
            exact &= frac == Fraction(3, 4)
            mass = sum(c.mass for c in cyls)
            worst = max(worst, abs(mass * math.exp(F2.delta * n) - 0.75))
            count += 1
    return exact and worst < 1e-12, {"words": count, "max_float_error": worst, "exact": exact}


def check_ball_sums(seed: int = 0) -> tuple[bool, dict]:
    d = F2.delta
    r75 = [ball_density_sum(L, 0.75, L + 1) * math.exp(-0.75 * d * L) for L in range(4, 13)]
    r50 = [ball_density_sum(L, 0.5, L + 1) / (math.exp(d * L / 2) * (L + 1)) for L in range(4, 13)]
    b75, b50 = _bracket(r75), _bracket(r50)
    return b75[2] <= 4 and b50[2] <= 4, {"s=0.75": list(b75), "s=0.5": list(b50)}


def check_theta(seed: int = 0) -> tuple[bool, dict]:
    one = make_oracle("trivial")
    sigmas = [1 + 1 / n for n in range(1, 9)]
    theta = patterson_theta([one] * 8, sigmas)
    audit = slow_growth_audit(theta, 0.05)
    stage_sums = []
    for n, st in enumerate(theta.stages, start=1):
        sv = poincare_series(one, sigmas[n - 1], int(st["t_end"]), theta)
        stage_sums.append(sv.partial)
    ok = audit["violations"] == 0 and all(v >= n for n, v in enumerate(stage_sums, start=1))
    return ok, {"breakpoints": theta.breakpoints.tolist(), "violations": audit["violations"],
                "T": audit["T"], "stage_sums": stage_sums}


def _product_block_error(pm) -> float:
    """|B(f) - mu(f)^2| / mu(f)^2 for a fixed f, with mu summed directly over spheres."""
    delta, q, k = pm.phi.group.delta, pm.phi.group.q, pm.phi.k
    M, N = pm.truncation_m, pm.depth
    a = np.arange(M + 1)
    log_w = -pm.sigma * delta * a
    log_counts = np.where(a == 0, 0.0, math.log(2 * k) + (a - 1) * math.log(q))
    log_P = logsumexp(log_counts + log_w)
    log_cyl = logsumexp((a[N:] - N) * math.log(q) + log_w[N:])   # one depth-N cylinder
    f = np.cos(np.arange(len(pm.grid)))
    mu_f = float(np.sum(f)) * math.exp(log_cyl - log_P)
    return abs(boundary_form(pm, f) - mu_f ** 2) / mu_f ** 2


def check_gns(seed: int = 0) -> tuple[bool, dict]:
    one = make_oracle("trivial")
    prod_err = [_product_block_error(pair_measure(one, s, depth=4)) for s in sigma_schedule(1.0)]
    h = make_oracle("haagerup", s=0.75)
    interior, conf = [], []
    for s in sigma_schedule(0.75):
        pm = pair_measure(h, s, depth=4)
        interior.append(pm.interior_mass)
        conf.append(conformal_check(pm, "a"))
    dec = all(b < a for a, b in zip(interior, interior[1:])) and all(b < a for a, b in zip(conf, conf[1:]))
    ok = max(prod_err) <= 1e-12 and dec and conf[-1] <= 0.25
    return ok, {"product_rel_error": prod_err, "interior": interior, "conformal": conf}


def check_knapp_stein(seed: int = 0) -> tuple[bool, dict]:
    out = {}
    ok = True
    for s in (0.6, 0.75, 0.9, 1.0):
        rel = knapp_stein_matrix(s, 6).relative_eigenvalues()
        out[str(s)] = {"min_relative": float(rel[0]), "second_relative": float(rel[-2])}
        ok &= rel[0] >= -1e-8
    ok &= out["1.0"]["second_relative"] <= 1e-10
    return bool(ok), out


def check_harish_chandra(seed: int = 0) -> tuple[bool, dict]:
    d = F2.delta
    ratios = [busemann_average(0.75, m) * math.exp(0.25 * d * m) for m in range(13)]
    b = _bracket(ratios)
    fus = fusion_check(0.8, 0.9, 0.7)
    return b[2] <= 10 and fus["ratio"] <= 10, {"c_s": list(b), "fusion": [fus["c"], fus["C"], fus["ratio"]]}


def check_kesten(seed: int = 0) -> tuple[bool, dict]:
    t0 = time.perf_counter()
    a = regular_norm(RadialFunction.sphere(1), 2048)
    b = regular_norm(SparseGroupFunction({"a": 1.0, "A": 1.0}), 2048)
    elapsed = time.perf_counter() - t0
    ea = abs(a.value - 2 * math.sqrt(3)) / (2 * math.sqrt(3))
    eb = abs(b.value - 2.0) / 2.0
    return ea <= 0.01 and eb <= 0.02 and elapsed < 120, {
        "sphere": a.value, "sphere_rel_error": ea, "cyclic": b.value, "cyclic_rel_error": eb}


def check_transfer_fuzz(seed: int = 0, count: int = 100, threads: int = 1) -> tuple[bool, dict]:
    oracles = [make_oracle("dirac"), make_oracle("haagerup", s=0.6),
               make_oracle("haagerup", s=0.9), make_oracle("subgroup", generator="a")]
    rng = np.random.default_rng(seed)
    funcs = [random_positive_function(rng, 3) for _ in range(count)]

    def one(f):
        reg = regular_norm(f, 8)
        return [transfer_bound_check(p, f, regular=reg) for p in oracles]

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(one, funcs))
    else:
        results = [one(f) for f in funcs]
    flat = [r for rs in results for r in rs]
    viol = sum(not r["holds"] for r in flat)
    return viol == 0, {"cases": len(flat), "violations": viol,
                       "min_margin": min(r["margin"] for r in flat)}


def check_lp_transfer(seed: int = 0) -> tuple[bool, dict]:
    f = RadialFunction.ball(2)
    cases = [("dirac", make_oracle("dirac"), 2.0), ("haagerup_0.75", make_oracle("haagerup", s=0.75), 4.0),
             ("haagerup_0.6", make_oracle("haagerup", s=0.6), 2.5)]
    out, ok = {}, True
    for name, phi, p in cases:
        r = lp_transfer_check(phi, f, p)
        out[name] = {"margin": r["margin"], "bound": r["bound"], "lower": r["lower"],
                     "tighter": r["tighter_than_general"]}
        ok &= r["holds"]
    ok &= out["haagerup_0.75"]["margin"] > 0 and out["haagerup_0.75"]["tighter"]
    return bool(ok), out


def _contains(lo, hi, target, rel):
    return lo * (1 - rel) <= target <= hi * (1 + rel)


def check_entropy(seed: int = 0) -> tuple[bool, dict]:
    d = F2.delta
    triv = entropy_estimate(make_oracle("trivial"))
    dirac = entropy_estimate(make_oracle("dirac"))
    haag = entropy_estimate(make_oracle("haagerup", s=0.75))
    Ls = np.arange(4, 11)
    logs = [math.log(boundary_norm_bound(0.75, RadialFunction.ball_average(int(L)))["sup_norm"]) for L in Ls]
    slope = float(np.polyfit(Ls, logs, 1)[0])
    slope_err = abs(slope + 0.25 * d) / (0.25 * d)
    ok = (triv["h_lower"] == 0.0 and triv["h_upper"] == 0.0
          and _contains(dirac["h_lower"], dirac["h_upper"], d / 2, 0.10)
          and _contains(haag["h_lower"], haag["h_upper"], 0.25 * d, 0.15)
          and slope_err <= 0.05)
    return ok, {"trivial": [triv["h_lower"], triv["h_upper"]],
                "dirac": [dirac["h_lower"], dirac["h_upper"]],
                "haagerup_0.75": [haag["h_lower"], haag["h_upper"]],
                "boundary_slope": slope, "boundary_slope_rel_error": slope_err}


def check_rrd(seed: int = 0) -> tuple[bool, dict]:
    r = rrd_check(seed=seed)
    return r["m"] <= 1.5 and r["r_squared"] >= 0.98, {"C": r["C"], "m": r["m"],
                                                       "r_squared": r["r_squared"]}


def check_critical(seed: int = 0) -> tuple[bool, dict]:
    one = make_oracle("trivial")
    rng = np.random.default_rng(seed)
    errs = []
    for s in sigma_schedule(1.0):
        pm = pair_measure(one, s, depth=4)
        f = rng.standard_normal(len(pm.grid))
        target = float(f @ pm.grid.masses) ** 2
        errs.append(abs(boundary_form(pm, f, normalize=True) - target))
    return max(errs) <= 1e-12, {"abs_errors": errs}


CHECKS = [
    (1, "growth and exponents", check_exponents),
    (2, "series closed forms", check_series),
    (3, "shadow lemma constant", check_shadows),
    (4, "ball density sums", check_ball_sums),
    (5, "slow-growth weight", check_theta),
    (6, "pair limit measures", check_gns),
    (7, "Knapp-Stein positivity", check_knapp_stein),
    (8, "Harish-Chandra brackets", check_harish_chandra),
    (9, "Kesten norms", check_kesten),
    (10, "transfer inequality fuzz", check_transfer_fuzz),
    (11, "l^p transfer inequality", check_lp_transfer),
    (12, "entropy brackets", check_entropy),
    (13, "radial rapid decay", check_rrd),
    (14, "critical-case factorization", check_critical),
]


def run_check(number: int, seed: int = 0, threads: int = 1) -> CheckResult:
    num, title, fn = CHECKS[number - 1]
    t0 = time.perf_counter()
    if fn is check_transfer_fuzz:
        ok, details = fn(seed, threads=threads)
    else:
        ok, details = fn(seed)
    return CheckResult(num, title, bool(ok), details, time.perf_counter() - t0)


def run_all(seed: int = 0, threads: int = 1, only=None) -> list[CheckResult]:
    numbers = list(only) if only else [n for n, _, _ in CHECKS]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(lambda n: run_check(n, seed, 1), numbers))
    return [run_check(n, seed, 1) for n in numbers]
