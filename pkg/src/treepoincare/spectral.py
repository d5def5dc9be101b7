"""Norm estimators for the regular and positive cyclic representations, and the checks built on them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy import stats

from .boundary import CylinderGrid, density_rep_matrix, prefix_bucket_counts
from .errors import InputError, ResourceCapError
from .group_core import (GroupParams, RadialFunction, SparseGroupFunction, _sphere_transfer_terms,
                         convolve_keys, radial_convolve, sphere_keys)
from .posdef import PosDefOracle, coefficient_sum

__all__ = [
    "SpectralEstimate", "regular_norm", "rep_norm_lower", "transfer_bound_check",
    "lp_transfer_check", "entropy_estimate", "boundary_norm_bound", "rrd_check",
    "xi_bottom", "radial_majorant_norm", "random_probes", "random_positive_function",
]

SPARSE_N_CAP = 8
MONOTONE_TOL = 1e-12


@dataclass
class SpectralEstimate:
    value: float
    lower: float
    upper: float
    uncertainty: float
    methods: list
    iterations: int
    sequence: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"value": self.value, "lower": self.lower, "upper": self.upper,
                "uncertainty": self.uncertainty, "methods": list(self.methods),
                "iterations": self.iterations,
                "sequence": [[int(n), float(v)] for n, v in self.sequence],
                "diagnostics": self.diagnostics}


def xi_bottom(m, k: int = 2) -> np.ndarray:
    """Spherical function at the bottom of the spectrum: (1 + m (q-1)/(q+1)) q^{-m/2}."""
    q = 2 * k - 1
    m = np.asarray(m, dtype=float)
    return (1.0 + m * (q - 1) / (q + 1)) * float(q) ** (-m / 2)


def _radial_majorant(f) -> np.ndarray:
    if isinstance(f, RadialFunction):
        return np.abs(f.coeffs)
    c = np.zeros(f.support_radius + 1)
    for w, v in f.entries.items():
        c[len(w)] = max(c[len(w)], abs(v))
    return c


def radial_majorant_norm(f) -> float:
    """sum_m max_{C_m}|f| |C_m| Xi(m): an upper bound, exact for positive radial f."""
    c = _radial_majorant(f)
    params = GroupParams(f.k)
    counts = np.array([float(params.sphere_count(m)) for m in range(len(c))])
    return float(np.sum(c * counts * xi_bottom(np.arange(len(c)), f.k)))


# ---------------------------------------------------------------- radial powers

def _radial_matrix(coeffs: np.ndarray, L: int, k: int) -> sp.csr_matrix:
    """Convolution by a radial function on radial vectors of length L+1, in l2 coordinates."""
    params = GroupParams(k)
    q = params.q
    R = len(coeffs) - 1
    logc = params.log_sphere_counts(L + R)
    n = np.arange(L + 1)
    rows, cols, vals = [], [], []
    for m, j, case, wgt in _sphere_transfer_terms(R, q):
        fm = coeffs[m]
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
        rows.append(nn)
        cols.append(src)
        vals.append(fm * wgt * np.exp(0.5 * (logc[nn] - logc[src])))
    if not rows:
        return sp.csr_matrix((L + 1, L + 1))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(L + 1, L + 1))


def _dyadic(n_max: int) -> list[int]:
    out, n = [], 1
    while n <= n_max:
        out.append(n)
        n *= 2
    return out


def _radial_power_states(F: RadialFunction, n_max: int):
    """Yield (n, v, log_scale) with F^{2n} delta_e = e^{log_scale} v in l2 coordinates."""
    R = F.radius
    L = max(1, 2 * n_max * R)
    T = _radial_matrix(F.coeffs, L, F.k)
    v = np.zeros(L + 1)
    v[0] = 1.0
    log_scale = 0.0
    checkpoints = set(_dyadic(n_max))
    for step in range(1, 2 * n_max + 1):
        v = T @ v
        top = float(np.abs(v).max())
        if top == 0.0:
            yield from ((n, v, -math.inf) for n in sorted(checkpoints) if 2 * n >= step)
            return
        v /= top
        log_scale += math.log(top)
        if step % 2 == 0 and step // 2 in checkpoints:
            yield step // 2, v, log_scale


def _finish_sequence(seq, upper, methods, iterations, diag) -> SpectralEstimate:
    vals = [v for _, v in seq]
    for a, b in zip(vals[1:], vals[2:]):
        if b < a * (1 - MONOTONE_TOL):
            diag["monotone_violation"] = True
    unc = abs(vals[-1] - vals[-2]) if len(vals) > 1 else 0.0
    value = vals[-1]
    lower = max(vals)
    return SpectralEstimate(value, lower, max(upper, lower), unc, methods, iterations,
                            [(n, v) for n, v in seq], diag)


def _cyclic_letter(f: SparseGroupFunction) -> str | None:
    letters = set()
    for w in f.entries:
        if w and len(set(w)) != 1:
            return None
        letters.update(c.lower() for c in w)
    if len(letters) > 1:
        return None
    return letters.pop() if letters else "a"


def _cyclic_profile(f: SparseGroupFunction, letter: str) -> tuple[np.ndarray, int]:
    """f as a Laurent polynomial in the generator: coefficients and lowest power."""
    r = f.support_radius
    out = np.zeros(2 * r + 1)
    for w, v in f.entries.items():
        p = len(w) if (not w or w[0] == letter) else -len(w)
        out[p + r] += v
    return out, r


def _is_radial(f: SparseGroupFunction) -> bool:
    params = GroupParams(f.k)
    by_len: dict[int, set] = {}
    counts: dict[int, int] = {}
    for w, v in f.entries.items():
        by_len.setdefault(len(w), set()).add(v)
        counts[len(w)] = counts.get(len(w), 0) + 1
    return all(len(vs) == 1 and counts[m] == params.sphere_count(m) for m, vs in by_len.items())


def regular_norm(f, n_max: int = 2048, path: str = "auto") -> SpectralEstimate:
    """||lambda(f)|| from ||(f^* * f)^{*2n}||_2^{1/4n} at dyadic n <= n_max.

    Paths: 'radial' (radial algebra, any n), 'cyclic' (f supported on one cyclic
    subgroup, where the norm equals the one on Z), 'sparse' (key convolution,
    small n only). The upper edge is the radial-majorant value.
    """
    if isinstance(f, SparseGroupFunction) and path in ("auto", "radial") and _is_radial(f):
        f = RadialFunction.radialize(f)
    upper = radial_majorant_norm(f)
    if isinstance(f, RadialFunction):
        if path not in ("auto", "radial"):
            f = f.embed()
        else:
            if not np.any(f.coeffs):
                return SpectralEstimate(0.0, 0.0, 0.0, 0.0, ["radial"], 0)
            F = radial_convolve(f, f)
            if F.radius == 0:
                val = math.sqrt(abs(F.coeffs[0]))
                return SpectralEstimate(val, val, val, 0.0, ["radial", "exact"], 1, [(1, val)])
            seq = []
            for n, v, ls in _radial_power_states(F, n_max):
                seq.append((n, math.exp((ls + math.log(np.linalg.norm(v))) / (4 * n))))
            return _finish_sequence(seq, upper, ["radial", "xi-majorant upper"], 2 * n_max,
                                    {"support_radius": f.radius})
    letter = _cyclic_letter(f)
    if path == "cyclic" or (path == "auto" and letter is not None):
        if letter is None:
            raise InputError("cyclic path needs support in one cyclic subgroup")
        prof, _ = _cyclic_profile(f, letter)
        F = np.convolve(prof[::-1], prof)
        v = np.array([1.0])
        log_scale = 0.0
        seq = []
        checkpoints = set(_dyadic(n_max))
        for step in range(1, 2 * n_max + 1):
            v = np.convolve(F, v)
            top = float(np.abs(v).max())
            v /= top
            log_scale += math.log(top)
            if step % 2 == 0 and step // 2 in checkpoints:
                n = step // 2
                seq.append((n, math.exp((log_scale + math.log(np.linalg.norm(v))) / (4 * n))))
        upper = min(upper, float(np.abs(prof).sum()))
        return _finish_sequence(seq, upper, ["cyclic", "l1 upper"], 2 * n_max, {"letter": letter})
    return _sparse_regular_norm(f, min(n_max, SPARSE_N_CAP), upper)


def _sparse_regular_norm(f: SparseGroupFunction, n_max: int, upper: float) -> SpectralEstimate:
    k = f.k
    kf, vf = f.to_keys()
    ka, va = f.adjoint().to_keys()
    Fk, Fv = convolve_keys(ka, va, kf, vf, k)
    seq = []
    cur_k, cur_v = np.zeros(1, dtype=np.int64), np.ones(1)
    done = 0
    for n in _dyadic(n_max):
        try:
            while done < 2 * n:
                cur_k, cur_v = convolve_keys(Fk, Fv, cur_k, cur_v, k)
                done += 1
        except ResourceCapError:
            break
        seq.append((n, float(np.linalg.norm(cur_v)) ** (1.0 / (4 * n))))
    if not seq:
        raise ResourceCapError("sparse path could not reach n = 1")
    if len(seq) == 1:
        v = seq[0][1]
        return SpectralEstimate(v, v, max(upper, v), 0.0, ["sparse", "xi-majorant upper"], 2,
                                seq, {"sparse_n": 1})
    return _finish_sequence(seq, upper, ["sparse", "xi-majorant upper"], done, {"sparse_n": seq[-1][0]})


# ---------------------------------------------------------------- representation norms

def random_probes(k: int = 2, count: int = 2, seed: int = 0, radius: int = 2) -> list:
    """Seeded random +-1 functions on B_radius."""
    from .group_core import enumerate_ball
    rng = np.random.default_rng(seed)
    words = list(enumerate_ball(radius, k))
    return [SparseGroupFunction(dict(zip(words, rng.choice([-1.0, 1.0], len(words)))), k)
            for _ in range(count)]


def random_positive_function(rng: np.random.Generator, radius: int = 3, k: int = 2,
                             density: float = 0.3) -> SparseGroupFunction:
    from .group_core import enumerate_ball
    words = list(enumerate_ball(radius, k))
    keep = rng.random(len(words)) < density
    keep[rng.integers(len(words))] = True
    vals = rng.random(len(words)) + 0.05
    return SparseGroupFunction({w: v for w, v, ok in zip(words, vals, keep) if ok}, k)


def _phi_weights_l2(phi: PosDefOracle, L: int) -> np.ndarray:
    """log(S_m / sqrt|C_m|): pairing weights against l2 coordinates."""
    return phi.log_sphere_sums(L) - 0.5 * phi.group.log_sphere_counts(L)


def _keys_of_radial(F: RadialFunction, cap: int = 14):
    if F.radius > cap:
        raise ResourceCapError(f"radius {F.radius} above enumeration cap {cap}")
    ks, vs = [], []
    for m, c in enumerate(F.coeffs):
        if c != 0.0:
            key = sphere_keys(m, F.k)
            ks.append(key)
            vs.append(np.full(len(key), c))
    return np.concatenate(ks), np.concatenate(vs)


def _probe_value(phi, Fk, Fv, h: SparseGroupFunction, k: int) -> float | None:
    """(pi(F) pi(h)1, pi(h)1) / ||pi(h)1||^2 for F given on keys."""
    hk, hv = h.to_keys()
    ak, av = h.adjoint().to_keys()
    try:
        gk, gv = convolve_keys(ak, av, Fk, Fv, k)
        gk, gv = convolve_keys(gk, gv, hk, hv, k)
        nk, nv = convolve_keys(ak, av, hk, hv, k)
    except ResourceCapError:
        return None
    norm2 = float(np.dot(nv, phi.eval_keys(nk)))
    if norm2 <= 0:
        return None
    return float(np.dot(gv, phi.eval_keys(gk))) / norm2


def rep_norm_lower(phi: PosDefOracle, f, n_max: int = 256, probes=None) -> SpectralEstimate:
    """Certified lower bound for ||pi_phi(f)|| from coefficient sums.

    Every term ((pi(F^{2n}) v, v) / ||v||^2)^{1/4n}, F = f^* f, and |(pi(f)1, 1)|
    is below the norm; the reported lower edge is their maximum.
    """
    k = f.k
    first = abs(coefficient_sum(phi, f))
    seq = []
    methods = ["coefficient"]
    diag = {"first_coefficient": first}
    if isinstance(f, SparseGroupFunction) and _is_radial(f):
        f = RadialFunction.radialize(f)
    if isinstance(f, RadialFunction) and f.radius > 0:
        F = radial_convolve(f, f)
        L = 2 * n_max * F.radius
        wl = _phi_weights_l2(phi, L)
        methods.append("radial powers")
        for n, v, ls in _radial_power_states(F, n_max):
            with np.errstate(divide="ignore"):
                lt = np.log(np.abs(v)) + wl[: len(v)]
            ok = np.isfinite(lt)
            if not ok.any():
                continue
            top = float(lt[ok].max())
            total = float(np.sum(np.sign(v[ok]) * np.exp(lt[ok] - top)))
            if total > 0:
                seq.append((n, math.exp((ls + top + math.log(total)) / (4 * n))))
        Fkeys = None
    else:
        fs = f.embed() if isinstance(f, RadialFunction) else f
        kf, vf = fs.to_keys()
        ka, va = fs.adjoint().to_keys()
        Fk, Fv = convolve_keys(ka, va, kf, vf, k)
        try:
            Gk, Gv = convolve_keys(Fk, Fv, Fk, Fv, k)
            val = float(np.dot(Gv, phi.eval_keys(Gk)))
            if val > 0:
                seq.append((1, val ** 0.25))
            methods.append("sparse n=1")
        except ResourceCapError:
            diag["sparse"] = "cap"
        Fkeys = (Fk, Fv)
    probe_vals = []
    for h in probes or []:
        if Fkeys is None:
            Fkeys = _keys_of_radial(radial_convolve(f, f)) if isinstance(f, RadialFunction) else None
        Gk, Gv = convolve_keys(*Fkeys, *Fkeys, k)
        pv = _probe_value(phi, Gk, Gv, h, k)
        if pv is not None and pv > 0:
            probe_vals.append(pv ** 0.25)
    if probe_vals:
        methods.append("probes n=1")
        diag["probe_values"] = probe_vals
    cands = [first] + [v for _, v in seq] + probe_vals
    lower = max(cands)
    value = seq[-1][1] if seq else first
    value = max(value, first)
    unc = abs(seq[-1][1] - seq[-2][1]) if len(seq) > 1 else 0.0
    upper = f.l1_norm()
    return SpectralEstimate(value, lower, max(upper, lower), unc, methods, 2 * n_max if seq else 0,
                            seq, diag)


# ---------------------------------------------------------------- inequality checks

def _exponent_nats(phi: PosDefOracle) -> float:
    from .poincare import _estimated_exponent
    return _estimated_exponent(phi) * phi.group.delta


def transfer_bound_check(phi: PosDefOracle, f, n_max: int = 256,
                         lower: SpectralEstimate | None = None,
                         regular: SpectralEstimate | None = None) -> dict:
    """rep_norm_lower <= e^{delta(phi) r(f) / 2} ||lambda(f)|| up to combined uncertainty."""
    lower = lower or rep_norm_lower(phi, f, n_max)
    regular = regular or regular_norm(f, n_max)
    r = f.radius if isinstance(f, RadialFunction) else f.support_radius
    factor = math.exp(0.5 * _exponent_nats(phi) * r)
    bound = factor * regular.upper
    unc = lower.uncertainty + factor * regular.uncertainty
    margin = bound - lower.lower
    return {"phi": phi.name, "radius": r, "lower": lower.lower, "regular_upper": regular.upper,
            "factor": factor, "bound": bound, "margin": margin, "uncertainty": unc,
            "holds": bool(margin >= -unc)}


def lp_transfer_check(phi: PosDefOracle, f, p: float, n_max: int = 256) -> dict:
    """rep_norm_lower <= e^{((p-2)/2p) delta r(f)} ||lambda(f)|| for phi in l^{p+eps}."""
    if phi.lp_index is None:
        raise InputError(f"{phi.name} declares no l^p integrability")
    if p < 2 or p + 1e-12 < phi.lp_index:
        raise InputError(f"{phi.name} is only in l^({phi.lp_index}+eps); p = {p} not allowed")
    lower = rep_norm_lower(phi, f, n_max)
    regular = regular_norm(f, n_max)
    r = f.radius if isinstance(f, RadialFunction) else f.support_radius
    delta = phi.group.delta
    factor = math.exp((p - 2) / (2 * p) * delta * r)
    general = math.exp(0.5 * _exponent_nats(phi) * r)
    bound = factor * regular.upper
    unc = lower.uncertainty + factor * regular.uncertainty
    margin = bound - lower.lower
    return {"phi": phi.name, "p": p, "radius": r, "lower": lower.lower,
            "regular_upper": regular.upper, "factor": factor, "general_factor": general,
            "bound": bound, "margin": margin, "uncertainty": unc,
            "tighter_than_general": bool(factor < general), "holds": bool(margin >= -unc)}


def _fit_rate(rs, logs) -> tuple[float, float]:
    """Fit log N_r = a - h r + b log(r + 1); returns (h, residual rms)."""
    rs = np.asarray(rs, dtype=float)
    A = np.column_stack([np.ones_like(rs), -rs, np.log(rs + 1)])
    coef, *_ = np.linalg.lstsq(A, np.asarray(logs), rcond=None)
    resid = np.asarray(logs) - A @ coef
    return float(coef[1]), float(np.sqrt(np.mean(resid ** 2)))


def entropy_estimate(phi: PosDefOracle, r_range=range(2, 13), n_max: int = 64) -> dict:
    """Bracket for h(pi) = -lim (1/r) log ||pi(Avr_r)|| from upper and lower norm bounds."""
    k = phi.k
    delta = phi.group.delta
    expo = _exponent_nats(phi)
    rows = []
    for r in r_range:
        avr = RadialFunction.ball_average(r, k)
        low = rep_norm_lower(phi, avr, n_max)
        reg = radial_majorant_norm(avr)      # exact for positive radial functions
        chain = {"transfer": math.exp(0.5 * expo * r) * reg}
        if phi.lp_index is not None and phi.lp_index >= 2:
            chain["lp"] = math.exp((phi.lp_index - 2) / (2 * phi.lp_index) * delta * r) * reg
        best = min(chain, key=chain.get)
        rows.append({"r": r, "lower_norm": low.lower, "chain_norm": chain[best],
                     "chain_method": best, "upper_norm": min(1.0, chain[best])})
    rs = [row["r"] for row in rows]
    if all(abs(row["lower_norm"] - 1.0) < 1e-12 for row in rows):
        # ||pi(Avr_r)|| <= ||Avr_r||_1 = 1, so every norm is exactly 1
        h_lo = h_hi = 0.0
        res = [0.0, 0.0]
    else:
        # lower norms bound the rate from above, the certified transfer bound from below
        h_hi, r1 = _fit_rate(rs, [math.log(row["lower_norm"]) for row in rows])
        h_lo, r2 = _fit_rate(rs, [math.log(row["chain_norm"]) for row in rows])
        res = [r2, r1]
    predicted = delta - max(expo, 0.5 * delta)
    return {"phi": phi.name, "rows": rows, "h_lower": min(h_lo, h_hi), "h_upper": max(h_lo, h_hi),
            "predicted": predicted, "residuals": res, "n_max": n_max}


def _radial_density_sup(coeffs, s: float, k: int) -> float:
    """pi_s(f)1 for radial f, constant over the boundary."""
    q = 2 * k - 1
    total = 0.0
    for m, c in enumerate(coeffs):
        if c == 0.0:
            continue
        total += c * sum(cnt * float(q) ** (-s * (m - 2 * j)) for j, cnt in prefix_bucket_counts(m, k))
    return total


def boundary_norm_bound(s: float, f, depth: int = 6, form: np.ndarray | None = None,
                        k: int | None = None) -> dict:
    """sup-norm of pi_s(f)1 and, with a PSD form, the induced operator norm of pi_s(f)."""
    k = f.k if k is None else k
    if isinstance(f, RadialFunction):
        sup = abs(_radial_density_sup(f.coeffs, s, k))
        fs = None
    else:
        fs = f
        sup = None
    out = {"s": s, "depth": depth}
    need_matrix = form is not None or sup is None
    if need_matrix:
        fs = fs if fs is not None else f.embed()
        grid = CylinderGrid(depth, k)
        P = density_rep_matrix(fs, s, depth, grid).matrix
        if sup is None:
            sup = float(np.abs(P @ np.ones(len(grid))).max())
        if form is not None:
            Q = np.asarray(form, dtype=float)
            Q = 0.5 * (Q + Q.T)
            w = la.eigvalsh(Q)
            if w[0] < -1e-8 * abs(w).max():
                raise InputError("supplied boundary form is not positive semidefinite")
            Pd = P.toarray()
            top = la.eigh(Pd.T @ Q @ Pd, Q, eigvals_only=True)[-1]
            out["eigen_norm"] = math.sqrt(max(top, 0.0))
            out["eigen_le_sup"] = bool(out["eigen_norm"] <= sup * (1 + 1e-9))
    out["sup_norm"] = sup
    return out


def rrd_check(r_range=range(2, 11), k: int = 2, random_radius: int = 6, seed: int = 0,
              m_max: float = 3.0) -> dict:
    """Fit ||lambda(1_{B_r})|| / ||1_{B_r}||_2 = C r^m and test a random radial profile."""
    rs = np.array(list(r_range), dtype=float)
    ratios = np.array([radial_majorant_norm(RadialFunction.ball(int(r), k)) /
                       RadialFunction.ball(int(r), k).l2_norm() for r in rs])
    fit = stats.linregress(np.log(rs), np.log(ratios))
    C, m = math.exp(fit.intercept), float(fit.slope)
    resid = np.log(ratios) - (fit.intercept + fit.slope * np.log(rs))
    slack = float(np.abs(resid).max())
    rng = np.random.default_rng(seed)
    prof = RadialFunction(rng.random(random_radius + 1), k)
    rand_ratio = radial_majorant_norm(prof) / prof.l2_norm()
    rand_bound = C * random_radius ** m * math.exp(slack)
    return {"r": rs.tolist(), "ratios": ratios.tolist(), "C": C, "m": m,
            "r_squared": float(fit.rvalue ** 2), "max_residual": slack,
            "random_ratio": rand_ratio, "random_bound": rand_bound,
            "random_holds": bool(rand_ratio <= rand_bound),
            "verdict": bool(m <= m_max and fit.rvalue ** 2 >= 0.98)}
