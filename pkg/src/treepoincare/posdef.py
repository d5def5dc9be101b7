"""Positive-definite function oracles and Gram-matrix certification."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .boundary import busemann_average
from .errors import InputError, OracleValidationError, ResourceCapError
from .group_core import (GroupParams, RadialFunction, SparseGroupFunction, ball_keys,
                         inverse, key_lengths, keys_inverse, keys_multiply, reduce,
                         sphere_keys, word_to_key, _powers)

log = logging.getLogger(__name__)

__all__ = ["PosDefOracle", "make_oracle", "psd_check", "PsdCertificate",
           "coefficient_sum", "load_table_oracle", "validate_table", "KINDS",
           "PSD_DIM_CAP"]

KINDS = ("trivial", "dirac", "subgroup", "haagerup", "harish_chandra", "table")
PSD_DIM_CAP = 500
ENUM_SPHERE_CAP = 14


@dataclass
class PosDefOracle:
    """A named positive-definite function on F_k.

    ``envelope`` is (amp, rate): sphere sums obey S_m <= amp * exp(rate * delta * m)
    for m >= 1. ``lp_index`` is p when phi lies in l^{p+eps} for every eps > 0.
    """
    name: str
    kind: str
    k: int
    params: dict
    declared_exponent: float | None
    envelope: tuple[float, float] | None = None
    lp_index: float | None = None
    support_radius: int | None = None
    radial: Callable[[np.ndarray], np.ndarray] | None = None
    keyed: Callable[[np.ndarray], np.ndarray] | None = None
    sphere_sum_fn: Callable[[int], float] | None = None
    warnings: list = field(default_factory=list)

    @property
    def group(self) -> GroupParams:
        return GroupParams(self.k)

    @property
    def is_radial(self) -> bool:
        return self.radial is not None

    def radial_values(self, m_max: int) -> np.ndarray:
        if self.radial is None:
            raise InputError(f"oracle {self.name} is not radial")
        return np.asarray(self.radial(np.arange(m_max + 1)), dtype=float)

    def eval_keys(self, keys: np.ndarray) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        if self.radial is not None:
            return np.asarray(self.radial(key_lengths(keys, self.k)), dtype=float)
        return self.keyed(keys)

    def __call__(self, w: str) -> float:
        w = reduce(w, self.k)
        if self.radial is not None:
            return float(self.radial(np.array([len(w)]))[0])
        return float(self.keyed(np.array([word_to_key(w, self.k)], dtype=np.int64))[0])

    def sphere_sum(self, m: int) -> float:
        """sum over |g| = m of phi(g)."""
        if self.support_radius is not None and m > self.support_radius:
            return 0.0
        if self.radial is not None:
            return float(self.group.sphere_count(m)) * float(self.radial(np.array([m]))[0])
        if self.sphere_sum_fn is not None:
            return float(self.sphere_sum_fn(m))
        return float(self.eval_keys(sphere_keys(m, self.k, cap=ENUM_SPHERE_CAP)).sum())

    def log_sphere_sums(self, m_max: int) -> np.ndarray:
        """log S_m for m = 0..m_max (-inf where S_m = 0); radial oracles stay finite far out."""
        if self.radial is not None:
            vals = self.radial_values(m_max)
            with np.errstate(divide="ignore"):
                out = self.group.log_sphere_counts(m_max) + np.log(vals)
            if self.support_radius is not None:
                out[self.support_radius + 1:] = -np.inf
            return out
        with np.errstate(divide="ignore"):
            return np.log(np.array([self.sphere_sum(m) for m in range(m_max + 1)]))

    def envelope_or_default(self) -> tuple[float, float]:
        if self.envelope is not None:
            return self.envelope
        # phi <= phi(e) = 1 for a normalized positive-definite function
        return 2 * self.k / self.group.q, 1.0

    def to_record(self) -> dict:
        return {"name": self.name, "kind": self.kind, "k": self.k,
                "params": {key: self.params[key] for key in sorted(self.params)
                           if isinstance(self.params[key], (int, float, str))},
                "declared_exponent": self.declared_exponent}


def _repunit(d: int, lens: np.ndarray, base: int) -> np.ndarray:
    pw = base ** lens.astype(np.int64)
    return d * (pw - 1) // (base - 1)


def _cyclic_subgroup(k: int, letter: str) -> PosDefOracle:
    code = word_to_key(letter, k)          # digit of the generator
    inv_code = word_to_key(inverse(letter), k)
    base = 2 * k + 1

    def keyed(keys):
        lens = key_lengths(keys, k)
        hit = (keys == _repunit(code, lens, base)) | (keys == _repunit(inv_code, lens, base))
        return hit.astype(float)

    return PosDefOracle(
        name=f"subgroup<{letter}>", kind="subgroup", k=k,
        params={"generator": letter}, declared_exponent=0.0,
        envelope=(2.0, 0.0), lp_index=None, keyed=keyed,
        sphere_sum_fn=lambda m: 1.0 if m == 0 else 2.0)


def _kernel_mod(k: int, modulus: int, weights: tuple[int, ...]) -> PosDefOracle:
    """Indicator of ker(F_k -> Z/n), letter a_i -> weights[i]."""
    if modulus < 1 or len(weights) != k:
        raise InputError("kernel subgroup needs modulus >= 1 and one weight per generator")
    params = GroupParams(k)
    pw = _powers(params)
    wt = np.zeros(2 * k + 1, dtype=np.int64)
    for i, w in enumerate(weights):
        wt[2 * i + 1], wt[2 * i + 2] = w, -w

    def keyed(keys):
        lens = key_lengths(keys, k)
        tot = np.zeros(keys.shape, dtype=np.int64)
        for t in range(int(lens.max(initial=0))):
            d = np.where(t < lens, (keys // pw[t]) % params.base, 0)
            tot += wt[d]
        return (tot % modulus == 0).astype(float)

    def sphere_sum(m):
        if m == 0:
            return 1.0
        # counts[c, r]: reduced words ending in letter code c with character r
        counts = np.zeros((2 * k, modulus))
        for c in range(2 * k):
            counts[c, wt[c + 1] % modulus] += 1
        for _ in range(m - 1):
            nxt = np.zeros_like(counts)
            for c in range(2 * k):
                for c_prev in range(2 * k):
                    if c_prev != c ^ 1:
                        nxt[c] += np.roll(counts[c_prev], wt[c + 1] % modulus)
            counts = nxt
        return float(counts[:, 0].sum())

    return PosDefOracle(
        name=f"kernel(mod {modulus})", kind="subgroup", k=k,
        params={"modulus": modulus, "weights": ",".join(map(str, weights))},
        declared_exponent=1.0, envelope=None, keyed=keyed, sphere_sum_fn=sphere_sum)


def _predicate_subgroup(k: int, member: Callable[[str], bool], label: str) -> PosDefOracle:
    from .group_core import keys_to_words

    def keyed(keys):
        return np.array([1.0 if member(w) else 0.0 for w in keys_to_words(keys, k)])

    return PosDefOracle(name=f"subgroup[{label}]", kind="subgroup", k=k,
                        params={"predicate": label}, declared_exponent=None, keyed=keyed)


def make_oracle(kind: str, k: int = 2, **params) -> PosDefOracle:
    """Build a shipped oracle.

    kinds: trivial, dirac, subgroup (generator=letter | modulus+weights |
    member=callable), haagerup (t=... or s=...), harish_chandra (s=...),
    table (values={word: value}).
    """
    group = GroupParams(k)
    delta, q = group.delta, group.q
    if kind == "trivial":
        return PosDefOracle("trivial", kind, k, {}, 1.0, (2 * k / q, 1.0), None, None,
                            radial=lambda m: np.ones(np.shape(m)))
    if kind == "dirac":
        return PosDefOracle("dirac", kind, k, {}, 0.0, (0.0, 0.0), 2.0, 0,
                            radial=lambda m: (np.asarray(m) == 0).astype(float))
    if kind == "subgroup":
        if "member" in params:
            return _predicate_subgroup(k, params["member"], params.get("label", "predicate"))
        if "modulus" in params:
            return _kernel_mod(k, int(params["modulus"]), tuple(int(x) for x in params["weights"]))
        letter = params.get("generator", "a")
        if len(letter) != 1 or reduce(letter, k) != letter:
            raise InputError(f"bad generator {letter!r}")
        return _cyclic_subgroup(k, letter)
    if kind == "haagerup":
        if "t" in params:
            t = float(params["t"])
        elif "s" in params:
            t = (1.0 - float(params["s"])) * delta
        else:
            raise InputError("haagerup needs t or s")
        if not t > 0:
            raise InputError(f"haagerup needs t > 0, got {t}")
        s = max(0.0, 1.0 - t / delta)
        return PosDefOracle(f"haagerup(t={t:.6g})", kind, k, {"t": t}, s,
                            (2 * k / q, 1.0 - t / delta), delta / t, None,
                            radial=lambda m, t=t: np.exp(-t * np.asarray(m, dtype=float)))
    if kind == "harish_chandra":
        s = float(params.get("s", float("nan")))
        if not 0.5 <= s <= 1.0:
            raise InputError(f"harish_chandra needs s in [1/2, 1], got {s}")
        env = None
        if s > 0.5:
            env = (2 * k / q / (1.0 - float(q) ** (-(2 * s - 1))), s)

        def radial(m, s=s):
            m = np.asarray(m)
            return np.array([busemann_average(s, int(x), k) for x in m.ravel()]).reshape(m.shape)

        lp = 1.0 / (1.0 - s) if s < 1.0 else None
        return PosDefOracle(f"harish_chandra(s={s:.6g})", kind, k, {"s": s}, s, env, lp, None,
                            radial=radial)
    if kind == "table":
        values = params.get("values")
        if not isinstance(values, dict):
            raise InputError("table oracle needs values={word: value}")
        return _table_oracle(values, k, params.get("source", "inline"))
    raise InputError(f"unknown oracle kind {kind!r}")


def _table_oracle(values: dict, k: int, source: str) -> PosDefOracle:
    clean = {}
    for w, v in values.items():
        rw = reduce(w, k)
        if rw != w:
            raise OracleValidationError(f"table word {w!r} is not reduced")
        v = float(v)
        if not math.isfinite(v):
            raise OracleValidationError(f"table value at {w!r} is not finite")
        clean[w] = v
    radius = max((len(w) for w in clean), default=0)
    keys = np.array(sorted(word_to_key(w, k) for w in clean), dtype=np.int64)
    by_key = {word_to_key(w, k): v for w, v in clean.items()}
    vals = np.array([by_key[x] for x in keys.tolist()])
    oracle = PosDefOracle(f"table[{source}]", "table", k, {"source": source, "radius": radius},
                          None, None, None, radius)

    def keyed(q_keys):
        q_keys = np.asarray(q_keys, dtype=np.int64)
        idx = np.searchsorted(keys, q_keys)
        idx = np.minimum(idx, max(len(keys) - 1, 0))
        hit = (keys[idx] == q_keys) if len(keys) else np.zeros(q_keys.shape, bool)
        outside = key_lengths(q_keys, k) > radius
        if outside.any() and "evaluated outside table ball" not in oracle.warnings:
            oracle.warnings.append("evaluated outside table ball")
            log.warning("table oracle %s read outside its radius %d; using 0", source, radius)
        return np.where(hit, vals[idx] if len(keys) else 0.0, 0.0)

    oracle.keyed = keyed
    oracle.values = clean
    return oracle


def validate_table(oracle: PosDefOracle, tol: float = 1e-9) -> list[str]:
    """Prechecks for table oracles; returns the list of failures (empty when fine)."""
    problems = []
    values = getattr(oracle, "values", {})
    if abs(values.get("", 0.0) - 1.0) > tol:
        problems.append(f"phi(e) = {values.get('', 0.0)} != 1")
    neg = [w for w, v in values.items() if v < 0]
    if neg:
        problems.append(f"negative value at {neg[0]!r}")
    for w, v in values.items():
        if abs(values.get(inverse(w), 0.0) - v) > tol:
            problems.append(f"asymmetric at {w!r}: phi(g) != phi(g^-1)")
            break
    return problems


def load_table_oracle(path, k: int = 2, psd_radius: int = 3, tol: float = 1e-8) -> PosDefOracle:
    """Read 'word,value' rows (optional header), validate, certify; raise on any failure."""
    values = {}
    try:
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), 1):
                if not row or row[0].strip().startswith("#"):
                    continue
                if len(row) != 2:
                    raise OracleValidationError(f"{path}:{lineno}: expected 'word,value'")
                word, raw = row[0].strip(), row[1].strip()
                if lineno == 1 and word.lower() == "word":
                    continue
                word = "" if word in ("e", "1") else word
                try:
                    val = float(raw)
                except ValueError:
                    raise OracleValidationError(f"{path}:{lineno}: bad value {raw!r}") from None
                if word in values:
                    raise OracleValidationError(f"{path}:{lineno}: duplicate word {word!r}")
                try:
                    values[word] = val
                    reduce(word, k)
                except InputError as exc:
                    raise OracleValidationError(f"{path}:{lineno}: {exc}") from None
    except OSError as exc:
        raise OracleValidationError(f"cannot read table {path}: {exc}") from None
    oracle = make_oracle("table", k, values=values, source=str(path))
    problems = validate_table(oracle)
    if problems:
        raise OracleValidationError("; ".join(problems))
    cert = psd_check(oracle, min(psd_radius, oracle.support_radius or 0), tol)
    if not cert.verdict:
        raise OracleValidationError(f"Gram matrix not PSD: {cert.reason}")
    return oracle


@dataclass
class PsdCertificate:
    radius: int
    min_eigenvalue: float
    matrix_dim: int
    tolerance: float
    mean_diagonal: float
    verdict: bool
    reason: str = ""

    def to_record(self) -> dict:
        return dict(self.__dict__)


def gram_matrix(phi: PosDefOracle, radius: int) -> np.ndarray:
    keys = ball_keys(radius, phi.k)
    n = len(keys)
    x = np.repeat(keys_inverse(keys, phi.k), n)
    y = np.tile(keys, n)
    return phi.eval_keys(keys_multiply(x, y, phi.k)).reshape(n, n)


def psd_check(phi: PosDefOracle, radius: int, tol: float = 1e-8,
              dim_cap: int = PSD_DIM_CAP) -> PsdCertificate:
    """Smallest eigenvalue of [phi(g^-1 h)] over the ball of the given radius."""
    dim = phi.group.ball_count(radius)
    if dim > dim_cap:
        raise ResourceCapError(f"ball B_{radius} has {dim} elements, cap {dim_cap}")
    if phi.kind == "table":
        problems = validate_table(phi)
        if problems:
            return PsdCertificate(radius, float("nan"), dim, tol, float("nan"), False,
                                  "precheck: " + "; ".join(problems))
    G = gram_matrix(phi, radius)
    lam = float(np.linalg.eigvalsh(G)[0])
    mean_diag = float(np.trace(G) / dim)
    ok = lam >= -tol * mean_diag
    return PsdCertificate(radius, lam, dim, tol, mean_diag, bool(ok),
                          "" if ok else f"min eigenvalue {lam:.3e} below floor")


def coefficient_sum(phi: PosDefOracle, f: SparseGroupFunction | RadialFunction) -> float:
    """sum_g f(g) phi(g)."""
    if isinstance(f, RadialFunction):
        return float(sum(c * phi.sphere_sum(m) for m, c in enumerate(f.coeffs) if c != 0.0))
    if not len(f):
        return 0.0
    keys, vals = f.to_keys()
    return float(np.dot(vals, phi.eval_keys(keys)))
