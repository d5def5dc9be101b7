"""Config-driven command line runner.

Every subcommand reads an optional INI file (``--config``), applies
``--set section.key=value`` overrides, and writes ``report.json``, one or
more CSV tables and a ``plot.gp`` gnuplot script into the output directory.
Reports contain no timings or paths, so equal config and seed give equal bytes.

Exit codes: 0 ok, 1 failed checks, 2 bad input or config, 3 resource cap,
4 other numerical errors.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import acceptance
from .boundary import busemann_average
from .errors import (DegenerateInputError, DivergenceError, InputError, OracleValidationError,
                     PrecisionError, ResourceCapError)
from .gns import (conformal_check, fusion_check, harish_chandra, knapp_stein_defect,
                  knapp_stein_matrix, pair_measure, sigma_schedule)
from .group_core import GroupParams, RadialFunction, SparseGroupFunction
from .poincare import (critical_exponent, double_series, patterson_theta, poincare_series,
                       slow_growth_audit)
from .posdef import load_table_oracle, make_oracle, psd_check
from .spectral import (boundary_norm_bound, entropy_estimate, lp_transfer_check,
                       random_positive_function, regular_norm, rep_norm_lower, rrd_check,
                       transfer_bound_check)

OUT_ENV = "TREEPOINCARE_OUT"
SEED_MAX = 2 ** 64 - 1

DEFAULTS = {
    "run": {"k": "2"},
    "oracle": {"kind": "haagerup", "s": "0.75"},
    "exponent": {"window": "4, 12"},
    "series": {"sigma": "1.2, 1.5, 2.0", "m_max": "40", "double": "no"},
    "theta": {"stages": "8", "eps": "0.05"},
    "psd": {"radius": "1, 2, 3"},
    "gns": {"depth": "4", "g": "a", "steps": "4", "width": "0.2", "truncation": "6"},
    "knapp-stein": {"s": "0.6, 0.75, 0.9, 1.0", "depth": "6"},
    "harish-chandra": {"s": "0.75", "m_max": "12", "depth": "6"},
    "fusion": {"s": "0.8", "s_prime": "0.9", "t": "0.7", "m_max": "12"},
    "norms": {"f": "sphere:1", "n_max": "2048"},
    "entropy": {"r_min": "2", "r_max": "12", "n_max": "64"},
    "transfer": {"count": "10", "radius": "3", "p": "", "n_max": "256"},
    "rrd": {"r_min": "2", "r_max": "10", "random_radius": "6"},
    "boundary-norm": {"s": "0.75", "L_min": "4", "L_max": "10"},
    "verify-all": {"only": ""},
}


class ConfigError(InputError):
    pass


class Config:
    """Thin typed view over a ConfigParser with the built-in defaults underneath."""

    def __init__(self, parser: configparser.ConfigParser):
        self.parser = parser

    @classmethod
    def load(cls, path=None, overrides=()):
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_dict(DEFAULTS)
        if path is not None:
            try:
                with open(path) as fh:
                    cp.read_file(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            except configparser.Error as exc:
                raise ConfigError(f"config parse error: {exc}") from None
        for item in overrides:
            key, sep, value = item.partition("=")
            section, dot, option = key.strip().rpartition(".")
            if not sep or not dot:
                raise ConfigError(f"--set expects section.key=value, got {item!r}")
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, option, value.strip())
        return cls(cp)

    def get(self, section, key, fallback=None):
        return self.parser.get(section, key, fallback=fallback)

    def _typed(self, section, key, conv, what):
        raw = self.get(section, key)
        if raw is None:
            raise ConfigError(f"missing [{section}] {key}")
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {raw!r} is not {what}") from None

    def int(self, section, key):
        return self._typed(section, key, int, "an integer")

    def float(self, section, key):
        return self._typed(section, key, float, "a number")

    def bool(self, section, key):
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            raise ConfigError(f"[{section}] {key} is not a boolean") from None

    def floats(self, section, key):
        return self._typed(section, key,
                           lambda s: [float(x) for x in s.replace(",", " ").split()], "a number list")

    def ints(self, section, key):
        return self._typed(section, key,
                           lambda s: [int(x) for x in s.replace(",", " ").split()], "an integer list")

    def as_dict(self) -> dict:
        return {s: dict(self.parser.items(s)) for s in sorted(self.parser.sections())}


# ---------------------------------------------------------------- builders

def build_oracle(cfg: Config):
    k = cfg.int("run", "k")
    sec = dict(cfg.parser.items("oracle"))
    kind = sec.pop("kind", "").strip()
    if kind == "table" or "csv" in sec:
        path = sec.get("csv")
        if not path:
            raise ConfigError("table oracle needs [oracle] csv = PATH")
        return load_table_oracle(path, k)
    params = {}
    for key, raw in sec.items():
        if key == "weights":
            params[key] = [int(x) for x in raw.replace(",", " ").split()]
        elif key in ("generator", "label"):
            params[key] = raw
        else:
            try:
                params[key] = float(raw)
            except ValueError:
                raise ConfigError(f"[oracle] {key} = {raw!r} is not a number") from None
    if kind not in ("trivial", "dirac", "subgroup", "haagerup", "harish_chandra"):
        raise ConfigError(f"unknown oracle kind {kind!r}")
    if kind in ("trivial", "dirac"):
        params = {}
    elif kind == "subgroup" and "modulus" not in params:
        params.pop("s", None)
        params.setdefault("generator", "a")
    elif kind == "haagerup" and "t" in params:
        params.pop("s", None)
    return make_oracle(kind, k, **params)


def parse_function(spec: str, k: int = 2):
    """'sphere:R', 'ball:R', 'average:R' or 'words:a=1,A=1'."""
    kind, _, arg = spec.partition(":")
    try:
        if kind == "sphere":
            return RadialFunction.sphere(int(arg), k)
        if kind == "ball":
            return RadialFunction.ball(int(arg), k)
        if kind == "average":
            return RadialFunction.ball_average(int(arg), k)
        if kind == "words":
            vals = {}
            for part in arg.split(","):
                w, _, v = part.partition("=")
                vals[w.strip() if w.strip() not in ("e", "1") else ""] = float(v)
            return SparseGroupFunction(vals, k)
    except ValueError as exc:
        raise ConfigError(f"bad function spec {spec!r}: {exc}") from None
    raise ConfigError(f"unknown function spec {spec!r}")


# ---------------------------------------------------------------- subcommands
# Each returns (results, tables, failed) where tables maps a CSV stem to (header, rows).

def cmd_exponent(cfg, phi, ctx):
    lo, hi = cfg.ints("exponent", "window")
    est = critical_exponent(phi, (lo, hi))
    rows = [[m, v] for m, v in zip(range(lo, hi + 1), est.spherical_sums)]
    return {"oracle": phi.to_record(), "estimate": est.to_record()}, {"spheres": (["m", "sphere_sum"], rows)}, False


def cmd_series(cfg, phi, ctx):
    m_max = cfg.int("series", "m_max")
    want_double = cfg.bool("series", "double")
    out, rows = [], []
    for sigma in cfg.floats("series", "sigma"):
        sv = poincare_series(phi, sigma, m_max)
        rec = {"sigma": sigma, "single": sv.to_record()}
        row = [sigma, sv.partial, sv.tail_bound]
        if want_double:
            dv = double_series(phi, sigma)
            rec["double"] = dv.to_record()
            row += [dv.partial, dv.tail_bound]
        out.append(rec)
        rows.append(row)
    header = ["sigma", "partial", "tail"] + (["double_partial", "double_tail"] if want_double else [])
    return {"oracle": phi.to_record(), "series": out}, {"series": (header, rows)}, False


def cmd_theta(cfg, phi, ctx):
    n = cfg.int("theta", "stages")
    eps = cfg.float("theta", "eps")
    base = critical_exponent(phi).s_hat if phi.declared_exponent is None else phi.declared_exponent
    sigmas = [base + 1.0 / j for j in range(1, n + 1)]
    theta = patterson_theta([phi] * n, sigmas)
    audit = slow_growth_audit(theta, eps)
    stage_ok = all(st["certified"] for st in theta.stages)
    ts = np.linspace(0.0, float(theta.breakpoints[-1]) + 10.0, 101)
    rows = [[float(t), float(theta.log(t))] for t in ts]
    return ({"sigmas": sigmas, "theta": theta.to_record(), "audit": audit, "stages_certified": stage_ok},
            {"theta": (["t", "log_theta"], rows)}, audit["violations"] > 0 or not stage_ok)


def cmd_psd(cfg, phi, ctx):
    certs = [psd_check(phi, r) for r in cfg.ints("psd", "radius")]
    rows = [[c.radius, c.min_eigenvalue, int(c.verdict)] for c in certs]
    return ({"oracle": phi.to_record(), "certificates": [c.to_record() for c in certs]},
            {"psd": (["radius", "min_eigenvalue", "psd"], rows)}, not all(c.verdict for c in certs))


def cmd_gns(cfg, phi, ctx):
    depth = cfg.int("gns", "depth")
    g = cfg.get("gns", "g")
    base = max(0.5, phi.declared_exponent if phi.declared_exponent is not None
               else critical_exponent(phi).s_hat)
    sched = sigma_schedule(base, cfg.int("gns", "steps"), cfg.float("gns", "width"))
    trunc = None if phi.is_radial else cfg.int("gns", "truncation")
    out, rows = [], []
    for sigma in sched:
        pm = pair_measure(phi, sigma, truncation_m=trunc, depth=depth)
        dev = conformal_check(pm, g)
        defect = knapp_stein_defect(pm, g)
        out.append({**pm.to_record(), "conformal_deviation": dev, "knapp_stein_defect": defect})
        rows.append([sigma, pm.truncation_m, pm.interior_mass, dev, defect])
    return ({"oracle": phi.to_record(), "g": g, "schedule": out},
            {"gns": (["sigma", "truncation", "interior_mass", "conformal_deviation", "ks_defect"], rows)},
            False)


def cmd_knapp_stein(cfg, phi, ctx):
    depth = cfg.int("knapp-stein", "depth")
    k = cfg.int("run", "k")
    out, rows = [], []
    for s in cfg.floats("knapp-stein", "s"):
        rel = knapp_stein_matrix(s, depth, k).relative_eigenvalues()
        out.append({"s": s, "min_relative": float(rel[0]), "second_relative": float(rel[-2]),
                    "top_relative": float(rel[-1])})
        rows.append([s, float(rel[0]), float(rel[-2]), float(rel[-1])])
    failed = any(r["min_relative"] < -1e-8 for r in out)
    return {"depth": depth, "forms": out}, {"knapp_stein": (["s", "min_rel", "second_rel", "top_rel"], rows)}, failed


def cmd_harish_chandra(cfg, phi, ctx):
    s = cfg.float("harish-chandra", "s")
    k = cfg.int("run", "k")
    m_max = cfg.int("harish-chandra", "m_max")
    delta = GroupParams(k).delta
    rows = []
    for m in range(m_max + 1):
        v = busemann_average(s, m, k)
        rows.append([m, v, v * math.exp((1 - s) * delta * m)])
    ratios = [r[2] for r in rows]
    hc = harish_chandra(s, "a", cfg.int("harish-chandra", "depth"), k)
    return ({"s": s, "c": min(ratios), "C": max(ratios), "ratio": max(ratios) / min(ratios),
             "cell_model": hc}, {"harish_chandra": (["m", "xi_s", "scaled"], rows)}, False)


def cmd_fusion(cfg, phi, ctx):
    sec = "fusion"
    res = fusion_check(cfg.float(sec, "s"), cfg.float(sec, "s_prime"), cfg.float(sec, "t"),
                       cfg.int(sec, "m_max"), cfg.int("run", "k"))
    rows = [[m, r] for m, r in enumerate(res["ratios"])]
    return res, {"fusion": (["m", "ratio"], rows)}, False


def cmd_norms(cfg, phi, ctx):
    f = parse_function(cfg.get("norms", "f"), cfg.int("run", "k"))
    n_max = cfg.int("norms", "n_max")
    reg = regular_norm(f, n_max)
    low = rep_norm_lower(phi, f, min(n_max, 256))
    rows = [[int(n), float(v)] for n, v in reg.sequence]
    return ({"f": cfg.get("norms", "f"), "oracle": phi.to_record(), "regular": reg.to_record(),
             "rep_lower": low.to_record()}, {"norms": (["n", "estimate"], rows)}, False)


def cmd_entropy(cfg, phi, ctx):
    sec = "entropy"
    res = entropy_estimate(phi, range(cfg.int(sec, "r_min"), cfg.int(sec, "r_max") + 1), cfg.int(sec, "n_max"))
    rows = [[row["r"], row["lower_norm"], row["chain_norm"]] for row in res["rows"]]
    return res, {"entropy": (["r", "lower_norm", "chain_norm"], rows)}, False


def cmd_transfer(cfg, phi, ctx):
    sec = "transfer"
    rng = np.random.default_rng(ctx["seed"])
    n_max = cfg.int(sec, "n_max")
    funcs = [random_positive_function(rng, cfg.int(sec, "radius"), phi.k) for _ in range(cfg.int(sec, "count"))]
    results = ctx["map"](lambda f: transfer_bound_check(phi, f, n_max), funcs)
    rows = [[i, r["lower"], r["bound"], r["margin"], int(r["holds"])] for i, r in enumerate(results)]
    out = {"oracle": phi.to_record(), "checks": results,
           "violations": sum(not r["holds"] for r in results)}
    p_raw = cfg.get(sec, "p", "")
    if p_raw:
        out["lp"] = lp_transfer_check(phi, RadialFunction.ball(2, phi.k), cfg.float(sec, "p"), n_max)
    failed = out["violations"] > 0 or ("lp" in out and not out["lp"]["holds"])
    return out, {"transfer": (["index", "lower", "bound", "margin", "holds"], rows)}, failed


def cmd_rrd(cfg, phi, ctx):
    sec = "rrd"
    res = rrd_check(range(cfg.int(sec, "r_min"), cfg.int(sec, "r_max") + 1), cfg.int("run", "k"),
                    cfg.int(sec, "random_radius"), ctx["seed"])
    rows = [[r, v] for r, v in zip(res["r"], res["ratios"])]
    return res, {"rrd": (["r", "ratio"], rows)}, not res["verdict"]


def cmd_boundary_norm(cfg, phi, ctx):
    sec = "boundary-norm"
    s = cfg.float(sec, "s")
    k = cfg.int("run", "k")
    Ls = list(range(cfg.int(sec, "L_min"), cfg.int(sec, "L_max") + 1))
    sups = [float(boundary_norm_bound(s, RadialFunction.ball_average(L, k))["sup_norm"]) for L in Ls]
    logs = [math.log(v) for v in sups]
    slope = float(np.polyfit(Ls, logs, 1)[0]) if len(Ls) > 1 else math.nan
    target = -(1 - s) * GroupParams(k).delta
    rows = [[L, v, lg] for L, v, lg in zip(Ls, sups, logs)]
    return ({"s": s, "slope": slope, "target_slope": target}, {"boundary_norm": (["L", "sup_norm", "log"], rows)},
            False)


def cmd_verify_all(cfg, phi, ctx):
    only = cfg.get("verify-all", "only", "")
    numbers = [int(x) for x in only.replace(",", " ").split()] if only else None
    if numbers and any(not 1 <= n <= len(acceptance.CHECKS) for n in numbers):
        raise ConfigError(f"acceptance rows are numbered 1..{len(acceptance.CHECKS)}")
    results = acceptance.run_all(ctx["seed"], ctx["threads"], numbers)
    for r in results:
        print(r.line())
    npass = sum(r.passed for r in results)
    print(f"{npass}/{len(results)} checks passed")
    rows = [[r.number, r.title, int(r.passed)] for r in results]
    return ({"checks": [r.to_record() for r in results], "passed": npass, "total": len(results)},
            {"acceptance": (["number", "title", "passed"], rows)}, npass < len(results))


COMMANDS = {
    "exponent": (cmd_exponent, "fit the critical exponent from sphere sums"),
    "series": (cmd_series, "tail-bounded Poincare series (and double series)"),
    "theta": (cmd_theta, "slow-growth weight construction and audit"),
    "psd": (cmd_psd, "Gram-matrix positivity certificate"),
    "gns": (cmd_gns, "pair limit measures along a sigma schedule"),
    "knapp-stein": (cmd_knapp_stein, "Knapp-Stein form eigenvalues"),
    "harish-chandra": (cmd_harish_chandra, "spherical function brackets"),
    "fusion": (cmd_fusion, "product of two spherical functions"),
    "norms": (cmd_norms, "regular and representation norm estimates"),
    "entropy": (cmd_entropy, "entropy brackets from averaging operators"),
    "transfer": (cmd_transfer, "random transfer-inequality checks"),
    "rrd": (cmd_rrd, "radial rapid decay fit"),
    "boundary-norm": (cmd_boundary_norm, "boundary representation sup-norm slope"),
    "verify-all": (cmd_verify_all, "run every acceptance check"),
}
NEEDS_ORACLE = {"exponent", "series", "theta", "psd", "gns", "norms", "entropy", "transfer"}


# ---------------------------------------------------------------- output

def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def render_report(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def _plot_script(tables: dict) -> str:
    lines = ["set datafile separator ','", "set key autotitle columnhead", "set terminal pngcairo",
             ""]
    for stem, (header, _) in tables.items():
        lines.append(f"set output '{stem}.png'")
        series = [f"'{stem}.csv' using 1:{j} with linespoints" for j in range(2, len(header) + 1)
                  if header[j - 1] not in ("title", "holds", "psd", "passed")]
        lines.append("plot " + ", \\\n     ".join(series) if series else f"# {stem}: nothing to plot")
        lines.append("")
    return "\n".join(lines)


def write_outputs(out_dir: Path, report: dict, tables: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(render_report(report))
    for stem, (header, rows) in tables.items():
        with open(out_dir / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    (out_dir / "plot.gp").write_text(_plot_script(tables))


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="treepoincare", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI file with run settings")
    common.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV} or ./out)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for job-level parallelism")
    common.add_argument("--seed", type=int, default=None, help="RNG seed, 0 <= seed < 2^64")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value")
    common.add_argument("--oracle-csv", type=Path, help="shortcut for a table oracle read from CSV")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_text)
        if name == "verify-all":
            sp.add_argument("--repro", action="store_true",
                            help="run twice and require byte-identical reports")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    if args.oracle_csv is not None:
        overrides += ["oracle.kind=table", f"oracle.csv={args.oracle_csv}"]
    cfg = Config.load(args.config, overrides)
    seed = args.seed if args.seed is not None else cfg.int("run", "seed") if cfg.get("run", "seed") else 0
    if not 0 <= seed <= SEED_MAX:
        raise ConfigError(f"seed must lie in [0, 2^64), got {seed}")
    threads = args.threads if args.threads is not None else (
        cfg.int("run", "threads") if cfg.get("run", "threads") else 1)
    if threads < 1:
        raise ConfigError("--threads must be at least 1")
    out = args.out or Path(cfg.get("run", "out", "") or os.environ.get(OUT_ENV) or "out")

    def pmap(fn, items):
        if threads == 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))          # keeps input order

    ctx = {"seed": seed, "threads": threads, "map": pmap}
    fn, _ = COMMANDS[args.command]
    phi = build_oracle(cfg) if args.command in NEEDS_ORACLE else None

    def once():
        results, tables, failed = fn(cfg, phi, ctx)
        report = {"command": args.command, "seed": seed, "config": cfg.as_dict(), "results": results,
                  "status": "fail" if failed else "ok"}
        return report, tables, failed

    report, tables, failed = once()
    if args.command == "verify-all" and getattr(args, "repro", False):
        again, _, _ = once()
        same = render_report(again) == render_report(report)
        print(f"reproducibility: {'identical' if same else 'DIFFERENT'} reports")
        report["reproducible"] = same
        failed = failed or not same
    write_outputs(out, report, tables)
    print(f"wrote {out / 'report.json'}")
    return 1 if failed else 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except (OracleValidationError, ConfigError, InputError) as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2
    except ResourceCapError as exc:
        print(f"error [ResourceCapError]: {exc}", file=sys.stderr)
        return 3
    except (DivergenceError, PrecisionError, DegenerateInputError) as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
