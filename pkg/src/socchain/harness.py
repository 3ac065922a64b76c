"""Goodness-of-fit statistics, regime experiments and reports.

Every experiment cell draws from its own generator, seeded by a 64-bit
value spawned from the master seed, so results do not depend on the order
or number of workers.  Wall times are kept out of ``report.csv`` (they go to
``timings.csv``) so that two runs with the same seed give identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .charfn import cf_aux
from .density import default_tilt
from .errors import DomainError, EmptyInput
from .limit_laws import limit_for_regime
from .samplers import WeightedSamples, sample_aux, sample_magnetization
from .spectrum import ModelParams, alpha_closed_form, compute_spectrum, validate_params

__all__ = [
    "WeightedECDF",
    "weighted_ecdf",
    "ks_distance",
    "ks_two_sample",
    "ExperimentConfig",
    "ReportRow",
    "Report",
    "r_from_rule",
    "run_experiment",
    "row_verdict",
    "emit_report",
    "parse_report",
    "write_report",
    "load_config",
    "verify",
    "fit_fluctuation_exponent",
    "REPORT_COLUMNS",
]

REPORT_COLUMNS = ("n", "r", "regime", "ks", "mean", "var", "acc_rate", "seconds", "seed", "verdict")


# ------------------------------------------------------------------ ECDF / KS

@dataclass(frozen=True)
class WeightedECDF:
    """Right-continuous step function ``F(x) = sum_{v_i <= x} w_i / sum w_i``.

    ``x`` holds the distinct jump locations and ``F`` the value just after
    each jump.
    """

    x: np.ndarray
    F: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.x, t, side="right") - 1
        out = np.where(idx >= 0, self.F[np.maximum(idx, 0)], 0.0)
        return out[()] if out.ndim == 0 else out

    @property
    def left_limits(self) -> np.ndarray:
        return np.concatenate(([0.0], self.F[:-1]))


def weighted_ecdf(samples, weights=None) -> WeightedECDF:
    """Self-normalized weighted ECDF.

    ``samples`` is a :class:`WeightedSamples` or an array of values (then
    ``weights`` defaults to equal weights).
    """
    if isinstance(samples, WeightedSamples):
        values, weights = samples.values, samples.weights
    else:
        values = np.asarray(samples, dtype=float).ravel()
        weights = np.ones(values.size) if weights is None else np.asarray(weights, dtype=float)
    if values.size == 0:
        raise EmptyInput("weighted_ecdf needs at least one sample")
    if np.any(~(weights > 0)):
        raise DomainError("weights must be positive")
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order] / math.fsum(weights)
    cum = np.cumsum(w)
    last = np.r_[v[1:] != v[:-1], True]
    F = cum[last]
    F[-1] = 1.0
    return WeightedECDF(v[last], np.minimum(F, 1.0))


def ks_distance(ecdf: WeightedECDF, cdf) -> float:
    """``sup |F_hat - cdf|`` over both sides of every jump of ``F_hat``."""
    G = np.asarray(cdf(ecdf.x), dtype=float)
    return float(max(np.max(np.abs(ecdf.F - G)), np.max(np.abs(ecdf.left_limits - G))))


def ks_two_sample(a: WeightedECDF, b: WeightedECDF) -> float:
    """``sup |F_a - F_b|`` for two step functions."""
    grid = np.union1d(a.x, b.x)
    return float(np.max(np.abs(a(grid) - b(grid))))


# --------------------------------------------------------------- experiments

@dataclass
class ExperimentConfig:
    """One regime experiment over a list of chain lengths.

    ``r_rule`` is ``const:R``, ``pow:C:A`` (``r = floor(C n^A)``) or ``max``
    (``r = (n-1)//2``).  ``tolerances`` maps ``ks`` and ``var_rel`` to
    thresholds.  ``lam`` overrides ``r / n^(3/4)`` for the threshold regime.
    """

    regime: str
    n_list: list
    r_rule: str
    samples: int
    seed: int
    tolerances: dict = field(default_factory=dict)
    lam: float | None = None

    def cells(self):
        out = []
        for n in self.n_list:
            r = r_from_rule(self.r_rule, int(n))
            validate_params(int(n), r)
            out.append((int(n), r))
        return out


def r_from_rule(rule: str, n: int) -> int:
    parts = rule.split(":")
    if parts[0] == "const" and len(parts) == 2:
        return int(parts[1])
    if parts[0] == "pow" and len(parts) == 3:
        return int(math.floor(float(parts[1]) * n ** float(parts[2])))
    if parts[0] == "max" and len(parts) == 1:
        return (n - 1) // 2
    raise ValueError(f"bad r rule {rule!r}")


@dataclass
class ReportRow:
    n: int
    r: int
    regime: str
    ks: float
    mean: float
    var: float
    acc_rate: float
    seconds: float | None
    seed: int
    verdict: str


@dataclass
class Report:
    rows: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.verdict == "pass" for r in self.rows)


def _target_variance(regime: str, n: int, r: int) -> float:
    if regime in ("finite", "intermediate"):
        return limit_for_regime(regime, r=r).variance
    law = limit_for_regime(regime, lam=r / n ** 0.75)
    x = np.linspace(-8.0, 8.0, 16001)
    return float(np.trapezoid(x * x * law.pdf(x), x))


def row_verdict(row: ReportRow, tolerances: dict) -> str:
    """Verdict recomputed from the recorded numbers and the tolerance map.

    Regime rows need ``ks <= tol['ks.<regime>']`` and, when
    ``var_rel.<regime>`` is set, ``|var / target - 1| <= var_rel``.  Check
    rows (``algebra``, ``cf``) need ``ks <= tol[<regime>]``; there ``ks``
    holds the check statistic.
    """
    if row.ks is None or not np.isfinite(row.ks):
        return "error"
    if row.regime in tolerances:
        return "pass" if row.ks <= tolerances[row.regime] else "fail"
    ok = row.ks <= tolerances.get(f"ks.{row.regime}", math.inf)
    vtol = tolerances.get(f"var_rel.{row.regime}")
    if vtol is not None:
        target = _target_variance(row.regime, row.n, row.r)
        ok = ok and abs(row.var / target - 1.0) <= vtol
    return "pass" if ok else "fail"


def _cell(args):
    regime, n, r, samples, cell_seed, lam, out_dir = args
    t0 = time.perf_counter()
    spec = compute_spectrum(ModelParams(n, r))
    rng = np.random.default_rng(cell_seed)
    plan = default_tilt(spec.params, regime)
    if samples < 1:
        raise EmptyInput("samples must be >= 1")
    ws = sample_magnetization(spec, plan, rng, samples)
    lam = lam if lam is not None else r / n ** 0.75
    law = limit_for_regime(regime, lam=lam, r=r, a=math.log(r) / math.log(n) if r > 1 else 0.0)
    scaled = ws.scaled(1.0 / law.scale(n, r))
    ks = ks_distance(weighted_ecdf(scaled), law.cdf)
    mean = scaled.mean()
    var = scaled.mean(lambda v: v * v) - mean * mean
    if out_dir is not None:
        _write_samples(os.path.join(out_dir, f"samples_{regime}_n{n}_r{r}.csv"), ws)
    return ks, mean, var, ws.acceptance_rate, time.perf_counter() - t0


def _workers(default: int | None = None) -> int:
    env = os.environ.get("SOCCHAIN_WORKERS")
    if env:
        return max(1, int(env))
    return default or 1


def _cell_seeds(master: int, count: int):
    children = np.random.SeedSequence(master).spawn(count)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None,
                   workers: int | None = None) -> Report:
    """Sample every ``(n, r)`` cell of ``cfg`` and score it against the limit law.

    Cells that raise are kept with verdict ``error``.
    """
    cells = cfg.cells()
    seeds = _cell_seeds(cfg.seed, len(cells))
    jobs = [(cfg.regime, n, r, cfg.samples, s, cfg.lam, out_dir)
            for (n, r), s in zip(cells, seeds)]
    tol = {f"{k}.{cfg.regime}": v for k, v in cfg.tolerances.items()}
    rep = Report(tolerances=tol)
    results = _map(_cell, jobs, _workers(workers))
    for (n, r), s, res in zip(cells, seeds, results):
        if isinstance(res, Exception):
            row = ReportRow(n, r, cfg.regime, math.nan, math.nan, math.nan, math.nan,
                            None, s, "error")
        else:
            ks, mean, var, acc, secs = res
            row = ReportRow(n, r, cfg.regime, ks, mean, var, acc, None, s, "")
            row.verdict = row_verdict(row, tol)
            rep.timings[(cfg.regime, n, r)] = secs
        rep.rows.append(row)
    return rep


def _safe(fn, job):
    try:
        return fn(job)
    except Exception as exc:  # kept as an error row
        return exc


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [_safe(fn, j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futures = [ex.submit(_safe, fn, j) for j in jobs]
        return [f.result() for f in futures]


# ------------------------------------------------------------ serialization

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format(v, ".17g")
    return str(v)


def emit_report(rep: Report, fmt: str = "csv") -> str:
    """Deterministic CSV or JSON text of ``rep``."""
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in rep.rows:
            w.writerow([_fmt(getattr(row, c)) for c in REPORT_COLUMNS])
        return buf.getvalue()
    if fmt == "json":
        doc = {"columns": list(REPORT_COLUMNS),
               "rows": [asdict(r) for r in rep.rows],
               "tolerances": dict(sorted(rep.tolerances.items()))}
        return json.dumps(doc, indent=2, allow_nan=True) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def _parse_value(name, text):
    if name in ("n", "r", "seed"):
        return int(text)
    if name in ("regime", "verdict"):
        return text
    if text == "":
        return None
    return float(text)


def parse_report(text: str, fmt: str = "csv", tolerances: dict | None = None) -> Report:
    """Inverse of :func:`emit_report`."""
    if fmt == "json":
        doc = json.loads(text)
        rows = [ReportRow(**r) for r in doc["rows"]]
        return Report(rows, doc.get("tolerances", {}))
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != REPORT_COLUMNS:
        raise ValueError("unexpected report header")
    rows = [ReportRow(**{c: _parse_value(c, v) for c, v in zip(header, line)})
            for line in reader if line]
    return Report(rows, dict(tolerances or {}))


def write_report(rep: Report, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
        fh.write(emit_report(rep, "csv"))
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(emit_report(rep, "json"))
    with open(os.path.join(out_dir, "timings.csv"), "w") as fh:
        fh.write("regime,n,r,seconds\n")
        for (regime, n, r), s in rep.timings.items():
            fh.write(f"{regime},{n},{r},{s:.3f}\n")


def _write_samples(path: str, ws: WeightedSamples) -> None:
    with open(path, "w") as fh:
        fh.write("value,weight\n")
        for v, w in zip(ws.values, ws.weights):
            fh.write(f"{v:.17g},{w:.17g}\n")


# ------------------------------------------------------------------ configs

DEFAULT_CONFIG = {
    "samples": 20000,
    "cf_draws": 200000,
    "algebra_grid": 60,
    "tol.algebra": 1e-10,
    "tol.cf": 4.0,
    "tol.ks.long": 0.03,
    "tol.ks.finite": 0.05,
    "tol.var_rel.finite": 0.1,
    "tol.ks.intermediate": 0.05,
    "tol.var_rel.intermediate": 0.1,
    "tol.ks.threshold": 0.05,
    "n.long": 4096,
    "n.finite": 4096,
    "n.intermediate": 16384,
    "n.threshold": 4096,
}


def load_config(path: str | None = None, overrides: dict | None = None) -> dict:
    """Flat ``key = value`` file merged over the defaults, then ``overrides``.

    Blank lines and ``#`` comments are ignored.  Values are parsed as int,
    then float, then kept as strings.
    """
    cfg = dict(DEFAULT_CONFIG)
    if path:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value")
                k, v = (s.strip() for s in line.split("=", 1))
                cfg[k] = _coerce(v)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    return cfg


def _coerce(v: str):
    for kind in (int, float):
        try:
            return kind(v)
        except ValueError:
            pass
    return v


# ------------------------------------------------------------------- suites

def _algebra_rows(cfg):
    """Spectral identities over a deterministic ``(n, r)`` grid."""
    rows = []
    rng = np.random.default_rng(12345)
    grid = set()
    while len(grid) < int(cfg["algebra_grid"]):
        n = int(rng.integers(5, 1025))
        r = int(rng.integers(1, (n - 1) // 2 + 1))
        grid.add((n, r))
    for n, r in sorted(grid):
        p = ModelParams(n, r)
        s = compute_spectrum(p)
        a = s.alphas
        j = np.arange(1, n // 2 + 1)
        err = max(abs(a[-1] - 1.0),
                  float(np.max(np.abs(a[:-1] - a[:-1][::-1]))),
                  abs(math.fsum(a)),
                  float(np.max(np.abs(alpha_closed_form(p, np.arange(1, n + 1)) - a))),
                  float(np.max(np.maximum(np.abs(a[j - 1]) - np.minimum(1.0, n / (2.0 * r * j)), 0.0))),
                  0.0 if np.all(s.betas > 0) else math.inf)
        rows.append(ReportRow(n, r, "algebra", err, None, None, None, None, 0, ""))
    return rows


def _cf_rows(cfg, seed):
    """|exp(phi_n(u)) - Monte Carlo CF| in standard errors."""
    cases = [(8, 1), (16, 3), (32, 7)]
    seeds = _cell_seeds(seed, len(cases))
    draws = int(cfg["cf_draws"])
    rows = []
    for (n, r), s in zip(cases, seeds):
        spec = compute_spectrum(ModelParams(n, r))
        a, _ = sample_aux(spec, np.random.default_rng(s), draws)
        worst = 0.0
        for u in (0.3, 1.0, 3.0):
            e = np.exp(1j * u * (n - a))
            se = math.sqrt((e.real.var() + e.imag.var()) / draws)
            worst = max(worst, abs(cf_aux(spec, u) - e.mean()) / se)
        rows.append(ReportRow(n, r, "cf", worst, None, None, None, None, s, ""))
    return rows


def _regime_configs(cfg, seeds):
    specs = [("long", "max"), ("finite", "const:1"),
             ("intermediate", "pow:1:0.6"), ("threshold", "pow:1:0.75")]
    out = []
    for (regime, rule), seed in zip(specs, seeds):
        tol = {}
        for key in ("ks", "var_rel"):
            name = f"tol.{key}.{regime}"
            if name in cfg:
                tol[key] = float(cfg[name])
        out.append(ExperimentConfig(regime, [int(cfg[f"n.{regime}"])], rule,
                                    int(cfg["samples"]), seed, tol))
    return out


def verify(suite: str, seed: int, config: dict | None = None, out_dir: str | None = None,
           workers: int | None = None) -> Report:
    """Run a named suite (``algebra``, ``cf``, ``regimes`` or ``all``)."""
    if suite not in ("algebra", "cf", "regimes", "all"):
        raise ValueError(f"unknown suite {suite!r}")
    cfg = load_config(None, config)
    # one seed per sub-suite: cf, then the four regimes
    seeds = _cell_seeds(seed, 5)
    rep = Report()
    if suite in ("algebra", "all"):
        rep.tolerances["algebra"] = float(cfg["tol.algebra"])
        rep.rows += _algebra_rows(cfg)
    if suite in ("cf", "all"):
        rep.tolerances["cf"] = float(cfg["tol.cf"])
        rep.rows += _cf_rows(cfg, seeds[0])
    for row in rep.rows:
        row.verdict = row_verdict(row, rep.tolerances)
    if suite in ("regimes", "all"):
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
        for ec in _regime_configs(cfg, seeds[1:]):
            sub = run_experiment(ec, out_dir, workers)
            rep.rows += sub.rows
            rep.tolerances.update(sub.tolerances)
            rep.timings.update(sub.timings)
    if out_dir is not None:
        write_report(rep, out_dir)
    return rep


# -------------------------------------------------------------- regime map

def fit_fluctuation_exponent(a: float, n_list, samples: int, seed: int) -> float:
    """Slope of ``log sd(S_n)`` against ``log n`` with ``r = floor(n^a)``.

    ``r`` is capped at ``(n-1)//2``.  The tilt follows the regime of ``a``.
    """
    regime = "intermediate" if a < 0.75 else ("threshold" if a == 0.75 else "long")
    seeds = _cell_seeds(seed, len(n_list))
    sds = []
    for n, s in zip(n_list, seeds):
        r = min(int(math.floor(n ** a)), (n - 1) // 2)
        spec = compute_spectrum(ModelParams(n, r))
        ws = sample_magnetization(spec, default_tilt(spec.params, regime),
                                  np.random.default_rng(s), samples)
        sds.append(math.sqrt(ws.mean(lambda v: v * v)))
    return float(np.polyfit(np.log(n_list), np.log(sds), 1)[0])

