"""Config-driven experiment orchestration.

Every experiment is described by an :class:`ExperimentConfig`. Runs are
deterministic in ``(config, seed)``: each trial draws from its own
``SeedSequence([seed, m, n_p, n_q, d, trial])`` stream, so cells are
independent of each other and of the worker count.

Outputs go to ``config.out``: one CSV per table, plus best-effort SVG charts.
The run manifest is written by the caller (see :mod:`kliepchange.cli`) after
everything else.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from dataclasses import replace as _replace
from typing import Optional

import numpy as np

from . import baseline, diagnostics, model, optim, samplers
from .kliep import KliepProblem

__all__ = [
    "KINDS",
    "ConfigError",
    "NqRule",
    "DRule",
    "ExperimentConfig",
    "CellResult",
    "TrialRecord",
    "cell_seed",
    "curve_gap",
    "run_success_rate",
    "tune_C",
    "run_roc_compare",
    "run_real",
    "run_bootstrap",
    "run_diagnose",
    "run_experiment",
    "write_svg_lines",
]

log = logging.getLogger(__name__)

KINDS = ("success-rate", "nq-coupling", "d-sweep", "non-gaussian", "roc", "real", "bootstrap", "diagnose")
SUCCESS_KINDS = ("success-rate", "nq-coupling", "d-sweep", "non-gaussian")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class NqRule:
    """How ``n_q`` follows ``n_p``.

    ``fixed``: ``value``; ``quadratic``: ``max(floor, ceil(value * n_p**2))``;
    ``linear``: ``ceil(value * n_p)``; ``equal``: ``n_p``.
    """

    kind: str = "fixed"
    value: float = 1000
    floor: int = 50

    def __post_init__(self):
        if self.kind not in ("fixed", "quadratic", "linear", "equal"):
            raise ConfigError(f"unknown n_q rule {self.kind!r}")
        if self.kind != "equal" and not self.value > 0:
            raise ConfigError("n_q rule value must be positive")

    def __call__(self, n_p: int) -> int:
        if self.kind == "fixed":
            return int(self.value)
        if self.kind == "quadratic":
            return max(int(self.floor), math.ceil(self.value * n_p * n_p))
        if self.kind == "linear":
            return math.ceil(self.value * n_p)
        return int(n_p)


@dataclass(frozen=True)
class DRule:
    """Number of changed edges: a list of fixed values or ``floor(sqrt(m))``."""

    kind: str = "fixed"
    values: tuple = (4,)

    def __post_init__(self):
        if self.kind not in ("fixed", "sqrt"):
            raise ConfigError(f"unknown d rule {self.kind!r}")
        if self.kind == "fixed" and (not self.values or any(int(v) < 0 for v in self.values)):
            raise ConfigError("d values must be non-empty and non-negative")

    def __call__(self, m: int) -> tuple:
        if self.kind == "sqrt":
            return (math.isqrt(m),)
        return tuple(int(v) for v in self.values)


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one run.

    The ``n_p`` axis is given either as absolute sizes (``np_grid``) or as
    multiples of ``log m`` (``ratio_grid``, ``n_p = round(ratio * log m)``).

    Slice sampling uses ``burn_in``, ``thin`` and ``n_chains`` (0 means one
    chain per row). ``standardize`` scales feature columns by their Q-sample
    standard deviation. With ``tune_grid`` set, success-rate kinds first pick
    ``C`` from it on ``tune_m`` under ``tune_seed`` (see :func:`tune_C`).
    """

    kind: str
    out: Optional[str] = None
    family: str = "gaussian"
    topology: str = "lattice"
    connectivity: float = 0.2
    m_grid: tuple = (9,)
    np_grid: Optional[tuple] = None
    ratio_grid: Optional[tuple] = None
    nq_rule: NqRule = field(default_factory=NqRule)
    d_rule: DRule = field(default_factory=DRule)
    C: float = 1.0
    trials: int = 50
    seed: int = 0
    threads: int = 1
    theta0: Optional[float] = None
    theta1: Optional[float] = None
    radius: float = 15.0
    burn_in: int = 1000
    thin: int = 5
    n_chains: Optional[int] = None
    max_iters: int = 2000
    tol: float = 1e-8
    standardize: bool = False
    # optional C tuning before a success-rate run
    tune_grid: Optional[tuple] = None
    tune_m: Optional[int] = None
    tune_seed: Optional[int] = None
    # roc
    n_lambdas: int = 40
    lambda_ratio: float = 1e-3
    eps_fractions: tuple = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    admm_iters: int = 5000
    # real data / bootstrap
    p_csv: Optional[str] = None
    q_csv: Optional[str] = None
    fmap: str = "quadratic"
    bandwidth: float = 0.5
    target_support: int = 10
    lambdas: Optional[tuple] = None
    bootstrap_trials: int = 0
    swap: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.family not in ("gaussian", "eight"):
            raise ConfigError(f"unknown model family {self.family!r}")
        if self.topology not in ("lattice", "random"):
            raise ConfigError(f"unknown topology {self.topology!r}")
        if self.fmap not in ("quadratic", "rbf", "eight"):
            raise ConfigError(f"unknown feature map {self.fmap!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.n_chains is not None and self.n_chains < 0:
            raise ConfigError("n_chains must be >= 0")
        if self.kind == "real":
            if not (self.p_csv and self.q_csv):
                raise ConfigError("real-data runs need p_csv and q_csv")
            if self.target_support < 0:
                raise ConfigError("target_support must be >= 0")
            return
        if not self.m_grid:
            raise ConfigError("m_grid is empty")
        for m in self.m_grid:
            if int(m) < 2:
                raise ConfigError("every m must be >= 2")
            if self.topology == "lattice" and math.isqrt(int(m)) ** 2 != int(m):
                raise ConfigError(f"lattice topology needs square m, got {m}")
        if (self.np_grid is None) == (self.ratio_grid is None):
            raise ConfigError("give exactly one of np_grid and ratio_grid")
        grid = self.np_grid if self.np_grid is not None else self.ratio_grid
        if not grid or any(float(v) <= 0 for v in grid):
            raise ConfigError("n_p grid must be non-empty and positive")
        if not self.C > 0:
            raise ConfigError("C must be positive")
        if self.tune_grid is not None and (not self.tune_grid or any(float(c) <= 0 for c in self.tune_grid)):
            raise ConfigError("tune_grid must be non-empty and positive")

    # -- construction -------------------------------------------------------
    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        """Build from a JSON-like mapping; unknown keys are rejected."""
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "kind" not in doc:
            raise ConfigError("config needs a 'kind'")
        kw = dict(doc)
        try:
            if isinstance(kw.get("nq_rule"), dict):
                kw["nq_rule"] = NqRule(**kw["nq_rule"])
            if isinstance(kw.get("d_rule"), dict):
                d = dict(kw["d_rule"])
                if "values" in d:
                    d["values"] = tuple(d["values"])
                kw["d_rule"] = DRule(**d)
            for key in ("m_grid", "np_grid", "ratio_grid", "eps_fractions", "lambdas", "tune_grid"):
                if kw.get(key) is not None:
                    kw[key] = tuple(kw[key])
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        d["d_rule"]["values"] = list(d["d_rule"]["values"])
        return d

    # -- derived quantities ---------------------------------------------------
    def n_p_values(self, m: int) -> list:
        if self.np_grid is not None:
            return [int(v) for v in self.np_grid]
        return [max(1, int(round(float(r) * math.log(m)))) for r in self.ratio_grid]

    def solver(self, lam: float) -> optim.SolverConfig:
        return optim.SolverConfig(lam=lam, max_iters=self.max_iters, tol=self.tol)

    def feature_map(self) -> model.FeatureMap:
        if self.fmap == "rbf":
            return model.rbf(self.bandwidth)
        if self.fmap == "eight":
            return samplers.eight_feature_map()
        return model.quadratic()


@dataclass
class CellResult:
    m: int
    n_p: int
    n_q: int
    d: int
    trials: int
    successes: int
    failures: int = 0  # trials whose solve did not converge or raised

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials

    @property
    def stderr(self) -> float:
        p = self.success_rate
        return math.sqrt(p * (1.0 - p) / self.trials)

    @property
    def ratio(self) -> float:
        """``n_p / log m``, the alignment axis."""
        return self.n_p / math.log(self.m)

    def row(self) -> dict:
        return {"m": self.m, "n_p": self.n_p, "n_q": self.n_q, "d": self.d,
                "np_over_logm": f"{self.ratio:.6g}", "trials": self.trials,
                "successes": self.successes, "success_rate": f"{self.success_rate:.6g}",
                "stderr": f"{self.stderr:.6g}", "failures": self.failures}


@dataclass
class TrialRecord:
    instance: str
    m: int
    n_p: int
    n_q: int
    d: int
    exact: bool
    tpr: float
    tnr: float
    converged: bool


def cell_seed(base: int, m: int, n_p: int, n_q: int, d: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base), int(m), int(n_p), int(n_q), int(d), int(trial)])


# -- instance generation ------------------------------------------------------

def _graph(config: ExperimentConfig, m: int, rng: np.random.Generator) -> samplers.GraphSpec:
    if config.topology == "lattice":
        return samplers.build_lattice(math.isqrt(m))
    return samplers.build_random(m, config.connectivity, rng)


def _instance(config: ExperimentConfig, m: int, d: int, rng: np.random.Generator) -> samplers.ChangeInstance:
    graph = _graph(config, m, rng)
    kw = {}
    if config.theta0 is not None:
        kw["theta0"] = config.theta0
    if config.theta1 is not None:
        kw["theta1"] = config.theta1
    if config.family == "gaussian":
        return samplers.make_gaussian_change(graph, d, rng, **kw)
    return samplers.make_eight_change(graph, d, rng, radius=config.radius, **kw)


def _sample(config: ExperimentConfig, spec, n: int, rng: np.random.Generator) -> np.ndarray:
    if config.family == "gaussian":
        return samplers.sample_gaussian(spec, n, rng)
    # n_chains = 0 runs one independent chain per output row
    chains = n if config.n_chains == 0 else config.n_chains
    return samplers.sample_slice(spec, n, rng, burn_in=config.burn_in, thin=config.thin, n_chains=chains)


def _draw(config, m, n_p, n_q, d, trial):
    rng = np.random.default_rng(cell_seed(config.seed, m, n_p, n_q, d, trial))
    inst = _instance(config, m, d, rng)
    xp = _sample(config, inst.p_spec, n_p, rng)
    xq = _sample(config, inst.q_spec, n_q, rng)
    return inst, xp, xq


# -- success-rate experiments ---------------------------------------------------

def _success_trial(config: ExperimentConfig, m, n_p, n_q, d, trial) -> TrialRecord:
    ident = f"m{m}-np{n_p}-nq{n_q}-d{d}-t{trial}"
    try:
        inst, xp, xq = _draw(config, m, n_p, n_q, d, trial)
        problem = KliepProblem.from_samples(xp, xq, inst.fmap, standardize=config.standardize)
        rep = optim.solve(problem, config.solver(optim.lambda_scaling(n_p, m, config.C)))
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        log.warning("trial %s failed: %s", ident, exc)
        return TrialRecord(ident, m, n_p, n_q, d, False, float("nan"), float("nan"), False)
    r = diagnostics.compare_support(rep.support, inst.support, diagnostics.all_pairs(m))
    # a non-converged solve is a failed trial
    return TrialRecord(ident, m, n_p, n_q, d, r.exact and rep.converged, r.tpr, r.tnr, rep.converged)


def _map(config: ExperimentConfig, func, jobs: list) -> list:
    """Run ``func(*job)`` for each job, in order, optionally with joblib workers."""
    if config.threads > 1 and len(jobs) > 1:
        from joblib import Parallel, delayed

        return Parallel(n_jobs=config.threads)(delayed(func)(*job) for job in jobs)
    return [func(*job) for job in jobs]


def run_success_rate(config: ExperimentConfig) -> tuple:
    """Exact-recovery rates over the ``m x n_p x d`` grid.

    Returns ``(cells, trials)``: one :class:`CellResult` per cell and every
    :class:`TrialRecord`. Failed trials count as unsuccessful.
    """
    cells, records = [], []
    for m in config.m_grid:
        m = int(m)
        for d in config.d_rule(m):
            for n_p in config.n_p_values(m):
                n_q = config.nq_rule(n_p)
                jobs = [(config, m, n_p, n_q, d, t) for t in range(config.trials)]
                recs = _map(config, _success_trial, jobs)
                records.extend(recs)
                cell = CellResult(m, n_p, n_q, d, len(recs), sum(r.exact for r in recs),
                                  sum(not r.converged for r in recs))
                cells.append(cell)
                log.info("m=%d d=%d n_p=%d n_q=%d success=%.3f", m, d, n_p, n_q, cell.success_rate)
    return cells, records


def _tune_trial(config: ExperimentConfig, m, n_p, n_q, d, trial, grid) -> list:
    try:
        inst, xp, xq = _draw(config, m, n_p, n_q, d, trial)
        problem = KliepProblem.from_samples(xp, xq, inst.fmap, standardize=config.standardize)
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        log.warning("tuning trial %d failed: %s", trial, exc)
        return [False] * len(grid)
    hits = []
    init = None
    # largest C first so each solve warm-starts from a sparser one
    for C in sorted(grid, reverse=True):
        rep = optim.solve(problem, config.solver(optim.lambda_scaling(n_p, m, C)), init)
        init = rep.theta
        hits.append((C, rep.converged and rep.support == inst.support))
    got = dict(hits)
    return [got[C] for C in grid]


def tune_C(config: ExperimentConfig, grid, m: Optional[int] = None, seed: Optional[int] = None) -> tuple:
    """Choose ``C`` by exact-recovery rate at the largest ``n_p`` grid point.

    Uses ``m`` (default: the first of ``m_grid``), the first ``d`` and a
    separate ``seed`` stream. Every trial draws its data once and is solved
    at each ``C``. Ties go to the median of the tied values. Returns
    ``(C, {C: rate})``.
    """
    grid = sorted(float(c) for c in grid)
    m = int(m if m is not None else config.m_grid[0])
    cfg = config if seed is None else _replace(config, seed=seed)
    d = cfg.d_rule(m)[0]
    n_p = cfg.n_p_values(m)[-1]
    n_q = cfg.nq_rule(n_p)
    jobs = [(cfg, m, n_p, n_q, d, t, grid) for t in range(cfg.trials)]
    hits = np.array(_map(cfg, _tune_trial, jobs), dtype=float)
    rates = hits.mean(axis=0)
    best = [c for c, r in zip(grid, rates) if r == rates.max()]
    chosen = best[(len(best) - 1) // 2]
    log.info("tuned C=%.4g on m=%d n_p=%d: %s", chosen, m, n_p, dict(zip(grid, rates.round(3))))
    return chosen, {c: float(r) for c, r in zip(grid, rates)}


def curve_gap(cells, n_points: int = 50) -> float:
    """Largest pairwise gap between per-``m`` success curves on a common axis.

    Each curve is linearly interpolated against ``n_p / log m`` on the overlap
    of the curves' ranges. Returns 0 with fewer than two curves and ``nan``
    when the ranges do not overlap.
    """
    curves = {}
    for c in cells:
        curves.setdefault(c.m, []).append((c.ratio, c.success_rate))
    if len(curves) < 2:
        return 0.0
    lo = max(min(x for x, _ in pts) for pts in curves.values())
    hi = min(max(x for x, _ in pts) for pts in curves.values())
    if lo > hi:
        return float("nan")
    grid = np.linspace(lo, hi, n_points)
    ys = []
    for pts in curves.values():
        pts = sorted(pts)
        ys.append(np.interp(grid, [p[0] for p in pts], [p[1] for p in pts]))
    ys = np.array(ys)
    return float((ys.max(axis=0) - ys.min(axis=0)).max())


# -- ROC comparison ---------------------------------------------------------------

def _roc_trial(config: ExperimentConfig, m, n_p, n_q, d, trial) -> dict:
    inst, xp, xq = _draw(config, m, n_p, n_q, d, trial)
    universe = diagnostics.off_diagonal_pairs(m)
    out = {"seed": trial, "m": m, "d": d, "kliep_points": [], "kliep_auc": None,
           "baseline_by_eps": [], "reason": ""}
    if not inst.support & universe:
        out["reason"] = "degenerate truth: no changed edges"
        return out
    problem = KliepProblem.from_samples(xp, xq, inst.fmap, standardize=config.standardize)
    path = optim.PathConfig(n_lambdas=config.n_lambdas, ratio=config.lambda_ratio)
    reps = optim.solve_path(problem, path, config.solver(0.0))
    roc_k = diagnostics.roc_curve([r.support for r in reps], inst.support, universe)
    out.update(kliep_points=roc_k.points, kliep_auc=roc_k.auc, reason=roc_k.reason)

    sp, sq = baseline.sample_covariance(xp), baseline.sample_covariance(xq)
    scale = float(np.abs(sp - sq).max())
    admm = baseline.AdmmConfig(max_iters=config.admm_iters)
    for frac in config.eps_fractions:
        sol = baseline.solve_diffnet(baseline.DiffNetProblem(sp, sq, frac * scale), admm)
        roc_b = diagnostics.roc_curve(baseline.threshold_sweep(sol.delta), inst.support, universe)
        out["baseline_by_eps"].append({"eps": frac * scale, "fraction": frac, "points": roc_b.points,
                                       "auc": roc_b.auc, "converged": sol.converged})
    return out


def _select_epsilon(results: list) -> None:
    """Keep, for every seed, the baseline curve at the epsilon fraction with the best mean AUC."""
    scored = [r for r in results if r["kliep_auc"] is not None and r["baseline_by_eps"]]
    if not scored:
        for r in results:
            r.update(baseline_points=[], baseline_auc=None, baseline_fraction=None,
                     baseline_nonconverged=0)
        return
    n_eps = len(scored[0]["baseline_by_eps"])
    means = []
    for j in range(n_eps):
        aucs = [r["baseline_by_eps"][j]["auc"] for r in scored]
        means.append(np.mean([a for a in aucs if a is not None]) if any(a is not None for a in aucs)
                     else -np.inf)
    best = int(np.argmax(means))
    for r in results:
        if not r["baseline_by_eps"]:
            r.update(baseline_points=[], baseline_auc=None, baseline_fraction=None,
                     baseline_nonconverged=0)
            continue
        pick = r["baseline_by_eps"][best]
        r.update(baseline_points=pick["points"], baseline_auc=pick["auc"],
                 baseline_fraction=pick["fraction"],
                 baseline_nonconverged=sum(not e["converged"] for e in r["baseline_by_eps"]))


def run_roc_compare(config: ExperimentConfig) -> list:
    """Paired KLIEP / baseline ROC curves on identical data, one entry per ``(m, seed)``.

    KLIEP sweeps its lambda path. The baseline is solved at every
    ``epsilon = frac * max|Sp - Sq|`` for ``frac`` in ``config.eps_fractions``
    and its threshold sweep is scored per epsilon; the reported baseline curve
    uses the single fraction with the highest mean AUC over the seeds of that
    ``m``. Only off-diagonal pairs are scored.
    """
    results = []
    for m in config.m_grid:
        m = int(m)
        per_m = []
        for d in config.d_rule(m):
            for n_p in config.n_p_values(m):
                n_q = config.nq_rule(n_p)
                jobs = [(config, m, n_p, n_q, d, t) for t in range(config.trials)]
                per_m.extend(_map(config, _roc_trial, jobs))
        _select_epsilon(per_m)
        results.extend(per_m)
    return results


# -- real data and bootstrap ------------------------------------------------------------

def _path_for(problem: KliepProblem, config: ExperimentConfig) -> optim.PathConfig:
    if config.lambdas is not None:
        lams = tuple(float(v) for v in config.lambdas)
    else:
        lams = None
    return optim.PathConfig(lambdas=lams, n_lambdas=config.n_lambdas, ratio=config.lambda_ratio,
                            target_support=config.target_support)


def _edge_table(rep: optim.SolverReport, problem: KliepProblem) -> list:
    # group norms in the unstandardized parameterization
    m = problem.m
    norms = np.linalg.norm(problem.to_original(rep.theta), axis=1)
    rows = []
    for k in sorted(rep.support, key=lambda k: -norms[k]):
        u, v = model.pair_from_index(k, m)
        rows.append({"u": u, "v": v, "group_norm": float(norms[k])})
    return rows


def analyze(xp, xq, config: ExperimentConfig, rng: np.random.Generator) -> dict:
    """Lambda path with the support-size stop rule, plus optional bootstrap."""
    xp = model.check_samples(xp)
    xq = model.check_samples(xq)
    if xp.shape[1] != xq.shape[1]:
        raise model.DataError(f"P has {xp.shape[1]} columns but Q has {xq.shape[1]}")
    fmap = config.feature_map()
    problem = KliepProblem.from_samples(xp, xq, fmap, standardize=config.standardize)
    path = _path_for(problem, config)
    reps = optim.solve_path(problem, path, config.solver(0.0))
    final = reps[-1]
    result = {"lambda": final.lam, "converged": final.converged,
              "edges": _edge_table(final, problem), "path_length": len(reps)}
    if config.bootstrap_trials > 0:
        summary = diagnostics.bootstrap(xp, xq, config.bootstrap_trials, fmap, path,
                                        config.solver(0.0), rng, n_jobs=config.threads,
                                        standardize=config.standardize)
        result["bootstrap"] = summary
    return result


def run_real(config: ExperimentConfig) -> dict:
    """Change graph between two CSV datasets; ``swap`` also runs with P and Q exchanged."""
    xp = model.load_csv(config.p_csv)
    xq = model.load_csv(config.q_csv)
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 0]))
    out = {"forward": analyze(xp, xq, config, rng)}
    if config.swap:
        rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 1]))
        out["swapped"] = analyze(xq, xp, config, rng)
    return out


def run_bootstrap(config: ExperimentConfig) -> dict:
    """Bootstrap edge counts on one synthetic instance per ``m`` (first ``n_p``, first ``d``)."""
    out = {}
    for m in config.m_grid:
        m = int(m)
        d = config.d_rule(m)[0]
        n_p = config.n_p_values(m)[-1]
        n_q = config.nq_rule(n_p)
        inst, xp, xq = _draw(config, m, n_p, n_q, d, 0)
        path = optim.PathConfig(n_lambdas=config.n_lambdas, ratio=config.lambda_ratio,
                                target_support=d)
        # resampling stream, separate from the data stream of trial 0
        rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), m, n_p, n_q, d, 0, 1]))
        summary = diagnostics.bootstrap(xp, xq, config.trials, inst.fmap, path,
                                        config.solver(0.0), rng, n_jobs=config.threads,
                                        standardize=config.standardize)
        out[m] = {"instance": inst, "summary": summary}
    return out


def run_diagnose(config: ExperimentConfig) -> list:
    """Assumption reports at the true parameter for each ``(m, n_p, d, trial)``."""
    reports = []
    for m in config.m_grid:
        m = int(m)
        for d in config.d_rule(m):
            for n_p in config.n_p_values(m):
                n_q = config.nq_rule(n_p)
                for t in range(config.trials):
                    inst, xp, xq = _draw(config, m, n_p, n_q, d, t)
                    problem = KliepProblem.from_samples(xp, xq, inst.fmap, standardize=config.standardize)
                    rep = diagnostics.assumption_report(problem, problem.to_scaled(inst.theta_star),
                                                       inst.support)
                    entry = {"m": m, "n_p": n_p, "n_q": n_q, "d": d, "trial": t}
                    entry.update(rep.to_dict())
                    reports.append(entry)
    return reports


# -- output -------------------------------------------------------------------------------

def _write_csv(path, rows: list, header: list) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return path


def write_svg_lines(path, series: dict, xlabel: str, ylabel: str, title: str = "",
                    ylim=(0.0, 1.0)) -> Optional[str]:
    """Minimal SVG line chart; ``series`` maps a label to ``(xs, ys)``.

    Best effort: returns None instead of raising on any failure.
    """
    try:
        w, h, pad = 480, 320, 50
        xs_all = [x for xs, _ in series.values() for x in xs]
        if not xs_all:
            return None
        x0, x1 = min(xs_all), max(xs_all)
        if x1 == x0:
            x1 = x0 + 1.0
        y0, y1 = ylim

        def sx(x):
            return pad + (x - x0) / (x1 - x0) * (w - 2 * pad)

        def sy(y):
            return h - pad - (y - y0) / (y1 - y0) * (h - 2 * pad)

        colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
                 f'<rect width="{w}" height="{h}" fill="white"/>',
                 f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
                 f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>',
                 f'<text x="{w / 2}" y="{h - 10}" text-anchor="middle" font-size="12">{xlabel}</text>',
                 f'<text x="14" y="{h / 2}" text-anchor="middle" font-size="12" '
                 f'transform="rotate(-90 14 {h / 2})">{ylabel}</text>',
                 f'<text x="{w / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>',
                 f'<text x="{pad}" y="{h - pad + 15}" font-size="10">{x0:.3g}</text>',
                 f'<text x="{w - pad}" y="{h - pad + 15}" font-size="10" text-anchor="end">{x1:.3g}</text>',
                 f'<text x="{pad - 5}" y="{h - pad}" font-size="10" text-anchor="end">{y0:.3g}</text>',
                 f'<text x="{pad - 5}" y="{pad + 4}" font-size="10" text-anchor="end">{y1:.3g}</text>']
        for i, (label, (xs, ys)) in enumerate(series.items()):
            col = colors[i % len(colors)]
            pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="2"/>')
            parts.append(f'<text x="{w - pad + 2}" y="{pad + 14 * i}" font-size="10" fill="{col}">{label}</text>')
        parts.append("</svg>")
        with open(path, "w") as fh:
            fh.write("\n".join(parts))
        return path
    except Exception as exc:  # plots never gate a run
        log.warning("SVG emission failed for %s: %s", path, exc)
        return None


TRIAL_HEADER = ["instance", "n_p", "n_q", "m", "d", "exact", "tpr", "tnr", "converged"]
CELL_HEADER = ["m", "n_p", "n_q", "d", "np_over_logm", "trials", "successes", "success_rate",
               "stderr", "failures"]


def _emit_success(config, out, cells, records) -> dict:
    files = [_write_csv(os.path.join(out, "cells.csv"), [c.row() for c in cells], CELL_HEADER),
             _write_csv(os.path.join(out, "trials.csv"),
                        [{k: getattr(r, k) for k in TRIAL_HEADER} for r in records], TRIAL_HEADER)]
    summary = {"cells": len(cells)}
    for d in sorted({c.d for c in cells}):
        sub = [c for c in cells if c.d == d]
        summary[f"curve_gap_d{d}"] = curve_gap(sub)
        series = {}
        for c in sorted(sub, key=lambda c: (c.m, c.n_p)):
            xs, ys = series.setdefault(f"m={c.m}", ([], []))
            xs.append(c.ratio)
            ys.append(c.success_rate)
        svg = write_svg_lines(os.path.join(out, f"success_d{d}.svg"), series, "n_p / log m",
                              "success rate", f"{config.kind}, d={d}")
        if svg:
            files.append(svg)
    return {"files": files, "summary": summary}


def _emit_roc(config, out, results) -> dict:
    rows, auc_rows = [], []
    for r in results:
        for method in ("kliep", "baseline"):
            for tpr, tnr in r[f"{method}_points"]:
                rows.append({"m": r["m"], "seed": r["seed"], "method": method,
                             "tpr": repr(float(tpr)), "tnr": repr(float(tnr))})
        auc_rows.append({"m": r["m"], "seed": r["seed"], "d": r["d"], "kliep_auc": r["kliep_auc"],
                         "baseline_auc": r["baseline_auc"], "baseline_eps_fraction": r["baseline_fraction"],
                         "baseline_nonconverged": r["baseline_nonconverged"], "reason": r["reason"]})
    files = [_write_csv(os.path.join(out, "roc_points.csv"), rows, ["m", "seed", "method", "tpr", "tnr"]),
             _write_csv(os.path.join(out, "auc.csv"), auc_rows,
                        ["m", "seed", "d", "kliep_auc", "baseline_auc", "baseline_eps_fraction",
                         "baseline_nonconverged", "reason"])]
    summary = {}
    for m in sorted({r["m"] for r in results}):
        ok = [r for r in results if r["m"] == m and r["kliep_auc"] is not None
              and r["baseline_auc"] is not None]
        if not ok:
            summary[f"m{m}"] = {"skipped": True}
            continue
        ka = [r["kliep_auc"] for r in ok]
        ba = [r["baseline_auc"] for r in ok]
        summary[f"m{m}"] = {"mean_kliep_auc": float(np.mean(ka)), "mean_baseline_auc": float(np.mean(ba)),
                            "kliep_wins": int(sum(k > b for k, b in zip(ka, ba))), "seeds": len(ok)}
        first = ok[0]
        series = {}
        for method in ("kliep", "baseline"):
            pts = sorted((1.0 - tnr, tpr) for tpr, tnr in first[f"{method}_points"])
            series[method] = ([0.0] + [p[0] for p in pts] + [1.0], [0.0] + [p[1] for p in pts] + [1.0])
        svg = write_svg_lines(os.path.join(out, f"roc_m{m}.svg"), series, "FPR", "TPR",
                              f"ROC m={m}, seed {first['seed']}")
        if svg:
            files.append(svg)
    return {"files": files, "summary": summary}


def _emit_analysis(out, tag, res) -> list:
    files = [_write_csv(os.path.join(out, f"edges_{tag}.csv"), res["edges"], ["u", "v", "group_norm"])]
    if "bootstrap" in res:
        files.append(_write_bootstrap(os.path.join(out, f"bootstrap_{tag}.csv"), res["bootstrap"], None, None))
    return files


def _write_bootstrap(path, summary, m, truth) -> str:
    rows = []
    for k in sorted(summary.counts):
        row = {"pair": k, "count": summary.counts[k]}
        if m is not None:
            u, v = model.pair_from_index(k, m)
            row.update(u=u, v=v, true_edge=k in truth)
        rows.append(row)
    header = ["pair", "count"] if m is None else ["pair", "u", "v", "count", "true_edge"]
    return _write_csv(path, rows, header)


def run_experiment(config: ExperimentConfig) -> dict:
    """Dispatch on ``config.kind``, write result files to ``config.out``.

    Returns ``{"files": [...], "summary": {...}}`` for the manifest.
    """
    if not config.out:
        raise ConfigError("an output directory is required")
    out = config.out
    os.makedirs(out, exist_ok=True)
    t0 = time.time()
    if config.kind in SUCCESS_KINDS:
        tuning = None
        if config.tune_grid is not None:
            seed = config.tune_seed if config.tune_seed is not None else config.seed + 1
            C, table = tune_C(config, config.tune_grid, config.tune_m, seed)
            config = _replace(config, C=C)
            tuning = {"C": C, "m": config.tune_m or int(config.m_grid[0]), "seed": seed,
                      "rates": {f"{c:g}": r for c, r in table.items()}}
        cells, records = run_success_rate(config)
        res = _emit_success(config, out, cells, records)
        if tuning:
            res["summary"]["tuning"] = tuning
    elif config.kind == "roc":
        res = _emit_roc(config, out, run_roc_compare(config))
    elif config.kind == "real":
        r = run_real(config)
        files = []
        summary = {}
        for tag, sub in r.items():
            files.extend(_emit_analysis(out, tag, sub))
            summary[tag] = {"lambda": sub["lambda"], "n_edges": len(sub["edges"]),
                            "converged": sub["converged"]}
        res = {"files": files, "summary": summary}
    elif config.kind == "bootstrap":
        r = run_bootstrap(config)
        files, summary = [], {}
        for m, entry in r.items():
            inst, s = entry["instance"], entry["summary"]
            files.append(_write_bootstrap(os.path.join(out, f"bootstrap_m{m}.csv"), s, m, inst.support))
            summary[f"m{m}"] = {"trials": s.trials, "failures": s.failures,
                                "true_edges": sorted(inst.support)}
        res = {"files": files, "summary": summary}
    else:
        reports = run_diagnose(config)
        path = os.path.join(out, "assumptions.json")
        with open(path, "w") as fh:
            json.dump(reports, fh, indent=2)
        res = {"files": [path], "summary": {"reports": len(reports)}}
    res["summary"]["seconds"] = round(time.time() - t0, 3)
    return res
