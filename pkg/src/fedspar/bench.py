"""Monte-Carlo experiment runner: scenarios, replications, coverage metrics, tables."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .dp_core import InvalidArgument, PrivacyBudget, Rng
from .estimators import (
    NegativeVarianceWarning,
    estimate_restricted_eigenvalues,
    fed_precision_matrix,
    fed_sparse_regression,
    hetero_regression,
    private_variance,
)
from .fednet import FederatedRun, LogEntry
from .inference import (
    bootstrap_simultaneous,
    ci_general,
    ci_simple,
    debias_coordinates,
    hetero_bootstrap,
    hetero_debias,
    hetero_debias_ci,
    sigma_from_variance,
    simultaneous_band,
)
from .model import HyperParams, make_true_model, sample_federation
from .untrusted_mean import aggregate_mean, simulate_reports

__all__ = [
    "ConfigError",
    "ScenarioFault",
    "ScenarioConfig",
    "ResultRow",
    "CSV_COLUMNS",
    "TABLE1_TUPLES",
    "desk_mirror",
    "default_scenarios",
    "load_config",
    "run_scenario",
    "run_simultaneous_scenario",
    "run_config",
    "emit",
    "parse_csv",
]

CSV_COLUMNS = ("n", "m", "d", "s_star", "s0", "epsilon", "est_error_mean", "est_error_sd",
               "cov", "cov_S", "cov_Sc", "ci_length", "wall_time_s")

# (n, m, d, s*, s0, eps) rows of the reference simulation table
TABLE1_TUPLES = (
    (3000, 15, 800, 15, 8, 0.8),
    (4000, 15, 800, 15, 8, 0.8),
    (5000, 15, 800, 15, 8, 0.8),
    (4000, 10, 800, 15, 8, 0.8),
    (4000, 20, 800, 15, 8, 0.8),
    (4000, 15, 600, 15, 8, 0.8),
    (4000, 15, 1000, 15, 8, 0.8),
    (4000, 15, 800, 15, 4, 0.8),
    (4000, 15, 800, 15, 12, 0.8),
    (4000, 15, 800, 10, 8, 0.8),
    (4000, 15, 800, 20, 8, 0.8),
    (4000, 15, 800, 15, 8, 0.5),
    (4000, 15, 800, 15, 8, 0.3),
)


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


class ScenarioFault(RuntimeError):
    def __init__(self, msg: str, replication: int):
        super().__init__(f"replication {replication}: {msg}")
        self.replication = replication


_MODES = ("homogeneous", "heterogeneous", "untrusted")
_G_MODES = ("all", "S", "Sc")
_CI_KINDS = ("simple", "general")


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation setting.

    Besides the design tuple, the privacy and calibration knobs live here:
    ``kappa`` (sub-Gaussian constant entering every sensitivity), ``R``
    (response truncation level), ``T`` and ``step_scale`` (iterations and
    step ``step_scale / mu_hat``), ``ci_kind`` (``simple`` or ``general``
    intervals), ``q`` (bootstrap draws) and ``simultaneous``.
    """

    n: int
    m: int
    d: int
    s_star: int
    s0: int
    epsilon: float
    delta: float | None = None
    sigma: float = 0.5
    replications: int = 50
    seed: int = 0
    alpha: float = 0.05
    G_mode: str = "all"
    mode: str = "heterogeneous"
    simultaneous: bool = False
    ci_kind: str = "simple"
    kappa: float = 0.002
    R: float = 4.0
    T: int = 30
    step_scale: float = 0.5
    q: int = 300
    stage_split: float = 0.5
    centered_bootstrap: bool = False
    k_sub: int | None = None
    mean_signal: float = 0.25
    label: str = ""

    def __post_init__(self):
        for name in ("n", "m", "d", "s_star", "replications", "T", "q"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not 0 <= self.s0 <= self.s_star <= self.d:
            raise ConfigError("need 0 <= s0 <= s_star <= d")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.delta is not None and not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.sigma < 0:
            raise ConfigError("sigma must be nonnegative")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {_MODES}")
        if self.G_mode not in _G_MODES:
            raise ConfigError(f"G_mode must be one of {_G_MODES}")
        if self.ci_kind not in _CI_KINDS:
            raise ConfigError(f"ci_kind must be one of {_CI_KINDS}")
        for name in ("kappa", "R", "step_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.stage_split < 1:
            raise ConfigError("stage_split must lie in (0, 1)")
        if self.k_sub is not None and not 1 <= self.k_sub <= self.d:
            raise ConfigError("k_sub must lie in [1, d]")

    @property
    def delta_value(self) -> float:
        return 1.0 / (2 * self.m * self.n) if self.delta is None else self.delta

    @property
    def private(self) -> bool:
        return math.isfinite(self.epsilon)

    @property
    def budget(self) -> PrivacyBudget:
        eps = self.epsilon if self.private else 1.0
        return PrivacyBudget(eps, self.delta_value)

    def hyper(self) -> HyperParams:
        hetero = self.mode == "heterogeneous"
        return HyperParams.from_primitives(
            self.m, self.n, self.d, self.s_star, self.budget, s_star=self.s_star,
            s0=self.s0 if hetero else 0, s1=self.s_star - self.s0 if hetero else 0,
            T=self.T, R=self.R, kappa=self.kappa, step_scale=self.step_scale,
            private=self.private)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "ScenarioConfig":
        if not isinstance(obj, dict):
            raise ConfigError("a scenario must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"n", "m", "d", "s_star", "s0", "epsilon"} - set(obj)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        vals = dict(obj)
        if isinstance(vals["epsilon"], str) and vals["epsilon"].lower() in ("inf", "infinity"):
            vals["epsilon"] = math.inf
        try:
            return cls(**vals)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def with_(self, **changes) -> "ScenarioConfig":
        try:
            return dataclasses.replace(self, **changes)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class ResultRow:
    """Aggregated metrics of one scenario.

    ``cov`` is ``(|S| cov_S + |S^c| cov_Sc) / d``: the average over all
    coordinates of the per-coordinate coverage. ``joint_cov`` is the share
    of (replication, machine) pairs where every coordinate of ``G`` was
    covered; it is only filled for simultaneous scenarios.
    """

    n: int
    m: int
    d: int
    s_star: int
    s0: int
    epsilon: float
    est_error_mean: float
    est_error_sd: float
    cov: float
    cov_S: float
    cov_Sc: float
    ci_length_mean: float
    wall_time_s: float
    lengths: dict[str, float] = field(default_factory=dict, compare=False)
    joint_cov: dict[str, float] = field(default_factory=dict, compare=False)
    budget_total: PrivacyBudget | None = field(default=None, compare=False)
    mode: str = field(default="", compare=False)

    def csv_record(self) -> dict[str, Any]:
        rec = {c: getattr(self, c) for c in CSV_COLUMNS if c != "ci_length"}
        rec["ci_length"] = self.ci_length_mean
        return rec


# ----------------------------------------------------------------------------- scenario lists

def desk_mirror(t: tuple) -> tuple:
    """Shrink ``n``, ``m``, ``d`` by 8, 3 and 8."""
    n, m, d, s_star, s0, eps = t
    return (max(n // 8, 1), max(m // 3, 1), max(d // 8, s_star), s_star, s0, eps)


def default_scenarios(full: bool = False, **overrides) -> list[ScenarioConfig]:
    """The reference table rows at full size (``full``) or their desk mirrors."""
    out = []
    for t in TABLE1_TUPLES:
        n, m, d, s_star, s0, eps = t if full else desk_mirror(t)
        label = "({},{},{},{},{},{})".format(*t) + ("" if full else " desk")
        out.append(ScenarioConfig(n=n, m=m, d=d, s_star=s_star, s0=s0, epsilon=eps,
                                  label=label, **overrides))
    return out


def load_config(path: str | Path, *, full: bool = False,
                overrides: dict[str, Any] | None = None) -> list[ScenarioConfig]:
    """Parse a JSON config.

    Accepted shapes: a single scenario object; a list of them; or an object
    with optional ``"defaults"`` (shared fields), ``"scenarios"`` (list) and
    ``"suite": "default"`` (the reference rows). ``overrides`` win over the file.
    """
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    overrides = dict(overrides or {})
    if isinstance(obj, list):
        specs, defaults, suite = obj, {}, None
    elif isinstance(obj, dict) and ({"scenarios", "defaults", "suite"} & set(obj)):
        extra = set(obj) - {"scenarios", "defaults", "suite"}
        if extra:
            raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
        specs = obj.get("scenarios", [])
        defaults = obj.get("defaults", {})
        suite = obj.get("suite")
        if not isinstance(specs, list) or not isinstance(defaults, dict):
            raise ConfigError("'scenarios' must be a list and 'defaults' an object")
    elif isinstance(obj, dict):
        specs, defaults, suite = [obj], {}, None
    else:
        raise ConfigError("config must be a JSON object or list")
    out = []
    if suite is not None:
        if suite != "default":
            raise ConfigError(f"unknown suite {suite!r}")
        base = {k: v for k, v in {**defaults, **overrides}.items()}
        try:
            out.extend(default_scenarios(full=full, **base))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
    for spec in specs:
        if not isinstance(spec, dict):
            raise ConfigError("each scenario must be an object")
        out.append(ScenarioConfig.from_dict({**defaults, **spec, **overrides}))
    if not out:
        raise ConfigError("config defines no scenarios")
    return out


# ----------------------------------------------------------------------------- replications

@dataclass
class _Rep:
    error: float
    cover: list[np.ndarray]  # one bool array over coordinates per machine evaluated
    support: list[np.ndarray]
    length: float
    lengths: dict[str, float] = field(default_factory=dict)
    joint: dict[str, list[bool]] = field(default_factory=dict)
    budget: PrivacyBudget | None = None
    log: tuple[LogEntry, ...] = ()


def _g_sets(support: np.ndarray, d: int) -> dict[str, np.ndarray]:
    return {"all": np.arange(d), "S": support, "Sc": np.setdiff1d(np.arange(d), support)}


def _total_budget(run: FederatedRun) -> PrivacyBudget | None:
    parts = [b for _, b in run.budget_log if isinstance(b, PrivacyBudget)]
    if not parts:
        return None
    total = parts[0]
    for b in parts[1:]:
        total = total + b
    return total


def _homogeneous(cfg: ScenarioConfig, rng: Rng, simultaneous: bool) -> _Rep:
    tm = make_true_model(cfg.m, cfg.d, cfg.s_star, cfg.s0, cfg.sigma, rng.child("model"),
                         homogeneous=True)
    data = sample_federation(tm, cfg.n, rng.child("data"))
    hyper = cfg.hyper()
    run = FederatedRun(data, hyper, rng.child("run"))
    beta = tm.beta_per_machine[0]
    support = np.flatnonzero(beta)
    est = fed_sparse_regression(run, hyper)
    prec = fed_precision_matrix(run, hyper)
    sigma_hat = sigma_from_variance(private_variance(run, est.beta_hat, hyper, rng.child("var")))
    dcs = debias_coordinates(run, est.beta_hat, prec.theta_hat, hyper, rng.child("debias"))
    beta_u = np.array([dc.beta_u for dc in dcs])
    N = cfg.m * cfg.n
    error = float(np.sum((est.beta_hat - beta) ** 2))
    if not simultaneous:
        eigen = estimate_restricted_eigenvalues(run, hyper, rng=rng.child("eigen")) \
            if cfg.ci_kind == "general" else None
        lo, hi = np.empty(cfg.d), np.empty(cfg.d)
        for dc in dcs:
            ci = (ci_simple(dc, sigma_hat, cfg.alpha, N) if eigen is None else
                  ci_general(dc, sigma_hat, eigen, hyper, cfg.alpha, cfg.m, cfg.n))
            lo[dc.k], hi[dc.k] = ci.lower, ci.upper
        cover = (lo <= beta) & (beta <= hi)
        return _Rep(error, [cover], [support], float(np.mean(hi - lo)),
                    budget=_total_budget(run), log=run.log.entries)
    cover = np.zeros(cfg.d, dtype=bool)
    lengths, joint = {}, {}
    for name, G in _g_sets(support, cfg.d).items():
        if G.size == 0:
            continue
        bq = bootstrap_simultaneous(run, est.beta_hat, prec.theta_hat, hyper, G, cfg.q,
                                    1 - cfg.alpha, rng.child("boot", name),
                                    centered=cfg.centered_bootstrap)
        band = simultaneous_band(beta_u, G, bq.c_u, sigma_hat / math.sqrt(N), 1 - cfg.alpha)
        hit = band.covers(beta[G])
        lengths[name] = float(2 * band.half_width[0])
        joint[name] = [bool(np.all(hit))]
        if name != "all":
            cover[G] = hit
    return _Rep(error, [cover], [support], lengths[cfg.G_mode if cfg.G_mode in lengths else "all"],
                lengths, joint, _total_budget(run), run.log.entries)


def _heterogeneous(cfg: ScenarioConfig, rng: Rng, simultaneous: bool) -> _Rep:
    tm = make_true_model(cfg.m, cfg.d, cfg.s_star, cfg.s0, cfg.sigma, rng.child("model"))
    data = sample_federation(tm, cfg.n, rng.child("data"))
    hyper = cfg.hyper()
    run = FederatedRun(data, hyper, rng.child("run"))
    est = hetero_regression(run, hyper, stage_split=cfg.stage_split, rng=rng.child("hetero"))
    B = tm.beta_per_machine
    error = float(np.mean(np.sum((est.beta_hat_per_machine - B) ** 2, axis=1)))
    prec = fed_precision_matrix(run, hyper)
    sigma_hat = sigma_from_variance(
        private_variance(run, est.beta_hat_per_machine, hyper, rng.child("var")))
    eigen = None
    if cfg.ci_kind == "general" and not simultaneous:
        eigen = estimate_restricted_eigenvalues(run, hyper, rng=rng.child("eigen"))
    kind = "hetero" if cfg.ci_kind == "general" else "hetero_simple"
    covers, supports, lens = [], [], []
    lengths: dict[str, list[float]] = {}
    joint: dict[str, list[bool]] = {}
    for i in range(cfg.m):
        beta = B[i]
        support = np.flatnonzero(beta)
        dcs = hetero_debias(run, i, est.beta_hat_per_machine[i], prec.theta_hat, hyper,
                            rng.child("debias"))
        beta_u = np.array([dc.beta_u for dc in dcs])
        if not simultaneous:
            lo, hi = np.empty(cfg.d), np.empty(cfg.d)
            for dc in dcs:
                ci = hetero_debias_ci(dc, sigma_hat, eigen, hyper, cfg.alpha, kind=kind)
                lo[dc.k], hi[dc.k] = ci.lower, ci.upper
            covers.append((lo <= beta) & (beta <= hi))
            lens.append(float(np.mean(hi - lo)))
        else:
            cover = np.zeros(cfg.d, dtype=bool)
            for name, G in _g_sets(support, cfg.d).items():
                if G.size == 0:
                    continue
                bq = hetero_bootstrap(run, i, prec.theta_hat, sigma_hat, hyper, G, cfg.q,
                                      1 - cfg.alpha, rng.child("boot", name))
                band = simultaneous_band(beta_u, G, bq.c_u, 1 / math.sqrt(cfg.n), 1 - cfg.alpha)
                hit = band.covers(beta[G])
                lengths.setdefault(name, []).append(float(2 * band.half_width[0]))
                joint.setdefault(name, []).append(bool(np.all(hit)))
                if name != "all":
                    cover[G] = hit
            covers.append(cover)
            lens.append(lengths.get(cfg.G_mode, lengths["all"])[-1])
        supports.append(support)
    return _Rep(error, covers, supports, float(np.mean(lens)),
                {k: float(np.mean(v)) for k, v in lengths.items()}, joint,
                _total_budget(run), run.log.entries)


def _untrusted(cfg: ScenarioConfig, rng: Rng) -> _Rep:
    mu = np.zeros(cfg.d)
    mu[: cfg.s_star] = cfg.mean_signal
    k_sub = cfg.d if cfg.k_sub is None else cfg.k_sub
    eps = cfg.epsilon
    reports = simulate_reports(mu, cfg.m, cfg.n, eps, rng.child("reports"), k_sub)
    est = aggregate_mean(reports, cfg.n, eps, k_sub)
    return _Rep(float(np.sum((est.mu_hat - mu) ** 2)), [], [], math.nan,
                budget=PrivacyBudget(eps, 0.0) if math.isfinite(eps) else None)


def _replicate(cfg: ScenarioConfig, r: int, simultaneous: bool) -> _Rep:
    rng = Rng(cfg.seed).child("replication", r)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NegativeVarianceWarning)
            if cfg.mode == "untrusted":
                return _untrusted(cfg, rng)
            if cfg.mode == "homogeneous":
                return _homogeneous(cfg, rng, simultaneous)
            return _heterogeneous(cfg, rng, simultaneous)
    except ScenarioFault:
        raise
    except (InvalidArgument, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise ScenarioFault(f"{type(exc).__name__}: {exc}", r) from exc


def _aggregate(cfg: ScenarioConfig, reps: Sequence[_Rep], wall: float) -> ResultRow:
    errs = np.array([rp.error for rp in reps])
    sd = float(np.std(errs, ddof=1)) if errs.size > 1 else 0.0
    if cfg.mode == "untrusted":
        cov = cov_S = cov_Sc = length = math.nan
    else:
        cs, ccs = [], []
        for rp in reps:
            for cover, support in zip(rp.cover, rp.support):
                mask = np.zeros(cfg.d, dtype=bool)
                mask[support] = True
                cs.append(cover[mask].mean() if mask.any() else math.nan)
                ccs.append(cover[~mask].mean() if (~mask).any() else math.nan)
        cov_S = float(np.mean(cs))
        cov_Sc = float(np.mean(ccs))
        k = cfg.s_star
        cov = (k * (cov_S if k else 0.0) + (cfg.d - k) * (cov_Sc if k < cfg.d else 0.0)) / cfg.d
        length = float(np.mean([rp.length for rp in reps]))
    lengths = {}
    joint = {}
    if reps and reps[0].lengths:
        for name in reps[0].lengths:
            lengths[name] = float(np.mean([rp.lengths[name] for rp in reps]))
            joint[name] = float(np.mean([x for rp in reps for x in rp.joint[name]]))
    return ResultRow(cfg.n, cfg.m, cfg.d, cfg.s_star, cfg.s0, cfg.epsilon, float(errs.mean()),
                     sd, cov, cov_S, cov_Sc, length, wall, lengths, joint, reps[0].budget,
                     cfg.mode)


def _run(cfg: ScenarioConfig, simultaneous: bool, workers: int, record_time: bool,
         log_sink: list | None) -> ResultRow:
    t0 = time.perf_counter()
    idx = range(cfg.replications)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(_replicate, [cfg] * len(idx), idx, [simultaneous] * len(idx)))
    else:
        reps = [_replicate(cfg, r, simultaneous) for r in idx]
    if log_sink is not None:
        for r, rp in zip(idx, reps):
            log_sink.extend((r, e) for e in rp.log)
    wall = time.perf_counter() - t0 if record_time else 0.0
    return _aggregate(cfg, reps, wall)


def run_scenario(cfg: ScenarioConfig, *, workers: int = 1, record_time: bool = True,
                 log_sink: list | None = None) -> ResultRow:
    """Coordinate-wise intervals over ``cfg.replications`` seeded replications.

    Replication ``r`` uses the stream ``Rng(cfg.seed).child("replication", r)``;
    results are merged in replication order. ``record_time=False`` zeroes the
    wall-time field so that rows are byte-for-byte reproducible.
    """
    return _run(cfg, cfg.simultaneous, workers, record_time, log_sink)


def run_simultaneous_scenario(cfg: ScenarioConfig, **kw) -> ResultRow:
    """Bootstrap bands for ``G`` in all / S / S^c.

    ``cov_S`` and ``cov_Sc`` are per-coordinate coverages of the bands built
    for ``G = S`` and ``G = S^c``; ``lengths`` holds the band length for each
    ``G``, ``joint_cov`` the all-covered rate, and ``ci_length_mean`` the
    length for ``cfg.G_mode``.
    """
    return _run(cfg, True, kw.get("workers", 1), kw.get("record_time", True),
                kw.get("log_sink"))


def run_config(cfgs: Iterable[ScenarioConfig], **kw) -> list[ResultRow]:
    return [run_scenario(c, **kw) for c in cfgs]


# ----------------------------------------------------------------------------- output

def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit(rows: Sequence[ResultRow], format: str = "csv", path: str | Path | None = None) -> str:
    """Render rows as CSV (exact float repr) or a markdown table; write to ``path`` if given."""
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            rec = row.csv_record()
            w.writerow([_fmt(rec[c]) for c in CSV_COLUMNS])
        text = buf.getvalue()
    elif format in ("md", "markdown"):
        head = ["(n, m, d, s*, s0, eps)", "Estimation Error (Sd)", "cov", "cov_S", "cov_Sc",
                "length", "time (s)"]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for r in rows:
            eps = f"{r.epsilon:g}"
            lines.append(
                f"| ({r.n},{r.m},{r.d},{r.s_star},{r.s0},{eps}) | {r.est_error_mean:.4f} "
                f"({r.est_error_sd:.4f}) | {r.cov:.3f} | {r.cov_S:.3f} | {r.cov_Sc:.3f} | "
                f"{r.ci_length_mean:.4f} | {r.wall_time_s:.1f} |")
        text = "\n".join(lines) + "\n"
    else:
        raise InvalidArgument(f"unknown format {format!r}")
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


_INT_COLS = {"n", "m", "d", "s_star", "s0"}


def parse_csv(text: str) -> list[ResultRow]:
    """Inverse of ``emit(rows, "csv")`` for the CSV columns."""
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise InvalidArgument(f"unexpected CSV header {reader.fieldnames}")
    out = []
    for rec in reader:
        vals = {c: (int(v) if c in _INT_COLS else float(v)) for c, v in rec.items()}
        vals["ci_length_mean"] = vals.pop("ci_length")
        out.append(ResultRow(**vals))
    return out
