"""Monte Carlo rejection-rate experiments, CSV ingestion and reporting."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import binomtest, norm

from . import cit, drt
from .core import Cond2STError, PairedData, TestOutcome, make_rng, pool, split_paired
from .ratio import estimate_ratio
from .synth import ScenarioConfig, gen_scenario, oracle_ratio

log = logging.getLogger(__name__)

JOBS_ENV = "COND2ST_JOBS"


class ConfigError(Cond2STError, ValueError):
    pass


class ParseError(Cond2STError, ValueError):
    def __init__(self, msg: str, row: int | None = None, column: str | None = None):
        loc = ", ".join(s for s in (f"row {row}" if row is not None else "", f"column {column!r}" if column else "") if s)
        super().__init__(f"{msg} ({loc})" if loc else msg)
        self.row = row
        self.column = column


class GroupMissing(Cond2STError, ValueError):
    pass


# ---------------------------------------------------------------------------
# method registry
#
# A method id is ``name`` or ``name:ratio`` where ratio is LL (default), KLR
# or oracle.  The oracle needs a ScenarioConfig and so only works in
# simulations.

MethodFn = Callable[[PairedData, np.random.Generator, float, "ScenarioConfig | None"], TestOutcome]


def _ratio_source(kind: str, cfg: ScenarioConfig | None):
    if kind == "oracle":
        if cfg is None:
            raise ConfigError("the oracle ratio is only available for synthetic scenarios")
        return oracle_ratio(cfg)
    return kind


def _drt_method(fn):
    def run(data, rng, alpha, cfg=None, kind="LL"):
        return fn(data, drt.DrtConfig(ratio=_ratio_source(kind, cfg), alpha=alpha), rng)

    return run


def _mean_method(data, rng, alpha, cfg=None, kind="LL"):
    src = _ratio_source(kind, cfg)
    if callable(src):
        return drt.mean_comparison(data, src, alpha=alpha)
    fit, evaluation = split_paired(data, 0.5, rng)
    return drt.mean_comparison(evaluation, estimate_ratio(fit.x1, fit.x2, src), alpha=alpha)


def _gcm_method(regressor, via_converter=True):
    def run(data, rng, alpha, cfg=None, kind=None):
        adapter = cit.CitAdapter.gcm(regressor, regressor, alpha=alpha)
        if via_converter:
            return cit.convert(data, adapter, rng)
        return adapter.inner_test(pool(data))

    return run


def _always_reject(data, rng, alpha, cfg=None, kind=None):
    return TestOutcome(math.inf, 0.0, True, alpha, "always_reject", {})


def _uniform_p(data, rng, alpha, cfg=None, kind=None):
    p = float(rng.random())
    return TestOutcome(float(norm.isf(p)), p, p <= alpha, alpha, "uniform_p", {})


METHODS: dict[str, Callable] = {
    "gcm_lm": _gcm_method("linear"),
    "gcm_krr": _gcm_method("kernel_ridge"),
    "gcm_lm_pooled": _gcm_method("linear", via_converter=False),
    "clf": _drt_method(drt.classifier_test),
    "clf_cv": _drt_method(drt.classifier_test_cv),
    "mmd": _drt_method(drt.mmd_linear_test),
    "mmd_cv": _drt_method(drt.mmd_linear_test_cv),
    "mean": _mean_method,
    "always_reject": _always_reject,
    "uniform_p": _uniform_p,
}
_RATIO_AWARE = {"clf", "clf_cv", "mmd", "mmd_cv", "mean"}


def resolve_method(method_id: str) -> Callable:
    """Return ``fn(data, rng, alpha, cfg)`` for a method id such as ``"mmd_cv:KLR"``."""
    name, _, kind = method_id.partition(":")
    if name not in METHODS:
        raise ConfigError(f"unknown method {name!r}; choose from {sorted(METHODS)}")
    if kind and name not in _RATIO_AWARE:
        raise ConfigError(f"method {name!r} takes no ratio suffix")
    kind = kind or "LL"
    if kind not in ("LL", "KLR", "oracle"):
        raise ConfigError(f"unknown ratio source {kind!r}")
    fn = METHODS[name]

    def run(data, rng, alpha, cfg=None):
        return fn(data, rng, alpha, cfg, kind=kind)

    return run


# ---------------------------------------------------------------------------
# plans and summaries


@dataclass(frozen=True)
class ExperimentPlan:
    scenarios: tuple[ScenarioConfig, ...]
    methods: tuple[str, ...]
    repetitions: int = 500
    alpha: float = 0.05
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must be in (0, 1)")
        if not self.scenarios or not self.methods:
            raise ConfigError("plan needs at least one scenario and one method")
        for m in self.methods:
            resolve_method(m)


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = binomtest(k, n).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class RejectionSummary:
    scenario: str
    support: str
    hypothesis: str
    n: int
    method: str
    rejections: int
    repetitions: int
    failures: int = 0
    mean_runtime: float = field(default=0.0, compare=False)

    @property
    def rejection_rate(self) -> float:
        return self.rejections / self.repetitions

    @property
    def ci95(self) -> tuple[float, float]:
        return clopper_pearson(self.rejections, self.repetitions)

    def row(self) -> dict:
        lo, hi = self.ci95
        return {
            "scenario": self.scenario,
            "support": self.support,
            "hypothesis": self.hypothesis,
            "n": self.n,
            "method": self.method,
            "rate": self.rejection_rate,
            "ci_lo": lo,
            "ci_hi": hi,
            "reps": self.repetitions,
            "failures": self.failures,
        }


def stream_id(*key) -> int:
    """Stable 64-bit stream id for a tuple of plain values."""
    digest = hashlib.blake2b(repr(key).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _cell_key(cfg: ScenarioConfig) -> tuple:
    return (cfg.scenario, cfg.support, cfg.hypothesis, cfg.n, cfg.p, cfg.shift)


def _replicate(args) -> list[tuple[bool, bool, float]]:
    """All methods on one simulated dataset: ``(reject, failed, seconds)`` per method."""
    cfg, methods, alpha, seed, rep = args
    key = _cell_key(cfg)
    data = gen_scenario(cfg, make_rng(seed, stream_id(key, rep, "data")))
    out = []
    for m in methods:
        rng = make_rng(seed, stream_id(key, m, rep))
        t0 = time.perf_counter()
        try:
            res = resolve_method(m)(data, rng, alpha, cfg)
            out.append((bool(res.reject), False, time.perf_counter() - t0))
        except Exception as exc:  # counted as a forced acceptance
            log.warning("replicate %d of %s/%s failed: %s", rep, cfg.id, m, exc)
            out.append((False, True, time.perf_counter() - t0))
    return out


def default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{JOBS_ENV} must be an integer, got {raw!r}") from None


def run_monte_carlo(plan: ExperimentPlan, jobs: int | None = None) -> list[RejectionSummary]:
    """Rejection rates for every (scenario, method) cell of the plan.

    Each replicate draws its data and method randomness from streams keyed by
    the cell and replicate index, so results do not depend on ``jobs``.
    """
    jobs = plan.jobs if jobs is None else jobs
    tasks = [(cfg, plan.methods, plan.alpha, plan.seed, r) for cfg in plan.scenarios for r in range(plan.repetitions)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_replicate, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_replicate(t) for t in tasks]
    summaries = []
    reps = plan.repetitions
    for c, cfg in enumerate(plan.scenarios):
        block = results[c * reps : (c + 1) * reps]
        for j, m in enumerate(plan.methods):
            col = [r[j] for r in block]
            summaries.append(
                RejectionSummary(
                    cfg.scenario, cfg.support, cfg.hypothesis, cfg.n, m,
                    rejections=sum(r[0] for r in col),
                    repetitions=reps,
                    failures=sum(r[1] for r in col),
                    mean_runtime=float(np.mean([r[2] for r in col])),
                )
            )
    return summaries


def _statistic_task(args):
    cfg, method, alpha, seed, rep = args
    key = _cell_key(cfg)
    data = gen_scenario(cfg, make_rng(seed, stream_id(key, rep, "data")))
    res = resolve_method(method)(data, make_rng(seed, stream_id(key, method, rep)), alpha, cfg)
    return res.statistic, res.reject


def collect_statistics(
    method: str, cfg: ScenarioConfig, repetitions: int, seed: int = 0, alpha: float = 0.05, jobs: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Statistic values and reject flags over replicates (same streams as :func:`run_monte_carlo`)."""
    resolve_method(method)
    tasks = [(cfg, method, alpha, seed, r) for r in range(repetitions)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(_statistic_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        out = [_statistic_task(t) for t in tasks]
    stats, rejects = zip(*out)
    return np.array(stats, dtype=float), np.array(rejects, dtype=bool)


# ---------------------------------------------------------------------------
# plan files
#
#   plan.reps = 500          plan.alpha = 0.05      plan.seed = 1    plan.jobs = 4
#   scenario.ids = S1U, S1B  scenario.hypotheses = null, alt
#   scenario.n = 500, 1000   scenario.p = 10        scenario.shift = 0.5
#   methods.ids = gcm_lm, mmd_cv:KLR


_PLAN_KEYS = {
    "plan.reps", "plan.alpha", "plan.seed", "plan.jobs",
    "scenario.ids", "scenario.hypotheses", "scenario.n", "scenario.p", "scenario.shift",
    "methods.ids",
}


def parse_plan_text(text: str) -> ExperimentPlan:
    kv: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PLAN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        kv[key] = value

    def items(key, default=None):
        if key not in kv:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return default
        return [s.strip() for s in kv[key].split(",") if s.strip()]

    try:
        ids = items("scenario.ids")
        hyps = items("scenario.hypotheses", ["null", "alt"])
        ns = [int(s) for s in items("scenario.n")]
        p = int(kv.get("scenario.p", 10))
        shift = float(kv.get("scenario.shift", 0.5))
        scenarios = [
            ScenarioConfig(sid[:2], sid[2:] or "U", h, n=n, p=p, shift=shift)
            for sid in ids for h in hyps for n in ns
        ]
        return ExperimentPlan(
            scenarios,
            items("methods.ids"),
            repetitions=int(kv.get("plan.reps", 500)),
            alpha=float(kv.get("plan.alpha", 0.05)),
            seed=int(kv.get("plan.seed", 0)),
            jobs=int(kv.get("plan.jobs", 1)),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_plan(path) -> ExperimentPlan:
    return parse_plan_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass(frozen=True)
class Standardization:
    columns: tuple[str, ...]
    mean: np.ndarray
    scale: np.ndarray


def _read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: empty file")
    return [h.strip() for h in rows[0]], rows[1:]


def _numeric(rows, header, cols, path, first_row=2) -> np.ndarray:
    idx = []
    for c in cols:
        if c not in header:
            raise ParseError(f"{path}: no such column", column=c)
        idx.append(header.index(c))
    out = np.empty((len(rows), len(cols)))
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise ParseError(f"{path}: expected {len(header)} fields, got {len(r)}", row=i + first_row)
        for j, k in enumerate(idx):
            try:
                v = float(r[k])
            except ValueError:
                raise ParseError(f"{path}: not a number: {r[k]!r}", row=i + first_row, column=cols[j]) from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: non-finite value", row=i + first_row, column=cols[j])
            out[i, j] = v
    return out


def standardize_pooled(blocks: Sequence[np.ndarray], columns: Sequence[str]):
    """Z-score columns with the mean and SD of all blocks stacked together.

    A constant column is centered and left at scale 1.
    """
    stacked = np.vstack(blocks)
    mean = stacked.mean(axis=0)
    sd = stacked.std(axis=0, ddof=1)
    scale = np.where(sd > 0, sd, 1.0)
    for c, s in zip(columns, sd):
        if not s > 0:
            log.warning("column %r is constant; centered only", c)
    return [(b - mean) / scale for b in blocks], Standardization(tuple(columns), mean, scale)


def load_csv(
    path,
    y_col: str,
    x_cols: Sequence[str] | None = None,
    group_col: str | None = "group",
    path2=None,
    groups: tuple[str, str] = ("1", "2"),
) -> PairedData:
    """Read one CSV with a group column, or two CSVs (one per population).

    Columns are standardized with pooled statistics; the parameters are
    logged at INFO level.
    """
    header, rows = _read_table(path)
    if x_cols is None:
        x_cols = [h for h in header if h not in (y_col, group_col)]
    if not x_cols:
        raise ParseError(f"{path}: no covariate columns")
    cols = list(x_cols) + [y_col]
    if path2 is None:
        if group_col not in header:
            raise ParseError(f"{path}: no such column", column=group_col)
        g = header.index(group_col)
        labels = []
        for i, r in enumerate(rows):
            if len(r) != len(header):
                raise ParseError(f"{path}: expected {len(header)} fields, got {len(r)}", row=i + 2)
            lab = r[g].strip()
            if lab == "":
                raise GroupMissing(f"{path}: row {i + 2} has no group label")
            if lab not in groups:
                raise GroupMissing(f"{path}: row {i + 2} has unknown group {lab!r}")
            labels.append(lab)
        labels = np.array(labels)
        table = _numeric(rows, header, cols, path)
        parts = [table[labels == groups[0]], table[labels == groups[1]]]
        for k, part in enumerate(parts):
            if part.shape[0] == 0:
                raise GroupMissing(f"{path}: group {groups[k]!r} has no rows")
    else:
        header2, rows2 = _read_table(path2)
        parts = [_numeric(rows, header, cols, path), _numeric(rows2, header2, cols, path2)]
    (a, b), std = standardize_pooled(parts, cols)
    log.info("standardization mean=%s scale=%s", dict(zip(cols, std.mean.round(6))), dict(zip(cols, std.scale.round(6))))
    return PairedData(a[:, :-1], a[:, -1], b[:, :-1], b[:, -1])


# ---------------------------------------------------------------------------
# reports

REPORT_COLUMNS = ("scenario", "support", "hypothesis", "n", "method", "rate", "ci_lo", "ci_hi", "reps", "failures")
FORMATS = ("csv", "md", "jsonl")


def _fmt(key, value):
    return f"{value:.3f}" if key in ("rate", "ci_lo", "ci_hi") else str(value)


def render_report(summaries: Sequence[RejectionSummary], fmt: str = "csv") -> str:
    if not summaries:
        raise ValueError("no summaries to report")
    rows = [{k: _fmt(k, v) for k, v in s.row().items()} for s in summaries]
    if fmt == "csv":
        lines = [",".join(REPORT_COLUMNS)] + [",".join(r[c] for c in REPORT_COLUMNS) for r in rows]
    elif fmt in ("md", "markdown"):
        lines = ["| " + " | ".join(REPORT_COLUMNS) + " |", "|" + "---|" * len(REPORT_COLUMNS)]
        lines += ["| " + " | ".join(r[c] for c in REPORT_COLUMNS) + " |" for r in rows]
    elif fmt in ("jsonl", "json-lines"):
        lines = [
            json.dumps({c: (float(r[c]) if c in ("rate", "ci_lo", "ci_hi") else s.row()[c]) for c in REPORT_COLUMNS})
            for r, s in zip(rows, summaries)
        ]
    else:
        raise ValueError(f"unknown format {fmt!r}; choose from {FORMATS}")
    return "\n".join(lines) + "\n"


def plot_summaries(summaries: Sequence[RejectionSummary], path, alpha: float = 0.05) -> Path:
    """Rejection rate against n, one panel per (scenario, hypothesis)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    panels = sorted({(s.scenario + s.support, s.hypothesis) for s in summaries}, key=lambda k: (k[0], k[1] != "null"))
    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.2), squeeze=False)
    for ax, (sid, hyp) in zip(axes[0], panels):
        cell = [s for s in summaries if s.scenario + s.support == sid and s.hypothesis == hyp]
        for method in sorted({s.method for s in cell}):
            pts = sorted((s.n, s.rejection_rate, *s.ci95) for s in cell if s.method == method)
            n, rate, lo, hi = map(np.array, zip(*pts))
            ax.errorbar(n, rate, yerr=np.vstack([rate - lo, hi - rate]), marker="o", capsize=3, label=method)
        if hyp == "null":
            ax.axhline(alpha, color="grey", ls="--", lw=0.8)
        ax.set_title(f"{sid} {hyp}")
        ax.set_xlabel("n")
        ax.set_ylim(-0.02, 1.02)
    axes[0][0].set_ylabel("rejection rate")
    axes[0][-1].legend(fontsize="small")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def emit_report(summaries: Sequence[RejectionSummary], path, fmt: str = "csv", figure: bool = True) -> Path:
    """Write the table to ``path``; with ``figure`` also a PNG next to it."""
    text = render_report(summaries, fmt)
    path = Path(path)
    path.write_text(text)
    if figure:
        plot_summaries(summaries, path.with_suffix(".png"))
    return path
