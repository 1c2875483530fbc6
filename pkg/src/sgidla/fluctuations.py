"""Experiment harness: fluctuation sweeps, exponent fits, the concentration
check for Bernoulli sums, settled proportions and annulus counts."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import DegenerateFitError, DomainError, SGError
from .gasket import ALPHA, BETA, DOUBLED_SG, ORIGIN, GraphFamily, ball, ball_volume
from .idla import Cluster, StoppedState, grow, grow_stopped, radii
from .walk import MASK64, RngStream, mix64, stream_key

log = logging.getLogger(__name__)

CSV_HEADER = ["n", "trial", "seed", "r_in", "r_out", "inner_defect", "outer_excess", "runtime_ms"]
DEFAULT_RADII = (16, 32, 64, 128, 256, 512)


@dataclass
class Constants:
    alpha: float = ALPHA
    beta: float = BETA
    # fitted quantities, filled in by experiments
    fitted: dict = field(default_factory=dict)

    def target_inner(self, kappa: float = 0.0) -> float:
        return 0.5

    def target_outer(self, kappa: float = 0.0) -> float:
        return 0.5 + 1 / (2 * self.alpha)

    def polylog_power(self, kappa: float) -> float:
        """Power of ``ln n`` multiplying ``n^(1/2)`` in the inner bound."""
        return (1 + kappa) / (2 * self.alpha)


@dataclass
class SweepConfig:
    radii: list = field(default_factory=lambda: list(DEFAULT_RADII))
    trials: int = 20
    seed: int = 0
    kappa: float = 0.5
    threads: int = 1
    family: str = "doubled"
    timing: bool = True  # runtime_ms = 0 when off, making CSVs byte-identical

    def __post_init__(self):
        self.radii = [int(r) for r in self.radii]
        if self.radii != sorted(self.radii) or len(set(self.radii)) != len(self.radii):
            raise DomainError("radii must be strictly increasing")
        if any(r < 1 for r in self.radii):
            raise DomainError("radii must be positive")
        if self.trials < 1:
            raise DomainError("trials must be at least 1")
        if self.kappa <= 0:
            raise DomainError("kappa must be positive")

    @classmethod
    def from_json(cls, text: str) -> "SweepConfig":
        data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SweepRow:
    n: int
    trial: int
    seed: int
    r_in: int
    r_out: int
    inner_defect: int
    outer_excess: int
    runtime_ms: float
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)

    @property
    def anomalous(self) -> bool:
        return self.inner_defect < 0 or self.outer_excess < 0


def row_seed(master: int, n: int, trial: int) -> int:
    """Per-row seed; a row is reproduced by ``grow`` with ``RngStream(row_seed, 0)``."""
    key = stream_key(np.uint64(master & MASK64), np.uint64((n << 32) | trial))
    return int(mix64(np.uint64(key))) >> 1


def run_row(family: GraphFamily, n: int, trial: int, master: int, timing: bool = True) -> tuple[SweepRow, Cluster | None]:
    seed = row_seed(master, n, trial)
    t0 = time.perf_counter()
    try:
        cl = grow(family, ball_volume(family, n), RngStream(seed, 0))
        r = radii(cl)
    except SGError as exc:
        log.error("row n=%d trial=%d failed: %s", n, trial, exc)
        return SweepRow(n, trial, seed, -1, -1, -1, -1, 0.0, str(exc)), None
    ms = round((time.perf_counter() - t0) * 1000, 3) if timing else 0.0
    return SweepRow(n, trial, seed, r.r_in, r.r_out, r.inner_defect, r.outer_excess, ms), cl


def sweep(config: SweepConfig, progress=None) -> list[SweepRow]:
    """One IDLA cluster of ``b_n`` particles per ``(n, trial)``, rows in ``(n, trial)`` order."""
    family = GraphFamily.from_name(config.family)
    jobs = [(n, t) for n in config.radii for t in range(config.trials)]

    def job(nt):
        row, _ = run_row(family, nt[0], nt[1], config.seed, config.timing)
        if progress:
            progress(row)
        return row

    if config.threads <= 1:
        return [job(nt) for nt in jobs]
    with ThreadPoolExecutor(config.threads) as pool:
        return list(pool.map(job, jobs))


def rows_to_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.n, r.trial, r.seed, r.r_in, r.r_out, r.inner_defect, r.outer_excess, repr(float(r.runtime_ms))])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[SweepRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != CSV_HEADER:
        raise DomainError(f"unexpected CSV header {header}")
    out = []
    for rec in reader:
        if not rec:
            continue
        n, trial, seed, r_in, r_out, dfc, exc = (int(x) for x in rec[:7])
        out.append(SweepRow(n, trial, seed, r_in, r_out, dfc, exc, float(rec[7])))
    return out


@dataclass
class FitResult:
    slope: float
    intercept: float
    r2: float
    n: list
    values: list
    flagged: list  # n values whose statistic was replaced by 0.5


def aggregate(rows: Sequence[SweepRow], field_name: str, statistic: str) -> dict:
    if field_name not in ("inner_defect", "outer_excess"):
        raise DomainError(f"cannot fit field {field_name!r}")
    if statistic not in ("max", "mean"):
        raise DomainError(f"unknown statistic {statistic!r}")
    groups: dict = {}
    for r in rows:
        if not r.failed:
            groups.setdefault(r.n, []).append(getattr(r, field_name))
    f = np.max if statistic == "max" else np.mean
    return {n: float(f(v)) for n, v in sorted(groups.items())}


def fit_power_law(ns: Sequence[float], values: Sequence[float]) -> FitResult:
    """Least squares of ``log value`` on ``log n``; values ``<= 0`` become 0.5 and are flagged."""
    ns = np.asarray(ns, dtype=float)
    vals = np.asarray(values, dtype=float)
    if np.count_nonzero(vals > 0) < 3 or len(np.unique(ns[vals > 0])) < 3:
        raise DegenerateFitError("need at least three distinct n with a nonzero statistic")
    flagged = [int(n) for n, v in zip(ns, vals) if v <= 0]
    vals = np.where(vals > 0, vals, 0.5)
    res = stats.linregress(np.log(ns), np.log(vals))
    return FitResult(float(res.slope), float(res.intercept), float(res.rvalue**2), ns.tolist(), vals.tolist(), flagged)


def fit_exponent(rows: Sequence[SweepRow], field_name: str = "inner_defect", statistic: str = "max") -> FitResult:
    agg = aggregate(rows, field_name, statistic)
    return fit_power_law(list(agg), list(agg.values()))


# --- concentration of Bernoulli sums ---------------------------------------


@dataclass
class TailCheck:
    N: int
    p: float
    gamma: float
    trials: int
    hits: int
    frequency: float
    bound: float
    wilson: tuple

    @property
    def passed(self) -> bool:
        # the bound is rejected only if it lies below the whole Wilson interval
        return self.wilson[0] <= self.bound


def bernoulli_tail_frequency(N: int, p: float, exponent: float, trials: int, seed: int = 0) -> tuple[int, float]:
    """Hits and frequency of ``|S - mu| >= mu**exponent`` for ``S ~ sum of N Bernoulli(p)``.

    The sum of independent Bernoulli variables is drawn as one binomial variate.
    """
    mu = N * p
    s = np.random.default_rng(seed).binomial(N, p, size=trials)
    hits = int(np.count_nonzero(np.abs(s - mu) >= mu**exponent))
    return hits, hits / trials


def lbg_tail_check(N: int, p: float, gamma: float, trials: int, seed: int = 0, confidence: float = 0.999) -> TailCheck:
    """Empirical ``P(|S - mu| >= mu^(1/2 + gamma))`` against ``2 exp(-mu^(2 gamma) / 4)``."""
    if not 0 < gamma < 0.5:
        raise DomainError("gamma must lie in (0, 1/2)")
    if not 0 < p <= 1 or N < 1 or trials < 1:
        raise DomainError("need N >= 1, 0 < p <= 1 and trials >= 1")
    mu = N * p
    hits, freq = bernoulli_tail_frequency(N, p, 0.5 + gamma, trials, seed)
    ci = stats.binomtest(hits, trials).proportion_ci(confidence, method="wilson")
    bound = 2 * math.exp(-(mu ** (2 * gamma)) / 4)
    return TailCheck(N, p, gamma, trials, hits, freq, bound, (float(ci.low), float(ci.high)))


def clt_tail(p: float) -> float:
    """Large-``N`` limit of ``P(|S - mu| >= mu^(1/2))``: ``2 Phi(-1/sqrt(1-p))``."""
    return float(2 * stats.norm.cdf(-1 / math.sqrt(1 - p)))


# --- settled proportion -----------------------------------------------------


def settle_window(n: int) -> tuple[float, float]:
    return n ** (1 / (ALPHA + 1)), n**ALPHA


def settled_fraction(
    family: GraphFamily,
    n: int,
    k: int,
    trials: int,
    rng: RngStream,
    sources: Sequence | None = None,
    cluster: Sequence | None = None,
    check_window: bool = True,
) -> tuple[float, float]:
    """Fraction of ``k`` particles that settle before leaving ``B_o(n + ceil(k^(1/alpha)))``.

    Defaults: all particles start at the origin and the existing cluster is
    the full ball ``B_o(n)``.
    """
    lo, hi = settle_window(n)
    if check_window and not lo < k < hi:
        raise DomainError(f"k={k} outside the window ({lo:.3f}, {hi:.3f}) for n={n}")
    if k < 1 or trials < 1:
        raise DomainError("k and trials must be positive")
    radius = n + math.ceil(k ** (1 / ALPHA))
    members = list(cluster) if cluster is not None else list(ball(family, ORIGIN, n).dist)
    base = Cluster.from_vertices(family, members)
    src = list(sources) if sources is not None else [ORIGIN] * k
    if len(src) != k:
        raise DomainError("need exactly k sources")
    fracs = np.empty(trials)
    for t in range(trials):
        child = rng.child(t)
        st = StoppedState(base, [], radius, 0, child.master_seed, child.stream_index)
        out = grow_stopped(family, st, src, radius)
        fracs[t] = (k - len(out.paused)) / k
    se = fracs.std(ddof=1) / math.sqrt(trials) if trials > 1 else 0.0
    return float(fracs.mean()), float(se)


# --- annulus counts ---------------------------------------------------------


@dataclass
class AnnulusAudit:
    m: int
    k: int
    b_n: int
    exact: int  # b_n - b_(n - 2^k), n = 2^m
    formula: float
    ratio: float  # formula / exact
    scaling: float  # exact / (D^(alpha-1) n)


def annulus_audit(m: int, k: int, family: GraphFamily = DOUBLED_SG) -> AnnulusAudit:
    if not 0 <= k < m:
        raise DomainError("need 0 <= k < m")
    n, d = 2**m, 2**k
    bn = ball_volume(family, n)
    exact = bn - ball_volume(family, n - d)
    formula = 2 ** (m - k) * (3 ** (k + 1) + 3) / (3 ** (k + 1) + 2) * bn
    return AnnulusAudit(m, k, bn, exact, formula, formula / exact, exact / (d ** (ALPHA - 1) * n))


def annulus_growth_ratio(family: GraphFamily, n: int, eps: float) -> float:
    """``(b_n - b_ceil(n(1-eps))) / (eps^(alpha-1) b_n)``; the growth bound asks for at most 4."""
    bn = ball_volume(family, n)
    return (bn - ball_volume(family, math.ceil(n * (1 - eps)))) / (eps ** (ALPHA - 1) * bn)
