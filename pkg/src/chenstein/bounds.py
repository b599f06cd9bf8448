"""Explicit total-variation bounds for integer Poisson functionals.

Per replication the estimators need the carre du champ and the z-integral
of |DF (DF - 1) DL^{-1}F|.  For one-dimensional shell rules (gilbert,
annulus) both integrands are piecewise polynomials of degree at most two
between breakpoints derived from the points, so they are integrated
exactly; other functionals fall back to stratified Monte Carlo in z.
Replications run on per-index random streams and are reduced in index
order, so results are byte-identical for any worker count.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .graphs import (
    CalibrationError,
    ConnectionRule,
    _shell_bounds,
    _shell_counts_1d,
    _ShellCoverage1D,
    calibrate_delta,
    gilbert,
    occupation_psi,
)
from .malliavin import Functional, _strata, diff_chaos_batch, edge_functional, neg_dlinv_batch
from .points import RngStream, Window, sample_process
from .stein import tv_empirical

_CHUNK = 8192


def _edge_rep_integrals_1d(
    sorted_x: np.ndarray, inner: float, outer: float, lam: float, half: float
) -> tuple[int, float, float, float, float]:
    """Exact z-integrals for the 1-d edge count of a shell rule.

    Returns (F, cdc, j1, j2, t2) where, with deg(z) the configuration
    degree at z and f1(z) = lam * coverage(z),

      F   edge count,
      cdc = lam * int deg * (f1 + deg)/2 dz         the carre du champ,
      j1  =       int ((f1 + deg)/2)^2 dz           gradient of -L^{-1},
      j2  =       int deg^2 (deg - 1)^2 dz,
      t2  = lam * int deg (deg - 1) (f1 + deg)/2 dz.

    Between breakpoints deg is constant and f1 linear, so the segment
    trapezoid/Simpson sums below are exact.
    """
    cov = _ShellCoverage1D(inner=inner, outer=outer, half=half)
    deg_pts = _shell_counts_1d(sorted_x, sorted_x, inner, outer)
    edges = int(deg_pts.sum()) // 2
    kinks = np.array([inner - half, outer - half, half - outer, half - inner])
    breaks = np.concatenate(
        [
            np.array([-half, half]),
            kinks,
            sorted_x - outer,
            sorted_x - inner,
            sorted_x + inner,
            sorted_x + outer,
        ]
    )
    breaks = np.unique(np.clip(breaks, -half, half))
    lo, hi = breaks[:-1], breaks[1:]
    length = hi - lo
    mid = 0.5 * (lo + hi)
    deg = _shell_counts_1d(sorted_x, mid, inner, outer).astype(float)
    f1_b = lam * cov(breaks)
    f1_lo, f1_hi = f1_b[:-1], f1_b[1:]
    f1_mid = lam * cov(mid)
    f1_int = length * 0.5 * (f1_lo + f1_hi)
    f1sq_int = length / 6.0 * (f1_lo**2 + 4.0 * f1_mid**2 + f1_hi**2)
    pair = deg * (deg - 1.0)
    cdc = lam * float(np.sum(0.5 * (deg * f1_int + deg**2 * length)))
    j1 = float(np.sum(0.25 * (f1sq_int + 2.0 * deg * f1_int + deg**2 * length)))
    j2 = float(np.sum(pair**2 * length))
    t2 = lam * float(np.sum(pair * 0.5 * (f1_int + deg * length)))
    return edges, cdc, j1, j2, t2


def _edge_chunk_1d(task) -> tuple[np.ndarray, ...]:
    """Replication chunk for the exact one-dimensional edge-count path."""
    lam, inner, outer, row_key, start, count, master_seed = task
    window = Window.unit(1)
    half = window.half_widths[0]
    F = np.empty(count, dtype=np.int64)
    cdc = np.empty(count)
    j1 = np.empty(count)
    j2 = np.empty(count)
    t2 = np.empty(count)
    for i in range(count):
        stream = RngStream(master_seed, (row_key, start + i))
        config = sample_process(window, lam, stream)
        xs = np.sort(config.points[:, 0], kind="stable")
        F[i], cdc[i], j1[i], j2[i], t2[i] = _edge_rep_integrals_1d(xs, inner, outer, lam, half)
    return F, cdc, j1, j2, t2


def _generic_chunk(task) -> tuple[np.ndarray, ...]:
    """Replication chunk using stratified Monte Carlo for the z-integrals."""
    F, row_key, start, count, master_seed, n_strata = task
    chaos = F.chaos
    window = chaos.window
    lam = chaos.intensity
    lows, spans, cell_vol = _strata(window, n_strata)
    vals = np.empty(count)
    cdc = np.empty(count)
    j1 = np.empty(count)
    j2 = np.empty(count)
    t2 = np.empty(count)
    first_chaos = chaos.g2 is None
    for i in range(count):
        stream = RngStream(master_seed, (row_key, start + i))
        config = sample_process(window, lam, stream)
        vals[i] = F.evaluate(config)
        gen = stream.child(1).generator()
        draws = gen.uniform(0.0, 1.0, size=(2, lows.shape[0], window.dimension))
        acc_cdc = acc_j1 = acc_j2 = acc_t2 = 0.0
        for k in (0, 1):
            zs = lows + spans * draws[k]
            d = diff_chaos_batch(F, config, zs)
            nd = neg_dlinv_batch(F, config, zs)
            acc_cdc += float(np.sum(d * nd))
            acc_j1 += float(np.sum(nd**2))
            acc_j2 += float(np.sum(d**2 * (d - 1.0) ** 2))
            acc_t2 += float(np.sum(np.abs(d * (d - 1.0) * nd)))
        cdc[i] = lam * cell_vol * 0.5 * acc_cdc
        j1[i] = cell_vol * 0.5 * acc_j1
        j2[i] = cell_vol * 0.5 * acc_j2
        t2[i] = lam * cell_vol * 0.5 * acc_t2
        if first_chaos:
            # integrand of the carre du champ is the deterministic g1^2
            cdc[i] = chaos.g1.second_moment
    return vals, cdc, j1, j2, t2


def _replication_arrays(
    F: Functional,
    reps: int,
    master_seed: int,
    row_key: int,
    workers: int = 1,
    n_strata: int = 256,
) -> dict[str, np.ndarray]:
    """Per-replication statistics, reduced in replication-index order."""
    shell = _shell_bounds(F.rule) if F.rule is not None else None
    exact = (
        shell is not None
        and F.chaos is not None
        and F.chaos.window == Window.unit(1)
    )
    tasks = []
    for start in range(0, reps, _CHUNK):
        count = min(_CHUNK, reps - start)
        if exact:
            tasks.append(
                (F.chaos.intensity, shell[0], shell[1], row_key, start, count, master_seed)
            )
        else:
            tasks.append((F, row_key, start, count, master_seed, n_strata))
    worker_fn = _edge_chunk_1d if exact else _generic_chunk
    if workers <= 1 or len(tasks) == 1:
        results = [worker_fn(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(worker_fn, tasks))
    names = ("F", "cdc", "j1", "j2", "t2")
    return {n: np.concatenate([r[i] for r in results]) for i, n in enumerate(names)}


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return m, se


def _sqrt_mean_se(x: np.ndarray) -> tuple[float, float]:
    """sqrt of a mean with the delta-method standard error."""
    m, se = _mean_se(x)
    root = math.sqrt(max(m, 0.0))
    return root, (se / (2.0 * root) if root > 0 else se)


@dataclass(frozen=True)
class BoundReport:
    """Assembled right-hand side of the Poisson total-variation bound.

    ``total = mean_shift + prefactor1 * term1 + prefactor2 * term2`` with
    term1 = E|c' - <DF, -DL^{-1}F>| (or its root-mean-square variant),
    term2 = E int |DF (DF - 1) DL^{-1}F| dmu, prefactors (1 - e^-c')/c'
    and (1 - e^-c')/c'^2 evaluated at the true mean c', and
    mean_shift = |c - c'| the triangle-inequality term for a mismatched
    target mean.
    """

    c: float
    mean_estimate: float
    mean_shift: float
    term1: float
    term1_stderr: float
    term2: float
    term2_stderr: float
    prefactor1: float
    prefactor2: float
    total: float
    total_stderr: float
    tv_value: float
    tv_error: float
    reps: int
    master_seed: int
    term1_mode: str = "l1"


def _assemble_bound(
    c: float,
    c_mean: float,
    arrays: dict[str, np.ndarray],
    reps: int,
    master_seed: int,
    term1_mode: str,
) -> BoundReport:
    cdc = arrays["cdc"]
    if term1_mode == "l1":
        term1, se1 = _mean_se(np.abs(c_mean - cdc))
    elif term1_mode == "l2":
        term1, se1 = _sqrt_mean_se((c_mean - cdc) ** 2)
    else:
        raise ValueError(f"term1_mode must be 'l1' or 'l2', got {term1_mode!r}")
    term2, se2 = _mean_se(arrays["t2"])
    pf1 = (1.0 - math.exp(-c_mean)) / c_mean
    pf2 = (1.0 - math.exp(-c_mean)) / c_mean**2
    mean_shift = abs(c - c_mean)
    total = mean_shift + pf1 * term1 + pf2 * term2
    total_err = math.hypot(pf1 * se1, pf2 * se2)
    tv = tv_empirical(arrays["F"].astype(np.int64), c)
    return BoundReport(
        c=c,
        mean_estimate=c_mean,
        mean_shift=mean_shift,
        term1=term1,
        term1_stderr=se1,
        term2=term2,
        term2_stderr=se2,
        prefactor1=pf1,
        prefactor2=pf2,
        total=total,
        total_stderr=total_err,
        tv_value=tv.value,
        tv_error=tv.error,
        reps=reps,
        master_seed=master_seed,
        term1_mode=term1_mode,
    )


def estimate_bound(
    F: Functional,
    c: float,
    reps: int,
    master_seed: int,
    workers: int = 1,
    n_strata: int = 256,
    term1_mode: str = "l1",
) -> BoundReport:
    """Monte Carlo estimate of the explicit bound on d_TV(F, Po(c)).

    The functional must be integer valued and carry a chaos form; its
    true mean comes from the closed-form constant of the decomposition.
    """
    if not F.integer_valued:
        raise ValueError("the Poisson bound applies to integer-valued functionals")
    if F.chaos is None:
        raise ValueError("bound estimation needs the chaos form of the functional")
    if c <= 0:
        raise ValueError(f"target mean must be positive, got {c}")
    if reps < 100:
        raise ValueError(f"need at least 100 replications, got {reps}")
    arrays = _replication_arrays(F, reps, master_seed, row_key=0, workers=workers, n_strata=n_strata)
    return _assemble_bound(c, F.chaos.constant, arrays, reps, master_seed, term1_mode)


@dataclass(frozen=True)
class XiReport:
    """Root-mean-square decomposition of the bound for the edge count.

    xi0 is the RMS fluctuation of the carre du champ around the mean
    edge count; xi1 the root of lam * E int (D L^{-1} F)^2 dz; xi2 the
    root of lam * E int (DF)^2 (DF - 1)^2 dz.
    """

    xi0: float
    xi0_stderr: float
    xi1: float
    xi1_stderr: float
    xi2: float
    xi2_stderr: float
    intensity: float
    psi: float
    lambda_psi: float
    reps: int
    master_seed: int


def xi_estimates(
    rule: ConnectionRule,
    intensity: float,
    reps: int,
    master_seed: int,
    workers: int = 1,
    n_strata: int = 256,
    resolution: int = 512,
) -> XiReport:
    """Monte Carlo Xi report for the edge count of a shell rule."""
    F = edge_functional(rule, intensity)
    arrays = _replication_arrays(F, reps, master_seed, row_key=0, workers=workers, n_strata=n_strata)
    return _xi_from_arrays(rule, intensity, arrays, reps, master_seed, resolution)


def _xi_from_arrays(
    rule: ConnectionRule,
    intensity: float,
    arrays: dict[str, np.ndarray],
    reps: int,
    master_seed: int,
    resolution: int = 512,
    mean_edges: float | None = None,
    psi: float | None = None,
) -> XiReport:
    if mean_edges is None:
        mean_edges = edge_functional(rule, intensity).chaos.constant
    if psi is None:
        psi = occupation_psi(rule, resolution)
    xi0, xi0_se = _sqrt_mean_se((mean_edges - arrays["cdc"]) ** 2)
    xi1, xi1_se = _sqrt_mean_se(intensity * arrays["j1"])
    xi2, xi2_se = _sqrt_mean_se(intensity * arrays["j2"])
    return XiReport(
        xi0=xi0,
        xi0_stderr=xi0_se,
        xi1=xi1,
        xi1_stderr=xi1_se,
        xi2=xi2,
        xi2_stderr=xi2_se,
        intensity=intensity,
        psi=psi,
        lambda_psi=intensity * psi,
        reps=reps,
        master_seed=master_seed,
    )


class VarianceCheck(NamedTuple):
    """Comparison of the Monte Carlo variance with the mean carre du champ."""

    var_mc: float
    cdc_mean: float
    z_score: float


def variance_check(
    F: Functional, reps: int, master_seed: int, workers: int = 1, n_strata: int = 256
) -> VarianceCheck:
    """Check E<DF, -DL^{-1}F> = Var F by Monte Carlo on both sides."""
    arrays = _replication_arrays(F, reps, master_seed, row_key=0, workers=workers, n_strata=n_strata)
    vals = arrays["F"].astype(float)
    n = vals.size
    var_mc = float(np.var(vals, ddof=1)) if n > 1 else 0.0
    centered = vals - vals.mean()
    m4 = float(np.mean(centered**4))
    se_var = math.sqrt(max(m4 - var_mc**2, 0.0) / n) if n > 1 else 0.0
    cdc_mean, se_cdc = _mean_se(arrays["cdc"])
    denom = math.hypot(se_var, se_cdc)
    z = (var_mc - cdc_mean) / denom if denom > 0 else 0.0
    return VarianceCheck(var_mc=var_mc, cdc_mean=cdc_mean, z_score=z)


# ---------------------------------------------------------------------------
# The convergence-rate experiment.
# ---------------------------------------------------------------------------

RATE_CSV_COLUMNS = (
    "lambda",
    "delta",
    "psi",
    "lambda_psi",
    "reps",
    "mean_F",
    "var_F",
    "tv_emp",
    "tv_err",
    "xi0",
    "xi0_err",
    "xi1",
    "xi1_err",
    "xi2",
    "xi2_err",
    "bound_total",
    "seed",
)


@dataclass(frozen=True)
class RateRow:
    """One calibrated intensity of the rate experiment."""

    intensity: float
    delta: float
    psi: float
    lambda_psi: float
    reps: int
    mean_f: float
    var_f: float
    tv_emp: float
    tv_err: float
    xi: XiReport
    bound: BoundReport
    seed: int

    def record(self) -> dict:
        """The pinned output schema (CSV columns / JSON field names)."""
        return {
            "lambda": self.intensity,
            "delta": self.delta,
            "psi": self.psi,
            "lambda_psi": self.lambda_psi,
            "reps": self.reps,
            "mean_F": self.mean_f,
            "var_F": self.var_f,
            "tv_emp": self.tv_emp,
            "tv_err": self.tv_err,
            "xi0": self.xi.xi0,
            "xi0_err": self.xi.xi0_stderr,
            "xi1": self.xi.xi1,
            "xi1_err": self.xi.xi1_stderr,
            "xi2": self.xi.xi2,
            "xi2_err": self.xi.xi2_stderr,
            "bound_total": self.bound.total,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class RateFailure:
    intensity: float
    message: str


@dataclass(frozen=True)
class RateResult:
    rows: tuple[RateRow, ...]
    failures: tuple[RateFailure, ...]
    slope: float | None


def rate_experiment(
    dimension: int,
    c: float,
    lambda_grid: Sequence[float],
    reps: int,
    master_seed: int,
    workers: int = 1,
    n_strata: int = 256,
) -> RateResult:
    """Poisson-limit rate table for calibrated sparse edge counts.

    Per intensity the gilbert radius is calibrated so the Campbell mean
    is c/2; the row reports empirical mean/variance, the plug-in total
    variation against Po(c/2), the Xi decomposition, and the assembled
    explicit bound.  Calibration failures are recorded and skipped.  The
    fitted log-log slope of total variation against intensity is attached.
    """
    grid = [float(l) for l in lambda_grid]
    if not grid:
        raise ValueError("lambda grid must be nonempty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda grid must be strictly increasing")
    if reps < 100:
        raise ValueError(f"need at least 100 replications per row, got {reps}")
    if c <= 0:
        raise ValueError(f"target mean parameter must be positive, got {c}")
    target = 0.5 * c
    rows: list[RateRow] = []
    failures: list[RateFailure] = []
    for row_key, lam in enumerate(grid):
        try:
            delta = calibrate_delta(dimension, lam, target)
        except CalibrationError as exc:
            failures.append(RateFailure(intensity=lam, message=str(exc)))
            continue
        rule = gilbert(dimension, delta)
        F = edge_functional(rule, lam)
        arrays = _replication_arrays(
            F, reps, master_seed, row_key=row_key, workers=workers, n_strata=n_strata
        )
        report = occupation_psi(rule)
        xi = _xi_from_arrays(
            rule, lam, arrays, reps, master_seed, mean_edges=F.chaos.constant, psi=report
        )
        bound = _assemble_bound(target, F.chaos.constant, arrays, reps, master_seed, "l1")
        vals = arrays["F"].astype(float)
        rows.append(
            RateRow(
                intensity=lam,
                delta=delta,
                psi=report,
                lambda_psi=lam * report,
                reps=reps,
                mean_f=float(vals.mean()),
                var_f=float(np.var(vals, ddof=1)) if reps > 1 else 0.0,
                tv_emp=bound.tv_value,
                tv_err=bound.tv_error,
                xi=xi,
                bound=bound,
                seed=master_seed,
            )
        )
    slope = None
    usable = [(r.intensity, r.tv_emp) for r in rows if r.tv_emp > 0]
    if len(usable) >= 2:
        xs = np.log([u[0] for u in usable])
        ys = np.log([u[1] for u in usable])
        slope = float(np.polyfit(xs, ys, 1)[0])
    return RateResult(rows=tuple(rows), failures=tuple(failures), slope=slope)


def rate_result_to_csv(result: RateResult) -> str:
    """Pinned CSV schema, one line per successful row."""
    lines = [",".join(RATE_CSV_COLUMNS)]
    for row in result.rows:
        rec = row.record()
        lines.append(",".join(_format_cell(rec[col]) for col in RATE_CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def rate_result_to_json(result: RateResult) -> str:
    """JSON mirror of the CSV schema plus failures and the fitted slope."""
    payload = {
        "rows": [row.record() for row in result.rows],
        "failures": [{"lambda": f.intensity, "error": f.message} for f in result.failures],
        "slope": result.slope,
    }
    return json.dumps(payload, indent=2) + "\n"


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)
