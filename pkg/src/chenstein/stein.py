"""Exact Poisson-law arithmetic and the Chen-Stein equation on the integers.

Everything here is deterministic: truncated Poisson laws with certified
tail bounds, total-variation distances (exact and plug-in empirical), and
the solver for the Chen-Stein equation

    c f(k+1) - k f(k) = 1_A(k) - P(Po(c) in A),   k = 0, 1, ...

together with the sup-norm "magic factors" of its solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, NamedTuple, Sequence

import numpy as np

#: Target upper-tail mass used when truncating a Poisson law.
TAIL_MASS = 1e-13

#: Below this order the pmf uses exact integer factorials instead of lgamma.
_EXACT_FACTORIAL_MAX = 20

#: Mass-conservation window for a valid truncated pmf.
_MASS_TOL = 1e-12


class DistanceEstimate(NamedTuple):
    """A distance value together with a certified/heuristic error bar."""

    value: float
    error: float


class MagicFactors(NamedTuple):
    """Sup norms of a Chen-Stein solution and of its first two differences."""

    sup_f: float
    sup_delta_f: float
    sup_delta2_f: float


def poisson_pmf(c: float, k: int) -> float:
    """Poisson(c) probability of the integer ``k``.

    Uses exact integer factorials for ``k <= 20`` and log-space evaluation
    otherwise, so the result stays finite and accurate for means up to 1e3.
    """
    if c < 0:
        raise ValueError(f"Poisson mean must be nonnegative, got {c}")
    if k < 0:
        raise ValueError(f"Poisson support is the nonnegative integers, got k={k}")
    if c == 0:
        return 1.0 if k == 0 else 0.0
    if k <= _EXACT_FACTORIAL_MAX:
        return math.exp(-c) * c**k / math.factorial(k)
    return math.exp(-c + k * math.log(c) - math.lgamma(k + 1))


def chernoff_tail(c: float, k: int) -> float:
    """Chernoff bound exp(-c) (e c / k)^k on the upper tail P(Po(c) >= k)."""
    if k <= c:
        return 1.0
    if c == 0:
        return 0.0
    return math.exp(-c + k * (1.0 + math.log(c) - math.log(k)))


@dataclass(frozen=True)
class IntegerPmf:
    """A law on {0, ..., k_max} plus an upper bound on the omitted tail mass.

    Invariant: weights are nonnegative and total mass (weights + tail bound)
    lies within ``1e-12`` of one.
    """

    weights: np.ndarray
    tail_bound: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty 1-d array")
        if np.any(w < 0):
            raise ValueError("pmf weights must be nonnegative")
        if self.tail_bound < 0:
            raise ValueError("tail bound must be nonnegative")
        mass = float(w.sum()) + self.tail_bound
        if abs(mass - 1.0) > _MASS_TOL:
            raise ValueError(f"total mass {mass} outside [1 - 1e-12, 1 + 1e-12]")

    @property
    def k_max(self) -> int:
        return self.weights.size - 1


def truncate_poisson(c: float) -> IntegerPmf:
    """Truncate Poisson(c) at the smallest k whose Chernoff tail is <= 1e-13."""
    if c < 0:
        raise ValueError(f"Poisson mean must be nonnegative, got {c}")
    if c == 0:
        return IntegerPmf(weights=np.array([1.0]), tail_bound=0.0)
    k = max(1, int(math.ceil(c)) + 1)
    while chernoff_tail(c, k) > TAIL_MASS:
        k += 1
    ks = np.arange(k)
    logs = -c + ks * math.log(c) - np.array([math.lgamma(j + 1.0) for j in range(k)])
    weights = np.exp(logs)
    small = ks <= _EXACT_FACTORIAL_MAX
    weights[small] = [poisson_pmf(c, int(j)) for j in ks[small]]
    return IntegerPmf(weights=weights, tail_bound=chernoff_tail(c, k))


def tv_exact(p: IntegerPmf, q: IntegerPmf) -> DistanceEstimate:
    """Total variation distance between two truncated integer laws.

    Returns half the l1 distance over the union support; the error bar is
    half the sum of the two tail bounds.
    """
    n = max(p.weights.size, q.weights.size)
    a = np.zeros(n)
    b = np.zeros(n)
    a[: p.weights.size] = p.weights
    b[: q.weights.size] = q.weights
    value = 0.5 * float(np.abs(a - b).sum())
    return DistanceEstimate(value=value, error=0.5 * (p.tail_bound + q.tail_bound))


def tv_empirical(samples: Sequence[int], c: float) -> DistanceEstimate:
    """Plug-in total variation between an empirical law and Poisson(c).

    The estimator is upward biased; the error bar sqrt(K_eff / n) uses
    K_eff = (number of distinct observed values) + (Poisson truncation point).
    """
    counts = np.asarray(samples)
    if counts.size < 100:
        raise ValueError(f"need at least 100 samples, got {counts.size}")
    if counts.ndim != 1 or np.any(counts < 0):
        raise ValueError("samples must be a flat sequence of nonnegative integers")
    n = counts.size
    emp = np.bincount(counts.astype(np.int64)) / n
    po = truncate_poisson(c)
    m = max(emp.size, po.weights.size)
    a = np.zeros(m)
    b = np.zeros(m)
    a[: emp.size] = emp
    b[: po.weights.size] = po.weights
    value = 0.5 * float(np.abs(a - b).sum())
    k_eff = int(np.count_nonzero(emp)) + po.k_max
    return DistanceEstimate(value=value, error=math.sqrt(k_eff / n))


@dataclass(frozen=True)
class SteinSolution:
    """Solution of the Chen-Stein equation for a target mean and set.

    ``values[k]`` is f(k) for k = 0..k_max+1.  The value f(0) is fixed by
    the boundary condition (second forward difference vanishing at zero);
    it never enters the Stein identity because its coefficient k is zero.
    ``p_target`` is the Poisson probability of ``target_set`` under the
    truncated, renormalized law.
    """

    c: float
    target_set: frozenset[int]
    values: np.ndarray
    p_target: float
    k_max: int = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "k_max", v.size - 2)

    def residuals(self) -> np.ndarray:
        """|c f(k+1) - k f(k) - 1_A(k) + P| for k = 0..k_max."""
        k = np.arange(self.k_max + 1)
        ind = np.zeros(self.k_max + 1)
        if self.target_set:
            ind[list(self.target_set)] = 1.0
        lhs = self.c * self.values[1:] - k * self.values[:-1]
        return np.abs(lhs - (ind - self.p_target))


@lru_cache(maxsize=64)
def _solver_parts(c: float) -> tuple[np.ndarray, np.ndarray]:
    """Truncated pmf weights and the solve matrix M with f[1:] = M @ h.

    Row k of M evaluates the closed form of the unique solution,

        f(k+1) = (k! / c^(k+1)) sum_{j<=k} h(j) c^j / j!
               = -sum_{k<j<=k_max} h(j) (k!/j!) c^(j-k-1),

    where the two representations agree because the target probability is
    renormalized by the truncated mass.  Rows with k+1 <= c use the first
    (all coefficients bounded by 1/c), rows with k+1 > c use the second
    (coefficients bounded by 1/(k+1)); a literal sequential recursion
    would amplify rounding like k!/c^k and is not used.
    """
    pmf = truncate_poisson(c)
    kmax = pmf.k_max
    j = np.arange(kmax + 1)
    lg = np.array([math.lgamma(x + 1.0) for x in j])
    logc = math.log(c)
    M = np.zeros((kmax + 1, kmax + 1))
    for k in range(kmax + 1):
        coef = np.exp(lg[k] - lg + (j - k - 1) * logc)
        if k + 1 <= c:
            M[k, : k + 1] = coef[: k + 1]
        else:
            M[k, k + 1 :] = -coef[k + 1 :]
    return pmf.weights, M


def stein_solve(c: float, target_set: Iterable[int]) -> SteinSolution:
    """Solve the Chen-Stein equation for mean ``c`` and set ``target_set``.

    The defining relations are f(1) = (1_A(0) - P)/c from the k = 0
    equation and the upward recursion c f(k+1) = k f(k) + 1_A(k) - P; the
    solution is evaluated in a numerically stable closed form so that the
    residual of every equation up to k_max stays below 1e-10.
    """
    if c <= 0:
        raise ValueError(f"Chen-Stein equation needs a positive mean, got {c}")
    weights, M = _solver_parts(float(c))
    kmax = weights.size - 1
    A = frozenset(int(k) for k in target_set)
    if A and (min(A) < 0 or max(A) > kmax):
        raise ValueError(f"target set must be a subset of 0..{kmax}")
    ind = np.zeros(kmax + 1)
    if A:
        ind[list(A)] = 1.0
    p = float(ind @ weights) / float(weights.sum())
    h = ind - p
    values = np.empty(kmax + 2)
    values[1:] = M @ h
    values[0] = 2.0 * values[1] - values[2]
    return SteinSolution(c=float(c), target_set=A, values=values, p_target=p)


def magic_factors(solution: SteinSolution) -> MagicFactors:
    """Sup norms of f, of its forward difference, and of the second difference.

    The supremum of |f| runs over k >= 1: f(0) is the boundary-condition
    convention and never enters the Stein identity.  Differences use every
    stored value, so the first difference covers k = 0..k_max and the
    second difference k = 0..k_max-1 (with the k = 0 entry zero by
    construction).
    """
    f = solution.values
    sup_f = float(np.max(np.abs(f[1:]))) if f.size > 1 else 0.0
    df = np.diff(f)
    d2f = np.diff(f, 2)
    return MagicFactors(
        sup_f=sup_f,
        sup_delta_f=float(np.max(np.abs(df))),
        sup_delta2_f=float(np.max(np.abs(d2f))),
    )


def stein_magic_bounds(c: float) -> MagicFactors:
    """The three classical sup-norm bounds for the Chen-Stein solution.

    sup |f|    <= min(1, sqrt(2 / (c e)))
    sup |Df|   <= (1 - exp(-c)) / c
    sup |D2 f| <= (2 - 2 exp(-c)) / c^2

    The first two hold (and are essentially attained) for every target
    set; the third is reported as quoted but fails for general sets once
    c exceeds roughly 3/2 -- see ``stein_suite`` callers, which check it
    and report violations rather than assuming it.
    """
    if c <= 0:
        raise ValueError(f"bounds are defined for positive means, got {c}")
    return MagicFactors(
        sup_f=min(1.0, math.sqrt(2.0 / (c * math.e))),
        sup_delta_f=(1.0 - math.exp(-c)) / c,
        sup_delta2_f=(2.0 - 2.0 * math.exp(-c)) / c**2,
    )


@dataclass(frozen=True)
class SteinCheckRow:
    """Result of checking one (mean, target set) pair."""

    c: float
    target_set: frozenset[int]
    max_residual: float
    factors: MagicFactors
    bounds: MagicFactors

    @property
    def residual_ok(self) -> bool:
        return self.max_residual <= 1e-10

    @property
    def factor_ok(self) -> tuple[bool, bool, bool]:
        return (
            self.factors.sup_f <= self.bounds.sup_f + 1e-12,
            self.factors.sup_delta_f <= self.bounds.sup_delta_f + 1e-12,
            self.factors.sup_delta2_f <= self.bounds.sup_delta2_f + 1e-12,
        )


def random_subset(k_max: int, rng: np.random.Generator) -> frozenset[int]:
    """Uniformly random subset of {0, ..., k_max} (each point flipped in)."""
    mask = rng.integers(0, 2, k_max + 1).astype(bool)
    return frozenset(int(k) for k in np.nonzero(mask)[0])


def stein_suite(
    c_values: Sequence[float],
    subsets_per_c: int,
    master_seed: int,
    extra_sets: Sequence[tuple[float, Iterable[int]]] = (),
) -> list[SteinCheckRow]:
    """Residual and magic-factor report over random target sets.

    For each mean, ``subsets_per_c`` uniformly random subsets of the
    truncated support are solved and checked; ``extra_sets`` adds explicit
    (mean, set) pairs.  Rows are returned in deterministic order.
    """
    rng = np.random.default_rng(master_seed)
    jobs: list[tuple[float, Iterable[int]]] = []
    for c in c_values:
        kmax = truncate_poisson(c).k_max
        for _ in range(subsets_per_c):
            jobs.append((c, random_subset(kmax, rng)))
    jobs.extend((float(c), set(a)) for c, a in extra_sets)
    rows = []
    for c, A in jobs:
        sol = stein_solve(c, A)
        rows.append(
            SteinCheckRow(
                c=c,
                target_set=sol.target_set,
                max_residual=float(sol.residuals().max()),
                factors=magic_factors(sol),
                bounds=stein_magic_bounds(c),
            )
        )
    return rows
