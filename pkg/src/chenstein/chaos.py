"""Wiener-Ito integrals, kernel contractions, and chaos condition reports.

Two layers live here.  Pathwise evaluation of first- and second-order
compensated integrals uses closed-form kernels on the continuum, so exact
identities (chaotic reconstruction, product formula) can be tested without
discretization error.  Contraction algebra and the condition checkers for
Poisson limits on a perturbed chaos use dense order-q tensors over a
finite weighted discretization of the state space (desk scale: n <= 30,
q <= 3).
"""

from __future__ import annotations

import itertools
import math
import string
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .points import PointConfiguration

MAX_CELLS = 30
MAX_ORDER = 3          # input kernels at desk scale
_MAX_ORDER_INTERNAL = 6  # contraction outputs, up to a full tensor product
_MAX_ELEMENTS = 4_000_000


@dataclass(frozen=True, eq=False)
class DiscretizedSpace:
    """Finite weighted approximation of the state space: n cells, weights > 0."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size != pts.shape[0]:
            raise ValueError("one weight per cell required")
        if np.any(w <= 0):
            raise ValueError("cell weights must be positive")
        pts.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.size


@dataclass(frozen=True, eq=False)
class DiscretizedKernel:
    """Dense order-q tensor over a discretized space."""

    order: int
    values: np.ndarray
    space: DiscretizedSpace

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = self.space.size
        if self.order < 1 or self.order > _MAX_ORDER_INTERNAL:
            raise ValueError(f"kernel order must be in 1..{_MAX_ORDER_INTERNAL}, got {self.order}")
        if n > MAX_CELLS:
            raise ValueError(f"dense kernels support at most {MAX_CELLS} cells, got {n}")
        if n**self.order > _MAX_ELEMENTS:
            raise ValueError(
                f"dense kernel of order {self.order} on {n} cells exceeds the element guard"
            )
        if v.shape != (n,) * self.order:
            raise ValueError(f"values must have shape {(n,) * self.order}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        for perm in itertools.permutations(range(self.order)):
            if not np.allclose(self.values, np.transpose(self.values, perm), atol=tol, rtol=0.0):
                return False
        return True


def symmetrize(kernel: DiscretizedKernel) -> DiscretizedKernel:
    """Canonical symmetrization: average over all axis permutations."""
    acc = np.zeros_like(kernel.values)
    perms = list(itertools.permutations(range(kernel.order)))
    for perm in perms:
        acc += np.transpose(kernel.values, perm)
    return DiscretizedKernel(order=kernel.order, values=acc / len(perms), space=kernel.space)


def _weighted_sum(values: np.ndarray, weights: np.ndarray) -> float:
    out = values
    for _ in range(values.ndim):
        out = out @ weights
    return float(out)


def kernel_l2(kernel: DiscretizedKernel) -> float:
    """L2(mu^q) norm."""
    return math.sqrt(max(0.0, _weighted_sum(kernel.values**2, kernel.space.weights)))


def kernel_l4(kernel: DiscretizedKernel) -> float:
    """L4(mu^q) norm."""
    return _weighted_sum(kernel.values**4, kernel.space.weights) ** 0.25


def kernel_inner(f: DiscretizedKernel, g: DiscretizedKernel) -> float:
    """L2(mu^q) inner product of two same-order kernels."""
    if f.order != g.order or f.space is not g.space and f.space.size != g.space.size:
        raise ValueError("inner product needs kernels of equal order on one space")
    return _weighted_sum(f.values * g.values, f.space.weights)


def contract(
    f: DiscretizedKernel, g: DiscretizedKernel, r: int, l: int
) -> DiscretizedKernel | float:
    """Contraction f *_r^l g: identify r variables, integrate out l of them.

    The output has order p + q - r - l; the fully contracted case returns
    the scalar directly.  r = l = 0 is the tensor product.
    """
    p, q = f.order, g.order
    if not (0 <= r <= min(p, q)):
        raise ValueError(f"r must lie in 0..min(p, q) = {min(p, q)}, got {r}")
    if not (0 <= l <= r):
        raise ValueError(f"l must lie in 0..r = {r}, got {l}")
    w = f.space.weights
    letters = string.ascii_lowercase
    shared = letters[: r]                      # identified variables, first l integrated
    t_free = letters[r : r + (p - r)]
    s_free = letters[r + (p - r) : r + (p - r) + (q - r)]
    f_sub = shared + t_free
    g_sub = shared + s_free
    out_sub = shared[l:] + t_free + s_free
    operands = [f.values] + [w] * l + [g.values]
    subs = ",".join([f_sub] + list(shared[:l]) + [g_sub]) + "->" + out_sub
    result = np.einsum(subs, *operands)
    order = p + q - r - l
    if order == 0:
        return float(result)
    return DiscretizedKernel(order=order, values=result, space=f.space)


def fubini_check(f: DiscretizedKernel, g: DiscretizedKernel, r: int) -> float:
    """Relative gap in the contraction Fubini identity.

    Compares the squared L2 norm of f *_r^0 g with the integral over r
    variables of (f *_p^(p-r) f)(g *_q^(q-r) g); both sides are computed
    independently and the relative discrepancy is returned.
    """
    p, q = f.order, g.order
    if not (1 <= r <= min(p, q)):
        raise ValueError(f"r must lie in 1..min(p, q), got {r}")
    w = f.space.weights
    lhs = kernel_l2(contract(f, g, r, 0)) ** 2
    ff = contract(f, f, p, p - r)
    gg = contract(g, g, q, q - r)
    if isinstance(ff, float) or isinstance(gg, float):
        rhs = float(ff) * float(gg)  # r == 0 cannot happen; appease type checkers
    else:
        rhs = _weighted_sum(ff.values * gg.values, w)
    return abs(lhs - rhs) / max(abs(lhs), 1e-300)


@dataclass(frozen=True)
class ProductTerm:
    """One term of the multiplication formula for compensated integrals."""

    order: int
    r: int
    l: int
    coefficient: float
    kernel: DiscretizedKernel | float


def product_formula_terms(f: DiscretizedKernel, g: DiscretizedKernel) -> list[ProductTerm]:
    """Expansion of I_p(f) I_q(g) into compensated integrals.

    Emits, for r = 0..p^q and l = 0..r, the coefficient
    r! C(p,r) C(q,r) C(r,l) and the symmetrized contraction f *_r^l g of
    order p + q - r - l.
    """
    p, q = f.order, g.order
    terms = []
    for r in range(min(p, q) + 1):
        for l in range(r + 1):
            coef = float(math.factorial(r) * math.comb(p, r) * math.comb(q, r) * math.comb(r, l))
            kern = contract(f, g, r, l)
            if isinstance(kern, DiscretizedKernel):
                kern = symmetrize(kern)
            terms.append(ProductTerm(order=p + q - r - l, r=r, l=l, coefficient=coef, kernel=kern))
    return terms


# ---------------------------------------------------------------------------
# Pathwise evaluation with closed-form kernels on the continuum.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FirstOrderKernel:
    """Closed-form kernel g on the window with its compensator integrals.

    ``fn`` maps an (m, d) array of points to values; the moments are
    integrals against the control measure mu = intensity * Lebesgue:
    compensator = int g dmu, second_moment = int g^2 dmu and (optionally)
    fourth_moment = int g^4 dmu.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    compensator: float
    second_moment: float | None = None
    fourth_moment: float | None = None


@dataclass(frozen=True)
class SecondOrderKernel:
    """Closed-form symmetric kernel f(x, y) with compensators.

    ``fn(x, y)`` broadcasts an (m, d) against a (k, d) array to an (m, k)
    matrix; diagonal values are ignored by the pathwise evaluation.
    ``partial_compensator(x)`` is int f(x, y) mu(dy); ``compensator`` is
    the double integral against mu^2; ``second_moment`` is int f^2 dmu^2.
    """

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    partial_compensator: Callable[[np.ndarray], np.ndarray]
    compensator: float
    second_moment: float | None = None


@dataclass(frozen=True)
class FiniteChaosFunctional:
    """Constant plus first- and second-order compensated integrals.

    Holds the intensity and window of the control measure so Malliavin
    operators can integrate over the state space.
    """

    constant: float
    g1: FirstOrderKernel | None
    g2: SecondOrderKernel | None
    intensity: float
    window: "object" = None  # points.Window; kept loose to avoid an import cycle
    integer_valued: bool = False


def eval_I1(g: FirstOrderKernel, config: PointConfiguration) -> float:
    """First-order compensated integral: sum of g over points minus int g dmu."""
    if len(config) == 0:
        return -g.compensator
    return float(np.sum(g.fn(config.points))) - g.compensator


def eval_I2(f: SecondOrderKernel, config: PointConfiguration) -> float:
    """Second-order compensated integral, as an ordered off-diagonal sum.

    sum_{x != y} f(x,y) - 2 sum_x int f(x, y) mu(dy) + int int f dmu^2.
    """
    if len(config) == 0:
        return f.compensator
    pts = config.points
    matrix = f.fn(pts, pts)
    pair_sum = float(matrix.sum() - np.trace(matrix))
    partial = float(np.sum(f.partial_compensator(pts)))
    return pair_sum - 2.0 * partial + f.compensator


def evaluate_chaos(F: FiniteChaosFunctional, config: PointConfiguration) -> float:
    """Pathwise value constant + I1(g1) + I2(g2)."""
    out = F.constant
    if F.g1 is not None:
        out += eval_I1(F.g1, config)
    if F.g2 is not None:
        out += eval_I2(F.g2, config)
    return out


# ---------------------------------------------------------------------------
# Condition reports for Poisson limits on a perturbed chaos.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionReport:
    """Contraction norms and moment integrands for one kernel of a family.

    ``contraction_norms[(r, l)]`` is the L2 norm of f *_r^l f for
    r = 1..q, l = 1..min(r, q-1); ``flat_norms[r]`` is the L2(mu^r) norm
    of f *_q^(q-r) f; ``moment_gap`` is the scalar
    int (f^2 + q!^2 f^4 - 2 q! f^3) dmu^q, which vanishes exactly for
    kernels of the form (indicator of a symmetric set) / q!.
    ``max_abs`` and ``support_cells`` record boundedness and support,
    which is all the finiteness hypotheses need on a finite space.
    """

    label: str
    order: int
    l2_norm: float
    l4_norm: float
    contraction_norms: dict[tuple[int, int], float]
    flat_norms: dict[int, float]
    moment_gap: float
    max_abs: float
    support_cells: int


def poisson_limit_conditions(
    kernels: Sequence[DiscretizedKernel], labels: Sequence[str] | None = None
) -> list[ConditionReport]:
    """Per-kernel report of every quantity entering the Poisson limit criteria."""
    reports = []
    for i, f in enumerate(kernels):
        q = f.order
        w = f.space.weights
        qfact = float(math.factorial(q))
        norms: dict[tuple[int, int], float] = {}
        for r in range(1, q + 1):
            for l in range(1, min(r, q - 1) + 1):
                out = contract(f, f, r, l)
                norms[(r, l)] = abs(out) if isinstance(out, float) else kernel_l2(out)
        flat: dict[int, float] = {}
        for r in range(1, q + 1):
            out = contract(f, f, q, q - r)
            flat[r] = abs(out) if isinstance(out, float) else kernel_l2(out)
        gap = _weighted_sum(
            f.values**2 + qfact**2 * f.values**4 - 2.0 * qfact * f.values**3, w
        )
        reports.append(
            ConditionReport(
                label=labels[i] if labels else str(i),
                order=q,
                l2_norm=kernel_l2(f),
                l4_norm=kernel_l4(f),
                contraction_norms=norms,
                flat_norms=flat,
                moment_gap=gap,
                max_abs=float(np.max(np.abs(f.values))),
                support_cells=int(np.count_nonzero(f.values)),
            )
        )
    return reports


@dataclass(frozen=True)
class PerturbationRow:
    """Vanishing-perturbation diagnostics for one first-chaos functional.

    For B = I1(g) the three decay quantities reduce to integrals of the
    kernel against mu: E[B^2] = int g^2 dmu, the squared L2 norm of the
    derivative is the same integral (the derivative at z is the constant
    g(z)), and the fourth derivative moment is int g^4 dmu.
    """

    scale: float
    mean_square: float
    grad_square: float
    grad_fourth: float


def perturbation_diagnostics(
    family: Sequence[tuple[float, FirstOrderKernel]]
) -> list[PerturbationRow]:
    """Decay table for a family of first-chaos perturbations B = I1(g)."""
    rows = []
    for scale, g in family:
        if g.second_moment is None or g.fourth_moment is None:
            raise ValueError("perturbation diagnostics need second and fourth moments")
        rows.append(
            PerturbationRow(
                scale=scale,
                mean_square=g.second_moment,
                grad_square=g.second_moment,
                grad_fourth=g.fourth_moment,
            )
        )
    return rows
