"""Wiener-Ito evaluation, contractions, and chaos condition reports."""

import itertools
import math

import numpy as np
import pytest

from chenstein.chaos import (
    DiscretizedKernel,
    DiscretizedSpace,
    FirstOrderKernel,
    SecondOrderKernel,
    contract,
    eval_I1,
    eval_I2,
    evaluate_chaos,
    fubini_check,
    kernel_l2,
    perturbation_diagnostics,
    poisson_limit_conditions,
    product_formula_terms,
    symmetrize,
)
from chenstein.cli import random_indicator_kernel, random_symmetric_kernel
from chenstein.graphs import calibrate_delta, discretized_edge_kernel, edge_count, edge_count_chaos, gilbert
from chenstein.points import PointConfiguration, RngStream, Window, count_in, sample_process


def _space(n, seed=0, uniform=False):
    rng = np.random.default_rng(seed)
    w = np.full(n, 1.0 / n) if uniform else rng.random(n) + 0.5
    return DiscretizedSpace(points=np.linspace(-0.5, 0.5, n).reshape(-1, 1), weights=w)


# ---------------------------------------------------------------------------
# pathwise first- and second-order integrals
# ---------------------------------------------------------------------------

class TestEvalI1:
    def test_zero_kernel(self, unit_window_1d):
        g = FirstOrderKernel(fn=lambda p: np.zeros(p.shape[0]), compensator=0.0)
        cfg = sample_process(unit_window_1d, 10.0, RngStream(1, 0))
        assert eval_I1(g, cfg) == 0.0

    def test_box_indicator_is_compensated_count(self, unit_window_1d):
        lam, box = 10.0, [(-0.25, 0.25)]
        g = FirstOrderKernel(
            fn=lambda p: ((p[:, 0] >= -0.25) & (p[:, 0] <= 0.25)).astype(float),
            compensator=lam * 0.5,
        )
        for i in range(20):
            cfg = sample_process(unit_window_1d, lam, RngStream(2, i))
            assert eval_I1(g, cfg) == count_in(cfg, box) - lam * 0.5

    def test_centering_and_isometry(self, unit_window_1d):
        # mean zero at 3 sigma; variance within 5% of int g^2 dmu
        lam, reps = 30.0, 10_000
        F = edge_count_chaos(gilbert(1, 0.1), lam)
        vals = np.array(
            [eval_I1(F.g1, sample_process(unit_window_1d, lam, RngStream(3, i)))
             for i in range(reps)]
        )
        stderr = vals.std(ddof=1) / math.sqrt(reps)
        assert abs(vals.mean()) <= 3 * stderr
        assert vals.var(ddof=1) == pytest.approx(F.g1.second_moment, rel=0.05)


class TestEvalI2:
    def test_zero_kernel(self, unit_window_1d):
        f = SecondOrderKernel(
            fn=lambda x, y: np.zeros((x.shape[0], y.shape[0])),
            partial_compensator=lambda p: np.zeros(p.shape[0]),
            compensator=0.0,
        )
        cfg = sample_process(unit_window_1d, 10.0, RngStream(4, 0))
        assert eval_I2(f, cfg) == 0.0

    def test_centering_and_isometry(self, unit_window_1d):
        lam, reps = 30.0, 10_000
        F = edge_count_chaos(gilbert(1, 0.1), lam)
        vals = np.array(
            [eval_I2(F.g2, sample_process(unit_window_1d, lam, RngStream(5, i)))
             for i in range(reps)]
        )
        stderr = vals.std(ddof=1) / math.sqrt(reps)
        assert abs(vals.mean()) <= 3 * stderr
        second = (vals**2).mean()
        err2 = (vals**2).std(ddof=1) / math.sqrt(reps)
        assert abs(second - 2 * F.g2.second_moment) <= max(3 * err2, 0.05 * 2 * F.g2.second_moment)


class TestReconstruction:
    def test_interval_graph_exact(self, unit_window_1d):
        lam = 40.0
        rule = gilbert(1, 0.08)
        F = edge_count_chaos(rule, lam)
        worst = 0.0
        for i in range(200):
            cfg = sample_process(unit_window_1d, lam, RngStream(6, i))
            worst = max(worst, abs(evaluate_chaos(F, cfg) - edge_count(cfg, rule)))
        assert worst <= 1e-10

    def test_disk_graph_exact(self, unit_window_2d):
        lam = 30.0
        rule = gilbert(2, 0.1)
        F = edge_count_chaos(rule, lam)
        worst = 0.0
        for i in range(200):
            cfg = sample_process(unit_window_2d, lam, RngStream(7, i))
            worst = max(worst, abs(evaluate_chaos(F, cfg) - edge_count(cfg, rule)))
        assert worst <= 1e-6


# ---------------------------------------------------------------------------
# contraction algebra
# ---------------------------------------------------------------------------

class TestContract:
    def test_single_cell_arithmetic(self):
        space = DiscretizedSpace(points=np.zeros((1, 1)), weights=np.array([0.7]))
        f = DiscretizedKernel(order=1, values=np.array([3.0]), space=space)
        full = contract(f, f, 1, 1)
        assert isinstance(full, float)
        assert full == pytest.approx(9.0 * 0.7, rel=1e-15)
        half = contract(f, f, 1, 0)
        assert half.order == 1
        assert half.values[0] == pytest.approx(9.0, rel=1e-15)

    def test_tensor_product_order(self):
        space = _space(4)
        rng = np.random.default_rng(0)
        f = DiscretizedKernel(order=2, values=rng.standard_normal((4, 4)), space=space)
        g = DiscretizedKernel(order=1, values=rng.standard_normal(4), space=space)
        out = contract(f, g, 0, 0)
        assert out.order == 3
        assert out.values[1, 2, 3] == pytest.approx(f.values[1, 2] * g.values[3], rel=1e-15)

    def test_output_order_always_matches(self):
        space = _space(3)
        rng = np.random.default_rng(1)
        for p, q in itertools.product((1, 2, 3), repeat=2):
            f = DiscretizedKernel(order=p, values=rng.standard_normal((3,) * p), space=space)
            g = DiscretizedKernel(order=q, values=rng.standard_normal((3,) * q), space=space)
            for r in range(min(p, q) + 1):
                for l in range(r + 1):
                    out = contract(f, g, r, l)
                    order = 0 if isinstance(out, float) else out.order
                    assert order == p + q - r - l

    def test_full_contraction_symmetry(self):
        space = _space(5)
        rng = np.random.default_rng(2)
        f = symmetrize(DiscretizedKernel(order=2, values=rng.standard_normal((5, 5)), space=space))
        g = symmetrize(DiscretizedKernel(order=2, values=rng.standard_normal((5, 5)), space=space))
        for r in (1, 2):
            a = contract(f, g, r, r)
            b = contract(g, f, r, r)
            av = a if isinstance(a, float) else a.values
            bv = b if isinstance(b, float) else b.values
            assert np.allclose(av, bv, rtol=0, atol=1e-14)

    def test_index_guards(self):
        space = _space(3)
        f = DiscretizedKernel(order=2, values=np.zeros((3, 3)), space=space)
        with pytest.raises(ValueError):
            contract(f, f, 3, 0)
        with pytest.raises(ValueError):
            contract(f, f, 1, 2)

    def test_squared_flat_norm_matches_loop_oracle(self):
        # |f *_r^0 g|^2 computed by nested loops over all indices
        n = 6
        space = _space(n, seed=3)
        rng = np.random.default_rng(3)
        w = space.weights
        f = symmetrize(DiscretizedKernel(order=2, values=rng.standard_normal((n, n)), space=space))
        g = symmetrize(DiscretizedKernel(order=2, values=rng.standard_normal((n, n)), space=space))
        r = 1
        lhs = kernel_l2(contract(f, g, r, 0)) ** 2
        oracle = 0.0
        for a in range(n):
            for t in range(n):
                for s in range(n):
                    oracle += w[a] * w[t] * w[s] * (f.values[a, t] * g.values[a, s]) ** 2
        assert lhs == pytest.approx(oracle, rel=1e-12)


class TestSymmetrize:
    def test_idempotent_and_norm_nonincreasing(self):
        space = _space(5, seed=9)
        rng = np.random.default_rng(9)
        for order in (2, 3):
            raw = DiscretizedKernel(order=order, values=rng.standard_normal((5,) * order), space=space)
            sym = symmetrize(raw)
            assert sym.is_symmetric()
            again = symmetrize(sym)
            assert np.allclose(sym.values, again.values, rtol=0, atol=1e-15)
            assert kernel_l2(sym) <= kernel_l2(raw) + 1e-15


class TestFubini:
    def test_zero_kernels(self):
        space = _space(4)
        f = DiscretizedKernel(order=2, values=np.zeros((4, 4)), space=space)
        assert fubini_check(f, f, 1) == 0.0

    def test_random_pairs_small(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            n = int(rng.integers(3, 9))
            space = _space(n, seed=int(rng.integers(1 << 31)))
            p, q = sorted(rng.integers(1, 4, size=2))
            f = random_symmetric_kernel(space, int(p), rng)
            g = random_symmetric_kernel(space, int(q), rng)
            for r in range(1, p + 1):
                assert fubini_check(f, g, r) < 1e-10

    def test_degenerate_full_overlap(self):
        rng = np.random.default_rng(12)
        space = _space(6, seed=12)
        f = random_symmetric_kernel(space, 2, rng)
        g = random_symmetric_kernel(space, 2, rng)
        assert fubini_check(f, g, 2) < 1e-10


class TestProductFormula:
    def test_first_order_terms(self):
        space = _space(5, seed=13)
        rng = np.random.default_rng(13)
        f = random_symmetric_kernel(space, 1, rng)
        g = random_symmetric_kernel(space, 1, rng)
        terms = product_formula_terms(f, g)
        by_rl = {(t.r, t.l): t for t in terms}
        assert set(by_rl) == {(0, 0), (1, 0), (1, 1)}
        assert by_rl[(0, 0)].order == 2 and by_rl[(0, 0)].coefficient == 1.0
        assert by_rl[(1, 0)].order == 1 and by_rl[(1, 0)].coefficient == 1.0
        assert by_rl[(1, 1)].order == 0 and by_rl[(1, 1)].coefficient == 1.0
        assert np.allclose(by_rl[(1, 0)].kernel.values, f.values * g.values)

    def test_second_order_coefficients(self):
        # derived expansion: six (r, l) terms with these exact weights
        space = _space(4, seed=14)
        rng = np.random.default_rng(14)
        f = random_symmetric_kernel(space, 2, rng)
        g = random_symmetric_kernel(space, 2, rng)
        terms = product_formula_terms(f, g)
        coef = {(t.r, t.l): t.coefficient for t in terms}
        assert coef == {(0, 0): 1.0, (1, 0): 4.0, (1, 1): 4.0, (2, 0): 2.0, (2, 1): 4.0, (2, 2): 2.0}
        assert len(terms) == 6

    def test_pathwise_identity_first_chaos(self, unit_window_1d):
        # I1(f) I1(g) = I2(sym(f (x) g)) + I1(f g) + <f, g> per configuration
        lam = 20.0
        If, Ig, Ifg = lam / 12.0, lam, lam / 12.0

        f = FirstOrderKernel(fn=lambda p: p[:, 0] ** 2, compensator=If)
        g = FirstOrderKernel(fn=lambda p: 1.0 + 0.5 * p[:, 0], compensator=Ig)
        fg = FirstOrderKernel(
            fn=lambda p: p[:, 0] ** 2 * (1.0 + 0.5 * p[:, 0]), compensator=Ifg
        )

        def tensor_fn(x, y):
            fx, gy = x[:, 0] ** 2, 1.0 + 0.5 * y[:, 0]
            fy, gx = y[:, 0] ** 2, 1.0 + 0.5 * x[:, 0]
            return 0.5 * (fx[:, None] * gy[None, :] + gx[:, None] * fy[None, :])

        tensor = SecondOrderKernel(
            fn=tensor_fn,
            partial_compensator=lambda p: 0.5 * ((p[:, 0] ** 2) * Ig + (1.0 + 0.5 * p[:, 0]) * If),
            compensator=If * Ig,
        )
        inner = lam / 12.0
        for i in range(50):
            cfg = sample_process(unit_window_1d, lam, RngStream(15, i))
            lhs = eval_I1(f, cfg) * eval_I1(g, cfg)
            rhs = eval_I2(tensor, cfg) + eval_I1(fg, cfg) + inner
            assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(lhs))


# ---------------------------------------------------------------------------
# condition reports
# ---------------------------------------------------------------------------

class TestPoissonLimitConditions:
    def test_indicator_moment_gap_is_zero(self):
        rng = np.random.default_rng(16)
        for order in (2, 3):
            space = _space(5, seed=16, uniform=True)
            kern = random_indicator_kernel(space, order, rng, fill=0.4)
            (report,) = poisson_limit_conditions([kern])
            assert report.moment_gap == pytest.approx(0.0, abs=1e-15)

    def test_scaling_is_quadratic(self):
        rng = np.random.default_rng(17)
        space = _space(6, seed=17)
        kern = random_symmetric_kernel(space, 2, rng)
        scaled = DiscretizedKernel(order=2, values=3.0 * kern.values, space=space)
        a = poisson_limit_conditions([kern])[0]
        b = poisson_limit_conditions([scaled])[0]
        for key, value in a.contraction_norms.items():
            assert b.contraction_norms[key] == pytest.approx(9.0 * value, rel=1e-12)

    def test_calibrated_family_norms_decrease(self):
        lams = [25.0, 50.0, 100.0, 200.0]
        kernels = [
            discretized_edge_kernel(calibrate_delta(1, lam, 1.0), lam, cells=24) for lam in lams
        ]
        reports = poisson_limit_conditions(kernels)
        for key in reports[0].contraction_norms:
            series = [r.contraction_norms[key] for r in reports]
            assert all(b < a for a, b in zip(series, series[1:])), (key, series)
        l4 = [r.l4_norm for r in reports]
        assert all(b < a for a, b in zip(l4, l4[1:]))


class TestPerturbationDiagnostics:
    def test_zero_kernel(self):
        g = FirstOrderKernel(
            fn=lambda p: np.zeros(p.shape[0]), compensator=0.0, second_moment=0.0, fourth_moment=0.0
        )
        (row,) = perturbation_diagnostics([(1.0, g)])
        assert row.mean_square == row.grad_square == row.grad_fourth == 0.0

    def test_calibrated_family_decreases(self):
        rows = perturbation_diagnostics(
            [
                (lam, edge_count_chaos(gilbert(1, calibrate_delta(1, lam, 1.0)), lam).g1)
                for lam in [25.0, 50.0, 100.0, 200.0, 400.0]
            ]
        )
        for field in ("mean_square", "grad_square", "grad_fourth"):
            series = [getattr(r, field) for r in rows]
            assert all(b < a for a, b in zip(series, series[1:])), (field, series)

    def test_monte_carlo_matches_declared_moment(self, unit_window_1d):
        lam, reps = 50.0, 4000
        g1 = edge_count_chaos(gilbert(1, 0.05), lam).g1
        vals = np.array(
            [eval_I1(g1, sample_process(unit_window_1d, lam, RngStream(18, i))) ** 2
             for i in range(reps)]
        )
        stderr = vals.std(ddof=1) / math.sqrt(reps)
        assert abs(vals.mean() - g1.second_moment) <= 3 * stderr
