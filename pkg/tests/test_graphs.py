"""Geometric graph queries, occupation coefficients, calibration."""

import math

import numpy as np
import pytest

from conftest import brute_degree, brute_edge_count, random_configuration
from chenstein.graphs import (
    CalibrationError,
    annulus,
    calibrate_delta,
    campbell_mean,
    coverage_moment,
    custom_rule,
    degree,
    discretized_edge_kernel,
    edge_count,
    gilbert,
    occupation,
    pair_volume,
    scaled_rule,
    unit_ball_volume,
)
from chenstein.points import PointConfiguration, RngStream, Window, sample_process


def _config(points, window):
    return PointConfiguration(points=np.asarray(points, dtype=float), window=window)


class TestRuleInvariants:
    @pytest.mark.parametrize(
        "rule",
        [
            gilbert(1, 0.1),
            gilbert(2, 0.2),
            gilbert(3, 0.15),
            annulus(1, 0.3, 0.6),
            annulus(2, 0.1, 0.25),
            custom_rule(
                2,
                lambda d: (np.abs(d).max(axis=1) < 0.1) & (np.abs(d).max(axis=1) > 0),
                radius=0.15,
            ),
        ],
    )
    def test_symmetry_and_no_loops(self, rule):
        rng = np.random.default_rng(42)
        diffs = rng.uniform(-1, 1, size=(10_000, rule.dimension))
        assert np.array_equal(rule.indicator(diffs), rule.indicator(-diffs))
        assert not rule.indicator(np.zeros((1, rule.dimension)))[0]

    def test_gilbert_is_strict(self):
        rule = gilbert(1, 0.1)
        assert rule.indicator(np.array([[0.0999999]]))[0]
        assert not rule.indicator(np.array([[0.1]]))[0]

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            gilbert(1, 0.0)
        with pytest.raises(ValueError):
            annulus(1, 0.5, 0.3)
        with pytest.raises(ValueError):
            custom_rule(1, lambda d: d[:, 0] > 0, radius=0.0)


class TestDegreeAndEdges:
    def test_degree_examples(self, unit_window_1d):
        cfg = _config([[-0.05], [0.03], [0.4]], unit_window_1d)
        rule = gilbert(1, 0.1)
        assert degree(cfg, rule, [0.0]) == 2
        assert edge_count(cfg, rule) == 1
        empty = _config(np.empty((0, 1)), unit_window_1d)
        assert degree(empty, rule, [0.0]) == 0
        assert edge_count(empty, rule) == 0

    def test_degree_outside_window(self, unit_window_1d):
        cfg = _config([[0.0]], unit_window_1d)
        with pytest.raises(ValueError):
            degree(cfg, gilbert(1, 0.1), [0.9])

    def test_two_distant_clusters(self, unit_window_1d):
        cfg = _config([[-0.40], [-0.39], [0.30], [0.31]], unit_window_1d)
        assert edge_count(cfg, gilbert(1, 0.05)) == 2

    @pytest.mark.parametrize(
        "rule",
        [gilbert(1, 0.12), gilbert(2, 0.2), annulus(2, 0.1, 0.3), gilbert(3, 0.25)],
    )
    def test_grid_matches_brute_force(self, rule):
        rng = np.random.default_rng(2024)
        window = Window.unit(rule.dimension)
        for _ in range(125):
            cfg = random_configuration(rng, window)
            assert edge_count(cfg, rule) == brute_edge_count(cfg.points, rule)
            z = rng.uniform(window.lows, window.highs)
            assert degree(cfg, rule, z) == brute_degree(cfg.points, rule, z)

    def test_handshake_identity(self):
        rng = np.random.default_rng(5)
        rule = gilbert(2, 0.25)
        window = Window.unit(2)
        for _ in range(50):
            cfg = random_configuration(rng, window)
            total = sum(degree(cfg, rule, z) for z in cfg.points)
            assert total == 2 * edge_count(cfg, rule)


class TestOccupation:
    def test_interval_rule(self):
        rep = occupation(gilbert(1, 0.1), resolution=512)
        assert rep.exact == pytest.approx(0.2, rel=1e-15)
        for value in (rep.psi, rep.psi_hat, rep.psi_check):
            assert value == pytest.approx(0.2, abs=0.01)

    def test_disk_rule(self):
        rep = occupation(gilbert(2, 0.1), resolution=512)
        assert rep.exact == pytest.approx(math.pi * 0.01, rel=1e-15)
        assert rep.psi == pytest.approx(math.pi * 0.01, rel=0.01)

    def test_annulus_interval(self):
        rep = occupation(annulus(1, 0.3, 0.6), resolution=512)
        assert rep.psi == pytest.approx(0.4, abs=0.005)
        assert rep.psi_hat == pytest.approx(0.6, abs=0.005)
        assert rep.psi_check == 0.0

    def test_ordering_invariant(self):
        for rule in [gilbert(1, 0.3), gilbert(2, 0.6), annulus(2, 0.2, 0.9)]:
            rep = occupation(rule, resolution=128)
            assert 0.0 <= rep.psi_check <= rep.psi <= rep.psi_hat

    def test_resolution_guard(self):
        with pytest.raises(ValueError):
            occupation(gilbert(1, 0.1), resolution=32)


class TestCampbellMean:
    def test_interval_closed_form(self, unit_window_1d):
        # oracle: midpoint quadrature of the pair indicator over W x W
        got = campbell_mean(gilbert(1, 0.1), 10.0)
        assert got == pytest.approx(9.5, rel=1e-12)
        n = 2000
        xs = (np.arange(n) + 0.5) / n - 0.5
        quad = np.abs(xs[:, None] - xs[None, :]) < 0.1
        oracle = 50.0 * quad.mean()
        assert got == pytest.approx(oracle, rel=2e-3)

    def test_zero_intensity(self):
        assert campbell_mean(gilbert(2, 0.1), 0.0) == 0.0

    def test_disk_closed_form_with_boundary_correction(self):
        # exact reduced integral for a disk: pi d^2 - 8 d^3 / 3 + d^4 / 2
        delta, lam = 0.05, 20.0
        exact = 0.5 * lam**2 * (math.pi * delta**2 - 8 * delta**3 / 3 + delta**4 / 2)
        q512 = campbell_mean(gilbert(2, delta), lam, resolution=512)
        q1024 = campbell_mean(gilbert(2, delta), lam, resolution=1024)
        assert q512 == pytest.approx(exact, rel=0.01)
        assert q512 == pytest.approx(q1024, rel=0.01)

    def test_monte_carlo_agreement(self, unit_window_1d):
        rule = gilbert(1, 0.1)
        lam, reps = 10.0, 10_000
        counts = np.array(
            [
                edge_count(sample_process(unit_window_1d, lam, RngStream(31, i)), rule)
                for i in range(reps)
            ],
            dtype=float,
        )
        stderr = counts.std(ddof=1) / math.sqrt(reps)
        assert abs(counts.mean() - campbell_mean(rule, lam)) <= 3 * stderr


class TestScaledRule:
    def test_identity_at_unit_intensity(self):
        rule = gilbert(2, 0.2)
        assert scaled_rule(rule, 1.0).params == rule.params

    def test_gilbert_rescaling(self):
        scaled = scaled_rule(gilbert(2, 0.2), 4.0)
        assert scaled.params[0] == pytest.approx(0.1, rel=1e-12)

    def test_occupation_scaling(self):
        base = gilbert(1, 0.2)
        lam = 2.0
        scaled = scaled_rule(base, lam)
        got = occupation(scaled, 512)
        ref = occupation(base, 512)
        assert got.exact == pytest.approx(ref.exact / lam, rel=1e-12)
        assert got.psi == pytest.approx(ref.psi / lam, abs=0.01)


class TestCalibration:
    def test_closed_form_root(self):
        # (lam^2/2)(2 d - d^2) = 1 at lam = 100: root of d^2 - 2 d + 2e-4
        delta = calibrate_delta(1, 100.0, 1.0)
        oracle = 1.0 - math.sqrt(1.0 - 2e-4)
        assert delta == pytest.approx(oracle, rel=1e-9)

    def test_defining_property(self):
        for lam in [25.0, 100.0]:
            delta = calibrate_delta(1, lam, 1.0)
            assert campbell_mean(gilbert(1, delta), lam) == pytest.approx(1.0, rel=1e-9)

    def test_monotone_in_intensity(self):
        d1 = calibrate_delta(1, 50.0, 1.0)
        d2 = calibrate_delta(1, 100.0, 1.0)
        assert d2 < d1

    def test_unreachable_target(self):
        with pytest.raises(CalibrationError):
            calibrate_delta(1, 1.0, 100.0)


class TestCoverageAndKernels:
    def test_coverage_moment_closed_form_vs_quadrature(self, unit_window_1d):
        delta = 0.07
        rule = gilbert(1, delta)
        for power in (1, 2, 3, 4):
            closed = coverage_moment(rule, unit_window_1d, power)
            n = 200_000
            zs = (np.arange(n) + 0.5) / n - 0.5
            v = np.minimum(zs + delta, 0.5) - np.maximum(zs - delta, -0.5)
            assert closed == pytest.approx(float((v**power).mean()), rel=1e-6)

    def test_pair_volume_matches_coverage_integral(self, unit_window_2d):
        rule = gilbert(2, 0.15)
        v = pair_volume(rule, unit_window_2d, resolution=256)
        m1 = coverage_moment(rule, unit_window_2d, 1, resolution=512)
        assert v == pytest.approx(m1, rel=5e-3)

    def test_discretized_kernel_is_projection(self):
        # the cell average lies in [0, 1/2] and is symmetric
        kern = discretized_edge_kernel(0.05, 25.0, cells=16)
        assert kern.is_symmetric()
        assert kern.values.min() >= 0.0
        assert kern.values.max() <= 0.5
        # mass check: sum over cells of avg * cellvol^2 = pair volume
        w = 1.0 / 16
        total = float(kern.values.sum()) * w * w
        assert total == pytest.approx(0.5 * pair_volume(gilbert(1, 0.05), Window.unit(1)), rel=1e-12)

    def test_unit_ball_volumes(self):
        assert unit_ball_volume(1) == 2.0
        assert unit_ball_volume(2) == math.pi
        assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)
