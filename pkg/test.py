import unittest
import os
import json
import logging
import math
import shutil
import tempfile
from unittest.mock import patch

import numpy as np

from analysis import (bowen_dimension, conditional_invariance_residual, decay_fit, escape_rate,
                      expected_pressure, fit_decay, ly_constants, oracle_agreement, oracle_convergence,
                      pressure_curve, PressurePoint)
from cocycle import (DrivingSystem, Hole, Potential, beta_fiber, affine_fiber, build_affine_ly_system,
                     build_beta_system, derive_seed, has_full_branch_outside_hole, parse_number,
                     perturbed_doubling_fiber, sample_orbit, sample_words, system_from_dict)
from conditions import beta_condition_check, condition_check
from errors import (ConfigError, DepthError, DomainError, GridError, InconclusiveError,
                    InsufficientDataError, NotAnalyticError, OrbitError, UndefinedMetric)
from intervals import IntervalSet
from oracle import (AnalyticSystem, CylinderTree, analytic_pressure, analytic_root, box_count_dimension,
                    contiguous_nonfull_count, point_transfer, survivor_intervals, survivor_sequence,
                    is_full_interval, zeta_product_bound)
from orbit_worker import OrbitWorkerPool, chunked
from quenched import (conformality_residual, density_equivariance, fiber_lambda, functional_lambda,
                      invariant_density, lambda_product_check, raccim_eval, ratio_brackets)
from reports import ReportEnvelope, ReportWriter, RunConfig, config_hash, load_config
from reports import config as report_config
from reports.config import VERSION
from reports.envelope import describe_version, sanitize
from transfer import (CLOSED, OperatorCocycle, build_grid, compose_cocycle, default_battery, dump_matrix,
                      grid_function, hilbert_metric_plus, indicator, ulam_matrix, GridFunction)
from logging_config import setup_logging
import main

LOG2, LOG3 = math.log(2.0), math.log(3.0)

# --- Shared systems ---

def cantor_system(t=1.0):
    """Tripling map with the middle third as the hole."""
    return build_beta_system([3], [[["1/3", "2/3"]]], t, DrivingSystem.iid([1]))


def beta24_system(t=1.0):
    """beta = 2 and beta = 4 chosen i.i.d. with the last branch of each removed."""
    return build_beta_system([2, 4], [[["1/2", 1]], [["3/4", 1]]], t, DrivingSystem.iid(["1/2", "1/2"]))


def doubling_system(t=1.0, hole=()):
    return build_affine_ly_system([{"breakpoints": [0, "1/2", 1], "slopes": [2, 2]}], [list(hole)], t,
                                  DrivingSystem.iid([1]))


RANDOM_LY_DOC = {
    "driving": {"kind": "iid", "probabilities": ["1/2", "1/2"]},
    "fibers": [
        {"type": "affine", "params": {"breakpoints": [0, "1/2", 1], "slopes": [2, 2]},
         "hole": [["1/4", "5/16"]]},
        {"type": "affine", "params": {"breakpoints": [0, "3/10", 1], "slopes": ["10/3", "10/7"]},
         "hole": [["1/2", "5/8"]]},
    ],
    "potential": {"kind": "geometric", "t": 1},
}

CANTOR_DOC = {
    "driving": {"kind": "iid", "probabilities": [1]},
    "fibers": [{"type": "beta", "params": {"beta": 3}, "hole": [["1/3", "2/3"]]}],
    "potential": {"kind": "geometric", "t": 1},
}


def cocycle_for(system, resolution, openness="open"):
    return OperatorCocycle(system, build_grid(system, resolution), openness).build()


# --- Test Cases ---

class TestIntervalSet(unittest.TestCase):
    """Tests for exact interval unions."""

    def test_adjacent_components_merge(self):
        """Touching intervals become one component and lengths add up."""
        s = IntervalSet.from_pairs([(0.25, 0.5), (0.0, 0.25), (0.75, 1.0)])
        self.assertEqual(len(s), 2)
        self.assertAlmostEqual(s.total_length, 0.75)

    def test_complement_and_intersection(self):
        """Complement in [0, 1) and intersection of overlapping sets."""
        hole = IntervalSet.from_pairs([(0.25, 0.5)])
        self.assertEqual(list(hole.complement(0.0, 1.0)), [(0.0, 0.25), (0.5, 1.0)])
        a = IntervalSet.from_pairs([(0.0, 0.5)])
        b = IntervalSet.from_pairs([(0.25, 1.0)])
        self.assertEqual(list(a.intersection(b)), [(0.25, 0.5)])
        self.assertTrue(IntervalSet.empty().intersection(a).is_empty())

    def test_membership_and_subset(self):
        """Right ends are open except at 1.0."""
        unit = IntervalSet.unit()
        self.assertTrue(unit.contains(1.0))
        half = IntervalSet.from_pairs([(0.0, 0.5)])
        self.assertFalse(half.contains(0.5))
        self.assertTrue(half.is_subset(unit))
        self.assertFalse(unit.is_subset(half))

    def test_invalid_interval(self):
        """A reversed pair is rejected."""
        with self.assertRaises(ValueError):
            IntervalSet.from_pairs([(0.5, 0.25)])


class TestCocycle(unittest.TestCase):
    """Tests for driving systems, orbits, fiber maps, holes and the system loader."""

    def test_parse_number(self):
        """Fractions in strings are exact; garbage is a config error."""
        self.assertAlmostEqual(parse_number("10/3"), 10.0 / 3.0)
        self.assertEqual(parse_number(2), 2.0)
        with self.assertRaises(ConfigError):
            parse_number("ten")

    def test_driving_validation(self):
        """Probabilities must sum to one and transition rows must be stochastic."""
        with self.assertRaises(ConfigError):
            DrivingSystem.iid([0.5, 0.6])
        with self.assertRaises(ConfigError):
            DrivingSystem.markov([[0.5, 0.6], [0.5, 0.5]])
        with self.assertRaises(ConfigError):
            DrivingSystem.markov([[0.9, 0.1], [0.5, 0.5]], stationary=[0.5, 0.5])

    def test_markov_stationary_vector(self):
        """The stationary vector is solved when not given."""
        d = DrivingSystem.markov([[0.9, 0.1], [0.5, 0.5]])
        self.assertAlmostEqual(d.stationary[0], 5.0 / 6.0, places=10)
        self.assertAlmostEqual(d.word_probability((0, 1)), 5.0 / 6.0 * 0.1, places=10)
        self.assertAlmostEqual(sum(p for _, p in d.words(3)), 1.0, places=10)

    def test_orbit_is_reproducible(self):
        """Same seed gives the same symbols; enlarging the window keeps them."""
        d = DrivingSystem.markov([[0.7, 0.3], [0.4, 0.6]])
        a = sample_orbit(d, 12345, 10, 20)
        b = sample_orbit(d, 12345, 10, 20)
        wide = sample_orbit(d, 12345, 30, 50)
        self.assertEqual(a.symbols, b.symbols)
        for k in range(-10, 21):
            self.assertEqual(a.symbol(k), wide.symbol(k))

    def test_orbit_window_and_shift(self):
        """Shifting re-indexes; leaving the window is an orbit error."""
        orbit = sample_orbit(DrivingSystem.iid(["1/2", "1/2"]), 3, 5, 10)
        self.assertEqual(orbit.shift(3).symbol(0), orbit.symbol(3))
        self.assertEqual(orbit.shift(3).symbol(-2), orbit.symbol(1))
        self.assertTrue(orbit.covers(-5, 10))
        self.assertFalse(orbit.covers(-6, 10))
        with self.assertRaises(OrbitError):
            orbit.symbol(11)

    def test_sample_words_match_orbits(self):
        """Batched Monte Carlo words are the forward words of the derived-seed orbits."""
        d = DrivingSystem.iid(["1/2", "1/2"])
        words = sample_words(d, 99, 4, 6, 12)
        for row in range(6):
            orbit = sample_orbit(d, derive_seed(99, 4 + row), 0, 11)
            self.assertEqual(tuple(words[row].tolist()), orbit.word(0, 12))

    def test_beta_fiber(self):
        """beta = 2.5 has two full branches and a last branch onto [0, 0.5]."""
        f = beta_fiber(2.5)
        self.assertEqual(len(f.branches), 3)
        self.assertTrue(f.branches[0].is_full())
        self.assertFalse(f.branches[2].is_full())
        self.assertAlmostEqual(f.branches[2].image[1], 0.5)
        self.assertTrue(f.is_surjective())
        with self.assertRaises(DomainError):
            beta_fiber(1.0)

    def test_affine_fiber_validation(self):
        """Slopes below the expansion floor need the explicit option."""
        f = affine_fiber([0, "3/10", 1], ["10/3", "10/7"])
        self.assertTrue(all(br.is_full() for br in f.branches))
        self.assertEqual(f.slope_range(), (10.0 / 7.0, 10.0 / 3.0))
        with self.assertRaises(DomainError):
            affine_fiber([0, 1], [1.0])
        self.assertEqual(len(affine_fiber([0, 1], [1.0], allow_non_expanding=True).branches), 1)
        with self.assertRaises(DomainError):
            affine_fiber([0, 0.5, 1], [2])

    def test_perturbed_doubling_inverse(self):
        """Generic branches invert by bisection to round-off."""
        f = perturbed_doubling_fiber(0.3)
        br = f.branches[0]
        self.assertAlmostEqual(br.inverse(float(br(0.3))), 0.3, places=12)
        self.assertAlmostEqual(float(f.derivative(0.0)), 2.3)
        self.assertTrue(all(b.is_full() for b in f.branches))
        with self.assertRaises(DomainError):
            perturbed_doubling_fiber(1.0)

    def test_inverse_consistency(self):
        """T(T^-1 y) = y to 1e-12 for random branches and random points of their images."""
        fibers = [beta_fiber(2.5), beta_fiber(4), affine_fiber([0, "3/10", 1], ["10/3", "10/7"]),
                  perturbed_doubling_fiber(0.4), perturbed_doubling_fiber(-0.7)]
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(1000):
            fiber = fibers[int(rng.integers(len(fibers)))]
            br = fiber.branches[int(rng.integers(len(fiber.branches)))]
            lo, hi = br.image
            y = lo + (hi - lo) * float(rng.random())
            x = br.inverse(y)
            self.assertTrue(br.domain[0] <= x <= br.domain[1])
            worst = max(worst, abs(float(br(x)) - y))
        self.assertLessEqual(worst, 1e-12)

    def test_preimage_set(self):
        """Doubling pulls [0, 1/2) back to [0, 1/4) and [1/2, 3/4)."""
        f = affine_fiber([0, 0.5, 1], [2, 2])
        pre = f.preimage_set(IntervalSet.from_pairs([(0.0, 0.5)]))
        self.assertTrue(pre.approx_equal(IntervalSet.from_pairs([(0.0, 0.25), (0.5, 0.75)]), 1e-12))

    def test_holes_and_potentials(self):
        """Holes must lie in [0, 1]; tabulated potentials cannot be re-parametrized."""
        with self.assertRaises(DomainError):
            Hole.from_pairs([[0.5, 1.5]])
        hole = Hole.from_pairs([["1/3", "2/3"]], snap_points=[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
        self.assertEqual(hole.component_count, 1)
        self.assertAlmostEqual(hole.survivor_set().total_length, 2.0 / 3.0)
        table = Potential.tabulated([{"edges": [0, 0.5, 1], "values": [0.0, -1.0]}])
        with self.assertRaises(DomainError):
            table.with_t(0.5)
        with self.assertRaises(DomainError):
            Potential.tabulated([{"edges": [0, 0.7], "values": [0.0]}])

    def test_full_branch_outside_hole(self):
        """The guarantee is checked when the system is assembled."""
        self.assertTrue(has_full_branch_outside_hole(beta_fiber(3), Hole.from_pairs([["1/3", "2/3"]])))
        doc = json.loads(json.dumps(RANDOM_LY_DOC))
        doc["fibers"][0]["hole"] = [["1/4", "5/16"], ["3/4", "13/16"]]
        doc["options"] = {"full_branch_guarantee": True}
        with self.assertRaises(DomainError):
            system_from_dict(doc)

    def test_system_loader(self):
        """Mixed documents load; wide beta holes need the option."""
        system = system_from_dict(RANDOM_LY_DOC)
        self.assertEqual(system.alphabet_size, 2)
        self.assertTrue(system.is_open)
        self.assertFalse(system.closed().is_open)
        wide = {"driving": {"kind": "iid", "probabilities": [1]},
                "fibers": [{"type": "beta", "params": {"beta": 3}, "hole": [[0.1, 0.9]]}]}
        with self.assertRaises(DomainError):
            system_from_dict(wide)
        wide["options"] = {"allow_wide_holes": True}
        self.assertEqual(system_from_dict(wide).holes[0].component_count, 1)
        with self.assertRaises(ConfigError):
            system_from_dict({"driving": {"kind": "iid", "probabilities": [1]},
                              "fibers": [{"type": "tent", "params": {}}]})


class TestTransfer(unittest.TestCase):
    """Tests for grids and Ulam matrices."""

    def test_grid_contains_structural_points(self):
        """Branch and hole endpoints are grid points; tiny grids are rejected."""
        system = system_from_dict(RANDOM_LY_DOC)
        grid = build_grid(system, 8)
        for p in (0.3, 0.25, 0.3125, 0.5, 0.625):
            self.assertTrue(grid.contains_point(p))
        with self.assertRaises(GridError):
            build_grid(system, 1)

    def test_lebesgue_duality_at_t1(self):
        """At t = 1 the closed matrix preserves Lebesgue mass column by column."""
        for system in (system_from_dict(RANDOM_LY_DOC), beta24_system()):
            cocycle = cocycle_for(system, 64, CLOSED)
            w = cocycle.grid.widths
            for s in range(system.alphabet_size):
                M = cocycle.matrix(s).entries
                np.testing.assert_allclose(w @ M, w, rtol=0, atol=1e-12)

    def test_lebesgue_duality_generic_branches(self):
        """The same duality holds for C^2 branches."""
        fiber = perturbed_doubling_fiber(0.4)
        grid = build_grid(doubling_system(), 32)
        M = ulam_matrix(fiber, Hole.none(), Potential.geometric(1.0), grid, CLOSED, 0)
        np.testing.assert_allclose(grid.widths @ M.entries, grid.widths, rtol=0, atol=1e-10)

    def test_open_matrix_kills_hole(self):
        """Hole columns are empty in the open matrix; tripling keeps 2/3 of the mass."""
        cocycle = cocycle_for(cantor_system(), 27)
        M = cocycle.matrix(0)
        dead = M.dead_columns
        self.assertTrue(np.all(dead[9:18]))
        self.assertFalse(np.any(dead[:9]))
        np.testing.assert_allclose(M.entries @ np.ones(27), np.full(27, 2.0 / 3.0), atol=1e-14)

    def test_composition_law(self):
        """The explicit product acts like repeated steps."""
        system = beta24_system()
        cocycle = cocycle_for(system, 64)
        rng = np.random.default_rng(7)
        orbit = sample_orbit(system.driving, 11, 0, 10)
        for _ in range(10):
            f = rng.random(64)
            composed = compose_cocycle(cocycle, orbit, 0, 4).entries @ f
            np.testing.assert_allclose(composed, cocycle.push(orbit, 0, 4, f), rtol=1e-10, atol=1e-12)

    def test_hilbert_metric(self):
        """Two-cell example and weak contraction under a positive step."""
        grid = build_grid(doubling_system(), 2)
        f = GridFunction(np.array([1.0, 2.0]), grid)
        h = GridFunction(np.array([2.0, 1.0]), grid)
        self.assertAlmostEqual(hilbert_metric_plus(f, h), math.log(4.0))
        self.assertAlmostEqual(hilbert_metric_plus(f, 3.0 * f), 0.0)
        zero = GridFunction(np.zeros(2), grid)
        with self.assertRaises(UndefinedMetric):
            hilbert_metric_plus(zero, zero)

        system = beta24_system()
        cocycle = cocycle_for(system, 32, CLOSED)
        rng = np.random.default_rng(3)
        for _ in range(100):
            a = GridFunction(rng.random(32) + 0.01, cocycle.grid)
            b = GridFunction(rng.random(32) + 0.01, cocycle.grid)
            M = cocycle.matrix(int(rng.integers(2))).entries
            before = hilbert_metric_plus(a, b)
            after = hilbert_metric_plus(GridFunction(M @ a.values, a.grid), GridFunction(M @ b.values, b.grid))
            self.assertLessEqual(after, before + 1e-12)

    def test_battery_and_indicator(self):
        """Default battery has twenty entries; aligned indicators are exact."""
        battery = default_battery()
        self.assertEqual(len(battery), 20)
        grid = build_grid(doubling_system(), 8)
        ind = indicator(grid, [0.25, 0.5])
        np.testing.assert_array_equal(ind.values, [0, 0, 1, 1, 0, 0, 0, 0])
        exact = grid_function(grid, {"name": "q", "kind": "indicator", "interval": ["1/4", "1/2"]})
        np.testing.assert_array_equal(exact.values, ind.values)
        hat = grid_function(grid, {"name": "h", "kind": "hat", "center": 0.5, "width": 0.2})
        self.assertTrue(hat.is_nonnegative())
        with self.assertRaises(GridError):
            grid_function(grid, {"name": "x", "kind": "spline"})


class TestQuenched(unittest.TestCase):
    """Tests for the ratio bracket estimators."""

    def test_fiber_lambda_cantor(self):
        """Open tripling multiplier is 2 * 3^-t."""
        for t in (1.0, 0.5, 0.0):
            cocycle = cocycle_for(cantor_system(t), 27)
            orbit = sample_orbit(cocycle.system.driving, 0, 0, 30)
            lam = fiber_lambda(cocycle, orbit, 0, 20)
            self.assertAlmostEqual(lam.value, 2.0 * 3.0 ** (-t), places=12)

    def test_fiber_lambda_random_beta(self):
        """Multipliers follow the symbol: 1/2 for beta = 2 and 3/4 for beta = 4."""
        system = beta24_system()
        cocycle = cocycle_for(system, 64)
        orbit = sample_orbit(system.driving, 5, 0, 60)
        for p in range(8):
            expected = 0.5 if orbit.symbol(p) == 0 else 0.75
            self.assertAlmostEqual(fiber_lambda(cocycle, orbit, p, 20).value, expected, places=12)

    def test_ratio_brackets_are_monotone(self):
        """Lower ends never decrease and upper ends never increase."""
        system = system_from_dict(RANDOM_LY_DOC)
        cocycle = cocycle_for(system, 128)
        rng = np.random.default_rng(1)
        for case in range(100):
            orbit = sample_orbit(system.driving, case, 0, 40)
            columns = rng.random((128, 2))
            for seq in ratio_brackets(cocycle, orbit, 0, columns, 30, 1e-10):
                lows = [r.min_ratio for r in seq.records]
                highs = [r.max_ratio for r in seq.records]
                self.assertTrue(all(b >= a for a, b in zip(lows, lows[1:])))
                self.assertTrue(all(b <= a for a, b in zip(highs, highs[1:])))
                self.assertLessEqual(lows[-1], highs[-1])

    def test_conformality(self):
        """nu(L f) = lambda nu(f) within the bracket errors for the battery."""
        system = system_from_dict(RANDOM_LY_DOC)
        cocycle = cocycle_for(system, 512)
        orbit = sample_orbit(system.driving, 21, 5, 80)
        for spec in default_battery():
            f = grid_function(cocycle.grid, spec)
            residual, bound = conformality_residual(cocycle, orbit, 0, f, 60, 1e-10)
            self.assertLessEqual(residual, bound + 1e-9, spec["name"])

    def test_density_equivariance_and_positivity(self):
        """q is positive, normalized, and pushed forward onto the next fiber's q."""
        system = beta24_system()
        cocycle = cocycle_for(system, 64)
        for k in range(32):
            orbit = sample_orbit(system.driving, derive_seed(1, k), 12, 60)
            density = invariant_density(cocycle, orbit, 0, 10, 1e-10, 40)
            self.assertTrue(np.all(density.q.values > 0))
            self.assertAlmostEqual(functional_lambda(cocycle, orbit, 0, density.q, 40).value, 1.0, places=9)
            defect, declared = density_equivariance(cocycle, orbit, 0, 10, 40)
            self.assertLessEqual(defect, declared)

    def test_raccim_cantor(self):
        """Conditionally invariant measure of the tripling map: alpha = 2/3, eta([0, 1/3)) = 1/2."""
        cocycle = cocycle_for(cantor_system(), 81)
        orbit = sample_orbit(cocycle.system.driving, 0, 10, 60)
        fs = {"left": indicator(cocycle.grid, [0.0, 1.0 / 3.0])}
        est = raccim_eval(cocycle, orbit, 0, fs, 8, 40)
        self.assertAlmostEqual(est.alpha, 2.0 / 3.0, places=9)
        self.assertAlmostEqual(est.entries["left"][0], 0.5, places=9)
        self.assertLess(est.residual, 1e-9)

    def test_lambda_product(self):
        """Lambda of the pushed function equals the multiplier product."""
        system = beta24_system()
        cocycle = cocycle_for(system, 64)
        orbit = sample_orbit(system.driving, 8, 0, 80)
        f = grid_function(cocycle.grid, {"name": "ramp", "kind": "ramp"})
        pushed, rhs, tolerance = lambda_product_check(cocycle, orbit, 0, f, 5, 40)
        self.assertLessEqual(abs(pushed - rhs), tolerance)


class TestOracle(unittest.TestCase):
    """Tests for exact survivor sets, preimage trees and closed forms."""

    def setUp(self):
        self.cantor = cantor_system()
        self.orbit = sample_orbit(self.cantor.driving, 0, 0, 40)

    def test_full_interval(self):
        """Full images cover [0, 1] up to round-off at both ends."""
        self.assertTrue(is_full_interval(0.0, 1.0))
        self.assertTrue(is_full_interval(1e-13, 1.0 - 1e-13))
        self.assertFalse(is_full_interval(0.0, 0.5))
        self.assertFalse(is_full_interval(0.25, 1.0))
        system = build_beta_system([2.5], [[]], 1.0, DrivingSystem.iid([1]))
        leaves = CylinderTree(system, (0,), 1, open_=False).leaves()
        self.assertEqual(len(leaves), 3)
        self.assertEqual(sum(z.is_full for z in leaves), 2)

    def test_survivor_sets(self):
        """X_2 of the tripling map is eight intervals of length 1/27."""
        x0 = survivor_intervals(self.cantor, self.orbit, 0, 0)
        self.assertEqual(len(x0), 2)
        x2 = survivor_intervals(self.cantor, self.orbit, 0, 2)
        self.assertEqual(len(x2), 8)
        self.assertAlmostEqual(x2.total_length, 8.0 / 27.0, places=12)
        with self.assertRaises(DepthError):
            survivor_intervals(self.cantor, self.orbit, 0, 12, max_components=100)

    def test_survivor_recursion(self):
        """X_(n+m) is X_n intersected with the n-step pullback of X_m further along."""
        system = beta24_system()
        rng = np.random.default_rng(2)
        for case in range(100):
            orbit = sample_orbit(system.driving, case, 0, 10)
            n, m = int(rng.integers(0, 4)), int(rng.integers(0, 4))
            target = survivor_intervals(system, orbit, n, m)
            for j in range(n - 1, -1, -1):
                target = system.fibers[orbit.symbol(j)].preimage_set(target)
            expected = survivor_intervals(system, orbit, 0, n).intersection(target)
            self.assertTrue(survivor_intervals(system, orbit, 0, n + m).approx_equal(expected, 1e-12))

    def test_point_transfer(self):
        """(L^2 1)(0.1) = 4/9 on the open tripling map; closed doubling keeps L^3 1 = 1."""
        one = lambda x: np.ones(np.shape(x))
        self.assertAlmostEqual(point_transfer(self.cantor, self.orbit, 0, 2, one, 0.1), 4.0 / 9.0, places=12)
        doubling = doubling_system()
        orbit = sample_orbit(doubling.driving, 0, 0, 10)
        self.assertAlmostEqual(point_transfer(doubling, orbit, 0, 3, one, 0.37, "closed", threads=2), 1.0,
                               places=12)
        with self.assertRaises(DepthError):
            point_transfer(doubling, orbit, 0, 16, one, 0.5)

    def test_cylinders_and_zeta(self):
        """Contiguous non-full counts of the tripling and beta = 2.5 examples."""
        self.assertEqual(contiguous_nonfull_count(self.cantor, (0,), 1), 0)
        leaves = CylinderTree(self.cantor, (0, 0), 2, open_=True).leaves()
        self.assertEqual(len(leaves), 4)
        self.assertTrue(all(z.is_full for z in leaves))
        beta = build_beta_system(["5/2"], [[]], 1.0, DrivingSystem.iid([1]))
        self.assertEqual(contiguous_nonfull_count(beta, (0,), 1), 1)
        for n in range(1, 6):
            word = (0,) * n
            self.assertLessEqual(contiguous_nonfull_count(beta, word, n), zeta_product_bound(beta, word, n))

    def test_analytic_pressure(self):
        """Closed forms for the tripling and random beta examples."""
        for t in (0.0, 0.5, 1.0):
            self.assertAlmostEqual(analytic_pressure(self.cantor, t), LOG2 - t * LOG3, places=12)
            self.assertAlmostEqual(analytic_pressure(beta24_system(), t), 0.5 * LOG3 - 1.5 * t * LOG2, places=12)
        self.assertAlmostEqual(analytic_root(self.cantor), LOG2 / LOG3, places=9)
        self.assertAlmostEqual(analytic_root(beta24_system()), LOG3 / (3.0 * LOG2), places=9)
        self.assertAlmostEqual(analytic_pressure(self.cantor, 1.0, closed=True), 0.0, places=12)

    def test_analytic_flag(self):
        """Holes that cut through branches have no closed form."""
        system = system_from_dict(RANDOM_LY_DOC)
        info = AnalyticSystem.from_system(system)
        self.assertFalse(info.flag)
        self.assertTrue(info.closed_flag)
        with self.assertRaises(NotAnalyticError):
            analytic_pressure(system, 1.0)

    def test_box_count(self):
        """Box counting on survivor depths 4 to 10 recovers log 2 / log 3."""
        survivors = survivor_sequence(self.cantor, self.orbit, 0, list(range(4, 11)))
        estimate = box_count_dimension(survivors)
        self.assertLess(abs(estimate.slope - LOG2 / LOG3), 0.02)
        with self.assertRaises(InsufficientDataError):
            box_count_dimension(survivors[:2])
        empty = box_count_dimension([IntervalSet.empty()] * 3)
        self.assertTrue(empty.empty)


class TestAnalysis(unittest.TestCase):
    """Tests for pressure, dimension, escape, decay and the LY constants."""

    def test_pressure_curve_analytic(self):
        """Cantor rows: log 2, log 2 - 0.5 log 3 and log(2/3)."""
        curve = pressure_curve(cantor_system(), [0.0, 0.5, 1.0], estimator="analytic")
        values = [p.ep for p in curve.points]
        for got, want in zip(values, [LOG2, LOG2 - 0.5 * LOG3, math.log(2.0 / 3.0)]):
            self.assertAlmostEqual(got, want, places=12)
        self.assertTrue(curve.is_decreasing())
        self.assertEqual(curve.to_rows()[0]["estimator"], "analytic")
        with self.assertRaises(ConfigError):
            pressure_curve(cantor_system(), [], estimator="analytic")

    def test_sandwich_exact_on_cantor(self):
        """L^n 1 is constant on the tripling survivors, so the sandwich is exact."""
        for t in (0.5, 1.0):
            point = expected_pressure(cantor_system(), t, samples=4, depth=10, resolution=27)
            self.assertAlmostEqual(point.ep, LOG2 - t * LOG3, places=12)
            self.assertAlmostEqual(point.stderr, 0.0, places=12)

    def test_sandwich_matches_lambda_product(self):
        """Both Monte Carlo estimators see the same orbits."""
        system = beta24_system()
        sandwich = expected_pressure(system, 1.0, samples=8, depth=10, estimator="sandwich", seed=4,
                                     resolution=16)
        product = expected_pressure(system, 1.0, samples=8, depth=10, estimator="lambda", seed=4,
                                    resolution=16, n_max=20)
        np.testing.assert_allclose(sandwich.values, product.values, atol=1e-9)
        self.assertEqual(product.estimator, "lambda_product")

    def test_random_beta_pressure(self):
        """Monte Carlo EP(1) of the random beta example within five standard errors."""
        point = expected_pressure(beta24_system(), 1.0, samples=64, depth=30, seed=2, resolution=16)
        self.assertLess(abs(point.ep - (0.5 * LOG3 - 1.5 * LOG2)), 5.0 * point.stderr + 1e-9)

    def test_bowen_analytic(self):
        """Cantor dimension to 1e-9 through the closed form."""
        report = bowen_dimension(cantor_system(), tol_t=1e-9, estimator="analytic")
        self.assertLess(abs(report.h - LOG2 / LOG3), 1e-9)
        self.assertLessEqual(report.bracket[1] - report.bracket[0], 1e-9)
        with self.assertRaises(NotAnalyticError):
            bowen_dimension(system_from_dict(RANDOM_LY_DOC), estimator="analytic")

    def test_bowen_boundaries(self):
        """h = 1 without a hole and h = 0 when one branch survives."""
        closed = bowen_dimension(doubling_system(), estimator="analytic")
        self.assertEqual((closed.h, closed.boundary), (1.0, "one"))
        single = build_beta_system([2], [[["1/2", 1]]], 1.0, DrivingSystem.iid([1]))
        report = bowen_dimension(single, estimator="analytic")
        self.assertEqual((report.h, report.boundary), (0.0, "zero"))

    def test_bowen_monte_carlo(self):
        """Random beta dimension by Monte Carlo bisection at K = 256, n = 30."""
        report = bowen_dimension(beta24_system(), tol_t=5e-3, estimator="sandwich", samples=256, depth=30,
                                 seed=20240611, resolution=64)
        self.assertLess(abs(report.h - LOG3 / (3.0 * LOG2)), 5e-3)
        self.assertLessEqual(report.bracket[1] - report.bracket[0], 1e-2)
        self.assertEqual(report.method, "bisection_monte_carlo")

    def test_bowen_unresolved_midpoint(self):
        """A midpoint that never leaves its confidence interval ends a narrow bisection."""
        def noisy_point(t, count):
            ep = 0.3 - t
            return PressurePoint(t=t, ep=ep, stderr=1.0 if abs(ep) < 1e-3 else 0.0, samples=count,
                                 depth=30, estimator="sup_inf_sandwich")

        with patch("analysis.PressureSampler.point", side_effect=noisy_point):
            report = bowen_dimension(cantor_system(), tol_t=4e-3, estimator="sandwich", samples=256,
                                     resolution=8, max_samples=1024)
            self.assertEqual(report.unresolved_at, 0.30078125)
            self.assertEqual(report.h, 0.30078125)
            self.assertEqual(report.bracket, (0.296875, 0.3046875))
            self.assertIsNone(report.steps[-1]["sign"])
            with self.assertRaises(InconclusiveError):
                bowen_dimension(cantor_system(), tol_t=1e-3, estimator="sandwich", samples=256,
                                resolution=8, max_samples=1024)

    def test_escape_cantor_exact(self):
        """Leb(X_k) = (2/3)^(k+1) gives the escape rate log(3/2)."""
        system = cantor_system()
        orbit = sample_orbit(system.driving, 0, 0, 40)
        report = escape_rate(system, orbit, 8)
        self.assertEqual(report.source, "exact_intervals")
        self.assertAlmostEqual(report.direct, math.log(1.5), places=9)
        self.assertAlmostEqual(report.pressure_diff, math.log(1.5), places=12)
        self.assertTrue(report.agree)
        self.assertFalse(report.underflow)

    def test_escape_cantor_product_law(self):
        """Deep survivor sets exceed the component cap and the product law takes over."""
        system = cantor_system()
        orbit = sample_orbit(system.driving, 0, 0, 40)
        report = escape_rate(system, orbit, 30)
        self.assertEqual(report.source, "product_law")
        self.assertAlmostEqual(report.direct, math.log(1.5), places=9)
        self.assertTrue(report.agree)
        with self.assertRaises(InsufficientDataError):
            escape_rate(system, orbit, 1)

    def test_escape_random_beta(self):
        """Direct slope agrees with EP(closed) - EP(open) within the Monte Carlo band."""
        system = beta24_system()
        orbits = [sample_orbit(system.driving, derive_seed(6, k), 0, 40) for k in range(16)]
        report = escape_rate(system, orbits, 30)
        self.assertAlmostEqual(report.pressure_diff, 1.5 * LOG2 - 0.5 * LOG3, places=12)
        self.assertLess(abs(report.direct - report.pressure_diff), 4.0 * report.band + 5e-3)

    def test_decay_cantor(self):
        """The tripling cocycle forgets 1_[0, 1/3) after one step."""
        system = cantor_system()
        cocycle = cocycle_for(system, 81)
        orbit = sample_orbit(system.driving, 0, 12, 80)
        fs = {"left": indicator(cocycle.grid, [0.0, 1.0 / 3.0]).values}
        report = decay_fit(cocycle, orbit, 0, fs, 30, 10, n_max=40)
        self.assertEqual(len(report.sequences["left"]), 31)
        self.assertLess(report.sequences["left"][30], 1e-8)
        self.assertEqual(report.fits["left"].status, "fitted")
        self.assertEqual(len(report.to_rows()), 31)

    def test_decay_cantor_battery(self):
        """Every battery function gets a contracting rate with a good fit on the tripling map."""
        system = cantor_system()
        cocycle = cocycle_for(system, 729)
        orbit = sample_orbit(system.driving, 0, 12, 80)
        fs = {spec["name"]: grid_function(cocycle.grid, spec).values for spec in default_battery()}
        report = decay_fit(cocycle, orbit, 0, fs, 30, 10, n_max=40)
        self.assertEqual(len(report.fits), 20)
        for name, fit in report.fits.items():
            self.assertEqual(fit.status, "fitted", name)
            self.assertGreater(fit.kappa, 0.0, name)
            self.assertLess(fit.kappa, 1.0, name)
            self.assertGreaterEqual(fit.r_squared, 0.9, name)

    def test_fit_decay_short_runs(self):
        """Runs that hit the floor early are refitted from n = 0 or bounded by the envelope."""
        floors = [0.0] * 31
        geometric = [0.5 ** n for n in range(31)]
        fit = fit_decay(geometric, floors)
        self.assertEqual((fit.status, fit.method, fit.fit_range), ("fitted", "regression", (3, 30)))
        self.assertAlmostEqual(fit.kappa, 0.5, places=12)

        two_steps = [1.0, 0.1] + [1e-17] * 29
        fit = fit_decay(two_steps, floors)
        self.assertEqual((fit.method, fit.fit_range), ("regression", (0, 1)))
        self.assertAlmostEqual(fit.kappa, 0.1, places=12)
        self.assertAlmostEqual(fit.r_squared, 1.0, places=12)

        one_step = [0.5] + [1e-17] * 30
        fit = fit_decay(one_step, floors, scale=1.0)
        self.assertEqual((fit.status, fit.method, fit.fit_range), ("fitted", "envelope", (0, 30)))
        self.assertAlmostEqual(fit.kappa, 1e-14 ** (1.0 / 30.0), places=12)

        ragged = [1.0, 0.01, 0.5] + [1e-17] * 28
        fit = fit_decay(ragged, floors)
        self.assertEqual((fit.status, fit.method, fit.fit_range), ("fitted", "envelope", (0, 2)))
        self.assertAlmostEqual(fit.kappa, math.sqrt(0.5), places=12)

        settled = [1e-16] * 31
        self.assertEqual(fit_decay(settled, floors).status, "fitted")
        self.assertEqual(fit_decay([1.0] * 31, floors).status, "inconclusive")

    def test_decay_random_ly(self):
        """Sequences shrink along a random Lasota-Yorke orbit and observables correlate less."""
        system = system_from_dict(RANDOM_LY_DOC)
        cocycle = cocycle_for(system, 256)
        orbit = sample_orbit(system.driving, 3, 20, 120)
        fs = {spec["name"]: grid_function(cocycle.grid, spec).values for spec in default_battery()[:4]}
        observable = grid_function(cocycle.grid, {"name": "ramp", "kind": "ramp"}).values
        report = decay_fit(cocycle, orbit, 0, fs, 20, 15, observable, n_max=40)
        for name, seq in report.sequences.items():
            self.assertLess(seq[-1], seq[0] + 1e-12, name)
            self.assertIn(report.fits[name].status, ("fitted", "inconclusive"))
        self.assertEqual(set(report.correlations), set(fs))

    def test_conditional_invariance_cantor(self):
        """The conditioned measure of [0, 1/3) is 1/2 at every step."""
        system = cantor_system()
        cocycle = cocycle_for(system, 81)
        orbit = sample_orbit(system.driving, 0, 12, 60)
        report = conditional_invariance_residual(cocycle, orbit, 0, {"A": [0.0, 1.0 / 3.0]}, 20, 10)
        self.assertLess(abs(report.limit("A") - 0.5), 1e-3)
        self.assertTrue(report.monotone["A"])
        self.assertIsNone(report.truncated_at)

    def test_ly_constants(self):
        """Doubling constants: A = 4.5 at t = 1; A = 9 and B = 16 (8 with delta = 1) at t = 0."""
        self.assertAlmostEqual(ly_constants(doubling_system(1.0), (0, 0), 1).A, 4.5)
        at_zero = ly_constants(doubling_system(0.0), (0, 0), 1)
        self.assertAlmostEqual(at_zero.A, 9.0)
        self.assertAlmostEqual(at_zero.B, 16.0)
        self.assertAlmostEqual(ly_constants(doubling_system(0.0), (0, 0), 1, delta=1.0).B, 8.0)
        tripling = ly_constants(cantor_system(), (0, 0), 1)
        self.assertAlmostEqual(tripling.A, 3.0)
        self.assertEqual(tripling.xi, 0)

    def test_ly_inequality_random_functions(self):
        """var(L^n f) <= A var(f) + B ||f||_1 for random step functions on the random LY system."""
        system = system_from_dict(RANDOM_LY_DOC)
        cocycle = cocycle_for(system, 64)
        grid = cocycle.grid
        orbit = sample_orbit(system.driving, 9, 0, 10)
        constants = {n: ly_constants(system, orbit.word(0, n + 1), n) for n in (1, 2)}
        rng = np.random.default_rng(17)
        for trial in range(120):
            n = 1 + trial % 2
            cuts = np.sort(rng.choice(np.arange(1, grid.N), size=int(rng.integers(1, 9)), replace=False))
            pieces = rng.normal(size=cuts.size + 1)
            f = pieces[np.searchsorted(cuts, np.arange(grid.N), side="right")]
            pushed = GridFunction(cocycle.push(orbit, 0, n, f), grid)
            c = constants[n]
            bound = c.A * GridFunction(f, grid).variation() + c.B * float(grid.integrate(np.abs(f)))
            self.assertLessEqual(pushed.variation(), bound + 1e-12, trial)

    def test_oracle_agreement(self):
        """Aligned test functions transfer exactly on the grid."""
        system = doubling_system()
        cocycle = cocycle_for(system, 64, CLOSED)
        orbit = sample_orbit(system.driving, 0, 0, 10)
        points = np.random.default_rng(5).random(50)
        one = oracle_agreement(cocycle, orbit, 0, 3, {"name": "one", "kind": "constant", "value": 1.0}, points)
        self.assertLess(max(one.discrepancies), 1e-12)
        quarter = oracle_agreement(cocycle, orbit, 0, 2, {"name": "q", "kind": "indicator",
                                                          "interval": [0.0, 0.25]}, points)
        self.assertLess(quarter.median, 1e-12)

    def test_oracle_convergence(self):
        """Doubling the resolution halves the median discrepancy of a ramp."""
        system = beta24_system()
        orbit = sample_orbit(system.driving, 0, 0, 10)
        points = np.random.default_rng(5).random(200)
        ramp = {"name": "ramp", "kind": "ramp"}
        result = oracle_convergence(system, orbit, 0, 4, ramp, points, 128)
        self.assertEqual(result.fine.N, 2 * result.coarse.N)
        self.assertGreater(result.ratio, 1.5)
        self.assertLess(result.ratio, 2.7)
        self.assertEqual(result.to_dict()["ratio"], result.ratio)


class TestConditions(unittest.TestCase):
    """Tests for the hypotheses report."""

    def test_cantor_report(self):
        """Full branches outside the hole, one hole component, zero margin."""
        report = condition_check(cantor_system(), 1, 1, max_escalation=1)
        self.assertAlmostEqual(report.lhs, LOG2, places=12)
        self.assertAlmostEqual(report.rhs, LOG2, places=12)
        self.assertFalse(report.passed)
        doc = report.to_dict()
        self.assertTrue(doc["full_branch_outside_hole"])
        self.assertEqual(doc["cch"], 1)
        self.assertTrue(doc["analytic"])

    def test_condition_check_logs(self):
        """The hypotheses report logs on its own component logger."""
        with self.assertLogs("conditions", level="INFO") as logs:
            report = condition_check(cantor_system(), 1, 1, max_escalation=1)
        self.assertTrue(any("Condition check" in line for line in logs.output))
        self.assertEqual(report.fibers[0].zeta, 0)
        self.assertGreater(report.epsilon, 0.0)

    def test_escalation_and_word_limit(self):
        """Escalation records every tried depth; huge enumerations ask for Monte Carlo."""
        report = condition_check(cantor_system(), 1, 1, max_escalation=3)
        self.assertEqual([e["N1"] for e in report.escalations], [1, 2, 3])
        big = condition_check(beta24_system(), 20, 1, max_escalation=1)
        self.assertTrue(big.monte_carlo_required)
        self.assertIsNone(big.lhs)
        with self.assertRaises(ValueError):
            condition_check(cantor_system(), 1, 2)

    def test_beta_condition(self):
        """E log(floor(beta) - 1) > log 5."""
        self.assertTrue(beta_condition_check([7, 7], [0.5, 0.5])["passed"])
        self.assertFalse(beta_condition_check([6, 6], [0.5, 0.5])["passed"])
        self.assertFalse(beta_condition_check([2, 7], [0.5, 0.5])["passed"])
        report = condition_check(beta24_system(), 1, 1, max_escalation=1)
        self.assertIsNotNone(report.beta_condition)


class TestOrbitWorker(unittest.TestCase):
    """Tests for the ordered worker pool."""

    def test_results_in_item_order(self):
        """Results come back in item order for any thread count."""
        for threads in (1, 4):
            self.assertEqual(OrbitWorkerPool(threads).map(lambda x: x * x, range(50)),
                             [x * x for x in range(50)])

    def test_first_failure_is_raised(self):
        """An exception in a work item reaches the caller."""
        def fail(x):
            if x == 3:
                raise ValueError("boom")
            return x
        with self.assertRaises(ValueError):
            OrbitWorkerPool(3).map(fail, range(10))

    def test_chunked(self):
        self.assertEqual(chunked(10, 4), [(0, 4), (4, 8), (8, 10)])
        self.assertEqual(chunked(0, 4), [])


class TestReports(unittest.TestCase):
    """Tests for run configs, envelopes and report files."""

    def setUp(self):
        """Create a temporary directory for config and report files."""
        self.test_dir = tempfile.mkdtemp(prefix="escapelab_test_")

    def tearDown(self):
        """Clean up the test directory."""
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)

    def test_component_log_files(self):
        """Each component, the hypotheses report included, logs to its own file."""
        setup_logging(log_path=self.test_dir)
        for name in ("conditions", "analysis", "reports", "app"):
            self.assertTrue(os.path.exists(os.path.join(self.test_dir, f"{name}.log")), name)
        self.assertIs(report_config.logger, logging.getLogger("reports"))
        self.assertFalse(logging.getLogger("conditions").propagate)

    def _write(self, name, text):
        path = os.path.join(self.test_dir, name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        return path

    def test_config_hash(self):
        """The hash follows the effective config but not the output directory."""
        a = RunConfig(system=CANTOR_DOC, out="a")
        b = RunConfig(system=CANTOR_DOC, out="b")
        self.assertEqual(config_hash(a), config_hash(b))
        self.assertNotEqual(config_hash(a), config_hash(a.with_overrides(seed=1)))
        self.assertEqual(len(config_hash(a)), 64)

    def test_config_validation(self):
        """Bad tolerances, empty t-grids and schema violations are config errors."""
        with self.assertRaises(ConfigError):
            RunConfig(system=CANTOR_DOC, tol_t=0.0)
        with self.assertRaises(ConfigError):
            RunConfig(system=CANTOR_DOC, t_grid=())
        path = self._write("bad.json", '{\n  "system": {"driving": {"kind": "iid", "probabilities": [1]},\n'
                                       '    "fibers": [{"type": "beta", "params": {"beta": 3}}]},\n'
                                       '  "resolution": "high"\n}\n')
        with self.assertRaises(ConfigError) as ctx:
            load_config(path)
        self.assertEqual(ctx.exception.details["path"], "$.resolution")
        self.assertEqual(ctx.exception.details["line"], 4)
        with self.assertRaises(ConfigError):
            load_config(self._write("broken.json", "{not json"))

    def test_load_with_overrides(self):
        """Command-line overrides replace file values."""
        path = self._write("cantor.json", json.dumps({"system": CANTOR_DOC, "seed": 3, "window": [4, 20]}))
        config = load_config(path, seed=9, threads=None, out=self.test_dir)
        self.assertEqual(config.seed, 9)
        self.assertEqual(config.window, (4, 20))
        self.assertEqual(config.out, self.test_dir)
        self.assertEqual(config.build_system().alphabet_size, 1)

    def test_envelope_hash(self):
        """Wall time is outside the payload hash; tampering is detected."""
        a = ReportEnvelope("escape", "0" * 64, 1, {"direct": 0.5}, wall_time=1.0, version="x")
        b = ReportEnvelope("escape", "0" * 64, 1, {"direct": 0.5}, wall_time=2.0, version="x")
        self.assertEqual(a.payload_hash, b.payload_hash)
        self.assertTrue(a.is_intact())
        recreated = ReportEnvelope.from_dict(a.to_dict())
        self.assertEqual(recreated.payload_hash, a.payload_hash)
        recreated.payload["direct"] = 0.6
        self.assertFalse(recreated.is_intact())

    def test_sanitize(self):
        """Non-finite numbers become null and numpy scalars become Python numbers."""
        data = sanitize({"a": float("inf"), "b": [np.float64(1.5), float("nan")], "c": np.int64(2)})
        self.assertEqual(data, {"a": None, "b": [1.5, None], "c": 2})

    @patch('reports.envelope.subprocess.run', side_effect=OSError("no git"))
    def test_version_without_git(self, mock_run):
        """Falls back to the package version when git is missing."""
        self.assertEqual(describe_version(), VERSION)

    def test_writer(self):
        """Reports are validated against the schema and CSV floats round-trip."""
        writer = ReportWriter(self.test_dir)
        envelope = ReportEnvelope("dimension", "a" * 64, 0, {"h": 0.5, "bracket": [0.4, 0.6], "method": "m"},
                                  version="x")
        path = writer.write_json("dimension.json", envelope)
        with open(path, encoding="utf-8") as f:
            self.assertEqual(json.load(f)["payload"]["h"], 0.5)
        with self.assertRaises(ValueError):
            writer.write_json("bad.json", ReportEnvelope("dimension", "a" * 64, 0, {"h": 2.0}, version="x"))
        csv_path = writer.write_csv("rows.csv", [{"t": 0.1, "ep": float("nan")}], ["t", "ep"])
        with open(csv_path, encoding="utf-8") as f:
            self.assertEqual(f.read(), "t,ep\n0.10000000000000001,\n")
        self.assertEqual(sorted(os.listdir(self.test_dir)), ["dimension.json", "rows.csv"])

    def test_dump_matrix(self):
        """Matrix dumps carry a JSON header."""
        cocycle = cocycle_for(cantor_system(), 9)
        path, header = dump_matrix(cocycle.matrix(0), os.path.join(self.test_dir, "m0.txt"))
        with open(header, encoding="utf-8") as f:
            meta = json.load(f)
        self.assertEqual(meta["N"], 9)
        with open(path, encoding="utf-8") as f:
            self.assertEqual(len(f.readlines()), meta["nnz"])


class TestMain(unittest.TestCase):
    """End-to-end runs of the command-line front end."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp(prefix="escapelab_cli_")
        doc = {"system": CANTOR_DOC, "resolution": 27, "window": [8, 64], "depth": 8, "n_max": 40,
               "estimator": "analytic", "samples": 4, "t_grid": [0, 0.5, 1],
               "check": {"N1": 1, "N2": 1, "max_escalation": 2},
               "oracle": {"depths": [4, 8], "transfer_depth": 3, "points": 10},
               "battery": [{"name": "one", "kind": "constant", "value": 1.0},
                           {"name": "left", "kind": "indicator", "interval": [0, "1/3"]},
                           {"name": "ramp", "kind": "ramp"}]}
        self.config_path = os.path.join(self.test_dir, "cantor.json")
        with open(self.config_path, "w", encoding="utf-8") as f:
            json.dump(doc, f)
        self.out = os.path.join(self.test_dir, "out")

    def tearDown(self):
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)

    def _run(self, *args):
        return main.main(list(args) + ["--config", self.config_path, "--out", self.out])

    def _report(self, name):
        with open(os.path.join(self.out, name), encoding="utf-8") as f:
            return json.load(f)

    def test_parser(self):
        """Subcommand and override flags."""
        args = main.build_parser().parse_args(["escape", "--config", "c.json", "--seed", "7", "--threads", "2"])
        self.assertEqual((args.command, args.seed, args.threads, args.estimator), ("escape", 7, 2, None))

    def test_dimension_command(self):
        """Cantor dimension and the box-counting cross-check."""
        self.assertEqual(self._run("dimension"), 0)
        report = self._report("dimension.json")
        self.assertLess(abs(report["payload"]["h"] - LOG2 / LOG3), 1e-3)
        self.assertLess(abs(report["payload"]["box_count"] - LOG2 / LOG3), 0.02)
        self.assertEqual(report["command"], "dimension")

    def test_escape_and_check_commands(self):
        """Escape agrees with the pressure difference; the check report sees the full branches."""
        self.assertEqual(self._run("escape"), 0)
        escape = self._report("escape.json")["payload"]
        self.assertTrue(escape["agree"])
        self.assertAlmostEqual(escape["direct"], math.log(1.5), places=6)
        self.assertEqual(self._run("check"), 0)
        check = self._report("conditions.json")["payload"]
        self.assertTrue(check["full_branch_outside_hole"])
        self.assertEqual(check["cch"], 1)
        self.assertIn("ly_constants", check)

    def test_reproducible_pressure(self):
        """Reruns give byte-identical CSV and the same payload hash."""
        self.assertEqual(self._run("pressure"), 0)
        with open(os.path.join(self.out, "pressure.csv"), encoding="utf-8") as f:
            first_csv = f.read()
        first_hash = self._report("pressure.json")["payload_hash"]
        self.assertEqual(self._run("pressure"), 0)
        with open(os.path.join(self.out, "pressure.csv"), encoding="utf-8") as f:
            self.assertEqual(f.read(), first_csv)
        self.assertEqual(self._report("pressure.json")["payload_hash"], first_hash)
        self.assertEqual(first_csv.splitlines()[0], "t,ep,stderr,n,estimator")

    def test_density_decay_oracle_commands(self):
        """The remaining commands write their files."""
        for command in ("density", "decay", "oracle"):
            self.assertEqual(self._run(command), 0, command)
        for name in ("density.csv", "ratios.csv", "density.json", "decay.csv", "decay.json",
                     "survivors.csv", "oracle.json"):
            self.assertTrue(os.path.exists(os.path.join(self.out, name)), name)
        density = self._report("density.json")["payload"]["orbits"][0]
        self.assertAlmostEqual(density["eta"]["entries"]["left"]["value"], 0.5, places=6)
        oracle = self._report("oracle.json")["payload"]
        self.assertIn("convergence_ratio", oracle)
        for entry in oracle["agreement"].values():
            self.assertGreater(entry["fine_N"], entry["N"])

    def test_exit_codes(self):
        """Config errors exit with 2; a missing closed form exits with 3."""
        with open(self.config_path, "w", encoding="utf-8") as f:
            json.dump({"system": CANTOR_DOC, "tol_t": -1}, f)
        self.assertEqual(self._run("dimension"), 2)
        with open(self.config_path, "w", encoding="utf-8") as f:
            json.dump({"system": RANDOM_LY_DOC, "estimator": "analytic", "box_count": False}, f)
        self.assertEqual(self._run("dimension"), 3)


if __name__ == '__main__':
    unittest.main(verbosity=3)
