#
# For licensing see accompanying LICENSE.md file.
# Copyright (C) 2022 Apple Inc. All Rights Reserved.
#

import logging
import numpy as np
import unittest

from python_xls_topopt.mesh import Region, build_structured_mesh
from python_xls_topopt.multiphase import (
    PairField,
    SmoothingParams,
    XlsField,
    appearance_priority,
    approx_characteristic,
    assigned_field,
    characteristic_exact,
    clamp_side_constraint,
    ersatz_fractions,
    initial_field,
    pair_index,
    pair_list,
    phase_assignment,
    smoothed_heaviside,
)

logger = logging.getLogger(__name__)
logger.setLevel("INFO")

# Testing configuration
TEST_SEED = 2022
TEST_PHASE_COUNTS = (2, 3, 4, 9)
TEST_PARTITION_TOLERANCE = 1e-12
TEST_SHARP_LIMIT_NODES = 1000
TEST_SHARP_LIMIT_WIDTHS = (0.2, 0.02, 0.002)

# Stored (phi_01, phi_02, phi_12) of a 3-phase field evaluated at two points
TEST_POINT_INSIDE_PHASE_2 = (-0.5, 2., 3.)
TEST_POINT_WITHOUT_PHASE = (-5.9, 2., -0.24)


def _three_phase_field():
    return XlsField(3, np.array([TEST_POINT_INSIDE_PHASE_2, TEST_POINT_WITHOUT_PHASE]).T)


class TestPairStorage(unittest.TestCase):

    def test_pair_index_follows_storage_order(self):
        for M in TEST_PHASE_COUNTS:
            with self.subTest(M=M):
                pairs = pair_list(M)
                self.assertEqual(len(pairs), M * (M - 1) // 2)
                for row, (i, j) in enumerate(pairs):
                    self.assertEqual(pair_index(i, j, M), row)
                    self.assertEqual(pair_index(j, i, M), row)

    def test_antisymmetric_reads(self):
        rng = np.random.default_rng(TEST_SEED)
        field = PairField(4, rng.normal(size=(6, 10)))
        for i in range(4):
            np.testing.assert_array_equal(field.get(i, i), 0.)
            for j in range(4):
                np.testing.assert_array_equal(field.get(i, j), -field.get(j, i))
        full = field.full()
        np.testing.assert_array_equal(full, -full.swapaxes(0, 1))

    def test_set_lower_pair_stores_negation(self):
        field = PairField.zeros(3, 2)
        field.set(2, 0, np.array([1., -2.]))
        np.testing.assert_array_equal(field.values[pair_index(0, 2, 3)], [-1., 2.])
        np.testing.assert_array_equal(field.get(2, 0), [1., -2.])

    def test_shape_validation(self):
        with self.assertRaises(ValueError):
            PairField(3, np.zeros((2, 5)))
        with self.assertRaises(ValueError):
            PairField(1, np.zeros((0, 5)))


class TestCharacteristicFunctions(unittest.TestCase):

    def test_exact_characteristic(self):
        psi = characteristic_exact(_three_phase_field())
        np.testing.assert_array_equal(psi.values[:, 0], [0., 0., 1.])
        # No phase claims the second point
        np.testing.assert_array_equal(psi.values[:, 1], [0., 0., 0.])

    def test_clamped_appearance_priority(self):
        priority = appearance_priority(clamp_side_constraint(_three_phase_field()))
        np.testing.assert_allclose(priority[:, 0], [0., 0., 0.5], atol=1e-15)
        np.testing.assert_allclose(priority[:, 1], [0., 0., 0.19], atol=1e-15)

    def test_approximation_assigns_every_point(self):
        xls = clamp_side_constraint(_three_phase_field())
        np.testing.assert_array_equal(phase_assignment(xls), [2, 2])
        psi = approx_characteristic(xls)
        np.testing.assert_array_equal(psi.values, [[0., 0.], [0., 0.], [1., 1.]])

    def test_approximation_matches_exact_where_defined(self):
        # Saturated fields, |phi_ij| = 1 everywhere
        rng = np.random.default_rng(TEST_SEED)
        for M in (3, 4):
            with self.subTest(M=M):
                xls = XlsField(M, rng.choice([-1., 1.], (len(pair_list(M)), 5000)))
                exact = characteristic_exact(xls)
                defined = exact.sums() == 1.
                self.assertGreater(defined.sum(), 0)
                approx = approx_characteristic(xls)
                np.testing.assert_array_equal(approx.values[:, defined], exact.values[:, defined])

    def test_clamp_is_idempotent(self):
        rng = np.random.default_rng(TEST_SEED)
        for M in TEST_PHASE_COUNTS:
            with self.subTest(M=M):
                xls = XlsField(M, rng.uniform(-3., 3., (len(pair_list(M)), 200)))
                once = clamp_side_constraint(xls)
                np.testing.assert_array_equal(clamp_side_constraint(once).values, once.values)
                self.assertLessEqual(np.abs(once.values).max(), 1.)
                inside = np.abs(xls.values) <= 1.
                np.testing.assert_array_equal(once.values[inside], xls.values[inside])

    def test_ties_go_to_lowest_index(self):
        psi = approx_characteristic(XlsField.zeros(3, 4))
        np.testing.assert_array_equal(psi.assignment(), 0)


class TestErsatzFractions(unittest.TestCase):

    def test_smoothed_heaviside(self):
        np.testing.assert_allclose(smoothed_heaviside([-3., -1., 0., 1., 3.]),
                                   [0., 0., 0.5, 1., 1.], atol=1e-15)
        s = np.linspace(-1., 1., 101)
        self.assertTrue((np.diff(smoothed_heaviside(s)) >= 0.).all())

    def test_quintic_values(self):
        # Dyadic rationals, exact in floating point
        self.assertEqual(float(smoothed_heaviside(0.5)), 0.896484375)
        self.assertEqual(float(smoothed_heaviside(-0.5)), 0.103515625)

    def test_sharp_limit(self):
        rng = np.random.default_rng(TEST_SEED)
        xls = XlsField(3, rng.uniform(-1., 1., (3, TEST_SHARP_LIMIT_NODES)))
        sharp = approx_characteristic(xls).values
        deviations = []
        for width in TEST_SHARP_LIMIT_WIDTHS:
            psi = ersatz_fractions(xls, SmoothingParams(width=width, epsilon=1e-3 * width**2))
            self.assertTrue((psi.assignment() == approx_characteristic(xls).assignment()).all())
            deviations.append(np.abs(psi.values - sharp).max())
        logger.info(f"Deviation from the sharp assignment: {deviations}")
        self.assertGreater(deviations[0], deviations[1])
        self.assertGreater(deviations[1], deviations[2])

    def test_partition_of_unity(self):
        rng = np.random.default_rng(TEST_SEED)
        for M in TEST_PHASE_COUNTS:
            with self.subTest(M=M):
                xls = XlsField(M, rng.uniform(-1., 1., (len(pair_list(M)), 1000)))
                psi = ersatz_fractions(xls)
                self.assertTrue((psi.values > 0.).all())
                np.testing.assert_allclose(psi.sums(), 1., atol=TEST_PARTITION_TOLERANCE)

    def test_assigned_field_fractions(self):
        eps = SmoothingParams().epsilon
        for M in (2, 3, 4):
            with self.subTest(M=M):
                phases = np.arange(M)
                psi = ersatz_fractions(assigned_field(M, phases))
                expected = np.full((M, M), eps / (1. + M * eps))
                np.fill_diagonal(expected, (1. + eps) / (1. + M * eps))
                np.testing.assert_allclose(psi.values, expected, rtol=1e-12)

    def test_zero_field_is_uniform(self):
        for M in TEST_PHASE_COUNTS:
            with self.subTest(M=M):
                psi = ersatz_fractions(XlsField.zeros(M, 3))
                np.testing.assert_allclose(psi.values, 1. / M, rtol=1e-12)

    def test_invalid_smoothing(self):
        with self.assertRaises(ValueError):
            SmoothingParams(width=0.)
        with self.assertRaises(ValueError):
            SmoothingParams(epsilon=-1e-6)


class TestInitialField(unittest.TestCase):

    def test_background_and_regions(self):
        mesh = build_structured_mesh((2., 1.), (4, 2))
        hole = Region.from_dict({"x": [0.9, 1.1], "y": [0.4, 0.6]}, 2)
        xls = initial_field(mesh, 3, background=1, regions=[(hole, 0)])
        phases = phase_assignment(xls)
        centre = int(np.flatnonzero(hole.contains(mesh.node_coords))[0])
        self.assertEqual(phases[centre], 0)
        self.assertEqual((phases == 1).sum(), mesh.n_nodes - 1)
        self.assertEqual(np.abs(xls.values).max(), 1.)

    def test_default_is_zero(self):
        mesh = build_structured_mesh((1., 1.), (2, 2))
        xls = initial_field(mesh, 4)
        np.testing.assert_array_equal(xls.values, 0.)
        self.assertEqual(xls.point_shape, (mesh.n_nodes, ))

    def test_rejects_unknown_phase(self):
        mesh = build_structured_mesh((1., 1.), (2, 2))
        with self.assertRaises(ValueError):
            initial_field(mesh, 2, background=0,
                          regions=[(Region.from_dict({"x": [0., 1.]}, 2), 2)])


if __name__ == "__main__":
    unittest.main()
