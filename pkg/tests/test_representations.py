#
# For licensing see accompanying LICENSE.md file.
# Copyright (C) 2022 Apple Inc. All Rights Reserved.
#

import logging
import numpy as np
import unittest

from python_xls_topopt.multiphase import XlsField
from python_xls_topopt.representations import (
    InvalidRepresentationError,
    LegacyKind,
    LegacyRepresentation,
    UnsupportedRepresentationError,
    from_point_data,
    legacy_assignment,
    random_representation,
    to_xls,
    verify_equivalence,
    xls_assignment,
)

logger = logging.getLogger(__name__)
logger.setLevel("INFO")

# Testing configuration
TEST_SEED = 3
TEST_N_NODES = 10_000
TEST_CASES = (
    (LegacyKind.COLOR, 4),
    (LegacyKind.PIECEWISE_CONSTANT, 3),
    (LegacyKind.PIECEWISE_CONSTANT, 5),
    (LegacyKind.MULTI_MATERIAL, 3),
    (LegacyKind.MULTI_MATERIAL, 4),
    (LegacyKind.VECTOR_VALUED, 3),
)


class TestLegacyRepresentation(unittest.TestCase):

    def test_supported_phase_counts(self):
        with self.assertRaises(UnsupportedRepresentationError):
            LegacyRepresentation(LegacyKind.COLOR, np.zeros((2, 4)), 3)
        with self.assertRaises(UnsupportedRepresentationError):
            LegacyRepresentation(LegacyKind.VECTOR_VALUED, np.zeros((3, 4)), 4)

    def test_invalid_inputs(self):
        with self.subTest("function count"):
            with self.assertRaises(InvalidRepresentationError):
                LegacyRepresentation(LegacyKind.MULTI_MATERIAL, np.zeros((3, 4)), 3)
        with self.subTest("non-integer piecewise-constant value"):
            with self.assertRaises(InvalidRepresentationError):
                LegacyRepresentation(LegacyKind.PIECEWISE_CONSTANT, [[0., 1.4]], 3)
        with self.subTest("piecewise-constant value above the last phase"):
            with self.assertRaises(InvalidRepresentationError):
                LegacyRepresentation(LegacyKind.PIECEWISE_CONSTANT, [[3.]], 3)
        with self.subTest("normals on a scalar method"):
            with self.assertRaises(InvalidRepresentationError):
                LegacyRepresentation(LegacyKind.MULTI_MATERIAL, np.zeros((1, 4)), 2,
                                     normals=np.ones((1, 1)))
        with self.subTest("normal shape"):
            with self.assertRaises(InvalidRepresentationError):
                LegacyRepresentation(LegacyKind.VECTOR_VALUED, np.zeros((2, 4)), 3,
                                     normals=np.ones((2, 2)))

    def test_normals_are_antisymmetric(self):
        rep = LegacyRepresentation(LegacyKind.VECTOR_VALUED, np.zeros((2, 1)), 3)
        np.testing.assert_array_equal(rep.normal(0, 1), [-1., 0.])
        np.testing.assert_array_equal(rep.normal(2, 1), [-1., 1.])


class TestConversion(unittest.TestCase):

    def test_worked_examples(self):
        cases = (
            ("color phase 0", LegacyRepresentation(LegacyKind.COLOR, [[0.5], [0.5]], 4), 0),
            ("color phase 3", LegacyRepresentation(LegacyKind.COLOR, [[-0.5], [-0.5]], 4), 3),
            ("piecewise-constant", LegacyRepresentation(LegacyKind.PIECEWISE_CONSTANT, [[2.]], 3), 2),
            ("vector-valued", LegacyRepresentation(LegacyKind.VECTOR_VALUED, [[1.], [1.]], 3), 0),
            ("multi-material", LegacyRepresentation(LegacyKind.MULTI_MATERIAL, [[0.3], [-0.2]], 3), 1),
        )
        for name, rep, phase in cases:
            with self.subTest(name):
                self.assertEqual(legacy_assignment(rep)[0], phase)
                self.assertEqual(xls_assignment(to_xls(rep))[0], phase)
                self.assertEqual(xls_assignment(to_xls(rep, rescale=False))[0], phase)

    def test_piecewise_constant_values(self):
        rep = LegacyRepresentation(LegacyKind.PIECEWISE_CONSTANT, [[2.]], 3)
        raw = to_xls(rep, rescale=False)
        np.testing.assert_array_equal(raw.get(0, 1), [1.5])
        np.testing.assert_array_equal(raw.get(1, 2), [0.5])
        np.testing.assert_array_equal(raw.get(2, 0), [-1.5])

    def test_constant_fields(self):
        for k in range(4):
            with self.subTest(phase=k):
                rep = LegacyRepresentation(LegacyKind.PIECEWISE_CONSTANT, np.full((1, 5), float(k)), 4)
                np.testing.assert_array_equal(xls_assignment(to_xls(rep)), k)
        rep = LegacyRepresentation(LegacyKind.MULTI_MATERIAL, [[-0.1, -0.7], [0.4, -0.2]], 3)
        np.testing.assert_array_equal(legacy_assignment(rep), 0)
        np.testing.assert_array_equal(xls_assignment(to_xls(rep)), 0)

    def test_rescaling_keeps_signs_and_bounds(self):
        rep = LegacyRepresentation(LegacyKind.PIECEWISE_CONSTANT, [[0., 4., 2.1]], 5)
        raw = to_xls(rep, rescale=False)
        scaled = to_xls(rep)
        self.assertGreater(np.abs(raw.values).max(), 1.)
        self.assertLessEqual(np.abs(scaled.values).max(), 1.)
        np.testing.assert_array_equal(np.sign(scaled.values), np.sign(raw.values))

    def test_random_equivalence(self):
        rng = np.random.default_rng(TEST_SEED)
        for kind, M in TEST_CASES:
            rep = random_representation(kind, M, TEST_N_NODES, rng)
            for rescale in (False, True):
                with self.subTest(kind=kind.value, M=M, rescale=rescale):
                    report = verify_equivalence(rep, to_xls(rep, rescale=rescale))
                    self.assertTrue(report.ok, report.mismatches[:5])
                    self.assertEqual(report.checked + report.skipped, TEST_N_NODES)
                    self.assertGreater(report.checked, 0.99 * TEST_N_NODES)

    def test_mismatches_are_reported(self):
        rep = LegacyRepresentation(LegacyKind.MULTI_MATERIAL, [[-0.5, 0.5]], 2)
        flipped = XlsField(2, -to_xls(rep).values)
        report = verify_equivalence(rep, flipped)
        self.assertFalse(report.ok)
        self.assertEqual(report.mismatches, [(0, 0, 1), (1, 1, 0)])

    def test_samples_and_band(self):
        rep = LegacyRepresentation(LegacyKind.MULTI_MATERIAL, [[-0.5, 1e-12, 0.5]], 2)
        report = verify_equivalence(rep, to_xls(rep))
        self.assertEqual((report.checked, report.skipped), (2, 1))
        report = verify_equivalence(rep, to_xls(rep), samples=[0])
        self.assertEqual((report.checked, report.skipped), (1, 0))


class TestPointData(unittest.TestCase):

    def test_numeric_ordering(self):
        point_data = {f"legacy_{k}": np.full(3, float(k)) for k in (10, 2, 0, 1, 3, 4, 5, 6, 7, 8, 9)}
        point_data["phase"] = np.zeros(3)
        rep = from_point_data(LegacyKind.MULTI_MATERIAL, point_data, 12)
        np.testing.assert_array_equal(rep.fields[:, 0], np.arange(11.))

    def test_missing_arrays(self):
        with self.assertRaises(InvalidRepresentationError):
            from_point_data(LegacyKind.MULTI_MATERIAL, {"phi_0_1": np.zeros(3)}, 2)


if __name__ == "__main__":
    unittest.main()
