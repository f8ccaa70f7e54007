#
# For licensing see accompanying LICENSE.md file.
# Copyright (C) 2022 Apple Inc. All Rights Reserved.
#

import json
import logging
import numpy as np
import unittest

from python_xls_topopt.config import (
    PRESETS,
    ConfigError,
    apply_override,
    load_preset,
    merge,
    parse_config,
    preset,
    preset_names,
    resolve_config,
)
from python_xls_topopt.mesh import BoundaryKind
from python_xls_topopt.optimizer import ObjectiveKind

logger = logging.getLogger(__name__)
logger.setLevel("INFO")

# Testing configuration
TEST_PRESET_COUNT = 30
TEST_INPUT_SPRING = 4e15
TEST_OUTPUT_SPRING = 1e13

TEST_BAD_VOLUME_DOC = """{
  "name": "bar",
  "mesh": {"extent": [2.0, 1.0], "resolution": [4, 2]},
  "materials": {
    "phases": [0, 1],
    "max_volume": [1.0, 1.3]
  }
}
"""


class TestPresets(unittest.TestCase):

    def test_names_are_ordered(self):
        names = preset_names()
        self.assertEqual(len(names), TEST_PRESET_COUNT)
        self.assertEqual(names[:3], ["case1", "case2", "case3"])
        self.assertEqual(names[-1], "case30")
        self.assertEqual(set(names), set(PRESETS))

    def test_every_preset_parses(self):
        for name in preset_names():
            with self.subTest(preset=name):
                spec = load_preset(name)
                self.assertEqual(spec.name, name)
                self.assertEqual(spec.evolution.n_phases, spec.n_phases)

    def test_two_material_compliance(self):
        spec = load_preset("case1")
        self.assertIs(spec.objective, ObjectiveKind.COMPLIANCE)
        self.assertEqual(spec.n_phases, 2)
        self.assertEqual(spec.dim, 2)
        self.assertEqual(spec.max_volume, (1., .3))
        self.assertEqual(spec.constrained_phases, (1, ))
        self.assertEqual(spec.evolution.tau[0, 1], 1e-3)
        self.assertIs(spec.default_boundary.kind, BoundaryKind.MATERIAL_SPECIFIED)

    def test_per_pair_tau(self):
        tau = load_preset("case7").evolution.tau
        self.assertEqual(tau[0, 1], 1e-4)
        self.assertEqual(tau[1, 2], 1e-2)
        self.assertEqual(tau[2, 1], 1e-2)
        self.assertEqual(tau[0, 2], 1e-4)

    def test_mechanism(self):
        spec = load_preset("case17")
        self.assertIs(spec.objective, ObjectiveKind.MECHANISM)
        ports = {b.tag.kind: b for b in spec.boundaries}
        self.assertEqual(ports[BoundaryKind.INPUT_PORT].stiffness[0, 0], TEST_INPUT_SPRING)
        self.assertEqual(ports[BoundaryKind.OUTPUT_PORT].stiffness[0, 0], TEST_OUTPUT_SPRING)
        self.assertEqual(spec.schedule.filter_coefficient, 0.03)

    def test_inertia(self):
        spec = load_preset("case20")
        self.assertIs(spec.objective, ObjectiveKind.COMPLIANCE_PLUS_INERTIA)
        self.assertEqual(spec.inertia.weight, 5e-13)
        np.testing.assert_array_equal(spec.catalog.densities, [0., 2., 1.])

    def test_three_dimensional_anisotropy(self):
        spec = load_preset("case26")
        self.assertEqual(spec.dim, 3)
        np.testing.assert_array_equal(spec.evolution.anisotropy[1, 2], [1., 1., 1e3])
        np.testing.assert_array_equal(spec.evolution.anisotropy[0, 1], [1., 1., 1.])
        self.assertEqual(len(spec.nondesign), 1)

    def test_free_z_max_only_for_case25(self):
        for name in ("case23", "case24", "case25", "case26", "case27", "case28", "case29",
                     "case30"):
            with self.subTest(preset=name):
                spec = load_preset(name)
                free = [b.tag.name for b in spec.boundaries if b.tag.kind is BoundaryKind.FREE]
                self.assertEqual(free, ["top"] if name == "case25" else [])
                self.assertEqual(spec.default_boundary.material, 0)

        # Center of the z-max face: no material in case25, material 0 otherwise
        for name, held in (("case25", False), ("case26", True)):
            with self.subTest(preset=name, node="z-max"):
                mesh = load_preset(name, ["mesh.resolution=[16, 8, 8]"]).build_mesh()
                center = np.argmin(np.linalg.norm(
                    mesh.node_coords - [0.025, 0.0125, 0.025], axis=1))
                self.assertEqual(center in mesh.material_dirichlet_nodes().get(0, []), held)

    def test_presets_are_copies(self):
        doc = preset("case1")
        doc["materials"]["max_volume"][1] = 0.9
        self.assertEqual(preset("case1")["materials"]["max_volume"], [1., .3])
        with self.assertRaises(KeyError):
            preset("case31")


class TestValidation(unittest.TestCase):

    def test_volume_above_one(self):
        with self.assertRaises(ConfigError) as ctx:
            load_preset("case1", ["materials.max_volume=[1.0, 1.3]"])
        self.assertEqual(ctx.exception.key, "materials.max_volume")

    def test_error_line(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(TEST_BAD_VOLUME_DOC)
        self.assertEqual(ctx.exception.key, "materials.max_volume")
        self.assertEqual(ctx.exception.line, 6)
        self.assertIn("line 6", str(ctx.exception))

    def test_malformed_json(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config('{\n  "name": }\n')
        self.assertEqual(ctx.exception.line, 2)

    def test_unknown_keys(self):
        with self.subTest("top level"):
            with self.assertRaises(ConfigError) as ctx:
                load_preset("case1", ["colour=1"])
            self.assertEqual(ctx.exception.key, "colour")
        with self.subTest("section"):
            with self.assertRaises(ConfigError) as ctx:
                load_preset("case1", ["mesh.spacing=0.1"])
            self.assertEqual(ctx.exception.key, "mesh.spacing")
        with self.subTest("preset"):
            with self.assertRaises(ConfigError) as ctx:
                parse_config(json.dumps({"preset": "case99"}))
            self.assertEqual(ctx.exception.key, "preset")

    def test_invalid_values(self):
        cases = (
            ("resolution", "mesh.resolution=[1, 10]", "mesh.resolution"),
            ("phase index", "default_boundary.material=4", "default_boundary.material"),
            ("pair key", 'evolution.tau={"0-0": 0.1}', "evolution.tau.0-0"),
            ("type", 'schedule.max_iterations="many"', "schedule.max_iterations"),
            ("axis", "objective.axis_direction=[1.0, 1.0, 0.0]", "objective.axis_direction"),
        )
        for name, assignment, key in cases:
            with self.subTest(name):
                base = "case20" if name == "axis" else "case2"
                with self.assertRaises(ConfigError) as ctx:
                    load_preset(base, [assignment])
                self.assertEqual(ctx.exception.key, key)

    def test_spring_on_a_support(self):
        with self.assertRaises(ConfigError) as ctx:
            load_preset("case1", ["boundaries.0.stiffness=[[1.0, 0.0], [0.0, 1.0]]"])
        self.assertEqual(ctx.exception.key, "boundaries.0")

    def test_config_error_is_a_value_error(self):
        self.assertTrue(issubclass(ConfigError, ValueError))


class TestOverrides(unittest.TestCase):

    def test_apply(self):
        doc = resolve_config(json.dumps({"preset": "case1"}),
                             ["evolution.tau=0.01",
                              "mesh.resolution=[10, 5]",
                              "name=custom run",
                              "boundaries.1.traction=[0.0, -2.0]"])
        self.assertEqual(doc["evolution"]["tau"], 0.01)
        self.assertEqual(doc["mesh"]["resolution"], [10, 5])
        self.assertEqual(doc["mesh"]["extent"], [2.0, 1.0])
        self.assertEqual(doc["name"], "custom run")
        self.assertEqual(doc["boundaries"][1]["traction"], [0.0, -2.0])

    def test_creates_sections(self):
        doc = apply_override({}, "schedule.max_iterations=3")
        self.assertEqual(doc, {"schedule": {"max_iterations": 3}})

    def test_invalid(self):
        doc = preset("case1")
        for assignment in ("no-assignment", "boundaries.9.name=x", "name.first=x"):
            with self.subTest(assignment=assignment):
                with self.assertRaises(ConfigError):
                    apply_override(doc, assignment)

    def test_file_values_override_preset(self):
        spec = parse_config(json.dumps({"preset": "case1", "schedule": {"max_iterations": 7}}))
        self.assertEqual(spec.schedule.max_iterations, 7)
        self.assertEqual(spec.max_volume, (1., .3))

    def test_merge(self):
        base = {"a": {"b": 1, "c": [1, 2]}, "d": 0}
        merged = merge(base, {"a": {"c": [3]}, "e": 1})
        self.assertEqual(merged, {"a": {"b": 1, "c": [3]}, "d": 0, "e": 1})
        self.assertEqual(base["a"]["c"], [1, 2])


if __name__ == "__main__":
    unittest.main()
