#
# For licensing see accompanying LICENSE.md file.
# Copyright (C) 2022 Apple Inc. All Rights Reserved.
#

import dataclasses
import logging
import numpy as np
import unittest

from python_xls_topopt.elasticity import MaterialCatalog, SolverError
from python_xls_topopt.evolution import EvolutionParams
from python_xls_topopt.mesh import BoundaryKind, BoundaryTag, Region, build_structured_mesh
from python_xls_topopt.multiphase import PhaseFractions, XlsField
from python_xls_topopt.optimizer import (
    BoundarySpec,
    InertiaSpec,
    IterationRecord,
    MeshSpec,
    NondesignRegion,
    ObjectiveKind,
    OptimizationAborted,
    ProblemSpec,
    RunHistory,
    Schedule,
    XlsTopologyOptimizer,
    converged,
    element_phases,
    interface_length,
    run,
    volume_fraction,
)
from python_xls_topopt.sensitivity import SensitivityField

logger = logging.getLogger(__name__)
logger.setLevel("INFO")

# Testing configuration
TEST_ITERATIONS = 5
TEST_STAGES = ("fractions", "state", "evaluate", "sensitivities", "update", "convergence")


def _tag(name, kind, material=None, **bounds):
    return BoundaryTag(name, kind, Region.from_dict(bounds, 2), material)


def compliance_problem(**overrides):
    """ Small cantilever: fixed left edge, downward load at mid-height of the right edge
    """
    spec = ProblemSpec(
        name="small-cantilever",
        objective=ObjectiveKind.COMPLIANCE,
        mesh=MeshSpec(extent=(2., 1.), resolution=(16, 8)),
        catalog=MaterialCatalog.from_table((0, 1)),
        max_volume=(1., 0.3),
        boundaries=(
            BoundarySpec(_tag("fixed", BoundaryKind.FIXED_DISPLACEMENT, x=[0., 0.])),
            BoundarySpec(_tag("load", BoundaryKind.TRACTION, 1, x=[2., 2.], y=[0.375, 0.625]),
                         traction=(0., -1.)),
        ),
        default_boundary=BoundaryTag("rest", BoundaryKind.MATERIAL_SPECIFIED, material=0),
        evolution=EvolutionParams.uniform(2, 2),
        schedule=Schedule(max_iterations=TEST_ITERATIONS),
    )
    return dataclasses.replace(spec, **overrides)


def mechanism_problem():
    spring = np.array([[1e9, 0.], [0., 0.]])
    return ProblemSpec(
        name="small-inverter",
        objective=ObjectiveKind.MECHANISM,
        mesh=MeshSpec(extent=(2., 1.), resolution=(16, 8)),
        catalog=MaterialCatalog.from_table((0, 1)),
        max_volume=(1., 0.3),
        boundaries=(
            BoundarySpec(_tag("support", BoundaryKind.FIXED_DISPLACEMENT, 1, x=[0., 0.], y=[0., 0.125])),
            BoundarySpec(_tag("input", BoundaryKind.INPUT_PORT, 1, x=[0., 0.], y=[0.375, 0.625]),
                         traction=(1., 0.), stiffness=spring),
            BoundarySpec(_tag("output", BoundaryKind.OUTPUT_PORT, 1, x=[2., 2.], y=[0.375, 0.625]),
                         traction=(-1., 0.), stiffness=spring),
        ),
        default_boundary=BoundaryTag("rest", BoundaryKind.MATERIAL_SPECIFIED, material=0),
        evolution=EvolutionParams.uniform(2, 2),
        schedule=Schedule(max_iterations=3),
    )


def _history(objectives, constraints):
    history = RunHistory(constrained_phases=(1, ))
    for t, (J, g) in enumerate(zip(objectives, constraints)):
        history.append(IterationRecord(t, J, {}, np.array([g]), np.array([1. - g, g])))
    return history


class InstrumentedOptimizer(XlsTopologyOptimizer):
    """ Records the order in which the iteration stages run
    """

    def __init__(self, spec):
        super().__init__(spec)
        self.calls = []

    def compute_fractions(self, xls):
        self.calls.append("fractions")
        return super().compute_fractions(xls)

    def solve_state(self, qp_fractions):
        self.calls.append("state")
        return super().solve_state(qp_fractions)

    def evaluate(self, *args):
        self.calls.append("evaluate")
        return super().evaluate(*args)

    def compute_sensitivities(self, *args):
        self.calls.append("sensitivities")
        return super().compute_sensitivities(*args)

    def update_fields(self, *args):
        self.calls.append("update")
        return super().update_fields(*args)

    def check_convergence(self, history):
        self.calls.append("convergence")
        return super().check_convergence(history)


class FailingOptimizer(XlsTopologyOptimizer):

    def solve_state(self, qp_fractions):
        raise SolverError("factorization failed", residual=np.inf)


class TestProblemSpec(unittest.TestCase):

    def test_volume_bounds(self):
        for max_volume in ((1., 1.3), (1., 0.), (1., )):
            with self.subTest(max_volume=max_volume):
                with self.assertRaises(ValueError):
                    compliance_problem(max_volume=max_volume)

    def test_objective_requirements(self):
        with self.assertRaises(ValueError):
            compliance_problem(objective=ObjectiveKind.MECHANISM)
        with self.assertRaises(ValueError):
            compliance_problem(objective=ObjectiveKind.COMPLIANCE_PLUS_INERTIA)
        with self.assertRaises(ValueError):
            compliance_problem(inertia=InertiaSpec(1e-12, (1., 0.5, 0.)))
        with self.assertRaises(ValueError):
            compliance_problem(boundaries=compliance_problem().boundaries[:1])

    def test_phase_and_dimension_checks(self):
        with self.assertRaises(ValueError):
            compliance_problem(evolution=EvolutionParams.uniform(3, 2))
        with self.assertRaises(ValueError):
            compliance_problem(evolution=EvolutionParams.uniform(2, 3))
        with self.assertRaises(ValueError):
            compliance_problem(
                default_boundary=BoundaryTag("rest", BoundaryKind.MATERIAL_SPECIFIED, material=2))
        with self.assertRaises(ValueError):
            compliance_problem(nondesign=(NondesignRegion(Region.from_dict({}, 2), 5), ))

    def test_boundary_spec(self):
        with self.assertRaises(ValueError):
            BoundarySpec(_tag("load", BoundaryKind.TRACTION, x=[2., 2.]))
        with self.assertRaises(ValueError):
            BoundarySpec(_tag("fixed", BoundaryKind.FIXED_DISPLACEMENT, x=[0., 0.]),
                         stiffness=np.eye(2))
        free = BoundarySpec(_tag("free", BoundaryKind.FREE, x=[0., 0.]))
        self.assertIsNone(free.condition(2))

    def test_constrained_phases_and_mesh(self):
        spec = compliance_problem()
        self.assertEqual(spec.constrained_phases, (1, ))
        mesh = spec.build_mesh()
        self.assertEqual(mesh.untagged_facet_count(), 0)
        self.assertEqual([t.name for t in mesh.tags], ["fixed", "load", "rest"])
        self.assertEqual(len(spec.boundary_conditions()), 2)


class TestHelpers(unittest.TestCase):

    def setUp(self):
        self.mesh = build_structured_mesh((2., 1.), (4, 2))

    def test_volume_fraction(self):
        shape = (self.mesh.n_elements, self.mesh.n_quadrature)
        uniform = PhaseFractions(np.full((3, ) + shape, 1. / 3.))
        self.assertAlmostEqual(volume_fraction(uniform, 2, self.mesh), 1. / 3., delta=1e-15)

        single = np.zeros((2, ) + shape)
        single[1] = 1.
        self.assertEqual(volume_fraction(PhaseFractions(single), 1, self.mesh), 1.)
        self.assertEqual(volume_fraction(PhaseFractions(single), 0, self.mesh), 0.)

        checkerboard = np.zeros((2, ) + shape)
        checkerboard[0, ::2] = checkerboard[1, 1::2] = 1.
        self.assertAlmostEqual(volume_fraction(PhaseFractions(checkerboard), 0, self.mesh), 0.5)

        mask = np.zeros(self.mesh.n_elements, dtype=bool)
        mask[::2] = True
        self.assertEqual(volume_fraction(PhaseFractions(checkerboard), 0, self.mesh, mask), 1.)

    def test_element_phases_and_interface(self):
        centroids = self.mesh.element_centroids
        phases = (centroids[:, 0] > 1.).astype(int)
        values = np.zeros((2, self.mesh.n_elements, self.mesh.n_quadrature))
        values[phases, np.arange(self.mesh.n_elements)] = 1.
        np.testing.assert_array_equal(element_phases(PhaseFractions(values)), phases)
        self.assertAlmostEqual(interface_length(self.mesh, phases), 1.)
        self.assertEqual(interface_length(self.mesh, np.zeros_like(phases)), 0.)

    def test_converged(self):
        self.assertTrue(converged(_history([2.] * 20, [0.] * 20)))
        self.assertFalse(converged(_history([2.] * 19, [0.] * 19)))
        self.assertFalse(converged(_history([2., 2.1] * 10, [0.] * 20)))
        self.assertFalse(converged(_history([2.] * 20, [0.01] * 20)))
        self.assertTrue(converged(_history([2.] * 20, [0.01] * 20), feasibility_tolerance=0.02))

    def test_history_order(self):
        history = _history([1.], [0.])
        with self.assertRaises(AssertionError):
            history.append(IterationRecord(5, 1., {}, np.zeros(1), np.zeros(2)))
        self.assertEqual(history.constraints.shape, (1, 1))


class TestXlsTopologyOptimizer(unittest.TestCase):

    def test_stage_order(self):
        optimizer = InstrumentedOptimizer(compliance_problem())
        _, history = optimizer(max_iterations=3)
        self.assertEqual(len(history), 3)
        self.assertEqual(optimizer.calls, list(TEST_STAGES) * 3)

    def test_short_run(self):
        xls, history = run(compliance_problem())
        self.assertEqual(len(history), TEST_ITERATIONS)
        self.assertFalse(history.converged)
        self.assertIsInstance(xls, XlsField)
        self.assertLessEqual(np.abs(xls.values).max(), 1.)
        for t, record in enumerate(history.records):
            with self.subTest(iteration=t):
                self.assertEqual(record.iteration, t)
                self.assertGreater(record.objective, 0.)
                self.assertEqual(record.multipliers.shape, (1, ))
                self.assertTrue(np.isfinite(record.c_all) and record.c_all > 0.)
                self.assertAlmostEqual(record.volumes.sum(), 1., delta=1e-12)
                self.assertAlmostEqual(record.constraints[0], record.volumes[1] - 0.3, delta=1e-15)

    def test_iteration_zero_matches_initial_field(self):
        optimizer = XlsTopologyOptimizer(compliance_problem())
        initial = optimizer.initial_field()
        qp, _ = optimizer.compute_fractions(initial)
        record = optimizer.evaluate(0, optimizer.solve_state(qp), qp)
        _, history = optimizer(max_iterations=1)
        self.assertAlmostEqual(history[0].objective, record.objective,
                               delta=1e-12 * record.objective)
        np.testing.assert_allclose(history[0].volumes, 0.5, rtol=1e-9)

    def test_repeated_runs_are_deterministic(self):
        optimizer = XlsTopologyOptimizer(compliance_problem())
        first, history = optimizer(max_iterations=3)
        second, again = optimizer(max_iterations=3)
        np.testing.assert_array_equal(first.values, second.values)
        np.testing.assert_array_equal(history.objectives, again.objectives)

    def test_callback_and_snapshots(self):
        seen = []
        _, history = run(compliance_problem(),
                         callback=lambda t, xls, state, sens: seen.append((t, state.u.shape, sens)),
                         callback_steps=2,
                         snapshot_every=3)
        self.assertEqual([t for t, _, _ in seen], [0, 2, 4])
        self.assertEqual(seen[0][1], (17 * 9, 2))
        self.assertIsInstance(seen[0][2], SensitivityField)
        self.assertEqual(seen[0][2].values.shape, (1, 17 * 9))
        self.assertEqual(sorted(history.snapshots), [0, 3])
        with self.assertRaises(ValueError):
            run(compliance_problem(), callback_steps=0)

    def test_energy_identity_on_every_solve(self):
        errors = []
        run(compliance_problem(), max_iterations=TEST_ITERATIONS,
            callback=lambda t, xls, state, sens: errors.append(state.solve_stats["energy_error"]))
        self.assertEqual(len(errors), TEST_ITERATIONS)
        self.assertLess(max(errors), 1e-8)

    def test_solver_failure_aborts(self):
        optimizer = FailingOptimizer(compliance_problem())
        with self.assertRaises(OptimizationAborted) as ctx:
            optimizer()
        self.assertEqual(ctx.exception.iteration, 0)
        self.assertIsInstance(ctx.exception.snapshot, XlsField)
        self.assertIsInstance(ctx.exception.__cause__, SolverError)

    def test_nondesign_region(self):
        block = Region.from_dict({"x": [0., 0.5], "y": [0., 1.]}, 2)
        optimizer = XlsTopologyOptimizer(compliance_problem(nondesign=(NondesignRegion(block, 1), )))
        elements = optimizer.nondesign_elements[1]
        self.assertEqual(len(elements), 4 * 8)
        self.assertEqual(int((~optimizer.design_mask).sum()), 4 * 8)
        qp, nodal = optimizer.compute_fractions(XlsField.zeros(2, optimizer.mesh.n_nodes))
        np.testing.assert_array_equal(qp.values[1, elements], 1.)
        np.testing.assert_array_equal(nodal.values[1, optimizer.nondesign_nodes[1]], 1.)
        # The block nodes are held at phase 1 by the diffusion Dirichlet condition
        self.assertIn(1, optimizer.diffusion.dirichlet)

    def test_sharp_masking(self):
        optimizer = XlsTopologyOptimizer(compliance_problem(sharp_masking=True))
        _, nodal = optimizer.compute_fractions(XlsField.zeros(2, optimizer.mesh.n_nodes))
        self.assertTrue(np.isin(nodal.values, (0., 1.)).all())

    def test_compliance_plus_inertia(self):
        spec = compliance_problem(objective=ObjectiveKind.COMPLIANCE_PLUS_INERTIA,
                                  inertia=InertiaSpec(1e-12, (1., 0.5, 0.)))
        _, history = run(spec, max_iterations=2)
        record = history[0]
        self.assertIn("inertia", record.terms)
        self.assertAlmostEqual(record.objective,
                               record.terms["compliance"] + 1e-12 * record.terms["inertia"],
                               delta=1e-12 * abs(record.objective))

    def test_mechanism(self):
        optimizer = XlsTopologyOptimizer(mechanism_problem())
        self.assertIsNotNone(optimizer.output_port)
        states = []
        _, history = optimizer(callback=lambda t, xls, state, sens: states.append(state))
        self.assertEqual(len(history), 3)
        self.assertIn("mechanism", history[0].terms)
        self.assertIsNotNone(states[0].v)
        self.assertIsNotNone(optimizer.filtered)


if __name__ == "__main__":
    unittest.main()
