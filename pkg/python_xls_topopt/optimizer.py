#
# For licensing see accompanying LICENSE.md file.
# Copyright (C) 2022 Apple Inc. All Rights Reserved.
#

from dataclasses import dataclass, field
from enum import Enum

import logging

logging.basicConfig()
logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

import numpy as np
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from python_xls_topopt.elasticity import (
    DisplacementBC,
    ElasticitySolver,
    LinearSolver,
    MaterialCatalog,
    SolverError,
    SpringBC,
    StateSolution,
    SymmetryBC,
    TractionBC,
    DEFAULT_PCG_RTOL,
    mean_compliance,
    mechanism_objective,
    moment_of_inertia,
)
from python_xls_topopt.evolution import (
    EvolutionParams,
    PidState,
    ReactionDiffusion,
    assemble_source,
    normalization_coeffs,
    pid_multipliers,
)
from python_xls_topopt.mesh import (
    BoundaryKind,
    BoundaryTag,
    Mesh,
    Region,
    build_structured_mesh,
    complete_tags,
    tag_boundary,
)
from python_xls_topopt.multiphase import (
    PhaseFractions,
    SmoothingParams,
    XlsField,
    approx_characteristic,
    ersatz_fractions,
    initial_field,
)
from python_xls_topopt.sensitivity import (
    DEFAULT_FILTER_COEFFICIENT,
    SensitivityField,
    emt_table,
    td_compliance,
    td_mechanism,
    time_filter,
    xtd_inertia,
    xtd_objective,
    xtd_volume,
)


class OptimizationAborted(RuntimeError):

    def __init__(self, message, iteration, snapshot=None):
        super().__init__(message)
        self.iteration = iteration
        self.snapshot = snapshot


class ObjectiveKind(Enum):
    COMPLIANCE = "compliance"
    MECHANISM = "mechanism"
    COMPLIANCE_PLUS_INERTIA = "compliance_plus_inertia"


@dataclass(frozen=True)
class InertiaSpec:
    weight: float
    axis_point: Tuple[float, ...]
    axis_direction: Tuple[float, ...] = (0., 0., 1.)

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"Expected a nonnegative inertia weight, got {self.weight}")
        if abs(np.linalg.norm(self.axis_direction) - 1.) > 1e-9:
            raise ValueError(
                f"Expected a unit axis direction, got {self.axis_direction}")


@dataclass(frozen=True)
class MeshSpec:
    extent: Tuple[float, ...]
    resolution: Tuple[int, ...]
    origin: Optional[Tuple[float, ...]] = None
    char_length: Optional[float] = None

    @property
    def dim(self):
        return len(self.extent)


@dataclass(frozen=True, eq=False)
class BoundarySpec:
    """ A boundary tag and the mechanical data attached to its kind
    """
    tag: BoundaryTag
    traction: Optional[Tuple[float, ...]] = None
    stiffness: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.tag.kind is BoundaryKind.TRACTION and self.traction is None:
            raise ValueError(f"Traction boundary {self.tag.name} has no traction vector")
        if self.stiffness is not None and self.tag.kind not in (BoundaryKind.INPUT_PORT,
                                                                BoundaryKind.OUTPUT_PORT):
            raise ValueError(
                f"Spring stiffness is only allowed on ports, {self.tag.name} is "
                f"{self.tag.kind.value}")

    def condition(self, dim: int):
        kind = self.tag.kind
        if kind is BoundaryKind.FIXED_DISPLACEMENT:
            return DisplacementBC(self.tag.name, self.tag.components)
        if kind is BoundaryKind.SYMMETRY:
            return SymmetryBC(self.tag.name)
        if kind is BoundaryKind.TRACTION:
            return TractionBC(self.tag.name, np.asarray(self.traction))
        if kind in (BoundaryKind.INPUT_PORT, BoundaryKind.OUTPUT_PORT):
            traction = np.zeros(dim) if self.traction is None else np.asarray(self.traction)
            stiffness = np.zeros((dim, dim)) if self.stiffness is None else self.stiffness
            return SpringBC(self.tag.name, stiffness, traction)
        return None


@dataclass(frozen=True)
class NondesignRegion:
    region: Region
    material: int


@dataclass(frozen=True)
class InitialConfiguration:
    background: Optional[int] = None
    regions: Tuple[Tuple[Region, int], ...] = ()

    @property
    def explicit(self):
        return self.background is not None or len(self.regions) > 0


@dataclass(frozen=True)
class Schedule:
    max_iterations: int = 400
    window: int = 20
    tolerance: float = 1e-4
    feasibility_tolerance: float = 1e-3
    filter_coefficient: float = DEFAULT_FILTER_COEFFICIENT

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError(f"Expected at least one iteration, got {self.max_iterations}")
        if self.window < 1:
            raise ValueError(f"Expected a positive convergence window, got {self.window}")
        if not 0. < self.filter_coefficient <= 1.:
            raise ValueError(
                f"Expected a filter coefficient in (0, 1], got {self.filter_coefficient}")


@dataclass(frozen=True)
class SolverOptions:
    linear_solver: Optional[LinearSolver] = None
    rtol: float = DEFAULT_PCG_RTOL
    max_iterations: Optional[int] = None


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    name: str
    objective: ObjectiveKind
    mesh: MeshSpec
    catalog: MaterialCatalog
    max_volume: Tuple[float, ...]
    boundaries: Tuple[BoundarySpec, ...]
    default_boundary: BoundaryTag
    evolution: EvolutionParams
    smoothing: SmoothingParams = SmoothingParams()
    initial: InitialConfiguration = InitialConfiguration()
    schedule: Schedule = Schedule()
    solver: SolverOptions = SolverOptions()
    inertia: Optional[InertiaSpec] = None
    nondesign: Tuple[NondesignRegion, ...] = ()
    sharp_masking: bool = False

    def __post_init__(self):
        M = self.catalog.n_phases
        if len(self.max_volume) != M:
            raise ValueError(
                f"Expected {M} maximum volume ratios, got {len(self.max_volume)}")
        for m, v in enumerate(self.max_volume):
            if not 0. < v <= 1.:
                raise ValueError(
                    f"Expected 0 < max volume <= 1 for phase {m}, got {v}")
        if self.evolution.n_phases != M:
            raise ValueError(
                f"Evolution parameters describe {self.evolution.n_phases} phases, catalog has {M}")
        if self.evolution.dim != self.mesh.dim:
            raise ValueError(
                f"Evolution parameters are {self.evolution.dim}D, mesh is {self.mesh.dim}D")

        tags = [b.tag for b in self.boundaries] + [self.default_boundary]
        for t in tags:
            if t.material is not None and t.material >= M:
                raise ValueError(
                    f"Tag {t.name} specifies material {t.material}, only {M} phases exist")
        for r in self.nondesign:
            if not 0 <= r.material < M:
                raise ValueError(f"Nondesign region material {r.material} is not a phase")

        kinds = [b.tag.kind for b in self.boundaries]
        if self.objective is ObjectiveKind.MECHANISM:
            if kinds.count(BoundaryKind.OUTPUT_PORT) != 1:
                raise ValueError("A mechanism problem needs exactly one output port")
        elif BoundaryKind.TRACTION not in kinds:
            raise ValueError(f"A {self.objective.value} problem needs a traction boundary")
        if (self.objective is ObjectiveKind.COMPLIANCE_PLUS_INERTIA) != (self.inertia is not None):
            raise ValueError(
                "Inertia settings are required by, and only allowed for, compliance_plus_inertia")

    @property
    def n_phases(self):
        return self.catalog.n_phases

    @property
    def dim(self):
        return self.mesh.dim

    @property
    def constrained_phases(self) -> Tuple[int, ...]:
        """ Phases with an active volume constraint (max volume below 1)
        """
        return tuple(m for m, v in enumerate(self.max_volume) if v < 1.)

    def build_mesh(self) -> Mesh:
        mesh = build_structured_mesh(self.mesh.extent,
                                     self.mesh.resolution,
                                     origin=self.mesh.origin,
                                     char_length=self.mesh.char_length)
        for boundary in self.boundaries:
            mesh = tag_boundary(mesh, boundary.tag)
        return complete_tags(mesh, self.default_boundary)

    def boundary_conditions(self):
        conditions = [b.condition(self.dim) for b in self.boundaries]
        return [c for c in conditions if c is not None]


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    terms: Dict[str, float]
    constraints: np.ndarray
    volumes: np.ndarray
    multipliers: Optional[np.ndarray] = None
    c_all: float = float("nan")


@dataclass
class RunHistory:
    constrained_phases: Tuple[int, ...]
    records: List[IterationRecord] = field(default_factory=list)
    snapshots: Dict[int, XlsField] = field(default_factory=dict)
    converged: bool = False

    def append(self, record: IterationRecord):
        assert record.iteration == len(self.records), \
            f"Expected iteration {len(self.records)}, got {record.iteration}"
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, index):
        return self.records[index]

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    @property
    def constraints(self) -> np.ndarray:
        return np.array([r.constraints for r in self.records]).reshape(
            len(self.records), len(self.constrained_phases))


def volume_fraction(fractions: PhaseFractions,
                    m: int,
                    mesh: Mesh,
                    element_mask: Optional[np.ndarray] = None) -> float:
    """ int psi_m / int 1 over the (design) elements, from quadrature-point fractions
    """
    values = fractions[m]
    ones = np.ones_like(values)
    if element_mask is not None:
        values, ones = values[element_mask], ones[element_mask]
    return float(np.einsum("eq,q->", values, mesh.quadrature_weights) /
                 np.einsum("eq,q->", ones, mesh.quadrature_weights))


def converged(history: RunHistory,
              window: int = 20,
              tol: float = 1e-4,
              feasibility_tolerance: float = 1e-3) -> bool:
    """ Relative objective spread over the last `window` iterations below
    `tol`, and every constraint within `feasibility_tolerance`
    """
    if len(history) < window:
        return False
    recent = history.objectives[-window:]
    scale = max(abs(recent.mean()), np.finfo(np.float64).tiny)
    plateau = (recent.max() - recent.min()) / scale < tol
    feasible = bool(np.all(history[-1].constraints <= feasibility_tolerance))
    return bool(plateau and feasible)


def element_phases(fractions: PhaseFractions) -> np.ndarray:
    """ Dominant phase of every element from quadrature-point fractions
    """
    return np.argmax(fractions.values.mean(axis=-1), axis=0)


def interface_length(mesh: Mesh, phases: np.ndarray) -> float:
    """ Total length (2D) or area (3D) of cell faces separating elements of
    different phases
    """
    grid = np.asarray(phases).reshape(mesh.resolution, order="F")
    total = 0.
    for k in range(mesh.dim):
        face = float(np.prod(np.delete(mesh.spacing, k)))
        changes = np.diff(grid, axis=k) != 0
        total += face * int(changes.sum())
    return total


class XlsTopologyOptimizer:
    """ Multi-material topology optimization with the extended level set.

    Every iteration runs, in order: fractions (2), state solve (3), objective
    and constraints (4), sensitivities and multipliers (5), reaction-diffusion
    update with clamping (6) and the convergence test (7)
    """

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.mesh = spec.build_mesh()
        self.bcs = spec.boundary_conditions()
        self.solver = ElasticitySolver(self.mesh,
                                       spec.catalog,
                                       self.bcs,
                                       linear_solver=spec.solver.linear_solver,
                                       rtol=spec.solver.rtol,
                                       max_iterations=spec.solver.max_iterations)
        self.emts = emt_table(spec.catalog, spec.dim)
        self.traction_bcs = [bc for bc in self.bcs if isinstance(bc, TractionBC)]
        self.output_port = (self.solver.output_ports[0]
                            if spec.objective is ObjectiveKind.MECHANISM else None)

        # Nondesign regions: fixed material on their elements and nodes
        self.nondesign_elements = {}
        nondesign_nodes = {}
        for r in spec.nondesign:
            elements = self.mesh.elements_in_region(r.region)
            if len(elements) == 0:
                raise ValueError(f"Nondesign region {r.region.to_dict()} contains no element")
            self.nondesign_elements[r.material] = np.union1d(
                self.nondesign_elements.get(r.material, []), elements).astype(int)
            nondesign_nodes[r.material] = np.union1d(
                nondesign_nodes.get(r.material, []),
                self.mesh.elements[elements].ravel()).astype(int)
        self.nondesign_nodes = nondesign_nodes
        self.design_mask = np.ones(self.mesh.n_elements, dtype=bool)
        for elements in self.nondesign_elements.values():
            self.design_mask[elements] = False

        self.diffusion = ReactionDiffusion(
            self.mesh,
            spec.evolution,
            dirichlet=self.mesh.material_dirichlet_nodes(extra=nondesign_nodes))

        self.constrained = spec.constrained_phases
        self.pid_state = PidState.initial(len(self.constrained))
        self.filtered = None

    def initial_field(self) -> XlsField:
        init = self.spec.initial
        xls = initial_field(self.mesh, self.spec.n_phases, init.background, init.regions)
        if init.explicit:
            # Smooth the box edges with one zero-source diffusion step
            qp_fractions, _ = self.compute_fractions(xls)
            zero = SensitivityField.zeros(xls.n_phases, self.mesh.n_nodes)
            xls = self.diffusion.step(xls, zero, qp_fractions)
        return xls

    def _override_nondesign(self, values, per_point):
        for m, points in per_point.items():
            values[:, points] = 0.
            values[m, points] = 1.
        return values

    # 2. Phase fractions at quadrature points (assembly) and nodes (masks)
    def compute_fractions(self, xls: XlsField) -> Tuple[PhaseFractions, PhaseFractions]:
        smoothing = self.spec.smoothing
        qp = ersatz_fractions(xls.at_quadrature(self.mesh), smoothing)
        if self.spec.sharp_masking:
            nodal = approx_characteristic(xls)
        else:
            nodal = ersatz_fractions(xls, smoothing)
        qp = PhaseFractions(self._override_nondesign(qp.values, self.nondesign_elements))
        nodal = PhaseFractions(self._override_nondesign(nodal.values, self.nondesign_nodes))
        return qp, nodal

    # 3. State (and adjoint) solve
    def solve_state(self, qp_fractions: PhaseFractions) -> StateSolution:
        state = self.solver.solve_state(qp_fractions)
        if self.spec.objective is ObjectiveKind.MECHANISM:
            state = self.solver.solve_adjoint(state)
        return state

    # 4. Objective and constraints
    def evaluate(self, iteration: int, state: StateSolution,
                 qp_fractions: PhaseFractions) -> IterationRecord:
        spec = self.spec
        terms = {}
        if spec.objective is ObjectiveKind.MECHANISM:
            terms["mechanism"] = mechanism_objective(self.mesh, state, self.output_port)
            objective = terms["mechanism"]
        else:
            terms["compliance"] = mean_compliance(self.mesh, state, self.traction_bcs)
            objective = terms["compliance"]
            if spec.inertia is not None:
                terms["inertia"] = moment_of_inertia(self.mesh, qp_fractions,
                                                     spec.catalog,
                                                     spec.inertia.axis_point,
                                                     spec.inertia.axis_direction)
                objective += spec.inertia.weight * terms["inertia"]

        volumes = np.array([
            volume_fraction(qp_fractions, m, self.mesh, self.design_mask)
            for m in range(spec.n_phases)
        ])
        constraints = np.array(
            [volumes[m] - spec.max_volume[m] for m in self.constrained])
        return IterationRecord(iteration=iteration,
                               objective=float(objective),
                               terms=terms,
                               constraints=constraints,
                               volumes=volumes)

    # 5. Extended topological derivatives and constraint multipliers
    def compute_sensitivities(self, state: StateSolution,
                              nodal_fractions: PhaseFractions,
                              record: IterationRecord):
        spec = self.spec
        if spec.objective is ObjectiveKind.MECHANISM:
            td = {pair: td_mechanism(state, state, A) for pair, A in self.emts.items()}
        else:
            td = {pair: td_compliance(state, A) for pair, A in self.emts.items()}
        sens_J = xtd_objective(td, nodal_fractions)

        if spec.inertia is not None:
            inertia = xtd_inertia(self.mesh, nodal_fractions, spec.catalog,
                                  spec.inertia.axis_point, spec.inertia.axis_direction)
            sens_J = SensitivityField(sens_J.n_phases,
                                      sens_J.values + spec.inertia.weight * inertia.values)

        if spec.objective is ObjectiveKind.MECHANISM:
            sens_J = time_filter(self.filtered, sens_J, spec.schedule.filter_coefficient)
            self.filtered = sens_J

        sens_g = [xtd_volume(m, nodal_fractions) for m in self.constrained]
        multipliers, self.pid_state = pid_multipliers(
            record.constraints, self.pid_state,
            spec.evolution.gains_for(self.constrained), spec.evolution.dt)
        record.multipliers = multipliers
        return sens_J, sens_g, multipliers

    # 6. Reaction-diffusion update and side constraint
    def update_fields(self, xls: XlsField, sens_J: SensitivityField,
                      sens_g: Sequence[SensitivityField], multipliers: np.ndarray,
                      qp_fractions: PhaseFractions, record: IterationRecord) -> XlsField:
        norm = normalization_coeffs(sens_J, self.mesh,
                                    self.spec.evolution.c_all_ordered_pairs)
        record.c_all = norm.c_all
        source = assemble_source(sens_J, sens_g, multipliers, norm.coefficients,
                                 norm.c_all, self.spec.evolution.ucss_normalization)
        return self.diffusion.step(xls, source, qp_fractions)

    # 7. Convergence
    def check_convergence(self, history: RunHistory) -> bool:
        s = self.spec.schedule
        return converged(history, s.window, s.tolerance, s.feasibility_tolerance)

    def __call__(self,
                 xls: Optional[XlsField] = None,
                 max_iterations: Optional[int] = None,
                 callback: Optional[Callable[
                     [int, XlsField, StateSolution, SensitivityField], None]] = None,
                 callback_steps: int = 1,
                 snapshot_every: Optional[int] = None) -> Tuple[XlsField, RunHistory]:
        if callback_steps < 1:
            raise ValueError(f"`callback_steps` has to be a positive integer but is {callback_steps}")
        max_iterations = max_iterations or self.spec.schedule.max_iterations

        # 1. Initialize the X-LS functions
        xls = self.initial_field() if xls is None else xls.copy()
        history = RunHistory(constrained_phases=self.constrained)
        self.pid_state = PidState.initial(len(self.constrained))
        self.filtered = None

        logger.info(
            f"Optimizing {self.spec.name}: {self.spec.n_phases} phases, "
            f"{self.mesh.n_elements} elements, objective {self.spec.objective.value}")
        start = time.time()

        for t in range(max_iterations):
            # 2. Phase fractions
            qp_fractions, nodal_fractions = self.compute_fractions(xls)

            # 3. State solve
            try:
                state = self.solve_state(qp_fractions)
            except SolverError as e:
                raise OptimizationAborted(f"Iteration {t}: elastic solve failed: {e}",
                                          iteration=t, snapshot=xls.copy()) from e

            # 4. Objective and constraints
            record = self.evaluate(t, state, qp_fractions)
            if not (np.isfinite(record.objective) and np.isfinite(record.constraints).all()):
                raise OptimizationAborted(
                    f"Iteration {t}: non-finite objective {record.objective} or constraints "
                    f"{record.constraints}", iteration=t, snapshot=xls.copy())
            history.append(record)
            if snapshot_every is not None and t % snapshot_every == 0:
                history.snapshots[t] = xls.copy()

            # 5. Sensitivities and multipliers (time filter for mechanisms)
            sens_J, sens_g, multipliers = self.compute_sensitivities(
                state, nodal_fractions, record)
            if callback is not None and t % callback_steps == 0:
                callback(t, xls, state, sens_J)

            # 6. Update and clamp
            xls = self.update_fields(xls, sens_J, sens_g, multipliers, qp_fractions, record)
            if not np.isfinite(xls.values).all():
                raise OptimizationAborted(f"Iteration {t}: non-finite level-set values",
                                          iteration=t, snapshot=xls.copy())

            logger.info(
                f"Iteration {t}: objective {record.objective:.6e}, "
                f"g {np.array2string(record.constraints, precision=4)}, "
                f"lambda {np.array2string(record.multipliers, precision=4)}")

            # 7. Convergence
            if self.check_convergence(history):
                history.converged = True
                break

        elapsed = time.time() - start
        if history.converged:
            logger.info(f"Converged after {len(history)} iterations. Took {elapsed:.1f} seconds.")
        else:
            logger.warning(
                f"Stopped at the iteration cap ({max_iterations}) without converging. "
                f"Took {elapsed:.1f} seconds.")
        return xls, history


def run(spec: ProblemSpec, **kwargs) -> Tuple[XlsField, RunHistory]:
    return XlsTopologyOptimizer(spec)(**kwargs)
