#
# For licensing see accompanying LICENSE.md file.
# Copyright (C) 2022 Apple Inc. All Rights Reserved.
#

import dataclasses
from dataclasses import dataclass, field
from enum import Enum

import logging

logging.basicConfig()
logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

import time
from typing import Dict, List, Optional, Sequence, Tuple, Union

from python_xls_topopt.mesh import BoundaryKind, Mesh
from python_xls_topopt.multiphase import PhaseFractions

# Table of candidate materials: Young's moduli in GPa, display colors
TABLE_YOUNGS_MODULI_GPA = (0.1, 200., 100., 150., 175., 125., 75., 50., 25.)
TABLE_COLORS = (
    ("gray", (128, 128, 128)),
    ("red", (255, 0, 0)),
    ("blue", (0, 0, 255)),
    ("yellow", (255, 255, 0)),
    ("green", (0, 128, 0)),
    ("light blue", (173, 216, 230)),
    ("orange", (255, 165, 0)),
    ("pink", (255, 192, 203)),
    ("purple", (128, 0, 128)),
)
DEFAULT_POISSON_RATIO = 0.3

# Port springs of the compliant mechanism examples, N/m per unit area
DEFAULT_INPUT_SPRING_XX = 4000e12
DEFAULT_OUTPUT_SPRING_XX = 10e12

DEFAULT_PCG_RTOL = 1e-9
RESIDUAL_ALARM = 1e-6


class SolverError(RuntimeError):

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class LinearSolver(Enum):
    DIRECT = "direct"
    PCG = "pcg"


def voigt_pairs(dim):
    """ Tensor index pairs in Voigt order (engineering shear strains)
    """
    if dim == 2:
        return ((0, 0), (1, 1), (0, 1))
    if dim == 3:
        return ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
    raise ValueError(f"Expected dim 2 or 3, got {dim}")


def tensor_to_voigt(tensor: np.ndarray) -> np.ndarray:
    """ Voigt matrix of a 4th-order tensor with minor symmetries, such that
    e:T:e = e_v^T T_v e_v for engineering-shear strain vectors e_v
    """
    pairs = voigt_pairs(tensor.shape[0])
    return np.array([[tensor[i, j, k, l] for (k, l) in pairs]
                     for (i, j) in pairs])


@dataclass(frozen=True)
class Material:
    youngs_modulus: float
    poisson_ratio: float = DEFAULT_POISSON_RATIO
    density: float = 1.
    name: str = ""
    color: Tuple[int, int, int] = (128, 128, 128)

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValueError(
                f"Expected a positive Young's modulus, got {self.youngs_modulus}")
        if not -1. < self.poisson_ratio < 0.5:
            raise ValueError(
                f"Expected a Poisson ratio in (-1, 0.5), got {self.poisson_ratio}")
        if self.density < 0:
            raise ValueError(f"Expected a nonnegative density, got {self.density}")

    @property
    def shear_modulus(self):
        return self.youngs_modulus / (2. * (1. + self.poisson_ratio))

    @property
    def bulk_modulus(self):
        return self.youngs_modulus / (3. * (1. - 2. * self.poisson_ratio))

    def stiffness(self, dim: int) -> np.ndarray:
        """ Voigt elasticity matrix, plane stress in 2D
        """
        E, nu = self.youngs_modulus, self.poisson_ratio
        if dim == 2:
            return E / (1. - nu**2) * np.array([
                [1., nu, 0.],
                [nu, 1., 0.],
                [0., 0., 0.5 * (1. - nu)],
            ])
        if dim == 3:
            lam = E * nu / ((1. + nu) * (1. - 2. * nu))
            mu = self.shear_modulus
            C = np.zeros((6, 6))
            C[:3, :3] = lam
            C[np.arange(3), np.arange(3)] += 2. * mu
            C[np.arange(3, 6), np.arange(3, 6)] = mu
            return C
        raise ValueError(f"Expected dim 2 or 3, got {dim}")


@dataclass(frozen=True)
class MaterialCatalog:
    materials: Tuple[Material, ...]

    def __post_init__(self):
        if len(self.materials) < 2:
            raise ValueError(
                f"Expected at least 2 phases, got {len(self.materials)}")

    @classmethod
    def from_table(cls,
                   indices: Optional[Sequence[int]] = None,
                   densities: Optional[Sequence[float]] = None,
                   poisson_ratio: float = DEFAULT_POISSON_RATIO):
        """ Select entries of the material table as phases 0..M-1. Densities
        default to 0 for the void entry and 1 otherwise
        """
        indices = list(range(len(TABLE_YOUNGS_MODULI_GPA))) if indices is None else list(indices)
        for index in indices:
            if not 0 <= index < len(TABLE_YOUNGS_MODULI_GPA):
                raise ValueError(
                    f"Expected table indices in [0, {len(TABLE_YOUNGS_MODULI_GPA)}), got {index}")
        if densities is None:
            densities = [0. if index == 0 else 1. for index in indices]
        if len(densities) != len(indices):
            raise ValueError(
                f"Expected {len(indices)} densities, got {len(densities)}")
        return cls(tuple(
            Material(youngs_modulus=TABLE_YOUNGS_MODULI_GPA[index] * 1e9,
                     poisson_ratio=poisson_ratio,
                     density=float(rho),
                     name=f"material {index} ({TABLE_COLORS[index][0]})",
                     color=TABLE_COLORS[index][1])
            for index, rho in zip(indices, densities)))

    def __len__(self):
        return len(self.materials)

    def __getitem__(self, m):
        return self.materials[m]

    @property
    def n_phases(self):
        return len(self.materials)

    @property
    def densities(self):
        return np.array([m.density for m in self.materials])

    @property
    def palette(self):
        return [m.color for m in self.materials]

    def stiffness_matrices(self, dim: int) -> np.ndarray:
        return np.stack([m.stiffness(dim) for m in self.materials])


@dataclass(frozen=True)
class DisplacementBC:
    tag: str
    components: Optional[Tuple[int, ...]] = None


@dataclass(frozen=True)
class SymmetryBC:
    """ Mirror plane: the displacement component normal to the tagged facets is zero
    """
    tag: str


@dataclass(frozen=True, eq=False)
class TractionBC:
    tag: str
    traction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "traction",
                           np.asarray(self.traction, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class SpringBC:
    """ Port condition sigma.n = -k u + t. On an output port `traction` is the
    dummy traction that defines the mechanism objective and the adjoint load
    """
    tag: str
    stiffness: np.ndarray
    traction: np.ndarray

    def __post_init__(self):
        k = np.atleast_2d(np.asarray(self.stiffness, dtype=np.float64))
        t = np.asarray(self.traction, dtype=np.float64)
        if k.shape != (t.size, t.size):
            raise ValueError(
                f"Expected a {t.size}x{t.size} spring stiffness, got {k.shape}")
        if not np.allclose(k, k.T, rtol=1e-12, atol=0.):
            raise ValueError(f"Spring stiffness of port {self.tag} is not symmetric")
        if np.linalg.eigvalsh(k).min() < -1e-12 * max(np.abs(k).max(), 1.):
            raise ValueError(
                f"Spring stiffness of port {self.tag} is not positive semidefinite")
        object.__setattr__(self, "stiffness", k)
        object.__setattr__(self, "traction", t)


BoundaryCondition = Union[DisplacementBC, SymmetryBC, TractionBC, SpringBC]


@dataclass
class StateSolution:
    """ Nodal displacements u (n_nodes, dim) with strains recovered at
    quadrature points (n_el, n_quad, n_voigt) and at nodes (n_nodes, n_voigt).
    The adjoint fields are filled in by `solve_adjoint`
    """
    u: np.ndarray
    strain_qp: np.ndarray
    strain: np.ndarray
    v: Optional[np.ndarray] = None
    adjoint_strain_qp: Optional[np.ndarray] = None
    adjoint_strain: Optional[np.ndarray] = None
    solve_stats: Dict[str, float] = field(default_factory=dict)


def strain_displacement_matrix(mesh: Mesh) -> np.ndarray:
    """ B matrices at the quadrature points, shape (n_quad, n_voigt, n_element_dofs)
    """
    dNdx = mesh.shape_gradients
    d, nn = mesh.dim, mesh.nodes_per_element
    pairs = voigt_pairs(d)
    B = np.zeros((dNdx.shape[0], len(pairs), nn * d))
    for s, (i, j) in enumerate(pairs):
        B[:, s, i::d] += dNdx[:, :, j]
        if i != j:
            B[:, s, j::d] += dNdx[:, :, i]
    return B


def element_dofs(mesh: Mesh) -> np.ndarray:
    d = mesh.dim
    return (mesh.elements[:, :, None] * d + np.arange(d)).reshape(
        mesh.n_elements, -1)


def facet_load(mesh: Mesh, tag: str, traction: np.ndarray) -> np.ndarray:
    """ Consistent nodal load of a constant traction over the tagged facets
    """
    traction = np.asarray(traction, dtype=np.float64)
    assert traction.shape == (mesh.dim, ), \
        f"Expected a traction of shape ({mesh.dim},), got {traction.shape}"
    mask = mesh.tag_facet_mask(tag)
    N, w = mesh.facet_quadrature()
    shares = mesh.facet_measures[mask, None] * (w @ N)[None, :]
    nodal = np.bincount(mesh.boundary_facets[mask].ravel(),
                        weights=shares.ravel(),
                        minlength=mesh.n_nodes)
    return (nodal[:, None] * traction[None, :]).ravel()


def recover_nodal(mesh: Mesh, element_values: np.ndarray) -> np.ndarray:
    """ Average element values (n_el, k) to nodes with volume weights
    """
    weights = np.repeat(mesh.element_volumes(), mesh.nodes_per_element)
    flat = mesh.elements.ravel()
    denominator = np.bincount(flat, weights=weights, minlength=mesh.n_nodes)
    columns = [
        np.bincount(flat,
                    weights=weights * np.repeat(element_values[:, k],
                                                mesh.nodes_per_element),
                    minlength=mesh.n_nodes)
        for k in range(element_values.shape[1])
    ]
    return np.stack(columns, axis=1) / denominator[:, None]


class ElasticitySolver:
    """ Linear elasticity over ersatz-mixed materials on a tagged mesh.

    The solver keeps the operator assembled by the last forward solve and its
    factorization (or Jacobi preconditioner), so `solve_adjoint` only costs a
    back substitution
    """

    def __init__(self,
                 mesh: Mesh,
                 catalog: MaterialCatalog,
                 bcs: Sequence[BoundaryCondition],
                 linear_solver: Optional[LinearSolver] = None,
                 rtol: float = DEFAULT_PCG_RTOL,
                 max_iterations: Optional[int] = None):
        self.mesh = mesh
        self.catalog = catalog
        self.bcs = list(bcs)
        self.linear_solver = linear_solver or (
            LinearSolver.DIRECT if mesh.dim == 2 else LinearSolver.PCG)
        self.rtol = rtol
        self.max_iterations = max_iterations

        d = mesh.dim
        self.n_dofs = mesh.n_nodes * d
        self.B = strain_displacement_matrix(mesh)
        self.edofs = element_dofs(mesh)
        self._rows = np.repeat(self.edofs, self.edofs.shape[1], axis=1).ravel()
        self._cols = np.tile(self.edofs, (1, self.edofs.shape[1])).ravel()

        # Per-phase, per-quadrature-point element stiffness contributions
        C = catalog.stiffness_matrices(d)
        self._phase_kernels = np.einsum("qsa,mst,qtb,q->mqab", self.B, C,
                                        self.B, mesh.quadrature_weights)

        self.fixed_dofs = self._collect_fixed_dofs()
        self.free_dofs = np.setdiff1d(np.arange(self.n_dofs), self.fixed_dofs)
        self.spring_matrix = self._spring_matrix()
        self.forward_load = self._load(adjoint=False)
        self.adjoint_load = self._load(adjoint=True)

        springs = [bc for bc in self.bcs if isinstance(bc, SpringBC)]
        if len(self.fixed_dofs) == 0 and len(springs) < 2:
            raise SolverError(
                "Elastic system is singular: expected at least one fixed-displacement "
                f"boundary or two spring ports, got {len(springs)} spring port(s)")

        self.stiffness = None
        self._reduced = None
        self._lu = None
        self._preconditioner = None

    def _collect_fixed_dofs(self):
        d = self.mesh.dim
        fixed = []
        for bc in self.bcs:
            if isinstance(bc, DisplacementBC):
                components = bc.components if bc.components is not None else range(d)
                nodes = self.mesh.tag_nodes(bc.tag)
                for c in components:
                    assert 0 <= c < d, f"Invalid displacement component {c}"
                    fixed.append(nodes * d + c)
            elif isinstance(bc, SymmetryBC):
                mask = self.mesh.tag_facet_mask(bc.tag)
                axes = np.unique(self.mesh.facet_axes[mask])
                if len(axes) != 1:
                    raise ValueError(
                        f"Symmetry tag {bc.tag} must lie on a single plane, spans axes {axes}")
                fixed.append(self.mesh.tag_nodes(bc.tag) * d + axes[0])
        if not fixed:
            return np.empty(0, dtype=int)
        return np.unique(np.concatenate(fixed))

    def _spring_matrix(self):
        d = self.mesh.dim
        N, w = self.mesh.facet_quadrature()
        reference = np.einsum("q,qa,qb->ab", w, N, N)
        matrix = sp.csr_matrix((self.n_dofs, self.n_dofs))
        for bc in self.bcs:
            if not isinstance(bc, SpringBC):
                continue
            mask = self.mesh.tag_facet_mask(bc.tag)
            facets = self.mesh.boundary_facets[mask]
            blocks = np.einsum("f,ab,ce->facbe", self.mesh.facet_measures[mask],
                               reference, bc.stiffness)
            dofs = facets[:, :, None] * d + np.arange(d)
            nf, nfn = facets.shape
            rows = np.broadcast_to(dofs[:, :, :, None, None], (nf, nfn, d, nfn, d))
            cols = np.broadcast_to(dofs[:, None, None, :, :], (nf, nfn, d, nfn, d))
            matrix = matrix + sp.coo_matrix(
                (blocks.ravel(), (rows.ravel(), cols.ravel())),
                shape=(self.n_dofs, self.n_dofs)).tocsr()
        return matrix

    def _load(self, adjoint: bool):
        f = np.zeros(self.n_dofs)
        for bc in self.bcs:
            kind = self.mesh.tag(bc.tag).kind
            if isinstance(bc, TractionBC) and not adjoint:
                f += facet_load(self.mesh, bc.tag, bc.traction)
            elif isinstance(bc, SpringBC):
                if kind is BoundaryKind.OUTPUT_PORT and adjoint:
                    f -= facet_load(self.mesh, bc.tag, bc.traction)
                elif kind is not BoundaryKind.OUTPUT_PORT and not adjoint:
                    f += facet_load(self.mesh, bc.tag, bc.traction)
        return f

    @property
    def output_ports(self) -> List[SpringBC]:
        return [
            bc for bc in self.bcs if isinstance(bc, SpringBC)
            and self.mesh.tag(bc.tag).kind is BoundaryKind.OUTPUT_PORT
        ]

    def _verify_fractions(self, fractions: PhaseFractions):
        if not isinstance(fractions, PhaseFractions):
            raise TypeError(f"Expected PhaseFractions, got {type(fractions)}")
        expected_shape = (self.catalog.n_phases, self.mesh.n_elements,
                          self.mesh.n_quadrature)
        if fractions.values.shape != expected_shape:
            raise TypeError(
                f"Expected quadrature-point fractions of shape {expected_shape}, "
                f"got {fractions.values.shape}")

    def element_stiffness(self, fractions: PhaseFractions) -> np.ndarray:
        """ Element stiffness matrices of the mixture C = sum_m psi_m C_m,
        shape (n_el, n_element_dofs, n_element_dofs)
        """
        self._verify_fractions(fractions)
        return np.einsum("meq,mqab->eab", fractions.values, self._phase_kernels)

    def assemble(self, fractions: PhaseFractions) -> sp.csr_matrix:
        Ke = self.element_stiffness(fractions)
        K = sp.coo_matrix((Ke.ravel(), (self._rows, self._cols)),
                          shape=(self.n_dofs, self.n_dofs)).tocsr()
        return K + self.spring_matrix

    def reduced_stiffness(self) -> sp.csc_matrix:
        assert self.stiffness is not None, "No operator assembled yet"
        return self.stiffness[self.free_dofs][:, self.free_dofs].tocsc()

    def _factorize(self, K):
        self.stiffness = K
        self._reduced = self.reduced_stiffness()
        self._lu = None
        self._preconditioner = None
        if self.linear_solver is LinearSolver.DIRECT:
            try:
                self._lu = spla.splu(self._reduced)
            except RuntimeError as e:
                raise SolverError(
                    f"Direct factorization failed on {self._reduced.shape[0]} free dofs "
                    f"(insufficient constraints?): {e}") from e
        else:
            diagonal = self._reduced.diagonal()
            if (diagonal <= 0).any():
                raise SolverError(
                    f"Stiffness has {int((diagonal <= 0).sum())} nonpositive diagonal entries")
            self._preconditioner = spla.LinearOperator(
                self._reduced.shape, matvec=lambda x: x / diagonal)

    def _solve(self, rhs: np.ndarray):
        x = np.zeros(self.n_dofs)
        b = rhs[self.free_dofs]
        b_norm = np.linalg.norm(b)
        if b_norm == 0.:
            return x, {"iterations": 0, "residual": 0.}

        iterations = 0
        if self.linear_solver is LinearSolver.DIRECT:
            x_free = self._lu.solve(b)
            iterations = 1
        else:

            def count(_):
                nonlocal iterations
                iterations += 1

            x_free, info = spla.cg(self._reduced,
                                   b,
                                   rtol=self.rtol,
                                   maxiter=self.max_iterations,
                                   M=self._preconditioner,
                                   callback=count)
            if info != 0:
                residual = np.linalg.norm(self._reduced @ x_free - b) / b_norm
                raise SolverError(
                    f"Conjugate gradient did not converge (info={info}) after "
                    f"{iterations} iterations, relative residual {residual:.2e}",
                    residual=residual,
                    iterations=iterations)

        residual = np.linalg.norm(self._reduced @ x_free - b) / b_norm
        if not np.isfinite(residual) or residual > RESIDUAL_ALARM:
            raise SolverError(
                f"Elastic solve is inaccurate (relative residual {residual:.2e}), "
                "the system is likely singular",
                residual=residual,
                iterations=iterations)
        x[self.free_dofs] = x_free
        return x, {"iterations": iterations, "residual": float(residual)}

    def strains(self, displacement: np.ndarray):
        """ Quadrature-point and nodal strains of a nodal displacement field
        """
        ue = displacement.ravel()[self.edofs]
        strain_qp = np.einsum("qsa,ea->eqs", self.B, ue)
        w = self.mesh.quadrature_weights
        element_mean = np.einsum("eqs,q->es", strain_qp, w) / w.sum()
        return strain_qp, recover_nodal(self.mesh, element_mean)

    def solve_state(self, fractions: PhaseFractions) -> StateSolution:
        start = time.time()
        self._factorize(self.assemble(fractions))
        x, stats = self._solve(self.forward_load)
        work = float(self.forward_load @ x)
        energy = float(x @ (self.stiffness @ x))
        stats["energy_error"] = abs(work - energy) / abs(work) if work != 0. else abs(energy)
        u = x.reshape(-1, self.mesh.dim)
        strain_qp, strain = self.strains(u)
        stats["seconds"] = time.time() - start
        logger.debug(
            f"Forward solve ({self.linear_solver.value}) took {stats['seconds']:.2f} seconds")
        return StateSolution(u=u, strain_qp=strain_qp, strain=strain, solve_stats=stats)

    def solve_adjoint(self, state: StateSolution) -> StateSolution:
        """ Adjoint of the mechanism objective with the operator of the last
        forward solve: K v = -f_out
        """
        if self.stiffness is None:
            raise RuntimeError("solve_adjoint requires a preceding forward solve")
        x, stats = self._solve(self.adjoint_load)
        v = x.reshape(-1, self.mesh.dim)
        strain_qp, strain = self.strains(v)
        stats = {f"adjoint_{k}": val for k, val in stats.items()}
        return dataclasses.replace(state,
                                   v=v,
                                   adjoint_strain_qp=strain_qp,
                                   adjoint_strain=strain,
                                   solve_stats={**state.solve_stats, **stats})

    def without_springs(self) -> "ElasticitySolver":
        """ Same problem with every port spring removed, loads kept
        """
        bcs = [
            dataclasses.replace(bc, stiffness=np.zeros_like(bc.stiffness))
            if isinstance(bc, SpringBC) else bc for bc in self.bcs
        ]
        return ElasticitySolver(self.mesh,
                                self.catalog,
                                bcs,
                                linear_solver=self.linear_solver,
                                rtol=self.rtol,
                                max_iterations=self.max_iterations)


def assemble_and_solve_state(mesh: Mesh,
                             catalog: MaterialCatalog,
                             fractions: PhaseFractions,
                             bcs: Sequence[BoundaryCondition],
                             **kwargs) -> StateSolution:
    return ElasticitySolver(mesh, catalog, bcs, **kwargs).solve_state(fractions)


def solve_adjoint(mesh: Mesh,
                  catalog: MaterialCatalog,
                  fractions: PhaseFractions,
                  bcs: Sequence[BoundaryCondition],
                  **kwargs) -> StateSolution:
    solver = ElasticitySolver(mesh, catalog, bcs, **kwargs)
    return solver.solve_adjoint(solver.solve_state(fractions))


def resolve_without_springs(mesh: Mesh,
                            catalog: MaterialCatalog,
                            fractions: PhaseFractions,
                            bcs: Sequence[BoundaryCondition],
                            **kwargs) -> StateSolution:
    return ElasticitySolver(mesh, catalog, bcs,
                            **kwargs).without_springs().solve_state(fractions)


def mean_compliance(mesh: Mesh, state: StateSolution,
                    tractions: Union[TractionBC, Sequence[TractionBC]]) -> float:
    """ J1 = integral of t.u over the loaded facets
    """
    if isinstance(tractions, TractionBC):
        tractions = [tractions]
    u = state.u.ravel()
    return float(sum(facet_load(mesh, bc.tag, bc.traction) @ u for bc in tractions))


def mechanism_objective(mesh: Mesh, state: StateSolution,
                        output: Union[SpringBC, TractionBC]) -> float:
    """ J2 = -integral of t_out.u over the output port, negative when the
    port moves along t_out
    """
    return -float(facet_load(mesh, output.tag, output.traction) @ state.u.ravel())


def _as_3d(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.shape[-1] == 3:
        return points
    pad = [(0, 0)] * (points.ndim - 1) + [(0, 3 - points.shape[-1])]
    return np.pad(points, pad)


def inertia_lever(points: np.ndarray, axis_point: Sequence[float],
                  axis_direction: Sequence[float]) -> np.ndarray:
    """ ||x - n_C||^2 - (x.n)^2 at every point, points of a 2D mesh lying in z = 0
    """
    n = np.asarray(axis_direction, dtype=np.float64)
    if n.shape != (3, ) or abs(np.linalg.norm(n) - 1.) > 1e-9:
        raise ValueError(f"Expected a 3D unit axis direction, got {axis_direction}")
    x = _as_3d(points)
    offset = x - _as_3d(axis_point)
    return np.einsum("...k,...k->...", offset, offset) - (x @ n)**2


def moment_of_inertia(mesh: Mesh, fractions: PhaseFractions,
                      catalog: MaterialCatalog, axis_point: Sequence[float],
                      axis_direction: Sequence[float]) -> float:
    """ J_I = integral of {||x - n_C||^2 - (x.n)^2} sum_m rho_m psi_m
    """
    lever = inertia_lever(mesh.quadrature_points, axis_point, axis_direction)
    rho = np.einsum("m,meq->eq", catalog.densities, fractions.values)
    return float(mesh.integrate(lever * rho))


def deformed_points(mesh: Mesh, u: np.ndarray, factor: float) -> np.ndarray:
    return mesh.node_coords + factor * u
