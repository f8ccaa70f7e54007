#
# For licensing see accompanying LICENSE.md file.
# Copyright (C) 2022 Apple Inc. All Rights Reserved.
#

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import logging

logging.basicConfig()
logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

import numpy as np
import os
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from python_xls_topopt.mesh import Mesh
from python_xls_topopt.multiphase import (
    PhaseFractions,
    XlsField,
    clamp_side_constraint,
)
from python_xls_topopt.sensitivity import SensitivityField

DEFAULT_TIME_STEP = 1.
DEFAULT_TAU = 1e-3
C_FLOOR_RATIO = 1e-12

NUM_THREADS_ENV = "XLS_TOPOPT_NUM_THREADS"


def num_threads() -> int:
    value = os.getenv(NUM_THREADS_ENV, "1")
    try:
        n = int(value)
    except ValueError:
        raise ValueError(f"Expected an integer in {NUM_THREADS_ENV}, got {value!r}")
    if n < 1:
        raise ValueError(f"Expected {NUM_THREADS_ENV} >= 1, got {n}")
    return n


@dataclass(frozen=True)
class PidGains:
    kp: float = 2.
    kip: float = 1.
    kd: float = 0.1
    kid: float = 0.


@dataclass
class PidState:
    """ Integral accumulators g_I and the previous constraint values, one
    entry per constraint. `previous=None` before the first update, standing
    for g(-dt) = g(0)
    """
    integral: np.ndarray
    previous: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, n_constraints: int):
        return cls(integral=np.zeros(n_constraints))


def pid_multipliers(g: Sequence[float],
                    state: PidState,
                    gains,
                    dt: float = DEFAULT_TIME_STEP) -> Tuple[np.ndarray, PidState]:
    """ lambda = max(K_P g, 0) + g_I + K_D g_D with
    g_I = max(g_I + (K_IP g + K_ID g_D) dt, 0) and g_D = g - g_prev.
    `gains` is one PidGains shared by all constraints or one per constraint
    """
    if not dt > 0:
        raise ValueError(f"Expected a positive time step, got {dt}")
    g = np.atleast_1d(np.asarray(g, dtype=np.float64))
    if isinstance(gains, PidGains):
        gains = [gains] * len(g)
    if len(gains) != len(g):
        raise ValueError(f"Expected {len(g)} gain sets, got {len(gains)}")
    kp, kip, kd, kid = (np.array([getattr(x, name) for x in gains])
                        for name in ("kp", "kip", "kd", "kid"))

    previous = g if state.previous is None else state.previous
    g_d = g - previous
    integral = np.maximum(state.integral + (kip * g + kid * g_d) * dt, 0.)
    multipliers = np.maximum(kp * g, 0.) + integral + kd * g_d
    return multipliers, PidState(integral=integral, previous=g.copy())


def _symmetric(array, name, n_phases, trailing=()):
    array = np.asarray(array, dtype=np.float64)
    expected = (n_phases, n_phases) + tuple(trailing)
    if array.shape != expected:
        raise ValueError(f"Expected {name} of shape {expected}, got {array.shape}")
    if not np.array_equal(array, array.swapaxes(0, 1)):
        raise ValueError(f"Expected {name} to be symmetric in the phase pair")
    return array


def _off_diagonal(array):
    M = array.shape[0]
    return array[~np.eye(M, dtype=bool)]


@dataclass(frozen=True, eq=False)
class EvolutionParams:
    """ Reaction-diffusion settings. Pair-indexed arrays are symmetric in
    (i, j); the diagonal is ignored
    """
    tau: np.ndarray
    anisotropy: np.ndarray
    piecewise_anisotropy: Optional[np.ndarray] = None
    ucss_normalization: Optional[np.ndarray] = None
    dt: float = DEFAULT_TIME_STEP
    gains: PidGains = field(default_factory=PidGains)
    constraint_gains: Dict[int, PidGains] = field(default_factory=dict)
    c_all_ordered_pairs: bool = True

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=np.float64)
        M = tau.shape[0]
        tau = _symmetric(tau, "tau", M)
        if not (_off_diagonal(tau) > 0).all():
            raise ValueError("Expected positive regularization parameters tau")

        dim = np.asarray(self.anisotropy).shape[-1]
        anisotropy = _symmetric(self.anisotropy, "anisotropy", M, (dim, ))
        if not (_off_diagonal(anisotropy) >= 1.).all():
            raise ValueError("Expected anisotropic regularization factors >= 1")

        piecewise = self.piecewise_anisotropy
        if piecewise is not None:
            piecewise = _symmetric(piecewise, "piecewise_anisotropy", M, (dim, ))
            if not (_off_diagonal(piecewise) >= 0.).all():
                raise ValueError("Expected nonnegative piecewise regularization factors")

        ucss = self.ucss_normalization
        ucss = np.ones((M, M)) if ucss is None else _symmetric(ucss, "ucss_normalization", M)
        if not (_off_diagonal(ucss) > 0).all():
            raise ValueError("Expected positive normalization coefficients K_ucss")

        if not self.dt > 0:
            raise ValueError(f"Expected a positive time step, got {self.dt}")

        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "anisotropy", anisotropy)
        object.__setattr__(self, "piecewise_anisotropy", piecewise)
        object.__setattr__(self, "ucss_normalization", ucss)

    @classmethod
    def uniform(cls, n_phases: int, dim: int, tau: float = DEFAULT_TAU, **kwargs):
        return cls(tau=np.full((n_phases, n_phases), float(tau)),
                   anisotropy=np.ones((n_phases, n_phases, dim)),
                   **kwargs)

    @property
    def n_phases(self):
        return self.tau.shape[0]

    @property
    def dim(self):
        return self.anisotropy.shape[-1]

    def gains_for(self, phases: Sequence[int]) -> List[PidGains]:
        return [self.constraint_gains.get(m, self.gains) for m in phases]


class Normalization(NamedTuple):
    coefficients: np.ndarray
    c_all: float
    floor: float


def normalization_coeffs(sens: SensitivityField,
                         mesh: Mesh,
                         ordered_pairs: bool = True) -> Normalization:
    """ C_ij = mean of |D_ij J| over the domain (symmetric), floored at
    1e-12 max C, and C_ALL summed over ordered (default) or unordered pairs
    """
    weights = mesh.nodal_volumes
    raw = np.abs(sens.values) @ weights / weights.sum()
    peak = raw.max()
    floor = C_FLOOR_RATIO * peak if peak > 0 else np.finfo(np.float64).tiny
    per_pair = np.maximum(raw, floor)

    M = sens.n_phases
    coefficients = np.zeros((M, M))
    for row, (i, j) in enumerate(sens.pairs):
        coefficients[i, j] = coefficients[j, i] = per_pair[row]
    c_all = float(per_pair.sum() * (2. if ordered_pairs else 1.))
    return Normalization(coefficients, c_all, float(floor))


def assemble_source(sens_J: SensitivityField,
                    sens_g: Sequence[SensitivityField],
                    multipliers: Sequence[float],
                    coefficients: np.ndarray,
                    c_all: float,
                    ucss: Optional[np.ndarray] = None) -> SensitivityField:
    """ (-D_ij J - C_ALL sum_k lambda_k D_ij g_k) / C_ij x K_ucss_ij per stored pair
    """
    assert len(sens_g) == len(multipliers), \
        f"Got {len(sens_g)} constraint sensitivities for {len(multipliers)} multipliers"
    M = sens_J.n_phases
    ucss = np.ones((M, M)) if ucss is None else ucss
    constraint = np.zeros_like(sens_J.values)
    for lam, s in zip(multipliers, sens_g):
        constraint += lam * s.values

    source = SensitivityField.zeros(M, sens_J.point_shape)
    for row, (i, j) in enumerate(source.pairs):
        source.values[row] = (-sens_J.values[row] - c_all * constraint[row]
                              ) / coefficients[i, j] * ucss[i, j]
    return source


class DiffusionOperator:
    """ Lumped mass and per-axis stiffness of the nodal Laplacian on a mesh
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        dNdx = mesh.shape_gradients
        w = mesh.quadrature_weights
        # kernels[q, k] = w_q dN_a/dx_k dN_b/dx_k
        self.kernels = np.einsum("qak,qbk,q->qkab", dNdx, dNdx, w)
        nn = mesh.nodes_per_element
        self._rows = np.repeat(mesh.elements, nn, axis=1).ravel()
        self._cols = np.tile(mesh.elements, (1, nn)).ravel()
        self.mass = mesh.nodal_volumes

    def stiffness(self, factors: np.ndarray) -> sp.csr_matrix:
        """ sum_k factors_k int dN/dx_k dN/dx_k. `factors` has shape (dim,) or
        (dim, n_el, n_quad) for spatially varying factors
        """
        mesh = self.mesh
        factors = np.asarray(factors, dtype=np.float64)
        if factors.ndim == 1:
            Ke = np.einsum("k,qkab->ab", factors, self.kernels)
            Ke = np.broadcast_to(Ke, (mesh.n_elements, ) + Ke.shape)
        else:
            Ke = np.einsum("keq,qkab->eab", factors, self.kernels)
        return sp.coo_matrix((Ke.ravel(), (self._rows, self._cols)),
                             shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()


class ReactionDiffusion:
    """ Implicit reaction-diffusion update of every stored level-set function:

        (M + dt tau L^2 K_aniso) phi_new = M (phi + dt source)

    with phi_ij = -1 on nodes where phase i is specified, +1 where phase j is,
    homogeneous Neumann elsewhere. Factorizations are cached per pair while the
    operator does not depend on the fractions
    """

    def __init__(self,
                 mesh: Mesh,
                 params: EvolutionParams,
                 dirichlet: Optional[Dict[int, np.ndarray]] = None,
                 threads: Optional[int] = None):
        if params.dim != mesh.dim:
            raise ValueError(
                f"Expected {mesh.dim}-axis anisotropy factors, got {params.dim}")
        self.mesh = mesh
        self.params = params
        self.dirichlet = {m: np.asarray(n, dtype=int) for m, n in (dirichlet or {}).items()}
        self.threads = threads or num_threads()
        self.operator = DiffusionOperator(mesh)
        self._cache = {}

    def pair_dirichlet(self, i: int, j: int):
        """ Dirichlet nodes and values of phi_ij for an ordered pair
        """
        lo = self.dirichlet.get(i, np.empty(0, dtype=int))
        hi = self.dirichlet.get(j, np.empty(0, dtype=int))
        nodes = np.concatenate([lo, hi])
        values = np.concatenate([-np.ones(len(lo)), np.ones(len(hi))])
        order = np.argsort(nodes, kind="stable")
        return nodes[order], values[order]

    def _axis_factors(self, i, j, fractions: Optional[PhaseFractions]):
        piecewise = self.params.piecewise_anisotropy
        if piecewise is None:
            return self.params.anisotropy[i, j]
        if fractions is None:
            raise ValueError("Piecewise anisotropy requires quadrature-point fractions")
        presence = fractions[i] + fractions[j]
        return 1. + piecewise[i, j][:, None, None] * presence[None]

    def _system(self, i, j, fractions):
        p = self.params
        K = self.operator.stiffness(self._axis_factors(i, j, fractions))
        L = self.mesh.char_length
        return (sp.diags(self.operator.mass) + p.dt * p.tau[i, j] * L**2 * K).tocsr()

    def _factorization(self, i, j, fractions):
        key = (i, j)
        if self.params.piecewise_anisotropy is None and key in self._cache:
            return self._cache[key]

        A = self._system(i, j, fractions)
        nodes, values = self.pair_dirichlet(i, j)
        free = np.setdiff1d(np.arange(self.mesh.n_nodes), nodes)
        A_free = A[free][:, free].tocsc()
        coupling = A[free][:, nodes]
        try:
            lu = spla.splu(A_free)
        except RuntimeError as e:
            raise RuntimeError(
                f"Diffusion system of pair ({i}, {j}) is singular: {e}") from e
        entry = (lu, free, nodes, values, coupling)
        if self.params.piecewise_anisotropy is None:
            self._cache[key] = entry
        return entry

    def diffuse_pair(self,
                     i: int,
                     j: int,
                     phi: np.ndarray,
                     source: np.ndarray,
                     fractions: Optional[PhaseFractions] = None) -> np.ndarray:
        """ One implicit step of phi_ij for an ordered pair, before clamping
        """
        lu, free, nodes, values, coupling = self._factorization(i, j, fractions)
        mass = self.operator.mass
        rhs = mass * (phi + self.params.dt * source)
        out = np.empty_like(phi)
        out[nodes] = values
        out[free] = lu.solve(rhs[free] - coupling @ values)
        return out

    def step(self,
             xls: XlsField,
             source: SensitivityField,
             fractions: Optional[PhaseFractions] = None) -> XlsField:
        assert xls.n_phases == self.params.n_phases, \
            f"Expected {self.params.n_phases} phases, got {xls.n_phases}"
        assert source.values.shape == xls.values.shape, \
            f"Source shape {source.values.shape} does not match field shape {xls.values.shape}"

        def solve(row_pair):
            row, (i, j) = row_pair
            return self.diffuse_pair(i, j, xls.values[row], source.values[row], fractions)

        rows = list(enumerate(xls.pairs))
        if self.threads > 1 and len(rows) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                updated = list(pool.map(solve, rows))
        else:
            updated = [solve(r) for r in rows]
        return clamp_side_constraint(XlsField(xls.n_phases, np.stack(updated)))


def rde_step(xls: XlsField,
             source: SensitivityField,
             params: EvolutionParams,
             mesh: Mesh,
             fractions: Optional[PhaseFractions] = None,
             lsf_bcs: Optional[Dict[int, np.ndarray]] = None) -> XlsField:
    """ Stateless form of `ReactionDiffusion.step`. `lsf_bcs` maps a phase to
    the nodes where it is specified
    """
    return ReactionDiffusion(mesh, params, dirichlet=lsf_bcs).step(xls, source, fractions)
