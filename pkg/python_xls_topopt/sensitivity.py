#
# For licensing see accompanying LICENSE.md file.
# Copyright (C) 2022 Apple Inc. All Rights Reserved.
#

from dataclasses import dataclass

import logging

logging.basicConfig()
logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

import numpy as np
from typing import Dict, Optional, Sequence, Tuple

from python_xls_topopt.elasticity import (
    MaterialCatalog,
    StateSolution,
    inertia_lever,
    tensor_to_voigt,
)
from python_xls_topopt.mesh import Mesh
from python_xls_topopt.multiphase import PairField, PhaseFractions, pair_list

DEGENERACY_THRESHOLD = 1e-14

# Time-directional filter coefficient of the mechanism examples
DEFAULT_FILTER_COEFFICIENT = 0.03


class DegenerateContrastError(ZeroDivisionError):

    def __init__(self, message, pair):
        super().__init__(message)
        self.pair = pair


class SensitivityField(PairField):
    """ Extended topological derivative per phase pair, antisymmetric like the
    level sets it drives
    """
    pass


def identity_tensors(dim: int):
    """ Symmetric identity I, volumetric projector J and deviatoric projector K
    """
    delta = np.eye(dim)
    I = 0.5 * (np.einsum("ik,jl->ijkl", delta, delta) +
               np.einsum("il,jk->ijkl", delta, delta))
    J = np.einsum("ij,kl->ijkl", delta, delta) / dim
    return I, J, I - J


@dataclass(frozen=True, eq=False)
class Emt:
    """ Elastic moment tensor of an inclusion of phase `target` nucleated in
    phase `source`. Positive definite when the inclusion is stiffer
    """
    source: int
    target: int
    tensor: np.ndarray

    @property
    def dim(self):
        return self.tensor.shape[0]

    @property
    def voigt(self):
        return tensor_to_voigt(self.tensor)

    def norm(self):
        return float(np.linalg.norm(self.tensor))

    def major_symmetry_error(self):
        return float(np.abs(self.tensor - self.tensor.transpose(2, 3, 0, 1)).max())

    def minor_symmetry_error(self):
        return float(max(
            np.abs(self.tensor - self.tensor.transpose(1, 0, 2, 3)).max(),
            np.abs(self.tensor - self.tensor.transpose(0, 1, 3, 2)).max()))


def _check_denominator(value, name, a, b):
    if abs(value) < DEGENERACY_THRESHOLD:
        raise DegenerateContrastError(
            f"Elastic moment tensor of pair ({a} -> {b}) is degenerate: {name} = {value:.3e}",
            pair=(a, b))


def emt(a: int, b: int, catalog: MaterialCatalog, dim: int) -> Emt:
    """ Elastic moment tensor for phase b nucleating inside phase a. a == b is
    accepted and yields the zero tensor
    """
    ma, mb = catalog[a], catalog[b]
    nu_a, nu_b = ma.poisson_ratio, mb.poisson_ratio
    I, J, K = identity_tensors(dim)

    if dim == 3:
        lam1 = mb.bulk_modulus / ma.bulk_modulus
        lam2 = mb.shear_modulus / ma.shear_modulus
        zeta1 = (1. + nu_a) / (3. * (1. - nu_a))
        zeta2 = (8. - 10. * nu_a) / (15. * (1. - nu_a))
        den1 = 1. + zeta1 * (lam1 - 1.)
        den2 = 1. + zeta2 * (lam2 - 1.)
        _check_denominator(den1, "1 + zeta1 (Lambda1 - 1)", a, b)
        _check_denominator(den2, "1 + zeta2 (Lambda2 - 1)", a, b)
        tensor = 4. * np.pi / 3. * (
            3. * ma.bulk_modulus * (lam1 - 1.) / den1 * J +
            2. * ma.shear_modulus * (lam2 - 1.) / den2 * K)
    elif dim == 2:
        # Plane stress
        E_a = ma.youngs_modulus
        alpha = (1. + nu_a) / (1. - nu_a)
        beta = (3. - nu_a) / (1. + nu_a)
        lam3 = mb.youngs_modulus / E_a
        eta1 = (1. + nu_b) / (1. + nu_a)
        eta2 = (1. - nu_b) / (1. - nu_a)
        den3 = nu_a * (3. * nu_a - 4.) + 1.
        _check_denominator(den3, "nu_a (3 nu_a - 4) + 1", a, b)
        eta3 = (nu_b * (3. * nu_a - 4.) + 1.) / den3
        den1 = beta * lam3 + eta1
        den2 = alpha * lam3 + eta2
        _check_denominator(den1, "beta Lambda3 + eta1", a, b)
        _check_denominator(den2, "alpha Lambda3 + eta2", a, b)
        inner = ((1. + beta) * (eta1 - lam3) * I + (alpha - beta) *
                 (lam3 * (lam3 - 2. * eta3) + eta1 * eta2) / den2 * J)
        host = E_a / (1. + nu_a) * I + 2. * E_a * nu_a / (1. - nu_a**2) * J
        tensor = -1. / den1 * np.einsum("ijpq,pqkl->ijkl", inner, host)
    else:
        raise ValueError(f"Expected dim 2 or 3, got {dim}")

    return Emt(source=a, target=b, tensor=tensor)


def emt_table(catalog: MaterialCatalog, dim: int) -> Dict[Tuple[int, int], Emt]:
    """ Elastic moment tensors of every ordered pair of distinct phases
    """
    M = catalog.n_phases
    return {(a, b): emt(a, b, catalog, dim)
            for a in range(M) for b in range(M) if a != b}


def inclusion_scale(dim: int, radius: float) -> float:
    """ Measure V(eps) with Delta J ~ V(eps) D^T J for a small disk (ball) of
    radius eps, matching the normalization of `emt`
    """
    if dim == 2:
        return 2. * np.pi * radius**2
    if dim == 3:
        return 2. * radius**3
    raise ValueError(f"Expected dim 2 or 3, got {dim}")


def _strains(solution: StateSolution, at: str, adjoint: bool = False):
    if at not in ("nodes", "quadrature"):
        raise ValueError(f"Expected at='nodes' or 'quadrature', got {at!r}")
    if adjoint and solution.v is not None:
        return solution.adjoint_strain if at == "nodes" else solution.adjoint_strain_qp
    return solution.strain if at == "nodes" else solution.strain_qp


def td_compliance(u: StateSolution, A: Emt, at: str = "nodes") -> np.ndarray:
    """ D^T J1 = -1/2 e(u):A:e(u)

    Negative when the inclusion phase is stiffer than the host (A positive
    definite), so a stiffer inclusion lowers the compliance. This is the
    opposite sign of the +1/2 e:A:e form sometimes quoted for the same
    tensor. The FE inclusion check in the tests measures the sign.
    """
    e = _strains(u, at)
    return -0.5 * np.einsum("...s,st,...t->...", e, A.voigt, e)


def td_mechanism(u: StateSolution,
                 v: StateSolution,
                 A: Emt,
                 at: str = "nodes") -> np.ndarray:
    """ D^T J2 = -1/2 e(u):A:e(v). `v` contributes its adjoint strains when it
    carries an adjoint solve, its own strains otherwise
    """
    e_u = _strains(u, at)
    e_v = _strains(v, at, adjoint=True)
    return -0.5 * np.einsum("...s,st,...t->...", e_u, A.voigt, e_v)


def xtd_pair(i: int, j: int, td: Dict[Tuple[int, int], np.ndarray],
             fractions: PhaseFractions) -> np.ndarray:
    """ psi_i D^T_{i->j} J - psi_j D^T_{j->i} J for one ordered pair
    """
    return fractions[i] * td[(i, j)] - fractions[j] * td[(j, i)]


def xtd_objective(td: Dict[Tuple[int, int], np.ndarray],
                  fractions: PhaseFractions) -> SensitivityField:
    M = fractions.n_phases
    values = np.stack([
        xtd_pair(i, j, td, fractions)
        for (i, j) in pair_list(M)
    ])
    return SensitivityField(M, values)


def xtd_volume(m: int, fractions: PhaseFractions) -> SensitivityField:
    """ X-TD of the volume of phase m: -delta_im psi_i + delta_jm psi_j
    """
    M = fractions.n_phases
    assert 0 <= m < M, f"Invalid phase {m} for {M} phases"
    field = SensitivityField.zeros(M, fractions.values.shape[1:])
    for row, (i, j) in enumerate(field.pairs):
        if i == m:
            field.values[row] = -fractions[i]
        elif j == m:
            field.values[row] = fractions[j]
    return field


def xtd_inertia(mesh: Mesh, fractions: PhaseFractions,
                catalog: MaterialCatalog, axis_point: Sequence[float],
                axis_direction: Sequence[float]) -> SensitivityField:
    """ Nodal X-TD of the moment of inertia:
    {||x - n_C||^2 - (x.n)^2} (rho_j - rho_i) (psi_i + psi_j)
    """
    lever = inertia_lever(mesh.node_coords, axis_point, axis_direction)
    rho = catalog.densities
    M = fractions.n_phases
    field = SensitivityField.zeros(M, mesh.n_nodes)
    for row, (i, j) in enumerate(field.pairs):
        field.values[row] = lever * (rho[j] - rho[i]) * (fractions[i] + fractions[j])
    return field


def time_filter(prev: Optional[SensitivityField], cur: SensitivityField,
                kt_prime: float = DEFAULT_FILTER_COEFFICIENT) -> SensitivityField:
    """ Time-directional filter (1 - K) prev + K cur; `prev=None` stands for
    the zero history of the first iteration
    """
    if not 0. < kt_prime <= 1.:
        raise ValueError(f"Expected a filter coefficient in (0, 1], got {kt_prime}")
    if prev is None:
        return SensitivityField(cur.n_phases, kt_prime * cur.values)
    return SensitivityField(cur.n_phases,
                            (1. - kt_prime) * prev.values + kt_prime * cur.values)
