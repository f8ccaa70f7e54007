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
from typing import List, Optional, Sequence, Tuple

from python_xls_topopt.mesh import Mesh, Region

# Default smoothing of the approximated characteristic functions
DEFAULT_TRANSITION_WIDTH = 0.2
DEFAULT_STABILIZER = 1e-6


def pair_list(n_phases: int) -> List[Tuple[int, int]]:
    """ Unordered phase pairs (i, j), i < j, in storage order
    """
    return [(i, j) for i in range(n_phases) for j in range(i + 1, n_phases)]


def pair_index(i: int, j: int, n_phases: int) -> int:
    """ Storage row of the unordered pair {i, j}, i != j
    """
    assert i != j and 0 <= i < n_phases and 0 <= j < n_phases, \
        f"Invalid pair ({i}, {j}) for {n_phases} phases"
    i, j = min(i, j), max(i, j)
    return i * n_phases - i * (i + 1) // 2 + (j - i - 1)


class PairField:
    """ Antisymmetric per-pair field: f_ij is stored for i < j only, reads of
    f_ji return -f_ij and reads of f_ii return zeros
    """

    def __init__(self, n_phases: int, values: np.ndarray):
        if n_phases < 2:
            raise ValueError(f"Expected at least 2 phases, got {n_phases}")
        values = np.asarray(values, dtype=np.float64)
        n_pairs = n_phases * (n_phases - 1) // 2
        if values.ndim < 2 or values.shape[0] != n_pairs:
            raise ValueError(
                f"Expected values of shape ({n_pairs}, n_points), got {values.shape}")
        self.n_phases = n_phases
        self.values = values

    @classmethod
    def zeros(cls, n_phases: int, point_shape):
        n_pairs = n_phases * (n_phases - 1) // 2
        point_shape = (point_shape, ) if np.isscalar(point_shape) else tuple(point_shape)
        return cls(n_phases, np.zeros((n_pairs, ) + point_shape))

    @property
    def pairs(self):
        return pair_list(self.n_phases)

    @property
    def point_shape(self):
        return self.values.shape[1:]

    def get(self, i: int, j: int) -> np.ndarray:
        if i == j:
            return np.zeros(self.point_shape)
        row = self.values[pair_index(i, j, self.n_phases)]
        return row if i < j else -row

    def set(self, i: int, j: int, values: np.ndarray):
        assert i != j, "Diagonal entries are not stored"
        row = pair_index(i, j, self.n_phases)
        self.values[row] = values if i < j else -np.asarray(values)

    def full(self) -> np.ndarray:
        """ Materialize all M x M entries, shape (M, M, *points)
        """
        M = self.n_phases
        out = np.zeros((M, M) + self.point_shape)
        for row, (i, j) in enumerate(self.pairs):
            out[i, j] = self.values[row]
            out[j, i] = -self.values[row]
        return out

    def copy(self):
        return type(self)(self.n_phases, self.values.copy())

    def __repr__(self):
        return f"{type(self).__name__}(n_phases={self.n_phases}, point_shape={self.point_shape})"


class XlsField(PairField):
    """ Extended level set: one level-set function per phase pair, the zero
    isosurface of phi_ij being the i-j interface (phi_ij > 0 on the j side)
    """

    def at_quadrature(self, mesh: Mesh) -> "XlsField":
        assert self.point_shape == (mesh.n_nodes, ), \
            f"Expected nodal values on {mesh.n_nodes} nodes, got {self.point_shape}"
        return XlsField(self.n_phases, mesh.interpolate(self.values))


@dataclass(frozen=True)
class SmoothingParams:
    width: float = DEFAULT_TRANSITION_WIDTH
    epsilon: float = DEFAULT_STABILIZER

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError(f"Expected a positive transition width, got {self.width}")
        if not self.epsilon > 0:
            raise ValueError(f"Expected a positive stabilizer, got {self.epsilon}")


@dataclass
class PhaseFractions:
    """ Per-point phase fractions, `values` has shape (M, *points)
    """
    values: np.ndarray

    @property
    def n_phases(self):
        return self.values.shape[0]

    def __getitem__(self, m):
        return self.values[m]

    def assignment(self) -> np.ndarray:
        """ Dominant phase per point, lowest index on ties
        """
        return np.argmax(self.values, axis=0)

    def sums(self) -> np.ndarray:
        return self.values.sum(axis=0)


def heaviside(s):
    """ Sharp Heaviside with H(0) = 1
    """
    return (np.asarray(s) >= 0.).astype(np.float64)


def smoothed_heaviside(s):
    """ Quintic C1 step, 0 below -1 and 1 above 1
    """
    t = np.clip(np.asarray(s, dtype=np.float64), -1., 1.)
    return 0.5 + t * (15. / 16. - t * t * (5. / 8. - 3. / 16. * t * t))


def characteristic_exact(xls: XlsField) -> PhaseFractions:
    # phi_mm = 0 and H(0) = 1, so the diagonal factor drops out of the product
    return PhaseFractions(np.prod(heaviside(xls.full()), axis=0))


def appearance_priority(xls: XlsField) -> np.ndarray:
    """ psi~_m = prod_i (phi_im + 1) / 2, including the diagonal factor 1/2
    """
    return np.prod(0.5 * (xls.full() + 1.), axis=0)


def _priority_differences(xls: XlsField) -> np.ndarray:
    # d[i, m] = psi~_m - psi~_i
    priority = appearance_priority(xls)
    return priority[None, :] - priority[:, None]


def approx_characteristic(xls: XlsField) -> PhaseFractions:
    priority = appearance_priority(xls)
    winner = np.argmax(priority, axis=0)
    values = np.zeros_like(priority)
    np.put_along_axis(values, winner[None], 1., axis=0)
    return PhaseFractions(values)


def ersatz_fractions(xls: XlsField,
                     p: Optional[SmoothingParams] = None) -> PhaseFractions:
    p = p or SmoothingParams()
    steps = smoothed_heaviside(_priority_differences(xls) / p.width)
    M = xls.n_phases
    diagonal = np.eye(M, dtype=bool).reshape((M, M) + (1, ) * len(xls.point_shape))
    steps = np.where(diagonal, 1., steps)
    numerators = p.epsilon + np.prod(steps, axis=0)
    return PhaseFractions(numerators / numerators.sum(axis=0, keepdims=True))


def phase_assignment(xls: XlsField) -> np.ndarray:
    return np.argmax(appearance_priority(xls), axis=0)


def clamp_side_constraint(xls: XlsField) -> XlsField:
    return XlsField(xls.n_phases, np.clip(xls.values, -1., 1.))


def assigned_field(n_phases: int, phases: np.ndarray) -> XlsField:
    """ X-LS field that assigns `phases[n]` at every point n: phi_im = +1 for
    the assigned phase m and every i != m, 0 on pairs that do not involve m
    """
    phases = np.asarray(phases)
    xls = XlsField.zeros(n_phases, phases.shape)
    for row, (i, j) in enumerate(xls.pairs):
        xls.values[row] = np.where(phases == j, 1., np.where(phases == i, -1., 0.))
    return xls


def initial_field(mesh: Mesh,
                  n_phases: int,
                  background: Optional[int] = None,
                  regions: Sequence[Tuple[Region, int]] = ()) -> XlsField:
    """ Starting configuration: all zeros (every phase equally likely), or a
    background phase overwritten box by box
    """
    if background is None and not regions:
        return XlsField.zeros(n_phases, mesh.n_nodes)

    phases = np.full(mesh.n_nodes, -1 if background is None else background)
    for region, m in regions:
        if not 0 <= m < n_phases:
            raise ValueError(f"Expected an initial phase below {n_phases}, got {m}")
        phases[region.contains(mesh.node_coords, mesh.tolerance)] = m
    return assigned_field(n_phases, phases)
