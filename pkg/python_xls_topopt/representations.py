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
from typing import Dict, List, Optional, Sequence, Tuple

from python_xls_topopt.multiphase import (
    XlsField,
    characteristic_exact,
    clamp_side_constraint,
    heaviside,
    pair_list,
)

# Nodes whose legacy functions lie this close to a zero crossing are not compared
ZERO_CROSSING_BAND = 1e-9

# Largest admissible distance of a PCLS value from an integer phase index
PCLS_TOLERANCE = 0.25

# Boundary normals n_01, n_02, n_12 of the three-phase vector-valued representation
VVLS_DEFAULT_NORMALS = np.array([[-1., 0.], [0., -1.], [1., -1.]])


class UnsupportedRepresentationError(NotImplementedError):
    pass


class InvalidRepresentationError(ValueError):
    pass


class LegacyKind(Enum):
    COLOR = "color"
    PIECEWISE_CONSTANT = "piecewise-constant"
    MULTI_MATERIAL = "multi-material"
    VECTOR_VALUED = "vector-valued"


@dataclass(frozen=True, eq=False)
class LegacyRepresentation:
    """ Nodal fields of a multi-phase level-set method that predates X-LS.

    `fields` has shape (n_functions, n_nodes):
        COLOR: 2 functions for 4 phases
        PIECEWISE_CONSTANT: 1 integer-valued function
        MULTI_MATERIAL: M - 1 functions, phase 0 cut first
        VECTOR_VALUED: M - 1 vector components, with one boundary normal per
            pair i < j in `normals` (n_ji = -n_ij)
    """
    kind: LegacyKind
    fields: np.ndarray
    n_phases: int
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        fields = np.atleast_2d(np.asarray(self.fields, dtype=np.float64))
        object.__setattr__(self, "fields", fields)
        M = self.n_phases
        expected = {
            LegacyKind.COLOR: 2,
            LegacyKind.PIECEWISE_CONSTANT: 1,
            LegacyKind.MULTI_MATERIAL: M - 1,
            LegacyKind.VECTOR_VALUED: M - 1,
        }[self.kind]

        if self.kind is LegacyKind.COLOR and M != 4:
            raise UnsupportedRepresentationError(
                f"Color level sets are supported for 4 phases (2 functions), got {M} phases")
        if self.kind is LegacyKind.VECTOR_VALUED and M != 3:
            raise UnsupportedRepresentationError(
                f"Vector-valued level sets are supported for 3 phases, got {M} phases")
        if M < 2:
            raise InvalidRepresentationError(f"Expected at least 2 phases, got {M}")
        if fields.shape[0] != expected:
            raise InvalidRepresentationError(
                f"Expected {expected} legacy functions for {self.kind.value} with {M} phases, "
                f"got {fields.shape[0]}")

        if self.kind is LegacyKind.PIECEWISE_CONSTANT:
            p = fields[0]
            nearest = np.clip(np.rint(p), 0, M - 1)
            off = np.abs(p - nearest)
            if (off > PCLS_TOLERANCE).any():
                node = int(np.argmax(off))
                raise InvalidRepresentationError(
                    f"Expected piecewise-constant values in {{0..{M - 1}}} within "
                    f"{PCLS_TOLERANCE}, got {p[node]} at node {node}")

        if self.kind is LegacyKind.VECTOR_VALUED:
            normals = VVLS_DEFAULT_NORMALS if self.normals is None else np.asarray(
                self.normals, dtype=np.float64)
            shape = (len(pair_list(M)), M - 1)
            if normals.shape != shape:
                raise InvalidRepresentationError(
                    f"Expected boundary normals of shape {shape}, got {normals.shape}")
            object.__setattr__(self, "normals", normals)
        elif self.normals is not None:
            raise InvalidRepresentationError(
                f"Boundary normals only apply to vector-valued level sets, not {self.kind.value}")

    @property
    def n_nodes(self):
        return self.fields.shape[1]

    def normal(self, i: int, j: int) -> np.ndarray:
        assert i != j, "Normals are defined between distinct phases"
        if i > j:
            return -self.normal(j, i)
        return self.normals[pair_list(self.n_phases).index((i, j))]


@dataclass
class EquivalenceReport:
    checked: int
    skipped: int
    mismatches: List[Tuple[int, int, int]] = field(default_factory=list)

    @property
    def ok(self):
        return len(self.mismatches) == 0


def _legacy_characteristics(rep: LegacyRepresentation) -> np.ndarray:
    """ Characteristic functions psi_m (M, n_nodes) in the legacy method's own terms
    """
    H = heaviside
    f = rep.fields
    M = rep.n_phases

    if rep.kind is LegacyKind.COLOR:
        h0, h1 = H(f[0]), H(f[1])
        return np.stack([h0 * h1, h0 * (1. - h1), (1. - h0) * h1, (1. - h0) * (1. - h1)])

    if rep.kind is LegacyKind.PIECEWISE_CONSTANT:
        p = f[0]
        return np.stack([H(p + 0.5 - k) * (1. - H(p - 0.5 - k)) for k in range(M)])

    if rep.kind is LegacyKind.MULTI_MATERIAL:
        psi = []
        cut = np.ones(rep.n_nodes)
        for k in range(M - 1):
            psi.append((1. - H(f[k])) * cut)
            cut = cut * H(f[k])
        psi.append(cut)
        return np.stack(psi)

    # Phase i occupies the subregion where n_ji . phi > 0 for every j != i
    psi = []
    for i in range(M):
        inside = np.ones(rep.n_nodes)
        for j in range(M):
            if j != i:
                inside = inside * H(rep.normal(j, i) @ f)
        psi.append(inside)
    return np.stack(psi)


def _single_phase(psi: np.ndarray) -> np.ndarray:
    assignment = np.argmax(psi, axis=0)
    return np.where(np.isclose(psi.sum(axis=0), 1.) & (psi.max(axis=0) == 1.), assignment, -1)


def legacy_assignment(rep: LegacyRepresentation) -> np.ndarray:
    """ Phase selected by the legacy method at every node, -1 where its
    characteristic functions do not select exactly one phase
    """
    return _single_phase(_legacy_characteristics(rep))


def xls_assignment(xls: XlsField) -> np.ndarray:
    return _single_phase(characteristic_exact(xls).values)


def to_xls(rep: LegacyRepresentation, rescale: bool = True) -> XlsField:
    """ X-LS field constrained to reproduce a legacy representation.

    With `rescale`, every pair is divided by its largest magnitude when that
    exceeds 1 before clamping, so signs (hence phases) are untouched
    """
    M = rep.n_phases
    f = rep.fields
    xls = XlsField.zeros(M, rep.n_nodes)

    if rep.kind is LegacyKind.COLOR:
        for i, j in ((0, 2), (1, 3), (1, 2)):
            xls.set(i, j, -f[0])
        for i, j in ((0, 1), (2, 3), (0, 3)):
            xls.set(i, j, -f[1])
    elif rep.kind is LegacyKind.PIECEWISE_CONSTANT:
        for i, j in xls.pairs:
            xls.set(i, j, f[0] - 0.5 - i)
    elif rep.kind is LegacyKind.MULTI_MATERIAL:
        for i, j in xls.pairs:
            xls.set(i, j, f[i])
    else:
        for i, j in xls.pairs:
            xls.set(i, j, rep.normal(i, j) @ f)

    full = xls.full()
    assert np.array_equal(full, -full.swapaxes(0, 1)), "Converted field is not antisymmetric"

    if not rescale:
        return xls
    peak = np.abs(xls.values).max(axis=1, keepdims=True)
    scale = np.where(peak > 1., peak, 1.)
    return clamp_side_constraint(XlsField(M, xls.values / scale))


def _near_zero_crossing(rep: LegacyRepresentation, band: float) -> np.ndarray:
    f = rep.fields
    if rep.kind is LegacyKind.PIECEWISE_CONSTANT:
        half = f[0] - 0.5
        return np.abs(half - np.rint(half)) < band
    if rep.kind is LegacyKind.VECTOR_VALUED:
        projections = np.stack([rep.normal(i, j) @ f for i, j in pair_list(rep.n_phases)])
        return (np.abs(projections) < band).any(axis=0)
    return (np.abs(f) < band).any(axis=0)


def verify_equivalence(rep: LegacyRepresentation,
                       converted: XlsField,
                       samples: Optional[Sequence[int]] = None,
                       band: float = ZERO_CROSSING_BAND) -> EquivalenceReport:
    """ Compare the legacy and X-LS phase assignments on sample nodes (all
    nodes by default), skipping nodes within `band` of a zero crossing
    """
    assert converted.point_shape == (rep.n_nodes, ), \
        f"Expected a field on {rep.n_nodes} nodes, got {converted.point_shape}"
    nodes = np.arange(rep.n_nodes) if samples is None else np.asarray(samples, dtype=int)
    skip = _near_zero_crossing(rep, band)[nodes]
    nodes = nodes[~skip]

    legacy = legacy_assignment(rep)[nodes]
    xls = xls_assignment(converted)[nodes]
    bad = np.flatnonzero(legacy != xls)
    report = EquivalenceReport(
        checked=len(nodes),
        skipped=int(skip.sum()),
        mismatches=[(int(nodes[k]), int(legacy[k]), int(xls[k])) for k in bad])
    if not report.ok:
        logger.warning(
            f"{len(report.mismatches)} of {report.checked} nodes disagree between "
            f"{rep.kind.value} and X-LS, first: {report.mismatches[0]}")
    return report


def random_representation(kind: LegacyKind,
                          n_phases: int,
                          n_nodes: int,
                          rng: np.random.Generator) -> LegacyRepresentation:
    """ Random legacy fields for equivalence sampling
    """
    if kind is LegacyKind.PIECEWISE_CONSTANT:
        values = rng.integers(0, n_phases, n_nodes) + rng.uniform(-0.2, 0.2, n_nodes)
        return LegacyRepresentation(kind, values[None], n_phases)
    count = 2 if kind is LegacyKind.COLOR else n_phases - 1
    return LegacyRepresentation(kind, rng.uniform(-1., 1., (count, n_nodes)), n_phases)


def from_point_data(kind: LegacyKind,
                    point_data: Dict[str, np.ndarray],
                    n_phases: int,
                    normals: Optional[np.ndarray] = None) -> LegacyRepresentation:
    """ Gather the arrays `legacy_0`, `legacy_1`, ... of a field snapshot
    """
    names = sorted((k for k in point_data if k.startswith("legacy_")),
                   key=lambda k: int(k.split("_")[1]))
    if not names:
        raise InvalidRepresentationError(
            f"Expected point data arrays legacy_0, legacy_1, ..., got {sorted(point_data)}")
    fields = np.stack([np.asarray(point_data[k], dtype=np.float64).ravel() for k in names])
    return LegacyRepresentation(kind, fields, n_phases, normals)
