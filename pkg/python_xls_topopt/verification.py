#
# For licensing see accompanying LICENSE.md file.
# Copyright (C) 2022 Apple Inc. All Rights Reserved.
#

import logging

logging.basicConfig()
logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

import numpy as np
import time
from typing import Dict, Sequence, Tuple

from python_xls_topopt.elasticity import MaterialCatalog
from python_xls_topopt.multiphase import (
    PhaseFractions,
    XlsField,
    ersatz_fractions,
    pair_list,
)
from python_xls_topopt.representations import (
    LegacyKind,
    random_representation,
    to_xls,
    verify_equivalence,
)
from python_xls_topopt.sensitivity import emt, xtd_pair

EMT_SYMMETRY_TOLERANCE = 1e-9
ZERO_CONTRAST_TOLERANCE = 1e-12
PARTITION_TOLERANCE = 1e-12
ANTISYMMETRY_TOLERANCE = 1e-12

# (kind, number of phases) combinations sampled by the equivalence suite
EQUIVALENCE_CASES: Tuple[Tuple[LegacyKind, int], ...] = (
    (LegacyKind.COLOR, 4),
    (LegacyKind.PIECEWISE_CONSTANT, 3),
    (LegacyKind.PIECEWISE_CONSTANT, 5),
    (LegacyKind.MULTI_MATERIAL, 3),
    (LegacyKind.MULTI_MATERIAL, 4),
    (LegacyKind.VECTOR_VALUED, 3),
)


def report_emt_symmetry(catalog: MaterialCatalog, dim: int) -> float:
    """ Major and minor symmetry of every elastic moment tensor, and zero
    tensors for zero contrast
    """
    worst = 0.
    M = catalog.n_phases
    for a in range(M):
        scale = np.abs(catalog[a].stiffness(dim)).max()
        same = emt(a, a, catalog, dim).norm()
        if same > ZERO_CONTRAST_TOLERANCE * scale:
            raise ValueError(
                f"Zero-contrast tensor of phase {a} has norm {same:.3e} > "
                f"{ZERO_CONTRAST_TOLERANCE} x {scale:.3e}")
        for b in range(M):
            if a == b:
                continue
            A = emt(a, b, catalog, dim)
            error = max(A.major_symmetry_error(), A.minor_symmetry_error()) / max(A.norm(), 1.)
            worst = max(worst, error)
            if error > EMT_SYMMETRY_TOLERANCE:
                raise ValueError(
                    f"Elastic moment tensor ({a} -> {b}) breaks symmetry by {error:.3e}")
    logger.info(
        f"{dim}D elastic moment tensors of {M * (M - 1)} pairs: symmetry error {worst:.2e} "
        f"<= {EMT_SYMMETRY_TOLERANCE} passed")
    return worst


def report_partition_of_unity(rng: np.random.Generator,
                              phase_counts: Sequence[int] = (2, 3, 4, 9),
                              n_points: int = 1000) -> float:
    worst = 0.
    for M in phase_counts:
        xls = XlsField(M, rng.uniform(-1., 1., (len(pair_list(M)), n_points)))
        error = float(np.abs(ersatz_fractions(xls).sums() - 1.).max())
        worst = max(worst, error)
        if error > PARTITION_TOLERANCE:
            raise ValueError(f"Fractions of {M} phases sum to 1 only within {error:.3e}")
    logger.info(f"Partition of unity: error {worst:.2e} <= {PARTITION_TOLERANCE} passed")
    return worst


def report_antisymmetry(rng: np.random.Generator,
                        phase_counts: Sequence[int] = (2, 3, 4),
                        n_points: int = 1000) -> float:
    """ phi_ij = -phi_ji for stored fields and D_ij J = -D_ji J for the
    extended topological derivative
    """
    worst = 0.
    for M in phase_counts:
        xls = XlsField(M, rng.uniform(-1., 1., (len(pair_list(M)), n_points)))
        full = xls.full()
        worst = max(worst, float(np.abs(full + full.swapaxes(0, 1)).max()))

        td = {(a, b): rng.normal(size=n_points) for a in range(M) for b in range(M) if a != b}
        fractions = PhaseFractions(rng.dirichlet(np.ones(M), n_points).T)
        for i, j in pair_list(M):
            error = np.abs(xtd_pair(i, j, td, fractions) + xtd_pair(j, i, td, fractions)).max()
            worst = max(worst, float(error))
    if worst > ANTISYMMETRY_TOLERANCE:
        raise ValueError(f"Antisymmetry violated by {worst:.3e}")
    logger.info(f"Antisymmetry: error {worst:.2e} <= {ANTISYMMETRY_TOLERANCE} passed")
    return worst


def report_legacy_equivalence(rng: np.random.Generator, n_nodes: int = 10_000) -> int:
    """ Random legacy fields of every supported representation against the
    phase assignment of their X-LS conversion
    """
    checked = 0
    for kind, M in EQUIVALENCE_CASES:
        rep = random_representation(kind, M, n_nodes, rng)
        for rescale in (False, True):
            report = verify_equivalence(rep, to_xls(rep, rescale=rescale))
            if not report.ok:
                raise ValueError(
                    f"{kind.value} (M={M}, rescale={rescale}): {len(report.mismatches)} "
                    f"phase-assignment mismatches, first {report.mismatches[0]}")
            checked += report.checked
        logger.info(f"{kind.value} with {M} phases: {report.checked} nodes agree "
                    f"({report.skipped} near zero crossings skipped)")
    return checked


def run_property_suites(seed: int = 0) -> Dict[str, float]:
    rng = np.random.default_rng(seed)
    catalog = MaterialCatalog.from_table()
    start = time.time()
    results = {
        "emt_symmetry_2d": report_emt_symmetry(catalog, 2),
        "emt_symmetry_3d": report_emt_symmetry(catalog, 3),
        "partition_of_unity": report_partition_of_unity(rng),
        "antisymmetry": report_antisymmetry(rng),
        "legacy_equivalence": report_legacy_equivalence(rng),
    }
    logger.info(f"All property suites passed. Took {time.time() - start:.1f} seconds.")
    return results
