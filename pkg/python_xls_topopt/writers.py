#
# For licensing see accompanying LICENSE.md file.
# Copyright (C) 2022 Apple Inc. All Rights Reserved.
#

import csv
import logging

logging.basicConfig()
logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

import meshio
import numpy as np
from PIL import Image
from typing import Dict, Optional, Sequence, Tuple

from python_xls_topopt.elasticity import StateSolution, deformed_points
from python_xls_topopt.mesh import Mesh
from python_xls_topopt.multiphase import (
    PairField,
    PhaseFractions,
    XlsField,
    phase_assignment,
)
from python_xls_topopt.optimizer import RunHistory, element_phases

CELL_TYPES = {2: "quad", 3: "hexahedron"}


def _pad_to_3d(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[1] >= 3:
        return values
    return np.hstack([values, np.zeros((values.shape[0], 3 - values.shape[1]), dtype=values.dtype)])


def write_point_fields(points: np.ndarray,
                       cells: Sequence[Tuple[str, np.ndarray]],
                       fields: Dict[str, np.ndarray],
                       path: str):
    """ Legacy ASCII VTK unstructured grid with one point-data array per field
    """
    point_data = {}
    for name, values in fields.items():
        values = np.asarray(values)
        if values.shape[0] != len(points):
            raise ValueError(
                f"Expected {len(points)} values for field {name}, got {values.shape[0]}")
        if values.ndim == 2 and values.shape[1] == 2:
            values = _pad_to_3d(values)
        point_data[name] = values

    mesh = meshio.Mesh(points=_pad_to_3d(np.asarray(points, dtype=np.float64)),
                       cells=list(cells),
                       point_data=point_data)
    meshio.write(path, mesh, file_format="vtk", binary=False)
    logger.debug(f"Wrote {len(point_data)} field(s) to {path}")


def write_vtk(mesh: Mesh,
              fields: Dict[str, np.ndarray],
              path: str,
              warp: Optional[np.ndarray] = None,
              warp_factor: float = 1.):
    """ Nodal fields on the mesh. `warp` scaled by `warp_factor` displaces the
    written points (for deformation snapshots), the fields are unchanged
    """
    points = mesh.node_coords if warp is None else deformed_points(mesh, warp, warp_factor)
    write_point_fields(points, [(CELL_TYPES[mesh.dim], mesh.elements)], fields, path)


def pair_fields(prefix: str, field: PairField) -> Dict[str, np.ndarray]:
    return {f"{prefix}_{i}_{j}": field.get(i, j) for i, j in field.pairs}


def snapshot_fields(xls: XlsField,
                    fractions: Optional[PhaseFractions] = None,
                    state: Optional[StateSolution] = None,
                    sensitivity: Optional[PairField] = None) -> Dict[str, np.ndarray]:
    """ Named nodal arrays of one optimization snapshot: every phi_ij, the
    integer phase assignment, nodal fractions, displacement (and adjoint) and
    optionally the pair sensitivities
    """
    fields = pair_fields("phi", xls)
    fields["phase"] = phase_assignment(xls).astype(np.int32)
    if fractions is not None:
        fields.update({f"psi_{m}": fractions[m] for m in range(fractions.n_phases)})
    if state is not None:
        fields["u"] = state.u
        if state.v is not None:
            fields["v"] = state.v
    if sensitivity is not None:
        fields.update(pair_fields("dJ", sensitivity))
    return fields


def write_history(history: RunHistory, path: str):
    """ One row per iteration: objective, g_k and lambda_k of every
    constrained phase, C_ALL
    """
    phases = history.constrained_phases
    header = (["iteration", "objective"] + [f"g_{m}" for m in phases] +
              [f"lambda_{m}" for m in phases] + ["c_all"])
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for record in history.records:
            multipliers = (record.multipliers if record.multipliers is not None else
                           np.full(len(phases), np.nan))
            writer.writerow([record.iteration, repr(float(record.objective))] +
                            [repr(float(g)) for g in record.constraints] +
                            [repr(float(lam)) for lam in multipliers] +
                            [repr(float(record.c_all))])


def raster_phases(mesh: Mesh, phases: np.ndarray, slice_index: Optional[int] = None) -> np.ndarray:
    """ Element phase map as an image grid (rows top to bottom = y descending).
    3D meshes are cut at `slice_index` along z (default the z-min layer)
    """
    grid = np.asarray(phases).reshape(mesh.resolution, order="F")
    if mesh.dim == 3:
        k = 0 if slice_index is None else slice_index
        if not 0 <= k < mesh.resolution[2]:
            raise ValueError(f"Expected a z slice below {mesh.resolution[2]}, got {k}")
        grid = grid[:, :, k]
    return np.flipud(grid.T)


def write_raster(mesh: Mesh,
                 fractions: PhaseFractions,
                 palette: Sequence[Tuple[int, int, int]],
                 path: str,
                 slice_index: Optional[int] = None):
    """ Portable pixmap with one pixel per cell, colored by the dominant phase.
    `fractions` holds quadrature-point (M, n_el, n_quad) or element (M, n_el) values
    """
    if fractions.values.ndim == 3:
        phases = element_phases(fractions)
    elif fractions.values.ndim == 2 and fractions.values.shape[1] == mesh.n_elements:
        phases = fractions.assignment()
    else:
        raise ValueError(
            f"Expected element or quadrature-point fractions, got shape {fractions.values.shape}")
    if len(palette) < fractions.n_phases:
        raise ValueError(
            f"Expected a color for each of {fractions.n_phases} phases, got {len(palette)}")

    colors = np.asarray(palette, dtype=np.uint8)
    image = colors[raster_phases(mesh, phases, slice_index)]
    Image.fromarray(np.ascontiguousarray(image)).save(path, format="PPM")
    logger.debug(f"Wrote {image.shape[1]}x{image.shape[0]} raster to {path}")
