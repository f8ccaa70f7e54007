#
# For licensing see accompanying LICENSE.md file.
# Copyright (C) 2022 Apple Inc. All Rights Reserved.
#

import dataclasses
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
import itertools

import logging

logging.basicConfig()
logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

import numpy as np
from typing import Dict, Optional, Sequence, Tuple

AXIS_NAMES = ("x", "y", "z")

# Relative to the largest extent of the box
REGION_TOLERANCE = 1e-9

# Gauss-Legendre abscissa of the 2-point rule on [-1, 1]
GAUSS_ABSCISSA = 1. / np.sqrt(3.)


class MeshConfigurationError(ValueError):
    pass


class TaggingError(ValueError):
    pass


class TagConflictError(TaggingError):
    pass


class BoundaryKind(Enum):
    FIXED_DISPLACEMENT = "fixed-displacement"
    TRACTION = "traction"
    INPUT_PORT = "input-port"
    OUTPUT_PORT = "output-port"
    MATERIAL_SPECIFIED = "material-specified"
    SYMMETRY = "symmetry"
    FREE = "free"


@dataclass(frozen=True)
class Region:
    """ Axis-aligned box predicate. `bounds[k]` is a closed interval `(lo, hi)`
    along axis k, or None when the box is unbounded along that axis
    """
    bounds: Tuple[Optional[Tuple[float, float]], ...]

    @classmethod
    def from_dict(cls, axes: Dict[str, Sequence[float]], dim: int):
        unknown = set(axes) - set(AXIS_NAMES[:dim])
        if unknown:
            raise ValueError(
                f"Expected region axes among {AXIS_NAMES[:dim]}, got {sorted(unknown)}")
        bounds = []
        for name in AXIS_NAMES[:dim]:
            if name not in axes:
                bounds.append(None)
                continue
            lo, hi = (float(v) for v in axes[name])
            if lo > hi:
                raise ValueError(
                    f"Region bound along {name} is empty: [{lo}, {hi}]")
            bounds.append((lo, hi))
        return cls(tuple(bounds))

    def to_dict(self):
        return {
            AXIS_NAMES[k]: list(b)
            for k, b in enumerate(self.bounds) if b is not None
        }

    def contains(self, points: np.ndarray, tol: float = 0.) -> np.ndarray:
        points = np.atleast_2d(points)
        assert points.shape[1] == len(self.bounds), \
            f"Expected {len(self.bounds)}-d points, got shape {points.shape}"
        mask = np.ones(points.shape[0], dtype=bool)
        for k, b in enumerate(self.bounds):
            if b is None:
                continue
            mask &= (points[:, k] >= b[0] - tol) & (points[:, k] <= b[1] + tol)
        return mask


@dataclass(frozen=True)
class BoundaryTag:
    """ Named subset of boundary facets. `material` is the phase specified on
    the facets (level-set Dirichlet condition), independent of `kind`
    """
    name: str
    kind: BoundaryKind
    region: Optional[Region] = None
    material: Optional[int] = None
    components: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if not isinstance(self.kind, BoundaryKind):
            raise TypeError(
                f"Expected a BoundaryKind for tag {self.name}, got {self.kind!r}")
        if self.kind is BoundaryKind.MATERIAL_SPECIFIED and self.material is None:
            raise ValueError(
                f"Tag {self.name} is material-specified but carries no material index")
        if self.material is not None and self.material < 0:
            raise ValueError(
                f"Tag {self.name} has a negative material index {self.material}")


def _reference_corners(dim):
    """ Reference-cell corners in VTK ordering (0/1 coordinates)
    """
    if dim == 1:
        return np.array([[0], [1]])
    square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])
    if dim == 2:
        return square
    if dim == 3:
        return np.concatenate([
            np.hstack([square, np.zeros((4, 1), int)]),
            np.hstack([square, np.ones((4, 1), int)]),
        ])
    raise MeshConfigurationError(f"Expected dim in (1, 2, 3), got {dim}")


def gauss_points(dim):
    """ Tensor-product 2-point Gauss rule on [-1, 1]^dim, returns (points, weights)
    """
    points = np.array(list(
        itertools.product((-GAUSS_ABSCISSA, GAUSS_ABSCISSA), repeat=dim)))
    return points, np.ones(len(points))


def shape_functions(xi: np.ndarray, dim: int):
    """ Multilinear shape functions and their reference derivatives.

    Returns N of shape (n_points, n_corners) and dN of shape
    (n_points, n_corners, dim)
    """
    signs = 2 * _reference_corners(dim) - 1
    factors = 0.5 * (1. + xi[:, None, :] * signs[None, :, :])
    N = np.prod(factors, axis=-1)
    dN = np.empty(N.shape + (dim,))
    for j in range(dim):
        others = np.delete(factors, j, axis=-1)
        dN[..., j] = 0.5 * signs[None, :, j] * np.prod(others, axis=-1)
    return N, dN


@dataclass(frozen=True, eq=False)
class Mesh:
    """ Structured grid of bilinear quads (2D) or trilinear hexes (3D) over an
    axis-aligned box. Nodes are numbered with x fastest, then y, then z
    """
    dim: int
    resolution: Tuple[int, ...]
    extent: Tuple[float, ...]
    origin: Tuple[float, ...]
    char_length: float
    node_coords: np.ndarray
    elements: np.ndarray
    boundary_facets: np.ndarray
    facet_axes: np.ndarray
    facet_sides: np.ndarray
    tags: Tuple[BoundaryTag, ...] = ()
    facet_tags: Optional[np.ndarray] = None

    @property
    def n_nodes(self):
        return self.node_coords.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def nodes_per_element(self):
        return self.elements.shape[1]

    @property
    def n_quadrature(self):
        return 2**self.dim

    @cached_property
    def spacing(self):
        return np.array(self.extent) / np.array(self.resolution)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def tolerance(self):
        return REGION_TOLERANCE * max(self.extent)

    def element_volumes(self):
        return np.full(self.n_elements, self.cell_volume)

    @cached_property
    def facet_measures(self):
        measures = np.empty(len(self.boundary_facets))
        for k in range(self.dim):
            measures[self.facet_axes == k] = np.prod(
                np.delete(self.spacing, k))
        return measures

    @cached_property
    def boundary_node_mask(self):
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary_facets.ravel()] = True
        return mask

    @cached_property
    def element_centroids(self):
        return self.node_coords[self.elements].mean(axis=1)

    # Quadrature. Every cell of the grid is the same box, so the reference
    # quantities below are shared by all elements.
    @cached_property
    def shape_values(self):
        xi, _ = gauss_points(self.dim)
        return shape_functions(xi, self.dim)[0]

    @cached_property
    def shape_gradients(self):
        """ Physical shape-function gradients, shape (n_quad, n_corners, dim)
        """
        xi, _ = gauss_points(self.dim)
        dN = shape_functions(xi, self.dim)[1]
        return dN * (2. / self.spacing)[None, None, :]

    @cached_property
    def quadrature_weights(self):
        """ Gauss weight times Jacobian determinant, shape (n_quad,)
        """
        _, w = gauss_points(self.dim)
        return w * np.prod(self.spacing / 2.)

    @cached_property
    def quadrature_points(self):
        """ Physical quadrature-point coordinates, shape (n_el, n_quad, dim)
        """
        origin = self.node_coords[self.elements[:, 0]]
        xi, _ = gauss_points(self.dim)
        return origin[:, None, :] + 0.5 * (xi[None] + 1.) * self.spacing

    @cached_property
    def nodal_volumes(self):
        """ Lumped (row-sum) mass of a unit density, one value per node
        """
        share = self.cell_volume / self.nodes_per_element
        return np.bincount(self.elements.ravel(),
                           weights=np.full(self.elements.size, share),
                           minlength=self.n_nodes)

    def interpolate(self, nodal: np.ndarray) -> np.ndarray:
        """ Interpolate nodal values (..., n_nodes) to quadrature points (..., n_el, n_quad)
        """
        return np.einsum("...ea,qa->...eq", nodal[..., self.elements],
                         self.shape_values)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """ Integrate quadrature-point values (..., n_el, n_quad) over the domain
        """
        return np.einsum("...eq,q->...", values, self.quadrature_weights)

    def facet_quadrature(self):
        """ Shape values and weights on one facet, measures excluded
        """
        xi, w = gauss_points(self.dim - 1)
        N, _ = shape_functions(xi, self.dim - 1)
        return N, w / 2**(self.dim - 1)

    # Tags
    def tag(self, name: str) -> BoundaryTag:
        for t in self.tags:
            if t.name == name:
                return t
        raise KeyError(
            f"No boundary tag named {name!r}, available: {[t.name for t in self.tags]}")

    def tag_facet_mask(self, name: str) -> np.ndarray:
        index = [t.name for t in self.tags].index(self.tag(name).name)
        return self.facet_tags == index

    def tag_facets(self, name: str) -> np.ndarray:
        return self.boundary_facets[self.tag_facet_mask(name)]

    def tag_nodes(self, name: str) -> np.ndarray:
        return np.unique(self.tag_facets(name))

    def untagged_facet_count(self):
        return int((self.facet_tags < 0).sum())

    def elements_in_region(self, region: Region) -> np.ndarray:
        return np.flatnonzero(
            region.contains(self.element_centroids, self.tolerance))

    def material_dirichlet_nodes(
            self,
            extra: Optional[Dict[int, np.ndarray]] = None) -> Dict[int, np.ndarray]:
        """ Nodes on which each material is specified, by a boundary tag or by
        `extra` claims. Nodes claimed by two different materials belong to neither
        """
        claims = {}
        for t in self.tags:
            if t.material is None:
                continue
            nodes = self.tag_nodes(t.name)
            claims[t.material] = np.union1d(claims.get(t.material, []), nodes)
        for m, nodes in (extra or {}).items():
            claims[m] = np.union1d(claims.get(m, []), nodes)
        result = {}
        for m, nodes in claims.items():
            others = [n for k, n in claims.items() if k != m]
            contested = np.concatenate(others) if others else np.empty(0)
            result[m] = np.setdiff1d(nodes, contested).astype(int)
        return result


def _node_strides(resolution):
    n = np.asarray(resolution) + 1
    return np.concatenate([[1], np.cumprod(n[:-1])]).astype(int)


def build_structured_mesh(extent: Sequence[float],
                          resolution: Sequence[int],
                          dim: Optional[int] = None,
                          origin: Optional[Sequence[float]] = None,
                          char_length: Optional[float] = None) -> Mesh:
    """ Build a structured grid of `resolution` cells over the box
    `origin + [0, extent]`. `char_length` defaults to the longest edge
    """
    dim = dim or len(extent)
    if dim not in (2, 3):
        raise MeshConfigurationError(f"Expected dim 2 or 3, got {dim}")
    if len(extent) != dim or len(resolution) != dim:
        raise MeshConfigurationError(
            f"Expected {dim} extents and resolutions, got {len(extent)} and {len(resolution)}")
    if any(float(e) <= 0 for e in extent):
        raise MeshConfigurationError(
            f"Expected positive extents, got {tuple(extent)}")
    if any(int(r) != r or int(r) < 2 for r in resolution):
        raise MeshConfigurationError(
            f"Expected at least 2 cells per axis, got {tuple(resolution)}")
    if char_length is not None and char_length <= 0:
        raise MeshConfigurationError(
            f"Expected a positive characteristic length, got {char_length}")

    extent = tuple(float(e) for e in extent)
    resolution = tuple(int(r) for r in resolution)
    origin = tuple(float(o) for o in origin) if origin is not None else (0., ) * dim
    spacing = np.array(extent) / np.array(resolution)
    strides = _node_strides(resolution)

    node_index = np.indices([r + 1 for r in resolution]).reshape(dim, -1, order="F").T
    node_coords = np.array(origin) + node_index * spacing

    cell_index = np.indices(resolution).reshape(dim, -1, order="F").T
    corners = _reference_corners(dim)
    elements = (cell_index[:, None, :] + corners[None]) @ strides

    facets, axes, sides = [], [], []
    face_corners = _reference_corners(dim - 1)
    for k in range(dim):
        others = [j for j in range(dim) if j != k]
        face_cells = np.indices([resolution[j] for j in others]).reshape(
            dim - 1, -1, order="F").T
        for side in (0, 1):
            index = np.zeros((len(face_cells), len(face_corners), dim), int)
            index[..., others] = face_cells[:, None, :] + face_corners[None]
            index[..., k] = side * resolution[k]
            facets.append(index @ strides)
            axes.append(np.full(len(face_cells), k))
            sides.append(np.full(len(face_cells), side))

    facets = np.concatenate(facets)
    mesh = Mesh(dim=dim,
                resolution=resolution,
                extent=extent,
                origin=origin,
                char_length=float(char_length or max(extent)),
                node_coords=node_coords,
                elements=elements,
                boundary_facets=facets,
                facet_axes=np.concatenate(axes),
                facet_sides=np.concatenate(sides),
                facet_tags=np.full(len(facets), -1))
    logger.debug(
        f"Built {dim}D mesh: {mesh.n_nodes} nodes, {mesh.n_elements} elements")
    return mesh


def tag_boundary(mesh: Mesh, tag: BoundaryTag) -> Mesh:
    """ Return a copy of `mesh` whose facets selected by `tag.region` carry `tag`
    """
    if tag.region is None:
        raise TaggingError(f"Tag {tag.name} has no region to select facets with")
    if any(t.name == tag.name for t in mesh.tags):
        raise TagConflictError(f"Mesh already carries a tag named {tag.name}")

    selected = tag.region.contains(mesh.node_coords, mesh.tolerance)
    interior = selected & ~mesh.boundary_node_mask
    if interior.any():
        raise TaggingError(
            f"Tag {tag.name} selects {int(interior.sum())} interior node(s), "
            "boundary tags may only select facets on the boundary")

    facet_mask = selected[mesh.boundary_facets].all(axis=1)
    if not facet_mask.any():
        raise TaggingError(f"Tag {tag.name} selects no boundary facet")

    clash = facet_mask & (mesh.facet_tags >= 0)
    if clash.any():
        owners = sorted({mesh.tags[i].name for i in mesh.facet_tags[clash]})
        raise TagConflictError(
            f"Tag {tag.name} overlaps facets already tagged {owners}")

    facet_tags = mesh.facet_tags.copy()
    facet_tags[facet_mask] = len(mesh.tags)
    return dataclasses.replace(mesh,
                               tags=mesh.tags + (tag, ),
                               facet_tags=facet_tags)


def complete_tags(mesh: Mesh, default: BoundaryTag) -> Mesh:
    """ Assign every untagged boundary facet to `default` so that tags
    partition the boundary
    """
    untagged = mesh.facet_tags < 0
    if not untagged.any():
        logger.info(
            f"All boundary facets are tagged, default tag {default.name} is unused")
        return mesh
    if any(t.name == default.name for t in mesh.tags):
        raise TagConflictError(f"Mesh already carries a tag named {default.name}")

    facet_tags = mesh.facet_tags.copy()
    facet_tags[untagged] = len(mesh.tags)
    return dataclasses.replace(mesh,
                               tags=mesh.tags + (default, ),
                               facet_tags=facet_tags)
