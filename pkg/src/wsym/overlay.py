"""Quadrature on the common refinement of two triangulations of the same domain."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import shapely

from .fe_basis import triangle_rule
from .mesh import Mesh

AREA_TOL = 1e-14


@dataclass(frozen=True)
class Overlay:
    """Quadrature points of the intersection cells with their two host elements.

    ``ref_a``/``ref_b`` are the reference coordinates of each point in its host
    element of mesh a/b; ``weights`` are physical.
    """

    elem_a: np.ndarray
    elem_b: np.ndarray
    ref_a: np.ndarray
    ref_b: np.ndarray
    points: np.ndarray
    weights: np.ndarray


def _to_reference(mesh: Mesh, elems: np.ndarray, pts: np.ndarray) -> np.ndarray:
    g = mesh.geometry
    return np.einsum("nji,nj->ni", g.jac_inv_t[elems], pts - g.origin[elems])


def _polygons(mesh: Mesh):
    return shapely.polygons(mesh.vertices[mesh.triangles])


def overlay(mesh_a: Mesh, mesh_b: Mesh, degree: int = 8) -> Overlay:
    """Intersect every element pair with positive overlap and fan-triangulate the pieces."""
    pa, pb = _polygons(mesh_a), _polygons(mesh_b)
    tree = shapely.STRtree(pb)
    ia, ib = tree.query(pa, predicate="intersects")
    pieces = shapely.intersection(pa[ia], pb[ib])
    area = shapely.area(pieces)
    scale = min(mesh_a.geometry.area.min(), mesh_b.geometry.area.min())
    keep = area > AREA_TOL * scale
    ia, ib, pieces = ia[keep], ib[keep], pieces[keep]
    rule = triangle_rule(degree)
    ea, eb, pts, wts = [], [], [], []
    for a, b, piece in zip(ia, ib, pieces):
        # touching boundaries can add degenerate lines or points to the result
        polys = [p for p in shapely.get_parts(piece) if p.geom_type == "Polygon"]
        if len(polys) != 1:
            raise ValueError(f"intersection of elements {a} and {b} is not a single convex polygon")
        ring = np.asarray(polys[0].exterior.coords)[:-1]
        for t in range(1, len(ring) - 1):
            v0, v1, v2 = ring[0], ring[t], ring[t + 1]
            J = np.column_stack([v1 - v0, v2 - v0])
            det = abs(np.linalg.det(J))
            if det <= AREA_TOL * scale:
                continue
            pts.append(v0 + rule.points @ J.T)
            wts.append(det * rule.weights)
            ea.append(np.full(len(rule.weights), a))
            eb.append(np.full(len(rule.weights), b))
    ea, eb = np.concatenate(ea), np.concatenate(eb)
    pts, wts = np.concatenate(pts), np.concatenate(wts)
    return Overlay(ea, eb, _to_reference(mesh_a, ea, pts), _to_reference(mesh_b, eb, pts), pts, wts)
