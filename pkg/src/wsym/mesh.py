"""Triangulations of the unit square with Alfeld (barycentric) splitting.

Local face ``i`` of a triangle ``(v0, v1, v2)`` is the edge opposite vertex
``i``, i.e. ``(v[i+1], v[i+2])``.  Global faces are the sorted vertex pairs in
lexicographic order; an element's orientation sign for a face is +1 when its
local traversal matches the global (low, high) order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path

import numpy as np

SIDES = ("left", "right", "bottom", "top")


class FaceTag(IntEnum):
    INTERIOR = -1
    DIRICHLET = 0  # Gamma_0
    TRACTION = 1  # Gamma_1


class MeshError(ValueError):
    """Invalid mesh geometry or connectivity."""


class MeshFormatError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class ElementGeometry:
    """Affine maps x = jac @ xhat + origin for every element, batched."""

    jac: np.ndarray  # (ne, 2, 2)
    origin: np.ndarray  # (ne, 2)
    det: np.ndarray  # (ne,)
    jac_inv_t: np.ndarray  # (ne, 2, 2)
    diameter: np.ndarray  # (ne,)  h_K
    normals: np.ndarray  # (ne, 3, 2) outward unit normal per local face
    face_length: np.ndarray  # (ne, 3) h_F

    @property
    def area(self) -> np.ndarray:
        return 0.5 * self.det


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    face_tags: np.ndarray = field(repr=False)
    faces: np.ndarray = field(repr=False)
    element_faces: np.ndarray = field(repr=False)
    element_face_signs: np.ndarray = field(repr=False)
    face_elements: np.ndarray = field(repr=False)
    alfeld_parent: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def faces_with_tag(self, tag: FaceTag) -> np.ndarray:
        return np.flatnonzero(self.face_tags == tag)

    @cached_property
    def geometry(self) -> ElementGeometry:
        p = self.vertices[self.triangles]  # (ne, 3, 2)
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        if np.any(det <= 0):
            bad = int(np.flatnonzero(det <= 0)[0])
            raise MeshError(f"element {bad} has non-positive signed area")
        jac_inv_t = np.empty_like(jac)
        jac_inv_t[:, 0, 0] = jac[:, 1, 1]
        jac_inv_t[:, 0, 1] = -jac[:, 1, 0]
        jac_inv_t[:, 1, 0] = -jac[:, 0, 1]
        jac_inv_t[:, 1, 1] = jac[:, 0, 0]
        jac_inv_t /= det[:, None, None]
        edges = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        length = np.linalg.norm(edges, axis=-1)
        # CCW ordering: outward normal is the tangent rotated clockwise
        normals = np.stack([edges[..., 1], -edges[..., 0]], axis=-1) / length[..., None]
        return ElementGeometry(
            jac=jac,
            origin=p[:, 0].copy(),
            det=det,
            jac_inv_t=jac_inv_t,
            diameter=length.max(axis=1),
            normals=normals,
            face_length=length,
        )

    @property
    def h_max(self) -> float:
        return float(self.geometry.diameter.max())

    def diagnostics(self) -> dict:
        h = self.geometry.diameter
        return {
            "n_elements": self.n_elements,
            "n_vertices": self.n_vertices,
            "n_faces": self.n_faces,
            "h_max": float(h.max()),
            "h_min": float(h.min()),
            "quasiuniformity": float(h.max() / h.min()),
        }

    def same_topology(self, other: "Mesh") -> bool:
        return (
            np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.faces, other.faces)
            and np.array_equal(self.face_tags, other.face_tags)
        )


def build_mesh(vertices, triangles, boundary_tag, alfeld_parent=None) -> Mesh:
    """Assemble face connectivity and tag boundary faces.

    ``boundary_tag`` maps a sorted vertex pair to a FaceTag, or is a callable
    ``(midpoint) -> FaceTag`` used for every boundary face.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    ne = len(triangles)
    local = np.array([[1, 2], [2, 0], [0, 1]])
    pairs = triangles[:, local]  # (ne, 3, 2)
    signs = np.where(pairs[..., 0] < pairs[..., 1], 1, -1)
    key = np.sort(pairs, axis=-1).reshape(-1, 2)
    faces, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.reshape(ne, 3)

    face_elements = np.full((len(faces), 2), -1, dtype=np.int64)
    count = np.zeros(len(faces), dtype=np.int64)
    for e in range(ne):
        for f in range(3):
            g = inverse[e, f]
            if count[g] >= 2:
                raise MeshError(f"face {tuple(faces[g])} shared by more than two elements")
            face_elements[g, count[g]] = e
            count[g] += 1

    tags = np.full(len(faces), int(FaceTag.INTERIOR), dtype=np.int64)
    for g in np.flatnonzero(count == 1):
        a, b = faces[g]
        if callable(boundary_tag):
            tag = boundary_tag(0.5 * (vertices[a] + vertices[b]))
        else:
            try:
                tag = boundary_tag[(int(a), int(b))]
            except KeyError:
                raise MeshError(f"boundary face ({a}, {b}) has no tag") from None
        tags[g] = int(tag)

    mesh = Mesh(
        vertices=vertices,
        triangles=triangles,
        face_tags=tags,
        faces=faces,
        element_faces=inverse,
        element_face_signs=signs,
        face_elements=face_elements,
        alfeld_parent=None if alfeld_parent is None else np.asarray(alfeld_parent),
    )
    mesh.geometry  # validates orientation
    return mesh


def _side_selector(gamma1: set[str] | frozenset[str]):
    unknown = set(gamma1) - set(SIDES)
    if unknown:
        raise ValueError(f"unknown boundary side(s): {sorted(unknown)}")
    if set(gamma1) == set(SIDES):
        raise ValueError("Gamma_0 must contain at least one face")

    def tag(mid: np.ndarray) -> FaceTag:
        x, y = mid
        on = {
            "left": abs(x) < 1e-12,
            "right": abs(x - 1) < 1e-12,
            "bottom": abs(y) < 1e-12,
            "top": abs(y - 1) < 1e-12,
        }
        return FaceTag.TRACTION if any(on[s] for s in gamma1) else FaceTag.DIRICHLET

    return tag


def structured_square(cells_per_side: int, gamma1=frozenset()) -> Mesh:
    """Unit square, each cell cut by its lower-left to upper-right diagonal."""
    n = int(cells_per_side)
    if n < 1:
        raise ValueError("cells_per_side must be >= 1")
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)  # idx[j, i] at (x_i, y_j)
    tris = []
    for j in range(n):
        for i in range(n):
            v00, v10 = idx[j, i], idx[j, i + 1]
            v01, v11 = idx[j + 1, i], idx[j + 1, i + 1]
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return build_mesh(vertices, np.array(tris), _side_selector(frozenset(gamma1)))


def alfeld_split(mesh: Mesh) -> Mesh:
    """Split every triangle into three through its barycenter.

    Not idempotent: applying it to an already split mesh splits again.
    Parent edges are kept unsplit and boundary tags are inherited.
    """
    p = mesh.vertices[mesh.triangles]
    area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (
        p[:, 2, 0] - p[:, 0, 0]
    )
    if np.any(np.abs(area2) <= 1e-14 * max(1.0, np.abs(area2).max())):
        bad = int(np.flatnonzero(np.abs(area2) <= 1e-14 * max(1.0, np.abs(area2).max()))[0])
        raise MeshError(f"degenerate (zero-area) triangle {bad}")
    nv = mesh.n_vertices
    bary = p.mean(axis=1)
    vertices = np.vstack([mesh.vertices, bary])
    tris = np.empty((3 * mesh.n_elements, 3), dtype=np.int64)
    for e, (a, b, c) in enumerate(mesh.triangles):
        z = nv + e
        tris[3 * e] = (a, b, z)
        tris[3 * e + 1] = (b, c, z)
        tris[3 * e + 2] = (c, a, z)
    parent = np.repeat(np.arange(mesh.n_elements), 3)
    boundary = {
        (int(a), int(b)): FaceTag(t)
        for (a, b), t in zip(mesh.faces, mesh.face_tags)
        if t != FaceTag.INTERIOR
    }
    return build_mesh(vertices, tris, boundary, alfeld_parent=parent)


def generate_structured_alfeld(cells_per_side: int, gamma1=frozenset()) -> Mesh:
    return alfeld_split(structured_square(cells_per_side, gamma1))


def write_mesh(mesh: Mesh, path) -> None:
    lines = ["wsym-mesh v1", "dim 2", f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.n_elements}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    bnd = np.flatnonzero(mesh.face_tags != FaceTag.INTERIOR)
    lines.append(f"boundary {len(bnd)}")
    lines += [f"{mesh.faces[g, 0]} {mesh.faces[g, 1]} {mesh.face_tags[g]}" for g in bnd]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    raw = Path(path).read_text().splitlines()
    rows = []
    for lineno, text in enumerate(raw, start=1):
        text = text.split("#", 1)[0].strip()
        if text:
            rows.append((lineno, text.split()))
    it = iter(rows)

    def take(expected: str | None = None):
        try:
            lineno, tok = next(it)
        except StopIteration:
            raise MeshFormatError("unexpected end of file", len(raw)) from None
        if expected is not None and (len(tok) != 2 or tok[0] != expected):
            raise MeshFormatError(f"expected '{expected} <count>'", lineno)
        return lineno, tok

    lineno, tok = take()
    if tok != ["wsym-mesh", "v1"]:
        raise MeshFormatError("malformed header, expected 'wsym-mesh v1'", lineno)
    lineno, tok = take()
    if tok != ["dim", "2"]:
        raise MeshFormatError("expected 'dim 2'", lineno)

    def count(name):
        lineno, tok = take(name)
        try:
            n = int(tok[1])
        except ValueError:
            raise MeshFormatError(f"bad {name} count", lineno) from None
        if n < 0:
            raise MeshFormatError(f"bad {name} count", lineno)
        return n

    def record(width, conv):
        lineno, tok = take()
        if len(tok) != width:
            raise MeshFormatError(f"expected {width} fields", lineno)
        try:
            return lineno, [conv(t) for t in tok]
        except ValueError:
            raise MeshFormatError("malformed number", lineno) from None

    nv = count("vertices")
    vertices = np.array([record(2, float)[1] for _ in range(nv)], dtype=float).reshape(nv, 2)
    nt = count("triangles")
    tri_lines, tris = [], []
    for _ in range(nt):
        ln, t = record(3, int)
        if min(t) < 0 or max(t) >= nv:
            raise MeshFormatError("triangle references nonexistent vertex", ln)
        tri_lines.append(ln)
        tris.append(t)
    tris = np.array(tris, dtype=np.int64).reshape(nt, 3)
    for e, (ln, (a, b, c)) in enumerate(zip(tri_lines, tris)):
        d = (vertices[b, 0] - vertices[a, 0]) * (vertices[c, 1] - vertices[a, 1]) - (
            vertices[b, 1] - vertices[a, 1]
        ) * (vertices[c, 0] - vertices[a, 0])
        if d <= 0:
            raise MeshFormatError(f"non-CCW element {e}", ln)
    used = np.zeros(nv, dtype=bool)
    used[tris.ravel()] = True
    if not used.all():
        raise MeshFormatError(f"dangling vertex {int(np.flatnonzero(~used)[0])}", None)

    edges = {tuple(sorted((int(t[i]), int(t[j])))) for t in tris for i, j in ((0, 1), (1, 2), (2, 0))}
    nb = count("boundary")
    boundary = {}
    for _ in range(nb):
        ln, (a, b, tag) = record(3, int)
        key = (min(a, b), max(a, b))
        if key not in edges:
            raise MeshFormatError(f"boundary record references nonexistent edge {key}", ln)
        if tag not in (0, 1):
            raise MeshFormatError(f"unknown boundary tag {tag}", ln)
        boundary[key] = FaceTag(tag)
    try:
        mesh = build_mesh(vertices, tris, boundary)
    except MeshError as exc:
        raise MeshFormatError(str(exc), None) from exc
    for key in boundary:
        g = np.flatnonzero((mesh.faces[:, 0] == key[0]) & (mesh.faces[:, 1] == key[1]))[0]
        if mesh.face_elements[g, 1] != -1:
            raise MeshFormatError(f"boundary record on interior edge {key}", None)
    return mesh
