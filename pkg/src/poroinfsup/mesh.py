"""Conforming triangular meshes with labelled boundary segments."""

from __future__ import annotations

from functools import cached_property
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


class Mesh:
    """Triangular mesh of a polygonal domain.

    Parameters
    ----------
    vertices : (nv, 2) array
        Vertex coordinates.
    triangles : (nt, 3) int array
        Vertex indices of each triangle, counterclockwise.
    boundary_edges : (nb, 2) int array
        Vertex pairs of the boundary edges.
    boundary_labels : sequence of str, length nb
        Segment label of every boundary edge.
    """

    def __init__(self, vertices, triangles, boundary_edges, boundary_labels):
        self.vertices = np.array(vertices, dtype=float).reshape(-1, 2)
        self.triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        self.boundary_edges = np.array(boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.boundary_labels = np.array([str(s) for s in boundary_labels], dtype=object)
        for arr in (self.vertices, self.triangles, self.boundary_edges):
            arr.flags.writeable = False
        if len(self.boundary_labels) != len(self.boundary_edges):
            raise MeshError("one label per boundary edge required")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise MeshError("triangle references a nonexistent vertex")
        self._check_orientation()
        self._check_boundary()

    def _check_orientation(self):
        bad = np.flatnonzero(self.signed_areas <= 0)
        if bad.size:
            raise MeshError(f"degenerate or clockwise triangle: element {int(bad[0])}")

    def _check_boundary(self):
        counts = np.bincount(self.edge_index_of_triangles.ravel(), minlength=len(self.edges))
        if counts.max(initial=0) > 2:
            raise MeshError("non-manifold edge shared by more than two triangles")
        found = {tuple(e) for e in self.edges[counts == 1]}
        given = {tuple(sorted(e)) for e in self.boundary_edges.tolist()}
        if found != given:
            raise MeshError("boundary edges do not match the free edges of the triangulation")

    def __repr__(self):
        return f"Mesh(nv={self.n_vertices}, nt={self.n_triangles}, nb={len(self.boundary_edges)})"

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(self.boundary_labels.tolist()))

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self) -> float:
        return float(self.signed_areas.sum())

    @cached_property
    def _edge_data(self):
        t = self.triangles
        # local edge k is opposite local vertex k
        local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
        flat = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(flat, axis=0, return_inverse=True)
        return edges, inverse.reshape(-1, 3)

    @property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs."""
        return self._edge_data[0]

    @property
    def edge_index_of_triangles(self) -> np.ndarray:
        """(nt, 3) global edge number of the edge opposite each local vertex."""
        return self._edge_data[1]

    @cached_property
    def boundary_edge_ids(self) -> np.ndarray:
        """Global edge number of every boundary edge, in boundary order."""
        lookup = {tuple(e): i for i, e in enumerate(self.edges.tolist())}
        return np.array([lookup[tuple(sorted(e))] for e in self.boundary_edges.tolist()], dtype=np.int64)

    def boundary_vertices(self, labels=None) -> np.ndarray:
        mask = self._label_mask(labels)
        return np.unique(self.boundary_edges[mask].ravel())

    def _label_mask(self, labels):
        if labels is None:
            return np.ones(len(self.boundary_edges), dtype=bool)
        labels = set(labels)
        return np.array([lab in labels for lab in self.boundary_labels], dtype=bool)

    def h_max(self) -> float:
        e = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return float(np.sqrt((e**2).sum(axis=1)).max())

    def write(self, path) -> None:
        lines = [f"v {x!r} {y!r}" for x, y in self.vertices.tolist()]
        lines += [f"t {i} {j} {k}" for i, j, k in self.triangles.tolist()]
        lines += [f"b {i} {j} {lab}" for (i, j), lab in zip(self.boundary_edges.tolist(), self.boundary_labels)]
        Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    """Read the plain-text mesh format written by :meth:`Mesh.write`."""
    verts, tris, bedges, blabels = [], [], [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *rest = line.split()
        try:
            if kind == "v" and len(rest) == 2:
                verts.append([float(rest[0]), float(rest[1])])
            elif kind == "t" and len(rest) == 3:
                tris.append([int(r) for r in rest])
            elif kind == "b" and len(rest) == 3:
                bedges.append([int(rest[0]), int(rest[1])])
                blabels.append(rest[2])
            else:
                raise ValueError
        except ValueError:
            raise MeshError(f"{path}:{lineno}: cannot parse {raw!r}") from None
    return Mesh(verts, tris, bedges, blabels)


def unit_square_mesh(n: int) -> Mesh:
    """Structured mesh of (0,1)^2, every cell cut along its SW-NE diagonal.

    Boundary edges are labelled ``left``, ``right``, ``bottom``, ``top``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    s = np.linspace(0.0, 1.0, n + 1)
    x, y = np.meshgrid(s, s)
    vertices = np.column_stack([x.ravel(), y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
    triangles = np.concatenate([np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])])

    k = np.arange(n)
    edges, labels = [], []
    for label, a, b in (
        ("bottom", vid(k, 0), vid(k + 1, 0)),
        ("right", vid(n, k), vid(n, k + 1)),
        ("top", vid(k + 1, n), vid(k, n)),
        ("left", vid(0, k + 1), vid(0, k)),
    ):
        edges.append(np.column_stack([a, b]))
        labels += [label] * n
    return Mesh(vertices, triangles, np.concatenate(edges), labels)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four by joining its edge midpoints."""
    nv = mesh.n_vertices
    midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])
    a, b, c = mesh.triangles.T
    ma, mb, mc = (nv + mesh.edge_index_of_triangles).T
    triangles = np.concatenate([
        np.column_stack([a, mc, mb]),
        np.column_stack([mc, b, ma]),
        np.column_stack([mb, ma, c]),
        np.column_stack([ma, mb, mc]),
    ])
    mid = nv + mesh.boundary_edge_ids
    i, j = mesh.boundary_edges.T
    bedges = np.stack([np.column_stack([i, mid]), np.column_stack([mid, j])], axis=1).reshape(-1, 2)
    labels = np.repeat(mesh.boundary_labels, 2)
    return Mesh(vertices, triangles, bedges, labels)
