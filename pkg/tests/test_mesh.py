import numpy as np
import pytest

from poroinfsup.mesh import Mesh, MeshError, read_mesh, refine_uniform, unit_square_mesh


@pytest.mark.parametrize("n, nv, nt, nb", [(1, 4, 2, 4), (2, 9, 8, 8), (5, 36, 50, 20)])
def test_counts(n, nv, nt, nb):
    m = unit_square_mesh(n)
    assert (m.n_vertices, m.n_triangles, len(m.boundary_edges)) == (nv, nt, nb)


def test_area_and_orientation():
    m = unit_square_mesh(4)
    assert m.area == pytest.approx(1.0, abs=1e-15)
    assert np.all(m.signed_areas > 0)
    assert set(m.labels) == {"left", "right", "bottom", "top"}


def test_diagonal_direction():
    m = unit_square_mesh(1)
    tri = {tuple(sorted(t)) for t in m.triangles.tolist()}
    assert tri == {(0, 1, 3), (0, 2, 3)}


def test_refinement():
    m = unit_square_mesh(1)
    r = refine_uniform(m)
    assert r.n_triangles == 8
    assert r.area == pytest.approx(1.0, abs=1e-15)
    assert len(r.boundary_edges) == 2 * len(m.boundary_edges)
    parent = np.repeat(m.signed_areas, 1)
    assert np.allclose(np.sort(r.signed_areas), np.sort(np.repeat(parent / 4, 4)), rtol=1e-14)


def test_refine_twice_matches_structured():
    r = refine_uniform(refine_uniform(unit_square_mesh(1)))
    ref = unit_square_mesh(4)
    key = lambda v: np.lexsort((v[:, 0], v[:, 1]))  # noqa: E731
    a, b = r.vertices[key(r.vertices)], ref.vertices[key(ref.vertices)]
    assert np.allclose(a, b, atol=1e-15)


def test_labels_inherited_and_connected():
    r = refine_uniform(unit_square_mesh(2))
    for label in r.labels:
        e = r.boundary_edges[np.array(r.boundary_labels) == label]
        # an open polyline has exactly two endpoints of degree one
        deg = np.bincount(e.ravel())
        assert np.count_nonzero(deg == 1) == 2
    left = r.boundary_vertices(["left"])
    assert np.allclose(r.vertices[left, 0], 0.0)


def test_roundtrip(tmp_path):
    m = refine_uniform(unit_square_mesh(2))
    path = tmp_path / "square.mesh"
    m.write(path)
    back = read_mesh(path)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    assert list(back.boundary_labels) == list(m.boundary_labels)


def test_parse_error_has_line_number(tmp_path):
    path = tmp_path / "bad.mesh"
    path.write_text("v 0 0\nv 1 0\nv 0 1\nt 0 1 x\n")
    with pytest.raises(MeshError, match=":4:"):
        read_mesh(path)


def test_degenerate_triangle_rejected():
    with pytest.raises(MeshError, match="element 0"):
        Mesh([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], ["a"] * 3)


def test_h_max():
    assert unit_square_mesh(4).h_max() == pytest.approx(np.sqrt(2) / 4)
