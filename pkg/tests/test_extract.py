import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from lipsdf.extract import (GridField, colorize, connected_components, emit_heatmap,
                            euler_characteristic, marching_cubes, marching_squares, mesh_area,
                            planar_slice, sample_grid)
from lipsdf.fieldops import ScalarField, csg_union
from lipsdf.geometry import winding_numbers_segments
from lipsdf.oracles import Sphere, Torus

SPHERE = Sphere([0.0, 0.0, 0.0], 0.5)
CIRCLE = Sphere([0.0, 0.0], 0.5)


def linear_field(dim, axis=0):
    return ScalarField(lambda X: X[:, axis].copy(), lambda X: np.eye(dim)[[axis] * len(X)], dim=dim)


# ---------------------------------------------------------------------------
# Grids


def test_constant_grid():
    const = ScalarField(lambda X: np.full(len(X), 0.7), dim=3)
    g = sample_grid(const, (-1, 1), 5)
    assert g.dims == (5, 5, 5) and np.all(g.values == 0.7)


def test_linear_field_interpolates_exactly(rng):
    g = sample_grid(linear_field(3), (-1, 1), 9)
    X = rng.uniform(-1, 1, size=(200, 3))
    np.testing.assert_allclose(g.interpolate(X), X[:, 0], atol=1e-14)


def test_two_point_grid_corners():
    g = sample_grid(Sphere([0, 0, 0], 1.0), (-1, 1), 2)
    np.testing.assert_allclose(g.values, math.sqrt(3) - 1)
    with pytest.raises(ValueError):
        sample_grid(SPHERE, (-1, 1), 1)


def test_grid_workers_do_not_change_values():
    a = sample_grid(SPHERE, (-1, 1), 24, workers=1)
    b = sample_grid(SPHERE, (-1, 1), 24, workers=4)
    assert np.array_equal(a.values, b.values)


# ---------------------------------------------------------------------------
# Marching squares


def test_marching_squares_circle():
    g = sample_grid(CIRCLE, (-1, 1), 256)
    pl = marching_squares(g, 0.0)
    assert len(pl.chains) == 1 and pl.closed == [True]
    r = np.linalg.norm(pl.vertices, axis=1)
    assert np.abs(r - 0.5).max() <= g.spacing
    assert pl.total_length() == pytest.approx(2 * math.pi * 0.5, rel=0.02)
    w, _ = winding_numbers_segments(pl.segments(), np.array([[0.0, 0.0], [0.9, 0.9]]))
    np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-9)


def test_marching_squares_empty_and_sign_symmetry():
    g = sample_grid(CIRCLE, (-1, 1), 64)
    assert len(marching_squares(g, -10.0).vertices) == 0
    neg = GridField(g.origin, g.spacing, -g.values)
    a = np.unique(np.round(marching_squares(g, 0.0).vertices, 12), axis=0)
    b = np.unique(np.round(marching_squares(neg, 0.0).vertices, 12), axis=0)
    np.testing.assert_array_equal(a, b)


def test_marching_squares_open_curve_hits_border():
    g = sample_grid(linear_field(2), (-1, 1), 16)
    pl = marching_squares(g, 0.1)
    assert len(pl.chains) == 1 and pl.closed == [False]
    np.testing.assert_allclose(pl.vertices[:, 0], 0.1, atol=1e-12)


def test_marching_squares_outputs(tmp_path):
    pl = marching_squares(sample_grid(CIRCLE, (-1, 1), 32), 0.0)
    pl.to_obj(tmp_path / "c.obj")
    pl.to_csv(tmp_path / "c.csv")
    text = (tmp_path / "c.obj").read_text()
    assert text.count("\nl ") + text.startswith("l ") == 1
    assert (tmp_path / "c.csv").read_text().startswith("chain,closed,x,y")


# ---------------------------------------------------------------------------
# Marching cubes


def _max_vertex_error(res):
    g = sample_grid(SPHERE, (-1, 1), res)
    m = marching_cubes(g, 0.0)
    return np.abs(np.linalg.norm(m.vertices, axis=1) - 0.5).max(), g, m


def test_marching_cubes_sphere_128():
    err, g, m = _max_vertex_error(128)
    assert err <= g.spacing
    assert mesh_area(m) == pytest.approx(4 * math.pi * 0.25, rel=0.03)
    assert euler_characteristic(m) == 2
    assert connected_components(m) == 1


def test_marching_cubes_normals_point_outward():
    g = sample_grid(SPHERE, (-1, 1), 40)
    m = marching_cubes(g, 0.0)
    C = m.corners()
    n = np.cross(C[:, 1] - C[:, 0], C[:, 2] - C[:, 0])
    assert np.all(np.einsum("ij,ij->i", n, C.mean(axis=1)) > 0)


def test_marching_cubes_vertices_match_skimage():
    skm = pytest.importorskip("skimage.measure")
    g = sample_grid(Torus([0, 0, 0], 0.5, 0.2), (-1, 1), 40)
    ours = marching_cubes(g, 0.0)
    verts, _, _, _ = skm.marching_cubes(g.values, 0.0, spacing=(g.spacing,) * 3)
    verts = verts + g.origin
    # skimage interpolates in float32
    d, _ = cKDTree(verts).query(ours.vertices)
    assert d.max() <= 1e-6
    d, _ = cKDTree(ours.vertices).query(verts)
    assert d.max() <= 1e-6


def test_marching_cubes_torus_topology():
    m = marching_cubes(sample_grid(Torus([0, 0, 0], 0.5, 0.2), (-1, 1), 64), 0.0)
    assert euler_characteristic(m) == 0
    assert connected_components(m) == 1


def test_marching_cubes_empty_above_max():
    assert len(marching_cubes(sample_grid(SPHERE, (-1, 1), 8), 100.0).triangles) == 0


def test_union_of_overlapping_spheres_is_one_component():
    u = csg_union(Sphere([-0.25, 0, 0], 0.4), Sphere([0.25, 0, 0], 0.4))
    assert connected_components(marching_cubes(sample_grid(u, (-1, 1), 48), 0.0)) == 1
    apart = csg_union(Sphere([-0.5, 0, 0], 0.3), Sphere([0.5, 0, 0], 0.3))
    assert connected_components(marching_cubes(sample_grid(apart, (-1, 1), 48), 0.0)) == 2


# ---------------------------------------------------------------------------
# Slices and heatmaps


def test_slice_of_sphere_equals_circle():
    s3 = planar_slice(SPHERE, (-1, 1), 33, axis=2, offset=0.0)
    s2 = planar_slice(CIRCLE, (-1, 1), 33)
    np.testing.assert_allclose(s3.values, s2.values, atol=1e-15)
    gn = planar_slice(SPHERE, (-1, 1), 32, quantity="gradnorm")
    np.testing.assert_allclose(gn.values, 1.0, atol=1e-12)


def test_heatmap_constant_and_csv(tmp_path):
    g = GridField(np.zeros(2), 0.1, np.full((4, 3), 2.0))
    img = emit_heatmap(g, tmp_path / "h.ppm", tmp_path / "h.csv")
    assert img.shape == (3, 4, 3)
    assert np.all(img == img[0, 0])
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "x,y,value" and len(rows) == 13
    with pytest.raises(ValueError):
        emit_heatmap(GridField(np.zeros(3), 0.1, np.zeros((2, 2, 2))), tmp_path / "x.ppm")


def test_heatmap_orientation(tmp_path):
    # value grows with y, so the top row of the image is the brightest
    g = sample_grid(linear_field(2, axis=1), (-1, 1), 8)
    img = emit_heatmap(g, tmp_path / "h.png")
    assert img[0].astype(int).sum() > img[-1].astype(int).sum()
    np.testing.assert_array_equal(colorize(np.array([0.0, 1.0]))[0], colorize(np.array([0.0]), 0, 1)[0])
