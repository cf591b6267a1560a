import numpy as np
import pytest

from lipsdf.fieldops import audit_lipschitz, fd_gradient
from lipsdf.oracles import (Box, Polygon, Polyline, Segment, Sphere, Torus, analytic_dataset,
                            parse_shape, rounded_polygon_2d, sdf_eval, sdf_grad)
from scalar_oracles import torus_distance_bruteforce

SHAPES = [
    Sphere([0.1, -0.2, 0.0], 0.5),
    Sphere([0.0, 0.0], 0.25),
    Box([0.0, 0.1, 0.0], [0.4, 0.3, 0.2]),
    Box([0.0, 0.0], [0.5, 0.2]),
    Torus([0, 0, 0], 0.5, 0.2),
    Segment([-0.5, 0.0, 0.1], [0.4, 0.3, -0.2]),
    Polyline([[-0.5, 0.0], [0.0, 0.4], [0.5, 0.0]]),
    rounded_polygon_2d(),
]


def test_sphere_example():
    s = Sphere([0, 0, 0], 1.0)
    assert sdf_eval(s, np.array([2.0, 0, 0])) == 1.0
    np.testing.assert_array_equal(sdf_grad(s, np.array([2.0, 0, 0])), [1, 0, 0])


def test_box_example():
    assert sdf_eval(Box([0, 0, 0], [0.5, 0.5, 0.5]), np.array([1.0, 0, 0])) == 0.5


def test_torus_example_matches_bruteforce():
    t = Torus([0, 0, 0], 0.5, 0.2)
    x = np.array([0.5 + 0.2 + 0.1, 0.0, 0.0])
    assert sdf_eval(t, x) == pytest.approx(0.1, abs=1e-12)
    assert torus_distance_bruteforce(x, 0.5, 0.2, n=400) == pytest.approx(0.1, abs=1e-6)
    y = np.array([0.3, 0.45, 0.1])
    assert abs(sdf_eval(t, y)) == pytest.approx(torus_distance_bruteforce(y, 0.5, 0.2, n=1500), abs=1e-6)


@pytest.mark.parametrize("shape", SHAPES, ids=lambda s: type(s).__name__ + str(s.dim))
def test_gradient_matches_finite_differences(shape, rng):
    X = rng.uniform(-1, 1, size=(400, shape.dim))
    g, flag = shape.grad_with_flags(X)
    fd = fd_gradient(shape, X, 1e-7)
    # skip points near kinks, where the two one-sided gradients differ
    fd_wide = fd_gradient(shape, X, 1e-3)
    smooth = ~flag & (np.linalg.norm(fd - fd_wide, axis=1) < 1e-4)
    assert smooth.mean() > 0.8
    np.testing.assert_allclose(g[smooth], fd[smooth], atol=1e-6)


@pytest.mark.parametrize("shape", SHAPES, ids=lambda s: type(s).__name__ + str(s.dim))
def test_eikonal_and_lipschitz(shape, rng):
    X = rng.uniform(-1, 1, size=(2000, shape.dim))
    g, _ = shape.grad_with_flags(X)
    np.testing.assert_allclose(np.linalg.norm(g, axis=1), 1.0, atol=1e-9)
    assert audit_lipschitz(shape, 20_000, seed=1) <= 1 + 1e-9


def test_medial_axis_subgradient_is_flagged():
    g, flag = Sphere([0, 0, 0], 1.0).grad_with_flags(np.zeros((1, 3)))
    assert flag[0] and np.linalg.norm(g[0]) == 1.0
    _, flag = Torus([0, 0, 0], 0.5, 0.2).grad_with_flags(np.array([[0.0, 0.0, 0.3]]))
    assert flag[0]


def test_unsigned_shapes_are_nonnegative(rng):
    X = rng.uniform(-1, 1, size=(1000, 2))
    assert Polyline([[-0.5, 0], [0.5, 0.2]]).value(X).min() >= 0
    assert not Segment([0, 0], [1, 0]).signed


def test_polygon_sign():
    sq = Polygon([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])
    assert sq.value(np.array([[0.0, 0.0]]))[0] == pytest.approx(-0.5)
    assert sq.value(np.array([[1.0, 0.0]]))[0] == pytest.approx(0.5)


def test_analytic_dataset_properties():
    ds = analytic_dataset(Sphere([0, 0], 0.25), 500, seed=0)
    assert (ds.y == -1).sum() == 500 and (ds.y == 1).sum() == 500
    assert np.all(ds.s_true[ds.y == -1] < 0)
    assert np.all(np.sign(ds.s_true) == ds.y)
    again = analytic_dataset(Sphere([0, 0], 0.25), 500, seed=0)
    assert np.array_equal(ds.X, again.X)


def test_analytic_dataset_shell():
    ds = analytic_dataset(Sphere([0, 0], 0.25), 500, seed=0, shell=0.05)
    assert np.abs(ds.s_true).min() > 0.05


def test_parse_shape():
    s = parse_shape("sphere:0,0,0:0.5")
    assert isinstance(s, Sphere) and s.radius == 0.5
    assert isinstance(parse_shape("torus:0,0,0:0.5:0.2"), Torus)
    assert isinstance(parse_shape("box:0,0:0.5,0.2"), Box)
    assert parse_shape("segment:0,0:1,0:0.1").radius == 0.1
    assert len(parse_shape("polyline:0,0;1,0;1,1").points) == 3
    for bad in ("cone:1", "sphere:0,0", "sphere:a,b:1"):
        with pytest.raises(ValueError):
            parse_shape(bad)
