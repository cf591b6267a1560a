"""Acceptance criteria, one test per criterion (or per clause when a criterion has parts).

Each test prints a single ``PASS``/``FAIL`` line with the measured values,
then asserts at the stated tolerance.
"""
import math
import time

import numpy as np
import pytest
from scipy import ndimage

from lipsdf.cli import main as cli_main
from lipsdf.extract import (connected_components, euler_characteristic, marching_cubes,
                            marching_squares, mesh_area, planar_slice, sample_grid)
from lipsdf.fieldops import (NetField, ScaledField, audit_lipschitz, audit_underestimation,
                             csg_intersect, csg_union, project, sphere_trace)
from lipsdf.geometry import (OrientedPointCloud, SegmentSoup, build_signed_dataset,
                             build_unsigned_dataset, estimate_areas, icosphere, normalize,
                             winding_numbers_points, winding_numbers_triangles, write_obj)
from lipsdf.lipnet import AffineHead, LipNet, SllLayer, init_net
from lipsdf.oracles import Box, Sphere, Torus, analytic_dataset
from lipsdf.trainer import TrainConfig, train

pytestmark = pytest.mark.slow

BOUND = 1 + 1e-9


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail, t0):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail} "
                  f"[{time.perf_counter() - t0:.1f}s]")
    return emit


# ---------------------------------------------------------------------------
# 1. Lipschitz by construction


def _lipschitz_checks(net, seed):
    field = NetField(net)
    q = audit_lipschitz(field, 100_000, seed=seed)
    g = float(planar_slice(field, (-1, 1), 64, quantity="gradnorm").values.max())
    return q, g


def test_criterion_1_lipschitz_by_construction(report):
    t0 = time.perf_counter()
    worst_q = worst_g = 0.0
    for i in range(20):
        net = init_net(2 + i % 2, k=(8, 16, 32)[i % 3], depth=1 + i % 8, seed=i)
        q, g = _lipschitz_checks(net, seed=i)
        worst_q, worst_g = max(worst_q, q), max(worst_g, g)

    per_epoch = []

    def check(epoch, net, rec):
        per_epoch.append(_lipschitz_checks(net, seed=100 + epoch))

    ds = analytic_dataset(Sphere([0.0, 0.0], 0.25), 1000, seed=0)
    train(ds, TrainConfig(depth=8, k=32, epochs=10, batch_size=256, seed=0), callback=check)
    trained_q = max(q for q, _ in per_epoch)
    trained_g = max(g for _, g in per_epoch)
    ok = max(worst_q, worst_g, trained_q, trained_g) <= BOUND and len(per_epoch) == 10
    report(1, ok, f"random nets quotient {worst_q:.12f} gradnorm {worst_g:.12f}; "
                  f"depth-8 run over {len(per_epoch)} epochs quotient {trained_q:.12f} "
                  f"gradnorm {trained_g:.12f} (bound {BOUND})", t0)
    assert ok


# ---------------------------------------------------------------------------
# 2. Gradient correctness


def _random_config(rng):
    k = int(rng.choice([4, 8, 16]))
    dim = int(rng.integers(2, 4))
    depth = int(rng.integers(1, 4))
    layers = [SllLayer(rng.normal(scale=0.7, size=(k, k)), rng.normal(size=k), rng.normal(size=k))
              for _ in range(depth)]
    net = LipNet(dim, layers, AffineHead(rng.normal(size=k), rng.normal()))
    Z = rng.uniform(-1, 1, size=(4, dim))
    return net, Z


def _clear_of_kinks(net, Z):
    _, tape = net.forward_tape(Z)
    if min(np.abs(c.Z).min() for c in tape.caches) < 1e-4:
        return False
    return all(np.abs(layer.W.T @ layer.W).min() > 1e-4 for layer in net.layers)


def _rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-3)))


def test_criterion_2_gradient_correctness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    h = 1e-6
    worst = 0.0
    n_cfg = 0
    while n_cfg < 100:
        net, Z = _random_config(rng)
        if not _clear_of_kinks(net, Z):
            continue
        c = rng.normal(size=len(Z))
        f, tape = net.forward_tape(Z)
        dZ, grads = net.backward(tape, c)
        loss = lambda: float(c @ net.forward_normalized(Z))  # noqa: E731
        for p, g in zip(net.params(), grads):
            flat = p.reshape(-1)
            fd = np.empty_like(flat)
            for j in range(flat.size):
                old = flat[j]
                flat[j] = old + h
                up = loss()
                flat[j] = old - h
                dn = loss()
                flat[j] = old
                fd[j] = (up - dn) / (2 * h)
            worst = max(worst, _rel_err(g.reshape(-1), fd))
        # input gradient, one point at a time
        fd = np.empty_like(Z)
        for i in range(Z.shape[0]):
            for j in range(Z.shape[1]):
                old = Z[i, j]
                Z[i, j] = old + h
                up = loss()
                Z[i, j] = old - h
                dn = loss()
                Z[i, j] = old
                fd[i, j] = (up - dn) / (2 * h)
        worst = max(worst, _rel_err(dZ, fd))
        n_cfg += 1
    ok = worst <= 1e-5
    report(2, ok, f"{n_cfg} configurations, max relative error {worst:.3e} (bound 1e-5)", t0)
    assert ok


# ---------------------------------------------------------------------------
# 3. Distance reproduction on the circle

CIRCLE = Sphere([0.0, 0.0], 0.25)
C3_EPOCHS = 300


@pytest.fixture(scope="module")
def circle_run():
    t0 = time.perf_counter()
    ds = analytic_dataset(CIRCLE, 10_000, seed=0)
    net, log = train(ds, TrainConfig(depth=8, k=64, margin=1e-2, lam=100.0, epochs=C3_EPOCHS,
                                     seed=0))
    g = np.linspace(-1.0, 1.0, 200)
    X = np.stack(np.meshgrid(g, g, indexing="xy"), axis=-1).reshape(-1, 2)
    S = CIRCLE.value(X)
    keep = np.abs(S) > 3 * 1e-2
    f = NetField(net).value(X[keep])
    return f, S[keep], log, time.perf_counter() - t0


def test_criterion_3_accuracy_outside_shell(report, circle_run):
    t0 = time.perf_counter()
    f, S, log, secs = circle_run
    frac = float(np.mean(np.abs(f - S) <= 0.05))
    ok = frac >= 0.95
    report("3 (accuracy)", ok, f"{C3_EPOCHS} epochs in {secs:.0f}s; {frac:.4%} of {len(S)} grid points "
                               f"with |f-S| <= 0.05 (need >= 95%); final hinge "
                               f"{log.records[-1].hinge:.2e}", t0)
    assert ok


def test_criterion_3_underestimation(report, circle_run):
    t0 = time.perf_counter()
    f, S, _, _ = circle_run
    excess = np.abs(f) - np.abs(S)
    frac = float(np.mean(excess <= 1e-6))
    ok = frac == 1.0
    report("3 (underestimation)", ok, f"{frac:.4%} of points with |f| <= |S| + 1e-6 (need 100%); "
                                      f"max |f|-|S| = {excess.max():.4e}", t0)
    assert ok


# ---------------------------------------------------------------------------
# 4. Winding exactness


def test_criterion_4_winding_exactness(report):
    t0 = time.perf_counter()
    mesh = icosphere(3)
    assert len(mesh.triangles) == 1280
    rng = np.random.default_rng(4)
    Q = rng.uniform(-1.5, 1.5, size=(4000, 3))
    Q = Q[np.abs(np.linalg.norm(Q, axis=1) - 1.0) > 0.05][:1000]
    w, flag = winding_numbers_triangles(mesh, Q)
    expect = (np.linalg.norm(Q, axis=1) < 1.0).astype(float)
    dev = float(np.abs(w - expect).max())

    verts = mesh.vertices
    cloud = estimate_areas(OrientedPointCloud(verts, verts / np.linalg.norm(verts, axis=1, keepdims=True)))
    flipped = OrientedPointCloud(cloud.points, -cloud.normals, cloud.areas)
    wa, _ = winding_numbers_points(cloud, Q)
    wb, _ = winding_numbers_points(flipped, Q)
    anti = float(np.abs(wa + wb).max())
    ok = len(Q) == 1000 and not flag.any() and dev <= 1e-9 and anti <= 1e-12
    report(4, ok, f"1000 queries, max |w - containment| {dev:.2e} (bound 1e-9); "
                  f"point-cloud flip antisymmetry {anti:.2e}", t0)
    assert ok


# ---------------------------------------------------------------------------
# 5. Query soundness

SPHERE5 = Sphere([0.0, 0.0, 0.0], 0.5)
BOX5 = Box([0.0, 0.0, 0.0], [0.4, 0.3, 0.2])
TORUS5 = Torus([0.0, 0.0, 0.0], 0.5, 0.2)


def _first_hit_sphere(O, D, r):
    b = np.einsum("ij,ij->i", O, D)
    c = np.einsum("ij,ij->i", O, O) - r * r
    disc = b * b - c
    t = -b - np.sqrt(np.maximum(disc, 0.0))
    return np.where(disc >= 0, t, np.inf)


def _first_hit_box(O, D, half):
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - O) / D
        t2 = (half - O) / D
    tn = np.minimum(t1, t2).max(axis=1)
    tf = np.maximum(t1, t2).min(axis=1)
    return np.where((tn <= tf) & (tf >= 0), np.maximum(tn, 0.0), np.inf)


def _first_hit_torus(O, D, R, r):
    out = np.full(len(O), np.inf)
    for i, (o, d) in enumerate(zip(O, D)):
        b = 2 * o @ d
        c = o @ o + R * R - r * r
        dxy = d[0] ** 2 + d[1] ** 2
        coeffs = [1.0, 2 * b, b * b + 2 * c - 4 * R * R * dxy,
                  2 * b * c - 8 * R * R * (o[0] * d[0] + o[1] * d[1]),
                  c * c - 4 * R * R * (o[0] ** 2 + o[1] ** 2)]
        roots = np.roots(coeffs)
        real = roots[np.abs(roots.imag) < 1e-7].real
        real = real[real >= 0]
        if real.size:
            out[i] = real.min()
    return out


def test_criterion_5_sphere_tracing(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    n = 10_000
    u = rng.standard_normal((n, 3))
    O = 3.0 * u / np.linalg.norm(u, axis=1, keepdims=True)
    D = rng.uniform(-0.7, 0.7, size=(n, 3)) - O
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    truth = {
        "sphere": (SPHERE5, _first_hit_sphere(O, D, 0.5)),
        "box": (BOX5, _first_hit_box(O, D, BOX5.half)),
        "torus": (TORUS5, _first_hit_torus(O, D, 0.5, 0.2)),
    }
    tunnels = bad_hits = unresolved = 0
    worst = 0.0
    for name, (shape, t_star) in truth.items():
        for c in (0.3, 0.7, 1.0):
            rec = sphere_trace(ScaledField(shape, c), O, D, t_max=10.0, surface_tol=1e-7,
                               max_iter=5000)
            hit = rec.status == "hit"
            has = np.isfinite(t_star)
            # passing the first analytic intersection, or missing a surface that is there
            tunnels += int(np.sum(hit & has & (rec.t > t_star + 1e-3)))
            tunnels += int(np.sum((rec.status == "miss") & has))
            err = np.linalg.norm(rec.points[hit] - (O + t_star[:, None] * D)[hit], axis=1)
            err = np.where(np.isfinite(err), err, np.inf)
            bad_hits += int(np.sum(err > 1e-3))
            worst = max(worst, float(err.max()) if err.size else 0.0)
            unresolved += int(np.sum(rec.status == "max_iter"))
    ok = tunnels == 0 and bad_hits == 0
    report("5 (tracing)", ok, f"90000 rays: {tunnels} tunneling events, {bad_hits} hits farther than "
                              f"1e-3 from the analytic intersection (max {worst:.2e}), "
                              f"{unresolved} rays at max_iter", t0)
    assert ok


def _projection_starts(rng, shape):
    X = rng.uniform(-1, 1, size=(2000, 3))
    return X[np.abs(shape.value(X)) > 1e-3]


def _stated_bound(c, tol=1e-4):
    return math.ceil(math.log(tol) / math.log(1 - c)) if c < 1 else 1


def _projection_check(raw_step):
    rng = np.random.default_rng(55)
    worst_ratio = 0.0
    fails = 0
    total = 0
    for shape in (SPHERE5, BOX5, TORUS5):
        X = _projection_starts(rng, shape)
        for c in (0.3, 0.7, 1.0):
            res = project(ScaledField(shape, c), X, tol=1e-4, max_iter=1000, raw_step=raw_step)
            bound = _stated_bound(c)
            bad = (res.residual > 1e-4) | (res.iterations > bound)
            fails += int(bad.sum())
            total += len(X)
            worst_ratio = max(worst_ratio, float(res.iterations.max()) / bound)
    return fails, total, worst_ratio


def test_criterion_5_projection_exact_sdf(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(56)
    worst = 0
    for shape in (SPHERE5, BOX5, TORUS5):
        X = _projection_starts(rng, shape)
        for raw in (False, True):
            res = project(shape, X, tol=1e-4, raw_step=raw)
            assert np.all(res.status == "converged")
            worst = max(worst, int(res.iterations.max()))
    ok = worst == 1
    report("5 (projection, exact SDF)", ok, f"max iterations {worst} (need 1), both step modes", t0)
    assert ok


def test_criterion_5_projection_normalized_step(report):
    t0 = time.perf_counter()
    fails, total, ratio = _projection_check(raw_step=False)
    ok = fails == 0
    report("5 (projection, normalized step)", ok,
           f"{fails}/{total} starts exceed residual 1e-4 or ceil(log 1e-4 / log(1-c)) iterations; "
           f"max iterations / bound {ratio:.2f}", t0)
    assert ok


def test_criterion_5_projection_raw_step(report):
    t0 = time.perf_counter()
    fails, total, ratio = _projection_check(raw_step=True)
    ok = fails == 0
    report("5 (projection, raw step)", ok,
           f"{fails}/{total} starts exceed residual 1e-4 or ceil(log 1e-4 / log(1-c)) iterations; "
           f"max iterations / bound {ratio:.2f}", t0)
    assert ok


# ---------------------------------------------------------------------------
# 6. Extraction fidelity


def test_criterion_6_extraction_fidelity(report):
    t0 = time.perf_counter()
    sphere = Sphere([0.0, 0.0, 0.0], 0.5)
    errs = {}
    for res in (64, 128):
        g = sample_grid(sphere, (-1, 1), res)
        m = marching_cubes(g, 0.0)
        errs[res] = (float(np.abs(np.linalg.norm(m.vertices, axis=1) - 0.5).max()), g.spacing, m)
    err, h, mesh = errs[128]
    area_err = abs(mesh_area(mesh) / (4 * math.pi * 0.25) - 1)
    chi = euler_characteristic(mesh)
    chi_t = euler_characteristic(marching_cubes(sample_grid(Torus([0, 0, 0], 0.5, 0.2), (-1, 1), 128), 0.0))
    halves = errs[128][0] <= 0.5 * errs[64][0]
    ok = err <= h and area_err <= 0.03 and chi == 2 and chi_t == 0 and halves
    report(6, ok, f"128^3 max vertex error {err:.2e} (h {h:.2e}), area error {area_err:.3%}, "
                  f"chi sphere {chi}, chi torus {chi_t}; error at 64^3 {errs[64][0]:.2e}", t0)
    assert ok


# ---------------------------------------------------------------------------
# 7. Unsigned margin effect


def test_criterion_7_unsigned_margin_effect(report):
    t0 = time.perf_counter()
    th = np.linspace(0.25 * np.pi, 1.75 * np.pi, 65)
    arc = SegmentSoup.polygon(0.5 * np.stack([np.cos(th), np.sin(th)], axis=1), closed=False)
    ds = build_unsigned_dataset(arc, 5000, seed=0)
    thick, shape_ok = {}, {}
    for m in (0.1, 0.01):
        net, _ = train(ds, TrainConfig(depth=8, k=64, margin=m, epochs=100, seed=0))
        g = sample_grid(NetField(net), (-1, 1), 256)
        neg = g.values < 0
        thick[m] = float(ndimage.distance_transform_edt(neg).max() * g.spacing) if neg.any() else 0.0
        pl = marching_squares(g, 0.0)
        shape_ok[m] = len(pl.chains) > 0 and all(pl.closed)
    ok = all(shape_ok.values()) and thick[0.01] < thick[0.1]
    report(7, ok, f"thickness m=0.1: {thick[0.1]:.4f}, m=0.01: {thick[0.01]:.4f}; "
                  f"nonempty closed level sets {shape_ok}", t0)
    assert ok


# ---------------------------------------------------------------------------
# 8. Underestimation against the extracted mesh

C8_MARGIN = 1e-2
C8_EPOCHS = 100


def test_criterion_8_underestimation_vs_mesh(report):
    t0 = time.perf_counter()
    mesh, _ = normalize(icosphere(3))
    ds = build_signed_dataset(mesh, 5000, seed=0)
    net, _ = train(ds, TrainConfig(depth=8, k=64, margin=C8_MARGIN, epochs=C8_EPOCHS, seed=0))
    field = NetField(net)
    grid = sample_grid(field, (-1, 1), 64)
    extracted = marching_cubes(grid, 0.0)
    rep = audit_underestimation(field, extracted, 10_000, radius=3.0, seed=0)
    bound = 2 * C8_MARGIN + grid.cell_diagonal
    ok = rep.max_diff <= bound and connected_components(extracted) >= 1
    report(8, ok, f"max f - S_mesh {rep.max_diff:.4e} (bound {bound:.4e}); "
                  f"max |f| - |S_mesh| {rep.max_magnitude_excess:.4e}", t0)
    assert ok



# ---------------------------------------------------------------------------
# 9. CSG


def test_criterion_9_csg(report):
    t0 = time.perf_counter()
    a, b = Sphere([0.3, 0.0, 0.0], 0.5), Sphere([-0.3, 0.1, 0.0], 0.4)
    X = np.random.default_rng(9).uniform(-1, 1, size=(100_000, 3))
    fa, fb = a.value(X), b.value(X)
    u, n = csg_union(a, b), csg_intersect(a, b)
    qu, qn = audit_lipschitz(u, 100_000, seed=1), audit_lipschitz(n, 100_000, seed=2)
    fu, fn = u.value(X), n.value(X)
    bounds_ok = (np.all(fu <= fa) and np.all(fu <= fb) and np.all(fn >= fa) and np.all(fn >= fb)
                 and np.array_equal(fu, np.minimum(fa, fb)) and np.array_equal(fn, np.maximum(fa, fb)))
    ok = qu <= BOUND and qn <= BOUND and bounds_ok
    report(9, ok, f"quotient union {qu:.12f}, intersection {qn:.12f}; min/max bounds on 1e5 "
                  f"samples {'hold' if bounds_ok else 'violated'}", t0)
    assert ok


# ---------------------------------------------------------------------------
# 10. Reproducibility


def _pipeline(root, mesh_path):
    files = {
        "data": root / "data.csv", "net": root / "net.lndf", "log": root / "log.csv",
        "mesh": root / "mesh.obj", "image": root / "img.ppm", "audit": root / "audit.csv",
        "points": root / "points.csv", "heat": root / "heat.ppm", "query": root / "query.csv",
        "csg": root / "csg.obj",
    }
    steps = [
        ["label", str(mesh_path), "--n", "500", "--seed", "3", "--out", str(files["data"])],
        ["train", str(files["data"]), "--depth", "3", "--k", "16", "--epochs", "3",
         "--batch-size", "128", "--seed", "3", "--log", str(files["log"]), "--out", str(files["net"])],
        ["extract", str(files["net"]), "--res", "24", "--out", str(files["mesh"])],
        ["render", str(files["net"]), "--width", "32", "--height", "32", "--out", str(files["image"])],
        ["audit", str(files["net"]), "--check", "underestimate", "--n", "2000", "--res", "24",
         "--out", str(files["audit"]), "--points-csv", str(files["points"])],
        ["audit", str(files["net"]), "--check", "gradnorm", "--res", "24", "--image", str(files["heat"])],
        ["query", str(files["net"]), "--skeleton", "2000", "0.9", "--out", str(files["query"])],
        ["csg", str(files["net"]), "sphere:0,0,0:0.3", "--op", "difference", "--res", "24",
         "--extract-out", str(files["csg"])],
    ]
    for argv in steps:
        cli_main(argv)
    files["transform"] = root / "data.transform.json"
    return files


def test_criterion_10_reproducibility(report, tmp_path):
    t0 = time.perf_counter()
    mesh = icosphere(2, radius=0.7)
    src = tmp_path / "ico.obj"
    write_obj(src, mesh.vertices, mesh.triangles)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    fa = _pipeline(tmp_path / "a", src)
    fb = _pipeline(tmp_path / "b", src)
    missing = [k for k in fa if not fa[k].exists()]
    differ = [k for k in fa if k not in missing and fa[k].read_bytes() != fb[k].read_bytes()]
    ok = not missing and not differ
    report(10, ok, f"{len(fa)} output files compared; missing {missing}, differing {differ}", t0)
    assert ok
