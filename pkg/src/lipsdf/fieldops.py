"""Geometric queries on 1-Lipschitz scalar fields.

Everything here works through :class:`ScalarField`, a vectorized (value,
gradient) pair, so trained networks, closed-form SDFs and CSG composites are
interchangeable. Queries are only sound for fields that never overestimate the
distance to their zero level set, which holds for every 1-Lipschitz field.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (DOMAIN, SegmentSoup, TriangleSoup, winding_numbers_segments,
                       winding_numbers_triangles)

GRAD_EPS = 1e-6


class ScalarField:
    """A field ``R^n -> R`` with its spatial gradient, both vectorized over rows."""

    provenance = "analytic"

    def __init__(self, value_fn=None, grad_fn=None, dim: int = 3, provenance: str | None = None):
        self._value_fn = value_fn
        self._grad_fn = grad_fn
        self.dim = dim
        if provenance is not None:
            self.provenance = provenance

    def _value(self, X: np.ndarray) -> np.ndarray:
        return self._value_fn(X)

    def _grad(self, X: np.ndarray) -> np.ndarray:
        return self._grad_fn(X)

    def value(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            return self._value(X[None, :])[0]
        return self._value(X)

    def grad(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            return self._grad(X[None, :])[0]
        return self._grad(X)

    def __call__(self, X):
        return self.value(X)

    def __neg__(self) -> "ScalarField":
        return ScalarField(lambda X: -self._value(X), lambda X: -self._grad(X),
                           self.dim, self.provenance)


class NetField(ScalarField):
    """A :class:`~lipsdf.lipnet.LipNet` seen as a field.

    By default the field lives in the network's normalized coordinates (the
    training domain D), where it is 1-Lipschitz whatever the transform.
    """

    provenance = "net"

    def __init__(self, net, raw: bool = False):
        super().__init__(dim=net.input_dim)
        self.net = net
        self.raw = raw

    def _value(self, X):
        return self.net.value(X) if self.raw else self.net.forward_normalized(X)

    def _grad(self, X):
        return self.net.grad(X) if self.raw else self.net.grad_normalized(X)


class ScaledField(ScalarField):
    """``c * f``; for an exact SDF and ``0 < c <= 1`` this is an underestimator."""

    def __init__(self, field: ScalarField, c: float):
        super().__init__(dim=field.dim, provenance=field.provenance)
        self.field = field
        self.c = float(c)

    def _value(self, X):
        return self.c * self.field._value(X)

    def _grad(self, X):
        return self.c * self.field._grad(X)


class CsgField(ScalarField):
    """Pointwise min/max composition; the gradient is that of the active operand.

    Ties go to the first operand.
    """

    provenance = "csg-composite"

    def __init__(self, op: str, f1: ScalarField, f2: ScalarField):
        if op not in ("union", "intersect", "difference"):
            raise ValueError(f"unknown CSG operation {op!r}")
        if f1.dim != f2.dim:
            raise ValueError("CSG operands have different dimensions")
        super().__init__(dim=f1.dim)
        self.op = op
        self.f1 = f1
        self.f2 = f2

    def _operands(self, X):
        a = self.f1._value(X)
        b = self.f2._value(X)
        if self.op == "difference":
            b = -b
        pick_first = a <= b if self.op == "union" else a >= b
        return a, b, pick_first

    def _value(self, X):
        a, b, first = self._operands(X)
        return np.where(first, a, b)

    def _grad(self, X):
        _, _, first = self._operands(X)
        g1 = self.f1._grad(X)
        g2 = self.f2._grad(X)
        if self.op == "difference":
            g2 = -g2
        return np.where(first[:, None], g1, g2)


def csg_union(f1, f2) -> CsgField:
    return CsgField("union", f1, f2)


def csg_intersect(f1, f2) -> CsgField:
    return CsgField("intersect", f1, f2)


def csg_difference(f1, f2) -> CsgField:
    return CsgField("difference", f1, f2)


def evaluate_chunked(fn, X: np.ndarray, workers: int = 1, chunk: int = 16384) -> np.ndarray:
    """Apply a row-wise ``fn`` over chunks, optionally on a thread pool.

    Results are assembled by chunk index, so they do not depend on ``workers``.
    """
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        return fn(X)
    slices = [slice(s, min(len(X), s + chunk)) for s in range(0, len(X), chunk)]
    if workers <= 1 or len(slices) == 1:
        parts = [fn(X[sl]) for sl in slices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda sl: fn(X[sl]), slices))
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# Projection


@dataclass
class ProjectionResult:
    points: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    status: np.ndarray  # "converged" | "max_iter" | "stalled"


def project(field: ScalarField, x0, iso: float = 0.0, tol: float = 1e-4, max_iter: int = 100,
            raw_step: bool = False) -> ProjectionResult:
    """Iterate ``x <- x - (f(x) - iso) grad f(x) / |grad f(x)|`` until ``|f - iso| <= tol``.

    With ``raw_step`` the gradient is not normalized: ``x <- x - (f - iso) grad f``.
    On an exact SDF both variants land on the level set in one step.
    """
    X = np.atleast_2d(np.array(x0, dtype=np.float64))
    n = len(X)
    iters = np.zeros(n, dtype=np.int64)
    status = np.full(n, "max_iter", dtype=object)
    active = np.ones(n, dtype=bool)
    r = field.value(X) - iso
    for it in range(max_iter + 1):
        done = active & (np.abs(r) <= tol)
        status[done] = "converged"
        active &= ~done
        if not active.any() or it == max_iter:
            break
        idx = np.nonzero(active)[0]
        g = field.grad(X[idx])
        gn = np.linalg.norm(g, axis=1)
        stalled = gn < GRAD_EPS
        status[idx[stalled]] = "stalled"
        active[idx[stalled]] = False
        idx, g, gn = idx[~stalled], g[~stalled], gn[~stalled]
        step = r[idx][:, None] * (g if raw_step else g / gn[:, None])
        X[idx] = X[idx] - step
        iters[idx] += 1
        r[idx] = field.value(X[idx]) - iso
    return ProjectionResult(X, iters, np.abs(r), status)


# ---------------------------------------------------------------------------
# Sphere tracing


@dataclass
class HitRecord:
    status: np.ndarray  # "hit" | "miss" | "max_iter"
    t: np.ndarray
    points: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    interior_start: np.ndarray


def sphere_trace(field: ScalarField, origins, directions, t_max: float = 10.0,
                 surface_tol: float = 1e-4, max_iter: int = 200,
                 t_min_step: float = 1e-6) -> HitRecord:
    """March ``t <- t + max(f(o + t d), t_min_step)`` with unit step scale.

    A ray whose origin has ``f < 0`` is reported as a hit at ``t = 0`` with
    ``interior_start`` set.
    """
    O = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    D = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    O, D = np.broadcast_arrays(O, D)
    O, D = O.copy(), D.copy()
    nrm = np.linalg.norm(D, axis=1)
    if np.any(np.abs(nrm - 1.0) > 1e-9):
        raise ValueError("ray directions must be unit vectors")
    n = len(O)
    t = np.zeros(n)
    iters = np.zeros(n, dtype=np.int64)
    status = np.full(n, "max_iter", dtype=object)
    f = field.value(O)
    interior = f < 0
    status[interior] = "hit"
    active = ~interior
    for _ in range(max_iter):
        hit = active & (f <= surface_tol)
        status[hit] = "hit"
        active &= ~hit
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        t[idx] += np.maximum(f[idx], t_min_step)
        iters[idx] += 1
        miss = t[idx] > t_max
        status[idx[miss]] = "miss"
        active[idx[miss]] = False
        idx = idx[~miss]
        if len(idx):
            f[idx] = field.value(O[idx] + t[idx, None] * D[idx])
    else:
        hit = active & (f <= surface_tol)
        status[hit] = "hit"
    points = O + t[:, None] * D
    return HitRecord(status, t, points, iters, np.abs(f), interior)


@dataclass
class Camera:
    position: tuple = (0.0, 0.0, 3.0)
    look_at: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 1.0, 0.0)
    fov_deg: float = 40.0

    def rays(self, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
        """Row-major pixel-center rays, top row first."""
        eye = np.asarray(self.position, dtype=np.float64)
        fwd = np.asarray(self.look_at, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        if np.linalg.norm(right) == 0:
            raise ValueError("camera up vector is parallel to the view direction")
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        half_h = math.tan(math.radians(self.fov_deg) / 2.0)
        half_w = half_h * width / height
        px = ((np.arange(width) + 0.5) / width * 2.0 - 1.0) * half_w
        py = (1.0 - (np.arange(height) + 0.5) / height * 2.0) * half_h
        gx, gy = np.meshgrid(px, py)
        d = fwd[None, :] + gx.reshape(-1, 1) * right[None, :] + gy.reshape(-1, 1) * up[None, :]
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.broadcast_to(eye, d.shape).copy(), d


BACKGROUND = np.array([30, 30, 38], dtype=np.uint8)


def render(field: ScalarField, camera: Camera, width: int = 256, height: int = 256,
           shading: str = "lambert", t_max: float = 10.0, surface_tol: float = 1e-4,
           max_iter: int = 200, workers: int = 1) -> np.ndarray:
    """Sphere-trace one ray per pixel; returns an ``(height, width, 3)`` uint8 image."""
    if shading not in ("normal", "depth", "lambert"):
        raise ValueError(f"unknown shading {shading!r}")
    O, D = camera.rays(width, height)
    rays = np.concatenate([O, D], axis=1)

    def trace(block):
        rec = sphere_trace(field, block[:, :3], block[:, 3:], t_max, surface_tol, max_iter)
        hit = rec.status == "hit"
        return np.concatenate([hit[:, None], rec.t[:, None], rec.points], axis=1)

    out = evaluate_chunked(trace, rays, workers, chunk=4096)
    hit = out[:, 0] > 0
    img = np.tile(BACKGROUND, (len(out), 1))
    if hit.any():
        P = out[hit, 2:5]
        if shading == "depth":
            t = out[hit, 1]
            lo, hi = t.min(), t.max()
            shade = 1.0 - (t - lo) / (hi - lo) if hi > lo else np.ones_like(t)
            img[hit] = np.clip(40 + 215 * shade, 0, 255).astype(np.uint8)[:, None]
        else:
            g = field.grad(P)
            nrm = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), GRAD_EPS)
            if shading == "normal":
                img[hit] = np.clip((nrm * 0.5 + 0.5) * 255, 0, 255).astype(np.uint8)
            else:
                light = np.array([0.4, 0.7, 0.6])
                light /= np.linalg.norm(light)
                lam = np.clip(nrm @ light, 0.0, 1.0)
                base = np.array([200.0, 180.0, 150.0])
                img[hit] = np.clip(base * (0.15 + 0.85 * lam[:, None]), 0, 255).astype(np.uint8)
    return img.reshape(height, width, 3)


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def write_image(path, img: np.ndarray) -> None:
    """PPM (P6) by default; PNG when the suffix asks for it."""
    if str(path).lower().endswith(".png"):
        from PIL import Image
        Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path, format="PNG")
    else:
        write_ppm(path, img)


# ---------------------------------------------------------------------------
# Medial axis, audits


def fd_gradient(field: ScalarField, X: np.ndarray, h: float) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    g = np.empty_like(X)
    for i in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[i] = h
        g[:, i] = (field.value(X + e) - field.value(X - e)) / (2 * h)
    return g


def medial_axis_sample(field: ScalarField, n_candidates: int, gamma: float, seed: int = 0,
                       signed: bool = True, fd_step: float | None = None) -> np.ndarray:
    """Uniform candidates in D kept where ``f < 0`` (signed fields) and ``|grad f| <= gamma``.

    ``fd_step`` replaces the analytic gradient with central differences, which
    is how a kink in a closed-form SDF shows up as a norm drop.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    X = rng.uniform(DOMAIN[0], DOMAIN[1], size=(n_candidates, field.dim))
    if signed:
        X = X[field.value(X) < 0]
    if len(X) == 0:
        return X
    g = field.grad(X) if fd_step is None else fd_gradient(field, X, fd_step)
    return X[np.linalg.norm(g, axis=1) <= gamma]


def audit_lipschitz(field: ScalarField, n_pairs: int = 100_000, seed: int = 0,
                    near_fraction: float = 0.5, bounds=DOMAIN) -> float:
    """Largest ``|f(a) - f(b)| / |a - b|`` over random pairs.

    Part of the pairs is uniform in the box; the rest are short pairs
    (length log-uniform in [1e-4, 1e-1]) anchored at the candidates with the
    smallest ``|f|``, i.e. near the zero level set.
    """
    if n_pairs <= 0:
        return 0.0
    rng = np.random.default_rng(seed)
    lo, hi = bounds
    dim = field.dim
    n_near = int(n_pairs * near_fraction)
    n_uni = n_pairs - n_near
    A = rng.uniform(lo, hi, size=(n_uni, dim))
    B = rng.uniform(lo, hi, size=(n_uni, dim))
    if n_near:
        cand = rng.uniform(lo, hi, size=(4 * n_near, dim))
        fc = np.abs(field.value(cand))
        anchors = cand[np.argsort(fc, kind="stable")[:n_near]]
        u = rng.standard_normal((n_near, dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = 10 ** rng.uniform(-4, -1, size=n_near)
        A = np.concatenate([A, anchors])
        B = np.concatenate([B, anchors + r[:, None] * u])
    dist = np.linalg.norm(A - B, axis=1)
    ok = dist > 0
    q = np.abs(field.value(A) - field.value(B))[ok] / dist[ok]
    return float(q.max()) if q.size else 0.0


def _closest_on_triangles(P: np.ndarray, A: np.ndarray, B: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Closest point on triangle (A_i, B_i, C_i) to P_i, row by row (Voronoi-region method)."""
    ab, ac, ap = B - A, C - A, P - A
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = P - B
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = P - C
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(P)
    done = np.zeros(len(P), dtype=bool)

    def assign(mask, val):
        m = mask & ~done
        out[m] = val[m] if val.ndim == 2 else val
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), A)
        assign((d3 >= 0) & (d4 <= d3), B)
        assign((d6 >= 0) & (d5 <= d6), C)
        v = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), A + v[:, None] * ab)
        w = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), A + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), B + w[:, None] * (C - B))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        assign(np.ones(len(P), dtype=bool), A + v[:, None] * ab + w[:, None] * ac)
    return out


def _closest_on_segments(P, A, B):
    d = B - A
    dd = np.einsum("ij,ij->i", d, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.clip(np.einsum("ij,ij->i", P - A, d) / dd, 0.0, 1.0)
    t = np.where(dd > 0, t, 0.0)
    return A + t[:, None] * d


def mesh_distance(mesh, X) -> np.ndarray:
    """Exact unsigned distance from each row of X to a triangle soup (3D) or segment soup (2D).

    A KD-tree over element centroids limits the candidates: the distance to the
    nearest vertex bounds the answer, and any element that can beat it has its
    centroid within that bound plus the largest element radius.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if isinstance(mesh, TriangleSoup):
        E = mesh.corners()
        closest = _closest_on_triangles
    elif isinstance(mesh, SegmentSoup):
        E = mesh.vertices[mesh.segments]
        closest = _closest_on_segments
    else:
        raise TypeError("mesh must be a TriangleSoup or SegmentSoup")
    if len(E) == 0:
        raise ValueError("empty mesh")
    cent = E.mean(axis=1)
    rad = np.linalg.norm(E - cent[:, None, :], axis=2).max()
    upper, _ = cKDTree(E.reshape(-1, E.shape[2])).query(X)
    cand = cKDTree(cent).query_ball_point(X, upper + rad + 1e-12)
    qi = np.repeat(np.arange(len(X)), [len(c) for c in cand])
    ei = np.concatenate([np.asarray(c, dtype=np.int64) for c in cand])
    out = upper.copy()
    step = 2_000_000
    for s in range(0, len(qi), step):
        q, e = qi[s:s + step], ei[s:s + step]
        P = X[q]
        cp = closest(P, *[E[e, j] for j in range(E.shape[1])])
        d = np.linalg.norm(P - cp, axis=1)
        np.minimum.at(out, q, d)
    return out


def signed_mesh_distance(mesh, X) -> np.ndarray:
    """Mesh distance signed by the mesh's own winding number (negative where w > 1/2)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    d = mesh_distance(mesh, X)
    V = mesh.vertices
    inbox = np.all((X >= V.min(axis=0)) & (X <= V.max(axis=0)), axis=1)
    sign = np.ones(len(X))
    if inbox.any():
        wind = winding_numbers_triangles if isinstance(mesh, TriangleSoup) else winding_numbers_segments
        w, _ = wind(mesh, X[inbox])
        sign[inbox] = np.where(w > 0.5, -1.0, 1.0)
    return sign * d


@dataclass
class UnderestimationReport:
    points: np.ndarray
    f: np.ndarray
    s_mesh: np.ndarray

    @property
    def diff(self) -> np.ndarray:
        return self.f - self.s_mesh

    @property
    def max_diff(self) -> float:
        return float(self.diff.max()) if len(self.diff) else float("-inf")

    @property
    def max_magnitude_excess(self) -> float:
        """Largest ``|f| - |S|``: positive values mean the field overestimates the distance."""
        d = np.abs(self.f) - np.abs(self.s_mesh)
        return float(d.max()) if len(d) else float("-inf")

    def histogram(self, bins: int = 50):
        if len(self.diff) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        return np.histogram(self.diff, bins=bins)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            dim = self.points.shape[1] if self.points.ndim == 2 else 3
            fh.write(",".join(["x", "y", "z"][:dim] + ["f", "s_mesh", "diff"]) + "\n")
            for p, fv, sv in zip(self.points, self.f, self.s_mesh):
                fh.write(",".join(repr(float(v)) for v in (*p, fv, sv, fv - sv)) + "\n")


def audit_underestimation(field: ScalarField, mesh, n_points: int = 100_000,
                          radius: float = 3.0, seed: int = 0) -> UnderestimationReport:
    """Compare the field with the exact signed distance to a mesh at points uniform in a ball."""
    dim = field.dim
    if n_points == 0:
        z = np.zeros(0)
        return UnderestimationReport(np.zeros((0, dim)), z, z)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n_points, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = radius * rng.random(n_points) ** (1.0 / dim)
    X = u * r[:, None]
    return UnderestimationReport(X, field.value(X), signed_mesh_distance(mesh, X))
