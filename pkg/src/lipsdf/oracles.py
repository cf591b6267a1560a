"""Closed-form distance fields with exact gradients.

Used as ground truth in tests, as targets for supervised fitting, and as CSG
operands. Segments and polylines are unsigned (no interior).
"""

from __future__ import annotations

import numpy as np

from .fieldops import ScalarField
from .geometry import DOMAIN, LabeledDataset, SamplingBudgetError, uniform_in_domain

_AXIS_EPS = 1e-15


def _unit_or_e1(v: np.ndarray, n: np.ndarray):
    """Rows of ``v / n``; rows with ``n == 0`` get e1 and are flagged."""
    flag = n <= _AXIS_EPS
    out = np.zeros_like(v)
    safe = ~flag
    out[safe] = v[safe] / n[safe, None]
    out[flag, 0] = 1.0
    return out, flag


class AnalyticSdf(ScalarField):
    signed = True

    def grad_with_flags(self, X) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _grad(self, X):
        return self.grad_with_flags(X)[0]


class Sphere(AnalyticSdf):
    """Circle in 2D, sphere in 3D."""

    def __init__(self, center, radius: float):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)
        super().__init__(dim=len(self.center))

    def _value(self, X):
        return np.linalg.norm(X - self.center, axis=1) - self.radius

    def grad_with_flags(self, X):
        d = np.atleast_2d(X) - self.center
        return _unit_or_e1(d, np.linalg.norm(d, axis=1))


class Box(AnalyticSdf):
    def __init__(self, center, half_extents):
        self.center = np.asarray(center, dtype=np.float64)
        self.half = np.asarray(half_extents, dtype=np.float64)
        super().__init__(dim=len(self.center))

    def _value(self, X):
        q = np.abs(X - self.center) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        return outside + np.minimum(q.max(axis=1), 0.0)

    def grad_with_flags(self, X):
        X = np.atleast_2d(X)
        d = X - self.center
        s = np.where(d >= 0, 1.0, -1.0)
        q = np.abs(d) - self.half
        qp = np.maximum(q, 0.0)
        out_n = np.linalg.norm(qp, axis=1)
        g = np.zeros_like(X)
        outside = out_n > 0
        g[outside] = s[outside] * qp[outside] / out_n[outside, None]
        inside = ~outside
        srt = np.sort(q[inside], axis=1)
        flag = np.zeros(len(X), dtype=bool)
        if inside.any():
            k = np.argmax(q[inside], axis=1)
            gi = np.zeros((inside.sum(), X.shape[1]))
            gi[np.arange(len(k)), k] = s[inside][np.arange(len(k)), k]
            g[inside] = gi
            flag[inside] = (srt[:, -1] - srt[:, -2]) <= _AXIS_EPS
        return g, flag


class Segment(AnalyticSdf):
    """Distance to segment [a, b] minus ``radius`` (radius 0: unsigned distance)."""

    signed = False

    def __init__(self, a, b, radius: float = 0.0):
        self.a = np.asarray(a, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.radius = float(radius)
        super().__init__(dim=len(self.a))

    def _offset(self, X):
        d = self.b - self.a
        dd = float(d @ d)
        t = np.clip((X - self.a) @ d / dd, 0.0, 1.0) if dd > 0 else np.zeros(len(X))
        return X - (self.a + t[:, None] * d)

    def _value(self, X):
        return np.linalg.norm(self._offset(X), axis=1) - self.radius

    def grad_with_flags(self, X):
        v = self._offset(np.atleast_2d(X))
        return _unit_or_e1(v, np.linalg.norm(v, axis=1))


class Polyline(AnalyticSdf):
    """Unsigned distance to an open polyline."""

    signed = False

    def __init__(self, points):
        self.points = np.asarray(points, dtype=np.float64)
        if len(self.points) < 2:
            raise ValueError("polyline needs at least two points")
        super().__init__(dim=self.points.shape[1])

    def _offsets(self, X):
        A = self.points[:-1]
        D = self.points[1:] - A
        dd = np.einsum("ij,ij->i", D, D)
        rel = X[:, None, :] - A[None]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.clip(np.einsum("qsk,sk->qs", rel, D) / dd, 0.0, 1.0)
        t = np.where(dd > 0, t, 0.0)
        off = rel - t[..., None] * D[None]
        dist = np.linalg.norm(off, axis=2)
        k = np.argmin(dist, axis=1)
        rows = np.arange(len(X))
        return off[rows, k], dist[rows, k]

    def _value(self, X):
        return self._offsets(X)[1]

    def grad_with_flags(self, X):
        off, dist = self._offsets(np.atleast_2d(X))
        return _unit_or_e1(off, dist)


class Polygon(AnalyticSdf):
    """Signed distance to a simple closed 2D polygon, optionally rounded by ``rounding``."""

    def __init__(self, points, rounding: float = 0.0):
        self.points = np.asarray(points, dtype=np.float64)
        self.rounding = float(rounding)
        self._edges = Polyline(np.concatenate([self.points, self.points[:1]]))
        super().__init__(dim=2)

    def _sign(self, X):
        P = self.points
        Q = np.roll(P, -1, axis=0)
        # even-odd crossing test
        xi, yi = P[:, 0][None], P[:, 1][None]
        xj, yj = Q[:, 0][None], Q[:, 1][None]
        x, y = X[:, 0:1], X[:, 1:2]
        cond = (yi > y) != (yj > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (xj - xi) * (y - yi) / (yj - yi) + xi
        inside = (cond & (x < xint)).sum(axis=1) % 2 == 1
        return np.where(inside, -1.0, 1.0)

    def _value(self, X):
        return self._sign(X) * self._edges._value(X) - self.rounding

    def grad_with_flags(self, X):
        X = np.atleast_2d(X)
        g, flag = self._edges.grad_with_flags(X)
        return self._sign(X)[:, None] * g, flag


class Torus(AnalyticSdf):
    """Torus around the z axis: ``|(|xy| - R, z)| - r``."""

    def __init__(self, center, major: float, minor: float):
        self.center = np.asarray(center, dtype=np.float64)
        self.major = float(major)
        self.minor = float(minor)
        super().__init__(dim=3)

    def _q(self, X):
        d = X - self.center
        rxy = np.linalg.norm(d[:, :2], axis=1)
        return d, rxy, np.stack([rxy - self.major, d[:, 2]], axis=1)

    def _value(self, X):
        return np.linalg.norm(self._q(X)[2], axis=1) - self.minor

    def grad_with_flags(self, X):
        d, rxy, q = self._q(np.atleast_2d(X))
        uq, flag = _unit_or_e1(q, np.linalg.norm(q, axis=1))
        radial, flag_axis = _unit_or_e1(d[:, :2], rxy)
        g = np.concatenate([uq[:, :1] * radial, uq[:, 1:]], axis=1)
        return g, flag | flag_axis


def sdf_eval(shape: AnalyticSdf, x):
    return shape.value(x)


def sdf_grad(shape: AnalyticSdf, x):
    return shape.grad(x)


def rounded_polygon_2d() -> Polygon:
    """Default 2D silhouette: a rounded, non-convex polygon inside [-1/2, 1/2]^2."""
    pts = np.array([[-0.40, -0.05], [-0.15, -0.25], [0.20, -0.22], [0.38, -0.02],
                    [0.25, 0.05], [0.30, 0.22], [0.05, 0.10], [-0.20, 0.18]])
    return Polygon(pts, rounding=0.03)


def analytic_dataset(shape: AnalyticSdf, N: int, seed: int = 0, shell: float = 0.0,
                     max_draws: int | None = None) -> LabeledDataset:
    """N points with ``S < 0`` (label -1) and N with ``S > 0`` (label +1), uniform in D, with ``s_true``.

    ``shell > 0`` drops candidates with ``|S| <= shell``, i.e. the sampling
    density vanishes on the band around the boundary.
    """
    if not shape.signed:
        raise ValueError("analytic_dataset needs a signed shape")
    rng = np.random.default_rng(seed)
    budget = max_draws or 100 * N
    inside, outside = [], []
    n_in = n_out = drawn = 0
    while (n_in < N or n_out < N) and drawn < budget:
        m = min(8192, budget - drawn)
        X = uniform_in_domain(rng, m, shape.dim)
        drawn += m
        s = shape.value(X)
        if n_in < N:
            sel = X[s < -shell][:N - n_in]
            inside.append(sel)
            n_in += len(sel)
        if n_out < N:
            sel = X[s > shell][:N - n_out]
            outside.append(sel)
            n_out += len(sel)
    if n_in < N or n_out < N:
        raise SamplingBudgetError(f"could not fill both classes ({n_in}, {n_out} of {N})")
    X = np.concatenate(inside + outside)
    y = np.concatenate([-np.ones(N), np.ones(N)])
    return LabeledDataset(X, y, shape.value(X), mode="signed")


def parse_shape(spec: str) -> AnalyticSdf:
    """Parse ``kind:args`` strings.

    ``sphere:cx,cy[,cz]:r``, ``box:cx,cy[,cz]:hx,hy[,hz]``, ``torus:cx,cy,cz:R:r``,
    ``segment:ax,ay[,az]:bx,by[,bz][:radius]``, ``polyline:x,y;x,y;...``.
    """
    kind, _, rest = spec.partition(":")
    parts = rest.split(":") if rest else []

    def vec(s):
        return [float(v) for v in s.split(",")]

    try:
        if kind in ("sphere", "circle"):
            return Sphere(vec(parts[0]), float(parts[1]))
        if kind == "box":
            return Box(vec(parts[0]), vec(parts[1]))
        if kind == "torus":
            return Torus(vec(parts[0]), float(parts[1]), float(parts[2]))
        if kind == "segment":
            return Segment(vec(parts[0]), vec(parts[1]), float(parts[2]) if len(parts) > 2 else 0.0)
        if kind == "polyline":
            return Polyline([vec(p) for p in rest.split(";")])
    except (IndexError, ValueError) as exc:
        raise ValueError(f"bad shape spec {spec!r}: {exc}") from None
    raise ValueError(f"unknown shape kind {kind!r} in {spec!r}")


__all__ = ["AnalyticSdf", "Sphere", "Box", "Segment", "Polyline", "Polygon", "Torus",
           "sdf_eval", "sdf_grad", "rounded_polygon_2d", "analytic_dataset", "parse_shape",
           "DOMAIN"]
