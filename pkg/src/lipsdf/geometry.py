"""Input geometry: loading, normalization, generalized winding numbers, dataset sampling.

All sampling happens in the fixed domain ``D = [-1, 1]^n`` after the geometry
has been normalized into ``[-1/2, 1/2]^n``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

DOMAIN = (-1.0, 1.0)
ON_SURFACE_EPS = 1e-12
_PAIR_BUDGET = 2_000_000


class GeometryError(ValueError):
    """Invalid or unparsable input geometry."""


class SamplingBudgetError(RuntimeError):
    """Rejection sampling ran out of attempts before filling a class."""


@dataclass
class NormalizeTransform:
    """Uniform map ``x -> (x - center) * scale``."""

    center: np.ndarray
    scale: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(-1)
        self.scale = float(self.scale)
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise GeometryError(f"scale must be positive and finite, got {self.scale}")

    @classmethod
    def identity(cls, dim: int) -> "NormalizeTransform":
        return cls(np.zeros(dim), 1.0)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.center) * self.scale

    def inverse(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) / self.scale + self.center

    def to_dict(self) -> dict:
        return {"center": [float(c) for c in self.center], "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizeTransform":
        return cls(np.asarray(d["center"], dtype=np.float64), d["scale"])


@dataclass
class TriangleSoup:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (F, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise GeometryError("triangle index out of range")

    dim = 3

    def corners(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def coords(self) -> np.ndarray:
        return self.vertices


@dataclass
class SegmentSoup:
    """2D curves as a bag of oriented segments."""

    vertices: np.ndarray  # (V, 2)
    segments: np.ndarray  # (E, 2) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        self.segments = np.asarray(self.segments, dtype=np.int64).reshape(-1, 2)
        if self.segments.size and (self.segments.min() < 0
                                   or self.segments.max() >= len(self.vertices)):
            raise GeometryError("segment index out of range")

    dim = 2

    def lengths(self) -> np.ndarray:
        e = self.vertices[self.segments]
        return np.linalg.norm(e[:, 1] - e[:, 0], axis=1)

    def coords(self) -> np.ndarray:
        return self.vertices

    @classmethod
    def polygon(cls, points, closed: bool = True) -> "SegmentSoup":
        points = np.asarray(points, dtype=np.float64)
        n = len(points)
        idx = np.arange(n)
        segs = np.stack([idx, (idx + 1) % n], axis=1)
        return cls(points, segs if closed else segs[:-1])


@dataclass
class OrientedPointCloud:
    points: np.ndarray  # (N, n)
    normals: np.ndarray | None = None
    areas: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] not in (2, 3):
            raise GeometryError(f"points must have shape (N, 2|3), got {self.points.shape}")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(self.points.shape)
            nrm = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(nrm - 1.0) > 1e-6):
                if np.any(nrm == 0):
                    raise GeometryError("zero-length normal")
                self.normals = self.normals / nrm[:, None]
        if self.areas is not None:
            self.areas = np.asarray(self.areas, dtype=np.float64).reshape(-1)
            if np.any(self.areas < 0):
                raise GeometryError("negative area weight")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def coords(self) -> np.ndarray:
        return self.points


# ---------------------------------------------------------------------------
# I/O


def _floats(tokens, path, lineno):
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise GeometryError(f"{path}:{lineno}: cannot parse numbers: {exc}") from None


def _load_obj(path: Path):
    verts, faces, lines = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise GeometryError(f"{path}:{lineno}: vertex needs 3 coordinates")
                verts.append(_floats(parts[1:4], path, lineno))
            elif tag in ("f", "l"):
                try:
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                except ValueError:
                    raise GeometryError(f"{path}:{lineno}: bad index in '{raw.strip()}'") from None
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                if tag == "f":
                    if len(idx) < 3:
                        raise GeometryError(f"{path}:{lineno}: face needs at least 3 vertices")
                    faces.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, len(idx) - 1))
                else:
                    if len(idx) < 2:
                        raise GeometryError(f"{path}:{lineno}: line needs at least 2 vertices")
                    lines.extend([idx[j], idx[j + 1]] for j in range(len(idx) - 1))
    V = np.array(verts, dtype=np.float64).reshape(-1, 3)
    if faces:
        return TriangleSoup(V, np.array(faces))
    if lines:
        if np.any(V[:, 2] != 0):
            raise GeometryError(f"{path}: line elements are only supported for planar (z=0) curves")
        return SegmentSoup(V[:, :2], np.array(lines))
    raise GeometryError(f"{path}: no faces or line elements found")


def _load_ply(path: Path) -> OrientedPointCloud:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise GeometryError(f"{path}:1: missing 'ply' magic")
    props, n_vertex, in_vertex, header_end = [], None, False, None
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1] != "ascii":
            raise GeometryError(f"{path}:{lineno}: only ASCII PLY is supported")
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                n_vertex = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            props.append(parts[-1])
        elif parts[0] == "end_header":
            header_end = lineno
            break
    if header_end is None or n_vertex is None:
        raise GeometryError(f"{path}: incomplete header (no vertex element or end_header)")
    for name in ("x", "y", "z", "nx", "ny", "nz"):
        if name not in props:
            raise GeometryError(f"{path}: vertex element lacks property '{name}'")
    cols = [props.index(n) for n in ("x", "y", "z", "nx", "ny", "nz")]
    rows = []
    for i in range(n_vertex):
        lineno = header_end + 1 + i
        if lineno - 1 >= len(lines):
            raise GeometryError(f"{path}:{lineno}: expected {n_vertex} vertices, file ended")
        vals = _floats(lines[lineno - 1].split(), path, lineno)
        if len(vals) < len(props):
            raise GeometryError(f"{path}:{lineno}: expected {len(props)} values")
        rows.append([vals[c] for c in cols])
    data = np.array(rows, dtype=np.float64).reshape(-1, 6)
    return OrientedPointCloud(data[:, :3], data[:, 3:])


def _load_xyz(path: Path) -> OrientedPointCloud:
    rows = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) not in (3, 6):
                raise GeometryError(f"{path}:{lineno}: expected 3 or 6 columns, got {len(parts)}")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise GeometryError(f"{path}:{lineno}: inconsistent column count")
            rows.append(_floats(parts, path, lineno))
    if not rows:
        raise GeometryError(f"{path}: no points")
    data = np.array(rows)
    return OrientedPointCloud(data[:, :3], data[:, 3:] if width == 6 else None)


def load_geometry(path, fmt: str | None = None, require_normals: bool = False):
    """Read OBJ (triangles or planar lines), ASCII PLY or XYZ."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if not path.exists():
        raise GeometryError(f"{path}: no such file")
    if fmt == "obj":
        geom = _load_obj(path)
    elif fmt == "ply":
        geom = _load_ply(path)
    elif fmt == "xyz":
        geom = _load_xyz(path)
    else:
        raise GeometryError(f"unsupported geometry format '{fmt}'")
    if require_normals and isinstance(geom, OrientedPointCloud) and geom.normals is None:
        raise GeometryError(f"{path}: signed mode on a point cloud requires normals")
    return geom


def write_obj(path, vertices, faces=None, lines=None) -> None:
    """Write vertices plus triangle faces and/or polyline ``l`` elements (1-based)."""
    vertices = np.asarray(vertices, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        for v in vertices:
            xyz = list(v) + [0.0] * (3 - len(v))
            fh.write("v {!r} {!r} {!r}\n".format(*map(float, xyz)))
        for f in faces if faces is not None else ():
            fh.write("f {} {} {}\n".format(*(int(i) + 1 for i in f)))
        for line in lines if lines is not None else ():
            fh.write("l " + " ".join(str(int(i) + 1) for i in line) + "\n")


# ---------------------------------------------------------------------------
# Normalization


def _with_coords(geom, coords):
    if isinstance(geom, TriangleSoup):
        return TriangleSoup(coords, geom.triangles.copy())
    if isinstance(geom, SegmentSoup):
        return SegmentSoup(coords, geom.segments.copy())
    return OrientedPointCloud(coords, None if geom.normals is None else geom.normals.copy(),
                              None if geom.areas is None else geom.areas.copy())


def normalize(geom):
    """Center the bounding box at 0 and scale its longest side to 1.

    Area weights of point clouds are rescaled accordingly (``scale^(n-1)``).
    """
    P = geom.coords()
    if len(P) == 0:
        raise GeometryError("empty geometry")
    lo, hi = P.min(axis=0), P.max(axis=0)
    extent = float((hi - lo).max())
    if not extent > 0:
        raise GeometryError("degenerate bounding box (zero extent)")
    tf = NormalizeTransform((lo + hi) / 2.0, 1.0 / extent)
    out = _with_coords(geom, tf.apply(P))
    if isinstance(out, OrientedPointCloud) and out.areas is not None:
        out.areas = out.areas * tf.scale ** (out.dim - 1)
    return out, tf


# ---------------------------------------------------------------------------
# Generalized winding numbers


def _chunks(n_queries: int, n_elems: int):
    step = max(1, _PAIR_BUDGET // max(1, n_elems))
    for s in range(0, n_queries, step):
        yield slice(s, min(n_queries, s + step))


def winding_numbers_triangles(soup: TriangleSoup, X) -> tuple[np.ndarray, np.ndarray]:
    """Winding number of each query point w.r.t. a triangle soup.

    Sum of signed solid angles (van Oosterom-Strackee) over ``4 pi``. Returns
    ``(w, on_surface)``; flagged points lie within 1e-12 of a triangle.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    C = soup.corners()
    nrm = np.cross(C[:, 1] - C[:, 0], C[:, 2] - C[:, 0])
    dbl_area = np.linalg.norm(nrm, axis=1)
    w = np.zeros(len(X))
    flag = np.zeros(len(X), dtype=bool)
    if len(C) == 0:
        return w, flag
    for sl in _chunks(len(X), len(C)):
        a = C[None, :, 0, :] - X[sl, None, :]
        b = C[None, :, 1, :] - X[sl, None, :]
        c = C[None, :, 2, :] - X[sl, None, :]
        la = np.linalg.norm(a, axis=2)
        lb = np.linalg.norm(b, axis=2)
        lc = np.linalg.norm(c, axis=2)
        bxc = np.cross(b, c)
        det = np.einsum("qtk,qtk->qt", a, bxc)
        denom = (la * lb * lc + np.einsum("qtk,qtk->qt", a, b) * lc
                 + np.einsum("qtk,qtk->qt", a, c) * lb + np.einsum("qtk,qtk->qt", b, c) * la)
        omega = 2.0 * np.arctan2(det, denom)
        w[sl] = omega.sum(axis=1) / (4.0 * np.pi)

        # on-surface: tiny height over the plane and inside the triangle
        with np.errstate(divide="ignore", invalid="ignore"):
            height = np.abs(det) / dbl_area[None, :]
        near = (height < ON_SURFACE_EPS) & (dbl_area[None, :] > 0)
        if near.any():
            qi, ti = np.nonzero(near)
            n = nrm[ti]
            s1 = np.einsum("ij,ij->i", np.cross(b[qi, ti], c[qi, ti]), n)
            s2 = np.einsum("ij,ij->i", np.cross(c[qi, ti], a[qi, ti]), n)
            s3 = np.einsum("ij,ij->i", np.cross(a[qi, ti], b[qi, ti]), n)
            inside = (s1 >= 0) & (s2 >= 0) & (s3 >= 0)
            flag[sl][np.unique(qi[inside])] = True
        # vertex hits make the formula degenerate as well
        zero = (la < ON_SURFACE_EPS) | (lb < ON_SURFACE_EPS) | (lc < ON_SURFACE_EPS)
        flag[sl] |= zero.any(axis=1)
    return w, flag


def winding_triangles(soup: TriangleSoup, x) -> tuple[float, bool]:
    w, flag = winding_numbers_triangles(soup, np.asarray(x, dtype=np.float64).reshape(1, 3))
    return float(w[0]), bool(flag[0])


def winding_numbers_segments(curves: SegmentSoup, X) -> tuple[np.ndarray, np.ndarray]:
    """2D winding number as the sum of signed angles subtended by each segment."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    E = curves.vertices[curves.segments]
    w = np.zeros(len(X))
    flag = np.zeros(len(X), dtype=bool)
    if len(E) == 0:
        return w, flag
    d = E[:, 1] - E[:, 0]
    dd = np.einsum("ij,ij->i", d, d)
    for sl in _chunks(len(X), len(E)):
        a = E[None, :, 0, :] - X[sl, None, :]
        b = E[None, :, 1, :] - X[sl, None, :]
        cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
        dot = np.einsum("qtk,qtk->qt", a, b)
        w[sl] = np.arctan2(cross, dot).sum(axis=1) / (2.0 * np.pi)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.clip(np.einsum("qtk,tk->qt", -a, d) / dd[None, :], 0.0, 1.0)
        t = np.where(dd[None, :] > 0, t, 0.0)
        closest = a + t[..., None] * d[None]
        flag[sl] = (np.linalg.norm(closest, axis=2) < ON_SURFACE_EPS).any(axis=1)
    return w, flag


def winding_numbers_points(cloud: OrientedPointCloud, X) -> tuple[np.ndarray, np.ndarray]:
    """Dipole-sum winding number of an oriented, area-weighted point cloud.

    ``w(x) = sum_i a_i (p_i - x).n_i / (c_n |p_i - x|^n)`` with ``c_3 = 4 pi``
    and ``c_2 = 2 pi``. Samples closer than 1e-12 are skipped and flagged.
    """
    if cloud.normals is None:
        raise GeometryError("winding number of a point cloud requires normals")
    if cloud.areas is None:
        raise GeometryError("area weights missing; call estimate_areas first")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = cloud.dim
    const = 4.0 * np.pi if n == 3 else 2.0 * np.pi
    P, N, A = cloud.points, cloud.normals, cloud.areas
    w = np.zeros(len(X))
    flag = np.zeros(len(X), dtype=bool)
    for sl in _chunks(len(X), len(P)):
        diff = P[None, :, :] - X[sl, None, :]
        r = np.linalg.norm(diff, axis=2)
        close = r < ON_SURFACE_EPS
        r = np.where(close, 1.0, r)
        contrib = A[None, :] * np.einsum("qpk,pk->qp", diff, N) / (const * r ** n)
        w[sl] = np.where(close, 0.0, contrib).sum(axis=1)
        flag[sl] = close.any(axis=1)
    return w, flag


def winding_points(cloud: OrientedPointCloud, x) -> tuple[float, bool]:
    w, flag = winding_numbers_points(cloud, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return float(w[0]), bool(flag[0])


def winding_numbers(geom, X) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(geom, TriangleSoup):
        return winding_numbers_triangles(geom, X)
    if isinstance(geom, SegmentSoup):
        return winding_numbers_segments(geom, X)
    if isinstance(geom, OrientedPointCloud):
        if geom.areas is None:
            geom = estimate_areas(geom)
        return winding_numbers_points(geom, X)
    raise TypeError(f"unsupported geometry type {type(geom).__name__}")


def estimate_areas(cloud: OrientedPointCloud, k: int = 8) -> OrientedPointCloud:
    """Per-point area weights from the k-th nearest neighbor distance r_k.

    3D: ``pi r_k^2 / k``; 2D: ``2 r_k / k`` (a length).
    """
    N = len(cloud.points)
    if N < k + 1:
        raise GeometryError(f"need at least k+1={k + 1} points for area estimation, got {N}")
    dist, _ = cKDTree(cloud.points).query(cloud.points, k=k + 1)
    r = dist[:, k]
    areas = np.pi * r ** 2 / k if cloud.dim == 3 else 2.0 * r / k
    return OrientedPointCloud(cloud.points, cloud.normals, areas)


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class LabeledDataset:
    """Points in D with labels -1 (inside / on the geometry) and +1 (outside)."""

    X: np.ndarray
    y: np.ndarray
    s_true: np.ndarray | None = None
    mode: str = "signed"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise GeometryError("X and y sizes disagree")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise GeometryError("labels must be -1 or +1")
        if self.s_true is not None:
            self.s_true = np.asarray(self.s_true, dtype=np.float64).reshape(-1)
            if self.s_true.shape != self.y.shape:
                raise GeometryError("s_true size disagrees with labels")
        if self.mode not in ("signed", "unsigned"):
            raise GeometryError(f"unknown mode {self.mode!r}")

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return len(self.y)

    def to_csv(self, path) -> None:
        names = ["x", "y", "z"][:self.dim] + ["label"]
        if self.s_true is not None:
            names.append("s_true")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(names)
            for i in range(len(self)):
                row = [repr(float(v)) for v in self.X[i]] + [str(int(self.y[i]))]
                if self.s_true is not None:
                    row.append(repr(float(self.s_true[i])))
                wr.writerow(row)

    @classmethod
    def from_csv(cls, path, mode: str = "signed") -> "LabeledDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise GeometryError(f"{path}: empty dataset file")
        header = rows[0]
        if "label" not in header:
            raise GeometryError(f"{path}: header must contain 'label'")
        li = header.index("label")
        try:
            data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(header))
        except ValueError as exc:
            raise GeometryError(f"{path}: {exc}") from None
        s = data[:, header.index("s_true")] if "s_true" in header else None
        return cls(data[:, :li], data[:, li], s, mode)


def uniform_in_domain(rng: np.random.Generator, n_points: int, dim: int) -> np.ndarray:
    return rng.uniform(DOMAIN[0], DOMAIN[1], size=(n_points, dim))


def build_signed_dataset(geom, N: int, tau_in: float = 0.6, tau_out: float = 0.4,
                         seed: int = 0, chunk: int = 4096) -> LabeledDataset:
    """Rejection-sample N inside (w >= tau_in, label -1) and N outside (w <= tau_out, +1) points."""
    if not tau_out < tau_in:
        raise GeometryError(f"need tau_out < tau_in, got tau_in={tau_in}, tau_out={tau_out}")
    if N <= 0:
        raise GeometryError("N must be positive")
    if isinstance(geom, OrientedPointCloud):
        if geom.normals is None:
            raise GeometryError("signed mode on a point cloud requires normals")
        if geom.areas is None:
            geom = estimate_areas(geom)
    rng = np.random.default_rng(seed)
    dim = geom.dim
    inside, outside = [], []
    n_in = n_out = drawn = 0
    budget = 100 * N
    while (n_in < N or n_out < N) and drawn < budget:
        m = min(chunk, budget - drawn)
        X = uniform_in_domain(rng, m, dim)
        drawn += m
        w, flag = winding_numbers(geom, X)
        ok = ~flag
        if n_in < N:
            sel = X[ok & (w >= tau_in)][:N - n_in]
            inside.append(sel)
            n_in += len(sel)
        if n_out < N:
            sel = X[ok & (w <= tau_out)][:N - n_out]
            outside.append(sel)
            n_out += len(sel)
    for name, got, tau in (("inside", n_in, f"w >= tau_in={tau_in}"),
                           ("outside", n_out, f"w <= tau_out={tau_out}")):
        if got < N:
            raise SamplingBudgetError(
                f"{name} class has only {got}/{N} points ({tau}) after {budget} attempts")
    Xi = np.concatenate(inside)
    Xo = np.concatenate(outside)
    y = np.concatenate([-np.ones(N), np.ones(N)])
    return LabeledDataset(np.concatenate([Xi, Xo]), y, mode="signed")


def sample_on_geometry(geom, n_points: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(geom, OrientedPointCloud):
        if len(geom.points) == 0:
            raise GeometryError("empty geometry")
        return geom.points[rng.integers(0, len(geom.points), size=n_points)]
    if isinstance(geom, TriangleSoup):
        weights = geom.areas()
        if len(weights) == 0 or weights.sum() <= 0:
            raise GeometryError("empty geometry (no triangle with positive area)")
        tri = rng.choice(len(weights), size=n_points, p=weights / weights.sum())
        r1 = np.sqrt(rng.random(n_points))
        r2 = rng.random(n_points)
        C = geom.corners()[tri]
        return ((1 - r1)[:, None] * C[:, 0] + (r1 * (1 - r2))[:, None] * C[:, 1]
                + (r1 * r2)[:, None] * C[:, 2])
    if isinstance(geom, SegmentSoup):
        weights = geom.lengths()
        if len(weights) == 0 or weights.sum() <= 0:
            raise GeometryError("empty geometry (no segment with positive length)")
        seg = rng.choice(len(weights), size=n_points, p=weights / weights.sum())
        t = rng.random(n_points)[:, None]
        E = geom.vertices[geom.segments[seg]]
        return (1 - t) * E[:, 0] + t * E[:, 1]
    raise TypeError(f"unsupported geometry type {type(geom).__name__}")


def build_unsigned_dataset(geom, N: int, seed: int = 0) -> LabeledDataset:
    """N points on the geometry (label -1) and N uniform points in D (label +1)."""
    if N <= 0:
        raise GeometryError("N must be positive")
    rng = np.random.default_rng(seed)
    on = sample_on_geometry(geom, N, rng)
    out = uniform_in_domain(rng, N, geom.dim)
    y = np.concatenate([-np.ones(N), np.ones(N)])
    return LabeledDataset(np.concatenate([on, out]), y, mode="unsigned")


# ---------------------------------------------------------------------------
# Corruption


def corrupt(cloud: OrientedPointCloud, seed: int = 0, noise_sigma: float | None = None,
            holes: tuple[int, int] | None = None, subsample: int | None = None
            ) -> OrientedPointCloud:
    """Gaussian jitter, hole punching (seed point + k nearest removed) and/or subsampling.

    Operations apply in the order noise, holes, subsample. Area weights are
    dropped since they no longer describe the cloud.
    """
    rng = np.random.default_rng(seed)
    P = cloud.points.copy()
    N_ = None if cloud.normals is None else cloud.normals.copy()
    if noise_sigma:
        if noise_sigma < 0:
            raise GeometryError("noise_sigma must be non-negative")
        P = P + rng.normal(0.0, noise_sigma, size=P.shape)
    if holes is not None:
        count, k_remove = holes
        if count > len(P):
            raise GeometryError(f"cannot punch {count} holes in {len(P)} points")
        seeds = rng.choice(len(P), size=count, replace=False)
        _, nbr = cKDTree(P).query(P[seeds], k=min(len(P), k_remove + 1))
        keep = np.ones(len(P), dtype=bool)
        keep[np.asarray(nbr).ravel()] = False
        P = P[keep]
        N_ = None if N_ is None else N_[keep]
    if subsample is not None:
        if subsample > len(P):
            raise GeometryError(f"cannot subsample {subsample} from {len(P)} points")
        idx = np.sort(rng.choice(len(P), size=subsample, replace=False))
        P = P[idx]
        N_ = None if N_ is None else N_[idx]
    return OrientedPointCloud(P, N_)


# ---------------------------------------------------------------------------
# Test shapes


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleSoup:
    """Outward-oriented icosphere with ``20 * 4**subdivisions`` faces."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    V = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = V[i] + V[j]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleSoup(np.array(V) * radius + np.asarray(center, dtype=np.float64), np.array(faces))


def save_transform(path, tf: NormalizeTransform) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(tf.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_transform(path) -> NormalizeTransform:
    with open(path, encoding="utf-8") as fh:
        return NormalizeTransform.from_dict(json.load(fh))
