"""Explicit geometry from sampled fields: marching squares/cubes and heatmaps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._mc_table import TRI_TABLE
from .fieldops import ScalarField, evaluate_chunked, write_image
from .geometry import SegmentSoup, TriangleSoup

TIE_EPS = 1e-12

# 17 evenly spaced samples of viridis, interpolated linearly
VIRIDIS = np.array([
    (68, 1, 84), (72, 24, 106), (71, 45, 123), (66, 64, 134), (59, 82, 139), (51, 99, 141),
    (44, 114, 142), (38, 130, 142), (33, 145, 140), (31, 160, 136), (40, 174, 128),
    (63, 188, 115), (94, 201, 98), (132, 212, 75), (173, 220, 48), (216, 226, 25),
    (253, 231, 37)], dtype=np.float64)


@dataclass
class GridField:
    """Samples on a regular lattice; ``values[i, j(, k)]`` sits at ``origin + h * (i, j(, k))``."""

    origin: np.ndarray
    spacing: float
    values: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != len(self.origin):
            raise ValueError("values dimensionality does not match origin")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid contains non-finite values")

    @property
    def dims(self) -> tuple:
        return self.values.shape

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def cell_diagonal(self) -> float:
        return self.spacing * np.sqrt(self.dim)

    def points(self) -> np.ndarray:
        axes = [self.origin[a] + self.spacing * np.arange(n) for a, n in enumerate(self.dims)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def interpolate(self, X) -> np.ndarray:
        """Multilinear interpolation (points are clamped into the grid)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        u = (X - self.origin) / self.spacing
        dims = np.array(self.dims)
        i0 = np.clip(np.floor(u).astype(np.int64), 0, dims - 2)
        fr = np.clip(u - i0, 0.0, 1.0)
        out = np.zeros(len(X))
        for corner in range(2 ** self.dim):
            bits = [(corner >> a) & 1 for a in range(self.dim)]
            w = np.ones(len(X))
            idx = []
            for a, bit in enumerate(bits):
                w *= fr[:, a] if bit else 1.0 - fr[:, a]
                idx.append(i0[:, a] + bit)
            out += w * self.values[tuple(idx)]
        return out


def sample_grid(field: ScalarField, bounds=(-1.0, 1.0), resolution: int = 64,
                workers: int = 1) -> GridField:
    """Evaluate ``field`` on ``resolution`` points per axis spanning ``bounds`` (same on every axis)."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    lo, hi = float(bounds[0]), float(bounds[1])
    h = (hi - lo) / (resolution - 1)
    g = GridField(np.full(field.dim, lo), h, np.zeros((resolution,) * field.dim))
    vals = evaluate_chunked(field.value, g.points(), workers)
    g.values = vals.reshape(g.dims)
    if not np.all(np.isfinite(g.values)):
        raise ValueError("field produced non-finite values")
    return g


def _untie(values: np.ndarray, iso: float) -> np.ndarray:
    return np.where(values == iso, values + TIE_EPS, values)


# ---------------------------------------------------------------------------
# Marching squares

# corners c0 (0,0), c1 (1,0), c2 (1,1), c3 (0,1); edges e0 c0-c1, e1 c1-c2, e2 c2-c3, e3 c3-c0.
# Directed segments keep the below-iso region on their left.
_MS_TABLE = {
    1: [(0, 3)], 2: [(1, 0)], 3: [(1, 3)], 4: [(2, 1)], 6: [(2, 0)], 7: [(2, 3)],
    8: [(3, 2)], 9: [(0, 2)], 11: [(1, 2)], 12: [(3, 1)], 13: [(0, 1)], 14: [(3, 0)],
}
# saddles: (center below iso, center above iso)
_MS_SADDLE = {5: ([(0, 1), (2, 3)], [(0, 3), (2, 1)]),
              10: ([(3, 0), (1, 2)], [(1, 0), (3, 2)])}


@dataclass
class Polylines:
    vertices: np.ndarray  # (V, 2)
    chains: list  # lists of vertex indices
    closed: list  # bool per chain

    def segments(self) -> SegmentSoup:
        segs = []
        for chain, closed in zip(self.chains, self.closed):
            segs += [(chain[i], chain[i + 1]) for i in range(len(chain) - 1)]
            if closed:
                segs.append((chain[-1], chain[0]))
        return SegmentSoup(self.vertices, np.array(segs, dtype=np.int64).reshape(-1, 2))

    def total_length(self) -> float:
        return float(self.segments().lengths().sum())

    def to_obj(self, path) -> None:
        from .geometry import write_obj
        lines = [list(c) + ([c[0]] if cl else []) for c, cl in zip(self.chains, self.closed)]
        write_obj(path, self.vertices, lines=lines)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("chain,closed,x,y\n")
            for ci, (chain, closed) in enumerate(zip(self.chains, self.closed)):
                for v in chain:
                    x, y = self.vertices[v]
                    fh.write(f"{ci},{int(closed)},{float(x)!r},{float(y)!r}\n")


def marching_squares(grid: GridField, iso: float = 0.0) -> Polylines:
    if grid.dim != 2:
        raise ValueError("marching_squares needs a 2D grid")
    V = _untie(grid.values, iso)
    nx, ny = V.shape
    below = V < iso
    case = (below[:-1, :-1] * 1 + below[1:, :-1] * 2 + below[1:, 1:] * 4
            + below[:-1, 1:] * 8)
    n_h = nx * ny

    def edge_id(i, j, e):
        # horizontal edges use ids [0, n_h); vertical ones [n_h, 2 n_h)
        return {0: i * ny + j, 2: i * ny + j + 1, 3: n_h + i * ny + j, 1: n_h + (i + 1) * ny + j}[e]

    segs = []
    ci, cj = np.nonzero((case > 0) & (case < 15))
    for i, j in zip(ci.tolist(), cj.tolist()):
        c = int(case[i, j])
        if c in _MS_SADDLE:
            center = 0.25 * (V[i, j] + V[i + 1, j] + V[i + 1, j + 1] + V[i, j + 1])
            pairs = _MS_SADDLE[c][0 if center < iso else 1]
        else:
            pairs = _MS_TABLE[c]
        segs += [(edge_id(i, j, a), edge_id(i, j, b)) for a, b in pairs]
    if not segs:
        return Polylines(np.zeros((0, 2)), [], [])

    segs = np.array(segs, dtype=np.int64)
    ids, inv = np.unique(segs.ravel(), return_inverse=True)
    segs = inv.reshape(-1, 2)
    horiz = ids < n_h
    local = np.where(horiz, ids, ids - n_h)
    i, j = local // ny, local % ny
    i2 = np.where(horiz, i + 1, i)
    j2 = np.where(horiz, j, j + 1)
    v0, v1 = V[i, j], V[i2, j2]
    t = (iso - v0) / (v1 - v0)
    p0 = grid.origin + grid.spacing * np.stack([i, j], axis=1)
    p1 = grid.origin + grid.spacing * np.stack([i2, j2], axis=1)
    verts = p0 + t[:, None] * (p1 - p0)

    nxt = {int(a): int(b) for a, b in segs}
    has_prev = set(nxt.values())
    chains, closed, seen = [], [], set()
    starts = [a for a in nxt if a not in has_prev] + sorted(nxt)
    for s in starts:
        if s in seen:
            continue
        chain = [s]
        seen.add(s)
        cur = s
        is_closed = False
        while cur in nxt:
            cur = nxt[cur]
            if cur == s:
                is_closed = True
                break
            if cur in seen:
                break
            chain.append(cur)
            seen.add(cur)
        chains.append(chain)
        closed.append(is_closed)
    return Polylines(verts, chains, closed)


# ---------------------------------------------------------------------------
# Marching cubes

_CORNERS = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                     [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]])
_EDGES = np.array([[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4],
                   [0, 4], [1, 5], [2, 6], [3, 7]])
_TRI = np.full((256, 16), -1, dtype=np.int64)
for _c, _row in enumerate(TRI_TABLE):
    _TRI[_c, :len(_row)] = _row
_NTRI = np.array([len(r) // 3 for r in TRI_TABLE])
# each edge as (base corner offset, axis)
_EDGE_BASE = np.array([np.minimum(_CORNERS[a], _CORNERS[b]) for a, b in _EDGES])
_EDGE_AXIS = np.array([int(np.argmax(np.abs(_CORNERS[b] - _CORNERS[a]))) for a, b in _EDGES])


def marching_cubes(grid: GridField, iso: float = 0.0) -> TriangleSoup:
    """Lookup-table marching cubes with shared edge vertices.

    Vertices are indexed by grid edge (sorted id), triangles are emitted in
    cell-major order; normals point toward increasing field values.
    """
    if grid.dim != 3:
        raise ValueError("marching_cubes needs a 3D grid")
    V = _untie(grid.values, iso)
    nx, ny, nz = V.shape
    below = (V < iso).astype(np.int64)
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for c, (dx, dy, dz) in enumerate(_CORNERS):
        case |= below[dx:nx - 1 + dx, dy:ny - 1 + dy, dz:nz - 1 + dz] << c
    cells = np.flatnonzero(_NTRI[case.ravel()] > 0)
    if len(cells) == 0:
        return TriangleSoup(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    cc = case.ravel()[cells]
    ci, cj, ck = np.unravel_index(cells, case.shape)
    ntri = _NTRI[cc]
    cell_rep = np.repeat(np.arange(len(cells)), ntri)
    tri_slot = np.arange(len(cell_rep)) - np.repeat(np.cumsum(ntri) - ntri, ntri)
    local_edges = np.stack([_TRI[cc[cell_rep], 3 * tri_slot + m] for m in range(3)], axis=1)

    base = _EDGE_BASE[local_edges]  # (T, 3, 3)
    gi = ci[cell_rep][:, None] + base[..., 0]
    gj = cj[cell_rep][:, None] + base[..., 1]
    gk = ck[cell_rep][:, None] + base[..., 2]
    n_pts = nx * ny * nz
    eid = _EDGE_AXIS[local_edges] * n_pts + (gi * ny + gj) * nz + gk
    ids, inv = np.unique(eid.ravel(), return_inverse=True)
    faces = inv.reshape(-1, 3)

    axis = ids // n_pts
    lin = ids % n_pts
    i, j, k = lin // (ny * nz), (lin // nz) % ny, lin % nz
    step = np.eye(3, dtype=np.int64)[axis]
    i2, j2, k2 = i + step[:, 0], j + step[:, 1], k + step[:, 2]
    v0, v1 = V[i, j, k], V[i2, j2, k2]
    t = (iso - v0) / (v1 - v0)
    p0 = grid.origin + grid.spacing * np.stack([i, j, k], axis=1)
    verts = p0 + t[:, None] * grid.spacing * step
    # the table winds triangles with normals pointing toward decreasing values
    return TriangleSoup(verts, faces[:, ::-1].copy())


def euler_characteristic(mesh: TriangleSoup) -> int:
    F = mesh.triangles
    edges = np.sort(np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]]), axis=1)
    n_edges = len(np.unique(edges, axis=0))
    n_verts = len(np.unique(F))
    return int(n_verts - n_edges + len(F))


def connected_components(mesh: TriangleSoup) -> int:
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components as cc

    F = mesh.triangles
    if len(F) == 0:
        return 0
    n = len(mesh.vertices)
    rows = np.concatenate([F[:, 0], F[:, 1], F[:, 2]])
    cols = np.concatenate([F[:, 1], F[:, 2], F[:, 0]])
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    used = np.unique(F)
    n_comp, labels = cc(adj, directed=False)
    return int(len(np.unique(labels[used])))


def mesh_area(mesh: TriangleSoup) -> float:
    return float(mesh.areas().sum())


# ---------------------------------------------------------------------------
# Slices and heatmaps


def planar_slice(field: ScalarField, bounds=(-1.0, 1.0), resolution: int = 256,
                 axis: int = 2, offset: float = 0.0, quantity: str = "value",
                 workers: int = 1) -> GridField:
    """2D grid of field values (or gradient norms) on an axis-aligned cut.

    2D fields are sampled directly; for 3D fields ``axis`` is held at ``offset``.
    """
    if quantity not in ("value", "gradnorm"):
        raise ValueError(f"unknown quantity {quantity!r}")
    lo, hi = float(bounds[0]), float(bounds[1])
    h = (hi - lo) / (resolution - 1)
    g = GridField(np.full(2, lo), h, np.zeros((resolution, resolution)))
    P2 = g.points()
    if field.dim == 3:
        free = [a for a in range(3) if a != axis]
        P = np.zeros((len(P2), 3))
        P[:, free[0]], P[:, free[1]] = P2[:, 0], P2[:, 1]
        P[:, axis] = offset
    else:
        P = P2
    if quantity == "value":
        vals = evaluate_chunked(field.value, P, workers)
    else:
        vals = evaluate_chunked(lambda X: np.linalg.norm(field.grad(X), axis=1), P, workers)
    g.values = vals.reshape(g.dims)
    return g


def colorize(values: np.ndarray, vmin: float | None = None, vmax: float | None = None) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    lo = values.min() if vmin is None else vmin
    hi = values.max() if vmax is None else vmax
    u = np.zeros_like(values) if hi <= lo else np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    pos = u * (len(VIRIDIS) - 1)
    i0 = np.minimum(np.floor(pos).astype(np.int64), len(VIRIDIS) - 2)
    fr = (pos - i0)[..., None]
    rgb = VIRIDIS[i0] * (1 - fr) + VIRIDIS[i0 + 1] * fr
    return np.round(rgb).astype(np.uint8)


def emit_heatmap(grid: GridField, path, csv_path=None, vmin: float | None = None,
                 vmax: float | None = None) -> np.ndarray:
    """Write a viridis image of a 2D grid (+y up) and optionally a CSV of raw values."""
    if grid.dim != 2:
        raise ValueError("heatmaps need a 2D grid; take a planar_slice first")
    img = colorize(grid.values.T[::-1], vmin, vmax)
    write_image(path, img)
    if csv_path is not None:
        P = grid.points()
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("x,y,value\n")
            for (x, y), v in zip(P, grid.values.ravel()):
                fh.write(f"{float(x)!r},{float(y)!r},{float(v)!r}\n")
    return img
