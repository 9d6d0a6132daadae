"""Meshes, surface extraction, mesh queries and the evaluation metrics.

Lengths are millimetres throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .losses import chamfer


class NoSurfaceError(ValueError):
    """The scalar field has no zero crossing inside the grid."""


class MeshError(ValueError):
    pass


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) float
    faces: np.ndarray  # (F, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise MeshError("face index out of range")

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def face_normals(self, normalize=True) -> np.ndarray:
        t = self.triangles
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        if normalize:
            n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
        return n

    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(normalize=False), axis=1)

    def volume(self) -> float:
        t = self.triangles
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def edge_counts(self) -> dict[tuple[int, int], int]:
        """Directed-edge multiplicities."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        keys, counts = np.unique(e, axis=0, return_counts=True)
        return {(int(a), int(b)): int(c) for (a, b), c in zip(keys, counts)}

    def is_two_manifold(self) -> bool:
        """Every undirected edge is shared by exactly two faces."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(len(counts)) and bool(np.all(counts == 2))

    def is_watertight(self) -> bool:
        """Closed, two-manifold and consistently oriented."""
        if not self.is_two_manifold():
            return False
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 1))

    def vertex_areas(self) -> np.ndarray:
        """One third of the adjacent triangle areas, per vertex."""
        out = np.zeros(len(self.vertices))
        a = self.areas() / 3.0
        for k in range(3):
            np.add.at(out, self.faces[:, k], a)
        return out

    def vertex_normals(self) -> np.ndarray:
        n = self.face_normals(normalize=False)
        out = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(out, self.faces[:, k], n)
        return out / np.maximum(np.linalg.norm(out, axis=1, keepdims=True), 1e-300)

    def cleaned(self) -> "TriMesh":
        """Drop zero-area faces and unreferenced vertices."""
        keep = self.areas() > 0
        faces = self.faces[keep]
        used, inv = np.unique(faces, return_inverse=True)
        return TriMesh(self.vertices[used], inv.reshape(-1, 3))


@dataclass
class GridSpec:
    lo: np.ndarray
    hi: np.ndarray
    resolution: tuple[int, int, int] = (64, 64, 64)
    padding: float = 0.1

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if isinstance(self.resolution, int):
            self.resolution = (self.resolution,) * 3
        self.resolution = tuple(int(r) for r in self.resolution)
        if min(self.resolution) < 2:
            raise ValueError("grid resolution must be at least 2 per axis")
        if np.any(self.hi <= self.lo):
            raise ValueError("degenerate grid bounds")

    @classmethod
    def around(cls, lo, hi, resolution=64, padding=0.1) -> "GridSpec":
        """Bounds grown by ``padding`` times the extent on every side."""
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        pad = padding * (hi - lo)
        return cls(lo - pad, hi + pad, resolution, padding)

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.asarray(self.resolution) - 1)

    @property
    def voxel(self) -> float:
        return float(self.spacing.max())

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(self.lo[i], self.hi[i], self.resolution[i]) for i in range(3)]


def evaluate_grid(sdf_fn: Callable[[np.ndarray], np.ndarray], grid: GridSpec,
                  chunk: int = 65536) -> np.ndarray:
    xs, ys, zs = grid.axes()
    pts = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = np.empty(len(pts))
    for lo in range(0, len(pts), chunk):
        vals[lo:lo + chunk] = np.asarray(sdf_fn(pts[lo:lo + chunk])).reshape(-1)
    return vals.reshape(grid.resolution)


def marching_cubes(sdf_fn: Callable[[np.ndarray], np.ndarray], grid: GridSpec) -> TriMesh:
    """Zero level set of ``sdf_fn`` (negative inside) with outward winding.

    Where the inside region reaches the bounds the mesh is capped just
    outside them, so the result is always closed.
    """
    from skimage.measure import marching_cubes as _mc

    vol = evaluate_grid(sdf_fn, grid)
    if not np.all(np.isfinite(vol)):
        raise ValueError("sdf is not finite on the grid")
    if vol.min() >= 0 or vol.max() <= 0:
        raise NoSurfaceError("no surface in bounds")
    # an outside border caps surfaces that leave the bounds, so the mesh is closed
    border = max(float(np.abs(vol).max()), grid.voxel)
    vol = np.pad(vol, 1, constant_values=border)
    verts, faces, _, _ = _mc(vol, level=0.0, spacing=tuple(grid.spacing),
                             gradient_direction="descent", allow_degenerate=False)
    mesh = TriMesh(verts + grid.lo - grid.spacing, faces).cleaned()
    if mesh.volume() < 0:
        mesh = TriMesh(mesh.vertices, mesh.faces[:, ::-1])
    return mesh


def box_mesh(lo, hi, divisions: int = 1) -> TriMesh:
    """Axis-aligned box, each face split into ``divisions`` x ``divisions`` quads."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    n = divisions
    t = np.linspace(0.0, 1.0, n + 1)
    verts: list[np.ndarray] = []
    faces: list[np.ndarray] = []
    index: dict[tuple, int] = {}

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    for axis in range(3):
        u_ax, v_ax = [a for a in range(3) if a != axis]
        for side in (0, 1):
            ids = np.empty((n + 1, n + 1), dtype=np.int64)
            for i, u in enumerate(t):
                for j, v in enumerate(t):
                    p = np.empty(3)
                    p[axis] = hi[axis] if side else lo[axis]
                    p[u_ax] = lo[u_ax] + u * (hi[u_ax] - lo[u_ax])
                    p[v_ax] = lo[v_ax] + v * (hi[v_ax] - lo[v_ax])
                    ids[i, j] = vid(p)
            for i in range(n):
                for j in range(n):
                    a, b, c, d = ids[i, j], ids[i + 1, j], ids[i + 1, j + 1], ids[i, j + 1]
                    # checkerboard diagonals keep the mesh symmetric under the
                    # cube's rotations when divisions is even
                    if (i + j) % 2 == 0:
                        faces += [[a, b, c], [a, c, d]]
                    else:
                        faces += [[a, b, d], [b, c, d]]
    mesh = TriMesh(np.array(verts), np.array(faces))
    # orient outward per face
    cen = 0.5 * (lo + hi)
    tri = mesh.triangles
    flip = np.einsum("ij,ij->i", mesh.face_normals(), tri.mean(axis=1) - cen) < 0
    f = mesh.faces.copy()
    f[flip] = f[flip][:, ::-1]
    return TriMesh(mesh.vertices, f)


# ---------------------------------------------------------------- sampling


def sample_surface(mesh: TriMesh, n: int, rng: np.random.Generator,
                   return_index: bool = False):
    """Area-uniform points on the mesh.

    With ``return_index`` also returns the face index and barycentric weights
    of every sample.
    """
    if len(mesh.faces) == 0:
        raise MeshError("cannot sample an empty mesh")
    if n <= 0:
        raise ValueError("n must be positive")
    areas = mesh.areas()
    fid = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.uniform(size=n))
    r2 = rng.uniform(size=n)
    bary = np.stack([1 - r1, r1 * (1 - r2), r1 * r2], axis=1)
    tri = mesh.triangles[fid]
    pts = np.einsum("ij,ijk->ik", bary, tri)
    if return_index:
        return pts, fid, bary
    return pts


# ---------------------------------------------------------------- queries


def closest_point_on_triangles(p, a, b, c) -> np.ndarray:
    """Closest point on triangle (a, b, c) to p, row-wise over paired arrays."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        out = a + ab * v[:, None] + ac * w[:, None]

        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / (d1 - d3)
        out = np.where(m[:, None], a + ab * t[:, None], out)
        m2 = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / (d2 - d6)
        out = np.where(m2[:, None], a + ac * t[:, None], out)
        m3 = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out = np.where(m3[:, None], b + (c - b) * t[:, None], out)
    out = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, out)
    out = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, out)
    return out


def brute_force_distance(mesh: TriMesh, pts: np.ndarray, chunk: int = 256):
    """Unsigned distance and nearest face by exhaustive search."""
    tri = mesh.triangles
    M = len(tri)
    d = np.empty(len(pts))
    fid = np.empty(len(pts), dtype=np.int64)
    for lo in range(0, len(pts), chunk):
        p = pts[lo:lo + chunk]
        k = len(p)
        P = np.repeat(p, M, axis=0)
        A = np.tile(tri[:, 0], (k, 1))
        B = np.tile(tri[:, 1], (k, 1))
        C = np.tile(tri[:, 2], (k, 1))
        cp = closest_point_on_triangles(P, A, B, C)
        dd = np.sqrt(((P - cp) ** 2).sum(axis=1)).reshape(k, M)
        fid[lo:lo + k] = dd.argmin(axis=1)
        d[lo:lo + k] = dd[np.arange(k), fid[lo:lo + k]]
    return d, fid


class MeshQuery:
    """Exact nearest-triangle distance with a centroid k-d tree for pruning."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.tri = mesh.triangles
        self.centroids = self.tri.mean(axis=1)
        self.radius = float(np.linalg.norm(self.tri - self.centroids[:, None], axis=2).max())
        self.tree = cKDTree(self.centroids)

    def distance(self, pts: np.ndarray):
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        n, M = len(pts), len(self.tri)
        d = np.full(n, np.inf)
        fid = np.zeros(n, dtype=np.int64)
        todo = np.arange(n)
        k = min(16, M)
        while len(todo):
            cd, ci = self.tree.query(pts[todo], k=k)
            cd, ci = cd.reshape(len(todo), k), ci.reshape(len(todo), k)
            P = np.repeat(pts[todo], k, axis=0)
            T = self.tri[ci.reshape(-1)]
            cp = closest_point_on_triangles(P, T[:, 0], T[:, 1], T[:, 2])
            dd = np.sqrt(((P - cp) ** 2).sum(axis=1)).reshape(len(todo), k)
            j = dd.argmin(axis=1)
            best = dd[np.arange(len(todo)), j]
            d[todo] = best
            fid[todo] = ci[np.arange(len(todo)), j]
            if k == M:
                break
            # every unseen triangle has centroid distance >= the k-th one
            done = cd[:, -1] - self.radius > best
            todo = todo[~done]
            k = min(4 * k, M)
        return d, fid

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return contains(self.mesh, pts)

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        d, _ = self.distance(pts)
        return np.where(contains(self.mesh, pts), -d, d)


# fixed sub-nanometre offset keeps vertical rays off grid-aligned mesh edges
_RAY_JITTER = np.array([3.141592653589793e-7, 2.718281828459045e-7])


def contains(mesh: TriMesh, pts: np.ndarray, bins: int = 48) -> np.ndarray:
    """Inside test by parity of +z ray crossings."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    tri = mesh.triangles
    lo, hi = mesh.bounds()
    xy = pts[:, :2] + _RAY_JITTER
    inside = np.zeros(len(pts), dtype=bool)
    cand = np.all((xy >= lo[:2]) & (xy <= hi[:2]), axis=1) & (pts[:, 2] <= hi[2])
    if not cand.any():
        return inside
    ext = np.maximum(hi[:2] - lo[:2], 1e-12)
    cell = ext / bins

    def cell_of(v):
        return np.clip(((v - lo[:2]) / cell).astype(np.int64), 0, bins - 1)

    tmin = cell_of(tri[:, :, :2].min(axis=1))
    tmax = cell_of(tri[:, :, :2].max(axis=1))
    buckets: dict[int, list[int]] = {}
    for f in range(len(tri)):
        for i in range(tmin[f, 0], tmax[f, 0] + 1):
            for j in range(tmin[f, 1], tmax[f, 1] + 1):
                buckets.setdefault(i * bins + j, []).append(f)

    idx = np.nonzero(cand)[0]
    pc = cell_of(xy[idx])
    key = pc[:, 0] * bins + pc[:, 1]
    order = np.argsort(key, kind="stable")
    idx, key = idx[order], key[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    ends = np.r_[starts[1:], len(key)]
    for s, e in zip(starts, ends):
        fl = buckets.get(int(key[s]))
        if not fl:
            continue
        t = tri[fl]
        p = xy[idx[s:e]]
        z = pts[idx[s:e], 2]
        a, b, c = t[:, 0], t[:, 1], t[:, 2]
        # edge functions, (points, faces)
        e0 = _cross2(b[None, :, :2] - a[None, :, :2], p[:, None] - a[None, :, :2])
        e1 = _cross2(c[None, :, :2] - b[None, :, :2], p[:, None] - b[None, :, :2])
        e2 = _cross2(a[None, :, :2] - c[None, :, :2], p[:, None] - c[None, :, :2])
        hit = ((e0 > 0) & (e1 > 0) & (e2 > 0)) | ((e0 < 0) & (e1 < 0) & (e2 < 0))
        with np.errstate(divide="ignore", invalid="ignore"):
            tot = e0 + e1 + e2
            zi = (e1 * a[None, :, 2] + e2 * b[None, :, 2] + e0 * c[None, :, 2]) / tot
        hit &= zi > z[:, None]
        inside[idx[s:e]] = (hit.sum(axis=1) % 2) == 1
    return inside


def _cross2(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def raycast(mesh: TriMesh, origins: np.ndarray, dirs: np.ndarray, chunk: int = 128):
    """First-hit distance along each ray (inf on a miss) and the face hit."""
    tri = mesh.triangles
    a = tri[:, 0]
    e1 = tri[:, 1] - a
    e2 = tri[:, 2] - a
    n = len(origins)
    t_hit = np.full(n, np.inf)
    f_hit = np.full(n, -1, dtype=np.int64)
    for lo in range(0, n, chunk):
        o = origins[lo:lo + chunk, None, :]
        d = dirs[lo:lo + chunk, None, :]
        pvec = np.cross(d, e2[None])
        det = np.einsum("rfk,fk->rf", pvec, e1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            tvec = o - a[None]
            u = np.einsum("rfk,rfk->rf", tvec, pvec) * inv
            qvec = np.cross(tvec, e1[None])
            v = np.einsum("rfk,rfk->rf", d, qvec) * inv
            t = np.einsum("fk,rfk->rf", e2, qvec) * inv
            ok = (np.abs(det) > 1e-14) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
        t = np.where(ok, t, np.inf)
        j = t.argmin(axis=1)
        t_hit[lo:lo + chunk] = t[np.arange(len(j)), j]
        f_hit[lo:lo + chunk] = np.where(np.isfinite(t_hit[lo:lo + chunk]), j, -1)
    return t_hit, f_hit


# ---------------------------------------------------------------- clouds & metrics


def voxel_downsample(cloud: np.ndarray, target_n: int, rng: np.random.Generator,
                     max_iter: int = 40) -> tuple[np.ndarray, bool]:
    """Voxel-grid subsample to exactly ``target_n`` points.

    Binary-searches the voxel edge until the occupied-voxel count is within
    10% of the target, keeps the point nearest each voxel's mean, then trims
    or pads by random choice.  Returns ``(points, undersized)``; a cloud of
    at most ``target_n`` points comes back unchanged.
    """
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if len(cloud) == 0:
        raise ValueError("cannot downsample an empty cloud")
    if len(cloud) <= target_n:
        return cloud, len(cloud) < target_n
    lo = cloud.min(axis=0)
    ext = float(np.max(cloud.max(axis=0) - lo))
    if ext == 0:
        keep = rng.choice(len(cloud), size=target_n, replace=False)
        return cloud[np.sort(keep)], False

    def reps(size):
        keys = np.floor((cloud - lo) / size).astype(np.int64)
        _, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        m = inv.max() + 1
        cnt = np.bincount(inv, minlength=m)
        mean = np.stack([np.bincount(inv, cloud[:, k], m) for k in range(3)], axis=1) / cnt[:, None]
        d = ((cloud - mean[inv]) ** 2).sum(axis=1)
        order = np.lexsort((d, inv))
        first = order[np.r_[True, inv[order][1:] != inv[order][:-1]]]
        return first

    a, b = np.log(ext * 1e-6), np.log(ext * 2)
    best = None
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        sel = reps(np.exp(mid))
        if best is None or abs(len(sel) - target_n) < abs(len(best) - target_n):
            best = sel
        if abs(len(sel) - target_n) <= 0.1 * target_n:
            break
        if len(sel) > target_n:
            a = mid
        else:
            b = mid
    sel = best
    if len(sel) > target_n:
        sel = rng.choice(sel, size=target_n, replace=False)
    elif len(sel) < target_n:
        rest = np.setdiff1d(np.arange(len(cloud)), sel)
        sel = np.concatenate([sel, rng.choice(rest, size=target_n - len(sel), replace=False)])
    return cloud[np.sort(sel)], False


def volumetric_iou(mesh_a: TriMesh, mesh_b: TriMesh, n: int = 100_000, seed: int = 0,
                   padding: float = 0.1) -> float:
    """Monte-Carlo IoU over the padded joint bounding box."""
    for m, name in ((mesh_a, "first"), (mesh_b, "second")):
        if not m.is_watertight():
            raise MeshError(f"{name} mesh is not watertight; inside test is undefined")
    la, ha = mesh_a.bounds()
    lb, hb = mesh_b.bounds()
    lo, hi = np.minimum(la, lb), np.maximum(ha, hb)
    pad = padding * (hi - lo)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo - pad, hi + pad, size=(n, 3))
    ia = contains(mesh_a, pts)
    ib = ia if mesh_b is mesh_a else contains(mesh_b, pts)
    union = np.count_nonzero(ia | ib)
    if union == 0:
        return 0.0
    return np.count_nonzero(ia & ib) / union


@dataclass
class ContactPatch:
    points: np.ndarray
    probs: np.ndarray
    eps: float
    delta: float = float("inf")

    @property
    def empty(self) -> bool:
        return len(self.points) == 0


@dataclass
class EvalRecord:
    surface_cd: float
    iou: float
    patch_cd: float | None  # None when no patch was predicted
    patch_predicted: bool
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"surface_cd": self.surface_cd, "iou": self.iou, "patch_cd": self.patch_cd,
                "patch_predicted": self.patch_predicted, **self.extra}


def evaluate(pred_mesh: TriMesh, pred_patch: np.ndarray, gt_mesh: TriMesh, gt_patch: np.ndarray,
             seed: int = 0, n_surface: int = 10_000, n_patch: int = 300,
             n_iou: int = 100_000) -> EvalRecord:
    """Surface CD on 10k-point samples, patch CD on 300-point voxel subsamples, IoU.

    Prediction and ground truth are each sampled from a generator seeded with
    ``seed``, so identical inputs give identical samples and zero distances.
    """
    def rng():
        return np.random.default_rng(seed)

    surface_cd = chamfer(sample_surface(pred_mesh, n_surface, rng()),
                         sample_surface(gt_mesh, n_surface, rng()))
    iou = volumetric_iou(pred_mesh, gt_mesh, n=n_iou, seed=seed)
    pred_patch = np.asarray(pred_patch, dtype=np.float64).reshape(-1, 3)
    gt_patch = np.asarray(gt_patch, dtype=np.float64).reshape(-1, 3)
    if len(pred_patch) == 0 or len(gt_patch) == 0:
        return EvalRecord(surface_cd, iou, None, len(pred_patch) > 0,
                          {"gt_patch_empty": len(gt_patch) == 0})
    pp, _ = voxel_downsample(pred_patch, n_patch, rng())
    gp, _ = voxel_downsample(gt_patch, n_patch, rng())
    return EvalRecord(surface_cd, iou, chamfer(pp, gp), True)


def extract_contact_patch(field, mesh: TriMesh, eps: float = 0.2, n_candidates: int = 50_000,
                          delta: float = float("inf"), rng: np.random.Generator | None = None
                          ) -> ContactPatch:
    """Rejection-sample the surface: keep candidates with contact > eps.

    ``field`` needs ``sdf(q)`` and ``contact(q)``.  Candidates come from the
    reconstructed mesh and are also required to satisfy |sdf| <= delta, so
    every accepted point lies on the predicted surface.  An empty patch is a
    legal outcome.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie strictly between 0 and 1")
    if n_candidates < 1:
        raise ValueError("n_candidates must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    cand = sample_surface(mesh, n_candidates, rng)
    c = np.asarray(field.contact(cand), dtype=np.float64)
    keep = c > eps
    if np.isfinite(delta) and keep.any():
        idx = np.flatnonzero(keep)
        s = np.asarray(field.sdf(cand[idx]), dtype=np.float64)
        keep[idx[np.abs(s) > delta]] = False
    return ContactPatch(cand[keep], c[keep], eps, delta)


def aggregate(values) -> dict:
    """Mean, std, median and quartiles of the non-missing values."""
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if len(v) == 0:
        return {"n": 0}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"n": int(len(v)), "mean": float(v.mean()), "std": float(v.std()),
            "median": float(med), "q1": float(q1), "q3": float(q3),
            "min": float(v.min()), "max": float(v.max())}
