"""Synthetic press simulator standing in for FEM data.

Frames: the *tool frame* has its origin at the sponge centre, z pointing
from the contact face towards the wrist mount, which sits at (0, 0, +23) mm.
The world frame has z up; environments are heightfields z = h(x, y) and the
wrist presses straight down.

Deformation model: every vertex that would penetrate the environment is
pushed up (along the press axis) onto it, and the push spreads into the
body with a kernel exp(-r / decay).  A vertex touches the environment when
it ends within CONTACT_GAP of it after the spread; only touching vertices
carry load.  Because each spread term is Lipschitz
with constant depth / decay < 1 the map stays injective, so the cube mesh
stays watertight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import MeshQuery, TriMesh, box_mesh, raycast, sample_surface

HALF = 23.0  # sponge half extent, mm
WRIST = np.array([0.0, 0.0, HALF])
CONTACT_THRESHOLD = 0.1  # mm of projection displacement
CONTACT_GAP = 0.5  # mm left between a touching vertex and the environment
MIN_CONTACT_AREA = 1e-6  # mm^2
KINDS = ("box", "curves", "ridges")


class PressError(ValueError):
    """The press never reaches the environment."""


def nominal_mesh(divisions: int = 20) -> TriMesh:
    return box_mesh([-HALF] * 3, [HALF] * 3, divisions)


# ---------------------------------------------------------------- environments


@dataclass
class Heightfield:
    kind: str
    seed: int
    params: dict

    def height(self, xy: np.ndarray) -> np.ndarray:
        """z at each (x, y); -inf where there is no surface."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        x, y = xy[:, 0], xy[:, 1]
        p = self.params
        if self.kind == "box":
            z = np.full(len(xy), p["z"])
            lo, hi = np.asarray(p["lo"]), np.asarray(p["hi"])
            inside = (x >= lo[0]) & (x <= hi[0]) & (y >= lo[1]) & (y <= hi[1])
            return np.where(inside, z, -np.inf)
        if self.kind == "curves":
            z = np.full(len(xy), p["base"])
            for c, a, s in zip(p["centers"], p["amps"], p["sigmas"]):
                r2 = (x - c[0]) ** 2 + (y - c[1]) ** 2
                z = z + a * np.exp(-r2 / (2 * s * s))
            return z
        if self.kind == "ridges":
            z = np.zeros(len(xy))
            for r in p["ridges"]:
                d = self._ridge_dist(r, x, y)
                z = np.maximum(z, r["height"] * (1 - np.abs(d) / r["half_width"]))
            return z
        raise ValueError(f"unknown environment kind {self.kind!r}")

    @staticmethod
    def _ridge_dist(r, x, y):
        th = r["angle"]
        return (x - r["point"][0]) * -np.sin(th) + (y - r["point"][1]) * np.cos(th)

    def gradient(self, xy: np.ndarray) -> np.ndarray:
        """(dz/dx, dz/dy); zero outside a box top."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        x, y = xy[:, 0], xy[:, 1]
        g = np.zeros((len(xy), 2))
        p = self.params
        if self.kind == "curves":
            for c, a, s in zip(p["centers"], p["amps"], p["sigmas"]):
                dx, dy = x - c[0], y - c[1]
                e = a * np.exp(-(dx * dx + dy * dy) / (2 * s * s)) / (s * s)
                g[:, 0] -= e * dx
                g[:, 1] -= e * dy
        elif self.kind == "ridges":
            best = np.zeros(len(xy))
            for r in p["ridges"]:
                d = self._ridge_dist(r, x, y)
                z = r["height"] * (1 - np.abs(d) / r["half_width"])
                take = z > best
                slope = -np.sign(d) * r["height"] / r["half_width"]
                n = np.array([-np.sin(r["angle"]), np.cos(r["angle"])])
                g[take] = slope[take, None] * n
                best = np.maximum(best, z)
        return g

    def normal(self, xy: np.ndarray) -> np.ndarray:
        g = self.gradient(xy)
        n = np.concatenate([-g, np.ones((len(g), 1))], axis=1)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def slope_bound(self) -> float:
        """Analytic upper bound on |grad z| (used for the smoothness check)."""
        p = self.params
        if self.kind == "curves":
            return float(sum(abs(a) / (s * np.sqrt(np.e)) for a, s in zip(p["amps"], p["sigmas"])))
        if self.kind == "ridges":
            return float(max(r["height"] / r["half_width"] for r in p["ridges"]))
        return 0.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "params": self.params}


def make_environment(kind: str, seed: int) -> Heightfield:
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    rng = np.random.default_rng([seed, KINDS.index(kind)])
    if kind == "box":
        params = {"z": 0.0}
        if rng.uniform() < 0.5:
            # one edge passes near the origin so presses can hang over it
            side = rng.uniform(-20.0, 20.0)
            ax = int(rng.integers(0, 2))
            lo, hi = [-200.0, -200.0], [200.0, 200.0]
            if rng.uniform() < 0.5:
                hi[ax] = side
            else:
                lo[ax] = side
            params.update(lo=lo, hi=hi, edge=True)
        else:
            params.update(lo=[-200.0, -200.0], hi=[200.0, 200.0], edge=False)
        return Heightfield(kind, seed, params)
    if kind == "curves":
        n = int(rng.integers(2, 5))
        params = {
            "base": 0.0,
            "centers": rng.uniform(-40.0, 40.0, size=(n, 2)).tolist(),
            "amps": (rng.uniform(4.0, 12.0, size=n) * rng.choice([-1.0, 1.0], size=n)).tolist(),
            "sigmas": rng.uniform(18.0, 35.0, size=n).tolist(),
        }
        return Heightfield(kind, seed, params)
    n = int(rng.integers(2, 6))
    ridges = []
    for _ in range(n):
        ridges.append({
            "point": rng.uniform(-30.0, 30.0, size=2).tolist(),
            "angle": float(rng.uniform(0, np.pi)),
            "height": float(rng.uniform(4.0, 12.0)),
            "half_width": float(rng.uniform(6.0, 20.0)),
        })
    return Heightfield(kind, seed, {"ridges": ridges})


# ---------------------------------------------------------------- presses


def rot_z(quarter_turns: int) -> np.ndarray:
    """Exact integer rotation about z by a multiple of 90 degrees."""
    c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][quarter_turns % 4]
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def rotation(yaw: float, tilt: float, tilt_dir: float) -> np.ndarray:
    """Yaw about z followed by a tilt of ``tilt`` rad about a horizontal axis."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    axis = np.array([np.cos(tilt_dir), np.sin(tilt_dir), 0.0])
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    Rt = np.eye(3) + np.sin(tilt) * K + (1 - np.cos(tilt)) * K @ K
    return Rt @ Rz


@dataclass
class PressSpec:
    rotation: np.ndarray  # tool -> world
    offset: tuple[float, float]  # world xy of the sponge centre
    depth: float  # mm past first contact

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.offset = tuple(float(v) for v in self.offset)

    def rotated(self, quarter_turns: int) -> "PressSpec":
        """Same press with the tool spun about its own z axis."""
        return PressSpec(self.rotation @ rot_z(quarter_turns), self.offset, self.depth)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "offset": list(self.offset), "depth": self.depth}


def sample_press(rng: np.random.Generator, max_tilt: float = 0.3, max_offset: float = 15.0,
                 depth_range=(3.0, 10.0)) -> PressSpec:
    R = rotation(rng.uniform(0, 2 * np.pi), rng.uniform(0, max_tilt), rng.uniform(0, 2 * np.pi))
    off = rng.uniform(-max_offset, max_offset, size=2)
    return PressSpec(R, tuple(off), float(rng.uniform(*depth_range)))


@dataclass
class PressResult:
    """Geometry and wrench of one press, all in the tool frame."""

    nominal: TriMesh
    deformed: TriMesh
    penetration: np.ndarray  # per vertex projection onto the environment, mm
    contact: np.ndarray  # per vertex bool, touching with projection above threshold
    wrench: np.ndarray  # (Fx, Fy, Fz, Tx, Ty, Tz) in N and N*mm
    contact_area: float
    world_z_shift: float
    env_normals: np.ndarray  # per contacting vertex, tool frame
    flagged: bool = False  # contact area below the pruning threshold

    @property
    def displacement(self) -> np.ndarray:
        return self.deformed.vertices - self.nominal.vertices


def simulate_press(env: Heightfield, press: PressSpec, stiffness: float = 2.4e-4,
                   decay: float = 12.0, mesh: TriMesh | None = None) -> PressResult:
    """Press the sponge into ``env``; see the module docstring for the model."""
    mesh = mesh if mesh is not None else nominal_mesh()
    R = press.rotation
    V0 = mesh.vertices
    X = V0 @ R.T
    X[:, 0] += press.offset[0]
    X[:, 1] += press.offset[1]
    h = env.height(X[:, :2])
    gap = X[:, 2] - h
    if not np.any(np.isfinite(gap)):
        raise PressError("press never contacts the environment")
    t0 = float(np.min(gap))
    shift = -t0 - press.depth
    Z = X[:, 2] + shift
    with np.errstate(invalid="ignore"):
        pen = np.where(np.isfinite(h), np.maximum(0.0, h - Z), 0.0)

    # spread the projection into the body
    lift = pen.copy()
    src = np.flatnonzero(pen > 0)
    if len(src):
        for lo in range(0, len(V0), 2048):
            r = np.linalg.norm(V0[lo:lo + 2048, None, :] - V0[None, src, :], axis=2)
            lift[lo:lo + 2048] = np.max(pen[src][None, :] * np.exp(-r / decay), axis=1)
        lift = np.maximum(lift, pen)

    up_tool = R.T @ np.array([0.0, 0.0, 1.0])
    Vd = V0 + lift[:, None] * up_tool[None, :]
    deformed = TriMesh(Vd, mesh.faces)

    areas = mesh.vertex_areas()
    touching = (pen > 0) & (lift - pen <= CONTACT_GAP)
    load = np.where(touching, pen, 0.0)
    contact = touching & (pen > CONTACT_THRESHOLD)
    n_env = np.zeros_like(V0)
    if len(src):
        n_env[src] = env.normal(X[src, :2])
    wrench = _wrench(stiffness, load, areas, n_env, X, lift, shift, R, press)
    area = float(areas[contact].sum())
    return PressResult(mesh, deformed, pen, contact, wrench, area, shift, n_env @ R,
                       flagged=area < MIN_CONTACT_AREA)


def _wrench(k, pen, areas, n_env, X, lift, shift, R, press) -> np.ndarray:
    """Load the tool applies to the environment, reported in the tool frame."""
    f = -k * (pen * areas)[:, None] * n_env
    pos = X.copy()
    pos[:, 2] += shift + lift
    wrist = R @ WRIST + np.array([press.offset[0], press.offset[1], shift])
    F = f.sum(axis=0)
    T = np.cross(pos - wrist, f).sum(axis=0)
    return np.concatenate([R.T @ F, R.T @ T])


# ---------------------------------------------------------------- labels


@dataclass
class SampleSet:
    """Query points with signed distance, normals (NaN off surface) and contact."""

    points: np.ndarray
    sdf: np.ndarray
    normals: np.ndarray
    contact: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.sdf = np.asarray(self.sdf, dtype=np.float64).reshape(-1)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        self.contact = np.asarray(self.contact, dtype=np.float64).reshape(-1)

    @property
    def on_surface(self) -> np.ndarray:
        return self.sdf == 0.0

    def __len__(self):
        return len(self.sdf)

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.points[idx], self.sdf[idx], self.normals[idx], self.contact[idx])

    def transformed(self, R: np.ndarray) -> "SampleSet":
        return SampleSet(self.points @ R.T, self.sdf, self.normals @ R.T, self.contact)


def label_samples(deformed: TriMesh, n_off: int = 40_000, n_surface: int = 20_000,
                  rng: np.random.Generator | None = None,
                  vertex_contact: np.ndarray | None = None,
                  band: float = 0.1, near_sigma=(1.0, 4.0)) -> SampleSet:
    """Surface samples (s* = 0, face normals, contact labels) and off-surface
    samples with exact signed distance to ``deformed``.

    A surface sample is in contact when every vertex of its face is.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if not deformed.is_watertight():
        raise ValueError("mesh is not watertight")
    pts, fid, bary = sample_surface(deformed, n_surface, rng, return_index=True)
    normals = deformed.face_normals()[fid]
    if vertex_contact is None:
        contact = np.zeros(n_surface)
    else:
        contact = contact_faces(deformed, vertex_contact)[fid].astype(np.float64)

    # off surface: half jittered around the surface, half uniform in a padded box
    n_near = n_off // 2
    base = sample_surface(deformed, n_near, rng)
    sig = rng.choice(np.asarray(near_sigma, dtype=np.float64), size=(n_near, 1))
    near = base + rng.normal(size=(n_near, 3)) * sig
    lo, hi = deformed.bounds()
    pad = band * (hi - lo) + 5.0
    far = rng.uniform(lo - pad, hi + pad, size=(n_off - n_near, 3))
    off = np.concatenate([near, far])
    sdf = MeshQuery(deformed).signed_distance(off)
    keep = sdf != 0.0
    off, sdf = off[keep], sdf[keep]

    return SampleSet(
        np.concatenate([pts, off]),
        np.concatenate([np.zeros(n_surface), sdf]),
        np.concatenate([normals, np.full((len(off), 3), np.nan)]),
        np.concatenate([contact, np.zeros(len(off))]),
    )


def contact_faces(mesh: TriMesh, vertex_contact: np.ndarray) -> np.ndarray:
    return np.asarray(vertex_contact, dtype=bool)[mesh.faces].all(axis=1)


def contact_patch_points(deformed: TriMesh, vertex_contact: np.ndarray, n: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Ground-truth patch: area-uniform surface samples labelled in contact."""
    pts, fid, _ = sample_surface(deformed, n, rng, return_index=True)
    return pts[contact_faces(deformed, vertex_contact)[fid]]


# ---------------------------------------------------------------- cameras


@dataclass
class Camera:
    position: np.ndarray
    target: np.ndarray = field(default_factory=lambda: np.zeros(3))
    fov_deg: float = 40.0
    resolution: tuple[int, int] = (40, 40)

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        pos = np.asarray(self.position, dtype=np.float64)
        fwd = np.asarray(self.target, dtype=np.float64) - pos
        fwd /= np.linalg.norm(fwd)
        helper = np.array([0.0, 0.0, 1.0]) if abs(fwd[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        right = np.cross(fwd, helper)
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        w, h = self.resolution
        tan = np.tan(np.radians(self.fov_deg) / 2)
        u = (np.arange(w) + 0.5) / w * 2 - 1
        v = (np.arange(h) + 0.5) / h * 2 - 1
        U, Vv = np.meshgrid(u * tan, v * tan, indexing="ij")
        d = fwd[None] + U.reshape(-1, 1) * right[None] + Vv.reshape(-1, 1) * up[None]
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.repeat(pos[None], len(d), axis=0), d


def ring_cameras(n: int = 8, radius: float = 150.0, height: float = 0.0, **kw) -> list[Camera]:
    """``n`` cameras evenly spaced around the tool z axis, all facing the sponge."""
    cams = []
    for k in range(n):
        a = 2 * np.pi * k / n
        cams.append(Camera(np.array([radius * np.cos(a), radius * np.sin(a), height]), **kw))
    return cams


def render_partial_cloud(mesh: TriMesh, cameras: list[Camera],
                         select: list[int] | None = None) -> np.ndarray:
    """Merged first-hit points seen by the selected cameras."""
    select = range(len(cameras)) if select is None else select
    clouds = [render_camera(mesh, cameras[i]) for i in select]
    return np.concatenate(clouds) if clouds else np.zeros((0, 3))


def render_camera(mesh: TriMesh, cam: Camera) -> np.ndarray:
    o, d = cam.rays()
    # back faces can never be the first hit on a closed mesh
    n = mesh.face_normals()
    centre = mesh.triangles.mean(axis=1)
    front = np.einsum("ij,ij->i", n, centre - np.asarray(cam.position)) < 0
    sub = TriMesh(mesh.vertices, mesh.faces[front])
    t, _ = raycast(sub, o, d)
    hit = np.isfinite(t)
    return o[hit] + t[hit, None] * d[hit]


# ---------------------------------------------------------------- noise & sysid


def inject_wrench_noise(w, p: float, seed) -> np.ndarray:
    """w + N(0, p*|w|) per component (p scales the variance)."""
    if p < 0:
        raise ValueError("noise level p must be non-negative")
    w = np.asarray(w, dtype=np.float64)
    if p == 0:
        return w.copy()
    rng = np.random.default_rng(seed)
    return w + rng.normal(size=w.shape) * np.sqrt(p * np.abs(w))


def stiffness_grid(lo: float = 1e-5, hi: float = 1e-2, n: int = 31) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def calibrate_stiffness(env: Heightfield, presses: list[PressSpec], targets: list[np.ndarray],
                        grid: np.ndarray | None = None, **sim_kw) -> tuple[float, np.ndarray]:
    """Grid line search for the stiffness minimising summed wrench error.

    Returns ``(k, objective per grid point)``.
    """
    if not presses:
        raise ValueError("need at least one press to calibrate against")
    if len(presses) != len(targets):
        raise ValueError("one target wrench per press is required")
    grid = stiffness_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    obj = np.zeros(len(grid))
    for i, k in enumerate(grid):
        for press, target in zip(presses, targets):
            w = simulate_press(env, press, stiffness=float(k), **sim_kw).wrench
            obj[i] += np.linalg.norm(w - np.asarray(target))
    return float(grid[int(np.argmin(obj))]), obj


# ---------------------------------------------------------------- analytic shapes


def cube_sdf(q, half: float = HALF) -> np.ndarray:
    """Exact signed distance to the axis-aligned cube [-half, half]^3."""
    q = np.asarray(q, dtype=np.float64)
    d = np.abs(q) - half
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
    inside = np.minimum(d.max(axis=-1), 0.0)
    return outside + inside


def sphere_sdf(q, radius: float = 20.0) -> np.ndarray:
    return np.linalg.norm(np.asarray(q, dtype=np.float64), axis=-1) - radius


def shape_samples(shape: str, rng: np.random.Generator, n_off: int = 40_000,
                  n_surface: int = 20_000, size: float = HALF,
                  near_sigma=(1.0, 4.0), pad: float = 10.0) -> SampleSet:
    """Labelled samples of an analytic nominal shape ('cube' or 'sphere').

    ``size`` is the half extent of the cube or the radius of the sphere.
    Off-surface points are half jittered around the surface and half uniform
    in the bounding box grown by ``pad``.
    """
    if shape == "cube":
        sdf_fn = lambda q: cube_sdf(q, size)  # noqa: E731

        def on_surface(n):
            pts, fid = _cube_surface(rng, n, size)
            normals = np.zeros((n, 3))
            normals[np.arange(n), fid // 2] = np.where(fid % 2 == 0, -1.0, 1.0)
            return pts, normals
    elif shape == "sphere":
        sdf_fn = lambda q: sphere_sdf(q, size)  # noqa: E731

        def on_surface(n):
            u = rng.normal(size=(n, 3))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            return size * u, u
    else:
        raise ValueError(f"unknown shape {shape!r}")
    pts, normals = on_surface(n_surface)
    n_near = n_off // 2
    base, _ = on_surface(n_near)
    sig = rng.choice(np.asarray(near_sigma, dtype=np.float64), size=(n_near, 1))
    near = base + rng.normal(size=(n_near, 3)) * sig
    far = rng.uniform(-size - pad, size + pad, size=(n_off - n_near, 3))
    off = np.concatenate([near, far])
    sdf = sdf_fn(off)
    keep = sdf != 0.0
    off, sdf = off[keep], sdf[keep]
    return SampleSet(np.concatenate([pts, off]),
                     np.concatenate([np.zeros(n_surface), sdf]),
                     np.concatenate([normals, np.full((len(off), 3), np.nan)]),
                     np.zeros(n_surface + len(off)))


def _cube_surface(rng, n, half):
    """Uniform points on the cube surface and their face id (2*axis + side)."""
    fid = rng.integers(0, 6, size=n)
    pts = rng.uniform(-half, half, size=(n, 3))
    ax = fid // 2
    pts[np.arange(n), ax] = np.where(fid % 2 == 0, -half, half)
    return pts, fid


def nominal_cloud(n: int, rng: np.random.Generator) -> np.ndarray:
    return _cube_surface(rng, n, HALF)[0]


# ---------------------------------------------------------------- interactions


@dataclass
class Interaction:
    """One labelled press, everything in the tool frame (mm, N, N*mm)."""

    samples: SampleSet
    wrench: np.ndarray
    nominal_cloud: np.ndarray
    deformed: TriMesh
    gt_patch: np.ndarray
    env: dict = field(default_factory=dict)
    press: dict = field(default_factory=dict)
    code: int = 0
    flagged: bool = False
    name: str = ""

    def rotated(self, quarter_turns: int, code: int | None = None) -> "Interaction":
        """The same interaction with every input spun about the tool z axis.

        Only quarter turns map the cube onto itself, so the nominal cloud stays
        valid.
        """
        R = rot_z(quarter_turns)
        w = np.concatenate([R @ self.wrench[:3], R @ self.wrench[3:]])
        return Interaction(self.samples.transformed(R), w, self.nominal_cloud @ R.T,
                           TriMesh(self.deformed.vertices @ R.T, self.deformed.faces),
                           self.gt_patch @ R.T, self.env, self.press,
                           self.code if code is None else code, self.flagged,
                           f"{self.name}@rz{quarter_turns % 4}")


@dataclass(frozen=True)
class GenConfig:
    n_off: int = 40_000
    n_surface: int = 20_000
    n_nominal: int = 20_000
    n_patch: int = 20_000
    stiffness: float = 2.4e-4
    decay: float = 12.0
    divisions: int = 20
    max_tilt: float = 0.3
    max_offset: float = 15.0
    depth_range: tuple[float, float] = (3.0, 10.0)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["depth_range"] = list(self.depth_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        if "depth_range" in d:
            d["depth_range"] = tuple(d["depth_range"])
        return cls(**d)


def generate_interaction(kind: str, seed: int, index: int, config: GenConfig = GenConfig(),
                         press: PressSpec | None = None) -> Interaction:
    """Simulate and label one press.

    The random stream is keyed by ``(seed, index)`` only, so interactions can
    be produced in any order or in parallel with identical results.
    """
    rng = np.random.default_rng([seed, index])
    env = make_environment(kind, int(rng.integers(2**31)))
    if press is None:
        press = sample_press(rng, config.max_tilt, config.max_offset, config.depth_range)
    res = simulate_press(env, press, config.stiffness, config.decay, nominal_mesh(config.divisions))
    samples = label_samples(res.deformed, config.n_off, config.n_surface, rng, res.contact)
    nom = nominal_cloud(config.n_nominal, rng)
    patch = contact_patch_points(res.deformed, res.contact, config.n_patch, rng)
    return Interaction(samples, res.wrench, nom, res.deformed, patch, env.to_dict(),
                       press.to_dict(), code=index, flagged=res.flagged,
                       name=f"{kind}-{seed}-{index}")
