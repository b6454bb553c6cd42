"""Perception geometry for execution time.

A synthetic renderer stands in for the text-image similarity model: every
labelled entity in view becomes a Gaussian score blob sized by its apparent
extent. The estimation pipeline then thresholds the map, takes the pixel
centroid, reads depth, and back-projects through a level, forward-facing
pinhole camera into the world, finally reducing to the robot's planar frame.
Misalignment (wrong landmark, bias, noise) is injected on top.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import ContractError

DEPTH_MIN = 0.1
DEPTH_MAX = 10.0
THRESHOLD = 0.5
HOLD_STEPS = 20

STATUS_OK = "ok"
STATUS_NO_REGION = "no_region"
STATUS_INVALID_DEPTH = "invalid_depth"

# blob sigma such that the 0.5 iso-contour matches the apparent radius
_HALF_MAX = math.sqrt(2.0 * math.log(2.0))

CAMERA_HEIGHTS = {"sim": 0.40, "real": 0.55}


@dataclass(frozen=True)
class CameraModel:
    width: int = 224
    height: int = 224
    hfov: float = 1.5
    vfov: float = 1.0
    mount_height: float = 0.40
    mount_forward: float = 0.0

    @classmethod
    def preset(cls, name: str = "sim", width: int = 224, height: int = 224) -> "CameraModel":
        if name not in CAMERA_HEIGHTS:
            raise ContractError(f"unknown camera preset {name!r}")
        return cls(width=width, height=height, mount_height=CAMERA_HEIGHTS[name])

    @property
    def fx(self) -> float:
        return (self.width / 2) / math.tan(self.hfov / 2)

    @property
    def fy(self) -> float:
        return (self.height / 2) / math.tan(self.vfov / 2)

    @property
    def cx(self) -> float:
        return self.width / 2

    @property
    def cy(self) -> float:
        return self.height / 2

    def resized(self, width: int, height: int) -> "CameraModel":
        return CameraModel(width, height, self.hfov, self.vfov, self.mount_height, self.mount_forward)


@dataclass
class SimilarityMap:
    scores: np.ndarray  # (H, W) in [0, 1]
    provenance: str = "synthetic"

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ContractError("similarity map must be 2-d")
        if not (np.all(self.scores >= 0.0) and np.all(self.scores <= 1.0)):
            raise ContractError("similarity scores must lie in [0, 1]")


@dataclass
class DepthMap:
    """Metric depth grid. Values are clipped to the sensor range on construction;
    non-finite or non-positive readings are marked invalid."""

    depth: np.ndarray
    valid: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        raw = np.asarray(self.depth, dtype=np.float64)
        ok = np.isfinite(raw) & (raw > 0)
        if self.valid is not None:
            ok &= np.asarray(self.valid, dtype=bool)
        self.depth = np.where(ok, np.clip(np.where(ok, raw, DEPTH_MIN), DEPTH_MIN, DEPTH_MAX), np.nan)
        self.valid = ok


@dataclass
class GroundingResult:
    status: str
    pixel: np.ndarray | None = None  # (u, v)
    position: np.ndarray | None = None  # world (x, y, z)
    planar: np.ndarray | None = None  # robot-frame (x, y) after misalignment

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


@dataclass
class MisalignmentModel:
    p_wrong: float = 0.0
    noise_std: float = 0.0
    bias: tuple[float, float] = (0.0, 0.0)  # robot-frame, metres
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_wrong <= 1.0:
            raise ContractError("p_wrong must be a probability")
        if self.noise_std < 0:
            raise ContractError("noise_std must be non-negative")

    @property
    def is_identity(self) -> bool:
        return self.p_wrong == 0 and self.noise_std == 0 and tuple(self.bias) == (0.0, 0.0)


IDENTITY = MisalignmentModel()


# --- pixel / world geometry -------------------------------------------------------


def camera_pose(cam: CameraModel, robot_pose) -> tuple[np.ndarray, float]:
    """World position of the camera optical centre and its yaw."""
    x, y, yaw = robot_pose
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([x + cam.mount_forward * c, y + cam.mount_forward * s, cam.mount_height]), yaw


def world_to_camera(points, cam: CameraModel, robot_pose) -> np.ndarray:
    """World (..., 3) -> camera optical frame (x right, y down, z forward)."""
    origin, yaw = camera_pose(cam, robot_pose)
    d = np.asarray(points, dtype=np.float64) - origin
    c, s = math.cos(yaw), math.sin(yaw)
    fwd = c * d[..., 0] + s * d[..., 1]
    left = -s * d[..., 0] + c * d[..., 1]
    up = d[..., 2]
    return np.stack([-left, -up, fwd], axis=-1)


def camera_to_world(points_cam, cam: CameraModel, robot_pose) -> np.ndarray:
    origin, yaw = camera_pose(cam, robot_pose)
    p = np.asarray(points_cam, dtype=np.float64)
    fwd, left, up = p[..., 2], -p[..., 0], -p[..., 1]
    c, s = math.cos(yaw), math.sin(yaw)
    return np.stack([c * fwd - s * left, s * fwd + c * left, up], axis=-1) + origin


def project(point_world, cam: CameraModel, robot_pose):
    """World point -> (pixel (u, v), depth). Pixel is None behind the camera."""
    pc = world_to_camera(point_world, cam, robot_pose)
    z = pc[..., 2]
    if np.any(z <= 0):
        return None, z
    u = cam.fx * pc[..., 0] / z + cam.cx
    v = cam.fy * pc[..., 1] / z + cam.cy
    return np.stack([u, v], axis=-1), z


def pixel_ray(pixel, cam: CameraModel) -> np.ndarray:
    u, v = np.asarray(pixel, dtype=np.float64)[..., 0], np.asarray(pixel, dtype=np.float64)[..., 1]
    return np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)


def backproject_depth(pixel, depth: float, cam: CameraModel, robot_pose) -> np.ndarray:
    """Pixel and metric depth -> world point, no range checks."""
    return camera_to_world(depth * pixel_ray(pixel, cam), cam, robot_pose)


def backproject(pixel, depth: DepthMap, cam: CameraModel, robot_pose) -> GroundingResult:
    """Back-project one pixel using the depth stored at that pixel."""
    u, v = (int(round(c)) for c in pixel)
    if not (0 <= u < depth.depth.shape[1] and 0 <= v < depth.depth.shape[0]):
        raise ContractError(f"pixel {pixel} outside the image")
    if not depth.valid[v, u]:
        return GroundingResult(STATUS_INVALID_DEPTH, pixel=np.asarray(pixel, dtype=float))
    d = float(depth.depth[v, u])
    return GroundingResult(STATUS_OK, np.asarray(pixel, dtype=float), backproject_depth(pixel, d, cam, robot_pose))


def world_to_robot_planar(point_world, robot_pose) -> np.ndarray:
    x, y, yaw = robot_pose
    dx, dy = point_world[0] - x, point_world[1] - y
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([c * dx + s * dy, -s * dx + c * dy])


def threshold_centroid(smap: SimilarityMap, tau: float = THRESHOLD):
    """Mean (u, v) over pixels scoring >= tau, or None when no pixel qualifies.

    All qualifying pixels are averaged together, so two separate blobs yield
    their midpoint.
    """
    if not 0.0 < tau < 1.0:
        raise ContractError("threshold must lie in (0, 1)")
    return _mask_centroid(smap.scores >= tau)


def _mask_centroid(mask):
    vs, us = np.nonzero(mask)
    if len(us) == 0:
        return None
    return np.array([us.mean(), vs.mean()])


def map_pixel(pixel, src: CameraModel, dst: CameraModel) -> np.ndarray:
    """Rescale a pixel coordinate between two resolutions of the same camera."""
    return np.asarray(pixel, dtype=float) * [dst.width / src.width, dst.height / src.height]


# --- synthetic scene --------------------------------------------------------------


@dataclass
class Entity:
    kind: str  # box | cylinder | point
    position: tuple[float, float]
    yaw: float = 0.0
    half_extents: tuple[float, float] = (0.295, 0.295)
    radius: float = 0.3
    height: float = 0.35

    @property
    def center(self) -> np.ndarray:
        return np.array([self.position[0], self.position[1], self.height / 2])

    @property
    def apparent_radius(self) -> float:
        if self.kind == "box":
            return float(np.hypot(*self.half_extents)) * 0.85
        if self.kind == "cylinder":
            return self.radius
        return 0.1


@dataclass
class Scene:
    """Entities grouped by label. One entity may appear under several labels."""

    labels: dict[str, list[Entity]] = field(default_factory=dict)

    def entities(self) -> list[Entity]:
        seen, out = set(), []
        for ents in self.labels.values():
            for e in ents:
                if id(e) not in seen:
                    seen.add(id(e))
                    out.append(e)
        return out


def scene_from_state(state, i: int, config) -> Scene:
    """Labels for env ``i``: ``object``, ``goal`` (instructed), ``goal_alt`` (other) and ``landmark`` (all)."""
    box = Entity("box", tuple(state.obj_pos[i]), float(state.obj_yaw[i]), tuple(config.object_half_extents),
                 height=config.object_height)
    kind = "cylinder" if config.goal_mode == "cylinder" else "point"
    goals = [Entity(kind, tuple(g), radius=config.goal_radius, height=config.goal_height) for g in state.goals[i]]
    gi = int(state.goal_index[i])
    labels = {"object": [box], "goal": [goals[gi]], "landmark": goals}
    if len(goals) > 1:
        labels["goal_alt"] = [goals[1 - gi]]
    return Scene(labels)


def _ground_depth(cam: CameraModel, us, vs) -> np.ndarray:
    # level camera: rays below the horizon hit the floor at z = mount_height / ray_down
    down = (vs - cam.cy) / cam.fy
    with np.errstate(divide="ignore"):
        return np.where(down > 0, cam.mount_height / np.where(down > 0, down, 1.0), np.inf)


def _ray_box_depth(rays_w, origin, ent: Entity) -> np.ndarray:
    """Slab intersection of world rays with the box prism; returns the ray parameter (== camera depth)."""
    c, s = math.cos(ent.yaw), math.sin(ent.yaw)
    o = origin - ent.center
    o_b = np.array([c * o[0] + s * o[1], -s * o[0] + c * o[1], o[2]])
    d = rays_w
    d_b = np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1], d[..., 2]], axis=-1)
    half = np.array([ent.half_extents[0], ent.half_extents[1], ent.height / 2])
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o_b) / d_b
        t2 = (half - o_b) / d_b
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    hit = (tmax >= tmin) & (tmax > 0)
    return np.where(hit, np.maximum(tmin, 0.0), np.inf)


def _ray_cylinder_depth(rays_w, origin, ent: Entity) -> np.ndarray:
    ox, oy = origin[0] - ent.position[0], origin[1] - ent.position[1]
    dx, dy, dz = rays_w[..., 0], rays_w[..., 1], rays_w[..., 2]
    a = dx * dx + dy * dy
    b = 2 * (ox * dx + oy * dy)
    cc = ox * ox + oy * oy - ent.radius ** 2
    disc = b * b - 4 * a * cc
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (-b - np.sqrt(disc)) / (2 * a)
    z = origin[2] + t * dz
    hit = (disc >= 0) & (t > 0) & (z >= 0) & (z <= ent.height)
    return np.where(hit, t, np.inf)


@dataclass
class RenderOutput:
    maps: dict[str, SimilarityMap]
    depth: DepthMap


def _finish_depth(raw) -> DepthMap:
    return DepthMap(np.where(np.isfinite(raw), raw, np.nan))


@functools.lru_cache(maxsize=8)
def _pixel_grid(cam: CameraModel) -> tuple[np.ndarray, np.ndarray, np.ndarray, DepthMap]:
    vs, us = np.mgrid[0:cam.height, 0:cam.width].astype(np.float64)
    ground = _ground_depth(cam, us, vs)
    return us, vs, ground, _finish_depth(ground)


def render_synthetic(scene: Scene, cam: CameraModel, robot_pose, depth_mode: str = "center",
                     labels=None) -> RenderOutput:
    """Similarity map per label (or only for ``labels``) plus one depth map.

    ``depth_mode="center"`` gives each pixel the centre depth of the entity
    whose blob dominates there (noiseless position recovery, no cross-entity
    occlusion); ``"surface"`` ray-casts box and cylinder geometry and keeps
    the nearest hit, so back-projection lands on the visible surface.
    """
    if depth_mode not in ("center", "surface"):
        raise ContractError(f"unknown depth mode {depth_mode!r}")
    H, W = cam.height, cam.width
    us, vs, ground, ground_map = _pixel_grid(cam)
    depth = ground.copy()
    owner = np.zeros((H, W))
    blobs: dict[int, tuple[tuple[slice, slice], np.ndarray]] = {}
    touched = []  # windows where depth may differ from the bare floor

    origin, yaw = camera_pose(cam, robot_pose)
    for ent in scene.entities():
        px, z = project(ent.center, cam, robot_pose)
        if px is None or z < DEPTH_MIN or not (0 <= px[0] < W and 0 <= px[1] < H):
            continue
        rad = ent.apparent_radius
        sx = cam.fx * rad / z / _HALF_MAX
        sy = cam.fy * max(rad, ent.height / 2) / z / _HALF_MAX
        # blobs are truncated at 3 sigma (values below 0.012 become 0)
        u0, u1 = max(0, int(px[0] - 3 * sx)), min(W, int(px[0] + 3 * sx) + 2)
        v0, v1 = max(0, int(px[1] - 3 * sy)), min(H, int(px[1] + 3 * sy) + 2)
        win = (slice(v0, v1), slice(u0, u1))
        # per-axis terms broadcast to the same values as the full-grid expression
        gu = ((us[0, win[1]] - px[0]) / sx) ** 2
        gv = ((vs[win[0], 0] - px[1]) / sy) ** 2
        g = np.exp(-0.5 * (gu[None, :] + gv[:, None]))
        blobs[id(ent)] = (win, g)
        if depth_mode == "center" or ent.kind == "point":
            # g >= 0.5 only within 1.18 sigma, and smaller owner values never decide a pixel
            cu0, cu1 = max(u0, int(px[0] - 1.2 * sx)), min(u1, int(px[0] + 1.2 * sx) + 2)
            cv0, cv1 = max(v0, int(px[1] - 1.2 * sy)), min(v1, int(px[1] + 1.2 * sy) + 2)
            core = (slice(cv0, cv1), slice(cu0, cu1))
            gc = g[cv0 - v0:cv1 - v0, cu0 - u0:cu1 - u0]
            mine = (gc >= THRESHOLD) & (gc > owner[core])
            depth[core] = np.where(mine, z, depth[core])
            owner[core] = np.maximum(owner[core], gc)
            touched.append(core)
            continue
        rays_c = pixel_ray(np.stack([us[win], vs[win]], axis=-1), cam)
        c, s = math.cos(yaw), math.sin(yaw)
        fwd, left, up = rays_c[..., 2], -rays_c[..., 0], -rays_c[..., 1]
        rays_w = np.stack([c * fwd - s * left, s * fwd + c * left, up], axis=-1)
        if ent.kind == "box":
            hit = _ray_box_depth(rays_w, origin, ent)
        else:
            hit = _ray_cylinder_depth(rays_w, origin, ent)
        depth[win] = np.minimum(depth[win], hit)
        touched.append(win)

    maps = {}
    for label, ents in scene.labels.items():
        if labels is not None and label not in labels:
            continue
        acc = np.zeros((H, W))
        for e in ents:
            if id(e) in blobs:
                win, g = blobs[id(e)]
                acc[win] = np.maximum(acc[win], g)
        # blob values already lie in [0, 1]; skip the full-frame range check
        smap = SimilarityMap.__new__(SimilarityMap)
        smap.scores, smap.provenance = acc, "synthetic"
        maps[label] = smap
    # the sensor model is per-pixel, so only touched windows need redoing
    out = DepthMap.__new__(DepthMap)
    out.depth, out.valid = ground_map.depth.copy(), ground_map.valid.copy()
    for w in touched:
        local = _finish_depth(depth[w])
        out.depth[w], out.valid[w] = local.depth, local.valid
    return RenderOutput(maps, out)


# --- estimation pipeline ----------------------------------------------------------


def estimate_position(
    cam: CameraModel,
    robot_pose,
    maps: dict[str, SimilarityMap],
    depth: DepthMap,
    target: str,
    tau: float = THRESHOLD,
    mis: MisalignmentModel = IDENTITY,
    rng: np.random.Generator | None = None,
    *,
    alternative: str | None = None,
    swap: bool | None = None,
    depth_reduce: str = "median",
) -> GroundingResult:
    """Threshold -> centroid -> depth -> back-projection -> planar robot frame -> misalignment.

    With probability ``mis.p_wrong`` (or when ``swap`` is forced) the
    ``alternative`` label is grounded instead of ``target``. ``depth_reduce``
    is ``"median"`` (median valid depth over the region, at the centroid
    pixel) or ``"pixels"`` (back-project every region pixel, then average).
    """
    if rng is None:
        rng = np.random.default_rng(mis.seed)
    if swap is None:
        swap = mis.p_wrong > 0 and rng.random() < mis.p_wrong
    label = alternative if (swap and alternative is not None and alternative in maps) else target
    if not 0.0 < tau < 1.0:
        raise ContractError("threshold must lie in (0, 1)")
    region = maps[label].scores >= tau
    px = _mask_centroid(region)
    if px is None:
        return GroundingResult(STATUS_NO_REGION)

    ok = region & depth.valid
    if not ok.any():
        return GroundingResult(STATUS_INVALID_DEPTH, pixel=px)
    if depth_reduce == "median":
        d = float(np.median(depth.depth[ok]))
        p_world = backproject_depth(px, d, cam, robot_pose)
    elif depth_reduce == "pixels":
        vs, us = np.nonzero(ok)
        pts = backproject_depth(np.stack([us, vs], axis=-1).astype(float), depth.depth[ok][:, None], cam, robot_pose)
        p_world = pts.mean(axis=0)
    else:
        raise ContractError(f"unknown depth reduction {depth_reduce!r}")

    planar = world_to_robot_planar(p_world, robot_pose) + np.asarray(mis.bias, dtype=float)
    if mis.noise_std > 0:
        planar = planar + rng.normal(0.0, mis.noise_std, 2)
    return GroundingResult(STATUS_OK, px, p_world, planar)


class PerceptionTracker:
    """Per-robot grounding with hold-last-valid.

    Estimates are kept in world coordinates so a held value stays put while
    the robot moves; after ``hold_steps`` misses the output becomes the zero
    vector. Whether this robot grounds the wrong landmark is drawn once per
    episode.
    """

    def __init__(self, cam: CameraModel, mis: MisalignmentModel = IDENTITY, rng: np.random.Generator | None = None,
                 hold_steps: int = HOLD_STEPS, depth_mode: str = "center"):
        self.cam = cam
        self.mis = mis
        self.rng = rng if rng is not None else np.random.default_rng(mis.seed)
        self.hold_steps = hold_steps
        self.depth_mode = depth_mode
        self.reset()

    def reset(self) -> None:
        self.swap = self.mis.p_wrong > 0 and self.rng.random() < self.mis.p_wrong
        self.held: dict[str, np.ndarray] = {}
        self.misses: dict[str, int] = {}

    def observe(self, scene: Scene, robot_pose, targets=("object", "goal")) -> dict[str, np.ndarray]:
        wanted = set(targets) | ({"goal_alt"} if "goal" in targets else set())
        render = render_synthetic(scene, self.cam, robot_pose, self.depth_mode, labels=wanted)
        out = {}
        for t in targets:
            alt = "goal_alt" if t == "goal" else None
            res = estimate_position(self.cam, robot_pose, render.maps, render.depth, t, mis=self.mis, rng=self.rng,
                                    alternative=alt, swap=self.swap if alt else False)
            if res.ok:
                # hold in world frame; misalignment offsets are re-applied in the robot frame
                offset = res.planar - world_to_robot_planar(res.position, robot_pose)
                self.held[t] = np.concatenate([res.position[:2], offset])
                self.misses[t] = 0
            else:
                self.misses[t] = self.misses.get(t, 0) + 1
            if t in self.held and self.misses[t] <= self.hold_steps:
                wx, wy, ox, oy = self.held[t]
                out[t] = world_to_robot_planar((wx, wy), robot_pose) + (ox, oy)
            else:
                out[t] = np.zeros(2)
        return out


# --- fixtures ---------------------------------------------------------------------

_GRID_MAGIC = b"CGRD"


def save_grid(path, grid, kind: str = "similarity") -> None:
    """Flat float32 grid with a small header: magic, version, kind code, H, W."""
    grid = np.asarray(grid, dtype="<f4")
    code = {"similarity": 0, "depth": 1}[kind]
    with open(path, "wb") as fh:
        fh.write(_GRID_MAGIC + struct.pack("<HHII", 1, code, *grid.shape))
        fh.write(grid.tobytes())


def load_grid(path):
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != _GRID_MAGIC:
        raise ContractError(f"{path}: not a grid fixture")
    version, code, h, w = struct.unpack("<HHII", data[4:16])
    if version != 1:
        raise ContractError(f"unsupported grid version {version}")
    if code not in (0, 1) or len(data) != 16 + 4 * h * w:
        raise ContractError(f"{path}: truncated or malformed grid fixture")
    grid = np.frombuffer(data, dtype="<f4", count=h * w, offset=16).reshape(h, w).astype(np.float64)
    return SimilarityMap(grid, provenance="external") if code == 0 else DepthMap(grid)
