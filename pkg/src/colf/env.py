"""Planar two-robot cooperative pushing.

Two disc robots push a rigid square box toward a goal landmark. Contact is
quasi-static: per substep each robot's overlap with the box is resolved by
splitting the minimal translation vector between robot and box, with the box
share applied at the contact point (translation plus a lever-arm rotation).
The box never coasts.

All state arrays carry a leading batch axis so a whole vector of environments
steps with one call. Robot index 0 is the leader, 1 the follower.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .nn import ContractError

try:
    import tomllib
except ModuleNotFoundError:  # py < 3.11
    import tomli as tomllib

W_LEADER = 2.5
W_FOLLOWER = 3.0
HEADING_OFFSET = 0.2
OBJ_REWARD_SCALE = 6.0
TERM_PENALTY = -2.0

LEADER, FOLLOWER = 0, 1
OBS_LEADER_DIM = 13
OBS_FOLLOWER_DIM = 11
PENETRATION_TOL = 1e-6
_RESOLVE_TOL = 1e-9

DONE_NONE, DONE_HORIZON, DONE_COLLISION = 0, 1, 2
DONE_REASONS = ("none", "horizon", "collision")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    object_half_extents: tuple[float, float] = (0.295, 0.295)
    object_height: float = 0.35
    object_mass: float = 11.0
    object_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
    goal_mode: str = "point"  # point | cylinder
    goal_radius: float = 0.3
    goal_height: float = 0.8
    goals: tuple[tuple[float, float], ...] = ((0.5, 0.0),)
    # training: sample one goal per episode uniformly in (x0, x1, y0, y1)
    goal_sample_box: tuple[float, float, float, float] | None = None
    # index of the instructed goal, or -1 to draw one uniformly per episode
    instructed_goal: int = 0
    leader_box: tuple[float, float, float, float] = (-3.0, -2.0, -2.5, -1.0)
    follower_box: tuple[float, float, float, float] = (-3.0, -2.0, 1.0, 2.5)
    leader_yaw: tuple[float, float] = (-1.5, -1.5)
    follower_yaw: tuple[float, float] = (1.5, 1.5)
    horizon: int = 300
    dt: float = 0.1
    substeps: int = 4
    robot_radius: float = 0.35
    v_max: float = 1.0
    w_max: float = 1.0
    push_split: float = 0.5
    camera: str = "sim"
    seed: int = 0

    def __post_init__(self):
        goals = tuple(tuple(float(c) for c in g) for g in self.goals)
        object.__setattr__(self, "goals", goals)
        if len(goals) not in (1, 2):
            raise ContractError("scenario needs one or two goals")
        if self.goal_mode not in ("point", "cylinder"):
            raise ContractError(f"unknown goal mode {self.goal_mode!r}")
        for box in (self.leader_box, self.follower_box):
            if not (box[1] > box[0] and box[3] > box[2]):
                raise ContractError(f"degenerate sampling box {box}")
        if self.goal_sample_box is not None:
            b = self.goal_sample_box
            if not (b[1] > b[0] and b[3] > b[2]):
                raise ContractError(f"degenerate goal box {b}")
        if not -1 <= self.instructed_goal < len(goals):
            raise ContractError("instructed_goal out of range")
        if not 0.0 <= self.push_split <= 1.0:
            raise ContractError("push_split must be in [0, 1]")

    @property
    def n_goals(self) -> int:
        return len(self.goals)

    @property
    def rot_gain(self) -> float:
        """1 / (I / m) for a uniform rectangle, in 1/m^2."""
        hx, hy = self.object_half_extents
        return 3.0 / (hx * hx + hy * hy)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["goals"] = [list(g) for g in self.goals]
        if d["goal_sample_box"] is None:
            del d["goal_sample_box"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"description"}
        if unknown:
            raise ContractError(f"unknown scenario keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if k == "description":
                continue
            kw[k] = tuple(tuple(g) for g in v) if k == "goals" else (tuple(v) if isinstance(v, list) else v)
        return cls(**kw)


def load_scenario(name_or_path) -> ScenarioConfig:
    """Load a packaged scenario by name or a TOML file by path."""
    p = Path(str(name_or_path))
    if p.suffix == ".toml" and p.exists():
        data = tomllib.loads(p.read_text())
    else:
        res = resources.files("colf") / "scenarios" / f"{name_or_path}.toml"
        if not res.is_file():
            raise FileNotFoundError(f"no scenario named {name_or_path!r}")
        data = tomllib.loads(res.read_text())
    data = data.get("scenario", data)
    return ScenarioConfig.from_dict(data)


def list_scenarios() -> list[str]:
    root = resources.files("colf") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


@dataclass
class WorldState:
    robot_pos: np.ndarray  # (N, 2, 2)
    robot_yaw: np.ndarray  # (N, 2)
    robot_twist: np.ndarray  # (N, 2, 3) commanded base-frame (vx, vy, wz), post-clip
    obj_pos: np.ndarray  # (N, 2)
    obj_yaw: np.ndarray  # (N,)
    obj_twist: np.ndarray  # (N, 3) world-frame (vx, vy, wz) over the last step
    goals: np.ndarray  # (N, G, 2)
    goal_index: np.ndarray  # (N,) instructed goal
    step_index: np.ndarray  # (N,)
    terminated: np.ndarray  # (N,) bool

    @property
    def n(self) -> int:
        return self.robot_pos.shape[0]

    @property
    def goal(self) -> np.ndarray:
        """Instructed goal position per env, (N, 2)."""
        return self.goals[np.arange(self.n), self.goal_index]

    def copy(self) -> "WorldState":
        return WorldState(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def take(self, idx) -> "WorldState":
        idx = np.atleast_1d(idx)
        return WorldState(**{f.name: getattr(self, f.name)[idx].copy() for f in fields(self)})

    def put(self, idx, other: "WorldState") -> None:
        for f in fields(self):
            getattr(self, f.name)[idx] = getattr(other, f.name)

    def rotated(self, alpha: float) -> "WorldState":
        """The whole world rotated by ``alpha`` about the origin."""
        c, s = math.cos(alpha), math.sin(alpha)
        rot = np.array([[c, -s], [s, c]])
        out = self.copy()
        out.robot_pos = self.robot_pos @ rot.T
        out.robot_yaw = wrap_angle(self.robot_yaw + alpha)
        out.obj_pos = self.obj_pos @ rot.T
        out.obj_yaw = wrap_angle(self.obj_yaw + alpha)
        out.obj_twist = self.obj_twist.copy()
        out.obj_twist[:, :2] = self.obj_twist[:, :2] @ rot.T
        out.goals = self.goals @ rot.T
        return out

    def record(self, i: int = 0) -> dict:
        return {
            "step": int(self.step_index[i]),
            "robot_pos": self.robot_pos[i].tolist(),
            "robot_yaw": self.robot_yaw[i].tolist(),
            "obj_pos": self.obj_pos[i].tolist(),
            "obj_yaw": float(self.obj_yaw[i]),
            "obj_twist": self.obj_twist[i].tolist(),
            "goal": self.goal[i].tolist(),
            "goals": self.goals[i].tolist(),
        }


@dataclass
class ObservationPair:
    leader: np.ndarray  # (N, 13)
    follower: np.ndarray  # (N, 11)


@dataclass
class RewardBreakdown:
    r_rob: np.ndarray  # (N, 2)
    r_obj: np.ndarray  # (N,)
    r_term: np.ndarray  # (N,)

    @property
    def total(self) -> np.ndarray:
        """(N, 2) per-robot totals."""
        return self.r_rob + (self.r_obj + self.r_term)[:, None]


@dataclass
class StepOutcome:
    state: WorldState
    rewards: RewardBreakdown
    done: np.ndarray
    reason: np.ndarray  # DONE_* codes

    @property
    def obs(self) -> ObservationPair:
        """Ground-truth observations of the post-step state, built on first access."""
        if not hasattr(self, "_obs"):
            self._obs = observe(self.state)
        return self._obs


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def _rot(vec: np.ndarray, yaw: np.ndarray) -> np.ndarray:
    """Rotate (..., 2) vectors by yaw (...)."""
    c, s = np.cos(yaw), np.sin(yaw)
    x, y = vec[..., 0], vec[..., 1]
    out = np.empty(np.broadcast_shapes(x.shape, np.shape(c)) + (2,))
    out[..., 0] = c * x - s * y
    out[..., 1] = s * x + c * y
    return out


def to_body(vec_world: np.ndarray, yaw: np.ndarray) -> np.ndarray:
    return _rot(vec_world, -yaw)


# --- geometry ---------------------------------------------------------------------


def rect_disc_contact(obj_pos, obj_yaw, half, center, radius):
    """Overlap of a disc with an oriented rectangle.

    Returns ``(depth, normal, point)``: penetration depth (<= 0 when separate),
    unit world normal pointing from the rectangle toward the disc, and the
    contact point on the rectangle boundary.
    """
    half = np.asarray(half, dtype=np.float64)
    c = to_body(center - obj_pos, obj_yaw)
    q = np.clip(c, -half, half)
    diff = c - q
    dist = np.linalg.norm(diff, axis=-1)
    outside = dist > 1e-12
    safe = np.where(outside, dist, 1.0)[..., None]
    n_out = diff / safe

    # centre inside: leave through the nearest face
    gap = half - np.abs(c)
    axis_x = gap[..., 0] <= gap[..., 1]
    sx = np.where(c[..., 0] >= 0, 1.0, -1.0)
    sy = np.where(c[..., 1] >= 0, 1.0, -1.0)
    n_in = np.stack([np.where(axis_x, sx, 0.0), np.where(axis_x, 0.0, sy)], axis=-1)
    q_in = np.stack(
        [np.where(axis_x, sx * half[0], c[..., 0]), np.where(axis_x, c[..., 1], sy * half[1])], axis=-1
    )
    depth_in = radius + np.where(axis_x, gap[..., 0], gap[..., 1])

    n_body = np.where(outside[..., None], n_out, n_in)
    q_body = np.where(outside[..., None], q, q_in)
    depth = np.where(outside, radius - dist, depth_in)
    return depth, _rot(n_body, obj_yaw), obj_pos + _rot(q_body, obj_yaw)


def _robot_contacts(state: WorldState, cfg: ScenarioConfig):
    """Both robots against the box at once: depth (N, 2), normal (N, 2, 2), point (N, 2, 2)."""
    return rect_disc_contact(
        state.obj_pos[:, None, :], state.obj_yaw[:, None], cfg.object_half_extents, state.robot_pos, cfg.robot_radius
    )


def _push_object(state: WorldState, cfg: ScenarioConfig) -> None:
    depth, n, pt = _robot_contacts(state, cfg)
    d = np.maximum(depth, 0.0)[..., None]
    k = cfg.push_split
    shove = -k * d * n  # box displacement contributed by each robot
    lever = pt - state.obj_pos[:, None, :]
    dyaw = cfg.rot_gain * (lever[..., 0] * shove[..., 1] - lever[..., 1] * shove[..., 0])
    state.obj_pos += shove.sum(axis=1)
    state.obj_yaw = wrap_angle(state.obj_yaw + dyaw.sum(axis=1))
    state.robot_pos += (1.0 - k) * d * n


def _robots_out_of_object(state: WorldState, cfg: ScenarioConfig) -> None:
    depth, n, _ = _robot_contacts(state, cfg)
    state.robot_pos += np.maximum(depth, 0.0)[..., None] * n


def _cylinders(state: WorldState, cfg: ScenarioConfig) -> np.ndarray | None:
    return state.goals if cfg.goal_mode == "cylinder" else None


def _object_out_of_cylinders(state: WorldState, cfg: ScenarioConfig) -> None:
    cyl = _cylinders(state, cfg)
    if cyl is None:
        return
    for g in range(cyl.shape[1]):
        depth, n, _ = rect_disc_contact(
            state.obj_pos, state.obj_yaw, cfg.object_half_extents, cyl[:, g], cfg.goal_radius
        )
        state.obj_pos -= np.maximum(depth, 0.0)[:, None] * n


def _robots_out_of_cylinders(state: WorldState, cfg: ScenarioConfig) -> None:
    cyl = _cylinders(state, cfg)
    if cyl is None:
        return
    reach = cfg.robot_radius + cfg.goal_radius
    for g in range(cyl.shape[1]):
        diff = state.robot_pos - cyl[:, g][:, None, :]
        dist = np.linalg.norm(diff, axis=-1)
        n = np.where(dist[..., None] > 1e-12, diff / np.maximum(dist, 1e-12)[..., None], np.array([1.0, 0.0]))
        state.robot_pos += np.maximum(reach - dist, 0.0)[..., None] * n


def penetration_depths(state: WorldState, cfg: ScenarioConfig) -> dict[str, np.ndarray]:
    """Worst robot-object, robot-cylinder and object-cylinder overlaps per env."""
    out = {"robot_object": _robot_contacts(state, cfg)[0].max(axis=1)}
    cyl = _cylinders(state, cfg)
    if cyl is not None:
        oc = [
            rect_disc_contact(state.obj_pos, state.obj_yaw, cfg.object_half_extents, cyl[:, g], cfg.goal_radius)[0]
            for g in range(cyl.shape[1])
        ]
        gaps = np.linalg.norm(state.robot_pos[:, :, None, :] - cyl[:, None, :, :], axis=-1)
        out["object_cylinder"] = np.max(oc, axis=0)
        out["robot_cylinder"] = (cfg.robot_radius + cfg.goal_radius - gaps).max(axis=(1, 2))
    return out


def _substep(state: WorldState, cfg: ScenarioConfig, h: float) -> None:
    before = (state.robot_pos.copy(), state.robot_yaw.copy(), state.obj_pos.copy(), state.obj_yaw.copy())

    twist = state.robot_twist
    state.robot_pos += _rot(twist[..., :2], state.robot_yaw) * h
    state.robot_yaw = wrap_angle(state.robot_yaw + twist[..., 2] * h)

    _push_object(state, cfg)
    if cfg.goal_mode == "cylinder":
        _object_out_of_cylinders(state, cfg)
        for _ in range(3):
            _robots_out_of_object(state, cfg)
            _robots_out_of_cylinders(state, cfg)
    else:
        _robots_out_of_object(state, cfg)

    # e.g. a robot wedged between box and landmark: undo the whole substep for that env
    bad = np.zeros(state.n, dtype=bool)
    for depth in penetration_depths(state, cfg).values():
        bad |= depth > _RESOLVE_TOL
    if bad.any():
        state.robot_pos[bad] = before[0][bad]
        state.robot_yaw[bad] = before[1][bad]
        state.obj_pos[bad] = before[2][bad]
        state.obj_yaw[bad] = before[3][bad]


# --- public operations ------------------------------------------------------------


def _uniform_box(rng, box, n):
    x = rng.uniform(box[0], box[1], n)
    y = rng.uniform(box[2], box[3], n)
    return np.stack([x, y], axis=-1)


def reset(config: ScenarioConfig, rng: np.random.Generator, n: int = 1) -> tuple[WorldState, ObservationPair]:
    """Sample ``n`` initial states and their ground-truth observations."""
    state = initial_state(config, rng, n)
    return state, observe(state, config)


def initial_state(config: ScenarioConfig, rng: np.random.Generator, n: int = 1) -> WorldState:
    """Sample ``n`` initial states; overlapping spawns are redrawn (up to 100 times)."""
    cfg = config
    ox, oy, oyaw = cfg.object_pose
    state = WorldState(
        robot_pos=np.zeros((n, 2, 2)),
        robot_yaw=np.zeros((n, 2)),
        robot_twist=np.zeros((n, 2, 3)),
        obj_pos=np.tile([ox, oy], (n, 1)).astype(np.float64),
        obj_yaw=np.full(n, float(oyaw)),
        obj_twist=np.zeros((n, 3)),
        goals=np.tile(np.asarray(cfg.goals, dtype=np.float64), (n, 1, 1)),
        goal_index=np.zeros(n, dtype=np.int64),
        step_index=np.zeros(n, dtype=np.int64),
        terminated=np.zeros(n, dtype=bool),
    )
    pending = np.arange(n)
    for _ in range(100):
        m = len(pending)
        state.robot_pos[pending, LEADER] = _uniform_box(rng, cfg.leader_box, m)
        state.robot_pos[pending, FOLLOWER] = _uniform_box(rng, cfg.follower_box, m)
        state.robot_yaw[pending, LEADER] = rng.uniform(*cfg.leader_yaw, m) if cfg.leader_yaw[1] > cfg.leader_yaw[0] \
            else cfg.leader_yaw[0]
        state.robot_yaw[pending, FOLLOWER] = rng.uniform(*cfg.follower_yaw, m) \
            if cfg.follower_yaw[1] > cfg.follower_yaw[0] else cfg.follower_yaw[0]
        if cfg.goal_sample_box is not None:
            state.goals[pending, 0] = _uniform_box(rng, cfg.goal_sample_box, m)
        if cfg.instructed_goal < 0:
            state.goal_index[pending] = rng.integers(0, cfg.n_goals, m)
        else:
            state.goal_index[pending] = cfg.instructed_goal

        sub = state.take(pending)
        clear = np.ones(m, dtype=bool)
        for depth in penetration_depths(sub, cfg).values():
            clear &= depth <= 0
        rr = np.linalg.norm(sub.robot_pos[:, 0] - sub.robot_pos[:, 1], axis=-1)
        clear &= rr >= 2 * cfg.robot_radius
        pending = pending[~clear]
        if len(pending) == 0:
            break
    else:
        raise RuntimeError(f"could not sample a non-overlapping initial state for {config.name}")
    return state


def step(state: WorldState, a_leader, a_follower, config: ScenarioConfig) -> StepOutcome:
    """Advance every env by one control step. The input state is not modified."""
    cfg = config
    if state.terminated.any():
        raise ContractError("cannot step a terminated state; reset it first")
    acts = np.stack([np.asarray(a_leader, dtype=np.float64), np.asarray(a_follower, dtype=np.float64)], axis=-2)
    acts = acts.reshape(state.n, 2, 3)
    if not np.isfinite(acts).all():
        raise ContractError("non-finite action")
    lim = np.array([cfg.v_max, cfg.v_max, cfg.w_max])
    nxt = state.copy()
    nxt.robot_twist = np.clip(acts, -lim, lim)

    h = cfg.dt / cfg.substeps
    for _ in range(cfg.substeps):
        _substep(nxt, cfg, h)

    nxt.obj_twist = np.concatenate(
        [(nxt.obj_pos - state.obj_pos) / cfg.dt, (wrap_angle(nxt.obj_yaw - state.obj_yaw) / cfg.dt)[:, None]],
        axis=-1,
    )
    nxt.step_index = state.step_index + 1
    done, reason = check_termination(nxt, cfg)
    rewards = compute_rewards(nxt, cfg, collided=reason == DONE_COLLISION)
    nxt.terminated = done
    return StepOutcome(nxt, rewards, done, reason)


def heading_error(robot_pos, robot_yaw, obj_pos):
    """Angle between the robot's heading and the robot->object displacement (0 when coincident)."""
    d = obj_pos - robot_pos
    rel = to_body(d, robot_yaw)
    zero = np.linalg.norm(d, axis=-1) == 0
    return np.where(zero, 0.0, np.arctan2(rel[..., 1], rel[..., 0]))


def compute_rewards(state: WorldState, config: ScenarioConfig, collided=None) -> RewardBreakdown:
    if collided is None:
        collided = check_termination(state, config)[1] == DONE_COLLISION
    w = np.array([W_LEADER, W_FOLLOWER])
    obj = state.obj_pos[:, None, :]
    dist = np.linalg.norm(state.robot_pos - obj, axis=-1)
    theta = heading_error(state.robot_pos, state.robot_yaw, np.broadcast_to(obj, state.robot_pos.shape))
    r_rob = w * np.exp(-dist) * (np.cos(theta) + HEADING_OFFSET)
    r_obj = OBJ_REWARD_SCALE * np.exp(-np.linalg.norm(state.obj_pos - state.goal, axis=-1))
    r_term = np.where(collided, TERM_PENALTY, 0.0)
    return RewardBreakdown(r_rob, r_obj, r_term)


def check_termination(state: WorldState, config: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    gap = np.linalg.norm(state.robot_pos[:, 0] - state.robot_pos[:, 1], axis=-1)
    collision = gap < 2 * config.robot_radius
    horizon = state.step_index >= config.horizon
    reason = np.where(collision, DONE_COLLISION, np.where(horizon, DONE_HORIZON, DONE_NONE))
    return reason != DONE_NONE, reason


def object_goal_distance(state: WorldState) -> np.ndarray:
    return np.linalg.norm(state.obj_pos - state.goal, axis=-1)


def metrics(state: WorldState, config: ScenarioConfig | None = None, delta: float | None = None):
    """Object-goal distance and, if ``delta`` is given, success flags (ogd < delta)."""
    ogd = object_goal_distance(state)
    if delta is None:
        return ogd
    return ogd, ogd < delta


# --- observations -----------------------------------------------------------------


def proprio(state: WorldState, r: int) -> np.ndarray:
    """The 9 non-target entries: base velocity (3), gravity (3), other robot rel. pos (2) and yaw (1)."""
    o = 1 - r
    n = state.n
    vel = np.concatenate([state.robot_twist[:, r, :2], np.zeros((n, 1))], axis=-1)
    grav = np.tile([0.0, 0.0, -1.0], (n, 1))
    other = to_body(state.robot_pos[:, o] - state.robot_pos[:, r], state.robot_yaw[:, r])
    dyaw = wrap_angle(state.robot_yaw[:, o] - state.robot_yaw[:, r])[:, None]
    return np.concatenate([vel, grav, other, dyaw], axis=-1)


def target_obs(state: WorldState, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth object and instructed-goal positions in robot ``r``'s base frame."""
    pos, yaw = state.robot_pos[:, r], state.robot_yaw[:, r]
    return to_body(state.obj_pos - pos, yaw), to_body(state.goal - pos, yaw)


def assemble_obs(obj_rel, goal_rel, rest, with_goal: bool) -> np.ndarray:
    parts = [obj_rel, goal_rel, rest] if with_goal else [obj_rel, rest]
    return np.concatenate(parts, axis=-1)


def observation(state: WorldState, r: int, with_goal: bool) -> np.ndarray:
    obj_rel, goal_rel = target_obs(state, r)
    return assemble_obs(obj_rel, goal_rel, proprio(state, r), with_goal)


def observe(state: WorldState, config: ScenarioConfig | None = None) -> ObservationPair:
    return ObservationPair(observation(state, LEADER, True), observation(state, FOLLOWER, False))


# --- vectorized wrapper -----------------------------------------------------------


@dataclass
class VecStep:
    rewards: RewardBreakdown
    done: np.ndarray
    reason: np.ndarray
    final_state: WorldState  # post-step state before any auto-reset


@dataclass
class VecTransportEnv:
    """N independent environments with auto-reset on termination."""

    config: ScenarioConfig
    n: int
    seed: int = 0
    auto_reset: bool = True
    state: WorldState = field(init=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self.state = initial_state(self.config, self.rng, self.n)

    def step(self, a_leader, a_follower) -> VecStep:
        out = step(self.state, a_leader, a_follower, self.config)
        final = out.state
        self.state = final.copy()
        if self.auto_reset and out.done.any():
            idx = np.flatnonzero(out.done)
            fresh = initial_state(self.config, self.rng, len(idx))
            self.state.put(idx, fresh)
        return VecStep(out.rewards, out.done, out.reason, final)


class TrajectoryLog:
    """Line-delimited JSON trajectory writer: one header line, then one record per step."""

    def __init__(self, path, header: dict):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")
        self._fh.write(json.dumps({"header": header}) + "\n")
        self.count = 0

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record) + "\n")
        self.count += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_trajectory(path) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])["header"]
    return header, [json.loads(line) for line in lines[1:]]


def with_overrides(cfg: ScenarioConfig, **kw) -> ScenarioConfig:
    return replace(cfg, **kw)
