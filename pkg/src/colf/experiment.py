"""Training runs, evaluation protocols and trajectory export.

A run directory looks like::

    run/
      config.toml          resolved RunConfig
      metrics.csv          one row per PPO iteration (fixed column order)
      checkpoints/         iter_000000.ckpt ... plus final.ckpt
      eval/report.json     optional end-of-training evaluation
      eval/logs/seed_<s>.npz

``cmd_eval`` with an output directory writes the same ``report.json`` and
``logs/`` layout, so ``export`` works on either.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import tomli_w

from . import env as envmod
from .env import FOLLOWER, LEADER, ScenarioConfig, VecTransportEnv, load_scenario
from .grounding import IDENTITY, CameraModel, MisalignmentModel, PerceptionTracker, scene_from_state
from .mappo import (
    Critic,
    EpisodeTracker,
    Team,
    TrainConfig,
    collect_rollouts,
    finish_batch,
    global_state_dim,
    ppo_update,
)
from .nn import ContractError, NonFiniteError, load_checkpoint, save_checkpoint
from .policy import GaussianActor

try:
    import tomllib
except ModuleNotFoundError:  # py < 3.11
    import tomli as tomllib

log = logging.getLogger("colf")

DELTAS = {"sr_065": 0.65, "sr_075": 0.75}
REAL_MARGIN = 0.20


# --- method wiring ----------------------------------------------------------------


@dataclass(frozen=True)
class Method:
    name: str
    follower_goal: bool  # follower policy sees the goal landmark
    aac: bool  # critic also sees object velocity
    ce_weight: float
    aux: bool  # follower carries leader-action prediction heads

    @property
    def input_dims(self) -> dict[str, int]:
        return {
            "leader": envmod.OBS_LEADER_DIM,
            "follower": envmod.OBS_LEADER_DIM if self.follower_goal else envmod.OBS_FOLLOWER_DIM,
            "critic": global_state_dim(self.aac),
        }


METHODS: dict[str, Method] = {
    m.name: m
    for m in (
        Method("mappo", follower_goal=True, aac=False, ce_weight=0.0, aux=False),
        Method("mappo_aac", follower_goal=True, aac=True, ce_weight=0.0, aux=False),
        Method("colf", follower_goal=False, aac=True, ce_weight=0.03, aux=True),
        Method("colf_no_aac", follower_goal=False, aac=False, ce_weight=0.03, aux=True),
        Method("colf_no_ce", follower_goal=False, aac=True, ce_weight=0.0, aux=True),
    )
}


def get_method(name: str) -> Method:
    try:
        return METHODS[name]
    except KeyError:
        raise ContractError(f"unknown method {name!r}; choose from {sorted(METHODS)}") from None


def wired_config(method: str | Method, cfg: TrainConfig) -> TrainConfig:
    """``cfg`` with the AAC flag and CE weight the method prescribes."""
    m = get_method(method) if isinstance(method, str) else method
    return replace(cfg, aac=m.aac, ce_weight=m.ce_weight)


# --- run configuration ------------------------------------------------------------


@dataclass
class RunConfig:
    method: str = "colf"
    scenario: ScenarioConfig = field(default_factory=lambda: load_scenario("desk_train"))
    train: TrainConfig = field(default_factory=TrainConfig)
    iterations: int = 300
    checkpoint_every: int = 50
    probe_every: int = 50  # 0 disables the in-training evaluation probe
    probe_scenario: str = "desk_one_goal"
    probe_trials: int = 16
    eval_scenario: str = "desk_one_goal"
    eval_trials: int = 0  # end-of-training evaluation; 0 skips it
    eval_seeds: tuple[int, ...] = (0, 1, 2)
    perception: str = "vector"
    out: str = "runs/colf"

    def __post_init__(self):
        # the method owns the AAC flag and the CE weight
        self.train = wired_config(self.method, self.train)
        self.eval_seeds = tuple(int(s) for s in self.eval_seeds)
        if self.perception not in ("vector", "grounded"):
            raise ContractError(f"unknown perception mode {self.perception!r}")
        if self.iterations < 0:
            raise ContractError("iterations must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        method = d.get("method", "colf")
        m = get_method(method)
        scen = d.pop("scenario", {"name": "desk_train"})
        if isinstance(scen, str):
            scenario = load_scenario(scen)
        else:
            scen = dict(scen)
            base = scen.pop("base", None)
            if base is not None:
                scenario = ScenarioConfig.from_dict({**load_scenario(base).to_dict(), **scen})
            elif set(scen) == {"name"}:
                scenario = load_scenario(scen["name"])
            else:
                scenario = ScenarioConfig.from_dict(scen)
        tr = dict(d.pop("train", {}))
        for key, want in (("aac", m.aac), ("ce_weight", m.ce_weight)):
            if key in tr and tr[key] != want:
                raise ContractError(f"method {method!r} fixes train.{key} = {want!r}, config says {tr[key]!r}")
        known = {f.name for f in fields(TrainConfig)}
        if set(tr) - known:
            raise ContractError(f"unknown train keys: {sorted(set(tr) - known)}")
        train = TrainConfig(**tr)
        known_run = {f.name for f in fields(cls)} - {"scenario", "train"}
        if set(d) - known_run:
            raise ContractError(f"unknown run keys: {sorted(set(d) - known_run)}")
        return cls(scenario=scenario, train=train, **d)

    @classmethod
    def from_toml(cls, path) -> "RunConfig":
        return cls.from_dict(tomllib.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("scenario", "train")}
        d["eval_seeds"] = list(self.eval_seeds)
        d["scenario"] = self.scenario.to_dict()
        d["train"] = self.train.to_dict()
        return d

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


# --- teams and checkpoints --------------------------------------------------------


def build_team(method: str | Method, cfg: TrainConfig, rng: np.random.Generator) -> Team:
    m = get_method(method) if isinstance(method, str) else method
    dims = m.input_dims
    kw = dict(hidden=cfg.hidden, init_log_std=cfg.init_log_std, lr=cfg.actor_lr, rng=rng)
    leader = GaussianActor(dims["leader"], **kw)
    follower = GaussianActor(dims["follower"], aux=m.aux, **kw)
    critic = Critic(dims["critic"], hidden=cfg.hidden, rng=rng, lr=cfg.critic_lr, value_norm_beta=cfg.value_norm_beta)
    return Team(leader, follower, critic, follower_goal=m.follower_goal, aac=m.aac)


def save_team(path, team: Team, method: str, meta: dict | None = None, seed: int | None = None) -> None:
    nets = {
        "leader": (team.leader.spec, team.leader.params),
        "follower": (team.follower.spec, team.follower.params),
        "critic": (team.critic.spec, team.critic.params),
    }
    meta = dict(meta or {})
    meta.update(method=method, value_norm=team.critic.value_norm.state_dict())
    save_checkpoint(path, nets, meta=meta, seed=seed)


def check_wiring(nets: dict, method: Method) -> None:
    """Refuse checkpoints whose network shapes disagree with the method wiring."""
    dims = method.input_dims
    for name in ("leader", "follower", "critic"):
        if name not in nets:
            raise ContractError(f"checkpoint lacks a {name!r} network")
        spec = nets[name][0]
        if spec.input_dim != dims[name]:
            raise ContractError(
                f"{name} network takes {spec.input_dim} inputs but method {method.name!r} feeds {dims[name]}"
            )
    want_out = {"leader": 6, "follower": 12 if method.aux else 6, "critic": 1}
    for name, n in want_out.items():
        if nets[name][0].output_dim != n:
            raise ContractError(f"{name} network has {nets[name][0].output_dim} outputs, expected {n}")


def load_team(path, method: str | None = None) -> tuple[Team, dict]:
    header, nets = load_checkpoint(path)
    name = method or header["meta"].get("method")
    if name is None:
        raise ContractError(f"{path}: checkpoint does not record its method")
    m = get_method(name)
    check_wiring(nets, m)
    (ls, lp), (fs, fp), (cs, cp) = nets["leader"], nets["follower"], nets["critic"]
    leader = GaussianActor(ls.input_dim, hidden=ls.hidden_dims, params=lp)
    follower = GaussianActor(fs.input_dim, aux=m.aux, hidden=fs.hidden_dims, params=fp)
    critic = Critic(cs.input_dim, hidden=cs.hidden_dims, params=cp)
    if "value_norm" in header["meta"]:
        critic.value_norm.load_state_dict(header["meta"]["value_norm"])
    return Team(leader, follower, critic, follower_goal=m.follower_goal, aac=m.aac), header


# --- evaluation -------------------------------------------------------------------


def min_achievable_ogd(config: ScenarioConfig) -> float:
    """Smallest object-goal distance the geometry allows (box face tangent to the goal)."""
    if config.goal_mode != "cylinder":
        return 0.0
    return config.goal_radius + min(config.object_half_extents)


@dataclass
class TrialBatch:
    ogd: np.ndarray  # (n,)
    steps: np.ndarray  # (n,)
    reasons: np.ndarray  # (n,)
    logs: dict[str, np.ndarray] | None = None


def _log_arrays(n: int, horizon: int) -> dict[str, np.ndarray]:
    T = horizon
    return {
        "robot_pos": np.zeros((n, T + 1, 2, 2)),
        "robot_yaw": np.zeros((n, T + 1, 2)),
        "obj_pos": np.zeros((n, T + 1, 2)),
        "obj_yaw": np.zeros((n, T + 1)),
        "goal": np.zeros((n, 2)),
        "goals": None,
        "actions": np.zeros((n, T, 2, 3)),
        "rewards": np.zeros((n, T, 4)),  # r_L, r_F, r_obj, r_term
        "estimates": np.full((n, T, 2, 4), np.nan),  # per robot: object xy, goal xy as fed to the policy
        "reason": np.zeros((n, T), dtype=np.int64),
        "length": np.zeros(n, dtype=np.int64),
    }


def _store_pose(logs, t: int, idx, st) -> None:
    logs["robot_pos"][idx, t] = st.robot_pos
    logs["robot_yaw"][idx, t] = st.robot_yaw
    logs["obj_pos"][idx, t] = st.obj_pos
    logs["obj_yaw"][idx, t] = st.obj_yaw


def run_trials(
    team: Team,
    scenario: ScenarioConfig,
    trials: int,
    seed: int,
    perception: str = "vector",
    mis: MisalignmentModel = IDENTITY,
    action_mode: str = "mean",
    depth_mode: str = "center",
    record: bool = False,
) -> TrialBatch:
    """Roll out ``trials`` episodes side by side until each terminates.

    In grounded mode the object/goal entries of every observation come from a
    per-robot ``PerceptionTracker``; the leader's tracker never misaligns.
    """
    if perception not in ("vector", "grounded"):
        raise ContractError(f"unknown perception mode {perception!r}")
    if trials == 0:
        empty = np.zeros(0)
        return TrialBatch(empty, empty.astype(np.int64), empty.astype(np.int64), _log_arrays(0, 0) if record else None)
    rng = np.random.default_rng(seed)
    act_rng = np.random.default_rng([seed, 1]) if action_mode == "sample" else None
    state = envmod.initial_state(scenario, rng, trials)
    dt = team.leader.params.dtype

    trackers = None
    if perception == "grounded":
        cam = CameraModel.preset(scenario.camera)
        trackers = [
            (PerceptionTracker(cam, IDENTITY, np.random.default_rng([seed, i, LEADER]), depth_mode=depth_mode),
             PerceptionTracker(cam, mis, np.random.default_rng([seed, i, FOLLOWER]), depth_mode=depth_mode))
            for i in range(trials)
        ]
    f_targets = ("object", "goal") if team.follower_goal else ("object",)

    logs = _log_arrays(trials, scenario.horizon) if record else None
    if record:
        logs["goal"][:] = state.goal
        logs["goals"] = state.goals.copy()
        _store_pose(logs, 0, slice(None), state)

    active = np.ones(trials, dtype=bool)
    steps = np.zeros(trials, dtype=np.int64)
    reasons = np.zeros(trials, dtype=np.int64)
    while active.any():
        idx = np.flatnonzero(active)
        sub = state.take(idx)
        if trackers is None:
            obs_l = envmod.observation(sub, LEADER, True)
            obs_f = envmod.observation(sub, FOLLOWER, team.follower_goal)
            est = None
        else:
            est = np.zeros((len(idx), 2, 4))
            for j, i in enumerate(idx):
                scene = scene_from_state(sub, j, scenario)
                for r, targets in ((LEADER, ("object", "goal")), (FOLLOWER, f_targets)):
                    pose = (*sub.robot_pos[j, r], sub.robot_yaw[j, r])
                    got = trackers[i][r].observe(scene, pose, targets)
                    est[j, r, :2] = got["object"]
                    est[j, r, 2:] = got.get("goal", np.nan)
            obs_l = envmod.assemble_obs(est[:, LEADER, :2], est[:, LEADER, 2:], envmod.proprio(sub, LEADER), True)
            obs_f = envmod.assemble_obs(est[:, FOLLOWER, :2], est[:, FOLLOWER, 2:], envmod.proprio(sub, FOLLOWER),
                                        team.follower_goal)
        a_l, _, _ = team.leader.act(obs_l.astype(dt), action_mode, act_rng)
        a_f, _, _ = team.follower.act(obs_f.astype(dt), action_mode, act_rng)
        out = envmod.step(sub, a_l, a_f, scenario)
        state.put(idx, out.state)

        if record:
            t = sub.step_index
            a = np.stack([np.clip(a_l, -1, 1), np.clip(a_f, -1, 1)], axis=1)
            logs["actions"][idx, t] = a.astype(np.float64)
            rw = out.rewards
            logs["rewards"][idx, t] = np.column_stack([rw.r_rob[:, 0], rw.r_rob[:, 1], rw.r_obj, rw.r_term])
            if est is not None:
                logs["estimates"][idx, t] = est
            else:
                for r in (LEADER, FOLLOWER):
                    o, g = envmod.target_obs(sub, r)
                    logs["estimates"][idx, t, r] = np.concatenate([o, g], axis=-1)
            logs["reason"][idx, t] = out.reason
            _store_pose(logs, t + 1, idx, out.state)

        fin = idx[out.done]
        steps[fin] = out.state.step_index[out.done]
        reasons[fin] = out.reason[out.done]
        active[fin] = False

    if record:
        logs["length"][:] = steps
    return TrialBatch(envmod.object_goal_distance(state), steps, reasons, logs)


@dataclass
class SeedResult:
    seed: int
    trials: int
    sr_065: float | None
    sr_075: float | None
    sr_real: float | None
    mean_ogd: float | None
    ogd: list[float] = field(default_factory=list)


def seed_result(seed: int, ogd: np.ndarray, scenario: ScenarioConfig) -> SeedResult:
    n = len(ogd)
    if n == 0:
        return SeedResult(seed, 0, None, None, None, None, [])
    real = min_achievable_ogd(scenario) + REAL_MARGIN
    return SeedResult(
        seed,
        n,
        float(np.mean(ogd < DELTAS["sr_065"])),
        float(np.mean(ogd < DELTAS["sr_075"])),
        float(np.mean(ogd < real)),
        float(np.mean(ogd)),
        [float(x) for x in ogd],
    )


def aggregate(per_seed: list[SeedResult]) -> dict[str, dict[str, float | None]]:
    """Mean and population std across seeds; ``None`` wherever any seed is undefined."""
    out = {}
    for key in ("sr_065", "sr_075", "sr_real", "mean_ogd"):
        vals = [getattr(s, key) for s in per_seed]
        if not vals or any(v is None for v in vals):
            out[key] = {"mean": None, "std": None}
        else:
            arr = np.array(vals, dtype=np.float64)
            out[key] = {"mean": float(arr.mean()), "std": float(arr.std())}
    return out


@dataclass
class EvalReport:
    scenario: str
    perception: str
    trials: int
    seeds: list[int]
    per_seed: list[SeedResult]
    aggregate: dict
    methods: list[str] = field(default_factory=list)
    p_wrong: float = 0.0

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "per_seed"}
        d["per_seed"] = [vars(s) for s in self.per_seed]
        return d

    def summary(self) -> str:
        def fmt(v):
            return "undefined" if v is None else f"{v:.3f}"

        lines = [f"{self.scenario} [{self.perception}] trials/seed={self.trials} methods={','.join(self.methods)}"]
        for s in self.per_seed:
            lines.append(f"  seed {s.seed}: SR65={fmt(s.sr_065)} SR75={fmt(s.sr_075)} "
                         f"SRreal={fmt(s.sr_real)} OGD={fmt(s.mean_ogd)}")
        for k, v in self.aggregate.items():
            lines.append(f"  {k}: {fmt(v['mean'])} +/- {fmt(v['std'])}")
        return "\n".join(lines)


def evaluate(
    checkpoints,
    scenario: ScenarioConfig | str,
    trials: int,
    seeds,
    perception: str = "vector",
    mis: MisalignmentModel = IDENTITY,
    action_mode: str = "mean",
    depth_mode: str = "center",
    out=None,
) -> EvalReport:
    """Evaluate checkpoints (paths or loaded teams) over trial seeds.

    One checkpoint is reused for every seed; otherwise checkpoints pair with
    seeds one-to-one. With ``out`` set, the report and per-seed trajectory
    logs are written there.
    """
    if isinstance(scenario, str):
        scenario = load_scenario(scenario)
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ContractError("need at least one evaluation seed")
    if trials < 0:
        raise ContractError("trials must be non-negative")
    ckpts = list(checkpoints) if isinstance(checkpoints, (list, tuple)) else [checkpoints]
    if len(ckpts) == 1:
        ckpts = ckpts * len(seeds)
    if len(ckpts) != len(seeds):
        raise ContractError(f"{len(ckpts)} checkpoints cannot pair with {len(seeds)} seeds")

    out = Path(out) if out is not None else None
    per_seed, methods = [], []
    for ck, seed in zip(ckpts, seeds):
        if isinstance(ck, Team):
            team, method = ck, "team"
        else:
            team, header = load_team(ck)
            method = header["meta"]["method"]
        methods.append(method)
        log.info("eval seed %d: %s on %s (%s, %d trials)", seed, method, scenario.name, perception, trials)
        batch = run_trials(team, scenario, trials, seed, perception, mis, action_mode, depth_mode, record=out is not None)
        per_seed.append(seed_result(seed, batch.ogd, scenario))
        if out is not None:
            logs_dir = out / "logs"
            logs_dir.mkdir(parents=True, exist_ok=True)
            arrays = {k: v for k, v in batch.logs.items() if v is not None}
            meta = json.dumps({"seed": seed, "method": method, "scenario": scenario.to_dict(),
                               "perception": perception, "trials": trials})
            np.savez_compressed(logs_dir / f"seed_{seed}.npz", meta=np.array(meta), **arrays)
    report = EvalReport(scenario.name, perception, trials, seeds, per_seed, aggregate(per_seed),
                        methods=methods, p_wrong=mis.p_wrong)
    if out is not None:
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    return report


# --- training ---------------------------------------------------------------------

METRIC_COLUMNS = (
    "iteration",
    "env_steps",
    "mean_r_obj",
    "mean_team_reward",
    "episodes",
    "return_leader",
    "return_follower",
    "collisions",
    "actor_leader",
    "actor_follower",
    "entropy_leader",
    "entropy_follower",
    "ce",
    "critic",
    "leader_total",
    "follower_total",
    "mi_diagnostic",
    "clip_fraction",
    "probe_sr_065",
    "probe_sr_075",
    "probe_ogd",
)


class TrainingAborted(RuntimeError):
    def __init__(self, msg: str, checkpoint: Path):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass
class TrainResult:
    out: Path
    final_checkpoint: Path
    metrics_path: Path
    rows: list[dict]
    report: EvalReport | None = None


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (float(v) if v != "" else math.nan) for k, v in r.items()} for r in rows]


def train(run: RunConfig, seed: int | None = None, out=None) -> TrainResult:
    """Full CTDE training loop for one seed; writes metrics, checkpoints and config."""
    if seed is not None:
        run = replace(run, train=replace(run.train, seed=int(seed)))
    seed = run.train.seed
    out = Path(out if out is not None else run.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    (out / "ABORTED").unlink(missing_ok=True)
    run = replace(run, out=str(out))
    (out / "config.toml").write_text(run.to_toml())

    cfg = run.train
    init_rng, env_seed, roll_rng, upd_rng = np.random.SeedSequence(seed).spawn(4)
    team = build_team(run.method, cfg, np.random.default_rng(init_rng))
    venv = VecTransportEnv(run.scenario, cfg.n_envs, seed=int(np.random.default_rng(env_seed).integers(2**31)))
    roll_rng, upd_rng = np.random.default_rng(roll_rng), np.random.default_rng(upd_rng)
    tracker = EpisodeTracker(cfg.n_envs)
    probe_scn = load_scenario(run.probe_scenario) if run.probe_every > 0 else None

    meta = {"run": run.to_dict(), "iteration": 0}
    last_good = ckpt_dir / "iter_000000.ckpt"
    save_team(last_good, team, run.method, meta, seed)

    rows: list[dict] = []
    metrics_path = out / "metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for it in range(1, run.iterations + 1):
            batch = collect_rollouts(team, venv, cfg.rollout_length, roll_rng, gamma=cfg.gamma, tracker=tracker)
            finish_batch(batch, cfg)
            try:
                rep = ppo_update(batch, team, cfg, upd_rng)
            except NonFiniteError as exc:
                (out / "ABORTED").write_text(f"iteration {it}: {exc}\nlast good checkpoint: {last_good}\n")
                log.error("training aborted at iteration %d: %s", it, exc)
                raise TrainingAborted(f"non-finite loss at iteration {it}; last good checkpoint {last_good}",
                                      last_good) from exc

            ep = np.array(batch.episode_returns) if batch.episode_returns else None
            row = {
                "iteration": it,
                "env_steps": it * cfg.rollout_length * cfg.n_envs,
                "mean_r_obj": float(batch.r_obj.mean()),
                "mean_team_reward": float(batch.rewards.mean()),
                "episodes": 0 if ep is None else len(ep),
                "return_leader": math.nan if ep is None else float(ep[:, 0].mean()),
                "return_follower": math.nan if ep is None else float(ep[:, 1].mean()),
                "collisions": int((batch.reasons == envmod.DONE_COLLISION).sum()),
            }
            row.update({k: float(v) for k, v in rep.as_dict().items() if k in METRIC_COLUMNS})
            if probe_scn is not None and (it % run.probe_every == 0 or it == run.iterations):
                pb = run_trials(team, probe_scn, run.probe_trials, seed)
                sr = seed_result(seed, pb.ogd, probe_scn)
                row.update(probe_sr_065=sr.sr_065, probe_sr_075=sr.sr_075, probe_ogd=sr.mean_ogd)
            writer.writerow([_fmt(row.get(c)) for c in METRIC_COLUMNS])
            fh.flush()
            rows.append(row)
            log.info("iter %d r_obj=%.3f ce=%.3f critic=%.4f", it, row["mean_r_obj"], row["ce"], row["critic"])

            if run.checkpoint_every > 0 and it % run.checkpoint_every == 0:
                last_good = ckpt_dir / f"iter_{it:06d}.ckpt"
                save_team(last_good, team, run.method, {**meta, "iteration": it}, seed)

    final = ckpt_dir / "final.ckpt"
    save_team(final, team, run.method, {**meta, "iteration": run.iterations, "tag": "final"}, seed)
    report = None
    if run.eval_trials > 0:
        report = evaluate(final, run.eval_scenario, run.eval_trials, [seed], run.perception, out=out / "eval")
    return TrainResult(out, final, metrics_path, rows, report)


# --- export -----------------------------------------------------------------------


class RunNotFound(FileNotFoundError):
    pass


def _find_logs(run: Path) -> Path:
    for cand in (run / "logs", run / "eval" / "logs"):
        if cand.is_dir():
            return cand
    raise RunNotFound(f"no trajectory logs under {run}")


def export(run, trial: int, seed: int | None = None, dest=None) -> Path:
    """Write one evaluated trial as line-delimited JSON: a header line, then one record per step."""
    run = Path(run)
    if not run.exists():
        raise RunNotFound(f"run directory {run} does not exist")
    logs_dir = _find_logs(run)
    files = sorted(logs_dir.glob("seed_*.npz"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise RunNotFound(f"no trajectory logs under {logs_dir}")
    if seed is None:
        path = files[0]
    else:
        path = logs_dir / f"seed_{seed}.npz"
        if not path.exists():
            raise RunNotFound(f"no logs for seed {seed} in {logs_dir}")
    with np.load(path) as z:
        data = {k: z[k] for k in z.files}
    meta = json.loads(str(data["meta"]))
    n = len(data["length"])
    dest = Path(dest) if dest is not None else run / "exports" / f"seed_{meta['seed']}_trial_{trial}.jsonl"
    dest.parent.mkdir(parents=True, exist_ok=True)

    header = {"run": str(run), "seed": meta["seed"], "method": meta["method"], "scenario": meta["scenario"],
              "perception": meta["perception"], "trial": trial, "steps": 0, "final_ogd": None}
    if n == 0:
        with open(dest, "w") as fh:
            fh.write(json.dumps({"header": header}) + "\n")
        return dest
    if not 0 <= trial < n:
        raise RunNotFound(f"trial {trial} not in run (0..{n - 1})")

    T = int(data["length"][trial])
    goal = data["goal"][trial]
    header["steps"] = T
    header["goal"] = goal.tolist()
    header["final_ogd"] = float(np.linalg.norm(data["obj_pos"][trial, T] - goal))
    header["initial"] = {
        "robot_pos": data["robot_pos"][trial, 0].tolist(),
        "robot_yaw": data["robot_yaw"][trial, 0].tolist(),
        "obj_pos": data["obj_pos"][trial, 0].tolist(),
        "obj_yaw": float(data["obj_yaw"][trial, 0]),
    }
    with open(dest, "w") as fh:
        fh.write(json.dumps({"header": header}) + "\n")
        for t in range(T):
            est = data["estimates"][trial, t]
            r = data["rewards"][trial, t]
            reason = int(data["reason"][trial, t])
            rec = {
                "step": t + 1,
                "robot_pos": data["robot_pos"][trial, t + 1].tolist(),
                "robot_yaw": data["robot_yaw"][trial, t + 1].tolist(),
                "obj_pos": data["obj_pos"][trial, t + 1].tolist(),
                "obj_yaw": float(data["obj_yaw"][trial, t + 1]),
                "action_leader": data["actions"][trial, t, 0].tolist(),
                "action_follower": data["actions"][trial, t, 1].tolist(),
                "rewards": {"leader": float(r[0]), "follower": float(r[1]), "obj": float(r[2]), "term": float(r[3])},
                "estimates": {
                    "leader": {"object": est[0, :2].tolist(), "goal": est[0, 2:].tolist()},
                    "follower": {"object": est[1, :2].tolist(),
                                 "goal": None if np.isnan(est[1, 2:]).any() else est[1, 2:].tolist()},
                },
                "done": reason != envmod.DONE_NONE,
                "reason": envmod.DONE_REASONS[reason],
            }
            fh.write(json.dumps(rec) + "\n")
    return dest


def configure_logging() -> None:
    level = os.environ.get("COLF_LOG", "WARNING").upper()
    logging.basicConfig(level=int(level) if level.isdigit() else getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")

