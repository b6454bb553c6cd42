"""Centralised-critic PPO for the two-robot team.

Both actors share one advantage computed from the team-mean reward and a
single centralised critic on the global state. The follower's actor loss
can carry the CE term; the leader's never does.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import env as envmod
from .env import FOLLOWER, LEADER, VecTransportEnv, WorldState
from .nn import (
    AdamState,
    ContractError,
    MlpSpec,
    NonFiniteError,
    ParameterSet,
    clip_grad_norm,
    adam_step,
    gauss_entropy,
    gauss_entropy_grad,
    gauss_log_prob,
    gauss_log_prob_grads,
    init_params,
    mlp_backward,
    mlp_forward,
)
from .policy import GaussianActor, ce_terms, mi_bound_diagnostic

log = logging.getLogger(__name__)

ADV_EPS = 1e-8


@dataclass
class TrainConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 5
    minibatches: int = 4
    rollout_length: int = 64
    n_envs: int = 64
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    entropy_coef: float = 0.003
    ce_weight: float = 0.03
    aac: bool = True
    max_grad_norm: float = 1.0
    hidden: tuple[int, ...] = (256, 256, 128)
    init_log_std: float = -0.5
    value_norm_beta: float = 0.99
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if not 0.0 < self.gamma <= 1.0:
            raise ContractError("gamma must be in (0, 1]")
        if self.clip_eps <= 0:
            raise ContractError("clip_eps must be positive")
        if self.ce_weight < 0:
            raise ContractError("ce_weight must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


# --- advantage estimation ---------------------------------------------------------


def compute_gae(rewards, values, dones, gamma: float, gae_lambda: float):
    """GAE over a (T, ...) rollout.

    ``values`` has T + 1 rows; the last row bootstraps the step after the
    rollout. ``dones[t]`` marks that the episode ended at step t, which cuts
    both the bootstrap and the recursion.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    if values.shape[0] != T + 1 or dones.shape != rewards.shape or values.shape[1:] != rewards.shape[1:]:
        raise ContractError(
            f"misaligned GAE inputs: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}"
        )
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * live - values[t]
        last = delta + gamma * gae_lambda * live * last
        adv[t] = last
    return adv, adv + values[:-1]


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + ADV_EPS)


# --- losses -----------------------------------------------------------------------


def clipped_surrogate(ratio, advantages, eps: float):
    """Per-sample PPO objective min(rho A, clip(rho) A) (to be maximised)."""
    return np.minimum(ratio * advantages, np.clip(ratio, 1 - eps, 1 + eps) * advantages)


@dataclass
class ActorLoss:
    loss: float
    grad_logp: np.ndarray  # d loss / d new log-prob, zero for excluded samples
    clip_fraction: float
    n_excluded: int


def actor_loss(new_log_probs, old_log_probs, advantages, eps: float) -> ActorLoss:
    """Negated clipped surrogate, averaged; gradient w.r.t. the new log-probs.

    Samples whose ratio is not finite are dropped and counted.
    """
    new = np.asarray(new_log_probs, dtype=np.float64)
    old = np.asarray(old_log_probs, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    if not (new.shape == old.shape == adv.shape):
        raise ContractError("actor loss inputs are misaligned")
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(new - old)
    ok = np.isfinite(ratio) & np.isfinite(adv)
    n_ok = int(ok.sum())
    n_bad = int(ratio.size - n_ok)
    if n_bad:
        log.warning("actor loss: excluded %d samples with non-finite ratio", n_bad)
    if n_ok == 0:
        return ActorLoss(0.0, np.zeros_like(new), 0.0, n_bad)
    r = np.where(ok, ratio, 1.0)
    a = np.where(ok, adv, 0.0)
    unclipped = r * a
    clipped = np.clip(r, 1 - eps, 1 + eps) * a
    obj = np.minimum(unclipped, clipped)
    # the unclipped branch carries the gradient whenever it attains the minimum
    use_unclipped = (unclipped <= clipped) & ok
    loss = -float(np.sum(np.where(ok, obj, 0.0)) / n_ok)
    grad = np.where(use_unclipped, -r * a / n_ok, 0.0)
    clip_frac = float(np.sum(ok & ~use_unclipped) / n_ok)
    return ActorLoss(loss, grad, clip_frac, n_bad)


def critic_loss(values, old_values, return_targets, eps: float) -> tuple[float, np.ndarray]:
    """Clipped value loss mean[max((V-R)^2, (clip(V, V_old +- eps) - R)^2)] and d loss / d V."""
    v = np.asarray(values, dtype=np.float64)
    vo = np.asarray(old_values, dtype=np.float64)
    ret = np.asarray(return_targets, dtype=np.float64)
    if not (v.shape == vo.shape == ret.shape):
        raise ContractError("critic loss inputs are misaligned")
    n = v.size
    v_clip = np.clip(v, vo - eps, vo + eps)
    l_un = (v - ret) ** 2
    l_cl = (v_clip - ret) ** 2
    loss = float(np.mean(np.maximum(l_un, l_cl)))
    inside = (v >= vo - eps) & (v <= vo + eps)
    grad = np.where(l_un >= l_cl, 2 * (v - ret), np.where(inside, 2 * (v_clip - ret), 0.0)) / n
    return loss, grad


@dataclass
class FollowerLoss:
    total: float
    actor: float
    ce: float
    entropy: float
    clip_fraction: float
    n_excluded: int


def actor_objective(actor: GaussianActor, obs, actions, old_logp, adv, eps, entropy_coef,
                    a_leader=None, ce_weight: float = 0.0):
    """Full actor loss ``actor + ce_weight * CE - entropy_coef * entropy`` and its parameter gradients.

    The CE term is only evaluated when ``a_leader`` is given and the actor has
    auxiliary heads.
    """
    out = actor.forward(obs)
    pol = out.policy
    new_logp = gauss_log_prob(pol, actions)
    al = actor_loss(new_logp, old_logp, adv, eps)
    dm, dls = gauss_log_prob_grads(pol, actions)
    g = al.grad_logp[:, None]
    d_mean = g * dm
    d_log_std = g * dls

    n = len(obs)
    ent = float(np.mean(gauss_entropy(pol)))
    d_log_std = d_log_std - entropy_coef * gauss_entropy_grad(pol) / n

    ce = 0.0
    d_aux_mean = d_aux_log_std = None
    if a_leader is not None and actor.aux:
        ce, d_aux_mean, d_aux_log_std = ce_terms(out.aux, a_leader)
        d_aux_mean = ce_weight * d_aux_mean
        d_aux_log_std = ce_weight * d_aux_log_std

    total = al.loss + ce_weight * ce - entropy_coef * ent
    dt = actor.params.dtype
    grads = actor.backward(
        out,
        d_mean.astype(dt),
        d_log_std.astype(dt),
        None if d_aux_mean is None else d_aux_mean.astype(dt),
        None if d_aux_log_std is None else d_aux_log_std.astype(dt),
    )
    return FollowerLoss(total, al.loss, ce, ent, al.clip_fraction, al.n_excluded), grads


# --- centralised critic -----------------------------------------------------------


def global_state(state: WorldState, aac: bool) -> np.ndarray:
    """Absolute robot poses, object pose, instructed goal; plus object twist when ``aac``."""
    parts = [
        state.robot_pos[:, LEADER],
        state.robot_yaw[:, LEADER, None],
        state.robot_pos[:, FOLLOWER],
        state.robot_yaw[:, FOLLOWER, None],
        state.obj_pos,
        state.obj_yaw[:, None],
        state.goal,
    ]
    if aac:
        parts.append(state.obj_twist)
    return np.concatenate(parts, axis=-1)


def global_state_dim(aac: bool) -> int:
    return 11 + (3 if aac else 0)


class ValueNorm:
    """Debiased running mean/variance of return targets; the critic learns in normalised units."""

    def __init__(self, beta: float = 0.99, eps: float = 1e-5):
        self.beta = beta
        self.eps = eps
        self.mean = 0.0
        self.mean_sq = 0.0
        self.debias = 0.0

    def update(self, x) -> None:
        x = np.asarray(x, dtype=np.float64)
        b = self.beta
        self.mean = b * self.mean + (1 - b) * float(x.mean())
        self.mean_sq = b * self.mean_sq + (1 - b) * float((x * x).mean())
        self.debias = b * self.debias + (1 - b)

    def stats(self) -> tuple[float, float]:
        if self.debias <= 0:
            return 0.0, 1.0
        mu = self.mean / self.debias
        var = max(self.mean_sq / self.debias - mu * mu, 1e-2)
        return mu, float(np.sqrt(var))

    def normalize(self, x):
        mu, sd = self.stats()
        return (np.asarray(x) - mu) / sd

    def denormalize(self, x):
        mu, sd = self.stats()
        return np.asarray(x) * sd + mu

    def state_dict(self) -> dict:
        return {"beta": self.beta, "mean": self.mean, "mean_sq": self.mean_sq, "debias": self.debias}

    def load_state_dict(self, d: dict) -> None:
        self.beta, self.mean, self.mean_sq, self.debias = d["beta"], d["mean"], d["mean_sq"], d["debias"]


class Critic:
    def __init__(self, input_dim: int, hidden=(256, 256, 128), rng=None, dtype=np.float32, lr=3e-4,
                 params: ParameterSet | None = None, value_norm_beta: float = 0.99):
        self.spec = MlpSpec(input_dim, 1, tuple(hidden))
        if params is None:
            params = init_params(self.spec, rng if rng is not None else np.random.default_rng(0), dtype=dtype)
        params.check(self.spec)
        self.params = params
        self.adam = AdamState.for_params(params, lr=lr)
        self.value_norm = ValueNorm(value_norm_beta)

    def predict(self, gstate) -> np.ndarray:
        """Normalised value predictions, shape (N,)."""
        out, _ = mlp_forward(self.params, self.spec, gstate)
        return out[..., 0]

    def value(self, gstate) -> np.ndarray:
        return self.value_norm.denormalize(self.predict(gstate))


def critic_objective(critic: Critic, gstate, old_pred, targets, eps: float):
    out, cache = mlp_forward(critic.params, critic.spec, gstate)
    loss, g = critic_loss(out[:, 0], old_pred, targets, eps)
    grads, _ = mlp_backward(critic.params, critic.spec, cache, g[:, None].astype(critic.params.dtype))
    return loss, grads


# --- team -------------------------------------------------------------------------


@dataclass
class Team:
    leader: GaussianActor
    follower: GaussianActor
    critic: Critic
    follower_goal: bool  # follower observes the goal (MAPPO wiring)
    aac: bool

    def observations(self, state: WorldState) -> tuple[np.ndarray, np.ndarray]:
        return (
            envmod.observation(state, LEADER, True),
            envmod.observation(state, FOLLOWER, self.follower_goal),
        )


def act_team(team: Team, obs_l, obs_f, mode: str, rng=None):
    dt = team.leader.params.dtype
    a_l, lp_l, _ = team.leader.act(obs_l.astype(dt), mode, rng)
    a_f, lp_f, _ = team.follower.act(obs_f.astype(dt), mode, rng)
    return a_l, lp_l, a_f, lp_f


@dataclass
class RolloutBatch:
    obs_leader: np.ndarray  # (T, N, 13)
    obs_follower: np.ndarray  # (T, N, 11|13)
    gstate: np.ndarray  # (T, N, G)
    act_leader: np.ndarray  # (T, N, 3) unclipped samples
    act_follower: np.ndarray
    logp_leader: np.ndarray  # (T, N)
    logp_follower: np.ndarray
    value_pred: np.ndarray  # (T + 1, N) normalised critic outputs
    values: np.ndarray  # (T + 1, N) denormalised
    rewards: np.ndarray  # (T, N, 2) per-robot totals
    r_obj: np.ndarray  # (T, N)
    team_reward: np.ndarray  # (T, N) mean over robots, with time-limit bootstrap folded in
    dones: np.ndarray  # (T, N)
    reasons: np.ndarray  # (T, N)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    episode_returns: list = field(default_factory=list)  # (leader, follower) per finished episode

    @property
    def length(self) -> int:
        return self.rewards.shape[0]


class EpisodeTracker:
    def __init__(self, n: int):
        self.acc = np.zeros((n, 2))

    def add(self, rewards, dones) -> list:
        self.acc += rewards
        done_idx = np.flatnonzero(dones)
        finished = [tuple(self.acc[i]) for i in done_idx]
        self.acc[done_idx] = 0.0
        return finished


def collect_rollouts(team: Team, venv: VecTransportEnv, length: int, rng: np.random.Generator,
                     mode: str = "sample", gamma: float = 0.99, tracker: EpisodeTracker | None = None) -> RolloutBatch:
    n = venv.n
    dl = envmod.OBS_LEADER_DIM
    df = team.follower.obs_dim
    gd = global_state_dim(team.aac)
    b = RolloutBatch(
        obs_leader=np.zeros((length, n, dl)),
        obs_follower=np.zeros((length, n, df)),
        gstate=np.zeros((length, n, gd)),
        act_leader=np.zeros((length, n, 3)),
        act_follower=np.zeros((length, n, 3)),
        logp_leader=np.zeros((length, n)),
        logp_follower=np.zeros((length, n)),
        value_pred=np.zeros((length + 1, n)),
        values=np.zeros((length + 1, n)),
        rewards=np.zeros((length, n, 2)),
        r_obj=np.zeros((length, n)),
        team_reward=np.zeros((length, n)),
        dones=np.zeros((length, n), dtype=bool),
        reasons=np.zeros((length, n), dtype=np.int64),
    )
    for t in range(length):
        state = venv.state
        obs_l, obs_f = team.observations(state)
        gs = global_state(state, team.aac)
        a_l, lp_l, a_f, lp_f = act_team(team, obs_l, obs_f, mode, rng)
        pred = team.critic.predict(gs.astype(team.critic.params.dtype))
        out = venv.step(a_l, a_f)

        rew = out.rewards.total
        team_r = rew.mean(axis=1)
        trunc = out.done & (out.reason == envmod.DONE_HORIZON)
        if trunc.any():
            final_gs = global_state(out.final_state.take(np.flatnonzero(trunc)), team.aac)
            team_r[trunc] += gamma * team.critic.value(final_gs.astype(team.critic.params.dtype))

        b.obs_leader[t], b.obs_follower[t], b.gstate[t] = obs_l, obs_f, gs
        b.act_leader[t], b.act_follower[t] = a_l, a_f
        b.logp_leader[t], b.logp_follower[t] = lp_l, lp_f
        b.value_pred[t] = pred
        b.values[t] = team.critic.value_norm.denormalize(pred)
        b.rewards[t], b.r_obj[t], b.team_reward[t] = rew, out.rewards.r_obj, team_r
        b.dones[t], b.reasons[t] = out.done, out.reason
        if tracker is not None:
            b.episode_returns += tracker.add(rew, out.done)

    gs = global_state(venv.state, team.aac)
    pred = team.critic.predict(gs.astype(team.critic.params.dtype))
    b.value_pred[length] = pred
    b.values[length] = team.critic.value_norm.denormalize(pred)
    return b


def finish_batch(batch: RolloutBatch, cfg: TrainConfig) -> RolloutBatch:
    batch.advantages, batch.returns = compute_gae(
        batch.team_reward, batch.values, batch.dones, cfg.gamma, cfg.gae_lambda
    )
    return batch


@dataclass
class LossReport:
    actor_leader: float = 0.0
    actor_follower: float = 0.0
    entropy_leader: float = 0.0
    entropy_follower: float = 0.0
    ce: float = 0.0
    critic: float = 0.0
    follower_total: float = 0.0
    leader_total: float = 0.0
    mi_diagnostic: float = 0.0
    clip_fraction: float = 0.0
    n_excluded: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def _apply(params: ParameterSet, adam: AdamState, grads: ParameterSet, max_norm: float) -> None:
    clip_grad_norm(grads, max_norm)
    adam_step(adam, params, grads)


def ppo_update(batch: RolloutBatch, team: Team, cfg: TrainConfig, rng: np.random.Generator) -> LossReport:
    """Multi-epoch minibatch PPO on a finished batch; parameters update in place."""
    if batch.advantages is None:
        raise ContractError("batch has no advantages; call finish_batch first")
    T, N = batch.team_reward.shape
    M = T * N
    flat = lambda x: x.reshape(M, *x.shape[2:])  # noqa: E731
    obs_l, obs_f, gs = flat(batch.obs_leader), flat(batch.obs_follower), flat(batch.gstate)
    act_l, act_f = flat(batch.act_leader), flat(batch.act_follower)
    lp_l, lp_f = flat(batch.logp_leader), flat(batch.logp_follower)
    old_pred = batch.value_pred[:-1].reshape(M)
    returns = batch.returns.reshape(M)
    adv = normalize_advantages(batch.advantages.reshape(M))

    vn = team.critic.value_norm
    vn.update(returns)
    targets = vn.normalize(returns)

    dt = team.leader.params.dtype
    obs_l, obs_f, gs = obs_l.astype(dt), obs_f.astype(dt), gs.astype(dt)
    ce_weight = cfg.ce_weight if team.follower.aux else 0.0

    rep = LossReport()
    count = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(M)
        for idx in np.array_split(perm, cfg.minibatches):
            lead, g_lead = actor_objective(team.leader, obs_l[idx], act_l[idx], lp_l[idx], adv[idx],
                                           cfg.clip_eps, cfg.entropy_coef)
            foll, g_foll = actor_objective(team.follower, obs_f[idx], act_f[idx], lp_f[idx], adv[idx],
                                           cfg.clip_eps, cfg.entropy_coef,
                                           a_leader=act_l[idx] if team.follower.aux else None,
                                           ce_weight=ce_weight)
            c_loss, g_crit = critic_objective(team.critic, gs[idx], old_pred[idx], targets[idx], cfg.clip_eps)
            if not all(np.isfinite(v) for v in (lead.total, foll.total, c_loss)):
                raise NonFiniteError(f"non-finite loss (leader {lead.total}, follower {foll.total}, critic {c_loss})")
            _apply(team.leader.params, team.leader.adam, g_lead, cfg.max_grad_norm)
            _apply(team.follower.params, team.follower.adam, g_foll, cfg.max_grad_norm)
            _apply(team.critic.params, team.critic.adam, g_crit, cfg.max_grad_norm)

            rep.actor_leader += lead.actor
            rep.actor_follower += foll.actor
            rep.entropy_leader += lead.entropy
            rep.entropy_follower += foll.entropy
            rep.ce += foll.ce
            rep.critic += c_loss
            rep.follower_total += foll.total
            rep.leader_total += lead.total
            rep.clip_fraction += 0.5 * (lead.clip_fraction + foll.clip_fraction)
            rep.n_excluded += lead.n_excluded + foll.n_excluded
            count += 1
    for k in ("actor_leader", "actor_follower", "entropy_leader", "entropy_follower", "ce", "critic",
              "follower_total", "leader_total", "clip_fraction"):
        setattr(rep, k, getattr(rep, k) / count)
    rep.mi_diagnostic = mi_bound_diagnostic(rep.entropy_leader, rep.ce) if team.follower.aux else 0.0
    return rep
