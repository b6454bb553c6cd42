"""Leader and follower actors and the consistency-enhancing (CE) loss.

Every actor is one MLP whose final affine layer holds all heads side by side:
``[mean(3), log_std(3)]`` for a plain policy, plus ``[pred_mean(3),
pred_log_std(3)]`` for the follower's prediction of the leader action. The
auxiliary heads therefore share the whole trunk with the policy heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import OBS_FOLLOWER_DIM, OBS_LEADER_DIM
from .nn import (
    AdamState,
    ContractError,
    DiagGaussian,
    ForwardCache,
    MlpSpec,
    ParameterSet,
    gauss_entropy,
    gauss_log_prob,
    gauss_log_prob_grads,
    gauss_sample,
    init_params,
    mlp_backward,
    mlp_forward,
)

ACTION_DIM = 3
HEAD_SCALE = 0.01


@dataclass
class ActorOutput:
    policy: DiagGaussian
    aux: DiagGaussian | None
    cache: ForwardCache


class GaussianActor:
    """Gaussian policy network, optionally with auxiliary leader-action heads."""

    def __init__(
        self,
        obs_dim: int,
        *,
        aux: bool = False,
        hidden=(256, 256, 128),
        rng: np.random.Generator | None = None,
        dtype=np.float32,
        init_log_std: float = -0.5,
        lr: float = 3e-4,
        params: ParameterSet | None = None,
    ):
        self.obs_dim = obs_dim
        self.aux = aux
        n_out = 4 * ACTION_DIM if aux else 2 * ACTION_DIM
        self.spec = MlpSpec(obs_dim, n_out, tuple(hidden))
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = init_params(self.spec, rng, dtype=dtype)
            params.weights[-1] *= HEAD_SCALE
            params.biases[-1][ACTION_DIM:2 * ACTION_DIM] = init_log_std
        params.check(self.spec)
        self.params = params
        self.adam = AdamState.for_params(params, lr=lr)

    def forward(self, obs) -> ActorOutput:
        obs = np.asarray(obs)
        if obs.shape[-1] != self.obs_dim:
            raise ContractError(f"{type(self).__name__} expects {self.obs_dim}-d observations, got {obs.shape[-1]}")
        out, cache = mlp_forward(self.params, self.spec, obs)
        d = ACTION_DIM
        policy = DiagGaussian.from_raw(out[..., :d], out[..., d:2 * d])
        aux = DiagGaussian.from_raw(out[..., 2 * d:3 * d], out[..., 3 * d:]) if self.aux else None
        return ActorOutput(policy, aux, cache)

    def backward(self, out: ActorOutput, d_mean, d_log_std, d_aux_mean=None, d_aux_log_std=None) -> ParameterSet:
        """Gradients w.r.t. parameters given loss gradients on the head outputs.

        ``d_log_std`` is taken w.r.t. the clamped value; the clamp mask is applied here.
        """
        parts = [d_mean, d_log_std * out.policy.clamp_mask]
        if self.aux:
            zeros = np.zeros_like(d_mean)
            parts.append(zeros if d_aux_mean is None else d_aux_mean)
            parts.append(zeros if d_aux_log_std is None else d_aux_log_std * out.aux.clamp_mask)
        grad_out = np.concatenate(parts, axis=-1)
        grads, _ = mlp_backward(self.params, self.spec, out.cache, grad_out)
        return grads

    def act(self, obs, mode: str = "sample", rng: np.random.Generator | None = None):
        out = self.forward(obs)
        if mode == "mean":
            a = out.policy.mean.copy()
        elif mode == "sample":
            if rng is None:
                raise ContractError("sample mode needs an rng")
            a = gauss_sample(out.policy, rng).astype(out.policy.mean.dtype)
        else:
            raise ContractError(f"unknown action mode {mode!r}")
        return a, gauss_log_prob(out.policy, a), out


class LeaderPolicy(GaussianActor):
    """Conditions on object, goal and proprioception (13 inputs)."""

    def __init__(self, **kw):
        super().__init__(OBS_LEADER_DIM, aux=False, **kw)


class FollowerPolicy(GaussianActor):
    """Goal-blind actor (11 inputs) that also predicts the leader's action."""

    def __init__(self, **kw):
        super().__init__(OBS_FOLLOWER_DIM, aux=True, **kw)


def leader_act(policy: GaussianActor, obs, mode: str = "sample", rng=None):
    a, logp, _ = policy.act(obs, mode, rng)
    return a, logp


def follower_act(policy: FollowerPolicy, obs, mode: str = "sample", rng=None):
    """Follower action, its log-prob, and the predicted leader-action distribution."""
    obs = np.asarray(obs)
    if obs.shape[-1] != OBS_FOLLOWER_DIM:
        raise ContractError(f"follower observation must have {OBS_FOLLOWER_DIM} entries, got {obs.shape[-1]}")
    a, logp, out = policy.act(obs, mode, rng)
    return a, logp, out.aux


def ce_terms(pred: DiagGaussian, a_leader) -> tuple[float, np.ndarray, np.ndarray]:
    """CE loss -mean log q(a_L) and its gradients w.r.t. predicted mean / log_std (pre-clamp-mask)."""
    a_leader = np.asarray(a_leader)
    if a_leader.ndim < 2 or a_leader.shape[0] == 0:
        raise ContractError("CE loss needs a non-empty batch of leader actions")
    n = a_leader.shape[0]
    loss = -float(np.mean(gauss_log_prob(pred, a_leader)))
    d_mean, d_log_std = gauss_log_prob_grads(pred, a_leader)
    return loss, -d_mean / n, -d_log_std / n


def ce_loss(policy: FollowerPolicy, obs_follower, a_leader) -> tuple[float, ParameterSet]:
    """Consistency-enhancing loss on a batch and its gradient w.r.t. follower parameters.

    ``a_leader`` is plain data: nothing flows back into the leader.
    """
    obs_follower = np.asarray(obs_follower)
    if obs_follower.ndim != 2 or len(obs_follower) == 0:
        raise ContractError("CE loss needs a non-empty 2-d observation batch")
    a_leader = np.array(a_leader, copy=True)
    out = policy.forward(obs_follower)
    loss, d_mean, d_log_std = ce_terms(out.aux, a_leader)
    zeros = np.zeros_like(out.policy.mean)
    # ce_terms already folds the clamp mask into d_log_std; backward applies it again, which is idempotent
    grads = policy.backward(out, zeros, zeros, d_mean, d_log_std)
    return loss, grads


def mi_bound_diagnostic(leader_entropy_mean: float, ce_loss_value: float) -> float:
    """Logged surrogate for I(a_L; o_F): mean leader policy entropy minus CE loss."""
    return float(leader_entropy_mean) - float(ce_loss_value)


def mean_entropy(dist: DiagGaussian) -> float:
    return float(np.mean(gauss_entropy(dist)))
