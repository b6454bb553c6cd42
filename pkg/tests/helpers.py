"""Shared fixtures for gradient checks."""

import numpy as np

from colf.policy import GaussianActor


def safe_batch(actor, rng, n=12, aux=False, eps=0.2, margin=1e-3):
    """Inputs away from ReLU kinks and clip boundaries so finite differences are valid."""
    for _ in range(200):
        obs = rng.normal(size=(n, actor.obs_dim))
        out = actor.forward(obs)
        pre = [c for c in out.cache.inputs[1:]]
        z = [obs @ actor.params.weights[0] + actor.params.biases[0]]
        for k in range(1, len(actor.params.weights) - 1):
            z.append(pre[k - 1] @ actor.params.weights[k] + actor.params.biases[k])
        if min(np.abs(zz).min() for zz in z) < margin:
            continue
        acts = out.policy.mean + rng.normal(size=(n, 3)) * out.policy.std
        new_lp = np.sum(-0.5 * ((acts - out.policy.mean) / out.policy.std) ** 2 - out.policy.log_std
                        - 0.5 * np.log(2 * np.pi), axis=-1)
        ratio = np.exp(rng.uniform(-0.5, 0.5, n))
        if np.min(np.abs(np.concatenate([ratio - 1 - eps, ratio - 1 + eps]))) < 0.02:
            continue
        old_lp = new_lp - np.log(ratio)
        adv = rng.normal(size=n)
        a_lead = rng.normal(size=(n, 3)) if aux else None
        return obs, acts, old_lp, adv, a_lead
    raise RuntimeError("could not draw a kink-free batch")


def actor64(obs_dim, aux, seed):
    a = GaussianActor(obs_dim, aux=aux, hidden=(10, 8), rng=np.random.default_rng(seed), dtype=np.float64)
    # move the heads off their tiny initial scale so every term matters
    a.params.weights[-1] *= 30
    a.params.version += 1
    return a
