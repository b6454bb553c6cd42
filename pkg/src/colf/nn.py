"""Minimal numpy MLP engine: forward/backward, diagonal Gaussians, Adam, checkpoints.

Networks are plain ReLU MLPs with an affine output layer. Everything works on
either a single input vector or a batch (leading axis). Training runs in
float32, tests run the same code in float64.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

CHECKPOINT_MAGIC = b"COLFCKPT"
CHECKPOINT_VERSION = 1


class ContractError(ValueError):
    """Raised when a caller violates a shape, finiteness or ordering contract."""


class NonFiniteError(FloatingPointError):
    """Raised when a loss or gradient turns NaN/inf."""


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_dims: tuple[int, ...] = (256, 256, 128)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not self.hidden_dims:
            raise ContractError("hidden_dims must be non-empty")
        if min((self.input_dim, self.output_dim) + self.hidden_dims) < 1:
            raise ContractError(f"all layer sizes must be >= 1, got {self}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims)


@dataclass
class ParameterSet:
    """Weights (in, out) and biases (out,) of every layer, plus a version counter.

    The version is bumped on every in-place update so stale forward caches can
    be detected by ``mlp_backward``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    version: int = field(default=0, compare=False)

    @classmethod
    def zeros(cls, spec: MlpSpec, dtype=np.float64) -> "ParameterSet":
        return cls(
            [np.zeros((i, o), dtype=dtype) for i, o in spec.layer_dims],
            [np.zeros(o, dtype=dtype) for _, o in spec.layer_dims],
        )

    @property
    def dtype(self):
        return self.weights[0].dtype

    def arrays(self) -> list[np.ndarray]:
        """Arrays in declared index order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, spec: MlpSpec, vec: np.ndarray, dtype=None) -> "ParameterSet":
        vec = np.asarray(vec)
        if vec.shape != (spec.n_params,):
            raise ContractError(f"expected {spec.n_params} parameters, got {vec.shape}")
        dtype = dtype or vec.dtype
        ws, bs, k = [], [], 0
        for i, o in spec.layer_dims:
            ws.append(vec[k:k + i * o].reshape(i, o).astype(dtype, copy=True))
            k += i * o
            bs.append(vec[k:k + o].astype(dtype, copy=True))
            k += o
        return cls(ws, bs)

    def copy(self) -> "ParameterSet":
        return ParameterSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def check(self, spec: MlpSpec) -> None:
        if len(self.weights) != len(spec.layer_dims):
            raise ContractError("layer count does not match spec")
        for (i, o), w, b in zip(spec.layer_dims, self.weights, self.biases):
            if w.shape != (i, o) or b.shape != (o,):
                raise ContractError(f"layer shape {w.shape}/{b.shape} does not match ({i}, {o})")

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


def init_params(
    spec: MlpSpec,
    rng: np.random.Generator,
    *,
    dtype=np.float32,
    hidden_gain: float = math.sqrt(2.0),
    output_gain: float = 1.0,
) -> ParameterSet:
    """Orthogonal init, zero biases."""
    ws, bs = [], []
    n_layers = len(spec.layer_dims)
    for k, (i, o) in enumerate(spec.layer_dims):
        gain = output_gain if k == n_layers - 1 else hidden_gain
        ws.append(_orthogonal(rng, i, o, gain).astype(dtype))
        bs.append(np.zeros(o, dtype=dtype))
    return ParameterSet(ws, bs)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    masks: list[np.ndarray]  # ReLU masks for hidden layers
    params_id: int
    params_version: int
    squeeze: bool


def mlp_forward(params: ParameterSet, spec: MlpSpec, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=params.dtype)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ContractError(f"expected input of width {spec.input_dim}, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ContractError("non-finite network input")

    inputs, masks = [], []
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        if k < last:
            mask = z > 0
            masks.append(mask)
            h = z * mask
        else:
            h = z
    cache = ForwardCache(inputs, masks, id(params), params.version, squeeze)
    return (h[0] if squeeze else h), cache


def mlp_backward(params: ParameterSet, spec: MlpSpec, cache: ForwardCache, grad_output):
    """Backprop ``grad_output`` (d loss / d output) through a cached forward pass.

    Returns ``(grad_params, grad_input)``; batch gradients are summed.
    """
    if cache.params_id != id(params) or cache.params_version != params.version:
        raise ContractError("forward cache is stale or belongs to other parameters")
    g = np.asarray(grad_output, dtype=params.dtype)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != (cache.inputs[0].shape[0], spec.output_dim):
        raise ContractError(f"grad_output shape {g.shape} does not match forward output")

    n = len(params.weights)
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for k in range(n - 1, -1, -1):
        gw[k] = cache.inputs[k].T @ g
        gb[k] = g.sum(axis=0)
        g = g @ params.weights[k].T
        if k > 0:
            g = g * cache.masks[k - 1]
    grad_input = g[0] if cache.squeeze else g
    return ParameterSet(gw, gb), grad_input


# --- diagonal Gaussian ------------------------------------------------------------


@dataclass
class DiagGaussian:
    """Diagonal Gaussian over the last axis; works batched."""

    mean: np.ndarray
    log_std: np.ndarray
    # d log_std / d raw head output: 0 where the clamp is active
    clamp_mask: np.ndarray | None = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean)
        self.log_std = np.asarray(self.log_std)
        if self.mean.shape != self.log_std.shape:
            raise ContractError(f"mean {self.mean.shape} and log_std {self.log_std.shape} differ")

    @classmethod
    def from_raw(cls, mean, raw_log_std, lo: float = LOG_STD_MIN, hi: float = LOG_STD_MAX) -> "DiagGaussian":
        raw = np.asarray(raw_log_std)
        return cls(np.asarray(mean), np.clip(raw, lo, hi), (raw >= lo) & (raw <= hi))

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


def gauss_log_prob(dist: DiagGaussian, a) -> np.ndarray:
    a = np.asarray(a)
    if a.shape[-1] != dist.dim:
        raise ContractError(f"action length {a.shape[-1]} != distribution dim {dist.dim}")
    z = (a - dist.mean) / dist.std
    return np.sum(-0.5 * z * z - dist.log_std - 0.5 * LOG_2PI, axis=-1)


def gauss_log_prob_grads(dist: DiagGaussian, a) -> tuple[np.ndarray, np.ndarray]:
    """d log p / d mean and d log p / d (raw) log_std, clamp-masked."""
    a = np.asarray(a)
    inv_var = np.exp(-2.0 * dist.log_std)
    diff = a - dist.mean
    d_mean = diff * inv_var
    d_log_std = diff * diff * inv_var - 1.0
    if dist.clamp_mask is not None:
        d_log_std = d_log_std * dist.clamp_mask
    return d_mean, d_log_std


def gauss_entropy(dist: DiagGaussian) -> np.ndarray:
    return np.sum(0.5 + 0.5 * LOG_2PI + dist.log_std, axis=-1)


def gauss_entropy_grad(dist: DiagGaussian) -> np.ndarray:
    g = np.ones_like(dist.log_std)
    if dist.clamp_mask is not None:
        g = g * dist.clamp_mask
    return g


def gauss_sample_from_noise(dist: DiagGaussian, z) -> np.ndarray:
    """Reparameterized sample ``mean + std * z``."""
    return dist.mean + dist.std * np.asarray(z, dtype=dist.mean.dtype)


def gauss_sample(dist: DiagGaussian, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(dist.mean.shape)
    return gauss_sample_from_noise(dist, z)


# --- optimisation -----------------------------------------------------------------


@dataclass
class AdamState:
    m: ParameterSet
    v: ParameterSet
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParameterSet, **hyper) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), **hyper)


def adam_step(state: AdamState, params: ParameterSet, grads: ParameterSet) -> tuple[AdamState, ParameterSet]:
    """Bias-corrected Adam, updating ``state`` and ``params`` in place."""
    if not grads.all_finite():
        raise NonFiniteError("refusing Adam update: non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    params.version += 1
    return state, params


def global_norm(grads: ParameterSet) -> float:
    return math.sqrt(sum(float(np.sum(a.astype(np.float64) ** 2)) for a in grads.arrays()))


def clip_grad_norm(grads: ParameterSet, max_norm: float) -> float:
    """Scale ``grads`` in place so their global norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for a in grads.arrays():
            a *= scale
    return norm


# --- finite differences -----------------------------------------------------------


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x`` (float64)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return grad


def max_relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


# --- checkpoints ------------------------------------------------------------------


def save_checkpoint(path, networks: dict[str, tuple[MlpSpec, ParameterSet]], meta: dict | None = None,
                    seed: int | None = None) -> None:
    """Write a header document followed by float32 little-endian parameter arrays.

    Layout: magic, uint32 header length, UTF-8 JSON header, then each network's
    arrays (W0, b0, W1, b1, ...) in header order.
    """
    header = {
        "format_version": CHECKPOINT_VERSION,
        "log_std_clamp": [LOG_STD_MIN, LOG_STD_MAX],
        "seed": seed,
        "networks": [
            {
                "name": name,
                "input_dim": spec.input_dim,
                "hidden_dims": list(spec.hidden_dims),
                "output_dim": spec.output_dim,
                "n_params": spec.n_params,
            }
            for name, (spec, _) in networks.items()
        ],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for spec, params in networks.values():
            params.check(spec)
            fh.write(params.flat().astype("<f4").tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict, dict[str, tuple[MlpSpec, ParameterSet]]]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ContractError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {header.get('format_version')}")
    offset = 12 + hlen
    nets = {}
    for entry in header["networks"]:
        spec = MlpSpec(entry["input_dim"], entry["output_dim"], tuple(entry["hidden_dims"]))
        n = spec.n_params
        if offset + 4 * n > len(data):
            raise ContractError(f"{path}: truncated parameter data for {entry['name']!r}")
        vec = np.frombuffer(data, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        nets[entry["name"]] = (spec, ParameterSet.from_flat(spec, vec, dtype=np.float32))
    if offset != len(data):
        raise ContractError(f"{path}: trailing or missing parameter bytes")
    return header, nets

