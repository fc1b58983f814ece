"""Mixture density network in plain numpy.

Two ReLU MLPs share the input: one emits mixture logits (normalized with a
log-softmax), the other emits ``K`` means and ``K`` raw log-scales.  Training
minimises the mixture negative log-likelihood with Adam, one step per batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MdnConfig:
    components: int = 5
    hidden_layers: int = 2
    hidden_dim: int = 512
    learning_rate: float = 0.0005
    batch_size: int = 16
    sigma_floor: float = 1e-6
    sigma_ceiling: float = 1e6

    def __post_init__(self):
        if self.components < 1 or self.hidden_layers < 1 or self.hidden_dim < 1:
            raise ValueError("components, hidden_layers and hidden_dim must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.sigma_floor < self.sigma_ceiling:
            raise ValueError("need 0 < sigma_floor < sigma_ceiling")


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, sizes: list[int], rng: np.random.Generator) -> "MlpParams":
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def forward(self, X: np.ndarray):
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts: list[np.ndarray], dout: np.ndarray) -> list[np.ndarray]:
        grads: list[np.ndarray] = []
        delta = dout
        for i in range(len(self.weights) - 1, -1, -1):
            grads = [acts[i].T @ delta, delta.sum(axis=0)] + grads
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return grads


@dataclass
class MdnParams:
    pi_net: MlpParams
    comp_net: MlpParams
    sigma_floor: float = 1e-6
    sigma_ceiling: float = 1e6

    @property
    def components(self) -> int:
        return self.pi_net.weights[-1].shape[1]

    @property
    def input_dim(self) -> int:
        return self.pi_net.weights[0].shape[0]

    def arrays(self) -> list[np.ndarray]:
        return self.pi_net.arrays() + self.comp_net.arrays()

    def copy(self) -> "MdnParams":
        return MdnParams(
            MlpParams([w.copy() for w in self.pi_net.weights], [b.copy() for b in self.pi_net.biases]),
            MlpParams([w.copy() for w in self.comp_net.weights], [b.copy() for b in self.comp_net.biases]),
            self.sigma_floor, self.sigma_ceiling,
        )

    def to_dict(self) -> dict:
        """Flat parameter vector with a shape header."""
        arrs = self.arrays()
        return {
            "n_layers": len(self.pi_net.weights),
            "shapes": [list(a.shape) for a in arrs],
            "data": np.concatenate([a.ravel() for a in arrs]).tolist(),
            "sigma_floor": self.sigma_floor,
            "sigma_ceiling": self.sigma_ceiling,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MdnParams":
        flat = np.asarray(data["data"], dtype=np.float64)
        arrs, pos = [], 0
        for shape in data["shapes"]:
            size = int(np.prod(shape))
            arrs.append(flat[pos:pos + size].reshape(shape).copy())
            pos += size
        if pos != flat.size:
            raise ValueError("parameter data does not match the shape header")
        half = 2 * int(data["n_layers"])
        pi, comp = arrs[:half], arrs[half:]
        return cls(MlpParams(pi[0::2], pi[1::2]), MlpParams(comp[0::2], comp[1::2]),
                   float(data["sigma_floor"]), float(data["sigma_ceiling"]))


@dataclass
class MixtureOutput:
    log_pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def pi(self) -> np.ndarray:
        return np.exp(self.log_pi)


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MdnParams) -> "OptimizerState":
        arrs = params.arrays()
        return cls([np.zeros_like(a) for a in arrs], [np.zeros_like(a) for a in arrs])

    def copy(self) -> "OptimizerState":
        return OptimizerState([a.copy() for a in self.m], [a.copy() for a in self.v],
                              self.step, self.beta1, self.beta2, self.eps)

    def to_dict(self) -> dict:
        return {"step": self.step, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "m": np.concatenate([a.ravel() for a in self.m]).tolist(),
                "v": np.concatenate([a.ravel() for a in self.v]).tolist()}

    @classmethod
    def from_dict(cls, data: dict, params: MdnParams) -> "OptimizerState":
        def unflatten(flat):
            flat = np.asarray(flat, dtype=np.float64)
            out, pos = [], 0
            for a in params.arrays():
                out.append(flat[pos:pos + a.size].reshape(a.shape).copy())
                pos += a.size
            return out
        return cls(unflatten(data["m"]), unflatten(data["v"]), int(data["step"]),
                   float(data["beta1"]), float(data["beta2"]), float(data["eps"]))


def init_params(config: MdnConfig, input_dim: int, rng: np.random.Generator | int | None = None) -> MdnParams:
    """Glorot-uniform weights, zero biases."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    rng = np.random.default_rng(rng)
    hidden = [config.hidden_dim] * config.hidden_layers
    K = config.components
    pi_net = MlpParams.init([input_dim, *hidden, K], rng)
    comp_net = MlpParams.init([input_dim, *hidden, 2 * K], rng)
    return MdnParams(pi_net, comp_net, config.sigma_floor, config.sigma_ceiling)


def _log_softmax(a: np.ndarray) -> np.ndarray:
    shifted = a - a.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _logsumexp(a: np.ndarray) -> np.ndarray:
    top = a.max(axis=-1, keepdims=True)
    return (top + np.log(np.exp(a - top).sum(axis=-1, keepdims=True)))[..., 0]


def _as_rows(params: MdnParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.shape[1] != params.input_dim:
        raise DimensionError(f"expected {params.input_dim} features, got {X.shape[1]}")
    return X, single


def _forward(params: MdnParams, X: np.ndarray):
    K = params.components
    logits, pi_acts = params.pi_net.forward(X)
    raw, comp_acts = params.comp_net.forward(X)
    lo, hi = math.log(params.sigma_floor), math.log(params.sigma_ceiling)
    raw_scale = raw[:, K:]
    log_sigma = np.clip(raw_scale, lo, hi)
    if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(raw))):
        raise NumericalError("non-finite network activations")
    out = MixtureOutput(_log_softmax(logits), raw[:, :K].copy(), np.exp(log_sigma))
    cache = (pi_acts, comp_acts, log_sigma, (raw_scale >= lo) & (raw_scale <= hi))
    return out, cache


def forward(params: MdnParams, x) -> MixtureOutput:
    """Mixture parameters for one vector ``(d,)`` or a row matrix ``(n, d)``."""
    X, single = _as_rows(params, x)
    out, _ = _forward(params, X)
    if single:
        return MixtureOutput(out.log_pi[0], out.mu[0], out.sigma[0])
    return out


def _component_logp(log_pi, mu, log_sigma, y):
    z = (y - mu) / np.exp(log_sigma)
    return log_pi - HALF_LOG_2PI - log_sigma - 0.5 * z * z


def nll_loss(out: MixtureOutput, y):
    """Negative log-likelihood of ``y`` under the mixture (per row when batched)."""
    y = np.asarray(y, dtype=np.float64)
    if out.log_pi.ndim == 2:
        y = y.reshape(-1, 1)
    logp = _component_logp(out.log_pi, out.mu, np.log(out.sigma), y)
    res = -_logsumexp(logp)
    return float(res) if np.ndim(res) == 0 else res


def loss_and_grad(params: MdnParams, X, y) -> tuple[float, list[np.ndarray]]:
    """Mean NLL over the rows and its gradient, aligned with ``params.arrays()``."""
    X, _ = _as_rows(params, X)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    n = X.shape[0]
    out, (pi_acts, comp_acts, log_sigma, in_range) = _forward(params, X)
    logp = _component_logp(out.log_pi, out.mu, log_sigma, y)
    lse = _logsumexp(logp)
    loss = float(-lse.mean())
    resp = np.exp(logp - lse[:, None])  # posterior responsibilities
    pi = np.exp(out.log_pi)
    z = (y - out.mu) / out.sigma

    d_logits = (pi - resp) / n
    d_mu = -resp * z / out.sigma / n
    d_scale = resp * (1.0 - z * z) * in_range / n
    grads = params.pi_net.backward(pi_acts, d_logits)
    grads += params.comp_net.backward(comp_acts, np.concatenate([d_mu, d_scale], axis=1))
    return loss, grads


def grad_step(params: MdnParams, opt: OptimizerState, X, y, lr: float) -> float:
    """One Adam step on the batch mean NLL, in place.

    Returns the pre-step mean loss.  A non-finite loss or gradient raises
    :class:`NumericalError` and leaves ``params`` and ``opt`` untouched.
    """
    loss, grads = loss_and_grad(params, X, y)
    if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        raise NumericalError("non-finite loss or gradient; step skipped")
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    lr_hat = lr / (1.0 - b1 ** opt.step)
    inv_c2 = 1.0 / math.sqrt(1.0 - b2 ** opt.step)
    # in place, reusing each gradient array as scratch
    for p, g, m, v in zip(params.arrays(), grads, opt.m, opt.v):
        m *= b1
        m += (1.0 - b1) * g
        np.multiply(g, g, out=g)
        v *= b2
        g *= 1.0 - b2
        v += g
        np.sqrt(v, out=g)
        g *= inv_c2
        g += opt.eps
        np.divide(m, g, out=g)
        g *= lr_hat
        p -= g
    return loss


def predict_mean(params: MdnParams, x):
    """Expected value of the mixture: ``sum_k pi_k * mu_k``."""
    out = forward(params, x)
    return mixture_mean(out)


def mixture_mean(out: MixtureOutput):
    res = np.sum(np.exp(out.log_pi) * out.mu, axis=-1)
    return float(res) if np.ndim(res) == 0 else res
