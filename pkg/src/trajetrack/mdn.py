"""Bivariate Gaussian mixture: constraints, density, loss and sampling.

A mixture over a 2-D offset has M components, each with a weight, a mean
pair, a standard-deviation pair and a correlation coefficient. Raw network
outputs are mapped onto that parameter space by :func:`constrain`, which
also implements the sharpening ``bias`` used at inference time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Offset

SIGMA_MIN = 1e-3
RHO_MAX = 0.999
LOG_2PI = math.log(2 * math.pi)

# exp() overflows near 709.78 and underflows below about -745
_EXP_SAFE = 700.0


@dataclass(frozen=True)
class RawMixtureOutputs:
    pi_hat: np.ndarray      # (M,)
    mu_hat: np.ndarray      # (M, 2)
    sigma_hat: np.ndarray   # (M, 2), log-scale
    rho_hat: np.ndarray     # (M,)

    def __post_init__(self):
        m = self.pi_hat.shape[0]
        if self.mu_hat.shape != (m, 2) or self.sigma_hat.shape != (m, 2) or self.rho_hat.shape != (m,):
            raise ValueError("inconsistent mixture count across raw output blocks")

    @property
    def mixtures(self) -> int:
        return self.pi_hat.shape[0]


@dataclass(frozen=True)
class MixtureParams:
    weights: np.ndarray     # (M,)
    means: np.ndarray       # (M, 2)
    sigmas: np.ndarray      # (M, 2)
    rhos: np.ndarray        # (M,)

    @property
    def mixtures(self) -> int:
        return self.weights.shape[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax along the last axis.

    The max-shift is only applied when the logits leave the range where
    ``exp`` is exact, so in-range inputs give the textbook ratio bit for bit.
    """
    logits = np.asarray(logits, dtype=float)
    top = np.max(logits, axis=-1, keepdims=True)
    bottom = np.min(logits, axis=-1, keepdims=True)
    if np.any(top > _EXP_SAFE) or np.any(bottom < -_EXP_SAFE):
        logits = logits - top
    e = np.exp(logits)
    return e / np.sum(e, axis=-1, keepdims=True)


def constrain(raw: RawMixtureOutputs, bias: float = 0.0) -> MixtureParams:
    if bias < 0:
        raise ValueError(f"bias must be nonnegative, got {bias}")
    weights = softmax(raw.pi_hat * (1.0 + bias))
    sigmas = np.maximum(np.exp(raw.sigma_hat - bias), SIGMA_MIN)
    rhos = np.clip(np.tanh(raw.rho_hat), -RHO_MAX, RHO_MAX)
    return MixtureParams(weights, np.array(raw.mu_hat, dtype=float), sigmas, rhos)


def _as_xy(x) -> np.ndarray:
    if isinstance(x, Offset):
        return np.array([x.dx, x.dy])
    return np.asarray(x, dtype=float).reshape(2)


def component_log_densities(params: MixtureParams, x) -> np.ndarray:
    """log(pi_k) + log N_k(x) for every component k."""
    x = _as_xy(x)
    s1, s2 = params.sigmas[:, 0], params.sigmas[:, 1]
    u1 = (x[0] - params.means[:, 0]) / s1
    u2 = (x[1] - params.means[:, 1]) / s2
    rho = params.rhos
    one_m = 1.0 - rho * rho
    z = u1 * u1 + u2 * u2 - 2.0 * rho * u1 * u2
    log_norm = -LOG_2PI - np.log(s1) - np.log(s2) - 0.5 * np.log(one_m)
    with np.errstate(divide="ignore"):
        log_w = np.log(params.weights)
    return log_w + log_norm - z / (2.0 * one_m)


def density(params: MixtureParams, x):
    """Mixture density at one point, or at every row of an (N, 2) array."""
    if isinstance(x, Offset):
        x = (x.dx, x.dy)
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 2)
    total = np.zeros(len(pts))
    for k in range(params.mixtures):
        s1, s2 = params.sigmas[k]
        rho = params.rhos[k]
        d1 = pts[:, 0] - params.means[k, 0]
        d2 = pts[:, 1] - params.means[k, 1]
        z = (d1 / s1) ** 2 + (d2 / s2) ** 2 - 2 * rho * d1 * d2 / (s1 * s2)
        norm = 2 * math.pi * s1 * s2 * math.sqrt(1 - rho * rho)
        total += params.weights[k] * np.exp(-z / (2 * (1 - rho * rho))) / norm
    return float(total[0]) if single else total


def log_density(params: MixtureParams, x) -> float:
    terms = component_log_densities(params, x)
    top = np.max(terms)
    return float(top + math.log(np.sum(np.exp(terms - top))))


def nll_loss(param_seq, targets, reduction: str = "sum") -> float:
    """Negative log-likelihood of ``targets`` under the per-step mixtures.

    ``reduction="mean"`` gives the per-step mean used for reporting.
    """
    if len(param_seq) != len(targets):
        raise ValueError(f"length mismatch: {len(param_seq)} mixtures vs {len(targets)} targets")
    if not param_seq:
        raise ValueError("empty sequence")
    total = -sum(log_density(p, t) for p, t in zip(param_seq, targets))
    if reduction == "mean":
        return total / len(targets)
    if reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return total


def pick_component(weights: np.ndarray, u: float) -> int:
    # inverse CDF over the prefix sums, one uniform draw per pick
    cdf = np.cumsum(weights)
    k = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(k, len(weights) - 1)


def sample(params: MixtureParams, rng: np.random.Generator) -> Offset:
    k = pick_component(params.weights, rng.random())
    e1, e2 = rng.standard_normal(2)
    s1, s2 = params.sigmas[k]
    rho = params.rhos[k]
    # lower Cholesky factor of [[s1^2, rho s1 s2], [rho s1 s2, s2^2]]
    dx = s1 * e1
    dy = s2 * (rho * e1 + math.sqrt(1 - rho * rho) * e2)
    return Offset(float(params.means[k, 0] + dx), float(params.means[k, 1] + dy))


def best_mean(params: MixtureParams) -> Offset:
    k = int(np.argmax(params.weights))  # first max wins ties
    return Offset(float(params.means[k, 0]), float(params.means[k, 1]))
