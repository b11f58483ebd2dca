"""Shared fixtures: a desk-scale trained model reused by several test files."""
from __future__ import annotations

import os

# timing criteria are stated for a single thread
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import time  # noqa: E402

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from trajetrack import data, rnn  # noqa: E402

# 1800 training + 200 validation windows = 2000 noisy trajectories
N_TRAIN, N_VAL, SEQ_LEN, NOISE = 1800, 200, 100, 2.0
EPOCHS = 30


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def trained():
    """Train once on constant-velocity + turning paths; returns a dict."""
    paths = data.synthetic_motion_tracks(400, SEQ_LEN, seed=1)
    train_set, val_set = data.generate_training_set(paths, N_TRAIN, N_VAL, SEQ_LEN, NOISE, seed=2)
    start = time.perf_counter()
    model, history = rnn.train(rnn.init_params(rnn.ModelConfig(), 0),
                               train_set, val_set,
                               rnn.TrainConfig(epochs=EPOCHS, seed=0))
    elapsed = time.perf_counter() - start
    return {"model": model, "history": history, "seconds": elapsed,
            "n_sequences": len(train_set) + len(val_set), "val_set": val_set}


@pytest.fixture(scope="session")
def model(trained):
    return trained["model"]


def random_mixture(rng, m, rho_max=0.9):
    from trajetrack.mdn import MixtureParams
    w = rng.uniform(0.1, 1.0, m)
    return MixtureParams(w / w.sum(), rng.normal(0, 2, (m, 2)),
                         rng.uniform(0.3, 2.0, (m, 2)), rng.uniform(-rho_max, rho_max, m))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def perturbed_params(seed, hidden=8, mixtures=2, scale=0.3):
    """Small random model with non-zero biases."""
    from trajetrack import rnn
    p = rnn.init_params(rnn.ModelConfig(hidden_dim=hidden, mixtures=mixtures), seed)
    r = np.random.default_rng(seed + 1000)
    for v in p.arrays.values():
        v += r.normal(0, scale, v.shape)
    return p


def stacked_loss(arrays, xs, ys):
    """NLL of one sequence under a stack of parameter sets (leading axis P).

    Written independently of the package's training code so it can serve
    as the finite-difference oracle.
    """
    from trajetrack.mdn import RHO_MAX, SIGMA_MIN
    P, H = arrays["b_z"].shape
    M = arrays["b_pi"].shape[1]
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))  # noqa: E731
    aff = lambda w, b, v: np.einsum("pij,pj->pi", arrays[w], v) + arrays[b]  # noqa: E731
    h = np.zeros((P, H))
    total = np.zeros(P)
    for x, y in zip(xs, ys):
        xb = np.broadcast_to(x, (P, 2))
        a = np.concatenate([xb, h], axis=1)
        z, r = sig(aff("W_z", "b_z", a)), sig(aff("W_r", "b_r", a))
        hc = np.tanh(aff("W_h", "b_h", np.concatenate([xb, r * h], axis=1)))
        h = (1 - z) * h + z * hc
        logits = aff("W_pi", "b_pi", h)
        log_w = logits - np.log(np.sum(np.exp(logits), axis=1, keepdims=True))
        mu = aff("W_mu", "b_mu", h).reshape(P, M, 2)
        s = np.maximum(np.exp(aff("W_sigma", "b_sigma", h)), SIGMA_MIN).reshape(P, M, 2)
        rho = np.clip(np.tanh(aff("W_rho", "b_rho", h)), -RHO_MAX, RHO_MAX)
        d = (y - mu) / s
        q = (d[..., 0] ** 2 + d[..., 1] ** 2 - 2 * rho * d[..., 0] * d[..., 1]) / (1 - rho ** 2)
        log_n = -np.log(2 * np.pi * s[..., 0] * s[..., 1] * np.sqrt(1 - rho ** 2)) - q / 2
        terms = log_w + log_n
        top = terms.max(axis=1, keepdims=True)
        total -= top[:, 0] + np.log(np.sum(np.exp(terms - top), axis=1))
    return total


def gradient_check(seed, hidden=8, mixtures=2, steps=6, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    Entries where both are below 1e-8 in magnitude are compared absolutely
    (scaled so an absolute gap of 1e-8 counts as relative error 1e-4).
    """
    from trajetrack import rnn
    p = perturbed_params(seed, hidden, mixtures)
    r = np.random.default_rng(seed + 2000)
    xs, ys = r.normal(0, 1.5, (steps, 2)), r.normal(0, 1.5, (steps, 2))
    _, grads = rnn.backward_sequence(p, xs, ys)
    entries = [(name, idx) for name in rnn.PARAM_NAMES for idx in np.ndindex(p[name].shape)]
    stack = {k: np.repeat(v[None], 2 * len(entries), axis=0) for k, v in p.arrays.items()}
    for row, (name, idx) in enumerate(entries):
        stack[name][(2 * row,) + idx] += eps
        stack[name][(2 * row + 1,) + idx] -= eps
    losses = stacked_loss(stack, xs, ys)
    worst = 0.0
    for row, (name, idx) in enumerate(entries):
        num = (losses[2 * row] - losses[2 * row + 1]) / (2 * eps)
        ana = grads[name][idx]
        big = max(abs(num), abs(ana))
        err = abs(num - ana) / big if big >= 1e-8 else abs(num - ana) / 1e-8 * 1e-4
        worst = max(worst, err)
    return worst
