"""Single-layer GRU with four mixture heads, trained by exact BPTT.

The cell uses the reset-gate-inside-candidate formulation::

    z  = sigmoid(W_z [x; h] + b_z)
    r  = sigmoid(W_r [x; h] + b_r)
    h~ = tanh(W_h [x; r*h] + b_h)
    h' = (1 - z) * h + z * h~

and four affine heads map ``h'`` to the raw mixture outputs (weights and
correlations of size M, means and log-sigmas of size 2M). Everything is
plain numpy; sequences are batched with a validity mask so a mini-batch
costs one matrix product per time step.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .mdn import LOG_2PI, RHO_MAX, SIGMA_MIN, MixtureParams, RawMixtureOutputs, constrain

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

GATES = ("z", "r", "h")
HEADS = ("pi", "rho", "mu", "sigma")
PARAM_NAMES = tuple(f"W_{g}" for g in GATES) + tuple(f"b_{g}" for g in GATES) + \
    tuple(f"W_{h}" for h in HEADS) + tuple(f"b_{h}" for h in HEADS)


class TrainingDivergence(RuntimeError):
    """Raised when the loss becomes NaN or infinite."""

    def __init__(self, message, epoch=None, index=None):
        super().__init__(message)
        self.epoch = epoch
        self.index = index


class ModelLoadError(ValueError):
    pass


class ModelVersionError(ModelLoadError):
    pass


class MalformedModelError(ModelLoadError):
    pass


class ModelShapeError(ModelLoadError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 2
    hidden_dim: int = 64
    mixtures: int = 5

    def __post_init__(self):
        if self.input_dim != 2:
            raise ValueError("the model consumes 2-D offsets")
        if self.hidden_dim < 1 or self.mixtures < 1:
            raise ValueError("hidden_dim and mixtures must be >= 1")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, h, m = self.input_dim, self.hidden_dim, self.mixtures
        out = {}
        for g in GATES:
            out[f"W_{g}"] = (h, d + h)
        for g in GATES:
            out[f"b_{g}"] = (h,)
        head_dims = {"pi": m, "rho": m, "mu": 2 * m, "sigma": 2 * m}
        for name in HEADS:
            out[f"W_{name}"] = (head_dims[name], h)
        for name in HEADS:
            out[f"b_{name}"] = (head_dims[name],)
        return out


@dataclass
class ModelParams:
    """Named parameter arrays; gradients use the same container."""

    config: ModelConfig
    arrays: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = self.config.shapes()
        if set(self.arrays) != set(shapes):
            raise ValueError(f"parameter names {sorted(self.arrays)} do not match config")
        for name, shape in shapes.items():
            if self.arrays[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {self.arrays[name].shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.config, {k: np.zeros_like(v) for k, v in self.arrays.items()})

    def global_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(v * v)) for v in self.arrays.values()))

    def allclose(self, other: "ModelParams", **kw) -> bool:
        return all(np.allclose(self[k], other[k], **kw) for k in PARAM_NAMES)

    def equal(self, other: "ModelParams") -> bool:
        return self.config == other.config and all(
            np.array_equal(self[k], other[k]) for k in PARAM_NAMES)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    decay_factor: float = 0.1
    decay_epochs: tuple[int, ...] = (15, 40, 80)
    grad_clip_norm: float = 5.0
    seed: int = 0
    batch_size: int = 32

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if list(self.decay_epochs) != sorted(self.decay_epochs):
            raise ValueError("decay_epochs must be sorted ascending")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based training ``epoch``.

        A decay listed at ``e`` takes effect once ``e`` epochs have completed.
        """
        n = sum(1 for d in self.decay_epochs if d < epoch)
        return self.learning_rate * self.decay_factor ** n


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in config.shapes().items():
        if name.startswith("W_"):
            s = math.sqrt(1.0 / shape[1])
            arrays[name] = rng.uniform(-s, s, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    return ModelParams(config, arrays)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def cell_step(params: ModelParams, h: np.ndarray, x) -> np.ndarray:
    """One GRU step. ``h`` is (H,) or (N, H); ``x`` is (2,) or (N, 2)."""
    h = np.asarray(h, dtype=float)
    x = np.asarray(tuple(x) if not isinstance(x, np.ndarray) else x, dtype=float)
    a = np.concatenate([x, h], axis=-1)
    z = _sigmoid(a @ params["W_z"].T + params["b_z"])
    r = _sigmoid(a @ params["W_r"].T + params["b_r"])
    a2 = np.concatenate([x, r * h], axis=-1)
    hc = np.tanh(a2 @ params["W_h"].T + params["b_h"])
    return (1.0 - z) * h + z * hc


def heads(params: ModelParams, h: np.ndarray) -> RawMixtureOutputs:
    m = params.config.mixtures
    h = np.asarray(h, dtype=float)
    return RawMixtureOutputs(
        pi_hat=params["W_pi"] @ h + params["b_pi"],
        mu_hat=(params["W_mu"] @ h + params["b_mu"]).reshape(m, 2),
        sigma_hat=(params["W_sigma"] @ h + params["b_sigma"]).reshape(m, 2),
        rho_hat=params["W_rho"] @ h + params["b_rho"],
    )


def forward_sequence(params: ModelParams, offsets) -> list[MixtureParams]:
    offsets = list(offsets)
    if not offsets:
        raise ValueError("forward_sequence needs at least one offset")
    h = np.zeros(params.config.hidden_dim)
    out = []
    for x in offsets:
        h = cell_step(params, h, x)
        out.append(constrain(heads(params, h), 0.0))
    return out


# ---------------------------------------------------------------------------
# batched loss and gradient

def _as_array(seq) -> np.ndarray:
    seq = getattr(seq, "offsets", seq)
    arr = np.asarray([tuple(o) for o in seq] if not isinstance(seq, np.ndarray) else seq,
                     dtype=float)
    return arr.reshape(-1, 2)


def _pad(inputs: Sequence[np.ndarray], targets: Sequence[np.ndarray]):
    n = len(inputs)
    t_max = max(len(s) for s in inputs)
    X = np.zeros((n, t_max, 2))
    Y = np.zeros((n, t_max, 2))
    mask = np.zeros((n, t_max))
    for i, (xs, ys) in enumerate(zip(inputs, targets)):
        X[i, :len(xs)] = xs
        Y[i, :len(ys)] = ys
        mask[i, :len(xs)] = 1.0
    return X, Y, mask


def _batch_loss(params: ModelParams, X, Y, mask, need_grad=True):
    """Summed NLL over all valid steps of a padded batch, and its gradient."""
    cfg = params.config
    n, t_max, d = X.shape
    m = cfg.mixtures
    P = params.arrays
    h = np.zeros((n, cfg.hidden_dim))
    cache = []
    total = 0.0

    for t in range(t_max):
        x = X[:, t]
        h_prev = h
        a = np.concatenate([x, h_prev], axis=1)
        z = _sigmoid(a @ P["W_z"].T + P["b_z"])
        r = _sigmoid(a @ P["W_r"].T + P["b_r"])
        a2 = np.concatenate([x, r * h_prev], axis=1)
        hc = np.tanh(a2 @ P["W_h"].T + P["b_h"])
        h = (1.0 - z) * h_prev + z * hc

        pi_hat = h @ P["W_pi"].T + P["b_pi"]
        rho_hat = h @ P["W_rho"].T + P["b_rho"]
        mu = (h @ P["W_mu"].T + P["b_mu"]).reshape(n, m, 2)
        sig_raw = np.exp((h @ P["W_sigma"].T + P["b_sigma"]).reshape(n, m, 2))
        sig = np.maximum(sig_raw, SIGMA_MIN)
        rho_raw = np.tanh(rho_hat)
        rho = np.clip(rho_raw, -RHO_MAX, RHO_MAX)

        top = pi_hat.max(axis=1, keepdims=True)
        log_pi = pi_hat - top - np.log(np.sum(np.exp(pi_hat - top), axis=1, keepdims=True))
        u = (Y[:, t, None, :] - mu) / sig
        u1, u2 = u[..., 0], u[..., 1]
        c = 1.0 - rho * rho
        zq = u1 * u1 + u2 * u2 - 2.0 * rho * u1 * u2
        log_n = -LOG_2PI - np.log(sig).sum(axis=2) - 0.5 * np.log(c) - zq / (2.0 * c)
        terms = log_pi + log_n
        tmax = terms.max(axis=1, keepdims=True)
        lse = tmax[:, 0] + np.log(np.sum(np.exp(terms - tmax), axis=1))
        step_loss = -lse * mask[:, t]
        s = float(step_loss.sum())
        if not math.isfinite(s):
            raise TrainingDivergence(f"non-finite loss at step {t}", index=t)
        total += s
        if need_grad:
            gamma = np.exp(terms - lse[:, None])
            cache.append((a, z, r, a2, hc, h_prev, h, np.exp(log_pi), gamma, u1, u2, rho, c, zq,
                          sig, sig_raw > SIGMA_MIN, np.abs(rho_raw) < RHO_MAX))

    if not need_grad:
        return total, None

    G = {k: np.zeros_like(v) for k, v in P.items()}
    dh_next = np.zeros((n, cfg.hidden_dim))
    for t in reversed(range(t_max)):
        (a, z, r, a2, hc, h_prev, h, pi, gamma, u1, u2, rho, c, zq,
         sig, sig_on, rho_on) = cache[t]
        w = mask[:, t, None]
        g = gamma * w
        d_pi = (pi - gamma) * w
        d_mu = np.empty((n, m, 2))
        d_mu[..., 0] = -g * (u1 - rho * u2) / (c * sig[..., 0])
        d_mu[..., 1] = -g * (u2 - rho * u1) / (c * sig[..., 1])
        d_sig = np.empty((n, m, 2))
        d_sig[..., 0] = -g * (-1.0 + (u1 * u1 - rho * u1 * u2) / c)
        d_sig[..., 1] = -g * (-1.0 + (u2 * u2 - rho * u1 * u2) / c)
        d_sig *= sig_on
        d_rho = -g * (rho + u1 * u2 - rho * zq / c) * rho_on
        d_mu = d_mu.reshape(n, 2 * m)
        d_sig = d_sig.reshape(n, 2 * m)

        dh = dh_next.copy()
        for name, dout in (("pi", d_pi), ("rho", d_rho), ("mu", d_mu), ("sigma", d_sig)):
            G[f"W_{name}"] += dout.T @ h
            G[f"b_{name}"] += dout.sum(axis=0)
            dh += dout @ P[f"W_{name}"]

        dz = dh * (hc - h_prev)
        dhc = dh * z
        dh_prev = dh * (1.0 - z)
        dpre_h = dhc * (1.0 - hc * hc)
        G["W_h"] += dpre_h.T @ a2
        G["b_h"] += dpre_h.sum(axis=0)
        drh = (dpre_h @ P["W_h"])[:, d:]
        dh_prev += drh * r
        dpre_z = dz * z * (1.0 - z)
        dpre_r = drh * h_prev * r * (1.0 - r)
        G["W_z"] += dpre_z.T @ a
        G["b_z"] += dpre_z.sum(axis=0)
        G["W_r"] += dpre_r.T @ a
        G["b_r"] += dpre_r.sum(axis=0)
        dh_prev += (dpre_z @ P["W_z"] + dpre_r @ P["W_r"])[:, d:]
        dh_next = dh_prev

    return total, ModelParams(cfg, G)


def backward_batch(params: ModelParams, inputs, targets):
    """Summed loss and gradient over several independent sequences."""
    xs = [_as_array(s) for s in inputs]
    ys = [_as_array(s) for s in targets]
    if len(xs) != len(ys):
        raise ValueError("inputs and targets must pair up")
    for x, y in zip(xs, ys):
        if len(x) == 0:
            raise ValueError("zero-length sequence")
        if len(x) != len(y):
            raise ValueError(f"length mismatch: {len(x)} inputs vs {len(y)} targets")
    return _batch_loss(params, *_pad(xs, ys))


def backward_sequence(params: ModelParams, offsets, targets):
    return backward_batch(params, [offsets], [targets])


def split_pairs(offsets) -> tuple[np.ndarray, np.ndarray]:
    """(inputs, targets) for a raw offset chain: each offset predicts the next."""
    arr = _as_array(offsets)
    return arr[:-1], arr[1:]


def mean_nll(params: ModelParams, sequences, batch_size: int = 256) -> float:
    """Per-step mean NLL of next-offset prediction over ``sequences``."""
    pairs = [split_pairs(s) for s in sequences]
    pairs = [p for p in pairs if len(p[0])]
    total, steps = 0.0, 0
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i:i + batch_size]
        X, Y, mask = _pad([p[0] for p in chunk], [p[1] for p in chunk])
        loss, _ = _batch_loss(params, X, Y, mask, need_grad=False)
        total += loss
        steps += int(mask.sum())
    return total / steps


# ---------------------------------------------------------------------------
# optimisation

@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, g in grads.arrays.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params.arrays[k] -= self.lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + self.eps)


def clip_by_global_norm(grads: ModelParams, max_norm: float) -> float:
    norm = grads.global_norm()
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for v in grads.arrays.values():
            v *= scale
    return norm


def train(model: ModelParams, train_set, val_set, tc: TrainConfig, on_epoch=None):
    """Fit ``model`` on offset chains and return ``(best_params, history)``.

    ``history[0]`` holds the untrained model's losses; entry ``e`` the
    losses after training epoch ``e``. Each batch gradient is divided by
    the number of valid steps, so the clip norm is independent of batch
    size and sequence length.
    """
    pairs = [split_pairs(s) for s in train_set]
    pairs = [p for p in pairs if len(p[0])]
    if not pairs:
        raise ValueError("empty training set")
    val_set = list(val_set) or list(train_set)

    params = model.copy()
    opt = Adam(lr=tc.learning_rate)
    rng = np.random.default_rng(tc.seed)
    try:
        history = [{"epoch": 0, "lr": 0.0,
                    "train_nll": mean_nll(params, train_set),
                    "val_nll": mean_nll(params, val_set)}]
    except TrainingDivergence as exc:
        raise TrainingDivergence(f"initial model gives a non-finite loss ({exc})", epoch=0) from exc
    best, best_val = params.copy(), history[0]["val_nll"]
    log.info("epoch 0: train %.4f val %.4f", history[0]["train_nll"], best_val)

    for epoch in range(1, tc.epochs + 1):
        opt.lr = tc.lr_at(epoch)
        order = rng.permutation(len(pairs))
        run_loss, run_steps = 0.0, 0
        for start in range(0, len(order), tc.batch_size):
            idx = order[start:start + tc.batch_size]
            X, Y, mask = _pad([pairs[i][0] for i in idx], [pairs[i][1] for i in idx])
            try:
                loss, grads = _batch_loss(params, X, Y, mask)
            except TrainingDivergence as exc:
                raise TrainingDivergence(
                    f"divergence in epoch {epoch}, batch starting at sequence {int(idx[0])}",
                    epoch=epoch, index=int(idx[0])) from exc
            steps = int(mask.sum())
            for g in grads.arrays.values():
                g /= steps
            clip_by_global_norm(grads, tc.grad_clip_norm)
            if opt.lr > 0:
                opt.step(params, grads)
            run_loss += loss
            run_steps += steps
        val = mean_nll(params, val_set)
        if not math.isfinite(val):
            raise TrainingDivergence(f"non-finite validation loss in epoch {epoch}", epoch=epoch)
        history.append({"epoch": epoch, "lr": opt.lr,
                        "train_nll": run_loss / run_steps, "val_nll": val})
        log.info("epoch %d: lr %.1e train %.4f val %.4f", epoch, opt.lr, run_loss / run_steps, val)
        if val < best_val:
            best, best_val = params.copy(), val
        if on_epoch is not None:
            on_epoch(history[-1])
    return best, history


# ---------------------------------------------------------------------------
# persistence

def _fmt_array(a: np.ndarray) -> str:
    return "[" + ", ".join(format(float(v), ".17g") for v in a.ravel()) + "]"


def save_model(params: ModelParams, path, rng_seed: int | None = None, training_meta=None) -> None:
    cfg = params.config
    body = [
        "{",
        f'  "format_version": {FORMAT_VERSION},',
        '  "config": ' + json.dumps({"input_dim": cfg.input_dim, "hidden_dim": cfg.hidden_dim,
                                     "mixtures": cfg.mixtures}) + ",",
        '  "params": {',
        ",\n".join(f'    "{k}": {_fmt_array(params[k])}' for k in PARAM_NAMES),
        "  },",
        f'  "rng_seed": {json.dumps(rng_seed)},',
        f'  "training_meta": {json.dumps(training_meta or {})}',
        "}",
    ]
    Path(path).write_text("\n".join(body) + "\n", encoding="utf-8")


def load_model(path) -> ModelParams:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedModelError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise MalformedModelError(f"{path}: missing format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise ModelVersionError(f"{path}: unsupported format_version {doc['format_version']}")
    try:
        cfg = ModelConfig(**doc["config"])
        raw = doc["params"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedModelError(f"{path}: bad config or params block ({exc})") from exc
    arrays = {}
    for name, shape in cfg.shapes().items():
        if name not in raw:
            raise MalformedModelError(f"{path}: missing parameter {name}")
        flat = np.asarray(raw[name], dtype=float)
        if flat.ndim != 1 or flat.size != math.prod(shape):
            raise ModelShapeError(
                f"{path}: {name} has {flat.size} values, config implies {math.prod(shape)}")
        arrays[name] = flat.reshape(shape)
    return ModelParams(cfg, arrays)


def load_model_meta(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return {"rng_seed": doc.get("rng_seed"), "training_meta": doc.get("training_meta", {})}


def iter_offsets(centroids: Iterable) -> np.ndarray:
    c = np.asarray([tuple(p) for p in centroids], dtype=float)
    return np.diff(c, axis=0)
