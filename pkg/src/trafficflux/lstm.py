"""Single-layer LSTM in numpy: forward pass, BPTT, Adam and the training loop.

Gate rows of the stacked weight matrix ``W`` are ordered ``[f, i, g, o]``;
each block maps the concatenation ``[x; h]`` to ``hidden_dim`` pre-activations.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from itertools import count
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyInputError, NumericalError, ShapeError, StaleCacheError
from .seeding import rng_for

log = logging.getLogger(__name__)

_versions = count(1)
GATES = ("f", "i", "g", "o")


def sigmoid(z):
    # tanh form cannot overflow
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LstmParams:
    input_dim: int
    hidden_dim: int
    output_dim: int
    W: np.ndarray  # (4H, I + H)
    b: np.ndarray  # (4H,)
    W_y: np.ndarray  # (O, H)
    b_y: np.ndarray  # (O,)
    version: int = field(default_factory=lambda: next(_versions), compare=False)

    def __post_init__(self):
        I, H, O = self.input_dim, self.hidden_dim, self.output_dim
        if min(I, H, O) < 1:
            raise ShapeError("dimensions must be positive")
        expect = {"W": (4 * H, I + H), "b": (4 * H,), "W_y": (O, H), "b_y": (O,)}
        for name, shp in expect.items():
            arr = getattr(self, name)
            if arr.shape != shp:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shp}")

    # per-gate views
    def _gate(self, k):
        H = self.hidden_dim
        return self.W[k * H:(k + 1) * H]

    def _gate_b(self, k):
        H = self.hidden_dim
        return self.b[k * H:(k + 1) * H]

    W_f = property(lambda self: self._gate(0))
    W_i = property(lambda self: self._gate(1))
    W_g = property(lambda self: self._gate(2))
    W_o = property(lambda self: self._gate(3))
    b_f = property(lambda self: self._gate_b(0))
    b_i = property(lambda self: self._gate_b(1))
    b_g = property(lambda self: self._gate_b(2))
    b_o = property(lambda self: self._gate_b(3))

    ARRAYS = ("W", "b", "W_y", "b_y")

    def arrays(self):
        return [getattr(self, n) for n in self.ARRAYS]

    def touch(self):
        """Mark the parameters as mutated so older forward caches are rejected."""
        self.version = next(_versions)

    def copy(self) -> "LstmParams":
        return LstmParams(self.input_dim, self.hidden_dim, self.output_dim,
                          *(a.copy() for a in self.arrays()))

    def zeros_like(self) -> "LstmParams":
        return LstmParams(self.input_dim, self.hidden_dim, self.output_dim,
                          *(np.zeros_like(a) for a in self.arrays()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    @classmethod
    def zeros(cls, input_dim, hidden_dim, output_dim=1, dtype=np.float64) -> "LstmParams":
        H, I, O = hidden_dim, input_dim, output_dim
        return cls(I, H, O, np.zeros((4 * H, I + H), dtype), np.zeros(4 * H, dtype),
                   np.zeros((O, H), dtype), np.zeros(O, dtype))

    @classmethod
    def init(cls, input_dim, hidden_dim, output_dim=1, rng=None, forget_bias=1.0,
             dtype=np.float64) -> "LstmParams":
        """Uniform(+-1/sqrt(fan_in)) weights, zero biases except the forget gate."""
        rng = rng if rng is not None else np.random.default_rng()
        H, I, O = hidden_dim, input_dim, output_dim
        a = 1.0 / math.sqrt(I + H)
        W = rng.uniform(-a, a, size=(4 * H, I + H))
        b = np.zeros(4 * H)
        b[:H] = forget_bias
        ay = 1.0 / math.sqrt(H)
        W_y = rng.uniform(-ay, ay, size=(O, H))
        return cls(I, H, O, W.astype(dtype), b.astype(dtype), W_y.astype(dtype),
                   np.zeros(O, dtype))


@dataclass
class LstmState:
    c: np.ndarray
    h: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim, batch=None, dtype=np.float64):
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(np.zeros(shape, dtype), np.zeros(shape, dtype))


def step(params: LstmParams, state: LstmState, x) -> tuple[np.ndarray, LstmState]:
    """One gated update; works on a single vector or a ``(batch, input_dim)`` block."""
    x = np.asarray(x, dtype=params.W.dtype)
    if x.shape[-1] != params.input_dim:
        raise ShapeError(f"input has {x.shape[-1]} features, expected {params.input_dim}")
    H = params.hidden_dim
    z = np.concatenate([x, state.h], axis=-1) @ params.W.T + params.b
    f = sigmoid(z[..., :H])
    i = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c = f * state.c + i * g
    h = o * np.tanh(c)
    y = h @ params.W_y.T + params.b_y
    return y, LstmState(c, h)


@dataclass
class ForwardCache:
    params_id: int
    params_version: int
    X: np.ndarray  # (B, T, I)
    acts: np.ndarray  # (T, B, 4H) post-activation gate values
    cs: np.ndarray  # (T + 1, B, H)
    hs: np.ndarray  # (T + 1, B, H)
    tanh_c: np.ndarray  # (T, B, H)


def forward(params: LstmParams, X) -> tuple[np.ndarray, ForwardCache]:
    """Run a zero-initialised LSTM over ``X`` of shape ``(batch, T, input_dim)``.

    Returns the readout of the final hidden state, shape ``(batch, output_dim)``.
    """
    X = np.asarray(X, dtype=params.W.dtype)
    if X.ndim != 3:
        raise ShapeError("forward expects a (batch, time, features) array")
    B, T, I = X.shape
    if T == 0:
        raise EmptyInputError("empty input sequence")
    if I != params.input_dim:
        raise ShapeError(f"input has {I} features, expected {params.input_dim}")
    H = params.hidden_dim
    Wx, Wh = params.W[:, :I], params.W[:, I:]
    # input projections for every step in one matmul
    Zx = (X.reshape(B * T, I) @ Wx.T).reshape(B, T, 4 * H).transpose(1, 0, 2) + params.b

    acts = np.empty((T, B, 4 * H), dtype=X.dtype)
    cs = np.zeros((T + 1, B, H), dtype=X.dtype)
    hs = np.zeros((T + 1, B, H), dtype=X.dtype)
    tanh_c = np.empty((T, B, H), dtype=X.dtype)
    for t in range(T):
        z = Zx[t] + hs[t] @ Wh.T
        a = acts[t]
        a[:, :2 * H] = sigmoid(z[:, :2 * H])
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        a[:, 3 * H:] = sigmoid(z[:, 3 * H:])
        cs[t + 1] = a[:, :H] * cs[t] + a[:, H:2 * H] * a[:, 2 * H:3 * H]
        tanh_c[t] = np.tanh(cs[t + 1])
        hs[t + 1] = a[:, 3 * H:] * tanh_c[t]
    y = hs[T] @ params.W_y.T + params.b_y
    return y, ForwardCache(id(params), params.version, X, acts, cs, hs, tanh_c)


def forward_sequence(params: LstmParams, x_seq) -> tuple[np.ndarray, ForwardCache]:
    """Sequence-to-one forward for a single ``(T, input_dim)`` sequence."""
    x_seq = np.asarray(x_seq, dtype=params.W.dtype)
    if x_seq.ndim == 1:
        x_seq = x_seq[:, None]
    if x_seq.shape[0] == 0:
        raise EmptyInputError("empty input sequence")
    y, cache = forward(params, x_seq[None])
    return y[0], cache


def backward(params: LstmParams, cache: ForwardCache, grad_y) -> LstmParams:
    """Gradients of ``sum(grad_y * y)`` with respect to every parameter (BPTT)."""
    if cache.params_id != id(params) or cache.params_version != params.version:
        raise StaleCacheError("forward cache does not belong to these parameters")
    X, acts, cs, hs, tanh_c = cache.X, cache.acts, cache.cs, cache.hs, cache.tanh_c
    T, B, _ = acts.shape
    grad_y = np.asarray(grad_y, dtype=params.W.dtype).reshape(B, params.output_dim)
    H, I = params.hidden_dim, params.input_dim
    Wh = params.W[:, I:]

    grads = params.zeros_like()
    grads.W_y[...] = grad_y.T @ hs[T]
    grads.b_y[...] = grad_y.sum(axis=0)

    dZ = np.empty_like(acts)
    dh = grad_y @ params.W_y
    dc = np.zeros((B, H), dtype=acts.dtype)
    for t in range(T - 1, -1, -1):
        a = acts[t]
        f, i, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = tanh_c[t]
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = dZ[t]
        dz[:, :H] = dc * cs[t] * f * (1.0 - f)
        dz[:, H:2 * H] = dc * g * i * (1.0 - i)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dh = dz @ Wh
        dc = dc * f

    flat = dZ.reshape(T * B, 4 * H)
    xs = X.transpose(1, 0, 2).reshape(T * B, I)
    grads.W[:, :I] = flat.T @ xs
    grads.W[:, I:] = flat.T @ hs[:T].reshape(T * B, H)
    grads.b[...] = flat.sum(axis=0)
    return grads


def predict(params: LstmParams, X, batch_size: int = 512) -> np.ndarray:
    X = np.asarray(X, dtype=params.W.dtype)
    out = [forward(params, X[k:k + batch_size])[0] for k in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.empty((0, params.output_dim))


class Adam:
    def __init__(self, params: LstmParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def update(self, params: LstmParams, grads: LstmParams, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params.arrays(), grads.arrays(), self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        params.touch()


@dataclass
class Normalizer:
    """Per-feature z-score scaling."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values, axis=0) -> "Normalizer":
        values = np.asarray(values, dtype=float)
        mean = values.mean(axis=axis)
        std = values.std(axis=axis)
        std = np.where(std > 0, std, 1.0)
        return cls(np.atleast_1d(mean), np.atleast_1d(std))

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def denormalize(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float))


@dataclass
class HyperParams:
    hidden_dim: int = 64
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    final_lr_fraction: float = 0.01
    val_fraction: float = 0.1
    grad_clip: float = 5.0
    forget_bias: float = 1.0
    bootstrap: bool = False
    dtype: str = "float64"

    def validate(self):
        if self.hidden_dim < 1:
            raise ConfigError("hp.hidden_dim must be >= 1")
        if self.epochs < 1:
            raise ConfigError("hp.epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("hp.batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("hp.learning_rate must be positive")
        if not 0.0 < self.final_lr_fraction <= 1.0:
            raise ConfigError("hp.final_lr_fraction must lie in (0, 1]")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("hp.val_fraction must lie in [0, 1)")
        if self.grad_clip < 0:
            raise ConfigError("hp.grad_clip must be >= 0")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("hp.dtype must be float64 or float32")

    def lr_at(self, epoch: int) -> float:
        """Cosine decay from ``learning_rate`` to ``learning_rate * final_lr_fraction``."""
        if self.epochs == 1:
            return self.learning_rate
        frac = epoch / (self.epochs - 1)
        lo = self.learning_rate * self.final_lr_fraction
        return lo + 0.5 * (self.learning_rate - lo) * (1.0 + math.cos(math.pi * frac))


@dataclass
class TrainCurve:
    train_rmse: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.train_rmse)

    def to_csv(self, path):
        lines = ["epoch,train_rmse,val_rmse"]
        for e, (a, b) in enumerate(zip(self.train_rmse, self.val_rmse), start=1):
            lines.append(f"{e},{a!r},{b!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def rmse_loss(pred, target) -> float:
    d = np.asarray(pred, float).ravel() - np.asarray(target, float).ravel()
    return float(np.sqrt(np.mean(d * d))) if d.size else float("nan")


def _grad_norms(grads: LstmParams) -> dict:
    return {n: float(np.linalg.norm(a)) for n, a in zip(LstmParams.ARRAYS, grads.arrays())}


def train(X, y, hp: HyperParams, seed: int, target_scale: float = 1.0,
          params: LstmParams | None = None) -> tuple[LstmParams, TrainCurve]:
    """Fit an LSTM to normalised windows ``X (N, L, F)`` and targets ``y (N,)``.

    The last ``val_fraction`` of samples (chronological order) is held out.
    Minimises mean squared error with Adam under a cosine learning-rate
    decay.  Train RMSE per epoch is accumulated over that epoch's
    mini-batches; validation RMSE is a full pass after the epoch.  Both are
    reported in original units (``target_scale`` undoes the normalisation).
    """
    hp.validate()
    dtype = np.dtype(hp.dtype)
    X = np.asarray(X, dtype=dtype)
    y = np.asarray(y, dtype=dtype).reshape(len(X), -1)
    if len(X) == 0:
        raise EmptyInputError("no training samples")
    n_val = int(round(len(X) * hp.val_fraction))
    n_train = len(X) - n_val
    if n_train < 1:
        raise EmptyInputError("validation split leaves no training samples")
    Xt, yt, Xv, yv = X[:n_train], y[:n_train], X[n_train:], y[n_train:]

    rng = rng_for(seed, "lstm", "train")
    if params is None:
        params = LstmParams.init(X.shape[2], hp.hidden_dim, y.shape[1], dtype=dtype,
                                 rng=rng_for(seed, "lstm", "init"), forget_bias=hp.forget_bias)
    opt = Adam(params, lr=hp.learning_rate)
    if hp.bootstrap:
        pool = rng_for(seed, "lstm", "bootstrap").integers(0, n_train, size=n_train)
    else:
        pool = np.arange(n_train)
    curve = TrainCurve()

    for epoch in range(hp.epochs):
        lr = hp.lr_at(epoch)
        order = pool[rng.permutation(pool.size)]
        sse = 0.0
        for bi, k in enumerate(range(0, order.size, hp.batch_size)):
            idx = order[k:k + hp.batch_size]
            pred, cache = forward(params, Xt[idx])
            err = pred - yt[idx]
            batch_sse = float(np.sum(err * err, dtype=np.float64))
            grads = backward(params, cache, (2.0 / err.size) * err)
            if not math.isfinite(batch_sse) or not grads.is_finite():
                raise NumericalError("non-finite loss during training", epoch=epoch, batch=bi,
                                     **{f"grad_norm_{k}": v for k, v in _grad_norms(grads).items()})
            sse += batch_sse
            if hp.grad_clip > 0:
                norm = math.sqrt(sum(float(np.sum(a * a)) for a in grads.arrays()))
                if norm > hp.grad_clip:
                    for a in grads.arrays():
                        a *= hp.grad_clip / norm
            opt.update(params, grads, lr=lr)
        tr = math.sqrt(sse / (order.size * y.shape[1])) * target_scale
        va = rmse_loss(predict(params, Xv), yv) * target_scale if n_val else float("nan")
        curve.train_rmse.append(tr)
        curve.val_rmse.append(va)
        if epoch % 50 == 0 or epoch == hp.epochs - 1:
            log.debug("epoch=%d train_rmse=%.4f val_rmse=%.4f lr=%.2e", epoch, tr, va, lr)
    return params, curve


def plateau_improvement(train_rmse, tail_fraction=0.1) -> float:
    """Relative RMSE improvement across the final ``tail_fraction`` of epochs."""
    r = np.asarray(train_rmse, float)
    k = max(1, int(round(len(r) * tail_fraction)))
    start = r[-k - 1] if len(r) > k else r[0]
    return float(abs(start - r[-1]) / start) if start > 0 else 0.0


def smoothed(values, window=10) -> np.ndarray:
    v = np.asarray(values, float)
    if v.size < window:
        return v.copy()
    return np.convolve(v, np.ones(window) / window, mode="valid")


def save_checkpoint(path, params: LstmParams, x_norm: Normalizer, y_norm: Normalizer, meta=None):
    doc = {
        "format": "lstm-checkpoint-v1",
        "input_dim": params.input_dim,
        "hidden_dim": params.hidden_dim,
        "output_dim": params.output_dim,
        "x_norm": x_norm.to_dict(),
        "y_norm": y_norm.to_dict(),
        "weights": {n: a.tolist() for n, a in zip(LstmParams.ARRAYS, params.arrays())},
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    w = doc["weights"]
    params = LstmParams(doc["input_dim"], doc["hidden_dim"], doc["output_dim"],
                        *(np.asarray(w[n], dtype=np.float64) for n in LstmParams.ARRAYS))
    return params, Normalizer.from_dict(doc["x_norm"]), Normalizer.from_dict(doc["y_norm"]), doc["meta"]
