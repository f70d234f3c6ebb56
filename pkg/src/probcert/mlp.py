"""Feed-forward tanh networks in plain numpy, trained by mini-batch Adam.

Used to imitate the MPC feedback law: inputs are ``(theta, phi, psi,
u_prev)``, output is the steering input.
"""
from __future__ import annotations

import dataclasses
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

FORMAT = "probcert-mlp"
FORMAT_VERSION = 1

# width of the network input for each encoding of (theta, phi, psi, u_prev)
FEATURES = {"raw": 4, "sincos": 5}


class ParameterError(ValueError):
    pass


class TrainingDivergence(FloatingPointError):
    pass


@dataclass(frozen=True)
class Architecture:
    n_in: int = 4
    n_out: int = 1
    L: int = 6
    H: int = 30

    def __post_init__(self):
        if min(self.n_in, self.n_out, self.L, self.H) < 1:
            raise ValueError("all architecture sizes must be at least 1")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.n_in] + [self.H] * self.L + [self.n_out]


def count_weights(n_x: int, n_u: int, L: int, H: int) -> int:
    """Parameter count ``n_x (H+1) + (L-1)(H+1) H + H (n_u+1)``."""
    return n_x * (H + 1) + (L - 1) * (H + 1) * H + H * (n_u + 1)


def count_neurons(L: int, H: int) -> int:
    return L * H


def count_parameters(arch: Architecture) -> int:
    """Actual number of scalars in weights and biases."""
    s = arch.layer_sizes
    return sum(a * b + b for a, b in zip(s[:-1], s[1:]))


@dataclass
class MlpParams:
    W: list[np.ndarray]  # W[l] has shape (fan_in, fan_out)
    b: list[np.ndarray]

    def __post_init__(self):
        if len(self.W) != len(self.b) or not self.W:
            raise ParameterError("need one bias per weight matrix")
        for l, (W, b) in enumerate(zip(self.W, self.b)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ParameterError(f"layer {l}: bias shape {b.shape} does not fit weights {W.shape}")
            if l and W.shape[0] != self.W[l - 1].shape[1]:
                raise ParameterError(f"layer {l}: fan-in {W.shape[0]} != previous width")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ParameterError(f"layer {l} has non-finite entries")

    @property
    def arch(self) -> Architecture:
        return Architecture(self.W[0].shape[0], self.W[-1].shape[1], len(self.W) - 1, self.W[0].shape[1])

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.W], [v.copy() for v in self.b])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.W, self.b) for a in pair])


def init_params(arch: Architecture, rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    s = arch.layer_sizes
    W = [rng.uniform(-1, 1, (a, b)) * math.sqrt(6.0 / (a + b)) for a, b in zip(s[:-1], s[1:])]
    return MlpParams(W, [np.zeros(b) for b in s[1:]])


def forward(params: MlpParams, x) -> np.ndarray:
    """Network output for one input vector or a batch of rows."""
    a = np.asarray(x, dtype=float)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[1] != params.W[0].shape[0]:
        raise ParameterError(f"input width {a.shape[1]} != {params.W[0].shape[0]}")
    for W, b in zip(params.W[:-1], params.b[:-1]):
        a = np.tanh(a @ W + b)
    out = a @ params.W[-1] + params.b[-1]
    return out[0] if single else out


def loss_and_grad(params: MlpParams, X: np.ndarray, Y: np.ndarray) -> tuple[float, MlpParams]:
    """Mean squared error over all entries and its gradient by backpropagation."""
    acts = [X]
    for W, b in zip(params.W[:-1], params.b[:-1]):
        acts.append(np.tanh(acts[-1] @ W + b))
    out = acts[-1] @ params.W[-1] + params.b[-1]
    r = out - Y
    loss = float(np.mean(r * r))
    delta = 2.0 * r / r.size
    gW, gb = [], []
    for l in range(len(params.W) - 1, -1, -1):
        gW.append(acts[l].T @ delta)
        gb.append(delta.sum(axis=0))
        if l:
            delta = (delta @ params.W[l].T) * (1.0 - acts[l] ** 2)
    return loss, MlpParams(gW[::-1], gb[::-1])


def lipschitz_bound(params: MlpParams) -> float:
    """Product of spectral norms; tanh is 1-Lipschitz."""
    return float(np.prod([np.linalg.norm(W, 2) for W in params.W]))


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, A: np.ndarray) -> "Standardizer":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        std = A.std(axis=0)
        return cls(A.mean(axis=0), np.where(std > 0, std, 1.0))

    def apply(self, A):
        return (np.asarray(A, dtype=float) - self.mean) / self.std

    def invert(self, A):
        return np.asarray(A, dtype=float) * self.std + self.mean


@dataclass(frozen=True)
class TrainConfig:
    """Adam on mini-batches. Not given by any reference; these are choices."""

    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 300
    val_fraction: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    features: str = "sincos"

    def __post_init__(self):
        if self.features not in FEATURES:
            raise ValueError(f"features must be one of {sorted(FEATURES)}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate, batch_size and epochs must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass
class TrainedModel:
    params: MlpParams
    x_stats: Standardizer
    y_stats: Standardizer
    train_curve: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)
    best_epoch: int = -1
    meta: dict = field(default_factory=dict)
    features: str = "raw"

    def predict(self, X) -> np.ndarray:
        Xs = self.x_stats.apply(np.atleast_2d(X))
        return self.y_stats.invert(forward(self.params, Xs))

    def mse(self, X, y) -> float:
        pred = self.predict(X)
        return float(np.mean((pred - np.asarray(y, dtype=float).reshape(pred.shape)) ** 2))


def train(X, y, arch: Architecture | None = None, cfg: TrainConfig = TrainConfig(),
          X_val=None, y_val=None) -> TrainedModel:
    """Fit a network to ``y = f(X)`` and keep the best-on-validation weights.

    Without an explicit validation set, ``cfg.val_fraction`` of the rows are
    held out; with ``val_fraction = 0`` the training loss selects the
    checkpoint instead.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(y, dtype=float).reshape(len(X), -1)
    if len(X) == 0:
        raise ValueError("empty training set")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("training data contain non-finite values")
    arch = arch or Architecture(X.shape[1], Y.shape[1])
    if (arch.n_in, arch.n_out) != (X.shape[1], Y.shape[1]):
        raise ParameterError("architecture does not match data widths")
    rng = np.random.default_rng(cfg.seed)
    if X_val is None and cfg.val_fraction > 0 and len(X) >= 10:
        idx = rng.permutation(len(X))
        n_val = max(1, int(round(cfg.val_fraction * len(X))))
        X_val, Y_val, X, Y = X[idx[:n_val]], Y[idx[:n_val]], X[idx[n_val:]], Y[idx[n_val:]]
    elif X_val is not None:
        X_val = np.atleast_2d(np.asarray(X_val, dtype=float))
        Y_val = np.asarray(y_val, dtype=float).reshape(len(X_val), -1)
    xs, ys = Standardizer.fit(X), Standardizer.fit(Y)
    Xs, Ys = xs.apply(X), ys.apply(Y)
    Xvs = Yvs = None
    if X_val is not None:
        Xvs, Yvs = xs.apply(X_val), ys.apply(Y_val)

    params = init_params(arch, rng)
    m = [np.zeros_like(a) for a in params.W + params.b]
    v = [np.zeros_like(a) for a in params.W + params.b]
    step = 0
    best, best_loss, best_epoch = params.copy(), math.inf, -1
    train_curve, val_curve = [], []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(Xs))
        for start in range(0, len(order), cfg.batch_size):
            bi = order[start:start + cfg.batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, g = loss_and_grad(params, Xs[bi], Ys[bi])
            except ParameterError:
                loss = math.nan
            if not math.isfinite(loss):
                raise TrainingDivergence(f"loss became {loss} at epoch {epoch}, step {step}")
            step += 1
            c1 = 1.0 - cfg.beta1 ** step
            c2 = 1.0 - cfg.beta2 ** step
            for i, (p_arr, g_arr) in enumerate(zip(params.W + params.b, g.W + g.b)):
                m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g_arr
                v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g_arr * g_arr
                p_arr -= cfg.learning_rate * (m[i] / c1) / (np.sqrt(v[i] / c2) + cfg.adam_eps)
        with np.errstate(over="ignore", invalid="ignore"):
            full = float(np.mean((forward(params, Xs) - Ys) ** 2))
        if not math.isfinite(full):
            raise TrainingDivergence(f"training loss became {full} after epoch {epoch}")
        train_curve.append(full)
        score = full
        if Xvs is not None:
            score = float(np.mean((forward(params, Xvs) - Yvs) ** 2))
            val_curve.append(score)
        if score < best_loss:
            best, best_loss, best_epoch = params.copy(), score, epoch
    meta = {"train_config": asdict(cfg), "n_train": int(len(X)),
            "n_val": 0 if X_val is None else int(len(X_val)), "best_score": best_loss}
    return TrainedModel(best, xs, ys, train_curve, val_curve, best_epoch, meta)


def policy_features(X, kind: str = "sincos") -> np.ndarray:
    """Network inputs from rows ``(theta, phi, psi, u_prev)``.

    ``sincos`` replaces psi by its sine and cosine. The dynamics are
    2 pi-periodic in psi while closed-loop headings wind far past +-pi, so
    raw psi asks the network to extrapolate.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if kind == "raw":
        return X
    if kind == "sincos":
        return np.column_stack([X[:, 0], X[:, 1], np.sin(X[:, 2]), np.cos(X[:, 2]), X[:, 3]])
    raise ValueError(f"unknown feature map {kind!r}")


def fit_policy(X, y, arch: Architecture | None = None, cfg: TrainConfig = TrainConfig(),
               X_val=None, y_val=None) -> TrainedModel:
    """Train on dataset rows ``(theta, phi, psi, u_prev) -> u`` with ``cfg.features``."""
    width = FEATURES[cfg.features]
    arch = dataclasses.replace(arch or Architecture(), n_in=width, n_out=1)
    Xv = None if X_val is None else policy_features(X_val, cfg.features)
    model = train(policy_features(X, cfg.features), y, arch, cfg, Xv, y_val)
    model.features = cfg.features
    return model


def fit_median(X, y, arch: Architecture | None = None, cfg: TrainConfig = TrainConfig(),
               seeds=range(5)) -> TrainedModel:
    """Fit once per seed and keep the network with the median MSE on the full data.

    Every seed is scored on the same rows, so the ranking does not depend on
    which rows each seed held out. Even counts take the lower median.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    F = policy_features(X, cfg.features)
    fits = []
    for s in seeds:
        model = fit_policy(X, y, arch, dataclasses.replace(cfg, seed=s))
        fits.append((model.mse(F, y), s, model))
    fits.sort(key=lambda t: (t[0], t[1]))
    mse, seed, model = fits[(len(fits) - 1) // 2]
    model.meta.update({"selected_seed": seed, "seed_mse": {str(s): m for m, s, _ in sorted(fits, key=lambda t: t[1])}})
    return model


class DnnController:
    """Network feedback law, output clipped to the actuator bounds."""

    def __init__(self, model: TrainedModel, u_min: float = -10.0, u_max: float = 10.0):
        self.model = model
        self.u_min, self.u_max = u_min, u_max
        self.last_ok = True

    def reset(self) -> None:
        pass

    def __call__(self, x_hat, u_prev: float) -> float:
        return kappa_dnn(self.model, x_hat, u_prev, self.u_min, self.u_max)


def kappa_dnn(model: TrainedModel, x_hat, u_prev: float, u_min: float = -10.0, u_max: float = 10.0) -> float:
    x = policy_features([x_hat[0], x_hat[1], x_hat[2], u_prev], model.features)
    u = float(model.predict(x)[0, 0])
    if not math.isfinite(u):
        return float(np.clip(u_prev, u_min, u_max))
    return float(min(max(u, u_min), u_max))


def save_model(model: TrainedModel, path) -> None:
    """``.npz`` with tensors plus a JSON header (architecture, stats, metadata)."""
    header = {
        "format": FORMAT, "version": FORMAT_VERSION, "architecture": asdict(model.params.arch),
        "activation": "tanh", "features": model.features, "best_epoch": model.best_epoch, "train_curve": model.train_curve,
        "val_curve": model.val_curve, "meta": model.meta,
    }
    arrays = {f"W{i}": W for i, W in enumerate(model.params.W)}
    arrays.update({f"b{i}": b for i, b in enumerate(model.params.b)})
    arrays.update(x_mean=model.x_stats.mean, x_std=model.x_stats.std, y_mean=model.y_stats.mean,
                  y_std=model.y_stats.std)
    buf = io.BytesIO()
    np.savez(buf, header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_model(path) -> TrainedModel:
    with np.load(Path(path)) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("format") != FORMAT:
            raise ParameterError(f"{path} is not a {FORMAT} file")
        if header.get("version") != FORMAT_VERSION:
            raise ParameterError(f"unsupported parameter file version {header.get('version')}")
        n = header["architecture"]["L"] + 1
        params = MlpParams([z[f"W{i}"] for i in range(n)], [z[f"b{i}"] for i in range(n)])
        xs = Standardizer(z["x_mean"], z["x_std"])
        ys = Standardizer(z["y_mean"], z["y_std"])
    return TrainedModel(params, xs, ys, header["train_curve"], header["val_curve"], header["best_epoch"],
                        header["meta"], header.get("features", "raw"))
