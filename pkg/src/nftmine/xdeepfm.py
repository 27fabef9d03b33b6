"""xDeepFM click-through scorer built directly on numpy.

Architecture: a shared field-embedding table feeds three towers whose
outputs combine into one logit.

  X0      field embedding matrix, one row per field (m x D); absent
          fields are zero rows, present entries scale the feature's
          embedding by the entry value.
  CIN     layer k holds filters W[k] of shape (H_k, H_{k-1}, m) and maps
          X[k]_h = sum_i sum_j W[k][h,i,j] * (X[k-1]_i * X0_j), with the
          product elementwise over the embedding axis. Each layer is
          sum-pooled over the embedding axis into H_k scalars.
  DNN     relu stack over the flattened X0 (m*D inputs).
  linear  sum of per-feature weights times entry values, plus bias.

  logit = linear + output_weights . [cin pools ; dnn top activations]

Gradients are derived by hand and checked against central finite
differences; no autodiff. All math is float64.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ffm import FfmRow, rows_to_arrays
from .metrics import SingleClassError, auc as rank_auc, logloss as mean_logloss

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Forward clamps probabilities to the open interval (0, 1); the logit
# itself is never clamped, so training gradients stay exact.
PROB_FLOOR = 1e-15

RELU_KINK_MARGIN = 5e-3


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class ModelConfig:
    n_fields: int
    n_features: int
    embedding_dim: int = 8
    cin_layer_sizes: tuple[int, ...] = (16, 16)
    dnn_layer_sizes: tuple[int, ...] = (64, 32)
    activation: str = "relu"
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 256
    epochs: int = 10
    l2: float = 1e-6
    seed: int = 0

    def validate(self) -> None:
        if self.n_fields < 1 or self.n_features < 1 or self.embedding_dim < 1:
            raise ValueError("n_fields, n_features, embedding_dim must be >= 1")
        if any(h < 1 for h in self.cin_layer_sizes):
            raise ValueError("cin_layer_sizes entries must be >= 1")
        if any(h < 1 for h in self.dnn_layer_sizes):
            raise ValueError("dnn_layer_sizes entries must be >= 1")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation: {self.activation!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unsupported optimizer: {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.l2 < 0:
            raise ValueError("batch_size >= 1, epochs >= 0, l2 >= 0 required")

    def to_dict(self) -> dict:
        return {
            "n_fields": self.n_fields,
            "n_features": self.n_features,
            "embedding_dim": self.embedding_dim,
            "cin_layer_sizes": list(self.cin_layer_sizes),
            "dnn_layer_sizes": list(self.dnn_layer_sizes),
            "activation": self.activation,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "l2": self.l2,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(
            n_fields=int(obj["n_fields"]),
            n_features=int(obj["n_features"]),
            embedding_dim=int(obj.get("embedding_dim", 8)),
            cin_layer_sizes=tuple(obj.get("cin_layer_sizes", (16, 16))),
            dnn_layer_sizes=tuple(obj.get("dnn_layer_sizes", (64, 32))),
            activation=obj.get("activation", "relu"),
            learning_rate=float(obj.get("learning_rate", 1e-3)),
            optimizer=obj.get("optimizer", "adam"),
            batch_size=int(obj.get("batch_size", 256)),
            epochs=int(obj.get("epochs", 10)),
            l2=float(obj.get("l2", 1e-6)),
            seed=int(obj.get("seed", 0)),
        )


@dataclass
class ModelParams:
    """All trainable tensors. bias is stored as shape (1,) for uniformity."""

    n_fields: int
    embeddings: np.ndarray
    linear_weights: np.ndarray
    bias: np.ndarray
    cin_filters: list[np.ndarray] = field(default_factory=list)
    dnn_weights: list[np.ndarray] = field(default_factory=list)
    dnn_biases: list[np.ndarray] = field(default_factory=list)
    output_weights: np.ndarray = None

    @property
    def n_features(self) -> int:
        return self.embeddings.shape[0] - 1

    @property
    def embedding_dim(self) -> int:
        return self.embeddings.shape[1]

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        """Named tensors in the fixed directory order used everywhere."""
        out = [
            ("embeddings", self.embeddings),
            ("linear_weights", self.linear_weights),
            ("bias", self.bias),
        ]
        for k, w in enumerate(self.cin_filters):
            out.append((f"cin_filter_{k}", w))
        for l, w in enumerate(self.dnn_weights):
            out.append((f"dnn_weight_{l}", w))
            out.append((f"dnn_bias_{l}", self.dnn_biases[l]))
        out.append(("output_weights", self.output_weights))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            n_fields=self.n_fields,
            embeddings=self.embeddings.copy(),
            linear_weights=self.linear_weights.copy(),
            bias=self.bias.copy(),
            cin_filters=[w.copy() for w in self.cin_filters],
            dnn_weights=[w.copy() for w in self.dnn_weights],
            dnn_biases=[b.copy() for b in self.dnn_biases],
            output_weights=self.output_weights.copy(),
        )

    def assert_finite(self) -> None:
        for name, t in self.tensors():
            if not np.all(np.isfinite(t)):
                raise ValueError(f"non-finite values in {name}")


@dataclass
class EpochStats:
    train_logloss: float
    val_logloss: float
    val_auc: float
    wall_time: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "epochs": [
                {
                    "train_logloss": e.train_logloss,
                    "val_logloss": e.val_logloss,
                    "val_auc": e.val_auc,
                    "wall_time": e.wall_time,
                }
                for e in self.epochs
            ],
        }


def init_params(cfg: ModelConfig) -> ModelParams:
    """Seeded uniform(-0.05, 0.05) weights; every bias starts at zero.

    Embedding row 0 (the OOV row) is initialized like any other row.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    m, D = cfg.n_fields, cfg.embedding_dim

    def u(*shape):
        return rng.uniform(-0.05, 0.05, shape)

    embeddings = u(cfg.n_features + 1, D)
    linear_weights = u(cfg.n_features + 1)
    cin_filters = []
    h_prev = m
    for h in cfg.cin_layer_sizes:
        cin_filters.append(u(h, h_prev, m))
        h_prev = h
    dnn_weights, dnn_biases = [], []
    width = m * D
    for h in cfg.dnn_layer_sizes:
        dnn_weights.append(u(width, h))
        dnn_biases.append(np.zeros(h))
        width = h
    n_out = sum(cfg.cin_layer_sizes) + (cfg.dnn_layer_sizes[-1] if cfg.dnn_layer_sizes else 0)
    return ModelParams(
        n_fields=m,
        embeddings=embeddings,
        linear_weights=linear_weights,
        bias=np.zeros(1),
        cin_filters=cin_filters,
        dnn_weights=dnn_weights,
        dnn_biases=dnn_biases,
        output_weights=u(n_out),
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return np.clip(out, PROB_FLOOR, 1.0 - PROB_FLOOR)


def bce_from_logits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-example cross-entropy, stable for any finite logit."""
    return np.maximum(logits, 0.0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))


def _forward_arrays(params: ModelParams, feat_ids, coefs):
    """Batch forward pass; returns (logits, cache for backward)."""
    B = feat_ids.shape[0]
    x0 = params.embeddings[feat_ids] * coefs[:, :, None]
    linear = (params.linear_weights[feat_ids] * coefs).sum(axis=1) + params.bias[0]

    xs = [x0]
    pools = []
    for W in params.cin_filters:
        z = np.einsum("bid,bjd->bijd", xs[-1], x0)
        xk = np.einsum("hij,bijd->bhd", W, z)
        xs.append(xk)
        pools.append(xk.sum(axis=2))

    acts = [x0.reshape(B, -1)]
    zs = []
    for Wl, bl in zip(params.dnn_weights, params.dnn_biases):
        z = acts[-1] @ Wl + bl
        zs.append(z)
        acts.append(np.maximum(z, 0.0))

    parts = list(pools)
    if params.dnn_weights:
        parts.append(acts[-1])
    stacked = np.concatenate(parts, axis=1) if parts else np.zeros((B, 0))
    logits = linear + stacked @ params.output_weights
    return logits, (x0, xs, pools, zs, acts, stacked)


def _touched_rows(feat_ids, mask) -> np.ndarray:
    return np.unique(feat_ids[mask > 0.0])


def _backward_arrays(
    params: ModelParams, feat_ids, coefs, mask, labels, logits, cache, l2: float
) -> dict[str, np.ndarray]:
    """Gradients of mean cross-entropy plus L2 over the batch.

    The penalty covers weight tensors only, and for the embedding and
    linear tables only rows touched by the batch, so untouched rows get
    exactly zero gradient.
    """
    x0, xs, pools, zs, acts, stacked = cache
    B, m = feat_ids.shape
    D = params.embedding_dim
    probs = _sigmoid(logits)
    dlogit = (probs - labels) / B

    grads: dict[str, np.ndarray] = {}
    grads["output_weights"] = stacked.T @ dlogit + l2 * params.output_weights
    dstacked = np.outer(dlogit, params.output_weights)

    offset = 0
    dpools = []
    for p in pools:
        h = p.shape[1]
        dpools.append(dstacked[:, offset : offset + h])
        offset += h

    grads["linear_weights"] = np.zeros_like(params.linear_weights)
    np.add.at(grads["linear_weights"], feat_ids, dlogit[:, None] * coefs)
    grads["bias"] = np.array([dlogit.sum()])

    dx0 = np.zeros_like(x0)
    if params.dnn_weights:
        da = dstacked[:, offset:]
        for l in reversed(range(len(params.dnn_weights))):
            dz = da * (zs[l] > 0.0)
            grads[f"dnn_weight_{l}"] = acts[l].T @ dz + l2 * params.dnn_weights[l]
            grads[f"dnn_bias_{l}"] = dz.sum(axis=0)
            da = dz @ params.dnn_weights[l].T
        dx0 += da.reshape(B, m, D)

    # Walk CIN layers backwards. Each layer's input gradient feeds the
    # previous layer; X0 accumulates the j-side term from every layer and,
    # through dxs[0], the i-side term of the first layer.
    dxs = [np.zeros_like(x) for x in xs]
    for k in reversed(range(len(params.cin_filters))):
        dxk = dxs[k + 1] + dpools[k][:, :, None]
        W = params.cin_filters[k]
        xprev = xs[k]
        grads[f"cin_filter_{k}"] = (
            np.einsum("bhd,bid,bjd->hij", dxk, xprev, x0) + l2 * W
        )
        dxs[k] += np.einsum("hij,bhd,bjd->bid", W, dxk, x0)
        dx0 += np.einsum("hij,bhd,bid->bjd", W, dxk, xprev)
    dx0 += dxs[0]

    grads["embeddings"] = np.zeros_like(params.embeddings)
    np.add.at(grads["embeddings"], feat_ids, dx0 * coefs[:, :, None])

    touched = _touched_rows(feat_ids, mask)
    grads["embeddings"][touched] += l2 * params.embeddings[touched]
    grads["linear_weights"][touched] += l2 * params.linear_weights[touched]
    return grads


def _row_arrays(params: ModelParams, rows: Sequence[FfmRow]):
    return rows_to_arrays(rows, params.n_fields, params.n_features)


def forward(params: ModelParams, row: FfmRow, return_trace: bool = False):
    """Probability for one row; optionally the intermediate activations."""
    feat_ids, values, mask, _ = _row_arrays(params, [row])
    logits, cache = _forward_arrays(params, feat_ids, values * mask)
    prob = float(_sigmoid(logits)[0])
    if not return_trace:
        return prob
    x0, xs, pools, zs, acts, stacked = cache
    trace = {
        "x0": x0[0],
        "cin_pools": [p[0] for p in pools],
        "dnn_activations": [a[0] for a in acts[1:]],
        "stacked": stacked[0],
        "logit": float(logits[0]),
    }
    return prob, trace


def backward(params: ModelParams, row: FfmRow, label: int, l2: float = 0.0):
    """Exact gradients of this example's loss for every parameter tensor."""
    feat_ids, values, mask, _ = _row_arrays(params, [row])
    coefs = values * mask
    labels = np.array([float(label)])
    logits, cache = _forward_arrays(params, feat_ids, coefs)
    return _backward_arrays(params, feat_ids, coefs, mask, labels, logits, cache, l2)


def example_loss(params: ModelParams, row: FfmRow, label: int, l2: float = 0.0) -> float:
    """Cross-entropy plus the same L2 penalty backward differentiates."""
    feat_ids, values, mask, _ = _row_arrays(params, [row])
    logits, _ = _forward_arrays(params, feat_ids, values * mask)
    loss = float(bce_from_logits(logits, np.array([float(label)]))[0])
    if l2 > 0.0:
        touched = _touched_rows(feat_ids, mask)
        penalty = (
            np.sum(params.embeddings[touched] ** 2)
            + np.sum(params.linear_weights[touched] ** 2)
            + sum(np.sum(w**2) for w in params.cin_filters)
            + sum(np.sum(w**2) for w in params.dnn_weights)
            + np.sum(params.output_weights**2)
        )
        loss += 0.5 * l2 * float(penalty)
    return loss


def predict_batch(params: ModelParams, rows: Sequence[FfmRow]) -> np.ndarray:
    """Probabilities for many rows, order preserved."""
    if not rows:
        return np.zeros(0)
    out = np.empty(len(rows))
    chunk = 4096
    for start in range(0, len(rows), chunk):
        part = rows[start : start + chunk]
        try:
            feat_ids, values, mask, _ = _row_arrays(params, part)
        except ValueError as exc:
            raise ValueError(f"batch offset {start}: {exc}") from None
        logits, _ = _forward_arrays(params, feat_ids, values * mask)
        out[start : start + len(part)] = _sigmoid(logits)
    return out


class _SgdState:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        for name, tensor in params.tensors():
            tensor -= self.lr * grads[name]


class _AdamState:
    def __init__(self, params: ModelParams, lr: float):
        self.lr = lr
        self.t = 0
        self.m = {name: np.zeros_like(t) for name, t in params.tensors()}
        self.v = {name: np.zeros_like(t) for name, t in params.tensors()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1**self.t
        bc2 = 1.0 - ADAM_BETA2**self.t
        for name, tensor in params.tensors():
            g = grads[name]
            self.m[name] = ADAM_BETA1 * self.m[name] + (1.0 - ADAM_BETA1) * g
            self.v[name] = ADAM_BETA2 * self.v[name] + (1.0 - ADAM_BETA2) * g * g
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            tensor -= self.lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


def make_optimizer(cfg: ModelConfig, params: ModelParams):
    if cfg.optimizer == "sgd":
        return _SgdState(cfg.learning_rate)
    return _AdamState(params, cfg.learning_rate)


def train(
    cfg: ModelConfig,
    train_rows: Sequence[FfmRow],
    val_rows: Sequence[FfmRow] = (),
) -> tuple[ModelParams, TrainReport]:
    """Minibatch training with per-epoch validation tracking.

    Returns the parameters from the epoch with the best validation
    logloss; with no validation rows the final epoch wins. Non-finite
    training loss aborts immediately.
    """
    cfg.validate()
    if not train_rows:
        raise ValueError("train requires a non-empty training set")
    params = init_params(cfg)
    feat_ids, values, mask, labels = rows_to_arrays(
        train_rows, cfg.n_fields, cfg.n_features
    )
    coefs = values * mask
    val = list(val_rows)
    if val:
        val_labels = np.array([r.label for r in val], dtype=np.float64)

    optimizer = make_optimizer(cfg, params)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    report = TrainReport()
    best_params = params.copy()
    best_val = np.inf
    n = len(train_rows)

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            logits, cache = _forward_arrays(params, feat_ids[idx], coefs[idx])
            loss_sum += float(bce_from_logits(logits, labels[idx]).sum())
            grads = _backward_arrays(
                params, feat_ids[idx], coefs[idx], mask[idx], labels[idx],
                logits, cache, cfg.l2,
            )
            optimizer.step(params, grads)
        train_logloss = loss_sum / n
        if not np.isfinite(train_logloss):
            raise TrainingDivergedError(
                f"training loss became non-finite at epoch {epoch} "
                f"(lr={cfg.learning_rate}, optimizer={cfg.optimizer})"
            )

        val_logloss = float("nan")
        val_auc = float("nan")
        if val:
            probs = predict_batch(params, val)
            val_logloss = mean_logloss(probs, val_labels)
            try:
                val_auc = rank_auc(probs, val_labels)
            except SingleClassError:
                pass
            if val_logloss < best_val:
                best_val = val_logloss
                best_params = params.copy()
                report.best_epoch = epoch
        report.epochs.append(
            EpochStats(
                train_logloss=train_logloss,
                val_logloss=val_logloss,
                val_auc=val_auc,
                wall_time=time.perf_counter() - t0,
            )
        )

    if not val or report.best_epoch is None:
        best_params = params
        report.best_epoch = cfg.epochs - 1 if cfg.epochs else None
    return best_params, report


def _shift_biases_off_kinks(params: ModelParams, feat_ids, coefs) -> None:
    """Nudge DNN biases so no pre-activation sits near the relu kink.

    Finite differences straddle x=0 badly; shifting each near-zero unit
    by a fixed offset (layer by layer, since later layers depend on
    earlier biases) keeps the loss locally smooth.
    """
    for l in range(len(params.dnn_weights)):
        _, cache = _forward_arrays(params, feat_ids, coefs)
        z = cache[3][l][0]
        near = np.abs(z) < RELU_KINK_MARGIN
        shift = np.where(z >= 0.0, 2.0 * RELU_KINK_MARGIN, -2.0 * RELU_KINK_MARGIN)
        params.dnn_biases[l][near] += shift[near]


def gradient_check(
    cfg: ModelConfig, n_trials: int = 20, seed: int = 0, fd_step: float = 1e-5
) -> dict:
    """Compare analytic gradients to central finite differences.

    Every trial draws fresh uniform(-0.5, 0.5) parameters and a random
    row, then perturbs every element of every tensor. Returns per-tensor
    and overall max relative error, with relative error defined as
    |a - n| / max(|a| + |n|, 1e-6).
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    per_tensor = {name: 0.0 for name, _ in init_params(cfg).tensors()}

    for _ in range(n_trials):
        params = init_params(cfg)
        for _, tensor in params.tensors():
            tensor[...] = rng.uniform(-0.5, 0.5, tensor.shape)
        entries = []
        for fid in range(cfg.n_fields):
            if rng.random() < 0.8:
                feat = int(rng.integers(0, cfg.n_features + 1))
                value = float(np.round(rng.uniform(-2.0, 2.0), 3))
                entries.append((fid, feat, value))
        row = FfmRow(label=int(rng.integers(0, 2)), entries=entries)

        feat_ids, values, mask, _ = _row_arrays(params, [row])
        _shift_biases_off_kinks(params, feat_ids, values * mask)

        analytic = backward(params, row, row.label, l2=cfg.l2)
        for name, tensor in params.tensors():
            flat = tensor.reshape(-1)
            a_flat = analytic[name].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + fd_step
                up = example_loss(params, row, row.label, l2=cfg.l2)
                flat[i] = orig - fd_step
                down = example_loss(params, row, row.label, l2=cfg.l2)
                flat[i] = orig
                numeric = (up - down) / (2.0 * fd_step)
                rel = abs(a_flat[i] - numeric) / max(abs(a_flat[i]) + abs(numeric), 1e-6)
                if rel > per_tensor[name]:
                    per_tensor[name] = rel

    return {
        "n_trials": n_trials,
        "per_tensor": per_tensor,
        "max_rel_err": max(per_tensor.values()),
    }
