"""Classical baselines over the encoded datasets.

Logistic regression shares the sparse value-weighted feature view the
scorer's linear term uses. Gaussian naive Bayes works on the dense
projection of the same rows, with absent features contributing zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ffm import FfmRow, rows_to_arrays
from .xdeepfm import TrainingDivergedError, bce_from_logits, _sigmoid

VARIANCE_FLOOR = 1e-9


class SingleClassDataError(ValueError):
    """Training data contains only one label value."""


@dataclass(frozen=True)
class LrConfig:
    n_fields: int
    n_features: int
    learning_rate: float = 0.03
    epochs: int = 50
    batch_size: int = 256
    l2: float = 1e-6
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "n_fields": self.n_fields,
            "n_features": self.n_features,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "l2": self.l2,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "LrConfig":
        return cls(
            n_fields=int(obj["n_fields"]),
            n_features=int(obj["n_features"]),
            learning_rate=float(obj.get("learning_rate", 0.03)),
            epochs=int(obj.get("epochs", 50)),
            batch_size=int(obj.get("batch_size", 256)),
            l2=float(obj.get("l2", 1e-6)),
            seed=int(obj.get("seed", 0)),
        )


@dataclass
class LrModel:
    weights: np.ndarray
    bias: np.ndarray
    config: LrConfig

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return [("weights", self.weights), ("bias", self.bias)]


def lr_train(rows: Sequence[FfmRow], cfg: LrConfig) -> LrModel:
    """Seeded minibatch gradient descent on logloss + L2."""
    if not rows:
        raise ValueError("lr_train requires a non-empty training set")
    feat_ids, values, mask, labels = rows_to_arrays(rows, cfg.n_fields, cfg.n_features)
    coefs = values * mask
    weights = np.zeros(cfg.n_features + 1)
    bias = np.zeros(1)
    rng = np.random.default_rng([cfg.seed, 1])
    n = len(rows)

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            logits = (weights[feat_ids[idx]] * coefs[idx]).sum(axis=1) + bias[0]
            loss_sum += float(bce_from_logits(logits, labels[idx]).sum())
            dlogit = (_sigmoid(logits) - labels[idx]) / len(idx)
            grad_w = cfg.l2 * weights
            np.add.at(grad_w, feat_ids[idx], dlogit[:, None] * coefs[idx])
            weights -= cfg.learning_rate * grad_w
            bias -= cfg.learning_rate * dlogit.sum()
        if not np.isfinite(loss_sum / n):
            raise TrainingDivergedError(
                f"logistic regression loss became non-finite at epoch {epoch}"
            )
    return LrModel(weights=weights, bias=bias, config=cfg)


def _check_entries(row: FfmRow, n_features: int) -> None:
    for fid, feat, _ in row.entries:
        if not 0 <= feat <= n_features:
            raise ValueError(f"feature id {feat} outside [0, {n_features}]")


def lr_predict(model: LrModel, row: FfmRow) -> float:
    _check_entries(row, model.config.n_features)
    logit = model.bias[0] + sum(v * model.weights[feat] for _, feat, v in row.entries)
    return float(_sigmoid(np.array([logit]))[0])


def lr_predict_batch(model: LrModel, rows: Sequence[FfmRow]) -> np.ndarray:
    cfg = model.config
    if not rows:
        return np.zeros(0)
    feat_ids, values, mask, _ = rows_to_arrays(rows, cfg.n_fields, cfg.n_features)
    logits = (model.weights[feat_ids] * values * mask).sum(axis=1) + model.bias[0]
    return _sigmoid(logits)


@dataclass
class NbModel:
    """Per-class Gaussians over the dense feature projection."""

    class_priors: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    @property
    def n_features(self) -> int:
        return self.means.shape[1] - 1

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("class_priors", self.class_priors),
            ("means", self.means),
            ("variances", self.variances),
        ]


def _dense_rows(rows: Sequence[FfmRow], n_features: int) -> np.ndarray:
    X = np.zeros((len(rows), n_features + 1))
    for b, row in enumerate(rows):
        _check_entries(row, n_features)
        for _, feat, value in row.entries:
            X[b, feat] += value
    return X


def nb_train(rows: Sequence[FfmRow], n_features: int) -> NbModel:
    """Fit per-class feature means and floored variances plus priors."""
    if not rows:
        raise ValueError("nb_train requires a non-empty training set")
    labels = np.array([r.label for r in rows])
    if labels.min() == labels.max():
        raise SingleClassDataError("training data contains a single class")

    F = n_features + 1
    counts = np.zeros(2)
    sums = np.zeros((2, F))
    sq_sums = np.zeros((2, F))
    chunk = 4096
    for start in range(0, len(rows), chunk):
        part = rows[start : start + chunk]
        X = _dense_rows(part, n_features)
        y = labels[start : start + chunk]
        for c in (0, 1):
            sel = X[y == c]
            counts[c] += len(sel)
            sums[c] += sel.sum(axis=0)
            sq_sums[c] += (sel**2).sum(axis=0)

    means = sums / counts[:, None]
    variances = np.maximum(sq_sums / counts[:, None] - means**2, VARIANCE_FLOOR)
    return NbModel(
        class_priors=counts / counts.sum(), means=means, variances=variances
    )


def nb_predict_batch(model: NbModel, rows: Sequence[FfmRow]) -> np.ndarray:
    """Posterior P(label=1 | x) via log-sum-exp over the two classes."""
    if not rows:
        return np.zeros(0)
    out = np.empty(len(rows))
    chunk = 4096
    log_priors = np.log(model.class_priors)
    for start in range(0, len(rows), chunk):
        part = rows[start : start + chunk]
        X = _dense_rows(part, model.n_features)
        log_post = np.empty((len(part), 2))
        for c in (0, 1):
            mu, var = model.means[c], model.variances[c]
            ll = -0.5 * (np.log(2.0 * np.pi * var) + (X - mu) ** 2 / var)
            log_post[:, c] = log_priors[c] + ll.sum(axis=1)
        shifted = log_post - log_post.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        out[start : start + len(part)] = probs[:, 1] / probs.sum(axis=1)
    return out


def nb_predict(model: NbModel, row: FfmRow) -> float:
    return float(nb_predict_batch(model, [row])[0])
