"""Predicting downstream outcomes from latent skills.

A task score is modeled as ``sigmoid(w0 + w . skill)`` fitted by squared
error with a ridge penalty on ``w``.  Item mode fits one such model per
question and turns the per-question success probabilities into pass@k.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .design import feature_vector
from .errors import ConfigError, DataError, DimensionError
from .model import SlothParams, logit, sigmoid
from .optim import run_adam

DEFAULT_LAMBDA = 0.01


@dataclass(frozen=True)
class SkillRegression:
    weights: np.ndarray
    intercept: float
    lam: float
    degenerate: bool = False
    loss: float = 0.0

    def to_dict(self):
        return {"weights": np.asarray(self.weights).tolist(), "intercept": self.intercept,
                "lambda": self.lam, "degenerate": self.degenerate, "loss": self.loss}


@dataclass(frozen=True)
class TaskDataset:
    model_ids: tuple
    outcomes: np.ndarray
    mode: str
    questions: tuple = ()

    @property
    def encoding(self):
        """``"binary"`` when every outcome is 0 or 1, else ``"rates"``."""
        return "binary" if np.all((self.outcomes == 0) | (self.outcomes == 1)) else "rates"


def load_task_data(path, mode=None) -> TaskDataset:
    """``model,score`` (task mode) or ``model,q1,...,qQ`` (item mode) CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError("task file is empty", row=1)
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise DataError("need a model column and at least one outcome column", row=1)
    if mode is None:
        mode = "task" if len(header) == 2 and header[1].lower() == "score" else "item"
    if mode not in ("task", "item"):
        raise ConfigError(f"mode must be 'task' or 'item', got {mode!r}")
    if mode == "task" and len(header) != 2:
        raise DataError("task mode expects exactly two columns (model, score)", row=1)
    ids, values = [], []
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(row)}", row=r)
        ids.append(row[0].strip())
        vals = []
        for c, text in enumerate(row[1:], start=1):
            try:
                x = float(text)
            except ValueError:
                raise DataError(f"not a number: {text!r}", row=r, column=header[c]) from None
            if not 0.0 <= x <= 1.0:
                raise DataError(f"outcome {x} outside [0, 1]", row=r, column=header[c])
            vals.append(x)
        values.append(vals)
    if len(set(ids)) != len(ids):
        raise DataError("duplicate model ids in task file")
    Y = np.array(values, dtype=float)
    if mode == "task":
        return TaskDataset(tuple(ids), Y[:, 0], "task")
    return TaskDataset(tuple(ids), Y, "item", tuple(header[1:]))


# ------------------------------------------------------------- regression


def _penalized_loss(theta, grad, S, Y, lam, q, d):
    """Summed over questions; ``theta`` holds one (d + 1)-vector per question."""
    P = theta.reshape(q, d + 1)
    z = S @ P[:, 1:].T + P[:, 0]
    mu = sigmoid(z)
    r = mu - Y
    loss = float(np.sum(r * r) + lam * np.sum(P[:, 1:] ** 2))
    dz = 2.0 * r * mu * (1.0 - mu)
    G = grad.reshape(q, d + 1)
    G[:, 0] = dz.sum(axis=0)
    G[:, 1:] = dz.T @ S + 2.0 * lam * P[:, 1:]
    return loss


def _fit_batch(S, Y, lam, max_steps, lr, decay, tol):
    n, q = Y.shape
    d = S.shape[1]
    theta = np.zeros(q * (d + 1))
    theta.reshape(q, d + 1)[:, 0] = logit(np.clip(Y.mean(axis=0), 1e-3, 1 - 1e-3))
    res = run_adam(lambda t, g: _penalized_loss(t, g, S, Y, lam, q, d), theta, max_steps=max_steps,
                   lr0=lr, decay=decay, tol=tol)
    return res.theta.reshape(q, d + 1)


def _check_inputs(skills, outcomes, lam):
    S = np.asarray(skills, dtype=float)
    Y = np.asarray(outcomes, dtype=float)
    if S.ndim != 2:
        raise DimensionError("skills must be a (models x d) array")
    if Y.shape[0] != S.shape[0]:
        raise DimensionError(f"{S.shape[0]} skill rows but {Y.shape[0]} outcomes")
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(Y))):
        raise DataError("skills and outcomes must be finite")
    if np.any((Y < 0) | (Y > 1)):
        raise DataError("outcomes must lie in [0, 1]")
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    return S, Y


def fit_item_models(skills, outcomes, lam=DEFAULT_LAMBDA, max_steps=20000, lr=0.05, decay=0.999, tol=1e-12):
    """One regression per column of ``outcomes`` (models x questions).

    The questions share nothing, so they are optimized as one batch (Adam
    is coordinate-wise); questions with constant outcomes get ``w = 0``,
    ``w0 = logit(mean)`` and the degenerate flag.
    """
    S, Y = _check_inputs(skills, outcomes, lam)
    if Y.ndim != 2:
        raise DimensionError("item outcomes must be a (models x questions) array")
    n, q = Y.shape
    if n < 2:
        raise DimensionError("need at least 2 training models")
    d = S.shape[1]
    if n < d + 2:
        warnings.warn(f"{n} training models for {d} skills; regression is weakly determined", stacklevel=2)
    constant = np.ptp(Y, axis=0) == 0
    out = [None] * q
    live = np.flatnonzero(~constant)
    if live.size:
        P = _fit_batch(S, Y[:, live], lam, max_steps, lr, decay, tol)
        for col, p in zip(live, P):
            mu = sigmoid(S @ p[1:] + p[0])
            loss = float(np.sum((mu - Y[:, col]) ** 2) + lam * np.sum(p[1:] ** 2))
            out[col] = SkillRegression(p[1:].copy(), float(p[0]), lam, False, loss)
    for col in np.flatnonzero(constant):
        out[col] = SkillRegression(np.zeros(d), float(logit(Y[0, col])), lam, True, 0.0)
    return out


def fit_task_regression(skills, outcomes, lam=DEFAULT_LAMBDA, **kwargs) -> SkillRegression:
    """Minimize ``sum (sigmoid(w0 + w . skill) - y)^2 + lam * |w|^2``."""
    Y = np.asarray(outcomes, dtype=float)
    if Y.ndim != 1:
        raise DimensionError("task outcomes must be one value per model")
    S = np.asarray(skills, dtype=float)
    if S.ndim == 2 and len(Y) < S.shape[1] + 2:
        warnings.warn(f"{len(Y)} training models for {S.shape[1]} skills; regression is weakly determined",
                      stacklevel=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if len(Y) < 2:
            _check_inputs(S, Y[:, None], lam)
            d = S.shape[1]
            return SkillRegression(np.zeros(d), float(logit(Y[0])), lam, True, 0.0)
        return fit_item_models(S, Y[:, None], lam, **kwargs)[0]


def predict_task(reg: SkillRegression, skill):
    """``sigmoid(w0 + w . skill)`` for one skill vector or a stack of them."""
    x = np.asarray(skill, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DataError("skill values must be finite")
    z = x @ np.asarray(reg.weights) + reg.intercept
    return float(sigmoid(z)) if np.ndim(z) == 0 else sigmoid(z)


def predict_items(regs, skill):
    """Per-question success probabilities for one skill vector."""
    return np.array([predict_task(r, skill) for r in regs])


# ----------------------------------------------------------------- pass@k


def predict_pass_at_k(p_hat, k_values):
    """Mean over questions of ``1 - (1 - p)^k`` for each ``k``."""
    p = np.asarray(p_hat, dtype=float).ravel()
    if p.size == 0:
        raise DimensionError("pass@k needs at least one question")
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise DataError("success probabilities must lie in [0, 1]")
    out = []
    for k in k_values:
        if int(k) != k or k < 1:
            raise ConfigError(f"k must be a positive integer, got {k}")
        if k == 1:
            out.append(float(np.mean(p)))
            continue
        with np.errstate(divide="ignore"):
            miss = np.log1p(-p)
        out.append(float(np.mean(-np.expm1(k * miss))))
    return np.array(out)


# ------------------------------------------------------ hypothetical models


def hypothetical_skills(params: SlothParams, family: str, size_s: float, tokens_t: float):
    """Skills of a model of ``family`` trained with ``size_s`` parameters on
    ``tokens_t`` tokens."""
    if params.variant == "size-and-tokens":
        raise DimensionError("size-and-tokens parameters have no latent skills")
    x = feature_vector(size_s, tokens_t).as_array()
    return x @ params.slopes + params.intercept(family)


__all__ = ["SkillRegression", "TaskDataset", "load_task_data", "fit_task_regression", "fit_item_models",
           "predict_task", "predict_items", "predict_pass_at_k", "hypothetical_skills", "DEFAULT_LAMBDA"]
