"""Compute features and design matrices.

The skill design has three compute columns ``log s, log t, log s * log t``
followed by one 0/1 intercept column per family.  Fitting works on a
standardized copy of the compute columns; :class:`Layout` keeps the linear
map that converts standardized coefficients back to raw-feature form.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError, RankDeficientWarning

TRANSLOG = ("log_s", "log_t", "log_s_x_log_t")
LOG_FLOPS = ("log_flops",)


@dataclass(frozen=True)
class FeatureVector:
    log_s: float
    log_t: float
    interaction: float

    def as_array(self):
        return np.array([self.log_s, self.log_t, self.interaction])


def feature_vector(size_s, tokens_t) -> FeatureVector:
    if not (size_s > 0 and tokens_t > 0):
        raise DomainError(f"size and tokens must be positive, got ({size_s}, {tokens_t})")
    ls = math.log(size_s)
    lt = math.log(tokens_t)
    return FeatureVector(ls, lt, ls * lt)


def flops(size_s, tokens_t):
    """Training compute approximation ``6 s t``."""
    if not (size_s > 0 and tokens_t > 0):
        raise DomainError(f"size and tokens must be positive, got ({size_s}, {tokens_t})")
    return 6.0 * size_s * tokens_t


def compute_features(records, kind="translog"):
    """Raw compute features, one row per record."""
    s = np.array([r.size_s for r in records], dtype=float)
    t = np.array([r.tokens_t for r in records], dtype=float)
    if np.any(s <= 0) or np.any(t <= 0):
        raise DomainError("size and tokens must be positive")
    if kind == "translog":
        ls, lt = np.log(s), np.log(t)
        return np.column_stack([ls, lt, ls * lt])
    if kind == "log_flops":
        return np.log(6.0 * s * t)[:, None]
    raise ValueError(f"unknown feature kind {kind!r}")


def numerical_rank(matrix, rtol=1e-9):
    sv = np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


@dataclass(frozen=True)
class DesignMatrix:
    matrix: np.ndarray
    column_roles: tuple
    families: tuple
    model_ids: tuple

    @property
    def family_index(self):
        return {f: 3 + k for k, f in enumerate(self.families)}

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def rank(self):
        return numerical_rank(self.matrix)

    def row_families(self):
        """Index into ``families`` for each row (argmax of the indicator block)."""
        return np.argmax(self.matrix[:, 3:], axis=1)


def family_indices(records, families):
    index = {f: k for k, f in enumerate(families)}
    try:
        return np.array([index[r.family_id] for r in records], dtype=np.intp)
    except KeyError as exc:
        raise DataError(f"family {exc.args[0]!r} not among known families") from None


def build_design(table, families=None, warn_rank=True) -> DesignMatrix:
    records = list(table.records if hasattr(table, "records") else table)
    if not records:
        raise DataError("cannot build a design from an empty table")
    if families is None:
        families = tuple(dict.fromkeys(r.family_id for r in records))
    families = tuple(families)
    fam = family_indices(records, families)
    X = np.zeros((len(records), 3 + len(families)))
    X[:, :3] = compute_features(records, "translog")
    X[np.arange(len(records)), 3 + fam] = 1.0
    roles = TRANSLOG + tuple(f"intercept:{f}" for f in families)
    design = DesignMatrix(X, roles, families, tuple(r.model_id for r in records))
    if warn_rank:
        rank = numerical_rank(X)
        if rank < X.shape[1]:
            warnings.warn(RankDeficientWarning(
                f"design matrix has numerical rank {rank} < {X.shape[1]} columns"), stacklevel=2)
    return design


# ------------------------------------------------------- fitting layouts


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, features):
        mean = features.mean(axis=0)
        scale = features.std(axis=0)
        scale = np.where(scale > 1e-12, scale, 1.0)
        return cls(mean, scale)

    @classmethod
    def identity(cls, q):
        return cls(np.zeros(q), np.ones(q))

    def apply(self, features):
        return (features - self.mean) / self.scale

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["mean"], float), np.asarray(data["scale"], float))


@dataclass(frozen=True)
class Layout:
    """Column structure of a fitting design.

    ``intercepts`` is ``"family"`` (one column per family) or ``"shared"``
    (a single constant column).  With ``family_slopes`` every compute
    feature gets one column per family instead of a shared column.
    """

    features: str = "translog"
    intercepts: str = "family"
    family_slopes: bool = False

    @property
    def q(self):
        return 3 if self.features == "translog" else 1

    def n_slope_cols(self, m):
        return self.q * m if self.family_slopes else self.q

    def n_cols(self, m):
        return self.n_slope_cols(m) + (m if self.intercepts == "family" else 1)

    def matrix(self, feats, fam, m):
        """Design from (already transformed) features ``feats`` and family indices."""
        n = feats.shape[0]
        rows = np.arange(n)
        if self.family_slopes:
            slopes = np.zeros((n, self.q * m))
            for c in range(self.q):
                slopes[rows, c * m + fam] = feats[:, c]
        else:
            slopes = feats
        if self.intercepts == "family":
            icpt = np.zeros((n, m))
            icpt[rows, fam] = 1.0
        else:
            icpt = np.ones((n, 1))
        return np.hstack([slopes, icpt])

    def raw_from_std(self, std: Standardizer, m):
        """Matrix T with ``X_std = X_raw @ T``, hence ``B_raw = T @ B_std``."""
        q = self.q
        ns = self.n_slope_cols(m)
        ni = m if self.intercepts == "family" else 1
        T = np.eye(ns + ni)
        inv = 1.0 / std.scale
        shift = std.mean * inv
        if self.family_slopes:
            for c in range(q):
                for f in range(m):
                    T[c * m + f, c * m + f] = inv[c]
                    T[ns + f, c * m + f] = -shift[c]
        else:
            for c in range(q):
                T[c, c] = inv[c]
                T[ns:, c] = -shift[c]
        return T
