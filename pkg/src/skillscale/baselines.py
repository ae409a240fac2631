"""Comparison estimators driven by training compute alone.

FLOPs models give each benchmark a sigmoid of ``alpha + beta * log(6 s t)``
above its asymptote; ``sharing`` decides whether ``alpha`` and ``beta`` are
common to all families.  They are fit through the same objective and
optimizer as the skill model, with identity loadings, so losses are
comparable.  PCA + FLOPs regresses the leading principal components of the
score matrix on log-FLOPs and maps back.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .dataset import AsymptoteConfig, ScoreTable
from .design import Layout, Standardizer, compute_features, family_indices
from .errors import ConfigError, DimensionError
from .fit import FitConfig, FitReport, Objective, _gamma_setup, fit_objective, huber
from .model import sigmoid

FLOPS_SHARINGS = ("shared-all", "family-intercept", "family-both")
PCA_SHARINGS = ("family-intercept", "family-both")
BASELINE_FORMAT = "skillscale/baseline"
RIDGE = 1e-10


def _layout(sharing):
    if sharing == "shared-all":
        return Layout("log_flops", "shared")
    if sharing == "family-intercept":
        return Layout("log_flops", "family")
    if sharing == "family-both":
        return Layout("log_flops", "family", family_slopes=True)
    raise ConfigError(f"unknown sharing {sharing!r}; expected one of {FLOPS_SHARINGS}")


def _check_family_sizes(table, sharing, minimum=2):
    if sharing != "family-both":
        return
    small = [f for f in table.families if len(table.family_records(f)) < minimum]
    if small:
        raise DimensionError(f"family-dependent slopes need >= {minimum} models per family; "
                             f"too few in {small}")


def _row_groups(records, families, sharing):
    """Indices into the intercept and slope rows for every record."""
    if sharing == "shared-all":
        z = np.zeros(len(records), dtype=int)
        return z, z
    index = {f: i for i, f in enumerate(families)}
    unknown = sorted({r.family_id for r in records if r.family_id not in index})
    if unknown:
        raise DimensionError(f"families {unknown} were not seen when the baseline was fit")
    fam = np.array([index[r.family_id] for r in records], dtype=int)
    return fam, (fam if sharing == "family-both" else np.zeros(len(records), dtype=int))


@dataclass(frozen=True)
class FlopsParams:
    """``alpha`` is (groups x J) and ``beta`` is (slope groups x J); with
    shared parameters the group dimension is 1."""

    sharing: str
    alpha: np.ndarray
    beta: np.ndarray
    gammas: np.ndarray
    benchmarks: tuple
    families: tuple

    def __post_init__(self):
        J = len(self.benchmarks)
        m = len(self.families)
        groups = 1 if self.sharing == "shared-all" else m
        slope_groups = m if self.sharing == "family-both" else 1
        alpha = np.array(self.alpha, dtype=float).reshape(groups, J)
        beta = np.array(self.beta, dtype=float).reshape(slope_groups, J)
        gam = np.array(self.gammas, dtype=float).reshape(J)
        if np.any(gam < 0) or np.any(gam >= 1):
            raise ValueError("asymptotes must lie in [0, 1)")
        for name, arr in (("alpha", alpha), ("beta", beta), ("gammas", gam)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def to_dict(self):
        return {"format": BASELINE_FORMAT, "baseline": "flops", "sharing": self.sharing,
                "benchmarks": list(self.benchmarks), "families": list(self.families),
                "alpha": self.alpha.tolist(), "beta": self.beta.tolist(),
                "gammas": self.gammas.tolist()}


@dataclass(frozen=True)
class PcaFlopsParams:
    """Principal directions ``U`` (columns, descending eigenvalue), score
    means used for centering, and per-component regressions on
    standardized log-FLOPs."""

    sharing: str
    U: np.ndarray
    eigenvalues: np.ndarray
    d: int
    mean: np.ndarray
    coef: np.ndarray
    standardizer: Standardizer
    benchmarks: tuple
    families: tuple
    dropped_rows: tuple = field(default=())

    def to_dict(self):
        return {"format": BASELINE_FORMAT, "baseline": "pca-flops", "sharing": self.sharing,
                "d": self.d, "benchmarks": list(self.benchmarks), "families": list(self.families),
                "U": self.U.tolist(), "eigenvalues": self.eigenvalues.tolist(),
                "mean": self.mean.tolist(), "coef": self.coef.tolist(),
                "standardization": self.standardizer.to_dict(),
                "dropped_rows": list(self.dropped_rows)}


# ------------------------------------------------------------------ FLOPs


def _flops_objective(table, sharing, asymptotes, weights, config):
    layout = _layout(sharing)
    records = table.records
    families = tuple(table.families)
    feats = compute_features(records, "log_flops")
    std = Standardizer.fit(feats)
    X = layout.matrix(std.apply(feats), family_indices(records, families), len(families))
    Y = table.score_matrix()
    W = np.isfinite(Y).astype(float)
    if weights is not None:
        W = W * np.asarray(weights, dtype=float)
    J = len(table.benchmarks)
    gam, train = _gamma_setup(table.benchmarks, asymptotes, config.gamma_mode)
    obj = Objective(X, Y, W, J, gam, train, identity_loadings=True, link="sigmoid",
                    delta=config.delta, backend=config.backend)
    return obj, layout, std, families


def fit_flops(table: ScoreTable, sharing: str, asymptotes: AsymptoteConfig, config: FitConfig | None = None,
              weights=None):
    """Fit a FLOPs baseline; returns ``(FlopsParams, FitReport)``."""
    config = replace(config or FitConfig(), variant="basic", link=None, check_gradients=False)
    _layout(sharing)
    _check_family_sizes(table, sharing)
    obj, layout, std, families = _flops_objective(table, sharing, asymptotes, weights, config)
    theta, _, losses, steps, diags, trace, best = fit_objective(obj, config)
    v = obj.views(theta)
    coef = layout.raw_from_std(std, len(families)) @ v["B"]
    ns = layout.n_slope_cols(len(families))
    alpha = coef[ns:] + v["b"]
    beta = coef[:ns]
    params = FlopsParams(sharing, alpha, beta, obj.gammas(v), tuple(table.benchmarks), families)
    report = FitReport(final_loss=obj.loss(theta), restart_losses=losses, chosen_restart=best,
                       steps=steps, grad_check_max_rel_error=None, standardization=std.to_dict(),
                       config={"sharing": sharing, "restarts": config.restarts, "seed": config.seed,
                               "max_steps": config.max_steps, "delta": config.delta},
                       backend=kernels.BACKEND if config.backend is None else config.backend, diagnostics=diags, trace=[list(t) for t in trace])
    return params, report


def flops_eta(params: FlopsParams, records):
    records = list(records)
    a_idx, b_idx = _row_groups(records, params.families, params.sharing)
    logc = compute_features(records, "log_flops")[:, 0]
    return params.alpha[a_idx] + params.beta[b_idx] * logc[:, None]


def flops_loss(params: FlopsParams, table: ScoreTable, delta=0.01, weights=None):
    """Summed Huber loss of a FLOPs baseline over the table's present cells."""
    mu = predict_baseline(params, table.records)
    Y = table.score_matrix(params.benchmarks)
    W = np.isfinite(Y).astype(float)
    if weights is not None:
        W = W * np.asarray(weights, dtype=float)
    return float(np.sum(W * huber(np.where(W > 0, mu - np.nan_to_num(Y), 0.0), delta)))


# -------------------------------------------------------------- PCA + FLOPs


def pca(Y):
    """Eigendecomposition of the 1/n covariance of complete rows ``Y``.

    Returns ``(mean, eigenvalues, U)`` with eigenvalues descending and each
    column of ``U`` signed so its largest-magnitude entry is positive.
    """
    Y = np.asarray(Y, dtype=float)
    mean = Y.mean(axis=0)
    C = Y - mean
    vals, vecs = np.linalg.eigh(C.T @ C / len(Y))
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    for k in range(vecs.shape[1]):
        if vecs[np.argmax(np.abs(vecs[:, k])), k] < 0:
            vecs[:, k] = -vecs[:, k]
    return mean, np.maximum(vals, 0.0), vecs


def _pca_design(records, families, sharing, std):
    layout = Layout("log_flops", "family", family_slopes=sharing == "family-both")
    index = {f: i for i, f in enumerate(families)}
    unknown = sorted({r.family_id for r in records if r.family_id not in index})
    if unknown:
        raise DimensionError(f"families {unknown} were not seen when the baseline was fit")
    fam = np.array([index[r.family_id] for r in records], dtype=int)
    feats = std.apply(compute_features(records, "log_flops"))
    return layout.matrix(feats, fam, len(families))


def fit_pca_flops(table: ScoreTable, d: int, sharing: str = "family-intercept"):
    if sharing not in PCA_SHARINGS:
        raise ConfigError(f"unknown sharing {sharing!r}; expected one of {PCA_SHARINGS}")
    J = len(table.benchmarks)
    if not 1 <= d <= J:
        raise DimensionError(f"d={d} must lie in [1, {J}]")
    Y = table.score_matrix()
    keep = np.all(np.isfinite(Y), axis=1)
    records = [r for r, k in zip(table.records, keep) if k]
    dropped = tuple(r.model_id for r, k in zip(table.records, keep) if not k)
    if not records:
        raise DimensionError("no model has scores on every benchmark")
    families = tuple(dict.fromkeys(r.family_id for r in records))
    mean, vals, U = pca(Y[keep])
    std = Standardizer.fit(compute_features(records, "log_flops"))
    X = _pca_design(records, families, sharing, std)
    if X.shape[0] < X.shape[1]:
        raise DimensionError(f"{X.shape[0]} complete rows cannot determine {X.shape[1]} regression "
                             "coefficients per component")
    PC = (Y[keep] - mean) @ U[:, :d]
    coef = np.linalg.solve(X.T @ X + RIDGE * np.eye(X.shape[1]), X.T @ PC)
    return PcaFlopsParams(sharing, U, vals, d, mean, coef, std, tuple(table.benchmarks), families, dropped)


def pca_reconstruct(params: PcaFlopsParams, Y):
    """Project scores onto the retained components and map back."""
    U = params.U[:, :params.d]
    return params.mean + ((np.asarray(Y, dtype=float) - params.mean) @ U) @ U.T


def explained_variance(params: PcaFlopsParams):
    total = params.eigenvalues.sum()
    return np.cumsum(params.eigenvalues) / total if total > 0 else np.ones_like(params.eigenvalues)


# ---------------------------------------------------------------- predict


def predict_baseline(params, records, clip=False):
    """Predicted scores (records x benchmarks).

    PCA predictions are unbounded unless ``clip`` is set, in which case
    ``(predictions, clipped_cell_count)`` is returned.
    """
    records = list(records)
    if isinstance(params, FlopsParams):
        mu = params.gammas + (1.0 - params.gammas) * sigmoid(flops_eta(params, records))
        return (mu, 0) if clip else mu
    if isinstance(params, PcaFlopsParams):
        X = _pca_design(records, params.families, params.sharing, params.standardizer)
        mu = params.mean + (X @ params.coef) @ params.U[:, :params.d].T
        if clip:
            n_clip = int(np.sum((mu < 0) | (mu > 1)))
            return np.clip(mu, 0.0, 1.0), n_clip
        return mu
    raise TypeError(f"not a baseline parameter set: {type(params).__name__}")


def baseline_parameter_count(params):
    if isinstance(params, FlopsParams):
        # the fit carries one bias per benchmark on top of the intercepts
        return int(params.alpha.size + params.beta.size + params.gammas.size + len(params.benchmarks))
    return int(params.coef.size + params.U[:, :params.d].size + params.mean.size)


__all__ = ["FlopsParams", "PcaFlopsParams", "fit_flops", "fit_pca_flops", "predict_baseline",
           "pca", "pca_reconstruct", "explained_variance", "flops_loss", "flops_eta",
           "baseline_parameter_count", "FLOPS_SHARINGS", "PCA_SHARINGS"]
