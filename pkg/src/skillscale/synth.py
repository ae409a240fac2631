"""Synthetic score tables drawn from known ground-truth parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .dataset import AsymptoteConfig, AsymptoteEntry, ModelRecord, ScoreTable
from .design import Layout, Standardizer, build_design, compute_features, family_indices, numerical_rank
from .errors import DimensionError
from .model import SlothParams, predict_scores

DEFAULT_GAMMAS = (0.25, 0.0, 0.25, 0.5, 0.0, 0.2)


@dataclass(frozen=True)
class SynthSpec:
    n_families: int = 10
    models_per_family: int = 5
    n_benchmarks: int = 12
    d: int = 3
    noise: float = 0.01
    seed: int = 0
    size_range: tuple = (1e8, 7e10)
    tokens_range: tuple = (2e11, 1.5e13)
    gammas: tuple | None = None
    loadings: np.ndarray | None = field(default=None, compare=False)
    orthogonal_skills: bool = True
    intercept_scale: float = 0.6

    def __post_init__(self):
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        n = self.n_families * self.models_per_family
        p = 3 + self.n_families
        if not n >= p >= self.d:
            raise DimensionError(f"need n >= p >= d, got n={n}, p={p}, d={self.d}")
        if self.d > self.n_benchmarks:
            raise DimensionError("d cannot exceed the number of benchmarks")


class Synthetic(NamedTuple):
    table: ScoreTable
    truth: SlothParams
    info: dict


def simple_structure(n_benchmarks, d, rng, low=0.8, high=1.5):
    """Each benchmark loads on exactly one skill, skills assigned round-robin."""
    lam = np.zeros((n_benchmarks, d))
    for j in range(n_benchmarks):
        lam[j, j % d] = rng.uniform(low, high)
    return lam


def asymptotes_for(truth: SlothParams) -> AsymptoteConfig:
    return AsymptoteConfig({b: AsymptoteEntry(float(g)) for b, g in zip(truth.benchmarks, truth.gammas)})


def generate(spec: SynthSpec = SynthSpec()) -> Synthetic:
    rng = np.random.default_rng(spec.seed)
    I, K, J, d = spec.n_families, spec.models_per_family, spec.n_benchmarks, spec.d
    families = tuple(f"fam{i:02d}" for i in range(I))
    benchmarks = tuple(f"bench{j:02d}" for j in range(J))

    lo_s, hi_s = np.log(spec.size_range)
    lo_t, hi_t = np.log(spec.tokens_range)
    shells = []
    for i, fam in enumerate(families):
        sizes = np.sort(np.exp(rng.uniform(lo_s, hi_s, size=K)))
        level = rng.uniform(lo_t + 0.5, hi_t - 0.5)
        tokens = np.exp(np.clip(level + rng.normal(0.0, 0.4, size=K), lo_t, hi_t))
        for k in range(K):
            shells.append((f"{fam}-m{k}", fam, float(sizes[k]), float(tokens[k])))
    records = [ModelRecord(m, f, s, t) for m, f, s, t in shells]

    feats = compute_features(records)
    std = Standardizer.fit(feats)
    fam_idx = family_indices(records, families)
    layout = Layout()
    X_std = layout.matrix(std.apply(feats), fam_idx, I)

    B_std = np.vstack([
        np.abs(rng.normal(size=(3, d))) * np.array([1.0, 0.7, 0.4])[:, None],
        rng.normal(0.0, spec.intercept_scale, size=(I, d)),
    ])
    theta = X_std @ B_std
    if spec.orthogonal_skills:
        centered = theta - theta.mean(axis=0)
        cov = centered.T @ centered / len(theta)
        vals, vecs = np.linalg.eigh(cov)
        B_std = B_std @ (vecs @ np.diag(vals ** -0.5) @ vecs.T)
        theta = X_std @ B_std
    B_std[3:] -= theta.mean(axis=0)
    coef = layout.raw_from_std(std, I) @ B_std

    lam = simple_structure(J, d, rng) if spec.loadings is None else np.asarray(spec.loadings, float)
    bias = rng.uniform(-0.5, 0.5, size=J)
    gam = spec.gammas if spec.gammas is not None else [DEFAULT_GAMMAS[j % len(DEFAULT_GAMMAS)] for j in range(J)]
    truth = SlothParams(lam, bias, coef, np.asarray(gam, float), benchmarks, families,
                        standardization={"features": ["log_s", "log_t", "log_s_x_log_t"], **std.to_dict()})

    design = build_design(records, families, warn_rank=False)
    rank_x = numerical_rank(design.matrix)
    rank_l = numerical_rank(lam)
    if rank_x < design.matrix.shape[1] or rank_l < d:
        raise DimensionError(f"rank conditions violated: rank(X)={rank_x}/{design.matrix.shape[1]}, "
                             f"rank(loadings)={rank_l}/{d}")

    mu = predict_scores(truth, design)
    noisy = mu + spec.noise * rng.normal(size=mu.shape)
    truncated = int(np.sum((noisy < 0) | (noisy > 1)))
    Y = np.clip(noisy, 0.0, 1.0)
    table = ScoreTable(
        tuple(ModelRecord(r.model_id, r.family_id, r.size_s, r.tokens_t,
                          {b: float(Y[i, j]) for j, b in enumerate(benchmarks)})
              for i, r in enumerate(records)),
        benchmarks,
    )
    info = {"rank_x": rank_x, "p": design.matrix.shape[1], "rank_loadings": rank_l,
            "truncated_cells": truncated, "n": len(records), "seed": spec.seed, "noise": spec.noise}
    return Synthetic(table, truth, info)


def truth_to_dict(truth: SlothParams, info: dict):
    from .model import params_to_dict
    return {"truth": params_to_dict(truth), "info": info}
