"""Forward model: skills, linear predictors, link functions and scores.

Scores follow ``mu = gamma + (1 - gamma) * link(eta)`` with
``eta = loadings @ skill + bias`` and skills produced by a translog function
of (log size, log tokens) with a family-specific intercept.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels_py import _sigmoid, mono_forward
from .design import DesignMatrix, Standardizer
from .errors import DimensionError, NumericalError

VARIANTS = ("basic", "trainable-link", "shared-intercept", "size-and-tokens")
PARAMS_FORMAT = "skillscale/params"
PARAMS_VERSION = 1


def sigmoid(x):
    return _sigmoid(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class LinkFunction:
    """Per-benchmark link.  ``kind`` is ``"sigmoid"`` or ``"monotone"``.

    A monotone link is a two-hidden-layer tanh network with non-negative
    multiplicative weights and a final sigmoid:
    ``sigmoid(w3 . tanh(W2 tanh(w1 * eta + c1) + c2) + c3)``.
    """

    kind: str = "sigmoid"
    w1: np.ndarray | None = None
    c1: np.ndarray | None = None
    w2: np.ndarray | None = None
    c2: np.ndarray | None = None
    w3: np.ndarray | None = None
    c3: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sigmoid", "monotone"):
            raise ValueError(f"unknown link kind {self.kind!r}")
        if self.kind == "monotone":
            for name in ("w1", "c1", "w2", "c2", "w3"):
                if getattr(self, name) is None:
                    raise ValueError(f"monotone link needs {name}")
            h = len(self.w1)
            if self.w2.shape != (h, h) or len(self.w3) != h or len(self.c1) != h or len(self.c2) != h:
                raise DimensionError("inconsistent monotone link shapes")
            if min(self.w1.min(), self.w2.min(), self.w3.min()) < 0:
                raise ValueError("monotone link weights must be non-negative")

    @property
    def hidden(self):
        return 0 if self.w1 is None else len(self.w1)

    @classmethod
    def monotone(cls, w1, c1, w2, c2, w3, c3=0.0):
        arr = lambda a: np.array(a, dtype=float)  # noqa: E731
        return cls("monotone", arr(w1), arr(c1), arr(w2), arr(c2), arr(w3), float(c3))

    def to_dict(self):
        if self.kind == "sigmoid":
            return {"kind": "sigmoid"}
        return {"kind": "monotone", "w1": self.w1.tolist(), "c1": self.c1.tolist(),
                "w2": self.w2.tolist(), "c2": self.c2.tolist(), "w3": self.w3.tolist(), "c3": self.c3}

    @classmethod
    def from_dict(cls, data):
        if data["kind"] == "sigmoid":
            return cls()
        return cls.monotone(data["w1"], data["c1"], data["w2"], data["c2"], data["w3"], data["c3"])


def link_eval(link: LinkFunction, eta):
    """Evaluate a link at scalar or array ``eta``; output in (0, 1)."""
    eta = np.asarray(eta, dtype=float)
    if link.kind == "sigmoid":
        return sigmoid(eta)
    flat = eta.reshape(-1, 1)
    _, _, out = mono_forward(flat, link.w1[None], link.c1[None], link.w2[None],
                             link.c2[None], link.w3[None], np.array([link.c3]))
    return out.reshape(eta.shape)


@dataclass(frozen=True)
class SlothParams:
    """Fitted or hand-built model parameters in raw-feature form.

    ``coef`` stacks three slope rows (log s, log t, interaction) on top of the
    intercept rows: one per entry of ``families``, or a single shared row for
    the shared-intercept variant.
    """

    loadings: np.ndarray
    bias: np.ndarray
    coef: np.ndarray
    gammas: np.ndarray
    benchmarks: tuple
    families: tuple
    variant: str = "basic"
    gamma_trainable: np.ndarray | None = None
    links: tuple = ()
    standardization: dict | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        lam = np.array(self.loadings, dtype=float)
        bias = np.array(self.bias, dtype=float)
        coef = np.array(self.coef, dtype=float)
        gam = np.array(self.gammas, dtype=float)
        J = len(self.benchmarks)
        if lam.ndim != 2 or lam.shape[0] != J:
            raise DimensionError(f"loadings must be {J} x d, got {lam.shape}")
        d = lam.shape[1]
        n_icpt = 1 if self.variant == "shared-intercept" else len(self.families)
        if coef.shape != (3 + n_icpt, d):
            raise DimensionError(f"coef must be {(3 + n_icpt, d)}, got {coef.shape}")
        if bias.shape != (J,) or gam.shape != (J,):
            raise DimensionError("bias and gammas need one entry per benchmark")
        if np.any(gam < 0) or np.any(gam >= 1):
            raise ValueError("gammas must lie in [0, 1)")
        if self.variant == "size-and-tokens" and (d != J or not np.array_equal(lam, np.eye(J))):
            raise DimensionError("size-and-tokens requires identity loadings")
        trainable = (np.zeros(J, bool) if self.gamma_trainable is None
                     else np.array(self.gamma_trainable, dtype=bool))
        links = tuple(self.links) if self.links else tuple(LinkFunction() for _ in range(J))
        if len(links) != J:
            raise DimensionError("need one link per benchmark")
        for name, val in (("loadings", lam), ("bias", bias), ("coef", coef), ("gammas", gam),
                          ("gamma_trainable", trainable)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "benchmarks", tuple(self.benchmarks))
        object.__setattr__(self, "families", tuple(self.families))

    @property
    def n_skills(self):
        return self.loadings.shape[1]

    @property
    def slopes(self):
        """3 x d: rows are the log s, log t and interaction coefficients."""
        return self.coef[:3]

    def intercept(self, family):
        if self.variant == "shared-intercept":
            return self.coef[3]
        try:
            return self.coef[3 + self.families.index(family)]
        except ValueError:
            raise DimensionError(f"family {family!r} is not part of these parameters") from None

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class SkillMatrix:
    values: np.ndarray
    mean: np.ndarray = field(init=False)
    cov: np.ndarray = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        mean = v.mean(axis=0)
        centered = v - mean
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", centered.T @ centered / len(v))


def _aligned_design(params: SlothParams, design: DesignMatrix):
    """Design columns re-expressed in the parameters' family order."""
    X = design.matrix
    if X.shape[1] < 3:
        raise DimensionError("design needs three compute columns")
    if params.variant == "shared-intercept":
        return np.column_stack([X[:, :3], X[:, 3:].sum(axis=1)])
    if tuple(design.families) == params.families:
        if X.shape[1] != params.coef.shape[0]:
            raise DimensionError(f"design has {X.shape[1]} columns, coef has {params.coef.shape[0]} rows")
        return X
    index = {f: k for k, f in enumerate(params.families)}
    remap = np.zeros((len(design.families), len(params.families)))
    for k, fam in enumerate(design.families):
        if fam in index:
            remap[k, index[fam]] = 1.0
        elif np.any(X[:, 3 + k] != 0):
            raise DimensionError(f"family {fam!r} is not part of these parameters")
    return np.column_stack([X[:, :3], X[:, 3:] @ remap])


def skills(params: SlothParams, design: DesignMatrix) -> SkillMatrix:
    return SkillMatrix(_aligned_design(params, design) @ params.coef)


def linear_predictors(params: SlothParams, skills: SkillMatrix | np.ndarray):
    theta = skills.values if isinstance(skills, SkillMatrix) else np.asarray(skills, dtype=float)
    if theta.ndim != 2 or theta.shape[1] != params.n_skills:
        raise DimensionError(f"skills must be n x {params.n_skills}, got {theta.shape}")
    return theta @ params.loadings.T + params.bias


def scores_from_eta(params: SlothParams, eta):
    out = np.empty_like(eta)
    for j, link in enumerate(params.links):
        out[:, j] = link_eval(link, eta[:, j])
    return params.gammas + (1.0 - params.gammas) * out


def predict_scores(params: SlothParams, design: DesignMatrix):
    """n x J predicted scores, each in [gamma_j, 1)."""
    eta = linear_predictors(params, skills(params, design))
    bad = ~np.isfinite(eta)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        who = design.model_ids[row] if design.model_ids else row
        raise NumericalError(f"non-finite linear predictor for model {who!r}")
    return scores_from_eta(params, eta)


# ------------------------------------------------------- parameter count


def parameter_count(model, n_benchmarks, n_families, n_skills=None):
    """Scalar count under the convention that every benchmark carries a bias
    and an asymptote and link weights are not counted.

    ``model`` is one of ``"sloth"``, ``"flops"``, ``"size-and-tokens"``.
    """
    J, f = n_benchmarks, n_families
    if model == "sloth":
        d = n_skills
        return J * (d + 2) + d * (f + 3)
    if model == "flops":
        return J * (f + 3)
    if model == "size-and-tokens":
        return J * (f + 5)
    raise ValueError(f"unknown model {model!r}")


def count_parameters(params: SlothParams, include_links=False):
    """Count the scalars ``params`` carries, by the :func:`parameter_count` convention."""
    J = len(params.benchmarks)
    total = params.bias.size + params.gammas.size + params.coef.size
    if params.variant != "size-and-tokens":
        total += params.loadings.size
    if include_links:
        for link in params.links:
            if link.kind == "monotone":
                h = link.hidden
                total += 2 * h + h * h + 2 * h + 1
    assert params.gammas.size == J
    return int(total)


# ---------------------------------------------------------- serialization


def params_to_dict(params: SlothParams):
    return {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "variant": params.variant,
        "shapes": {"benchmarks": len(params.benchmarks), "skills": params.n_skills,
                   "coef_rows": params.coef.shape[0]},
        "benchmarks": list(params.benchmarks),
        "families": list(params.families),
        "loadings": params.loadings.tolist(),
        "bias": params.bias.tolist(),
        "coef": params.coef.tolist(),
        "gammas": params.gammas.tolist(),
        "gamma_trainable": params.gamma_trainable.tolist(),
        "links": [lk.to_dict() for lk in params.links],
        "standardization": params.standardization,
    }


def params_from_dict(data):
    if data.get("format") != PARAMS_FORMAT:
        raise ValueError(f"not a parameter document (format={data.get('format')!r})")
    if data.get("version") != PARAMS_VERSION:
        raise ValueError(f"unsupported parameter document version {data.get('version')}")
    return SlothParams(
        loadings=np.array(data["loadings"], dtype=float).reshape(data["shapes"]["benchmarks"], -1),
        bias=data["bias"],
        coef=np.array(data["coef"], dtype=float).reshape(data["shapes"]["coef_rows"], -1),
        gammas=data["gammas"],
        benchmarks=tuple(data["benchmarks"]),
        families=tuple(data["families"]),
        variant=data["variant"],
        gamma_trainable=data.get("gamma_trainable"),
        links=tuple(LinkFunction.from_dict(lk) for lk in data["links"]),
        standardization=data.get("standardization"),
    )


def dump_params(params: SlothParams, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(params), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(path) -> SlothParams:
    with open(path, encoding="utf-8") as fh:
        return params_from_dict(json.load(fh))


def standardizer_of(params: SlothParams):
    if not params.standardization:
        return None
    return Standardizer.from_dict(params.standardization)


def logit(p):
    p = np.clip(np.asarray(p, dtype=float), 1e-12, 1 - 1e-12)
    return np.log(p) - np.log1p(-p)


__all__ = [
    "LinkFunction", "SlothParams", "SkillMatrix", "skills", "linear_predictors", "predict_scores",
    "link_eval", "sigmoid", "parameter_count", "count_parameters", "dump_params", "load_params",
    "params_to_dict", "params_from_dict", "logit",
]
