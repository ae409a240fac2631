"""Fitting: summed Huber loss over observed cells, minimized by Adam.

All variants and the FLOPs baselines reduce to one objective over a
standardized design ``X`` (n x p): skills ``X @ B``, linear predictors
``skills @ L.T + b`` (``L`` fixed to the identity for per-benchmark models),
a per-benchmark link and the lower asymptote.  :class:`Objective` packs
those pieces into one flat vector so the optimizer and kernels work on a
single contiguous buffer.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from ._kernels_py import _sigmoid, mono_forward
from .dataset import AsymptoteConfig, AsymptoteEntry, ScoreTable
from .design import DesignMatrix, Layout, Standardizer, compute_features, family_indices
from .errors import ConfigError, DimensionError, NumericalError
from .model import VARIANTS, LinkFunction, SlothParams, logit, predict_scores
from .optim import run_adam

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    d: int = 3
    variant: str = "basic"
    delta: float = 0.01
    max_steps: int = 20000
    initial_lr: float = 0.05
    lr_decay: float = 0.999
    restarts: int = 5
    seed: int = 0
    tol: float = 1e-10
    check_every: int = 250
    link: str | None = None
    hidden: int = 8
    gamma_mode: str | None = None
    check_gradients: bool = True
    workers: int = 1
    backend: str | None = None

    def __post_init__(self):
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.link not in (None, "sigmoid", "monotone"):
            raise ConfigError(f"unknown link {self.link!r}")
        if self.gamma_mode not in (None, "fixed", "trainable"):
            raise ConfigError(f"unknown gamma mode {self.gamma_mode!r}")
        if self.max_steps < 1 or self.initial_lr <= 0 or not 0 < self.lr_decay <= 1:
            raise ConfigError("invalid optimizer schedule")

    @property
    def link_kind(self):
        if self.link is not None:
            return self.link
        return "monotone" if self.variant == "trainable-link" else "sigmoid"

    @classmethod
    def from_mapping(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown fit config keys {sorted(unknown)}")
        return cls(**data)


@dataclass
class FitReport:
    final_loss: float
    restart_losses: list
    chosen_restart: int
    steps: list
    grad_check_max_rel_error: float | None
    standardization: dict
    config: dict
    backend: str
    diagnostics: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    def to_dict(self):
        out = asdict(self)
        out["restart_losses"] = [None if (x is None or not math.isfinite(x)) else x for x in self.restart_losses]
        return out


def huber(residual, delta):
    """Huber loss: quadratic inside ``|r| <= delta``, linear outside."""
    r = np.asarray(residual, dtype=float)
    a = np.abs(r)
    out = np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
    return out if out.ndim else float(out)


# ------------------------------------------------------------- objective


class Objective:
    """Flat-vector view of the fitting problem.

    Segment order: ``B`` (p x d), ``L`` (J x d, absent when fixed to the
    identity), ``b`` (J), raw trainable asymptotes, then the monotone link
    weights ``W1, c1, W2, c2, w3, c3`` when the link is learned.
    """

    NONNEG = ("W1", "W2", "w3")

    def __init__(self, X, Y, W, d, gamma0, gamma_trainable, identity_loadings=False,
                 link="sigmoid", hidden=8, delta=0.01, backend=None):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.W = np.ascontiguousarray(W, dtype=float)
        self.Y = np.ascontiguousarray(np.where(self.W > 0, np.nan_to_num(Y), 0.0), dtype=float)
        n, p = self.X.shape
        J = self.Y.shape[1]
        if identity_loadings and d != J:
            raise DimensionError("identity loadings require d == number of benchmarks")
        self.n, self.p, self.J, self.d = n, p, J, d
        self.gamma0 = np.asarray(gamma0, dtype=float).copy()
        self.gamma_trainable = np.asarray(gamma_trainable, dtype=bool).copy()
        self.identity_loadings = identity_loadings
        self.link = link
        self.H = hidden
        self.delta = float(delta)
        self.backend = backend
        shapes = [("B", (p, d))]
        if not identity_loadings:
            shapes.append(("L", (J, d)))
        shapes.append(("b", (J,)))
        shapes.append(("graw", (int(self.gamma_trainable.sum()),)))
        if link == "monotone":
            H = hidden
            shapes += [("W1", (J, H)), ("c1", (J, H)), ("W2", (J, H, H)), ("c2", (J, H)),
                       ("w3", (J, H)), ("c3", (J,))]
        self.segments = {}
        pos = 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            self.segments[name] = (pos, pos + size, shape)
            pos += size
        self.size = pos
        self._eye = np.eye(J) if identity_loadings else None

    def views(self, vec):
        return {name: vec[a:b].reshape(shape) for name, (a, b, shape) in self.segments.items()}

    def gammas(self, views):
        gam = self.gamma0.copy()
        if self.gamma_trainable.any():
            gam[self.gamma_trainable] = _sigmoid(views["graw"])
        return gam

    def loadings(self, views):
        return self._eye if self.identity_loadings else views["L"]

    def bind(self, theta, grad):
        """Loss-and-gradient closure over fixed ``theta``/``grad`` buffers."""
        kern = kernels.get(self.backend)
        tv, gv = self.views(theta), self.views(grad)
        gL = np.zeros((self.J, self.d)) if self.identity_loadings else gv["L"]
        ggam = np.zeros(self.J)
        train = self.gamma_trainable
        any_train = bool(train.any())
        L = self.loadings(tv)
        X, Y, W, delta = self.X, self.Y, self.W, self.delta

        if self.link == "monotone":
            def fun(_theta, _grad):
                gam = self.gammas(tv)
                loss = kern.mono_loss_grad(
                    X, tv["B"], L, tv["b"], gam, Y, W, delta,
                    tv["W1"], tv["c1"], tv["W2"], tv["c2"], tv["w3"], tv["c3"],
                    gv["B"], gL, gv["b"], ggam,
                    gv["W1"], gv["c1"], gv["W2"], gv["c2"], gv["w3"], gv["c3"])
                if any_train:
                    gv["graw"][:] = ggam[train] * gam[train] * (1.0 - gam[train])
                return loss
        else:
            def fun(_theta, _grad):
                gam = self.gammas(tv) if any_train else self.gamma0
                loss = kern.sigmoid_loss_grad(X, tv["B"], L, tv["b"], gam, Y, W, delta,
                                              gv["B"], gL, gv["b"], ggam)
                if any_train:
                    gv["graw"][:] = ggam[train] * gam[train] * (1.0 - gam[train])
                return loss
        return fun

    def loss_grad(self, theta):
        theta = np.array(theta, dtype=float)
        grad = np.zeros_like(theta)
        loss = self.bind(theta, grad)(theta, grad)
        return loss, grad

    def predictions(self, theta):
        """Independent numpy forward pass; n x J predicted scores."""
        v = self.views(np.asarray(theta, dtype=float))
        eta = (self.X @ v["B"]) @ self.loadings(v).T + v["b"]
        if self.link == "monotone":
            _, _, s = mono_forward(eta, v["W1"], v["c1"], v["W2"], v["c2"], v["w3"], v["c3"])
        else:
            s = _sigmoid(eta)
        gam = self.gammas(v)
        return gam + (1.0 - gam) * s

    def loss(self, theta):
        r = self.predictions(theta) - self.Y
        return float(np.sum(self.W * huber(r, self.delta)))

    def project(self, theta):
        if self.link != "monotone":
            return None
        kern = kernels.get(self.backend)
        for name in self.NONNEG:
            a, b, _ = self.segments[name]
            kern.clamp_nonneg(theta, a, b)
        return None

    def projector(self):
        return self.project if self.link == "monotone" else None

    def initial(self, rng):
        theta = np.zeros(self.size)
        v = self.views(theta)
        scale = 1.0 / math.sqrt(self.d)
        v["B"][:] = rng.uniform(-0.5, 0.5, size=v["B"].shape) * scale
        if not self.identity_loadings:
            v["L"][:] = rng.uniform(-0.5, 0.5, size=v["L"].shape) * scale
        obs = self.W > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = (self.Y - self.gamma0) / (1.0 - self.gamma0)
            col = np.where(obs, frac, 0.0).sum(axis=0) / np.maximum(obs.sum(axis=0), 1)
        v["b"][:] = logit(np.clip(col, 0.01, 0.99))
        if self.gamma_trainable.any():
            v["graw"][:] = logit(np.clip(self.gamma0[self.gamma_trainable], 1e-3, 0.999))
        if self.link == "monotone":
            for name in self.NONNEG:
                v[name][:] = np.abs(rng.normal(0.0, 0.5, size=v[name].shape))
        return theta


# ----------------------------------------------------------------- running


def _adam_in_place(obj, config, theta):
    grad = np.zeros_like(theta)
    fun = obj.bind(theta, grad)
    return run_adam(lambda _t, _g: fun(theta, grad), theta, max_steps=config.max_steps,
                    lr0=config.initial_lr, decay=config.lr_decay, tol=config.tol,
                    check_every=config.check_every, project=obj.projector(), backend=config.backend,
                    grad=grad)


def _restart_job(args):
    obj, config, index = args
    rng = np.random.default_rng([config.seed, index])
    theta = obj.initial(rng)
    theta0 = theta.copy()
    res = _adam_in_place(obj, config, theta)
    return theta0, res


def fit_objective(obj: Objective, config: FitConfig):
    """Best-of-restarts minimization.  Returns (theta, theta0_of_best, losses, steps, diagnostics, trace)."""
    jobs = [(obj, config, r) for r in range(config.restarts)]
    if config.workers > 1 and config.restarts > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_restart_job, jobs))
    else:
        results = [_restart_job(job) for job in jobs]
    losses, steps, diags = [], [], []
    best_index = None
    for r, (_, res) in enumerate(results):
        steps.append(res.steps)
        if res.diverged or not math.isfinite(res.loss):
            losses.append(math.inf)
            diags.append(f"restart {r} diverged at step {res.steps}; discarded")
            log.warning("restart %d diverged at step %d", r, res.steps)
            continue
        losses.append(res.loss)
        if best_index is None or res.loss < losses[best_index]:
            best_index = r
    if best_index is None:
        raise NumericalError("every restart diverged")
    theta0, res = results[best_index]
    return res.theta, theta0, losses, steps, diags, res.trace, best_index


def finite_difference_check(obj: Objective, theta, step=1e-5, floor=1e-8):
    """Max relative error between kernel gradient and central differences of
    the independent numpy loss."""
    theta = np.array(theta, dtype=float)
    _, analytic = obj.loss_grad(theta)
    worst = 0.0
    probe = theta.copy()
    for i in range(theta.size):
        probe[i] = theta[i] + step
        up = obj.loss(probe)
        probe[i] = theta[i] - step
        down = obj.loss(probe)
        probe[i] = theta[i]
        numeric = (up - down) / (2 * step)
        err = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), floor)
        worst = max(worst, err)
    return worst


# ------------------------------------------------------------- Sloth fit


def _gamma_setup(benchmarks, asymptotes, mode):
    missing = [b for b in benchmarks if b not in asymptotes]
    if missing:
        raise ConfigError(f"no asymptote configured for {missing}")
    gam = asymptotes.gammas(benchmarks)
    if mode == "fixed":
        train = np.zeros(len(benchmarks), bool)
    elif mode == "trainable":
        train = np.ones(len(benchmarks), bool)
    else:
        train = asymptotes.trainable(benchmarks)
    return gam, train


def _variant_layout(variant):
    return Layout("translog", "shared" if variant == "shared-intercept" else "family")


def build_objective(table: ScoreTable, config: FitConfig, asymptotes: AsymptoteConfig, weights=None,
                    standardizer=None):
    """Objective plus the layout pieces needed to map solutions back."""
    records = table.records
    families = tuple(table.families)
    variant = config.variant
    identity = variant == "size-and-tokens"
    J = len(table.benchmarks)
    d = J if identity else config.d
    layout = _variant_layout(variant)
    feats = compute_features(records, "translog")
    std = standardizer or Standardizer.fit(feats)
    fam = family_indices(records, families)
    X = layout.matrix(std.apply(feats), fam, len(families))
    n, p = X.shape
    if not identity:
        if d > J:
            raise DimensionError(f"d={d} exceeds the number of benchmarks ({J})")
        if not (n >= p >= d):
            raise DimensionError(
                f"need n >= p >= d for identifiable skills (n={n}, p={p}, d={d}); "
                "add models or reduce families/skills")
    Y = table.score_matrix()
    W = np.isfinite(Y).astype(float)
    if weights is not None:
        W = W * np.asarray(weights, dtype=float)
    gam, train = _gamma_setup(table.benchmarks, asymptotes, config.gamma_mode)
    obj = Objective(X, Y, W, d, gam, train, identity_loadings=identity, link=config.link_kind,
                    hidden=config.hidden, delta=config.delta, backend=config.backend)
    return obj, layout, std, families


def theta_to_params(obj: Objective, theta, layout, std, families, benchmarks, variant):
    v = obj.views(np.asarray(theta, dtype=float))
    T = layout.raw_from_std(std, len(families))
    coef = T @ v["B"]
    links = []
    for j in range(obj.J):
        if obj.link == "monotone":
            links.append(LinkFunction.monotone(v["W1"][j], v["c1"][j], v["W2"][j], v["c2"][j],
                                               v["w3"][j], v["c3"][j]))
        else:
            links.append(LinkFunction())
    return SlothParams(
        loadings=obj.loadings(v).copy(), bias=v["b"].copy(), coef=coef, gammas=obj.gammas(v),
        benchmarks=tuple(benchmarks), families=tuple(families), variant=variant,
        gamma_trainable=obj.gamma_trainable, links=tuple(links),
        standardization={"features": list(("log_s", "log_t", "log_s_x_log_t")), **std.to_dict()},
    )


def params_to_theta(obj: Objective, params: SlothParams, layout, std):
    """Inverse of :func:`theta_to_params` for an objective built on the same table."""
    theta = np.zeros(obj.size)
    v = obj.views(theta)
    T = layout.raw_from_std(std, len(params.families))
    v["B"][:] = np.linalg.solve(T, params.coef)
    if not obj.identity_loadings:
        v["L"][:] = params.loadings
    v["b"][:] = params.bias
    if obj.gamma_trainable.any():
        v["graw"][:] = logit(params.gammas[obj.gamma_trainable])
    if obj.link == "monotone":
        for j, lk in enumerate(params.links):
            v["W1"][j], v["c1"][j], v["W2"][j] = lk.w1, lk.c1, lk.w2
            v["c2"][j], v["w3"][j], v["c3"][j] = lk.c2, lk.w3, lk.c3
    return theta


def fit(table: ScoreTable, config: FitConfig, asymptotes: AsymptoteConfig, weights=None):
    """Fit model parameters; returns ``(SlothParams, FitReport)``.

    ``weights`` (n x J, optional) multiplies each cell's loss; zero removes a
    cell, which is how held-out cells are masked.
    """
    obj, layout, std, families = build_objective(table, config, asymptotes, weights)
    theta, theta0, losses, steps, diags, trace, best = fit_objective(obj, config)
    grad_err = finite_difference_check(obj, theta0) if config.check_gradients else None
    params = theta_to_params(obj, theta, layout, std, families, table.benchmarks, config.variant)
    report = FitReport(
        final_loss=float(obj.loss(theta)),
        restart_losses=losses,
        chosen_restart=best,
        steps=steps,
        grad_check_max_rel_error=grad_err,
        standardization=std.to_dict(),
        config=asdict(config),
        backend=kernels.BACKEND if config.backend is None else config.backend,
        diagnostics=diags,
        trace=[list(t) for t in trace],
    )
    return params, report


# ---------------------------------------------------------- public checks


def _aligned_scores(params: SlothParams, table: ScoreTable):
    if set(params.benchmarks) != set(table.benchmarks):
        raise DimensionError(
            f"benchmark mismatch: params {sorted(params.benchmarks)} vs table {sorted(table.benchmarks)}")
    return table.score_matrix(params.benchmarks)


def total_loss(params: SlothParams, design: DesignMatrix, table: ScoreTable, delta=0.01):
    """Sum of Huber losses over the table's present cells."""
    Y = _aligned_scores(params, table)
    if design.matrix.shape[0] != Y.shape[0]:
        raise DimensionError("design and table have different row counts")
    mu = predict_scores(params, design)
    obs = np.isfinite(Y)
    return float(np.sum(huber(mu[obs] - Y[obs], delta)))


def gradient_check(params: SlothParams, design: DesignMatrix, table: ScoreTable, delta=0.01,
                   step=1e-5, backend=None):
    """Max relative error of the analytic loss gradient against central
    differences, taken in the standardized parameterization.

    ``design`` must describe ``table``'s rows; the standardization stored in
    ``params`` is reused when present.
    """
    if params.benchmarks != tuple(table.benchmarks):
        table = table.select_benchmarks(params.benchmarks)
    if design.matrix.shape[0] != len(table):
        raise DimensionError("design and table have different row counts")
    if tuple(table.families) != params.families and params.variant != "shared-intercept":
        raise DimensionError("gradient_check needs the table whose families the parameters were fit on")
    link = params.links[0].kind
    config = FitConfig(d=params.n_skills, variant=params.variant, delta=delta, link=link,
                       hidden=params.links[0].hidden or 8, restarts=1, backend=backend)
    asym = AsymptoteConfig({b: AsymptoteEntry(float(g), bool(t)) for b, g, t in
                            zip(params.benchmarks, params.gammas, params.gamma_trainable)})
    std = Standardizer.from_dict(params.standardization) if params.standardization else None
    obj, layout, std, _ = build_objective(table, config, asym, standardizer=std)
    theta = params_to_theta(obj, params, layout, std)
    return finite_difference_check(obj, theta, step=step)
