"""Output-preserving reparameterizations that make fitted skills interpretable.

Any invertible ``M`` maps ``(loadings, coef)`` to ``(loadings @ M,
coef @ inv(M).T)`` without changing predictions.  The pipeline picks one
such map in three steps: whiten the skills, rotate the loadings with the
oblique Geomin criterion, then center the skills (moving the mean into the
bias).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .design import DesignMatrix
from .errors import ConvergenceWarning, DimensionError, NumericalError
from .model import SlothParams, skills

GEOMIN_EPS = 0.01


@dataclass(frozen=True)
class GeominResult:
    loadings: np.ndarray
    rotation: np.ndarray
    criterion: float
    initial_criterion: float
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)


@dataclass(frozen=True)
class RotationResult:
    rotation: np.ndarray
    whitening: np.ndarray
    loadings: np.ndarray
    coef: np.ndarray
    bias: np.ndarray
    correlation: np.ndarray
    criterion: float
    converged: bool
    trace: list = field(default_factory=list)

    def to_dict(self):
        return {
            "rotation": self.rotation.tolist(),
            "whitening": self.whitening.tolist(),
            "loadings": self.loadings.tolist(),
            "coef": self.coef.tolist(),
            "bias": self.bias.tolist(),
            "skill_correlation": self.correlation.tolist(),
            "geomin_criterion": self.criterion,
            "converged": self.converged,
            "trace": self.trace,
        }


def transform(params: SlothParams, M) -> SlothParams:
    """Apply the output-preserving pair ``(loadings @ M, coef @ inv(M).T)``."""
    M = np.asarray(M, dtype=float)
    if params.variant == "size-and-tokens":
        raise DimensionError("size-and-tokens loadings are fixed to the identity")
    return params.with_(loadings=params.loadings @ M, coef=params.coef @ np.linalg.inv(M).T)


def _check_rotatable(params):
    if params.variant == "size-and-tokens":
        raise DimensionError("size-and-tokens parameters have no latent skills to rotate")


def whiten(params: SlothParams, design: DesignMatrix):
    """Return ``(params, A)`` with skill covariance (1/n convention) equal to I."""
    _check_rotatable(params)
    sk = skills(params, design)
    vals, vecs = np.linalg.eigh(sk.cov)
    if vals[0] <= 1e-12 * max(vals[-1], 1e-300):
        raise NumericalError(
            f"skill covariance is singular (eigenvalues {vals}); refit with fewer skills")
    A = vecs @ np.diag(vals ** -0.5) @ vecs.T
    return params.with_(coef=params.coef @ A, loadings=params.loadings @ np.linalg.inv(A).T), A


def geomin_criterion(loadings, epsilon=GEOMIN_EPS):
    L2 = np.asarray(loadings, dtype=float) ** 2 + epsilon
    return float(np.sum(np.exp(np.mean(np.log(L2), axis=1))))


def _geomin_value_grad(L, epsilon):
    d = L.shape[1]
    L2 = L * L + epsilon
    pro = np.exp(np.mean(np.log(L2), axis=1))
    return float(pro.sum()), (2.0 / d) * L / L2 * pro[:, None]


def _gpa_oblique(A, T, epsilon, max_iter, tol):
    """Gradient projection over unit-column ``T``; rotated loadings ``A inv(T).T``."""
    Ti = np.linalg.inv(T)
    L = A @ Ti.T
    f, Gq = _geomin_value_grad(L, epsilon)
    G = -(L.T @ Gq @ Ti).T
    trace = [f]
    converged = False
    al = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        Gp = G - T @ np.diag(np.sum(T * G, axis=0))
        s = np.linalg.norm(Gp)
        if s < tol:
            converged = True
            break
        al = 2.0 * al
        accepted = False
        for _ in range(12):
            X = T - al * Gp
            Tt = X / np.sqrt(np.sum(X * X, axis=0))
            Tti = np.linalg.inv(Tt)
            Lt = A @ Tti.T
            ft, Gqt = _geomin_value_grad(Lt, epsilon)
            if ft < f - 0.5 * s * s * al:
                accepted = True
                break
            al /= 2.0
        if not accepted:
            # no descent step available at machine precision
            converged = s < 1e3 * tol
            break
        T, Ti, L, f, Gq = Tt, Tti, Lt, ft, Gqt
        G = -(L.T @ Gq @ Ti).T
        trace.append(f)
    return T, f, converged, it, trace


def _canonical_columns(L):
    """Sign flips and ordering: largest-|.| loading positive, columns by
    descending sum of squares.  Returns the d x d signed permutation."""
    d = L.shape[1]
    signs = np.ones(d)
    for k in range(d):
        col = L[:, k]
        if col[np.argmax(np.abs(col))] < 0:
            signs[k] = -1.0
    order = np.argsort(-np.sum(L * L, axis=0), kind="stable")
    P = np.zeros((d, d))
    for new, old in enumerate(order):
        P[old, new] = signs[old]
    return P


def geomin_rotate(loadings, epsilon=GEOMIN_EPS, n_starts=20, seed=0, max_iter=500, tol=1e-6,
                  canonical=True):
    """Oblique Geomin rotation of a J x d loading matrix.

    Runs gradient projection from the identity and from ``n_starts`` random
    unit-column starts and keeps the lowest criterion.  The returned
    ``rotation`` M satisfies ``rotated = loadings @ M`` and ``inv(M)`` has
    unit-norm rows.
    """
    A = np.asarray(loadings, dtype=float)
    J, d = A.shape
    f0 = geomin_criterion(A, epsilon)
    if d == 1:
        return GeominResult(A.copy(), np.eye(1), f0, f0, True, 0, [f0])
    rng = np.random.default_rng(seed)
    starts = [np.eye(d)]
    for _ in range(n_starts):
        X = rng.normal(size=(d, d))
        starts.append(X / np.sqrt(np.sum(X * X, axis=0)))
    best = None
    for T0 in starts:
        if abs(np.linalg.det(T0)) < 1e-8:
            continue
        T, f, conv, it, trace = _gpa_oblique(A, T0, epsilon, max_iter, tol)
        if best is None or f < best[1] - 1e-12:
            best = (T, f, conv, it, trace)
    T, f, conv, it, trace = best
    if f > f0:
        T, f, conv, it, trace = np.eye(d), f0, True, 0, [f0]
    M = np.linalg.inv(T).T
    if canonical:
        M = M @ _canonical_columns(A @ M)
    if not conv:
        warnings.warn(ConvergenceWarning(f"Geomin rotation did not converge in {max_iter} iterations"),
                      stacklevel=2)
    rotated = A @ M
    return GeominResult(rotated, M, geomin_criterion(rotated, epsilon), f0, conv, it, trace)


def _intercept_rows(params):
    return slice(3, params.coef.shape[0])


def standardize_skills(params: SlothParams, design: DesignMatrix, unit_variance=False):
    """Center skill columns on ``design``'s rows, translating the bias so
    predictions are unchanged.  With ``unit_variance`` also rescale each
    skill to standard deviation 1 (loadings absorb the scale)."""
    X = design.matrix
    icpt = X[:, 3:]
    if icpt.size and not np.allclose(icpt.sum(axis=1), 1.0):
        raise DimensionError("standardization needs exactly one intercept indicator per row")
    sk = skills(params, design)
    mean = sk.mean
    coef = params.coef.copy()
    coef[_intercept_rows(params)] -= mean
    out = params.with_(coef=coef, bias=params.bias + params.loadings @ mean)
    if unit_variance:
        sd = np.sqrt(np.diag(sk.cov))
        out = out.with_(coef=out.coef / sd, loadings=out.loadings * sd)
    return out


def interpret_pipeline(params: SlothParams, design: DesignMatrix, epsilon=GEOMIN_EPS, n_starts=20, seed=0):
    """Whiten, Geomin-rotate, then standardize.  Returns ``(params, RotationResult)``."""
    _check_rotatable(params)
    white, A = whiten(params, design)
    rot = geomin_rotate(white.loadings, epsilon=epsilon, n_starts=n_starts, seed=seed)
    rotated = transform(white, rot.rotation)
    final = standardize_skills(rotated, design, unit_variance=True)
    sk = skills(final, design)
    sd = np.sqrt(np.diag(sk.cov))
    corr = sk.cov / np.outer(sd, sd)
    result = RotationResult(
        rotation=rot.rotation, whitening=A, loadings=np.array(final.loadings),
        coef=np.array(final.coef), bias=np.array(final.bias), correlation=corr,
        criterion=rot.criterion, converged=rot.converged, trace=rot.trace,
    )
    return final, result
