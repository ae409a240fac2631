"""Compute-optimal split of a FLOPs budget between parameters and tokens.

With ``u = log s``, ``v = log t`` and ``l = log c - log 6`` the budget fixes
``v = l - u``, so a skill's translog response reduces to a quadratic in
``u`` maximized over the interval of allocations inside the observed
training range.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import ScoreTable
from .errors import ConfigError, DimensionError, InfeasibleBudgetError
from .model import SlothParams

FLAGS = ("interior-vertex", "lower-edge", "upper-edge")
# few-ulp slack so a budget exactly at the cap product is not rejected by rounding
_SLACK = 1e-12


@dataclass(frozen=True)
class AllocationProblem:
    beta0: float
    beta1: float
    beta2: float
    alpha: float
    budget: float
    u_lo: float
    u_hi: float
    v_lo: float
    v_hi: float
    skill: int = 0
    family: str | None = None

    def __post_init__(self):
        if not self.budget > 0:
            raise ConfigError(f"budget must be positive, got {self.budget}")
        if self.u_lo > self.u_hi or self.v_lo > self.v_hi:
            raise ConfigError("bounds must satisfy lower <= upper")

    @property
    def log_budget(self):
        """``l = log c - log 6``: the value of ``u + v`` on the budget line."""
        return math.log(self.budget) - math.log(6.0)

    def objective(self, u):
        l = self.log_budget
        u = np.asarray(u, dtype=float)
        return (-self.beta2 * u * u + (self.beta0 - self.beta1 + self.beta2 * l) * u
                + (self.alpha + self.beta1 * l))

    def interval(self):
        """Feasible ``[lo, hi]`` for ``u``; raises when empty."""
        l = self.log_budget
        lo = max(l - self.v_hi, self.u_lo)
        hi = min(l - self.v_lo, self.u_hi)
        if lo > hi:
            if lo - hi <= _SLACK * max(1.0, abs(l)):
                return hi, hi
            if l - self.v_hi > self.u_hi:
                raise InfeasibleBudgetError(
                    f"budget {self.budget:.6g} FLOPs exceeds the largest allocation inside the bounds "
                    f"(6 * exp(u_hi + v_hi) = {6 * math.exp(self.u_hi + self.v_hi):.6g})")
            raise InfeasibleBudgetError(
                f"budget {self.budget:.6g} FLOPs is below the smallest allocation inside the bounds "
                f"(6 * exp(u_lo + v_lo) = {6 * math.exp(self.u_lo + self.v_lo):.6g})")
        return lo, hi


@dataclass(frozen=True)
class Allocation:
    budget: float
    size: float
    tokens: float
    log_size: float
    log_tokens: float
    value: float
    flag: str
    skill: int = 0
    family: str | None = None

    def to_dict(self):
        return asdict(self)


def optimal_allocation(problem: AllocationProblem) -> Allocation:
    """Maximize the skill along the budget line.

    Concave case (``beta2 > 0``): the vertex clipped to the interval.
    Otherwise the better endpoint; ties go to the lower edge, and an exactly
    flat objective returns the interval midpoint.
    """
    lo, hi = problem.interval()
    l = problem.log_budget
    b2 = problem.beta2
    lin = problem.beta0 - problem.beta1 + b2 * l
    if b2 > 0:
        vertex = lin / (2.0 * b2)
        if vertex <= lo:
            u, flag = lo, "lower-edge"
        elif vertex >= hi:
            u, flag = hi, "upper-edge"
        else:
            u, flag = vertex, "interior-vertex"
    elif b2 == 0 and lin == 0:
        u, flag = 0.5 * (lo + hi), "interior-vertex"
    else:
        g_lo, g_hi = float(problem.objective(lo)), float(problem.objective(hi))
        u, flag = (hi, "upper-edge") if g_hi > g_lo else (lo, "lower-edge")
    v = l - u
    return Allocation(problem.budget, math.exp(u), math.exp(v), u, v, float(problem.objective(u)), flag,
                      problem.skill, problem.family)


def training_bounds(table: ScoreTable | list, policy="min-max"):
    """``(u_lo, u_hi, v_lo, v_hi)`` from observed log-sizes and log-tokens.

    ``policy`` is ``"min-max"`` or ``("quantile", q_lo, q_hi)`` (linear
    interpolation between order statistics).
    """
    records = list(table.records if isinstance(table, ScoreTable) else table)
    if not records:
        raise DimensionError("cannot derive bounds from an empty table")
    u = np.log([r.size_s for r in records])
    v = np.log([r.tokens_t for r in records])
    if policy == "min-max":
        return float(u.min()), float(u.max()), float(v.min()), float(v.max())
    name, q_lo, q_hi = parse_policy(policy)
    return (float(np.quantile(u, q_lo)), float(np.quantile(u, q_hi)),
            float(np.quantile(v, q_lo)), float(np.quantile(v, q_hi)))


def parse_policy(policy):
    """Accept ``"min-max"``, ``("quantile", lo, hi)`` or ``"quantile:lo,hi"``."""
    if policy == "min-max":
        return ("min-max", 0.0, 1.0)
    if isinstance(policy, str):
        name, _, rest = policy.partition(":")
        try:
            q = tuple(float(x) for x in rest.split(","))
        except ValueError:
            raise ConfigError(f"bad bounds policy {policy!r}") from None
        policy = (name, *q)
    if len(policy) != 3 or policy[0] != "quantile" or not 0 <= policy[1] <= policy[2] <= 1:
        raise ConfigError(f"bounds policy must be 'min-max' or quantile with 0 <= lo <= hi <= 1, got {policy!r}")
    return tuple(policy)


def problem_for(params: SlothParams, skill: int, budget: float, bounds, family=None):
    if params.variant == "size-and-tokens":
        raise DimensionError("allocation needs latent skills; size-and-tokens has none")
    if not 0 <= skill < params.n_skills:
        raise ConfigError(f"skill index {skill} out of range for {params.n_skills} skills")
    family = family if family is not None else params.families[0]
    slopes = params.slopes
    alpha = float(params.intercept(family)[skill])
    return AllocationProblem(float(slopes[0, skill]), float(slopes[1, skill]), float(slopes[2, skill]), alpha,
                             float(budget), *bounds, skill=skill, family=family)


def allocation_table(params: SlothParams, skill: int, budgets, bounds, family=None, on_infeasible="raise"):
    """One allocation per budget.  With ``on_infeasible="record"`` an
    infeasible budget yields ``{"budget": c, "error": message}`` instead of
    raising."""
    rows = []
    for c in budgets:
        try:
            rows.append(optimal_allocation(problem_for(params, skill, c, bounds, family)))
        except InfeasibleBudgetError as exc:
            if on_infeasible != "record":
                raise
            rows.append({"budget": float(c), "error": str(exc)})
    return rows


def markdown_table(rows, flops_unit=1e19):
    """Rows shaped like a budget / params (B) / tokens (T) table."""
    lines = [f"| FLOPs (x{flops_unit:.0e}) | Params (B) | Tokens (T) | boundary |", "|---|---|---|---|"]
    for r in rows:
        if isinstance(r, dict):
            lines.append(f"| {r['budget'] / flops_unit:g} | - | - | infeasible |")
        else:
            lines.append(f"| {r.budget / flops_unit:g} | {r.size / 1e9:.2f} | {r.tokens / 1e12:.2f} | {r.flag} |")
    return "\n".join(lines) + "\n"


__all__ = ["AllocationProblem", "Allocation", "optimal_allocation", "training_bounds", "allocation_table",
           "problem_for", "parse_policy", "markdown_table", "FLAGS"]
