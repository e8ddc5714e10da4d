"""Constrained gamma-DEC solvers, the offset relaxation, and certificates.

The constrained problem is

    min_{p in simplex} max_{M in S} { R_M . p  :  I_M . p <= eps^2 }

with ``R_M = gamma f_M* - f_M`` and ``I_M = (f_M - f_ref)^2``, where ``S`` is
the class, optionally together with the reference model. Three methods:

* ``brute``: evaluate the inner max on the simplex grid ``{k/G}``; an upper
  bound on the true value.
* ``clause_enum``: each model is either *kept* (``R_M . p <= t``) or
  *excluded* (``I_M . p >= eps^2 (1 + delta_strict)``); one LP per
  assignment, minimum over assignments. Exact for the perturbed problem.
* ``lagrangian``: ``inf_lambda offset(lambda) + lambda eps^2``; an upper bound
  by weak duality.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import CapacityError, InputError
from .model_core import (
    ActionDistribution,
    Model,
    ModelClass,
    Noise,
    gamma_regret_vector,
    info_vector,
)

METHODS = ("brute", "clause_enum", "lagrangian")
EXACT, UPPER, LOWER = "exact-within-tol", "upper-bound", "lower-bound"

FEAS_TOL = 1e-12  # absolute slack on info <= eps^2 for float round-off
LP_TOL = 1e-9
DEFAULT_GRID = 200
DEFAULT_DELTA_STRICT = 1e-6
DEFAULT_CLAUSE_CAP = 15
DEFAULT_LAMBDA_BRACKET = (1e-3, 1e6)
DEFAULT_GOLDEN_ITERS = 64

_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


@dataclass(frozen=True)
class DecQuery:
    gamma: float
    eps: float
    include_reference_in_max: bool = True

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma <= 1.0):
            raise InputError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not (0.0 <= self.eps <= 1.0):
            raise InputError(f"eps must lie in [0, 1], got {self.eps}")


@dataclass(frozen=True)
class OffsetQuery:
    gamma: float
    lam: float

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma <= 1.0):
            raise InputError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not math.isfinite(self.lam) or self.lam < 0:
            raise InputError(f"lambda must be finite and >= 0, got {self.lam}")


@dataclass
class DecResult:
    value: float
    p_star: np.ndarray | None
    witness_model_id: str | None
    method: str
    feasible_set_at_p_star: list[str]
    bound_direction: str
    tol: float
    details: dict = field(default_factory=dict)

    @property
    def distribution(self) -> ActionDistribution:
        return ActionDistribution(self.p_star)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "p_star": None if self.p_star is None else [float(x) for x in self.p_star],
            "witness_model_id": self.witness_model_id,
            "method": self.method,
            "feasible_set_at_p_star": list(self.feasible_set_at_p_star),
            "bound_direction": self.bound_direction,
            "tol": self.tol,
            "details": self.details,
        }


# ---------------------------------------------------------------------------
# shared helpers


def candidate_models(model_class: ModelClass, reference: Model, include_reference: bool) -> list[Model]:
    """Models the adversary may pick from; the reference goes last if added."""
    if reference.n != model_class.actions.n:
        raise InputError("reference model lives on a different action space")
    models = list(model_class.models)
    if include_reference and reference not in model_class:
        if reference.id in model_class.ids:
            raise InputError(f"reference id {reference.id!r} clashes with a different class member")
        models.append(reference)
    return models


def _coefficients(models: Sequence[Model], reference: Model, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    R = np.vstack([gamma_regret_vector(m, gamma) for m in models])
    I = np.vstack([info_vector(m, reference) for m in models])
    return R, I


def _polish(p: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=float), 0.0, None)
    return p / p.sum()


def _argmax_feasible(regrets: np.ndarray, feasible: np.ndarray) -> tuple[int | None, float]:
    if not feasible.any():
        return None, -math.inf
    vals = np.where(feasible, regrets, -np.inf)
    j = int(np.argmax(vals))
    return j, float(vals[j])


def inner_max(
    p: ActionDistribution | np.ndarray,
    model_class: ModelClass,
    reference: Model,
    query: DecQuery,
    feas_tol: float = FEAS_TOL,
) -> tuple[str | None, float]:
    """Worst feasible model at ``p``: ``(id, expected gamma-regret)``.

    Returns ``(None, -inf)`` when no model is feasible.
    """
    probs = p.probs if isinstance(p, ActionDistribution) else np.asarray(p, dtype=float)
    models = candidate_models(model_class, reference, query.include_reference_in_max)
    R, I = _coefficients(models, reference, query.gamma)
    j, val = _argmax_feasible(R @ probs, I @ probs <= query.eps**2 + feas_tol)
    return (None if j is None else models[j].id), val


def _feasible_ids(models: Sequence[Model], I: np.ndarray, p: np.ndarray, bound: float) -> list[str]:
    return [m.id for m, v in zip(models, I @ p) if v <= bound]


# ---------------------------------------------------------------------------
# simplex grid


def simplex_grid(n: int, G: int, max_points: int = 20_000_000) -> np.ndarray:
    """All points of the simplex with coordinates in ``{0, 1/G, ..., 1}``.

    Rows are ordered lexicographically by the stars-and-bars bar positions,
    which fixes the tie-break order used by the brute-force solver.
    """
    if n < 1 or G < 1:
        raise InputError("grid needs n >= 1 and G >= 1")
    count = math.comb(G + n - 1, n - 1)
    if count > max_points:
        raise CapacityError(f"simplex grid with n={n}, G={G} has {count} points (cap {max_points})")
    if n == 1:
        return np.ones((1, 1))
    bars = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(G + n - 1), n - 1)),
        dtype=np.int64,
        count=count * (n - 1),
    ).reshape(count, n - 1)
    edges = np.hstack([np.full((count, 1), -1), bars, np.full((count, 1), G + n - 1)])
    return (np.diff(edges, axis=1) - 1) / G


def _solve_brute(models, R, I, query, grid: int, chunk: int = 200_000):
    n = R.shape[1]
    P = simplex_grid(n, grid)
    bound = query.eps**2 + FEAS_TOL
    best_val, best_row, best_j = math.inf, -1, None
    for start in range(0, P.shape[0], chunk):
        block = P[start : start + chunk]
        vals = np.where(block @ I.T <= bound, block @ R.T, -np.inf)
        inner = vals.max(axis=1)
        k = int(np.argmin(inner))
        if inner[k] < best_val:
            best_val, best_row = float(inner[k]), start + k
            best_j = int(np.argmax(vals[k])) if np.isfinite(inner[k]) else None
    p = P[best_row]
    L = float(np.abs(R).max())
    details = {
        "grid": grid,
        "grid_points": int(P.shape[0]),
        "grid_error_bound": 2.0 * L / grid,
        "coefficient_bound": L,
    }
    return best_val, p, best_j, details


# ---------------------------------------------------------------------------
# linear programs


def _lp_min_max(
    n: int,
    keep_rows: np.ndarray,
    exclude_rows: np.ndarray | None = None,
    exclude_rhs: float = 1.0,
):
    """``min t`` s.t. ``keep_rows @ p <= t``, ``exclude_rows @ p >= rhs``, p in simplex.

    Returns ``(p, t)`` or ``None`` when infeasible; ``t`` is ``-inf`` when
    there are no kept rows and the exclusions are feasible.
    """
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub, b_ub = [], []
    for row in keep_rows:
        A_ub.append(np.append(row, -1.0))
        b_ub.append(0.0)
    if exclude_rows is not None:
        for row in exclude_rows:
            A_ub.append(np.append(-row, 0.0))
            b_ub.append(-exclude_rhs)
    unbounded_t = len(keep_rows) == 0
    bounds = [(0.0, 1.0)] * n + [(0.0, 0.0) if unbounded_t else (None, None)]
    res = linprog(
        c,
        A_ub=np.array(A_ub) if A_ub else None,
        b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.append(np.ones(n), 0.0)[None, :],
        b_eq=np.array([1.0]),
        bounds=bounds,
        method="highs",
        options=_HIGHS_OPTIONS,
    )
    if res.status == 2:
        return None
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    p = _polish(res.x[:n])
    if unbounded_t:
        return p, -math.inf
    return p, float(np.max(keep_rows @ p))


def _exclusion_threshold(eps: float, delta_strict: float) -> float:
    # With eps = 0 the relative perturbation vanishes; fall back to an absolute one.
    return eps**2 * (1.0 + delta_strict) if eps > 0 else delta_strict


def _solve_clause(models, R, I, query, delta_strict: float, cap: int):
    if len(models) > cap:
        raise CapacityError(f"clause enumeration over {len(models)} models exceeds the cap of {cap}")
    n = R.shape[1]
    thr = _exclusion_threshold(query.eps, delta_strict)
    excludable = [j for j in range(len(models)) if I[j].max() >= thr]
    forced = [j for j in range(len(models)) if j not in excludable]
    best = None
    lp_count = 0
    for mask in range(2 ** len(excludable)):
        excluded = [excludable[b] for b in range(len(excludable)) if mask >> b & 1]
        kept = sorted(forced + [j for j in excludable if j not in excluded])
        lp_count += 1
        # rows scaled by 1/thr so the strict margin dominates the LP tolerance
        out = _lp_min_max(n, R[kept], I[excluded] / thr if excluded else None, 1.0)
        if out is None:
            continue
        p, t = out
        if best is None or t < best[1] - LP_TOL:
            best = (p, t, mask, excluded, kept)
    if best is None:
        raise RuntimeError("no clause assignment is feasible; the all-kept assignment always is")
    p, t, mask, excluded, kept = best
    # perturbed feasibility at p*: strictly inside the exclusion margin
    mid = query.eps**2 * (1.0 + delta_strict / 2) if query.eps > 0 else delta_strict / 2
    j, val = _argmax_feasible(R @ p, I @ p < mid)
    details = {
        "delta_strict": delta_strict,
        "exclusion_threshold": thr,
        "assignment": int(mask),
        "excluded": [models[k].id for k in excluded],
        "kept": [models[k].id for k in kept],
        "lp_value": t,
        "lp_count": lp_count,
        "excludable": [models[k].id for k in excludable],
        "strict_gap": thr - query.eps**2,
    }
    return val, p, j, details


def dec_offset(
    model_class: ModelClass,
    reference: Model,
    query: OffsetQuery,
    include_reference: bool = True,
) -> tuple[float, np.ndarray]:
    """Offset DEC ``min_p max_M E_p[gamma f_M* - f_M] - lam E_p (f_M - f_ref)^2``.

    Solved exactly as the LP ``min t`` s.t. one linear constraint per model.
    """
    models = candidate_models(model_class, reference, include_reference)
    R, I = _coefficients(models, reference, query.gamma)
    rows = R - query.lam * I
    if not np.all(np.isfinite(rows)):
        raise InputError("non-finite offset coefficients")
    p, t = _lp_min_max(R.shape[1], rows)
    return t, p


def _is_unimodal(values: Sequence[float], tol: float = 1e-10) -> bool:
    k = int(np.argmin(values))
    left = all(values[i] >= values[i + 1] - tol for i in range(k))
    right = all(values[i] <= values[i + 1] + tol for i in range(k, len(values) - 1))
    return left and right


def _solve_lagrangian(models, model_class, reference, query, bracket, iters: int, grid_points: int = 65):
    eps2 = query.eps**2
    include = query.include_reference_in_max
    evaluated: dict[float, tuple[float, np.ndarray]] = {}

    def g(lam: float) -> float:
        if lam not in evaluated:
            v, p = dec_offset(model_class, reference, OffsetQuery(query.gamma, lam), include)
            evaluated[lam] = (v + lam * eps2, p)
        return evaluated[lam][0]

    lo, hi = math.log(bracket[0]), math.log(bracket[1])
    grid = [math.exp(x) for x in np.linspace(lo, hi, grid_points)]
    values = [g(lam) for lam in grid]
    g(0.0)
    quasi_convex = _is_unimodal(values)
    if quasi_convex:
        k = int(np.argmin(values))
        a = math.log(grid[max(k - 1, 0)])
        b = math.log(grid[min(k + 1, len(grid) - 1)])
        ratio = (math.sqrt(5) - 1) / 2
        c, d = b - ratio * (b - a), a + ratio * (b - a)
        gc, gd = g(math.exp(c)), g(math.exp(d))
        for _ in range(iters):
            if gc <= gd:
                b, d, gd = d, c, gc
                c = b - ratio * (b - a)
                gc = g(math.exp(c))
            else:
                a, c, gc = c, d, gd
                d = a + ratio * (b - a)
                gd = g(math.exp(d))
    else:
        for x in np.linspace(lo, hi, 1025):
            g(math.exp(x))
    lam_best = min(evaluated, key=lambda k: (evaluated[k][0], k))
    value, p = evaluated[lam_best]
    details = {
        "lambda": lam_best,
        "lambda_bracket": list(bracket),
        "quasi_convex_on_grid": quasi_convex,
        "evaluations": len(evaluated),
        "offset_value": value - lam_best * eps2,
    }
    return value, p, details


# ---------------------------------------------------------------------------
# public solvers


def dec_constrained(
    model_class: ModelClass,
    reference: Model,
    query: DecQuery,
    method: str = "clause_enum",
    *,
    grid: int = DEFAULT_GRID,
    delta_strict: float = DEFAULT_DELTA_STRICT,
    clause_cap: int = DEFAULT_CLAUSE_CAP,
    lambda_bracket: tuple[float, float] = DEFAULT_LAMBDA_BRACKET,
    golden_iters: int = DEFAULT_GOLDEN_ITERS,
) -> DecResult:
    """Constrained gamma-DEC of ``model_class`` against ``reference``."""
    if method == "clause":
        method = "clause_enum"
    if method not in METHODS:
        raise InputError(f"unknown method {method!r}; expected one of {METHODS}")
    models = candidate_models(model_class, reference, query.include_reference_in_max)
    R, I = _coefficients(models, reference, query.gamma)
    eps2 = query.eps**2

    if method == "brute":
        value, p, j, details = _solve_brute(models, R, I, query, grid)
        feas_bound, direction, tol = eps2 + FEAS_TOL, UPPER, details["grid_error_bound"]
    elif method == "clause_enum":
        value, p, j, details = _solve_clause(models, R, I, query, delta_strict, clause_cap)
        feas_bound = eps2 * (1.0 + delta_strict / 2) if query.eps > 0 else delta_strict / 2
        direction, tol = EXACT, LP_TOL
    else:
        value, p, details = _solve_lagrangian(models, model_class, reference, query, lambda_bracket, golden_iters)
        feas_bound, direction, tol = eps2 + FEAS_TOL, UPPER, LP_TOL
        j, _ = _argmax_feasible(R @ p, I @ p <= feas_bound)

    return DecResult(
        value=float(value),
        p_star=np.asarray(p, dtype=float),
        witness_model_id=None if j is None else models[j].id,
        method=method,
        feasible_set_at_p_star=_feasible_ids(models, I, p, feas_bound),
        bound_direction=direction,
        tol=float(tol),
        details=details,
    )


# ---------------------------------------------------------------------------
# sup over reference models


@dataclass(frozen=True)
class ReferenceFamily:
    constants_step: float | None = None
    members: bool = False
    pairs_step: float | None = None

    @classmethod
    def parse(cls, text: str) -> "ReferenceFamily":
        """Parse ``constants:step=0.05,members,pairs:step=0.25``."""
        kw: dict = {}
        for part in filter(None, (s.strip() for s in text.split(","))):
            name, _, arg = part.partition(":")
            step = None
            if arg:
                key, _, val = arg.partition("=")
                if key != "step":
                    raise InputError(f"unknown family option {arg!r}")
                step = float(val)
                if not (0 < step <= 1):
                    raise InputError(f"family step must lie in (0, 1], got {step}")
            if name == "constants":
                kw["constants_step"] = step or 0.05
            elif name == "members":
                kw["members"] = True
            elif name == "pairs":
                kw["pairs_step"] = step or 0.25
            else:
                raise InputError(f"unknown family member {name!r}")
        return cls(**kw)

    def candidates(self, model_class: ModelClass) -> list[Model]:
        n = model_class.actions.n
        out: list[Model] = []
        if self.constants_step:
            k_max = int(round(1.0 / self.constants_step))
            for k in range(k_max + 1):
                c = min(1.0, round(k * self.constants_step, 12))
                out.append(Model(f"const:{c:g}", np.full(n, c), Noise.GAUSSIAN))
        if self.members:
            out.extend(model_class.models)
        if self.pairs_step:
            k_max = int(round(1.0 / self.pairs_step))
            weights = [round(k * self.pairs_step, 12) for k in range(1, k_max) if k * self.pairs_step < 1]
            for (i, a), (j, b) in itertools.combinations(enumerate(model_class.models), 2):
                for w in weights:
                    out.append(Model(f"mix:{a.id}:{b.id}:{w:g}", w * a.mean + (1 - w) * b.mean, Noise.GAUSSIAN))
        return out


@dataclass
class SupResult:
    value: float
    reference: Model
    result: DecResult
    scores: list[tuple[str, float]]
    bound_direction: str = LOWER

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "reference_id": self.reference.id,
            "reference_mean": [float(x) for x in self.reference.mean],
            "bound_direction": self.bound_direction,
            "result": self.result.to_dict(),
            "scores": [[i, v] for i, v in self.scores],
        }


def dec_sup_reference(
    model_class: ModelClass,
    query: DecQuery,
    family: ReferenceFamily | str,
    method: str = "clause_enum",
    **solver_kw,
) -> SupResult:
    """Max over a finite reference family of ``dec(class + {ref}, ref)``.

    A lower bound on the sup over all kernels; ties keep the first candidate.
    """
    if isinstance(family, str):
        family = ReferenceFamily.parse(family)
    refs = family.candidates(model_class)
    if not refs:
        raise InputError("reference family is empty")
    q = DecQuery(query.gamma, query.eps, include_reference_in_max=True)
    best: tuple[Model, DecResult] | None = None
    scores = []
    for ref in refs:
        # a candidate whose id clashes with a different member gets a fresh id
        if ref.id in model_class.ids and ref not in model_class:
            ref = Model(f"ref:{ref.id}", ref.mean, ref.noise)
        res = dec_constrained(model_class, ref, q, method, **solver_kw)
        scores.append((ref.id, res.value))
        if best is None or res.value > best[1].value + LP_TOL:
            best = (ref, res)
    return SupResult(best[1].value, best[0], best[1], scores)


# ---------------------------------------------------------------------------
# certificates


@dataclass
class CertificateReport:
    passed: bool
    checks: dict[str, dict]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": self.checks}


def certify(result: DecResult, model_class: ModelClass, reference: Model, query: DecQuery) -> CertificateReport:
    """Re-verify a :class:`DecResult` from scratch; failures become report entries."""
    checks: dict[str, dict] = {}

    def record(name: str, ok: bool, residual: float) -> None:
        checks[name] = {"ok": bool(ok), "residual": float(residual)}

    models = candidate_models(model_class, reference, query.include_reference_in_max)
    by_id = {m.id: m for m in models}
    R, I = _coefficients(models, reference, query.gamma)
    eps2 = query.eps**2

    p = None if result.p_star is None else np.asarray(result.p_star, dtype=float)
    if p is None or p.shape != (R.shape[1],):
        record("simplex", False, math.inf)
        return CertificateReport(False, checks)
    sum_res = abs(p.sum() - 1.0)
    neg_res = max(0.0, -float(p.min()))
    record("simplex", sum_res <= 1e-9 and neg_res <= 1e-12, max(sum_res, neg_res))

    if result.method == "clause_enum":
        delta = result.details.get("delta_strict", DEFAULT_DELTA_STRICT)
        # same cut as the solver: excluded models sit at or above eps^2 (1 + delta)
        feas_slack = eps2 * delta / 2 if query.eps > 0 else delta / 2
    else:
        feas_slack = FEAS_TOL

    w = result.witness_model_id
    if w is None:
        none_feasible = not np.any(I @ p <= eps2 + feas_slack)
        record("witness_feasible", none_feasible, 0.0 if none_feasible else math.inf)
        record("value_consistent", result.value == -math.inf, 0.0)
    else:
        wi = [m.id for m in models].index(w) if w in by_id else None
        if wi is None:
            record("witness_feasible", False, math.inf)
        else:
            info_w = float(I[wi] @ p)
            record("witness_feasible", info_w <= eps2 + feas_slack, max(0.0, info_w - eps2))
            reg_w = float(R[wi] @ p)
            if result.bound_direction == EXACT:
                record("value_consistent", abs(result.value - reg_w) <= result.tol, abs(result.value - reg_w))
            else:
                record("value_consistent", result.value >= reg_w - LP_TOL, max(0.0, reg_w - result.value))
            # the witness must be the worst model among those feasible at p
            feas = I @ p <= eps2 + feas_slack
            _, top = _argmax_feasible(R @ p, feas)
            record("witness_is_max", reg_w >= top - max(result.tol, LP_TOL), max(0.0, top - reg_w))

    if result.method == "clause_enum" and "assignment" in result.details:
        thr = result.details["exclusion_threshold"]
        ids = [m.id for m in models]
        excl = [ids.index(i) for i in result.details["excluded"] if i in ids]
        kept = [ids.index(i) for i in result.details["kept"] if i in ids]
        ex_res = max([0.0] + [thr - float(I[j] @ p) for j in excl])
        record("clause_exclusions", ex_res <= LP_TOL * max(thr, 1.0), ex_res)
        lp_value = result.details["lp_value"]
        kept_res = max([0.0] + [float(R[j] @ p) - lp_value for j in kept])
        record("clause_kept", kept_res <= LP_TOL, kept_res)
        record("strict_gap", True, result.details.get("strict_gap", 0.0))

    return CertificateReport(all(c["ok"] for c in checks.values()), checks)
