"""Per-algorithm lower-bound pipeline for localized model classes.

For a fixed subject algorithm the pipeline computes the DEC value ``Delta``
and the derived levels, picks a stopping level from the algorithm's
behaviour under the reference model, finds the hard model for the
stopped algorithm's occupancy and finally measures how often the
(unstopped) algorithm suffers large gamma-regret on that model.

The guarantee being tested quantifies over all algorithms; a run here
only ever certifies the subject algorithm it was given.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bandit_sim as bs
from .dec_solver import EXACT, DecQuery, DecResult, dec_constrained, inner_max
from .errors import ConfigurationError, InputError
from .model_core import Model, ModelClass, Noise, localization

SIGMA = 3.0  # width of every Monte-Carlo error bar
HEADER = "per-algorithm check: the outcome certifies only the subject algorithm named here"


@dataclass(frozen=True)
class TheoremConfig:
    C: int
    eps: float
    T: int
    gamma: float

    def __post_init__(self) -> None:
        if self.T < 1:
            raise InputError("T must be >= 1")
        if not (0 < self.gamma <= 1):
            raise InputError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not (0 <= self.eps <= 1):
            raise InputError(f"eps must lie in [0, 1], got {self.eps}")
        if self.C < 1:
            raise InputError("C must be a positive integer")

    @property
    def eps_max(self) -> float:
        return 1.0 / (3 * self.C * math.sqrt(self.T))

    def violations(self) -> list[str]:
        out = []
        if self.C < 2:
            out.append(f"C = {self.C} < 2")
        if self.eps < 4.0 / self.T:
            out.append(f"eps = {self.eps:.6g} < 4/T = {4.0 / self.T:.6g}")
        if self.eps > self.eps_max:
            out.append(f"eps = {self.eps:.6g} > 1/(3C sqrt T) = {self.eps_max:.6g}")
        return out


@dataclass
class DerivedQuantities:
    delta: float
    delta_direction: str
    delta_tol: float
    rho: float
    spread: float
    rho_hat: float
    a_max: float
    intervals: list[bs.Interval]
    threshold: float
    target_prob: float
    C: int
    T: int
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def level(self, i: int) -> float:
        """Stopping level for interval ``i`` (1-based)."""
        if not (1 <= i <= self.C):
            raise InputError(f"interval index {i} outside 1..{self.C}")
        if i < self.C:
            return self.rho_hat * i / self.C
        return self.a_max - 2.0 / self.T

    def levels(self) -> list[float]:
        return [self.level(i) for i in range(1, self.C + 1)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["intervals"] = [iv.to_list() for iv in self.intervals]
        d["levels"] = self.levels()
        return d


def make_intervals(rho_hat: float, C: int) -> list[bs.Interval]:
    cuts = [rho_hat * i / C for i in range(C)]
    out = [bs.Interval(cuts[i - 1], cuts[i]) for i in range(1, C)]
    out.append(bs.Interval(cuts[C - 1], 1.0, closed_hi=True))
    return out


def derive(
    model_class: ModelClass,
    reference: Model,
    config: TheoremConfig,
    dec_result: DecResult,
    rho: float | None = None,
) -> DerivedQuantities:
    """Derived levels; precondition failures are listed, not raised.

    ``rho`` is the localization radius used by the construction. Any value
    at least the class's spread is admissible; the default is the smallest
    admissible radius that also meets ``rho >= 6 C^2 eps``.
    """
    C, eps, gamma = config.C, config.eps, config.gamma
    spread = localization(model_class)
    floor = 6 * C * C * eps
    if rho is None:
        rho = max(spread, floor)
    delta = float(dec_result.value)
    violations = config.violations()
    if rho < spread - 1e-12:
        violations.append(f"rho = {rho:.6g} is below the class spread {spread:.6g}")
    if rho < floor:
        violations.append(f"rho = {rho:.6g} < 6 C^2 eps = {floor:.6g}")
    if delta < floor:
        violations.append(f"Delta = {delta:.6g} < 6 C^2 eps = {floor:.6g}")
    if dec_result.bound_direction != EXACT:
        violations.append(f"Delta is a {dec_result.bound_direction} bound ({dec_result.method}); certification needs an exact value")
    rho_hat = min(rho, delta + 1 - gamma)
    return DerivedQuantities(
        delta=delta,
        delta_direction=dec_result.bound_direction,
        delta_tol=float(dec_result.tol),
        rho=float(rho),
        spread=spread,
        rho_hat=rho_hat,
        a_max=delta + (1 - gamma) * reference.best_value,
        intervals=make_intervals(rho_hat, C),
        threshold=delta - 3 * rho_hat / C,
        target_prob=1.0 / (3 * C),
        C=C,
        T=config.T,
        violations=violations,
    )


# ---------------------------------------------------------------------------
# deterministic claims


@dataclass
class ClaimReport:
    name: str
    lhs: float
    rhs: float
    slack: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def check_claim_diff(model: Model, reference: Model, derived: DerivedQuantities, a: float, eps: float, gamma: float) -> ClaimReport:
    """``gamma f_M* - f_ref* >= Delta - a - 2 eps``, exact up to Delta's tolerance."""
    lhs = gamma * model.best_value - reference.best_value
    rhs = derived.delta - a - 2 * eps
    slack = derived.delta_tol
    return ClaimReport("diff", lhs, rhs, slack, bool(lhs >= rhs - slack), {"model": model.id, "a": a})


def check_claim_gap_full(model_class: ModelClass, reference: Model, derived: DerivedQuantities, eps: float, gamma: float) -> ClaimReport:
    """``gamma f_M* - f_ref* >= Delta - gamma rho - 2 eps`` for every model in the class."""
    rhs = derived.delta - gamma * derived.rho - 2 * eps
    per_model = {m.id: gamma * m.best_value - reference.best_value for m in model_class}
    worst = min(per_model, key=per_model.get)
    lhs = per_model[worst]
    slack = derived.delta_tol
    return ClaimReport("gap_full", lhs, rhs, slack, bool(lhs >= rhs - slack), {"worst_model": worst, "per_model": per_model})


# ---------------------------------------------------------------------------
# Monte-Carlo phases


def _require_gaussian(model_class: ModelClass, reference: Model, policy: bs.Policy) -> None:
    if any(m.noise is not Noise.GAUSSIAN for m in model_class) or reference.noise is not Noise.GAUSSIAN:
        raise ConfigurationError("the lower-bound pipeline needs unit-variance Gaussian models")
    if policy.requires_bounded:
        raise ConfigurationError(f"{policy.name} needs bounded rewards and cannot run on Gaussian models")


def _se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n)


@dataclass
class LevelSelection:
    index: int  # 1-based
    a: float
    a_prime: float
    masses: np.ndarray
    values: np.ndarray  # per-trial (1/T) sum_t g_ref(pi_t)
    run: bs.SimulationRun


def select_level(
    model_class: ModelClass,
    reference: Model,
    policy: bs.Policy,
    derived: DerivedQuantities,
    mc_trials: int,
    seed: int,
    threads: int = 1,
) -> LevelSelection:
    """Pick the heaviest interval of ``(1/T) sum g_ref`` under the reference; ties go low."""
    T = derived.T
    run = bs.simulate(reference, policy, T, mc_trials, seed, bs.STREAM_SELECTION, threads=threads)
    values = run.per_trial_sum(reference.gaps()) / T
    masses = bs.empirical_interval_mass(values, derived.intervals)
    i = int(np.argmax(masses)) + 1
    return LevelSelection(i, derived.level(i), derived.intervals[i - 1].lo, masses, values, run)


@dataclass
class StoppedPhase:
    run: bs.SimulationRun
    occupancy: np.ndarray
    occupancy_se: np.ndarray
    coupling_violations: int
    overshoot_violations: int
    max_overshoot: float


def run_stopped(
    reference: Model,
    policy: bs.Policy,
    a: float,
    T: int,
    mc_trials: int,
    seed: int,
    base_run: bs.SimulationRun | None = None,
    threads: int = 1,
) -> StoppedPhase:
    """Stopped algorithm under the reference, with coupling and overshoot audits.

    Both runs share the selection stream, so they must agree pathwise
    through round ``tau_a``.
    """
    stopped = bs.simulate(reference, bs.StoppedPolicy(policy, reference, a), T, mc_trials, seed, bs.STREAM_SELECTION, threads=threads)
    if base_run is None:
        base_run = bs.simulate(reference, policy, T, mc_trials, seed, bs.STREAM_SELECTION, threads=threads)
    upto = np.arange(1, T + 1)[None, :] <= stopped.tau[:, None]
    mismatch = (stopped.actions != base_run.actions) & upto
    coupling = int(mismatch.any(axis=1).sum())
    partial = stopped.per_trial_sum(reference.gaps(), upto_tau=True) / T
    excess = partial - (a + 1.0 / T)
    occ, se = stopped.mean_occupancy()
    return StoppedPhase(stopped, occ, se, coupling, int((excess > 0).sum()), float(excess.max()))


@dataclass
class AdversaryChoice:
    model_id: str | None
    value: float
    info: float
    info_se: float
    feas_tol: float
    reference_regret: float
    reference_consistent: bool


def adversary_select(
    model_class: ModelClass,
    reference: Model,
    occupancy: np.ndarray,
    per_trial_occupancy: np.ndarray,
    config: TheoremConfig,
    derived: DerivedQuantities,
) -> AdversaryChoice:
    """Worst feasible class model (reference excluded) at the estimated occupancy.

    Feasibility is judged with a slack of three standard errors of the
    information estimate.
    """
    query = DecQuery(config.gamma, config.eps, include_reference_in_max=False)
    n = per_trial_occupancy.shape[0]
    info_se_all = {}
    for m in model_class:
        iv = (m.mean - reference.mean) ** 2
        per = per_trial_occupancy @ iv
        info_se_all[m.id] = float(per.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    feas_tol = SIGMA * max(info_se_all.values())
    mid, value = inner_max(occupancy, model_class, reference, query, feas_tol=feas_tol)
    ref_regret = float(occupancy @ (config.gamma * reference.best_value - reference.mean))
    ref_se = float((per_trial_occupancy @ reference.gaps()).std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    consistent = ref_regret < derived.delta + SIGMA * ref_se + derived.delta_tol
    if mid is None:
        return AdversaryChoice(None, value, math.nan, math.nan, feas_tol, ref_regret, consistent)
    m = model_class.get(mid)
    info = float(occupancy @ ((m.mean - reference.mean) ** 2))
    return AdversaryChoice(mid, value, info, info_se_all[mid], feas_tol, ref_regret, consistent)


@dataclass
class ProbClaim:
    name: str
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _prob_check(name, lhs, n_l, rhs, n_r, direction=">=", details=None) -> ProbClaim:
    sl, sr = _se(lhs, n_l), _se(rhs, n_r)
    width = SIGMA * math.hypot(sl, sr)
    ok = lhs >= rhs - width if direction == ">=" else lhs <= rhs + width
    return ProbClaim(name, lhs, sl, rhs, sr, bool(ok), details or {})


def probabilistic_claims(
    base_run: bs.SimulationRun,
    stopped: StoppedPhase,
    hard: Model,
    reference: Model,
    a: float,
    a_prime: float,
    config: TheoremConfig,
    derived: DerivedQuantities,
) -> list[ProbClaim]:
    T, C, eps, gamma = config.T, config.C, config.eps, config.gamma
    n_base, n_stop = base_run.n_trials, stopped.run.n_trials
    target = 1.0 / (3 * C)
    g_ref = base_run.per_trial_sum(reference.gaps()) / T
    g_hard = stopped.run.per_trial_sum(hard.gaps(), upto_tau=True) / T
    crux1 = abs(a - (derived.a_max - 2.0 / T)) <= 1e-15 and a_prime <= derived.rho_hat
    out = []
    if crux1:
        thr = derived.delta + (1 - gamma) * hard.best_value - derived.rho_hat + a_prime - (4 + 3 * C) * eps
        lhs = float((g_hard >= thr).mean())
        mass = float((g_ref >= a_prime).mean())
        out.append(_prob_check("crux1", lhs, n_stop, mass - target, n_base, details={"threshold": thr, "a": a, "a_prime": a_prime, "gamma_one": gamma == 1.0}))
    else:
        if a_prime >= a:
            raise InputError(f"need a' < a, got a' = {a_prime}, a = {a}")
        thr = derived.delta + (1 - gamma) * hard.best_value - a + a_prime - (2 + 3 * C) * eps
        lhs = float((g_hard >= thr).mean())
        mass = float(((g_ref >= a_prime) & (g_ref < a)).mean())
        out.append(_prob_check("crux3", lhs, n_stop, mass - target, n_base, details={"threshold": thr, "a": a, "a_prime": a_prime}))
    l1 = stopped.run.per_trial_sum(np.abs(hard.mean - reference.mean), upto_tau=True) / T
    freq = float((l1 > 3 * C * eps).mean())
    out.append(_prob_check("eps", freq, n_stop, target, n_stop, direction="<=", details={"bound": 3 * C * eps}))
    info = float(stopped.occupancy @ ((hard.mean - reference.mean) ** 2))
    per = stopped.run.occupancy @ ((hard.mean - reference.mean) ** 2)
    info_se = float(per.std(ddof=1) / math.sqrt(n_stop)) if n_stop > 1 else 0.0
    tv = bs.kl_and_tv_bound(hard, reference, T, occupancy=stopped.occupancy)
    tv_low = math.sqrt(max(info - SIGMA * info_se, 0.0) * T / 4.0)
    out.append(
        ProbClaim(
            "tv", tv["tv_bound"], info_se, target, 0.0, bool(min(tv_low, 1.0) <= target),
            {"kl": tv["kl"], "tv_sqrt_sum": tv["tv_sqrt_sum"], "eps_sqrt_T": eps * math.sqrt(T)},
        )
    )
    return out


def check_claims_probabilistic(
    model_class: ModelClass,
    reference: Model,
    policy: bs.Policy,
    a: float,
    a_prime: float,
    hard_id: str,
    config: TheoremConfig,
    derived: DerivedQuantities,
    mc_trials: int,
    seed: int,
    threads: int = 1,
) -> list[ProbClaim]:
    """Monte-Carlo estimates of both sides of the crux, eps and TV claims."""
    if a_prime >= a and not abs(a - (derived.a_max - 2.0 / config.T)) <= 1e-15:
        raise InputError(f"need a' < a, got a' = {a_prime}, a = {a}")
    _require_gaussian(model_class, reference, policy)
    base = bs.simulate(reference, policy, config.T, mc_trials, seed, bs.STREAM_SELECTION, threads=threads)
    stopped = run_stopped(reference, policy, a, config.T, mc_trials, seed, base_run=base, threads=threads)
    return probabilistic_claims(base, stopped, model_class.get(hard_id), reference, a, a_prime, config, derived)


# ---------------------------------------------------------------------------
# full pipeline

PASS, FAIL, INCONCLUSIVE, PRECONDITIONS = "pass", "fail", "inconclusive", "preconditions"


@dataclass
class AdversaryOutcome:
    status: str
    algorithm: str
    derived: DerivedQuantities
    interval_index: int | None = None
    a: float | None = None
    a_prime: float | None = None
    interval_masses: list[float] | None = None
    model_id: str | None = None
    occupancy: list[float] | None = None
    occupancy_se: list[float] | None = None
    adversary: dict | None = None
    deterministic_claims: list[ClaimReport] = field(default_factory=list)
    probabilistic_claims: list[ProbClaim] = field(default_factory=list)
    tail_prob: float | None = None
    tail_se: float | None = None
    coupling_violations: int = 0
    overshoot_violations: int = 0
    max_overshoot: float | None = None
    forced: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def claims_passed(self) -> bool:
        return all(c.passed for c in self.deterministic_claims) and all(c.passed for c in self.probabilistic_claims)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("derived", "deterministic_claims", "probabilistic_claims")}
        d["header"] = HEADER
        d["derived"] = self.derived.to_dict()
        d["deterministic_claims"] = [c.to_dict() for c in self.deterministic_claims]
        d["probabilistic_claims"] = [c.to_dict() for c in self.probabilistic_claims]
        d["claims_passed"] = self.claims_passed
        return d


def theorem_check(
    model_class: ModelClass,
    reference: Model,
    policy: bs.Policy,
    config: TheoremConfig,
    mc_trials: int = 1000,
    seed: int = 0,
    *,
    verify_trials: int | None = None,
    dec_method: str = "clause_enum",
    dec_result: DecResult | None = None,
    rho: float | None = None,
    force: bool = False,
    threads: int = 1,
) -> AdversaryOutcome:
    """Run the construction for one subject algorithm.

    Refuses with status ``preconditions`` when the derived quantities
    violate the hypotheses, unless ``force`` is set; forced runs say so.
    """
    _require_gaussian(model_class, reference, policy)
    if dec_result is None:
        dec_result = dec_constrained(model_class, reference, DecQuery(config.gamma, config.eps), method=dec_method)
    derived = derive(model_class, reference, config, dec_result, rho)
    out = AdversaryOutcome(PRECONDITIONS, policy.name, derived, forced=force and not derived.ok)
    if not derived.ok and not force:
        return out
    if out.forced:
        out.notes.append("preconditions overridden; the outcome is diagnostic, not a certificate")
    T = config.T
    verify_trials = mc_trials if verify_trials is None else verify_trials

    sel = select_level(model_class, reference, policy, derived, mc_trials, seed, threads)
    out.interval_index, out.a, out.a_prime = sel.index, sel.a, sel.a_prime
    out.interval_masses = [float(x) for x in sel.masses]
    if sel.a >= derived.a_max:
        out.notes.append(f"level a = {sel.a:.6g} is not below a_max = {derived.a_max:.6g}")
    if sel.a < 0:
        out.status = INCONCLUSIVE
        out.notes.append(f"level a = {sel.a:.6g} is negative (Delta below 2/T); the stopped algorithm is undefined")
        return out

    stopped = run_stopped(reference, policy, sel.a, T, mc_trials, seed, base_run=sel.run, threads=threads)
    out.coupling_violations = stopped.coupling_violations
    out.overshoot_violations = stopped.overshoot_violations
    out.max_overshoot = stopped.max_overshoot
    out.occupancy = [float(x) for x in stopped.occupancy]
    out.occupancy_se = [float(x) for x in stopped.occupancy_se]

    choice = adversary_select(model_class, reference, stopped.occupancy, stopped.run.occupancy, config, derived)
    out.adversary = asdict(choice)
    if choice.model_id is None:
        out.status = INCONCLUSIVE
        out.notes.append("no class model is feasible at the estimated occupancy")
        return out
    if not choice.reference_consistent:
        out.notes.append("reference regret at the occupancy reaches Delta; excluding it is not justified")
    hard = model_class.get(choice.model_id)
    out.model_id = hard.id

    out.deterministic_claims = [
        check_claim_diff(hard, reference, derived, sel.a, config.eps, config.gamma),
        check_claim_gap_full(model_class, reference, derived, config.eps, config.gamma),
    ]
    out.probabilistic_claims = probabilistic_claims(sel.run, stopped, hard, reference, sel.a, sel.a_prime, config, derived)

    verify = bs.simulate(hard, policy, T, verify_trials, seed, bs.STREAM_VERIFICATION, threads=threads)
    reg_gamma = T * config.gamma * hard.best_value - verify.per_trial_sum(hard.mean)
    p_hat = float((reg_gamma / T >= derived.threshold).mean())
    out.tail_prob, out.tail_se = p_hat, _se(p_hat, verify_trials)
    out.status = PASS if p_hat >= derived.target_prob - SIGMA * out.tail_se else FAIL
    return out
