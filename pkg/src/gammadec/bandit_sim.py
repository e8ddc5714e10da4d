"""Bandit simulation: policies, the stopped wrapper, trial runner and diagnostics.

Policies are *batched*: one row of state per trial, advanced in lockstep.
Each trial draws its randomness up front from its own generator (one
uniform per round for action selection, one noise draw per round), derived
from ``(master seed, stream, trial index)``. A trial's outcome therefore
does not depend on batch size, thread count or the other trials, and two
runs with the same seed and stream share their random streams exactly,
which is the coupling used by the stopped wrapper.
"""

from __future__ import annotations

import copy
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, InputError
from .model_core import Model, Noise, Trajectory

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)

# stream tags keep phases of one experiment on disjoint seeds
STREAM_DEFAULT = 0
STREAM_SELECTION = 1
STREAM_VERIFICATION = 2


def trial_generator(seed: int, stream: int, trial: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(trial)))
    return np.random.Generator(np.random.PCG64(ss))


def sample_reward(model: Model, pi: int, rng: np.random.Generator) -> float:
    f = float(model.mean[pi])
    if model.noise is Noise.GAUSSIAN:
        return f + rng.standard_normal()
    if model.noise is Noise.BERNOULLI:
        return float(rng.random() < f)
    return f + rng.random() - 0.5


def sample_rewards(model: Model, actions, rng: np.random.Generator) -> np.ndarray:
    """Vectorised :func:`sample_reward` over an array of action indices."""
    actions = np.asarray(actions, dtype=int)
    draws = rng.standard_normal(actions.shape) if model.noise is Noise.GAUSSIAN else rng.random(actions.shape)
    return _rewards(model.mean, model.noise, actions, draws)


def _rewards(mean: np.ndarray, noise: Noise, actions: np.ndarray, draws: np.ndarray) -> np.ndarray:
    f = mean[actions]
    if noise is Noise.GAUSSIAN:
        return f + draws
    if noise is Noise.BERNOULLI:
        return (draws < f).astype(float)
    return f + draws - 0.5


# ---------------------------------------------------------------------------
# policies


class Policy:
    """Batched policy interface.

    ``probs(t)`` returns the ``(B, n)`` next-action distribution for round
    ``t`` (0-based) given the history seen through ``update``.
    """

    name = "policy"
    requires_bounded = False

    def start(self, n_actions: int, n_trials: int, T: int) -> None:
        self.n, self.B, self.T = n_actions, n_trials, T

    def probs(self, t: int) -> np.ndarray:
        raise NotImplementedError

    def update(self, t: int, actions: np.ndarray, rewards: np.ndarray) -> None:
        pass

    def _onehot(self, idx: np.ndarray) -> np.ndarray:
        p = np.zeros((self.B, self.n))
        p[np.arange(self.B), idx] = 1.0
        return p


class UniformPolicy(Policy):
    name = "uniform"

    def probs(self, t):
        return np.full((self.B, self.n), 1.0 / self.n)


class ConstantPolicy(Policy):
    """Always plays one fixed action."""

    def __init__(self, action: int):
        self.action = int(action)
        self.name = f"const:{action}"

    def probs(self, t):
        return self._onehot(np.full(self.B, self.action))


class _Counting(Policy):
    def start(self, n_actions, n_trials, T):
        super().start(n_actions, n_trials, T)
        self.counts = np.zeros((n_trials, n_actions))
        self.sums = np.zeros((n_trials, n_actions))

    def update(self, t, actions, rewards):
        rows = np.arange(self.B)
        self.counts[rows, actions] += 1
        self.sums[rows, actions] += rewards


class EtcGreedy(_Counting):
    """Uniform exploration for ``m`` rounds, then greedy on empirical means."""

    def __init__(self, m: int):
        if m < 0:
            raise InputError("exploration length must be >= 0")
        self.m = int(m)
        self.name = f"etc:{m}"

    def probs(self, t):
        if t < self.m:
            return np.full((self.B, self.n), 1.0 / self.n)
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(self.counts > 0, self.sums / self.counts, np.inf)
        return self._onehot(np.argmax(means, axis=1))


class UCB1(_Counting):
    name = "ucb1"

    def probs(self, t):
        if t < self.n:
            return self._onehot(np.full(self.B, t))
        with np.errstate(divide="ignore", invalid="ignore"):
            index = self.sums / self.counts + np.sqrt(2.0 * math.log(t) / self.counts)
        index[self.counts == 0] = np.inf
        return self._onehot(np.argmax(index, axis=1))


class Exp3P(Policy):
    """EXP3.P on gains in [0, 1].

    Defaults follow the high-probability tuning for confidence ``delta``:
    ``beta = sqrt(ln(K/delta)/(TK))``, ``eta = 0.95 sqrt(ln K/(TK))``,
    ``mix = 1.05 sqrt(K ln K / T)`` (capped at 1).
    """

    name = "exp3p"
    requires_bounded = True

    def __init__(self, delta: float | None = None, eta: float | None = None, mix: float | None = None, beta: float | None = None):
        self.delta, self.eta, self.mix, self.beta = delta, eta, mix, beta

    def start(self, n_actions, n_trials, T):
        super().start(n_actions, n_trials, T)
        K = n_actions
        delta = self.delta if self.delta is not None else 1.0 / max(K, 2)
        logK = math.log(K)
        self._eta = self.eta if self.eta is not None else 0.95 * math.sqrt(logK / (T * K))
        self._mix = self.mix if self.mix is not None else min(1.0, 1.05 * math.sqrt(K * logK / T))
        self._beta = self.beta if self.beta is not None else math.sqrt(math.log(K / delta) / (T * K))
        self.G = np.zeros((n_trials, K))

    def probs(self, t):
        z = self._eta * self.G
        z -= z.max(axis=1, keepdims=True)
        w = np.exp(z)
        self._p = (1 - self._mix) * w / w.sum(axis=1, keepdims=True) + self._mix / self.n
        return self._p

    def update(self, t, actions, rewards):
        if np.any(rewards < 0) or np.any(rewards > 1):
            raise ConfigurationError("EXP3.P received a reward outside [0, 1]")
        est = self._beta / self._p
        rows = np.arange(self.B)
        est[rows, actions] += rewards / self._p[rows, actions]
        self.G += est


class StoppedPolicy(Policy):
    """Runs ``base`` until the reference's cumulative true gap reaches ``a T``.

    ``tau`` is the first round ``t`` (1-based) with ``sum_{s<=t} g_ref(pi_s)
    >= a T``, or ``T`` if that never happens; afterwards the reference's best
    action is played deterministically.
    """

    def __init__(self, base: Policy, reference: Model, a: float):
        if a < 0:
            raise InputError("stopping level a must be >= 0")
        self.base, self.reference, self.a = base, reference, float(a)
        self.gaps = reference.gaps()
        self.ref_action = reference.best_action
        self.name = f"stopped({base.name},a={self.a:g})"
        self.requires_bounded = base.requires_bounded

    def start(self, n_actions, n_trials, T):
        super().start(n_actions, n_trials, T)
        self.base.start(n_actions, n_trials, T)
        self.total = np.zeros(n_trials)
        self.stopped = np.zeros(n_trials, dtype=bool)
        self.tau = np.full(n_trials, T, dtype=np.int64)

    def probs(self, t):
        p = self.base.probs(t)
        if self.stopped.any():
            p = np.where(self.stopped[:, None], self._onehot(np.full(self.B, self.ref_action)), p)
        return p

    def update(self, t, actions, rewards):
        self.base.update(t, actions, rewards)
        live = ~self.stopped
        self.total[live] += self.gaps[actions[live]]
        newly = live & (self.total >= self.a * self.T)
        self.tau[newly] = t + 1
        self.stopped |= newly


def make_policy(spec: str) -> Policy:
    """Build a policy from ``uniform``, ``ucb1``, ``exp3p``, ``etc:m`` or ``const:i``."""
    name, _, arg = spec.partition(":")
    if name == "uniform":
        return UniformPolicy()
    if name == "ucb1":
        return UCB1()
    if name == "exp3p":
        return Exp3P(delta=float(arg) if arg else None)
    if name in ("etc", "etc_greedy"):
        if not arg:
            raise InputError("etc needs an exploration length, e.g. etc:100")
        return EtcGreedy(int(arg))
    if name == "const":
        return ConstantPolicy(int(arg))
    raise InputError(f"unknown algorithm {spec!r}")


# ---------------------------------------------------------------------------
# running trials


@dataclass
class SimulationRun:
    """Raw per-trial output of :func:`simulate`."""

    actions: np.ndarray  # (N, T)
    occupancy: np.ndarray  # (N, n): per-trial round average of p_t
    tau: np.ndarray | None
    T: int
    seed: int
    stream: int
    model_id: str
    policy: str
    rewards: np.ndarray | None = None

    @property
    def n_trials(self) -> int:
        return self.actions.shape[0]

    def per_trial_sum(self, values: np.ndarray, upto_tau: bool = False) -> np.ndarray:
        """``sum_t values[pi_t]`` per trial, optionally only for ``t <= tau``."""
        v = np.asarray(values, dtype=float)[self.actions]
        if upto_tau:
            if self.tau is None:
                raise InputError("run has no stopping times")
            mask = np.arange(1, self.T + 1)[None, :] <= self.tau[:, None]
            v = np.where(mask, v, 0.0)
        return v.sum(axis=1)

    def mean_occupancy(self) -> tuple[np.ndarray, np.ndarray]:
        """Occupancy averaged over trials, with its Monte-Carlo standard error."""
        mean = self.occupancy.mean(axis=0)
        if self.n_trials > 1:
            se = self.occupancy.std(axis=0, ddof=1) / math.sqrt(self.n_trials)
        else:
            se = np.zeros_like(mean)
        return mean / mean.sum(), se

    def trajectory(self, i: int) -> Trajectory:
        rewards = () if self.rewards is None else tuple(float(x) for x in self.rewards[i])
        if self.rewards is None:
            rewards = tuple(math.nan for _ in range(self.T))
        tau = None if self.tau is None else int(self.tau[i])
        return Trajectory(tuple(int(a) for a in self.actions[i]), rewards, tau)


def _run_batch(model: Model, policy: Policy, T: int, seed: int, stream: int, trials: Sequence[int], keep_rewards: bool):
    B, n = len(trials), model.n
    u = np.empty((B, T))
    z = np.empty((B, T))
    for r, i in enumerate(trials):
        g = trial_generator(seed, stream, i)
        u[r] = g.random(T)
        z[r] = g.standard_normal(T) if model.noise is Noise.GAUSSIAN else g.random(T)
    policy.start(n, B, T)
    actions = np.empty((B, T), dtype=np.int32)
    rewards = np.empty((B, T)) if keep_rewards else None
    occ = np.zeros((B, n))
    for t in range(T):
        p = policy.probs(t)
        occ += p
        cum = np.cumsum(p, axis=1)
        a = np.minimum((cum <= u[:, t : t + 1]).sum(axis=1), n - 1)
        r = _rewards(model.mean, model.noise, a, z[:, t])
        policy.update(t, a, r)
        actions[:, t] = a
        if keep_rewards:
            rewards[:, t] = r
    tau = policy.tau.copy() if isinstance(policy, StoppedPolicy) else None
    return actions, rewards, occ / T, tau


def simulate(
    model: Model,
    policy: Policy,
    T: int,
    n_trials: int,
    seed: int,
    stream: int = STREAM_DEFAULT,
    *,
    batch_size: int = 512,
    threads: int = 1,
    keep_rewards: bool = False,
) -> SimulationRun:
    """Run ``n_trials`` independent trials of ``policy`` under ``model``."""
    if n_trials < 1 or T < 1:
        raise InputError("need n_trials >= 1 and T >= 1")
    if policy.requires_bounded and not model.noise.bounded:
        raise ConfigurationError(f"{policy.name} needs rewards in [0, 1]; model {model.id!r} has {model.noise.value} noise")
    batches = [list(range(s, min(n_trials, s + batch_size))) for s in range(0, n_trials, batch_size)]

    def work(trials):
        return _run_batch(model, copy.deepcopy(policy), T, seed, stream, trials, keep_rewards)

    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, batches))
    else:
        parts = [work(b) for b in batches]
    actions = np.vstack([p[0] for p in parts])
    rewards = np.vstack([p[1] for p in parts]) if keep_rewards else None
    occ = np.vstack([p[2] for p in parts])
    tau = np.concatenate([p[3] for p in parts]) if parts[0][3] is not None else None
    return SimulationRun(actions, occ, tau, T, int(seed), int(stream), model.id, policy.name, rewards)


@dataclass
class RegretReport:
    reg_gamma: np.ndarray
    reg: np.ndarray
    tau: np.ndarray | None
    occupancy: np.ndarray
    occupancy_se: np.ndarray
    n_trials: int
    seed: int
    gamma: float
    T: int
    extras: dict = field(default_factory=dict)

    def summary(self) -> dict:
        q = np.quantile(self.reg_gamma, QUANTILES)
        return {
            "mean_reg_gamma": float(self.reg_gamma.mean()),
            "mean_reg": float(self.reg.mean()),
            "reg_gamma_quantiles": {f"{k:g}": float(v) for k, v in zip(QUANTILES, q)},
        }

    def to_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "seed": self.seed,
            "gamma": self.gamma,
            "T": self.T,
            "reg_gamma": [float(x) for x in self.reg_gamma],
            "reg": [float(x) for x in self.reg],
            "tau_a": None if self.tau is None else [int(x) for x in self.tau],
            "occupancy": [float(x) for x in self.occupancy],
            "occupancy_se": [float(x) for x in self.occupancy_se],
            **self.summary(),
            **self.extras,
        }

    def csv_rows(self) -> list[dict]:
        rows = []
        for i in range(self.n_trials):
            rows.append(
                {
                    "trial": i,
                    "reg_gamma": float(self.reg_gamma[i]),
                    "reg": float(self.reg[i]),
                    "tau_a": "" if self.tau is None else int(self.tau[i]),
                }
            )
        return rows


def regret_report(run: SimulationRun, model: Model, gamma: float, optimum: float | None = None) -> RegretReport:
    """Regret statistics; ``optimum`` overrides ``f_M*`` for action-space slices."""
    if not (0 < gamma <= 1):
        raise InputError(f"gamma must lie in (0, 1], got {gamma}")
    top = model.best_value if optimum is None else float(optimum)
    reward_sum = run.per_trial_sum(model.mean)
    reg_gamma = run.T * gamma * top - reward_sum
    reg = run.T * top - reward_sum
    occ, se = run.mean_occupancy()
    return RegretReport(reg_gamma, reg, run.tau, occ, se, run.n_trials, run.seed, gamma, run.T)


def run_trials(
    model: Model,
    policy: Policy,
    T: int,
    n_trials: int,
    gamma: float,
    seed: int,
    *,
    stream: int = STREAM_DEFAULT,
    optimum: float | None = None,
    threads: int = 1,
) -> RegretReport:
    run = simulate(model, policy, T, n_trials, seed, stream, threads=threads)
    return regret_report(run, model, gamma, optimum)


# ---------------------------------------------------------------------------
# diagnostics


def kl_and_tv_bound(model: Model, reference: Model, T: int, occupancy=None, trajectory: Trajectory | Sequence[int] | None = None) -> dict:
    """KL between the two reward processes and the total-variation bounds it implies.

    ``kl`` is ``(1/2) sum_t (f_M - f_ref)(pi_t)^2`` along a trajectory, or
    ``T (1/2) E_occ (f_M - f_ref)^2`` for an occupancy. ``tv_bound`` is
    Pinsker's ``sqrt(kl/2)`` (capped at 1); ``tv_sqrt_sum`` is the looser
    ``sqrt(sum (f_M - f_ref)^2)``.
    """
    if model.noise is not Noise.GAUSSIAN or reference.noise is not Noise.GAUSSIAN:
        raise ConfigurationError("KL formula requires unit-variance Gaussian noise")
    diff2 = (model.mean - reference.mean) ** 2
    if (occupancy is None) == (trajectory is None):
        raise InputError("pass exactly one of occupancy or trajectory")
    if trajectory is not None:
        acts = trajectory.actions if isinstance(trajectory, Trajectory) else trajectory
        total = float(diff2[np.asarray(acts, dtype=int)].sum()) if len(acts) else 0.0
    else:
        occ = occupancy.probs if hasattr(occupancy, "probs") else np.asarray(occupancy, dtype=float)
        total = T * float(occ @ diff2)
    kl = 0.5 * total
    return {"kl": kl, "tv_bound": min(1.0, math.sqrt(kl / 2.0)), "tv_sqrt_sum": math.sqrt(total)}


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    closed_hi: bool = False

    def contains(self, x: np.ndarray) -> np.ndarray:
        upper = x <= self.hi if self.closed_hi else x < self.hi
        return (x >= self.lo) & upper

    def to_list(self) -> list:
        return [self.lo, self.hi, self.closed_hi]


def check_partition(intervals: Sequence[Interval], tol: float = 1e-12) -> None:
    if not intervals:
        raise InputError("no intervals given")
    if abs(intervals[0].lo) > tol or abs(intervals[-1].hi - 1.0) > tol or not intervals[-1].closed_hi:
        raise InputError("intervals must start at 0 and end with a closed upper end at 1")
    for left, right in zip(intervals, intervals[1:]):
        if left.closed_hi or abs(left.hi - right.lo) > tol or left.hi < left.lo:
            raise InputError("intervals must be contiguous half-open pieces")


def empirical_interval_mass(values: np.ndarray, intervals: Sequence[Interval]) -> np.ndarray:
    """Fraction of trials whose value falls in each interval of a partition of [0, 1]."""
    check_partition(intervals)
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise InputError("no trials")
    return np.array([iv.contains(x).mean() for iv in intervals])
