"""Mixture example: a hidden shifted-ReLU over the hypercube plus a K-armed bandit.

Actions are pairs ``(pi', pi)`` with ``pi'`` either a sign vector in
``{-1, 1}^d`` or the sentinel ``BOT``, and ``pi`` an arm in ``[K]``. The mean
reward of model ``(w, k)`` is ``(1 - gamma) h_w(pi') + gamma v_pi`` where
``v`` is 1 at arm ``k`` and ``1 - sqrt(K / 20T)`` elsewhere.

Models are evaluated by formula; distributions over the (huge) action space
are sparse (support + weights).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import CapacityError, InputError
from .model_core import ActionSpace, Model, ModelClass, Noise

BOT = None
EXACT_W_MAX_D = 20
DEFAULT_W_SAMPLES = 1024
DEFAULT_MATERIALIZE_CAP = 2**15


@dataclass(frozen=True)
class ExampleSpec:
    d: int
    K: int
    gamma: float
    T: int

    def __post_init__(self) -> None:
        if self.d < 1 or self.K < 1 or self.T < 1:
            raise InputError("d, K and T must be positive")
        if not (0.0 < self.gamma <= 1.0):
            raise InputError(f"gamma must lie in (0, 1], got {self.gamma}")

    @property
    def shift(self) -> float:
        """``sqrt(K / 20T)``: how far non-special arms sit below 1."""
        return math.sqrt(self.K / (20.0 * self.T))

    @property
    def horizon_ok(self) -> bool:
        """Whether ``T <= exp(d/8)``, the regime where the certificate is guaranteed."""
        return self.T <= math.exp(self.d / 8.0)

    @property
    def default_eps(self) -> float:
        return 1.0 / (3.0 * math.sqrt(self.T))

    @property
    def regret_threshold(self) -> float:
        return self.gamma / 2.0 * self.shift


@dataclass(frozen=True)
class ExampleParams:
    w: tuple[int, ...]
    k: int

    def __post_init__(self) -> None:
        w = tuple(int(x) for x in self.w)
        if any(x not in (-1, 1) for x in w):
            raise InputError("w must be a +-1 vector")
        object.__setattr__(self, "w", w)


@dataclass(frozen=True)
class ExampleAction:
    sign: tuple[int, ...] | None
    arm: int


def _as_sign(x) -> np.ndarray | None:
    if x is BOT:
        return None
    arr = np.asarray(x, dtype=int)
    if not np.all(np.abs(arr) == 1):
        raise InputError("action sign vector must have +-1 entries")
    return arr


def h(w, sign) -> float:
    """Shifted ReLU ``(2/d) max(0, <sign, w> - d/2)``; zero at ``BOT``."""
    s = _as_sign(sign)
    if s is None:
        return 0.0
    w = np.asarray(w, dtype=int)
    if s.shape != w.shape:
        raise InputError(f"sign vector has length {s.size}, expected {w.size}")
    d = w.size
    return 2.0 / d * max(0.0, float(s @ w) - d / 2.0)


def arm_values(spec: ExampleSpec, k: int) -> np.ndarray:
    v = np.full(spec.K, 1.0 - spec.shift)
    v[k] = 1.0
    return v


def f_example(params: ExampleParams, action: ExampleAction, spec: ExampleSpec) -> float:
    if len(params.w) != spec.d:
        raise InputError("parameter w does not match the example dimension d")
    if not (0 <= action.arm < spec.K):
        raise InputError(f"arm {action.arm} out of range")
    return (1 - spec.gamma) * h(params.w, action.sign) + spec.gamma * float(arm_values(spec, params.k)[action.arm])


@dataclass(frozen=True)
class ConstantModel:
    """Reference kernel with the same mean on every action."""

    value: float
    noise: Noise = Noise.GAUSSIAN

    def mean_at(self, action: ExampleAction | None = None) -> float:
        return self.value


def reference_model(spec: ExampleSpec) -> ConstantModel:
    if spec.K > 20 * spec.T:
        raise InputError("K > 20T makes the reference mean negative")
    return ConstantModel(spec.gamma * (1.0 - spec.shift))


# ---------------------------------------------------------------------------
# sparse distributions


@dataclass
class SparseDistribution:
    """Finite-support distribution over example actions.

    ``signs`` is ``(S, d)`` with arbitrary rows where ``is_bot`` is set.
    """

    signs: np.ndarray
    is_bot: np.ndarray
    arms: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.signs = np.asarray(self.signs, dtype=np.int8)
        self.is_bot = np.asarray(self.is_bot, dtype=bool)
        self.arms = np.asarray(self.arms, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=float)
        S = self.weights.size
        if self.signs.ndim != 2 or self.signs.shape[0] != S or self.is_bot.shape != (S,) or self.arms.shape != (S,):
            raise InputError("support arrays have inconsistent shapes")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise InputError("distribution weights must be nonnegative and sum to 1")

    @property
    def d(self) -> int:
        return self.signs.shape[1]

    @classmethod
    def from_arm_occupancy(cls, occupancy, d: int) -> "SparseDistribution":
        """Distribution that always plays ``BOT`` with the given arm frequencies."""
        occ = np.asarray(occupancy, dtype=float)
        K = occ.size
        return cls(np.ones((K, d), dtype=np.int8), np.ones(K, dtype=bool), np.arange(K), occ)

    @classmethod
    def from_actions(cls, actions: list[ExampleAction], weights, d: int) -> "SparseDistribution":
        signs = np.ones((len(actions), d), dtype=np.int8)
        is_bot = np.zeros(len(actions), dtype=bool)
        for i, a in enumerate(actions):
            if a.sign is None:
                is_bot[i] = True
            else:
                signs[i] = a.sign
        return cls(signs, is_bot, [a.arm for a in actions], weights)

    def arm_occupancy(self, K: int) -> np.ndarray:
        return np.bincount(self.arms, weights=self.weights, minlength=K)[:K]


def _hits(W: np.ndarray, p: SparseDistribution) -> np.ndarray:
    """``E_p 1(<w, pi'> >= d/2)`` for each row ``w`` of ``W``."""
    inner = W.astype(np.int32) @ p.signs.T.astype(np.int32)
    hit = (inner * 2 >= p.d) & ~p.is_bot[None, :]
    return hit @ p.weights


def _w_from_index(idx: np.ndarray, d: int) -> np.ndarray:
    # most significant bit first, 0 -> -1: integer order is lexicographic order
    bits = (idx[:, None] >> np.arange(d - 1, -1, -1)[None, :]) & 1
    return (2 * bits - 1).astype(np.int8)


@dataclass
class TildeW:
    w: tuple[int, ...]
    value: float
    mode: str
    note: str = ""


def tilde_w(p: SparseDistribution, spec: ExampleSpec, mode: str = "auto", n_samples: int = DEFAULT_W_SAMPLES, rng=None) -> TildeW:
    """Sign vector minimising the probability that ``p`` lands in its ReLU region."""
    if p.d != spec.d:
        raise InputError("distribution dimension does not match spec")
    if mode == "auto":
        mode = "exact" if spec.d <= EXACT_W_MAX_D else "sampled"
    if mode == "exact":
        if spec.d > EXACT_W_MAX_D:
            raise CapacityError(f"exact w search needs d <= {EXACT_W_MAX_D}, got {spec.d}")
        best_val, best_idx = math.inf, 0
        total = 1 << spec.d
        chunk = 1 << 14
        for start in range(0, total, chunk):
            idx = np.arange(start, min(total, start + chunk), dtype=np.int64)
            vals = _hits(_w_from_index(idx, spec.d), p)
            k = int(np.argmin(vals))
            if vals[k] < best_val:
                best_val, best_idx = float(vals[k]), start + k
        w = _w_from_index(np.array([best_idx]), spec.d)[0]
        return TildeW(tuple(int(x) for x in w), best_val, "exact")
    if mode != "sampled":
        raise InputError(f"unknown tilde_w mode {mode!r}")
    rng = np.random.default_rng(rng)
    W = rng.choice(np.array([-1, 1], dtype=np.int8), size=(n_samples, spec.d))
    vals = _hits(W, p)
    k = int(np.argmin(vals))
    note = (
        "best of uniform samples; if the uniform average is <= exp(-d/8), "
        "at least half of all w achieve <= 2 exp(-d/8) (Markov)"
    )
    return TildeW(tuple(int(x) for x in W[k]), float(vals[k]), "sampled", note)


def tilde_k(p: SparseDistribution, spec: ExampleSpec) -> tuple[int, float]:
    """Least-played arm (lowest index on ties) and its occupancy."""
    occ = p.arm_occupancy(spec.K)
    k = int(np.argmin(occ))
    return k, float(occ[k])


def model_means_on(p: SparseDistribution, params: ExampleParams, spec: ExampleSpec) -> np.ndarray:
    """Mean of model ``params`` on every support point of ``p``."""
    w = np.asarray(params.w, dtype=np.int32)
    inner = p.signs.astype(np.int32) @ w
    hw = np.where(p.is_bot, 0.0, 2.0 / spec.d * np.maximum(0.0, inner - spec.d / 2.0))
    return (1 - spec.gamma) * hw + spec.gamma * arm_values(spec, params.k)[p.arms]


@dataclass
class CertificateCheck:
    info_value: float
    regret_value: float
    info_ok: bool
    regret_ok: bool
    w_tilde: tuple[int, ...]
    w_tilde_value: float
    k_tilde: int
    k_tilde_occupancy: float
    eps: float
    regret_threshold: float
    horizon_ok: bool

    @property
    def passed(self) -> bool:
        return self.info_ok and self.regret_ok


def certificate_check(p: SparseDistribution, spec: ExampleSpec, eps: float | None = None, w_mode: str = "auto", rng=None) -> CertificateCheck:
    """Exhibit a model that is feasible at ``p`` yet has large gamma-regret there.

    Passing for every ``p`` witnesses ``dec >= (gamma/2) sqrt(K/20T)``.
    """
    if abs(p.weights.sum() - 1.0) > 1e-9:
        raise InputError("distribution is not normalised")
    eps = spec.default_eps if eps is None else eps
    tw = tilde_w(p, spec, mode=w_mode, rng=rng)
    k, occ = tilde_k(p, spec)
    params = ExampleParams(tw.w, k)
    f = model_means_on(p, params, spec)
    ref = reference_model(spec).value
    info = float(p.weights @ (f - ref) ** 2)
    # f_M* = 1 for every model in the subclass
    regret = float(p.weights @ (spec.gamma - f))
    return CertificateCheck(
        info_value=info,
        regret_value=regret,
        info_ok=info <= eps**2,
        regret_ok=regret >= spec.regret_threshold,
        w_tilde=tw.w,
        w_tilde_value=tw.value,
        k_tilde=k,
        k_tilde_occupancy=occ,
        eps=eps,
        regret_threshold=spec.regret_threshold,
        horizon_ok=spec.horizon_ok,
    )


@dataclass
class BinomialTail:
    d: int
    exact_tail: Fraction
    hoeffding_bound: float
    ok: bool


def binomial_tail_check(d: int) -> BinomialTail:
    """Exact ``P[Bin(d, 1/2) >= 3d/4]`` against ``exp(-d/8)``."""
    if d < 1:
        raise InputError("d must be positive")
    j0 = -((-3 * d) // 4)  # ceil(3d/4)
    tail = Fraction(sum(math.comb(d, j) for j in range(j0, d + 1)), 2**d)
    bound = math.exp(-d / 8.0)
    return BinomialTail(d, tail, bound, float(tail) <= bound)


# ---------------------------------------------------------------------------
# explicit classes


def _sign_label(w) -> str:
    return "".join("+" if x > 0 else "-" for x in w)


def materialize_class(spec: ExampleSpec, strategy: str = "full", cap: int = DEFAULT_MATERIALIZE_CAP, rng=None, noise: Noise = Noise.GAUSSIAN) -> ModelClass:
    """Explicit subclass (one special arm per model) as a :class:`ModelClass`.

    ``full`` enumerates every ``w`` and uses all ``(2^d + 1) K`` actions.
    ``sampled:N`` draws ``N`` distinct ``w`` and restricts the hypercube part
    of the action space to those ``w`` plus ``BOT``. ``cap`` bounds the number
    of mean-matrix entries (models x actions).
    """
    if strategy == "full":
        ws = [tuple(int(x) for x in row) for row in _w_from_index(np.arange(1 << spec.d), spec.d)] if spec.d <= 30 else None
        if ws is None:
            raise CapacityError("d too large for full materialisation")
    elif strategy.startswith("sampled"):
        _, _, n_w = strategy.partition(":")
        n_w = int(n_w or 16)
        if n_w > 2**spec.d:
            raise InputError(f"cannot sample {n_w} distinct w from 2^{spec.d}")
        rng = np.random.default_rng(rng)
        seen: dict[tuple[int, ...], None] = {}
        while len(seen) < n_w:
            seen.setdefault(tuple(int(x) for x in rng.choice([-1, 1], size=spec.d)), None)
        ws = list(seen)
    else:
        raise InputError(f"unknown materialisation strategy {strategy!r}")

    n_models = len(ws) * spec.K
    n_actions = (len(ws) + 1) * spec.K
    if n_models * n_actions > cap:
        raise CapacityError(f"{n_models} models x {n_actions} actions exceeds the cap of {cap} entries")

    signs = [None] + ws
    actions = [ExampleAction(s, a) for s in signs for a in range(spec.K)]
    labels = tuple(f"{'bot' if a.sign is None else _sign_label(a.sign)}|{a.arm}" for a in actions)
    dist = SparseDistribution.from_actions(actions, np.full(len(actions), 1.0 / len(actions)), spec.d)
    models = []
    for w in ws:
        for k in range(spec.K):
            params = ExampleParams(w, k)
            models.append(Model(f"w={_sign_label(w)};k={k}", model_means_on(dist, params, spec), noise))
    return ModelClass(ActionSpace(labels), tuple(models))


def reference_for_class(model_class: ModelClass, spec: ExampleSpec) -> Model:
    return Model("ref", np.full(model_class.actions.n, reference_model(spec).value), Noise.GAUSSIAN)


def arm_slice_model(spec: ExampleSpec, k: int, noise: Noise = Noise.BERNOULLI, model_id: str | None = None) -> Model:
    """Means ``gamma v`` seen by a policy that always plays ``BOT``.

    The full model's optimum is 1, not the slice maximum ``gamma``; callers
    computing regret must pass ``optimum=1.0``.
    """
    return Model(model_id or f"arms:k={k}", spec.gamma * arm_values(spec, k), noise)


# ---------------------------------------------------------------------------
# policies that ignore the hypercube component


STREAM_ARMS = 100  # base stream for always-BOT runs; arm k uses STREAM_ARMS + k


def always_bot_occupancies(spec: ExampleSpec, policy, n_trials: int, seed: int, noise: Noise = Noise.BERNOULLI, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Arm occupancies of a bandit ``policy`` that always plays ``BOT``.

    Trial ``i`` faces the special arm ``k = i mod K``. Returns the special
    arms and the ``(n_trials, K)`` per-trial occupancies.
    """
    from . import bandit_sim as bs

    arms = np.arange(n_trials) % spec.K
    occ = np.zeros((n_trials, spec.K))
    for k in range(min(spec.K, n_trials)):
        rows = np.flatnonzero(arms == k)
        run = bs.simulate(arm_slice_model(spec, k, noise), policy, spec.T, rows.size, seed, STREAM_ARMS + k, threads=threads)
        occ[rows] = run.occupancy
    return arms, occ
