"""Finite bandit model classes and the scalar functionals built on them.

Every vector over actions uses the canonical index order of the owning
:class:`ActionSpace`. Models are immutable; their mean arrays are read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

MEAN_TOL = 1e-12
SIMPLEX_TOL = 1e-9


class Noise(str, Enum):
    GAUSSIAN = "gaussian"  # N(f, 1)
    BERNOULLI = "bernoulli"  # Bernoulli(f)
    UNIFORM = "uniform"  # f + U(-1/2, 1/2)

    @property
    def variance_bound(self) -> float:
        return {"gaussian": 1.0, "bernoulli": 0.25, "uniform": 1.0 / 12.0}[self.value]

    @property
    def bounded(self) -> bool:
        return self is Noise.BERNOULLI


def _frozen(values: Iterable[float] | np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ActionSpace:
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if not labels:
            raise InputError("action space must contain at least one action")
        if len(set(labels)) != len(labels):
            raise InputError("action labels must be distinct")

    @property
    def n(self) -> int:
        return len(self.labels)

    @classmethod
    def range(cls, n: int, prefix: str = "a") -> "ActionSpace":
        return cls(tuple(f"{prefix}{i}" for i in range(n)))


@dataclass(frozen=True, eq=False)
class Model:
    """A probability kernel over a finite action set, described by its means.

    ``mean`` is validated to lie in [0, 1] (tolerance 1e-12, then clipped).
    """

    id: str
    mean: np.ndarray
    noise: Noise = Noise.GAUSSIAN

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float).reshape(-1)
        if mean.size == 0:
            raise InputError(f"model {self.id!r}: mean vector is empty")
        if not np.all(np.isfinite(mean)):
            raise InputError(f"model {self.id!r}: mean contains NaN or Inf")
        if np.any(mean < -MEAN_TOL) or np.any(mean > 1 + MEAN_TOL):
            raise InputError(f"model {self.id!r}: means must lie in [0, 1]")
        object.__setattr__(self, "mean", _frozen(np.clip(mean, 0.0, 1.0)))
        object.__setattr__(self, "noise", Noise(self.noise))
        object.__setattr__(self, "id", str(self.id))

    @property
    def n(self) -> int:
        return int(self.mean.size)

    @property
    def best_action(self) -> int:
        return best_action(self)

    @property
    def best_value(self) -> float:
        return float(self.mean[best_action(self)])

    def gaps(self) -> np.ndarray:
        """Vector of ``f* - f(pi)`` over all actions."""
        return self.best_value - self.mean

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Model):
            return NotImplemented
        return (
            self.id == other.id
            and self.noise == other.noise
            and np.array_equal(self.mean, other.mean)
        )

    def __hash__(self) -> int:
        return hash((self.id, self.noise, self.mean.tobytes()))


@dataclass(frozen=True)
class ModelClass:
    actions: ActionSpace
    models: tuple[Model, ...]

    def __post_init__(self) -> None:
        models = tuple(self.models)
        object.__setattr__(self, "models", models)
        if not models:
            raise InputError("model class must contain at least one model")
        ids = [m.id for m in models]
        if len(set(ids)) != len(ids):
            raise InputError("model ids must be distinct")
        for m in models:
            if m.n != self.actions.n:
                raise InputError(
                    f"model {m.id!r} has {m.n} means but the action space has {self.actions.n}"
                )

    def __len__(self) -> int:
        return len(self.models)

    def __iter__(self):
        return iter(self.models)

    @property
    def ids(self) -> list[str]:
        return [m.id for m in self.models]

    def get(self, model_id: str) -> Model:
        for m in self.models:
            if m.id == model_id:
                return m
        raise InputError(f"no model with id {model_id!r}")

    def __contains__(self, model: object) -> bool:
        return isinstance(model, Model) and any(m == model for m in self.models)

    def with_model(self, model: Model) -> "ModelClass":
        """Class with ``model`` appended, unless an identical model is present."""
        if model in self:
            return self
        return ModelClass(self.actions, self.models + (model,))

    def subclass(self, ids: Sequence[str]) -> "ModelClass":
        return ModelClass(self.actions, tuple(self.get(i) for i in ids))

    def means(self) -> np.ndarray:
        return np.vstack([m.mean for m in self.models])


@dataclass(frozen=True, eq=False)
class ActionDistribution:
    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.array(self.probs, dtype=float).reshape(-1)
        if p.size == 0 or not np.all(np.isfinite(p)):
            raise InputError("distribution must be a finite, nonempty vector")
        if np.any(p < -SIMPLEX_TOL):
            raise InputError("distribution has negative entries")
        if abs(p.sum() - 1.0) > SIMPLEX_TOL:
            raise InputError(f"distribution sums to {p.sum():.12g}, not 1")
        object.__setattr__(self, "probs", _frozen(np.clip(p, 0.0, None)))

    @property
    def n(self) -> int:
        return int(self.probs.size)

    @classmethod
    def point_mass(cls, n: int, index: int) -> "ActionDistribution":
        p = np.zeros(n)
        p[index] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, n: int) -> "ActionDistribution":
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class Trajectory:
    """Actions and rewards of one run; ``tau`` is set for stopped algorithms."""

    actions: tuple[int, ...]
    rewards: tuple[float, ...]
    tau: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if len(self.actions) != len(self.rewards):
            raise InputError("actions and rewards must have the same length")

    @property
    def T(self) -> int:
        return len(self.actions)


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not (0.0 < gamma <= 1.0):
        raise InputError(f"gamma must lie in (0, 1], got {gamma}")
    return gamma


def _check_index(model: Model, pi: int) -> int:
    if not (0 <= int(pi) < model.n):
        raise InputError(f"action index {pi} out of range for {model.n} actions")
    return int(pi)


def _probs(p: ActionDistribution | np.ndarray, n: int) -> np.ndarray:
    probs = p.probs if isinstance(p, ActionDistribution) else np.asarray(p, dtype=float)
    if probs.shape != (n,):
        raise InputError(f"distribution has {probs.size} entries, expected {n}")
    return probs


def best_action(model: Model) -> int:
    # np.argmax returns the first maximiser, i.e. the lowest index on ties.
    return int(np.argmax(model.mean))


def gap(model: Model, pi: int) -> float:
    pi = _check_index(model, pi)
    return model.best_value - float(model.mean[pi])


def instantaneous_gamma_regret(model: Model, pi: int, gamma: float) -> float:
    gamma = _check_gamma(gamma)
    pi = _check_index(model, pi)
    return gamma * model.best_value - float(model.mean[pi])


def localization(model_class: ModelClass | Iterable[Model]) -> float:
    """Spread ``max_M f_M* - min_M f_M*`` of the optimal values."""
    tops = [m.best_value for m in model_class]
    if not tops:
        raise InputError("localization of an empty class is undefined")
    return max(tops) - min(tops)


def gamma_regret_vector(model: Model, gamma: float) -> np.ndarray:
    return _check_gamma(gamma) * model.best_value - model.mean


def expected_gamma_regret(p: ActionDistribution | np.ndarray, model: Model, gamma: float) -> float:
    probs = _probs(p, model.n)
    return float(probs @ gamma_regret_vector(model, gamma))


def info_vector(model: Model, reference: Model) -> np.ndarray:
    if model.n != reference.n:
        raise InputError("models live on different action spaces")
    return (model.mean - reference.mean) ** 2


def squared_info(p: ActionDistribution | np.ndarray, model: Model, reference: Model) -> float:
    """Expected squared mean difference ``E_p (f_M - f_ref)^2``."""
    probs = _probs(p, model.n)
    return float(probs @ info_vector(model, reference))


def regret_gamma_total(traj: Trajectory | Sequence[int], model: Model, gamma: float) -> float:
    actions = traj.actions if isinstance(traj, Trajectory) else traj
    gamma = _check_gamma(gamma)
    if len(actions) == 0:
        return 0.0
    idx = np.asarray(actions, dtype=int)
    if idx.min() < 0 or idx.max() >= model.n:
        raise InputError("trajectory contains actions outside the model's action space")
    return float(np.sum(gamma * model.best_value - model.mean[idx]))


@dataclass(frozen=True)
class NormalizationReport:
    ok: bool
    max_of_maxima: float


def normalization_check(model_class: ModelClass | Iterable[Model], tol: float = 1e-9) -> NormalizationReport:
    top = max(m.best_value for m in model_class)
    return NormalizationReport(ok=math.isclose(top, 1.0, rel_tol=0.0, abs_tol=tol), max_of_maxima=top)
