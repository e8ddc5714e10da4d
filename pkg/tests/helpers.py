"""Shared instances and independent reference computations for the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np

from gammadec.bandit_sim import Policy
from gammadec.model_core import ActionSpace, Model, ModelClass, Noise


def two_model_class() -> tuple[ModelClass, Model]:
    cls = ModelClass(ActionSpace(("left", "right")), (Model("m1", [0.7, 0.5]), Model("m2", [0.5, 0.7])))
    return cls, Model("ref", [0.5, 0.5])


def needle_class(eps: float, n_needles: int = 4) -> tuple[ModelClass, Model]:
    """Needles of height 1 over a floor of ``1 - 2 eps``; the reference is the floor.

    Every model peaks at 1, so the class has zero spread.
    """
    n = n_needles + 1
    floor = 1.0 - 2.0 * eps
    models = []
    for i in range(n_needles):
        m = np.full(n, floor)
        m[i + 1] = 1.0
        models.append(Model(f"needle{i + 1}", m, Noise.GAUSSIAN))
    return ModelClass(ActionSpace.range(n), tuple(models)), Model("floor", np.full(n, floor))


def random_instance(rng: np.random.Generator, n_max=3, m_max=4):
    n = int(rng.integers(2, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    grid = lambda: rng.integers(0, 11, size=n) / 10.0
    cls = ModelClass(ActionSpace.range(n), tuple(Model(f"M{i}", grid()) for i in range(m)))
    return cls, Model("ref", grid())


# -- oracles written without the package's vectorised code paths ---------------


def oracle_regret(p, mean, gamma):
    top = max(mean)
    return sum(pi * (gamma * top - f) for pi, f in zip(p, mean))


def oracle_info(p, mean, ref):
    return sum(pi * (f - g) ** 2 for pi, f, g in zip(p, mean, ref))


def oracle_dec_grid(means, ref, gamma, eps, G):
    """Pure-python simplex-grid DEC over the class plus the reference."""
    cands = [list(m) for m in means] + [list(ref)]
    n = len(ref)
    best = math.inf
    for comp in itertools.product(range(G + 1), repeat=n - 1):
        if sum(comp) > G:
            continue
        p = [c / G for c in comp] + [(G - sum(comp)) / G]
        vals = [oracle_regret(p, m, gamma) for m in cands if oracle_info(p, m, ref) <= eps**2 + 1e-12]
        best = min(best, max(vals))
    return best


def oracle_dec_offset_grid(means, ref, gamma, lam, G):
    cands = [list(m) for m in means] + [list(ref)]
    best = math.inf
    for k in range(G + 1):
        p = [k / G, 1 - k / G]
        best = min(best, max(oracle_regret(p, m, gamma) - lam * oracle_info(p, m, ref) for m in cands))
    return best


class ScriptedPolicy(Policy):
    """Plays a fixed action sequence in every trial."""

    name = "scripted"

    def __init__(self, actions):
        self.actions = list(actions)

    def probs(self, t):
        return self._onehot(np.full(self.B, self.actions[t % len(self.actions)]))
