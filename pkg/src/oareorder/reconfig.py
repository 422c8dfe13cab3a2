"""Reconfiguration steps, intermediate states, trajectories and order fitness."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

from .digital_twin import sample_vectors
from .link_model import ChannelPlan, LinkSpec, OAConfig, Oracle, QVector


class Param(str, Enum):
    GAIN = "gain"
    TILT = "tilt"


@dataclass(frozen=True)
class ReconfigStep:
    oa_index: int
    param: Param
    step_id: int


def step_catalog(n_oa: int) -> list[ReconfigStep]:
    """Steps 1..N set the gains, N+1..2N the tilts, in amplifier order."""
    if n_oa < 1:
        raise ValueError("n_oa must be >= 1")
    return ([ReconfigStep(i, Param.GAIN, i + 1) for i in range(n_oa)]
            + [ReconfigStep(i, Param.TILT, n_oa + i + 1) for i in range(n_oa)])


def validate_order(order: Sequence[int], n_steps: int) -> None:
    if len(order) != n_steps or sorted(order) != list(range(1, n_steps + 1)):
        raise ValueError(f"order {list(order)} is not a permutation of 1..{n_steps}")


@dataclass(frozen=True)
class TransitionScenario:
    initial: OAConfig
    target: OAConfig
    monitored: frozenset
    plan: ChannelPlan

    def __post_init__(self):
        object.__setattr__(self, "monitored", frozenset(int(b) for b in self.monitored))
        if not self.monitored:
            raise ValueError("monitored batch set must be nonempty")
        if self.initial.n_oa != self.target.n_oa:
            raise ValueError("initial and target configs differ in amplifier count")
        if not self.monitored <= self.plan.loaded_batches:
            raise ValueError("monitored batches must be loaded in the plan")

    @property
    def n_steps(self) -> int:
        return 2 * self.initial.n_oa


def intermediate_config(scenario: TransitionScenario, order: Sequence[int], k: int) -> OAConfig:
    """Config after the first ``k`` steps of ``order``: those parameters at target, rest at initial."""
    n_steps = scenario.n_steps
    if not 0 <= k <= n_steps:
        raise ValueError(f"k must lie in [0, {n_steps}], got {k}")
    v = scenario.initial.vector()
    tgt = scenario.target.vector()
    done = np.asarray(order[:k], dtype=int) - 1
    v[done] = tgt[done]
    return OAConfig.from_vector(v)


def trajectory_vectors(initial: np.ndarray, target: np.ndarray, orders: np.ndarray) -> np.ndarray:
    """All intermediate config vectors for many orders, shape (m, 2N+1, 2N).

    Parameter ``p`` is at its target value in state ``k`` iff its step sits
    among the first ``k`` positions of the order.
    """
    orders = np.atleast_2d(np.asarray(orders, dtype=int))
    m, n_steps = orders.shape
    position = np.empty_like(orders)
    rows = np.arange(m)[:, None]
    position[rows, orders - 1] = np.arange(n_steps)[None, :]
    k = np.arange(n_steps + 1)[None, :, None]
    at_target = position[:, None, :] < k
    return np.where(at_target, target[None, None, :], initial[None, None, :])


def _q_many(q_model, vectors: np.ndarray) -> np.ndarray:
    if hasattr(q_model, "q_many"):
        return q_model.q_many(vectors)
    return np.array([q_model(OAConfig.from_vector(v)).q_db for v in vectors])


@dataclass
class Trajectory:
    states: list[OAConfig]
    q_per_state: list[QVector]
    scalar_per_state: np.ndarray
    monitored: tuple[int, ...]
    order: tuple[int, ...] = ()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "scalar_q_db"] + [f"q_batch{b}_db" for b in self.monitored])
            for k, (s, q) in enumerate(zip(self.scalar_per_state, self.q_per_state)):
                w.writerow([k, repr(float(s))] + [repr(q[b]) for b in self.monitored])


def trajectory(q_model, scenario: TransitionScenario, order: Sequence[int]) -> Trajectory:
    """Evaluate ``q_model`` (oracle or surrogate) on every state of ``order``."""
    validate_order(order, scenario.n_steps)
    vecs = trajectory_vectors(scenario.initial.vector(), scenario.target.vector(), np.asarray([order]))[0]
    q = _q_many(q_model, vecs)
    mon = sorted(scenario.monitored)
    scalar = q[:, mon].min(axis=1)
    return Trajectory(
        states=[OAConfig.from_vector(v) for v in vecs],
        q_per_state=[QVector(row) for row in q],
        scalar_per_state=scalar,
        monitored=tuple(mon),
        order=tuple(int(s) for s in order),
    )


@dataclass(frozen=True)
class FitnessValue:
    value: float
    mean_q: float
    min_q: float

    @classmethod
    def from_scalars(cls, scalars: Iterable[float]) -> "FitnessValue":
        """Mean over all states plus minimum over the intermediate states.

        The endpoints are shared by every order, so letting them into the
        minimum would make every dip-free order tie at the endpoint value.
        """
        s = np.asarray(list(scalars), dtype=float)
        mean_q = float(np.mean(s))
        min_q = float(np.min(s[1:-1] if s.size > 2 else s))
        return cls(mean_q + min_q, mean_q, min_q)


def fitness(traj: Trajectory) -> FitnessValue:
    """Fitness of a trajectory's monitored-batch scalar curve; see :meth:`FitnessValue.from_scalars`."""
    return FitnessValue.from_scalars(traj.scalar_per_state)


class TrajectoryFitness:
    """Order -> FitnessValue for a fixed scenario and Q model.

    ``many`` evaluates a whole batch of orders with one model call, which is
    what the GA uses for each generation.
    """

    def __init__(self, q_model, scenario: TransitionScenario):
        self.q_model = q_model
        self.scenario = scenario
        self._initial = scenario.initial.vector()
        self._target = scenario.target.vector()
        self._monitored = sorted(scenario.monitored)

    def scalars(self, orders: np.ndarray) -> np.ndarray:
        orders = np.atleast_2d(np.asarray(orders, dtype=int))
        vecs = trajectory_vectors(self._initial, self._target, orders)
        m, n_states, width = vecs.shape
        q = _q_many(self.q_model, vecs.reshape(-1, width))
        return q[:, self._monitored].min(axis=1).reshape(m, n_states)

    def many(self, orders) -> list[FitnessValue]:
        return [FitnessValue.from_scalars(row) for row in self.scalars(orders)]

    def __call__(self, order: Sequence[int]) -> FitnessValue:
        return self.many([order])[0]


def select_best_config(oracle: Callable | Oracle, link: LinkSpec, plan: ChannelPlan, n_candidates: int,
                       rng: np.random.Generator) -> OAConfig:
    """Best of ``n_candidates`` random configs by minimum oracle Q over loaded batches."""
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    cands = sample_vectors(link, n_candidates, rng)
    q = _q_many(oracle, cands)[:, plan.loaded]
    return OAConfig.from_vector(cands[int(np.argmax(q.min(axis=1)))])
