"""Episodic attack environment: one droop coefficient may be falsified per step."""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from grid_fdi.errors import NumericOverflowError, UsageError
from grid_fdi.grid import GridParams, GridState, Trajectory, Vector, euler_step, simulate, solve_equilibrium

logger = logging.getLogger(__name__)


class RewardMode(str, Enum):
    # |omega| - |omega_base|, the attacker objective
    ABS_DEVIATION_DIFF = "abs_deviation_diff"
    # omega - omega_base
    SIGNED_DIFF = "signed_diff"


class EpisodeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    steps: int = Field(500, ge=1)
    dt: float = Field(0.01, gt=0, allow_inf_nan=False)
    ic_noise_half_width: float = Field(0.03, ge=0, allow_inf_nan=False)
    seed: int = 0
    kappa: tuple[float, ...] = Field((-1.0, 0.0, 1.0), min_length=1)
    reward_mode: RewardMode = RewardMode.ABS_DEVIATION_DIFF

    @field_validator("kappa")
    @classmethod
    def _distinct_finite(cls, kappa: tuple[float, ...]) -> tuple[float, ...]:
        if not all(math.isfinite(value) for value in kappa):
            raise ValueError("coefficients must be finite")
        if len(set(kappa)) != len(kappa):
            raise ValueError("coefficients must be distinct")
        return kappa


@dataclass(frozen=True)
class AttackAction:
    target: int
    coefficient: float


@dataclass(frozen=True, eq=False)
class StepResult:
    observation: Vector
    reward: float
    done: bool
    per_bus_delta: Vector
    overflow: bool = False


def per_bus_delta(omega: Vector, omega_base: Vector, mode: RewardMode) -> Vector:
    if mode is RewardMode.ABS_DEVIATION_DIFF:
        return np.abs(omega) - np.abs(omega_base)
    return omega - omega_base


def offline_rewards(
    trajectory: Trajectory,
    baseline: Trajectory,
    mode: RewardMode,
    overflow: bool = False,
) -> Vector:
    """Per-step rewards of an already simulated trajectory against the baseline.

    An episode ended by overflow has one reward more than transitions: the
    failed step scores the last finite state. ``overflow=True`` appends it.
    """
    if trajectory.steps > baseline.steps:
        raise UsageError(f"trajectory has {trajectory.steps} steps, baseline only {baseline.steps}")
    scored = list(range(1, len(trajectory)))
    if overflow:
        scored.append(trajectory.steps)
    return np.array(
        [
            float(np.sum(per_bus_delta(trajectory.states[t].omega, baseline.states[t].omega, mode)))
            for t in scored
        ]
    )


def initial_condition(params: GridParams, episode: EpisodeConfig) -> GridState:
    """Equilibrium plus uniform noise in [-w, w].

    Draws come from ``numpy.random.default_rng(episode.seed)`` (PCG64). Exactly
    2n draws are consumed: draws[0:n] perturb theta, draws[n:2n] perturb omega.
    """
    equilibrium = solve_equilibrium(params)
    rng = np.random.default_rng(episode.seed)
    half_width = episode.ic_noise_half_width
    draws = rng.uniform(-half_width, half_width, size=2 * params.n)
    return GridState(equilibrium.theta + draws[: params.n], equilibrium.omega + draws[params.n :])


class FdiEnv:
    """One attack episode over a frozen initial condition and its no-attack baseline.

    Instances are single-threaded; ``clone`` gives an independent episode that
    shares the immutable initial condition and baseline.
    """

    def __init__(self, params: GridParams, episode: EpisodeConfig, initial: GridState, baseline: Trajectory):
        if baseline.steps != episode.steps:
            raise UsageError(f"baseline has {baseline.steps} steps, episode needs {episode.steps}")
        self.params = params
        self.episode = episode
        self.initial = initial
        self.baseline = baseline
        self._kappa = tuple(float(value) for value in episode.kappa)
        self._start()

    def _start(self) -> None:
        self._t = 0
        self._state = self.initial
        self._states = [self.initial]
        self._rewards: list[float] = []
        self._done = False

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def kappa(self) -> tuple[float, ...]:
        return self._kappa

    @property
    def t(self) -> int:
        return self._t

    @property
    def done(self) -> bool:
        return self._done

    @property
    def state(self) -> GridState:
        return self._state

    @property
    def rewards(self) -> tuple[float, ...]:
        return tuple(self._rewards)

    def clone(self) -> "FdiEnv":
        return FdiEnv(self.params, self.episode, self.initial, self.baseline)

    def observation(self) -> Vector:
        return self._state.observation()

    def reset(self) -> Vector:
        self._start()
        return self.observation()

    def effective_droop(self, action: AttackAction) -> Vector:
        if not 0 <= action.target < self.n:
            raise UsageError(f"target bus {action.target} outside [0, {self.n})")
        if action.coefficient not in self._kappa:
            raise UsageError(f"coefficient {action.coefficient} not in allowed set {self._kappa}")
        k_effective = self.params.droop.copy()
        k_effective[action.target] = action.coefficient
        return k_effective

    def step(self, action: AttackAction) -> StepResult:
        if self._done:
            raise UsageError("episode is done; call reset() before stepping again")
        k_effective = self.effective_droop(action)
        mode = self.episode.reward_mode
        try:
            next_state = euler_step(self.params, self._state, k_effective, self.episode.dt)
        except NumericOverflowError as exc:
            logger.warning("episode terminated at step %d: %s", self._t, exc)
            delta = per_bus_delta(self._state.omega, self.baseline.states[self._t].omega, mode)
            reward = float(np.sum(delta))
            self._rewards.append(reward)
            self._done = True
            return StepResult(self.observation(), reward, True, delta, overflow=True)

        self._t += 1
        self._state = next_state
        self._states.append(next_state)
        delta = per_bus_delta(next_state.omega, self.baseline.states[self._t].omega, mode)
        reward = float(np.sum(delta))
        self._rewards.append(reward)
        self._done = self._t == self.episode.steps
        return StepResult(self.observation(), reward, self._done, delta)

    def cumulative_reward(self) -> float:
        if not self._done:
            raise UsageError(f"episode still running at step {self._t} of {self.episode.steps}")
        return sum(self._rewards)

    def trajectory(self) -> Trajectory:
        return Trajectory(self.episode.dt, tuple(self._states))


def make_env(params: GridParams, episode: EpisodeConfig) -> FdiEnv:
    initial = initial_condition(params, episode)
    baseline = simulate(params, initial, episode.steps, episode.dt)
    logger.debug(
        "environment ready: %d buses, %d steps, seed %d, baseline final max|omega| %.3e",
        params.n,
        episode.steps,
        episode.seed,
        float(np.max(np.abs(baseline.states[-1].omega))),
    )
    return FdiEnv(params, episode, initial, baseline)
