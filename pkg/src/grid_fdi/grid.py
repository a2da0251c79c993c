"""Swing-equation dynamics of an inverter-rich transmission grid.

Each bus i carries a phase angle theta_i and a frequency deviation omega_i::

    dtheta_i/dt = omega_i
    M_i domega_i/dt = p_i - p_e,i - D_i omega_i - k_i omega_i

with the electrical power exchanged over the lines
``p_e,i = sum_j B_ij sin(theta_i - theta_j)`` and the inverter droop response
``k_i omega_i``. Integration is explicit Euler.
"""

import logging
import tomllib
from dataclasses import dataclass
from importlib import resources
from typing import Any, Literal

import numpy as np
import numpy.typing as npt

from grid_fdi.errors import ConfigurationError, InfeasibleEquilibriumError, NumericOverflowError

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]
Coupling = Literal["sine", "linear"]

# Any state component above this magnitude is treated as a blow-up.
OVERFLOW_THRESHOLD = 1e6

DEFAULT_SYSTEM_FILE = "default_system.toml"


def _frozen_array(values: Any, name: str, ndim: int) -> Vector:
    try:
        array = np.array(values, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"not a numeric array ({exc})", name) from exc
    if array.ndim != ndim:
        raise ConfigurationError(f"expected a {ndim}-d array, got shape {array.shape}", name)
    array.setflags(write=False)
    return array


def _vector(values: Any, n: int, name: str) -> Vector:
    array = np.asarray(values, dtype=np.float64)
    if array.shape != (n,):
        raise ConfigurationError(f"expected shape ({n},), got {array.shape}", name)
    return array


@dataclass(frozen=True, eq=False)
class GridParams:
    """Static description of an n-bus system. Arrays are copied and made read-only."""

    inertia: Vector
    damping: Vector
    susceptance: Vector
    injection: Vector
    droop: Vector
    coupling: Coupling = "sine"

    def __post_init__(self) -> None:
        for name, ndim in (
            ("inertia", 1),
            ("damping", 1),
            ("susceptance", 2),
            ("injection", 1),
            ("droop", 1),
        ):
            object.__setattr__(self, name, _frozen_array(getattr(self, name), name, ndim))

        n = self.inertia.shape[0]
        if n < 1:
            raise ConfigurationError("at least one bus is required", "inertia")
        for name in ("damping", "injection", "droop"):
            length = getattr(self, name).shape[0]
            if length != n:
                raise ConfigurationError(f"expected {n} entries, got {length}", name)
        if self.susceptance.shape != (n, n):
            raise ConfigurationError(
                f"expected shape ({n}, {n}), got {self.susceptance.shape}", "susceptance"
            )

        for name in ("inertia", "damping", "injection", "droop"):
            bad = np.flatnonzero(~np.isfinite(getattr(self, name)))
            if bad.size:
                raise ConfigurationError("must be finite", f"{name}[{bad[0]}]")
        bad = np.flatnonzero(~(self.inertia > 0))
        if bad.size:
            raise ConfigurationError(f"must be > 0, got {self.inertia[bad[0]]}", f"inertia[{bad[0]}]")
        bad = np.flatnonzero(~(self.damping >= 0))
        if bad.size:
            raise ConfigurationError(f"must be >= 0, got {self.damping[bad[0]]}", f"damping[{bad[0]}]")

        B = self.susceptance
        for check, message in (
            (~np.isfinite(B), "must be finite"),
            (np.diag(np.diag(B)) != 0, "diagonal must be zero"),
            (B < 0, "must be >= 0"),
            (B != B.T, "matrix must be symmetric"),
        ):
            hits = np.argwhere(check)
            if hits.size:
                i, j = hits[0]
                raise ConfigurationError(message, f"susceptance[{i}][{j}]")

        if self.coupling not in ("sine", "linear"):
            raise ConfigurationError(f"unknown coupling {self.coupling!r}", "coupling")

    @property
    def n(self) -> int:
        return self.inertia.shape[0]


@dataclass(frozen=True, eq=False)
class GridState:
    theta: Vector
    omega: Vector

    def __post_init__(self) -> None:
        theta = _frozen_array(self.theta, "theta", 1)
        omega = _frozen_array(self.omega, "omega", 1)
        if theta.shape != omega.shape:
            raise ConfigurationError(
                f"theta has {theta.shape[0]} entries but omega has {omega.shape[0]}", "omega"
            )
        if not (np.isfinite(theta).all() and np.isfinite(omega).all()):
            raise ConfigurationError("state entries must be finite", "state")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "omega", omega)

    @property
    def n(self) -> int:
        return self.theta.shape[0]

    def observation(self) -> Vector:
        """Observation layout: [omega_0..omega_{n-1}, theta_0..theta_{n-1}]."""
        return np.concatenate([self.omega, self.theta])


@dataclass(frozen=True, eq=False)
class Trajectory:
    dt: float
    states: tuple[GridState, ...]

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ConfigurationError(f"must be > 0, got {self.dt}", "dt")
        if len(self.states) < 1:
            raise ConfigurationError("a trajectory holds at least the initial state", "states")
        n = self.states[0].n
        if any(state.n != n for state in self.states):
            raise ConfigurationError("all states must have the same bus count", "states")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    @property
    def n(self) -> int:
        return self.states[0].n

    @property
    def times(self) -> Vector:
        return np.arange(len(self.states)) * self.dt

    @property
    def theta(self) -> Vector:
        return np.stack([state.theta for state in self.states])

    @property
    def omega(self) -> Vector:
        return np.stack([state.omega for state in self.states])


def electrical_power(params: GridParams, theta: Vector) -> Vector:
    theta = _vector(theta, params.n, "theta")
    difference = theta[:, None] - theta[None, :]
    coupling = np.sin(difference) if params.coupling == "sine" else difference
    return (params.susceptance * coupling).sum(axis=1)


def droop_power(k_effective: Vector, omega: Vector) -> Vector:
    k_effective = np.asarray(k_effective, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if k_effective.shape != omega.shape:
        raise ConfigurationError(
            f"droop vector shape {k_effective.shape} does not match omega shape {omega.shape}",
            "k_effective",
        )
    return k_effective * omega


def derivatives(params: GridParams, state: GridState, k_effective: Vector) -> tuple[Vector, Vector]:
    k_effective = _vector(k_effective, params.n, "k_effective")
    if state.n != params.n:
        raise ConfigurationError(f"state has {state.n} buses, system has {params.n}", "state")
    p_e = electrical_power(params, state.theta)
    bracket = params.injection - p_e - params.damping * state.omega - droop_power(k_effective, state.omega)
    with np.errstate(over="ignore", invalid="ignore"):
        domega = bracket / params.inertia
    bad = np.flatnonzero(~np.isfinite(domega))
    if bad.size:
        raise NumericOverflowError(f"non-finite frequency derivative at bus {bad[0]}", bus=int(bad[0]))
    return state.omega, domega


def _check_overflow(theta: Vector, omega: Vector) -> None:
    magnitude = np.maximum(np.abs(theta), np.abs(omega))
    bad = np.flatnonzero(~(magnitude <= OVERFLOW_THRESHOLD))
    if bad.size:
        raise NumericOverflowError(
            f"state magnitude exceeded {OVERFLOW_THRESHOLD:g} at bus {bad[0]}", bus=int(bad[0])
        )


def euler_step(params: GridParams, state: GridState, k_effective: Vector, dt: float) -> GridState:
    if not dt >= 0:
        raise ConfigurationError(f"must be >= 0, got {dt}", "dt")
    dtheta, domega = derivatives(params, state, k_effective)
    with np.errstate(over="ignore", invalid="ignore"):
        theta = state.theta + dt * dtheta
        omega = state.omega + dt * domega
    _check_overflow(theta, omega)
    return GridState(theta, omega)


def simulate(
    params: GridParams,
    initial: GridState,
    steps: int,
    dt: float,
    schedule: Vector | None = None,
) -> Trajectory:
    """Integrate ``steps`` Euler steps from ``initial``.

    ``schedule`` is an optional (steps, n) array of effective droop vectors, one
    per step; without it the designed droop vector is used throughout.
    On overflow the raised NumericOverflowError carries the step reached and the
    trajectory up to that step.
    """
    if steps < 0:
        raise ConfigurationError(f"must be >= 0, got {steps}", "steps")
    if not dt > 0:
        raise ConfigurationError(f"must be > 0, got {dt}", "dt")
    if initial.n != params.n:
        raise ConfigurationError(f"state has {initial.n} buses, system has {params.n}", "initial")
    if schedule is not None:
        schedule = np.asarray(schedule, dtype=np.float64)
        if schedule.shape != (steps, params.n):
            raise ConfigurationError(
                f"expected shape ({steps}, {params.n}), got {schedule.shape}", "schedule"
            )

    states = [initial]
    state = initial
    for t in range(steps):
        k_effective = params.droop if schedule is None else schedule[t]
        try:
            state = euler_step(params, state, k_effective, dt)
        except NumericOverflowError as exc:
            exc.step = t
            exc.trajectory = Trajectory(dt, tuple(states))
            exc.add_note(f"simulation aborted after {t} of {steps} steps")
            raise
        states.append(state)
    return Trajectory(dt, tuple(states))


def _power_jacobian(params: GridParams, theta: Vector) -> Vector:
    """d p_e / d theta for the configured coupling."""
    if params.coupling == "sine":
        weights = params.susceptance * np.cos(theta[:, None] - theta[None, :])
    else:
        weights = params.susceptance.copy()
    jacobian = -weights
    np.fill_diagonal(jacobian, weights.sum(axis=1))
    return jacobian


def solve_equilibrium(
    params: GridParams,
    reference_bus: int = 0,
    tol: float = 1e-10,
    max_iterations: int = 50,
) -> GridState:
    """Solve p_i = p_e,i(theta*) with omega* = 0 by damped Newton iteration.

    The angle of ``reference_bus`` is pinned to zero and Newton runs on the
    remaining n-1 angles. Backtracking halves the step until the mismatch
    infinity-norm decreases.
    """
    n = params.n
    if not 0 <= reference_bus < n:
        raise ConfigurationError(f"must be in [0, {n}), got {reference_bus}", "reference_bus")

    imbalance = float(params.injection.sum())
    if abs(imbalance) > tol:
        raise InfeasibleEquilibriumError(
            f"injections sum to {imbalance:.6g}; no equilibrium with zero frequency deviation exists",
            iterations=0,
            residual=abs(imbalance),
        )

    free = np.array([i for i in range(n) if i != reference_bus], dtype=np.intp)
    theta = np.zeros(n)
    mismatch = params.injection - electrical_power(params, theta)
    norm = float(np.max(np.abs(mismatch)))

    def newton_candidate(theta: Vector, mismatch: Vector, norm: float) -> tuple[Vector, Vector, float]:
        jacobian = _power_jacobian(params, theta)[np.ix_(free, free)]
        step = np.linalg.solve(jacobian, mismatch[free])
        alpha = 1.0
        while True:
            candidate = theta.copy()
            candidate[free] += alpha * step
            candidate_mismatch = params.injection - electrical_power(params, candidate)
            candidate_norm = float(np.max(np.abs(candidate_mismatch)))
            if (np.isfinite(candidate_norm) and candidate_norm < norm) or alpha < 1e-4:
                return candidate, candidate_mismatch, candidate_norm
            alpha *= 0.5

    iterations = 0
    while norm > tol:
        if iterations >= max_iterations:
            raise InfeasibleEquilibriumError(
                f"Newton iteration did not converge after {iterations} iterations "
                f"(mismatch {norm:.3e}); injections may exceed line capacity",
                iterations=iterations,
                residual=norm,
            )
        iterations += 1
        try:
            theta, mismatch, norm = newton_candidate(theta, mismatch, norm)
        except np.linalg.LinAlgError as exc:
            raise InfeasibleEquilibriumError(
                f"singular power-flow Jacobian at iteration {iterations}",
                iterations=iterations,
                residual=norm,
            ) from exc
        logger.debug("newton iteration %d: mismatch %.3e", iterations, norm)

    # One polishing step drives the mismatch to rounding level.
    if norm > 0 and free.size:
        try:
            candidate, candidate_mismatch, candidate_norm = newton_candidate(theta, mismatch, norm)
            if candidate_norm < norm:
                theta, norm = candidate, candidate_norm
        except np.linalg.LinAlgError:
            pass

    logger.info("equilibrium solved in %d iterations, mismatch %.3e", iterations, norm)
    return GridState(theta, np.zeros(n))


def default_system_data() -> dict[str, Any]:
    """Raw contents of the shipped 10-bus parameter file."""
    text = (resources.files("grid_fdi") / "data" / DEFAULT_SYSTEM_FILE).read_text(encoding="utf-8")
    return tomllib.loads(text)


def load_default_params() -> GridParams:
    return GridParams(**default_system_data())
