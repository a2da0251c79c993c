"""Actor-critic networks with a multi-categorical head, written against numpy.

Both networks are fully connected ``2n -> 64 -> 64 -> out`` with tanh hidden
activations. The actor emits ``n + |kappa|`` logits: the first n choose the
target bus, the rest choose the replacement coefficient. Gradients are
computed by hand (reverse mode through the two MLPs) and applied with Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a layer computes
``x @ W + b`` on a batch of row vectors.
"""

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
import numpy.typing as npt

from grid_fdi.env import AttackAction
from grid_fdi.errors import ConfigurationError, NonFiniteError, UsageError
from grid_fdi.grid import Vector

logger = logging.getLogger(__name__)

HIDDEN_SIZE = 64
HIDDEN_LAYERS = 2
OUTPUT_GAIN = 0.01

IndexArray = npt.NDArray[np.intp]
Gradients = dict[str, Vector]


def network_shapes(n: int, kappa_size: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for prefix, outputs in (("actor", n + kappa_size), ("critic", 1)):
        sizes = [2 * n, *([HIDDEN_SIZE] * HIDDEN_LAYERS), outputs]
        for layer in range(len(sizes) - 1):
            shapes[f"{prefix}.{layer}.weight"] = (sizes[layer], sizes[layer + 1])
            shapes[f"{prefix}.{layer}.bias"] = (sizes[layer + 1],)
    return shapes


@dataclass(eq=False)
class PolicyParameters:
    n: int
    kappa: tuple[float, ...]
    tensors: dict[str, Vector]

    def __post_init__(self) -> None:
        self.kappa = tuple(float(value) for value in self.kappa)
        expected = network_shapes(self.n, len(self.kappa))
        if list(self.tensors) != list(expected):
            raise ConfigurationError(
                f"expected tensors {list(expected)}, got {list(self.tensors)}", "tensors"
            )
        for name, shape in expected.items():
            tensor = np.asarray(self.tensors[name], dtype=np.float64)
            if tensor.shape != shape:
                raise ConfigurationError(f"expected shape {shape}, got {tensor.shape}", f"tensors.{name}")
            self.tensors[name] = tensor

    @property
    def kappa_size(self) -> int:
        return len(self.kappa)

    @property
    def num_parameters(self) -> int:
        return sum(tensor.size for tensor in self.tensors.values())

    def copy(self) -> "PolicyParameters":
        return replace(self, tensors={name: tensor.copy() for name, tensor in self.tensors.items()})

    def coefficient_index(self, coefficient: float) -> int:
        try:
            return self.kappa.index(coefficient)
        except ValueError:
            raise UsageError(f"coefficient {coefficient} not in {self.kappa}") from None


def init_policy(seed: int, n: int, kappa: Sequence[float]) -> PolicyParameters:
    """Seeded initialization.

    Weights are uniform in +-1/sqrt(fan_in); both output layers are scaled by
    0.01 so the initial action distribution is close to uniform. Biases start
    at zero.
    """
    rng = np.random.default_rng(seed)
    tensors: dict[str, Vector] = {}
    for name, shape in network_shapes(n, len(kappa)).items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
            continue
        scale = 1.0 / np.sqrt(shape[0])
        if name.endswith(f".{HIDDEN_LAYERS}.weight"):
            scale *= OUTPUT_GAIN
        tensors[name] = rng.uniform(-scale, scale, size=shape)
    return PolicyParameters(n, tuple(kappa), tensors)


def constant_action_policy(
    n: int,
    kappa: Sequence[float],
    target: int,
    coefficient: float,
    confidence: float = 30.0,
) -> PolicyParameters:
    """A policy whose greedy action is always (target, coefficient)."""
    tensors = {name: np.zeros(shape) for name, shape in network_shapes(n, len(kappa)).items()}
    policy = PolicyParameters(n, tuple(kappa), tensors)
    if not 0 <= target < n:
        raise ConfigurationError(f"target bus {target} outside [0, {n})", "target")
    bias = policy.tensors[f"actor.{HIDDEN_LAYERS}.bias"]
    bias[target] = confidence
    bias[n + policy.coefficient_index(coefficient)] = confidence
    return policy


def _forward(policy: PolicyParameters, prefix: str, inputs: Vector) -> tuple[Vector, list[Vector]]:
    """Returns the network output and the input of every layer."""
    activations = [inputs]
    hidden = inputs
    for layer in range(HIDDEN_LAYERS + 1):
        output = hidden @ policy.tensors[f"{prefix}.{layer}.weight"] + policy.tensors[f"{prefix}.{layer}.bias"]
        if not np.isfinite(output).all():
            raise NonFiniteError("non-finite activations", where=f"{prefix}.{layer}")
        if layer == HIDDEN_LAYERS:
            return output, activations
        hidden = np.tanh(output)
        activations.append(hidden)
    raise AssertionError("unreachable")


def _backward(policy: PolicyParameters, prefix: str, activations: list[Vector], d_output: Vector) -> Gradients:
    gradients: Gradients = {}
    delta = d_output
    for layer in range(HIDDEN_LAYERS, -1, -1):
        layer_input = activations[layer]
        gradients[f"{prefix}.{layer}.weight"] = layer_input.T @ delta
        gradients[f"{prefix}.{layer}.bias"] = delta.sum(axis=0)
        if layer > 0:
            # layer_input is the tanh output of the previous layer
            delta = (delta @ policy.tensors[f"{prefix}.{layer}.weight"].T) * (1.0 - layer_input**2)
    return gradients


def _log_softmax(logits: Vector) -> Vector:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _entropy(log_probs: Vector) -> Vector:
    return -(np.exp(log_probs) * log_probs).sum(axis=1)


def _sample(log_probs: Vector, rng: np.random.Generator) -> IndexArray:
    # inverse CDF, one uniform draw per row
    cdf = np.cumsum(np.exp(log_probs), axis=1)
    draws = rng.random(log_probs.shape[0])
    index = (cdf <= draws[:, None]).sum(axis=1)
    return np.minimum(index, log_probs.shape[1] - 1)


@dataclass(frozen=True, eq=False)
class MultiCategoricalDist:
    """Independent categorical factors over the target bus and the coefficient."""

    log_probs_target: Vector
    log_probs_coef: Vector

    @classmethod
    def from_logits(cls, logits: Vector, n: int) -> "MultiCategoricalDist":
        return cls(_log_softmax(logits[:, :n]), _log_softmax(logits[:, n:]))

    @property
    def probs_target(self) -> Vector:
        return np.exp(self.log_probs_target)

    @property
    def probs_coef(self) -> Vector:
        return np.exp(self.log_probs_coef)

    def log_prob(self, targets: IndexArray, coefs: IndexArray) -> Vector:
        rows = np.arange(self.log_probs_target.shape[0])
        return self.log_probs_target[rows, targets] + self.log_probs_coef[rows, coefs]

    def factor_entropies(self) -> tuple[Vector, Vector]:
        return _entropy(self.log_probs_target), _entropy(self.log_probs_coef)

    def entropy(self) -> Vector:
        target, coef = self.factor_entropies()
        return target + coef

    def mode(self) -> tuple[IndexArray, IndexArray]:
        # argmax returns the lowest index among ties
        return np.argmax(self.log_probs_target, axis=1), np.argmax(self.log_probs_coef, axis=1)

    def sample(self, rng: np.random.Generator) -> tuple[IndexArray, IndexArray]:
        return _sample(self.log_probs_target, rng), _sample(self.log_probs_coef, rng)


def _observation_batch(policy: PolicyParameters, observations: Vector) -> Vector:
    batch = np.asarray(observations, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[1] != 2 * policy.n:
        raise ConfigurationError(
            f"expected observations of length {2 * policy.n}, got shape {batch.shape}", "observations"
        )
    return batch


def distribution(policy: PolicyParameters, observations: Vector) -> MultiCategoricalDist:
    logits, _ = _forward(policy, "actor", _observation_batch(policy, observations))
    return MultiCategoricalDist.from_logits(logits, policy.n)


def predict_values(policy: PolicyParameters, observations: Vector) -> Vector:
    values, _ = _forward(policy, "critic", _observation_batch(policy, observations))
    return values[:, 0]


def act(
    policy: PolicyParameters,
    observation: Vector,
    mode: Literal["sample", "greedy"] = "sample",
    rng: np.random.Generator | None = None,
) -> tuple[AttackAction, float, float]:
    """Choose an action for one observation; returns (action, log_prob, value)."""
    dist = distribution(policy, observation)
    value = float(predict_values(policy, observation)[0])
    if mode == "greedy":
        targets, coefs = dist.mode()
    elif mode == "sample":
        if rng is None:
            raise UsageError("sampling requires a random generator")
        targets, coefs = dist.sample(rng)
    else:
        raise UsageError(f"unknown action mode {mode!r}")
    log_prob = float(dist.log_prob(targets, coefs)[0])
    return AttackAction(int(targets[0]), policy.kappa[int(coefs[0])]), log_prob, value


@dataclass(frozen=True, eq=False)
class ActionEvaluation:
    log_probs: Vector
    entropies: Vector
    values: Vector
    dist: MultiCategoricalDist
    targets: IndexArray
    coefs: IndexArray
    actor_activations: list[Vector] = field(repr=False)
    critic_activations: list[Vector] = field(repr=False)


def evaluate_actions(policy: PolicyParameters, observations: Vector, actions: npt.ArrayLike) -> ActionEvaluation:
    """Log-probabilities, entropies and values for a batch of (observation, action) pairs.

    ``actions`` is an integer array of shape (B, 2): target bus and coefficient
    index. The result keeps the forward caches needed by ``backward``.
    """
    batch = _observation_batch(policy, observations)
    actions = np.asarray(actions)
    if actions.ndim != 2 or actions.shape != (batch.shape[0], 2):
        raise UsageError(f"expected actions of shape ({batch.shape[0]}, 2), got {actions.shape}")
    targets = actions[:, 0].astype(np.intp)
    coefs = actions[:, 1].astype(np.intp)
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= policy.n:
        raise UsageError(f"target index out of range [0, {policy.n})")
    if coefs.min(initial=0) < 0 or coefs.max(initial=0) >= policy.kappa_size:
        raise UsageError(f"coefficient index out of range [0, {policy.kappa_size})")

    logits, actor_activations = _forward(policy, "actor", batch)
    values, critic_activations = _forward(policy, "critic", batch)
    dist = MultiCategoricalDist.from_logits(logits, policy.n)
    return ActionEvaluation(
        log_probs=dist.log_prob(targets, coefs),
        entropies=dist.entropy(),
        values=values[:, 0],
        dist=dist,
        targets=targets,
        coefs=coefs,
        actor_activations=actor_activations,
        critic_activations=critic_activations,
    )


@dataclass(frozen=True, eq=False)
class LossGraph:
    """A scalar loss expressed through its partial derivatives with respect to
    the per-sample outputs of one ``evaluate_actions`` call."""

    evaluation: ActionEvaluation
    d_log_probs: Vector
    d_entropies: Vector
    d_values: Vector

    def scaled(self, factor: float) -> "LossGraph":
        return replace(
            self,
            d_log_probs=self.d_log_probs * factor,
            d_entropies=self.d_entropies * factor,
            d_values=self.d_values * factor,
        )


def _factor_logit_gradient(log_probs: Vector, chosen: IndexArray, d_log_prob: Vector, d_entropy: Vector) -> Vector:
    probs = np.exp(log_probs)
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(probs.shape[0]), chosen] = 1.0
    entropy = -(probs * log_probs).sum(axis=1, keepdims=True)
    # d log p(a) / dz = one_hot - p ;  dH / dz = -p (log p + H)
    return d_log_prob[:, None] * (one_hot - probs) - d_entropy[:, None] * probs * (log_probs + entropy)


def backward(policy: PolicyParameters, graph: LossGraph) -> Gradients:
    evaluation = graph.evaluation
    dist = evaluation.dist
    d_logits = np.concatenate(
        [
            _factor_logit_gradient(dist.log_probs_target, evaluation.targets, graph.d_log_probs, graph.d_entropies),
            _factor_logit_gradient(dist.log_probs_coef, evaluation.coefs, graph.d_log_probs, graph.d_entropies),
        ],
        axis=1,
    )
    gradients = _backward(policy, "actor", evaluation.actor_activations, d_logits)
    gradients.update(_backward(policy, "critic", evaluation.critic_activations, graph.d_values[:, None]))
    return {name: gradients[name] for name in policy.tensors}


def clip_grad_norm(gradients: Mapping[str, Vector], max_norm: float) -> tuple[Gradients, float]:
    total = float(np.sqrt(sum(float(np.sum(grad * grad)) for grad in gradients.values())))
    scale = max_norm / (total + 1e-6)
    if scale < 1.0:
        return {name: grad * scale for name, grad in gradients.items()}, total
    return dict(gradients), total


@dataclass(eq=False)
class OptimizerState:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-5
    step: int = 0
    first_moment: dict[str, Vector] = field(default_factory=dict)
    second_moment: dict[str, Vector] = field(default_factory=dict)


def init_optimizer(policy: PolicyParameters, learning_rate: float = 3e-4, eps: float = 1e-5) -> OptimizerState:
    return OptimizerState(
        learning_rate=learning_rate,
        eps=eps,
        first_moment={name: np.zeros_like(tensor) for name, tensor in policy.tensors.items()},
        second_moment={name: np.zeros_like(tensor) for name, tensor in policy.tensors.items()},
    )


def optimizer_step(policy: PolicyParameters, gradients: Mapping[str, Vector], state: OptimizerState) -> PolicyParameters:
    """Adam with bias correction; updates ``policy`` and ``state`` in place."""
    if set(gradients) != set(policy.tensors):
        raise ConfigurationError("gradient names do not match the policy tensors", "gradients")
    for name, tensor in policy.tensors.items():
        grad = gradients[name]
        if grad.shape != tensor.shape:
            raise ConfigurationError(f"expected shape {tensor.shape}, got {grad.shape}", f"gradients.{name}")
        if not np.isfinite(grad).all():
            raise NonFiniteError("non-finite gradient, update rejected", where=name)

    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for name, tensor in policy.tensors.items():
        grad = gradients[name]
        first = state.first_moment[name]
        second = state.second_moment[name]
        first *= state.beta1
        first += (1.0 - state.beta1) * grad
        second *= state.beta2
        second += (1.0 - state.beta2) * grad * grad
        tensor -= state.learning_rate * (first / correction1) / (np.sqrt(second / correction2) + state.eps)
    return policy
