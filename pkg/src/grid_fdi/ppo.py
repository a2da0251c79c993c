"""Proximal policy optimization for the attack environment.

One update cycle: collect ``rollout_steps`` transitions per worker with the
current stochastic policy, estimate advantages with GAE, then run
``update_epochs`` passes of shuffled minibatch steps on the clipped surrogate
plus value and entropy terms.
"""

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from grid_fdi.checkpoint import Checkpoint
from grid_fdi.env import AttackAction, EpisodeConfig, FdiEnv, make_env
from grid_fdi.errors import ConfigurationError, GridFdiError, NonFiniteError, UsageError
from grid_fdi.exports import ArtifactMetadata
from grid_fdi.grid import GridParams, Trajectory, Vector
from grid_fdi.policy import (
    LossGraph,
    OptimizerState,
    PolicyParameters,
    act,
    backward,
    clip_grad_norm,
    evaluate_actions,
    init_optimizer,
    init_policy,
    optimizer_step,
    predict_values,
)

logger = logging.getLogger(__name__)


class PPOConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    clip_epsilon: float = Field(0.2, gt=0, lt=1)
    value_coef: float = Field(0.5, ge=0, allow_inf_nan=False)
    entropy_coef: float = Field(0.001, ge=0, allow_inf_nan=False)
    learning_rate: float = Field(3e-4, gt=0, allow_inf_nan=False)
    gamma: float = Field(0.99, gt=0, le=1)
    gae_lambda: float = Field(0.95, ge=0, le=1)
    rollout_steps: int = Field(500, ge=1)
    minibatch_size: int = Field(64, ge=1)
    update_epochs: int = Field(10, ge=1)
    total_env_steps: int = Field(500_000, ge=1)
    seed: int = 0
    max_grad_norm: float = Field(0.5, gt=0, allow_inf_nan=False)
    adam_eps: float = Field(1e-5, gt=0)
    checkpoint_interval: int = Field(50, ge=1)
    num_workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _consistent_sizes(self) -> "PPOConfig":
        if self.minibatch_size > self.rollout_steps:
            raise ValueError(
                f"minibatch_size ({self.minibatch_size}) must not exceed rollout_steps ({self.rollout_steps})"
            )
        if self.total_env_steps < self.steps_per_update:
            raise ValueError(
                f"total_env_steps ({self.total_env_steps}) is smaller than one update "
                f"({self.rollout_steps} steps x {self.num_workers} workers)"
            )
        return self

    @property
    def steps_per_update(self) -> int:
        return self.rollout_steps * self.num_workers

    @property
    def num_updates(self) -> int:
        return self.total_env_steps // self.steps_per_update


@dataclass(eq=False)
class RolloutBuffer:
    observations: Vector
    actions: np.ndarray
    log_probs: Vector
    values: Vector
    rewards: Vector
    dones: np.ndarray
    last_value: float = 0.0
    episode_rewards: list[float] = field(default_factory=list)
    advantages: Vector | None = None
    returns: Vector | None = None

    def __post_init__(self) -> None:
        size = self.observations.shape[0]
        for name in ("actions", "log_probs", "values", "rewards", "dones"):
            if getattr(self, name).shape[0] != size:
                raise ConfigurationError(f"expected {size} entries, got {getattr(self, name).shape[0]}", name)

    def __len__(self) -> int:
        return self.observations.shape[0]

    @property
    def has_advantages(self) -> bool:
        return self.advantages is not None

    @classmethod
    def concatenate(cls, buffers: Sequence["RolloutBuffer"]) -> "RolloutBuffer":
        if any(not buffer.has_advantages for buffer in buffers):
            raise UsageError("advantages must be computed before buffers are merged")
        merged = cls(
            observations=np.concatenate([b.observations for b in buffers]),
            actions=np.concatenate([b.actions for b in buffers]),
            log_probs=np.concatenate([b.log_probs for b in buffers]),
            values=np.concatenate([b.values for b in buffers]),
            rewards=np.concatenate([b.rewards for b in buffers]),
            dones=np.concatenate([b.dones for b in buffers]),
            last_value=buffers[-1].last_value,
            episode_rewards=[reward for b in buffers for reward in b.episode_rewards],
        )
        merged.advantages = np.concatenate([b.advantages for b in buffers])
        merged.returns = np.concatenate([b.returns for b in buffers])
        return merged


def collect_rollout(env: FdiEnv, policy: PolicyParameters, steps: int, rng: np.random.Generator) -> RolloutBuffer:
    """Play ``steps`` sampled actions, resetting the environment at episode ends.

    The environment is left where the rollout stopped, so the next call
    continues the same episode.
    """
    if policy.n != env.n or policy.kappa != env.kappa:
        raise ConfigurationError(
            f"policy is for {policy.n} buses and {policy.kappa}, environment has {env.n} and {env.kappa}",
            "policy",
        )
    if env.done:
        env.reset()

    observations = np.empty((steps, 2 * env.n))
    actions = np.empty((steps, 2), dtype=np.intp)
    log_probs = np.empty(steps)
    values = np.empty(steps)
    rewards = np.empty(steps)
    dones = np.zeros(steps, dtype=bool)
    episode_rewards: list[float] = []

    for t in range(steps):
        observation = env.observation()
        try:
            action, log_prob, value = act(policy, observation, "sample", rng)
            result = env.step(action)
        except GridFdiError as exc:
            exc.add_note(f"during rollout step {t} (episode step {env.t})")
            raise
        observations[t] = observation
        actions[t] = (action.target, policy.coefficient_index(action.coefficient))
        log_probs[t] = log_prob
        values[t] = value
        rewards[t] = result.reward
        dones[t] = result.done
        if result.done:
            episode_rewards.append(env.cumulative_reward())
            env.reset()

    last_value = 0.0 if dones[-1] else float(predict_values(policy, env.observation())[0])
    return RolloutBuffer(
        observations, actions, log_probs, values, rewards, dones, last_value, episode_rewards
    )


def compute_gae(buffer: RolloutBuffer, gamma: float, gae_lambda: float) -> RolloutBuffer:
    """Fill ``buffer.advantages`` and ``buffer.returns``; episode ends are hard terminals."""
    if buffer.has_advantages:
        raise UsageError("advantages were already computed for this rollout")
    advantages = np.zeros(len(buffer))
    next_value = buffer.last_value
    running = 0.0
    for t in reversed(range(len(buffer))):
        nonterminal = 0.0 if buffer.dones[t] else 1.0
        delta = buffer.rewards[t] + gamma * next_value * nonterminal - buffer.values[t]
        running = delta + gamma * gae_lambda * nonterminal * running
        advantages[t] = running
        next_value = buffer.values[t]
    if not np.isfinite(advantages).all():
        raise NonFiniteError("non-finite advantage estimate", where="gae")
    buffer.advantages = advantages
    buffer.returns = advantages + buffer.values
    return buffer


def normalize_advantages(advantages: Vector, eps: float = 1e-8) -> Vector:
    centered = advantages - advantages.mean()
    std = float(advantages.std())
    return centered / std if std > eps else centered


@dataclass(frozen=True, eq=False)
class Minibatch:
    observations: Vector
    actions: np.ndarray
    old_log_probs: Vector
    advantages: Vector
    returns: Vector

    @classmethod
    def from_buffer(
        cls, buffer: RolloutBuffer, indices: np.ndarray, advantages: Vector | None = None
    ) -> "Minibatch":
        """Gather ``indices``; ``advantages`` overrides the buffer's own estimates."""
        if buffer.advantages is None or buffer.returns is None:
            raise UsageError("compute_gae must run before minibatches are drawn")
        advantages = (buffer.advantages if advantages is None else advantages)[indices]
        return cls(
            buffer.observations[indices],
            buffer.actions[indices],
            buffer.log_probs[indices],
            advantages,
            buffer.returns[indices],
        )


def surrogate_objective(ratios: Vector, advantages: Vector, clip_epsilon: float) -> tuple[Vector, np.ndarray]:
    """Per-sample clipped objective and the mask of samples where the unclipped term is the minimum."""
    unclipped = ratios * advantages
    clipped = np.clip(ratios, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantages
    return np.minimum(unclipped, clipped), unclipped <= clipped


@dataclass(frozen=True, eq=False)
class LossTerms:
    policy_loss: float
    value_loss: float
    entropy: float
    total: float
    approx_kl: float
    clip_fraction: float
    ratios: Vector
    graph: LossGraph


def ppo_loss(policy: PolicyParameters, batch: Minibatch, config: PPOConfig) -> LossTerms:
    """policy_loss + c_V * value_loss - c_H * entropy, with its partial derivatives."""
    evaluation = evaluate_actions(policy, batch.observations, batch.actions)
    size = len(batch.advantages)
    log_ratios = evaluation.log_probs - batch.old_log_probs
    ratios = np.exp(log_ratios)
    objective, unclipped = surrogate_objective(ratios, batch.advantages, config.clip_epsilon)

    policy_loss = -float(objective.mean())
    value_error = evaluation.values - batch.returns
    value_loss = float(np.mean(value_error**2))
    entropy = float(evaluation.entropies.mean())
    total = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy
    if not np.isfinite(total):
        raise NonFiniteError(
            f"loss is not finite (policy {policy_loss}, value {value_loss}, entropy {entropy})", where="loss"
        )

    graph = LossGraph(
        evaluation,
        d_log_probs=-np.where(unclipped, batch.advantages * ratios, 0.0) / size,
        d_entropies=np.full(size, -config.entropy_coef / size),
        d_values=2.0 * config.value_coef * value_error / size,
    )
    return LossTerms(
        policy_loss=policy_loss,
        value_loss=value_loss,
        entropy=entropy,
        total=total,
        approx_kl=float(np.mean((ratios - 1.0) - log_ratios)),
        clip_fraction=float(np.mean(np.abs(ratios - 1.0) > config.clip_epsilon)),
        ratios=ratios,
        graph=graph,
    )


@dataclass(frozen=True)
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    minibatches: int
    epoch_value_losses: tuple[float, ...]


def ppo_update(
    policy: PolicyParameters,
    optimizer: OptimizerState,
    buffer: RolloutBuffer,
    config: PPOConfig,
    rng: np.random.Generator,
) -> UpdateStats:
    """Run ``update_epochs`` passes of shuffled minibatch steps; updates ``policy`` in place.

    Advantages are normalized once over the whole buffer. Reported losses are
    means over all minibatches, measured before each step.
    """
    if buffer.advantages is None:
        raise UsageError("compute_gae must run before ppo_update")
    advantages = normalize_advantages(buffer.advantages)
    terms: list[LossTerms] = []
    epoch_value_losses: list[float] = []
    for epoch in range(config.update_epochs):
        order = rng.permutation(len(buffer))
        epoch_terms: list[LossTerms] = []
        for index, start in enumerate(range(0, len(buffer), config.minibatch_size)):
            batch = Minibatch.from_buffer(buffer, order[start : start + config.minibatch_size], advantages)
            try:
                loss = ppo_loss(policy, batch, config)
                gradients, grad_norm = clip_grad_norm(backward(policy, loss.graph), config.max_grad_norm)
                optimizer_step(policy, gradients, optimizer)
            except NonFiniteError as exc:
                exc.add_note(f"update aborted at epoch {epoch}, minibatch {index}")
                raise
            logger.debug(
                "epoch %d minibatch %d: policy %.4g value %.4g entropy %.4g grad norm %.3g",
                epoch,
                index,
                loss.policy_loss,
                loss.value_loss,
                loss.entropy,
                grad_norm,
            )
            epoch_terms.append(loss)
        epoch_value_losses.append(float(np.mean([t.value_loss for t in epoch_terms])))
        terms.extend(epoch_terms)

    return UpdateStats(
        policy_loss=float(np.mean([t.policy_loss for t in terms])),
        value_loss=float(np.mean([t.value_loss for t in terms])),
        entropy=float(np.mean([t.entropy for t in terms])),
        approx_kl=float(np.mean([t.approx_kl for t in terms])),
        clip_fraction=float(np.mean([t.clip_fraction for t in terms])),
        minibatches=len(terms),
        epoch_value_losses=tuple(epoch_value_losses),
    )


@dataclass(frozen=True)
class TrainingMetrics:
    global_step: int
    mean_episode_reward: float
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float = 0.0
    clip_fraction: float = 0.0


@dataclass(eq=False)
class TrainingResult:
    policy: PolicyParameters
    optimizer: OptimizerState
    metrics: list[TrainingMetrics]
    checkpoints: list[Checkpoint]

    @property
    def global_step(self) -> int:
        return self.metrics[-1].global_step if self.metrics else 0


MetricsCallback = Callable[[TrainingMetrics], None]
CheckpointCallback = Callable[[Checkpoint], None]


class Trainer:
    """Owns the parameters, optimizer state, environments and random streams of one run.

    ``SeedSequence(ppo.seed)`` is split into an initialization stream, a
    minibatch shuffling stream and one sampling stream per rollout worker.
    """

    def __init__(
        self,
        params: GridParams,
        episode: EpisodeConfig,
        ppo: PPOConfig,
        config_hash: str | None = None,
    ):
        self.params = params
        self.episode = episode
        self.ppo = ppo
        self.config_hash = config_hash

        init_seq, shuffle_seq, *worker_seqs = np.random.SeedSequence(ppo.seed).spawn(2 + ppo.num_workers)
        self.policy = init_policy(int(init_seq.generate_state(1)[0]), params.n, episode.kappa)
        self.optimizer = init_optimizer(self.policy, ppo.learning_rate, ppo.adam_eps)
        self.shuffle_rng = np.random.default_rng(shuffle_seq)
        self.worker_rngs = [np.random.default_rng(seq) for seq in worker_seqs]

        base = make_env(params, episode)
        self.envs = [base, *(base.clone() for _ in range(ppo.num_workers - 1))]
        self.global_step = 0
        self.updates = 0
        self.mean_episode_reward = 0.0
        self.metrics: list[TrainingMetrics] = []
        self.checkpoints: list[Checkpoint] = []

    def _collect(self) -> RolloutBuffer:
        def worker(index: int) -> RolloutBuffer:
            buffer = collect_rollout(self.envs[index], self.policy, self.ppo.rollout_steps, self.worker_rngs[index])
            return compute_gae(buffer, self.ppo.gamma, self.ppo.gae_lambda)

        if self.ppo.num_workers > 1:
            with ThreadPoolExecutor(max_workers=self.ppo.num_workers) as pool:
                buffers = list(pool.map(worker, range(self.ppo.num_workers)))
        else:
            buffers = [worker(0)]
        return RolloutBuffer.concatenate(buffers)

    def metadata(self) -> ArtifactMetadata | None:
        if self.config_hash is None:
            return None
        return ArtifactMetadata(config_hash=self.config_hash, seed=self.ppo.seed)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint.from_policy(self.policy, self.optimizer, self.global_step, self.metadata())

    def train_step(self) -> TrainingMetrics:
        buffer = self._collect()
        stats = ppo_update(self.policy, self.optimizer, buffer, self.ppo, self.shuffle_rng)
        self.global_step += len(buffer)
        self.updates += 1
        if buffer.episode_rewards:
            self.mean_episode_reward = float(np.mean(buffer.episode_rewards))
        metrics = TrainingMetrics(
            global_step=self.global_step,
            mean_episode_reward=self.mean_episode_reward,
            policy_loss=stats.policy_loss,
            value_loss=stats.value_loss,
            entropy=stats.entropy,
            approx_kl=stats.approx_kl,
            clip_fraction=stats.clip_fraction,
        )
        self.metrics.append(metrics)
        logger.info(
            "update %d step %d: reward %.6g policy %.4g value %.4g entropy %.4f kl %.2e clip %.3f",
            self.updates,
            metrics.global_step,
            metrics.mean_episode_reward,
            metrics.policy_loss,
            metrics.value_loss,
            metrics.entropy,
            metrics.approx_kl,
            metrics.clip_fraction,
        )
        return metrics

    def run(
        self,
        on_metrics: MetricsCallback | None = None,
        on_checkpoint: CheckpointCallback | None = None,
    ) -> TrainingResult:
        total = self.ppo.num_updates
        while self.updates < total:
            try:
                metrics = self.train_step()
            except GridFdiError as exc:
                exc.add_note(f"training stopped after {self.updates} completed updates")
                raise
            if on_metrics is not None:
                on_metrics(metrics)
            if self.updates % self.ppo.checkpoint_interval == 0 or self.updates == total:
                checkpoint = self.checkpoint()
                self.checkpoints.append(checkpoint)
                if on_checkpoint is not None:
                    on_checkpoint(checkpoint)
        return TrainingResult(self.policy, self.optimizer, list(self.metrics), list(self.checkpoints))


def train(
    params: GridParams,
    episode: EpisodeConfig,
    ppo: PPOConfig,
    config_hash: str | None = None,
    on_metrics: MetricsCallback | None = None,
    on_checkpoint: CheckpointCallback | None = None,
) -> TrainingResult:
    logger.info(
        "training %d updates of %d steps (seed %d, %d worker(s))",
        ppo.num_updates,
        ppo.steps_per_update,
        ppo.seed,
        ppo.num_workers,
    )
    return Trainer(params, episode, ppo, config_hash).run(on_metrics, on_checkpoint)


@dataclass(frozen=True, eq=False)
class PolicyEvaluation:
    schedule: list[AttackAction]
    trajectory: Trajectory
    rewards: tuple[float, ...]
    cumulative_reward: float


def evaluate_policy(policy: PolicyParameters, env: FdiEnv) -> PolicyEvaluation:
    """Greedy rollout of one full episode from the environment's frozen initial condition."""
    if policy.n != env.n or policy.kappa != env.kappa:
        raise ConfigurationError(
            f"policy is for {policy.n} buses and {policy.kappa}, environment has {env.n} and {env.kappa}",
            "policy",
        )
    observation = env.reset()
    schedule: list[AttackAction] = []
    while not env.done:
        action, _, _ = act(policy, observation, "greedy")
        schedule.append(action)
        observation = env.step(action).observation
    return PolicyEvaluation(schedule, env.trajectory(), env.rewards, env.cumulative_reward())


class ScheduleSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    meta: ArtifactMetadata | None = None
    steps: int
    buses_activated: list[int]
    steps_per_bus: list[int]
    target_switches: int
    positive_coefficient_fraction: float
    designed_value_fraction: float
    cumulative_reward: float | None = None


def summarize_schedule(schedule: Sequence[AttackAction], droop: Vector) -> ScheduleSummary:
    """Which buses a schedule touches, how often it switches and how often it leaves the
    designed droop value in place."""
    if not schedule:
        raise ConfigurationError("schedule is empty", "schedule")
    droop = np.asarray(droop, dtype=np.float64)
    counts = np.bincount([action.target for action in schedule], minlength=droop.shape[0])
    switches = sum(1 for previous, current in zip(schedule, schedule[1:]) if previous.target != current.target)
    steps = len(schedule)
    return ScheduleSummary(
        steps=steps,
        buses_activated=[int(bus) for bus in np.flatnonzero(counts)],
        steps_per_bus=[int(count) for count in counts],
        target_switches=switches,
        positive_coefficient_fraction=sum(action.coefficient > 0 for action in schedule) / steps,
        designed_value_fraction=sum(action.coefficient == droop[action.target] for action in schedule) / steps,
    )


@dataclass(frozen=True, eq=False)
class SeedRun:
    seed: int
    result: TrainingResult
    evaluation: PolicyEvaluation

    @property
    def cumulative_reward(self) -> float:
        return self.evaluation.cumulative_reward


def train_seeds(
    params: GridParams,
    episode: EpisodeConfig,
    ppo: PPOConfig,
    seeds: Sequence[int],
) -> list[SeedRun]:
    """Independent training runs, one per seed, each scored by its greedy episode."""
    runs: list[SeedRun] = []
    for seed in seeds:
        config = ppo.model_copy(update={"seed": seed})
        result = train(params, episode, config)
        evaluation = evaluate_policy(result.policy, make_env(params, episode))
        logger.info("seed %d: greedy cumulative reward %.6g", seed, evaluation.cumulative_reward)
        runs.append(SeedRun(seed, result, evaluation))
    return runs
