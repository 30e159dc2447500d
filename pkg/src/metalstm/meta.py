"""First-order meta-training: inner SGD per task, outer Adam across tasks.

Each meta-iteration samples an episode of tasks.  A local learner takes a
few SGD steps on every task's support batch, starting from the shared
meta-parameters; the query-batch gradient is then evaluated at the adapted
parameters and, in the first-order approximation, applied directly to the
meta-parameters.  Per-task gradients are reduced in a sorted, fixed order
so the outer update is bit-reproducible regardless of how the inner loops
were scheduled.

Evaluation draws a fixed-seed support set from every held-out task, adapts,
and scores the remainder; the best parameters seen this way become the
transferable initialization, with early stopping once evaluations stop
improving.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ValidationError
from .lstm import (
    AdamState,
    DEFAULT_HIDDEN_SIZE,
    ModelParams,
    ParamGrads,
    adam_step,
    init_params,
    loss_and_grads,
    sgd_step,
)
from .tasks import EpisodeBatch, MetaTask, TaskSet, sample_episode

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetaConfig:
    """Meta-training hyperparameters.

    ``inner_lr`` is the local learner's SGD rate, ``meta_lr`` the global
    Adam rate.  Evaluation runs every ``eval_every`` iterations; training
    stops after ``patience`` evaluations without improvement.
    """

    inner_lr: float = 0.001
    meta_lr: float = 0.001
    inner_steps: int = 5
    tasks_per_iteration: int = 16
    k_support: int = 16
    k_query: int = 16
    max_iterations: int = 40_000
    eval_every: int = 200
    patience: int = 10

    def __post_init__(self):
        if self.inner_lr <= 0 or self.meta_lr <= 0:
            raise ValidationError("learning rates must be positive")
        if self.inner_steps < 1:
            raise ValidationError("inner_steps must be >= 1")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if min(self.tasks_per_iteration, self.k_support, self.k_query) < 1:
            raise ValidationError("batch sizes must be >= 1")
        if self.eval_every < 1 or self.patience < 1:
            raise ValidationError("eval_every and patience must be >= 1")


@dataclass
class MetaState:
    """Mutable loop state: current parameters plus the best checkpoint."""

    params: ModelParams
    adam: AdamState
    iteration: int
    best_params: ModelParams
    best_eval_loss: float


@dataclass(frozen=True)
class LogRow:
    iteration: int
    meta_loss: float
    eval_loss: float | None
    wall_ms: float


def inner_adapt(
    params: ModelParams,
    inputs: np.ndarray,
    labels: np.ndarray,
    inner_lr: float,
    inner_steps: int,
) -> ModelParams:
    """Sequential full-batch SGD steps on the support set; returns a copy."""
    if inner_steps < 0:
        raise ValidationError(f"inner_steps must be >= 0, got {inner_steps}")
    if len(inputs) == 0:
        raise ValidationError("support batch is empty")
    adapted = params
    for step in range(inner_steps):
        loss, grads = loss_and_grads(adapted, inputs, labels)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite support loss at inner step {step}")
        adapted = sgd_step(adapted, grads, inner_lr)
    return adapted


def meta_gradient(
    params: ModelParams,
    episode: EpisodeBatch,
    inner_lr: float,
    inner_steps: int,
) -> tuple[ParamGrads, float]:
    """Mean first-order meta-gradient over the episode, plus mean query loss.

    Per task the query gradient is taken at the adapted parameters and
    credited to the meta-parameters directly.  Entries are reduced in a
    sorted order, so permuting the episode's task list cannot change a bit
    of the result.
    """
    if not episode.tasks:
        raise ValidationError("episode has no tasks")
    entries = sorted(
        episode.tasks,
        key=lambda t: (t.task_id, t.support_indices, t.query_indices),
    )
    total: ParamGrads | None = None
    loss_sum = 0.0
    for entry in entries:
        adapted = inner_adapt(
            params, entry.support_inputs, entry.support_labels, inner_lr, inner_steps
        )
        loss, grads = loss_and_grads(adapted, entry.query_inputs, entry.query_labels)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite query loss in task {entry.task_id}")
        loss_sum += loss
        total = grads if total is None else total.zip_map(grads, np.add)
    n = float(len(entries))
    return total.map(lambda a: a / n), loss_sum / n


def evaluate_meta(
    params: ModelParams,
    tasks: tuple[MetaTask, ...],
    inner_lr: float,
    inner_steps: int,
    k_support: int,
    rng: np.random.Generator,
) -> float:
    """Mean post-adaptation loss across tasks.

    Per task a seeded support draw of ``k_support`` samples is adapted on
    and every remaining sample is scored.  Tasks too small for the draw
    plus at least one held-out sample are skipped with a warning.
    """
    if not tasks:
        raise ValidationError("no tasks to evaluate")
    losses = []
    for task in tasks:
        if task.n_samples < k_support + 1:
            log.warning(
                "skipping task %d: %d samples cannot host a %d-sample support draw",
                task.task_id,
                task.n_samples,
                k_support,
            )
            continue
        support = rng.choice(task.n_samples, size=k_support, replace=False)
        rest = np.setdiff1d(np.arange(task.n_samples), support)
        adapted = inner_adapt(
            params, task.inputs[support], task.labels[support], inner_lr, inner_steps
        )
        loss, _ = loss_and_grads(adapted, task.inputs[rest], task.labels[rest])
        losses.append(loss)
    if not losses:
        raise ValidationError("every task was too small to evaluate")
    return float(np.mean(losses))


def meta_train(
    task_set: TaskSet,
    config: MetaConfig,
    seed: int,
    *,
    hidden_size: int = DEFAULT_HIDDEN_SIZE,
    initial_params: ModelParams | None = None,
) -> tuple[ModelParams, list[LogRow]]:
    """Run the outer loop and return the best checkpoint plus its log.

    The seed fully determines initialization, episode draws, and the
    evaluation support draws; evaluations reuse one fixed sub-seed so the
    early-stopping signal varies only through the parameters.
    """
    if not task_set.train_tasks:
        raise ValidationError("task set has no train tasks")
    root = np.random.SeedSequence(seed)
    init_seq, episode_seq, eval_seq = root.spawn(3)
    episode_rng = np.random.default_rng(episode_seq)

    sample = task_set.train_tasks[0]
    d_in = sample.inputs.shape[2]
    d_out = sample.labels.shape[1]
    if initial_params is None:
        params = init_params(hidden_size, d_in, d_out, np.random.default_rng(init_seq))
    else:
        if (initial_params.input_size, initial_params.output_size) != (d_in, d_out):
            raise ValidationError(
                f"initial params expect ({initial_params.input_size}, "
                f"{initial_params.output_size}) dims, task set has ({d_in}, {d_out})"
            )
        params = initial_params

    state = MetaState(
        params=params,
        adam=AdamState.fresh(params),
        iteration=0,
        best_params=params,
        best_eval_loss=float("inf"),
    )
    rows: list[LogRow] = []
    evaluated = False
    stale = 0
    for iteration in range(1, config.max_iterations + 1):
        started = time.perf_counter()
        episode = sample_episode(
            task_set,
            config.tasks_per_iteration,
            config.k_support,
            config.k_query,
            episode_rng,
        )
        try:
            grads, meta_loss = meta_gradient(
                state.params, episode, config.inner_lr, config.inner_steps
            )
        except DivergenceError as exc:
            raise DivergenceError(
                f"iteration {iteration}: {exc}",
                last_good=state.best_params if evaluated else state.params,
            ) from None
        state.params, state.adam = adam_step(
            state.params, grads, state.adam, config.meta_lr
        )
        state.iteration = iteration

        eval_loss = None
        if iteration % config.eval_every == 0:
            eval_loss = evaluate_meta(
                state.params,
                task_set.test_tasks,
                config.inner_lr,
                config.inner_steps,
                config.k_support,
                np.random.default_rng(eval_seq),
            )
            evaluated = True
            if eval_loss < state.best_eval_loss:
                state.best_eval_loss = eval_loss
                state.best_params = state.params
                stale = 0
            else:
                stale += 1
        rows.append(
            LogRow(
                iteration=iteration,
                meta_loss=meta_loss,
                eval_loss=eval_loss,
                wall_ms=(time.perf_counter() - started) * 1000.0,
            )
        )
        if eval_loss is not None and stale >= config.patience:
            break

    theta_0 = state.best_params if evaluated else state.params
    return theta_0, rows


def render_training_log(config: MetaConfig, rows: list[LogRow]) -> str:
    """CSV log with the configuration echoed in comment lines."""
    lines = [
        f"# inner_lr={config.inner_lr!r} meta_lr={config.meta_lr!r} "
        f"inner_steps={config.inner_steps} "
        f"tasks_per_iteration={config.tasks_per_iteration}",
        f"# k_support={config.k_support} k_query={config.k_query} "
        f"max_iterations={config.max_iterations} "
        f"eval_every={config.eval_every} patience={config.patience}",
        "iter,meta_loss,eval_loss,wall_ms",
    ]
    for row in rows:
        eval_part = "" if row.eval_loss is None else repr(row.eval_loss)
        lines.append(
            f"{row.iteration},{row.meta_loss!r},{eval_part},{row.wall_ms:.3f}"
        )
    return "\n".join(lines) + "\n"
