"""Mini-batch training of the mixture model under the joint loss.

The loss per batch is the classification cross-entropy plus
``penalty_weight`` times the router-diversity penalty. Epoch selection uses
in-distribution dev accuracy under the estimated rule (no post-hoc control),
and the two-stage hyperparameter search picks the expert count first (at
zero penalty weight), then the penalty weight, both minimizing dev
cross-entropy + penalty. Nothing here ever touches out-of-distribution
data: the interfaces only accept train and dev splits.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .model import (
    ModelParams,
    MosConfig,
    clone_model,
    decide_batch,
    init_model,
    mixture_backward,
    mixture_forward,
    named_parameters,
)
from .nn import adam_init, adam_step
from .diversity import set_ell
from .seeding import derive_seed

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "SweepResult",
    "train_epoch",
    "best_epoch",
    "fit",
    "eval_losses",
    "two_stage_search",
]

ArrayPair = tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    # defaults are the calibrated recipe for the bundled synthetic benchmark;
    # the aggressive learning rate lets the router organize before the expert
    # heads converge, which is what drives expert specialization at this scale
    penalty_weight: float = 1.0
    drop_count: int | None = None  # None: smallest power of two covering the batch
    batch_size: int = 32
    epochs: int = 10
    learning_rate: float = 0.1
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")


@dataclass
class TrainHistory:
    """Per-epoch training means and dev metrics, plus the selected epoch."""

    train_loss_cls: list[float] = field(default_factory=list)
    train_penalty: list[float] = field(default_factory=list)
    dev_accuracy: list[float] = field(default_factory=list)
    dev_loss_cls: list[float] = field(default_factory=list)
    dev_penalty: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def to_dict(self) -> dict:
        return {
            "train_loss_cls": self.train_loss_cls,
            "train_penalty": self.train_penalty,
            "dev_accuracy": self.dev_accuracy,
            "dev_loss_cls": self.dev_loss_cls,
            "dev_penalty": self.dev_penalty,
            "best_epoch": self.best_epoch,
        }


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_epoch(
    model: ModelParams,
    optimizer,
    features: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    drop_count: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """One pass of shuffled mini-batches; updates the model in place.

    Returns the mean classification loss and mean penalty across batches
    (batches too small for a penalty are excluded from the penalty mean).
    """
    n = features.shape[0]
    if n == 0:
        raise ValueError("training data is empty")
    order = rng.permutation(n) if config.shuffle else np.arange(n)
    params = named_parameters(model)
    loss_cls_values = []
    penalty_values = []
    for idx in _batches(n, config.batch_size, order):
        out = mixture_forward(model, features[idx])
        loss_cls, loss_div, grads = mixture_backward(
            model, out, labels[idx],
            penalty_weight=config.penalty_weight,
            drop_count=drop_count,
        )
        adam_step(optimizer, params, grads)
        loss_cls_values.append(loss_cls)
        if loss_div is not None:
            penalty_values.append(loss_div)
    mean_penalty = float(np.mean(penalty_values)) if penalty_values else 0.0
    return float(np.mean(loss_cls_values)), mean_penalty


def best_epoch(dev_accuracies: list[float]) -> int:
    """Index of the highest dev accuracy; ties go to the earliest epoch."""
    if not dev_accuracies:
        raise ValueError("no epochs recorded")
    return int(np.argmax(dev_accuracies))


def eval_losses(
    model: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    batch_size: int,
    drop_count: int,
    shuffle_seed: int | None = None,
) -> tuple[float, float]:
    """Mean classification loss and mean per-batch penalty on a split.

    The split is walked in its stored order unless ``shuffle_seed`` is given
    (use it when the file order may be sorted by some feature). The ragged
    final batch is kept; the penalty's internal clamping handles it.
    """
    n = features.shape[0]
    if n == 0:
        raise ValueError("split is empty")
    order = np.arange(n)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(n)
    total_nll = 0.0
    penalty_values = []
    for idx in _batches(n, batch_size, order):
        out = mixture_forward(model, features[idx])
        loss_cls, loss_div, _ = mixture_backward(
            model, out, labels[idx], penalty_weight=0.0, drop_count=drop_count
        )
        total_nll += loss_cls * len(idx)
        if loss_div is not None:
            penalty_values.append(loss_div)
    mean_penalty = float(np.mean(penalty_values)) if penalty_values else 0.0
    return total_nll / n, mean_penalty


def fit(
    model_config: MosConfig,
    config: TrainConfig,
    train: ArrayPair,
    dev: ArrayPair,
    log=None,
) -> tuple[ModelParams, TrainHistory]:
    """Train for the configured epochs and return the best-epoch checkpoint.

    The best epoch maximizes dev accuracy under the estimated rule, with no
    post-hoc control applied; ties go to the earliest epoch.
    """
    train_x, train_y = train
    dev_x, dev_y = dev
    if train_x.shape[0] == 0 or dev_x.shape[0] == 0:
        raise ValueError("train and dev splits must be nonempty")
    drop_count = (
        config.drop_count
        if config.drop_count is not None
        else set_ell(config.batch_size, model_config.num_experts)
    )
    model = init_model(model_config, seed=derive_seed(config.seed, "init"))
    optimizer = adam_init(named_parameters(model), learning_rate=config.learning_rate)
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))

    history = TrainHistory()
    best_model = clone_model(model)
    for epoch in range(config.epochs):
        loss_cls, loss_div = train_epoch(
            model, optimizer, train_x, train_y, config, drop_count, shuffle_rng
        )
        dev_acc = float((decide_batch(model, dev_x, "estimated") == dev_y).mean())
        dev_cls, dev_div = eval_losses(model, dev_x, dev_y, config.batch_size, drop_count)
        history.train_loss_cls.append(loss_cls)
        history.train_penalty.append(loss_div)
        history.dev_accuracy.append(dev_acc)
        history.dev_loss_cls.append(dev_cls)
        history.dev_penalty.append(dev_div)
        if epoch == best_epoch(history.dev_accuracy):
            best_model = clone_model(model)
        if log is not None:
            print(
                f"epoch {epoch}: train_cls={loss_cls:.4f} train_pen={loss_div:.4f} "
                f"dev_acc={dev_acc:.4f}",
                file=log,
            )
    history.best_epoch = best_epoch(history.dev_accuracy)
    return best_model, history


@dataclass
class SweepResult:
    """Two-stage search outcome: per-candidate dev losses and the winners."""

    stage1: dict[int, dict[str, float]]
    stage2: dict[float, dict[str, float]]
    selected_num_experts: int
    selected_penalty_weight: float

    def to_dict(self) -> dict:
        return {
            "stage1": {str(k): v for k, v in self.stage1.items()},
            "stage2": {str(k): v for k, v in self.stage2.items()},
            "selected_num_experts": self.selected_num_experts,
            "selected_penalty_weight": self.selected_penalty_weight,
        }


def _summarize(pairs: list[tuple[float, float]]) -> dict[str, float]:
    loss_cls = float(np.mean([p[0] for p in pairs]))
    pen = float(np.mean([p[1] for p in pairs]))
    return {"loss_cls": loss_cls, "penalty": pen, "total": loss_cls + pen}


def two_stage_search(
    expert_grid: list[int],
    weight_grid: list[float],
    model_config: MosConfig,
    config: TrainConfig,
    train: ArrayPair,
    dev: ArrayPair,
    num_seeds: int = 2,
    measure=None,
    workers: int = 1,
    log=None,
) -> SweepResult:
    """Pick the expert count at zero penalty weight, then the penalty weight.

    Both stages minimize mean dev (cross-entropy + penalty) over
    ``num_seeds`` runs; grid-order ties go to the earlier candidate.
    ``measure(num_experts, penalty_weight, seed) -> (dev_loss_cls,
    dev_penalty)`` defaults to a full training run per candidate and exists
    so callers (and tests) can inject precomputed losses. ``workers`` > 1
    runs the independent (candidate, seed) measurements concurrently;
    results are keyed, so the outcome does not depend on scheduling.
    """
    if not expert_grid or not weight_grid:
        raise ValueError("grids must be nonempty")

    # one dropout count across all candidates, from the smallest expert count
    drop_count = (
        config.drop_count
        if config.drop_count is not None
        else set_ell(config.batch_size, min(expert_grid))
    )

    if measure is None:

        def measure(num_experts: int, penalty_weight: float, seed: int) -> tuple[float, float]:
            mc = replace(model_config, num_experts=num_experts)
            tc = replace(
                config, penalty_weight=penalty_weight, seed=seed, drop_count=drop_count
            )
            model, _ = fit(mc, tc, train, dev, log=log)
            return eval_losses(model, dev[0], dev[1], config.batch_size, drop_count)

    def run_stage(jobs: list[tuple[int, float, int]]) -> list[tuple[float, float]]:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(lambda job: measure(*job), jobs))
        return [measure(*job) for job in jobs]

    stage1: dict[int, dict[str, float]] = {}
    jobs1 = [
        (num_experts, 0.0, derive_seed(config.seed, f"sweep-k{num_experts}-r{r}"))
        for num_experts in expert_grid
        for r in range(num_seeds)
    ]
    results1 = run_stage(jobs1)
    for i, num_experts in enumerate(expert_grid):
        pairs = results1[i * num_seeds : (i + 1) * num_seeds]
        stage1[num_experts] = _summarize(pairs)
        if log is not None:
            print(f"stage1 experts={num_experts}: {stage1[num_experts]}", file=log)
    selected_experts = min(stage1, key=lambda k: stage1[k]["total"])

    stage2: dict[float, dict[str, float]] = {}
    pending = [w for w in weight_grid if w != 0.0]
    jobs2 = [
        (selected_experts, weight, derive_seed(config.seed, f"sweep-w{weight}-r{r}"))
        for weight in pending
        for r in range(num_seeds)
    ]
    results2 = run_stage(jobs2)
    for weight in weight_grid:
        if weight == 0.0:
            # stage 1 already measured this cell at the selected expert count
            stage2[weight] = dict(stage1[selected_experts])
            continue
        i = pending.index(weight)
        stage2[weight] = _summarize(results2[i * num_seeds : (i + 1) * num_seeds])
        if log is not None:
            print(f"stage2 weight={weight}: {stage2[weight]}", file=log)
    selected_weight = min(stage2, key=lambda w: stage2[w]["total"])

    return SweepResult(
        stage1=stage1,
        stage2=stage2,
        selected_num_experts=selected_experts,
        selected_penalty_weight=selected_weight,
    )
