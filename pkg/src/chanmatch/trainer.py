"""Coordinate-descent training loop for matched feature distillation.

Alternates two updates: (a) with weights frozen, re-solve the channel
matchings and margins per tap from a random subset of the training data;
(b) with matchings frozen, run SGD epochs on the student where tap gradients
from the distillation loss are injected next to the task loss. The teacher
is never updated.
"""

from dataclasses import dataclass, field

import numpy as np

from . import losses, nets
from .data import Dataset
from .matching import (
    SHAVED,
    CostMatrix,
    Matching,
    accumulate_cost,
    channel_distance,
    matching_cost,
    solve_balanced,
    solve_sparse,
    sparse_matching_cost,
)
from .reduction import ReducerKind


@dataclass
class TrainConfig:
    epochs: int = 40
    lr: float = 0.05
    lr_decay_factor: float = 0.1
    lr_decay_epochs: tuple[int, ...] | None = None  # None: decay at 50% and 75%
    momentum: float = 0.9
    weight_decay: float = 5e-4
    gamma: float = 0.1
    reducer: ReducerKind = ReducerKind.AMP
    match_update_period: int = 2
    match_subset_fraction: float = 0.25
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        self.reducer = ReducerKind(self.reducer)
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.match_update_period < 1:
            raise ValueError("match_update_period must be >= 1")
        if not 0.0 < self.match_subset_fraction <= 1.0:
            raise ValueError("match_subset_fraction must lie in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def decay_epochs(self) -> tuple[int, ...]:
        if self.lr_decay_epochs is not None:
            return tuple(self.lr_decay_epochs)
        return (self.epochs // 2, (3 * self.epochs) // 4)

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for e in self.decay_epochs() if epoch >= e)
        return self.lr * self.lr_decay_factor**drops


@dataclass
class EpochStats:
    epoch: int
    lr: float
    task_loss: float
    distill_loss: float
    train_acc: float
    val_acc: float


@dataclass
class MatchingRound:
    epoch: int
    costs: list[float]  # per tap
    owners: list[np.ndarray]  # per tap owner-array snapshot


@dataclass
class RunLog:
    epochs: list[EpochStats] = field(default_factory=list)
    rounds: list[MatchingRound] = field(default_factory=list)

    @property
    def final_val_acc(self) -> float:
        return self.epochs[-1].val_acc

    def epoch_csv(self) -> str:
        lines = ["epoch,lr,task_loss,distill_loss,train_acc,val_acc"]
        for e in self.epochs:
            lines.append(
                f"{e.epoch},{e.lr!r},{e.task_loss!r},{e.distill_loss!r},{e.train_acc!r},{e.val_acc!r}"
            )
        return "\n".join(lines) + "\n"

    def costs_csv(self) -> str:
        lines = ["round,epoch,tap,cost"]
        for k, r in enumerate(self.rounds):
            for p, c in enumerate(r.costs):
                lines.append(f"{k},{r.epoch},{p},{c!r}")
        return "\n".join(lines) + "\n"

    def matching_cost_totals(self) -> list[float]:
        return [sum(r.costs) for r in self.rounds]

    def owner_churn(self) -> list[int]:
        """Per consecutive matching round: channels whose owner changed, summed over taps."""
        churn = []
        for prev, cur in zip(self.rounds, self.rounds[1:]):
            churn.append(int(sum((a != b).sum() for a, b in zip(prev.owners, cur.owners))))
        return churn


@dataclass
class TrainState:
    student: nets.ToyNet
    teacher: nets.ToyNet | None
    optimizer: nets.SGD
    config: TrainConfig
    matchings: list | None = None  # per tap: Matching or SparseMatching
    margins: list | None = None  # per tap: (C_T,) margin vector
    epoch: int = 0
    fixed_blocks: bool = False


def block_matching(c_s: int, c_t: int) -> Matching:
    """Contiguous-block assignment: teachers [i*alpha, (i+1)*alpha) -> student i."""
    alpha = c_t // c_s
    owner = np.full(c_t, SHAVED, dtype=np.intp)
    owner[: alpha * c_s] = np.repeat(np.arange(c_s), alpha)
    return Matching(owner=owner, alpha=alpha, c_s=c_s)


def _tap_chunks(net: nets.ToyNet, images: np.ndarray, batch_size: int):
    """Yield per-chunk tap lists over a fixed sample order."""
    for start in range(0, len(images), batch_size):
        _, taps = net.forward(images[start : start + batch_size])
        yield taps


def update_matchings(state: TrainState, images: np.ndarray) -> MatchingRound:
    """Re-solve matchings and margins per tap from the given samples.

    Weights are untouched; features are accumulated in a fixed chunk order so
    repeated calls on identical weights and samples are bit-identical.
    """
    cfg = state.config
    n_taps = state.student.n_taps
    costs: list[CostMatrix | None] = [None] * n_taps
    teacher_chunks = _tap_chunks(state.teacher, images, cfg.batch_size)
    student_chunks = _tap_chunks(state.student, images, cfg.batch_size)
    teacher_taps_seen: list[list[np.ndarray]] = [[] for _ in range(n_taps)]
    for t_taps, s_taps in zip(teacher_chunks, student_chunks):
        for p in range(n_taps):
            d = channel_distance(s_taps[p], t_taps[p])
            costs[p] = d if costs[p] is None else accumulate_cost(costs[p], d)
            teacher_taps_seen[p].append(t_taps[p])

    round_costs = []
    owners = []
    new_matchings = []
    new_margins = []
    for p in range(n_taps):
        d = costs[p]
        if state.fixed_blocks:
            m = state.matchings[p] if state.matchings else block_matching(d.c_s, d.c_t)
            round_costs.append(matching_cost(d, m))
            owners.append(m.owner.copy())
        elif cfg.reducer is ReducerKind.SM:
            m = solve_sparse(d)
            round_costs.append(sparse_matching_cost(d, m))
            owners.append(m.as_owner_view().owner)
        else:
            m = solve_balanced(d)
            round_costs.append(matching_cost(d, m))
            owners.append(m.owner.copy())
        new_matchings.append(m)
        new_margins.append(losses.estimate_margins(teacher_taps_seen[p]))
    state.matchings = new_matchings
    state.margins = new_margins
    return MatchingRound(epoch=state.epoch, costs=round_costs, owners=owners)


def evaluate(net: nets.ToyNet, dataset: Dataset, batch_size: int = 64) -> tuple[float, float]:
    """(accuracy %, mean cross-entropy) over a dataset, fixed order."""
    correct = 0
    loss_sum = 0.0
    for start in range(0, len(dataset), batch_size):
        x = dataset.images[start : start + batch_size]
        y = dataset.labels[start : start + batch_size]
        logits, _ = net.forward(x)
        loss, _ = nets.softmax_cross_entropy(logits, y)
        loss_sum += loss * len(y)
        correct += int((logits.argmax(axis=1) == y).sum())
    n = len(dataset)
    return 100.0 * correct / n, loss_sum / n


def train(
    config: TrainConfig,
    train_set: Dataset,
    val_set: Dataset,
    student: nets.ToyNet,
    teacher: nets.ToyNet | None = None,
    _fixed_blocks: bool = False,
) -> RunLog:
    """Train the student in place; returns the run log.

    With a teacher, matchings are re-solved every match_update_period epochs
    (including once before the first epoch) and the distillation gradient is
    injected at every tap. Without one, this is plain task-loss training.
    Fully deterministic for a fixed config, data, and initial weights.
    """
    if teacher is None and config.gamma > 0:
        raise ValueError("distillation (gamma > 0) requires a teacher")
    if teacher is not None and teacher.n_taps != student.n_taps:
        raise ValueError("teacher and student must have the same number of taps")
    if _fixed_blocks and config.reducer is ReducerKind.SM:
        raise ValueError("the no-matching ablation needs a grouped reducer, not SM")

    # Independent streams: batch order must not depend on whether the
    # distillation path (subset draws, random-drop picks) consumes randomness.
    batch_rng, subset_rng, rd_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(3)
    )
    state = TrainState(
        student=student,
        teacher=teacher,
        optimizer=nets.SGD(config.momentum, config.weight_decay),
        config=config,
        fixed_blocks=_fixed_blocks,
    )
    log = RunLog()
    teacher_hash = teacher.weights_hash() if teacher is not None else None
    n_train = len(train_set)
    subset_size = max(1, int(round(config.match_subset_fraction * n_train)))

    for epoch in range(config.epochs):
        state.epoch = epoch
        if teacher is not None and epoch % config.match_update_period == 0:
            subset = np.sort(subset_rng.choice(n_train, size=subset_size, replace=False))
            log.rounds.append(update_matchings(state, train_set.images[subset]))

        lr = config.lr_at(epoch)
        order = batch_rng.permutation(n_train)
        task_sum = 0.0
        distill_sum = 0.0
        correct = 0
        for start in range(0, n_train, config.batch_size):
            idx = order[start : start + config.batch_size]
            x = train_set.images[idx]
            y = train_set.labels[idx]
            logits, s_taps = student.forward(x)
            task_loss, d_logits = nets.softmax_cross_entropy(logits, y)
            correct += int((logits.argmax(axis=1) == y).sum())

            grad_taps = None
            distill_total = 0.0
            if teacher is not None:
                _, t_taps = teacher.forward(x)
                grad_taps = []
                for p in range(student.n_taps):
                    loss_p, grad_p = losses.distill_loss_and_grad(
                        t_taps[p],
                        s_taps[p],
                        state.margins[p],
                        config.reducer,
                        state.matchings[p],
                        rng=rd_rng,
                    )
                    distill_total += loss_p
                    grad_taps.append(config.gamma * grad_p)
                if config.gamma == 0.0:
                    grad_taps = None  # keep the update bit-identical to plain training

            student.zero_grads()
            student.backward(d_logits, grad_taps)
            state.optimizer.step(student, lr)
            task_sum += task_loss * len(idx)
            distill_sum += distill_total * len(idx)

        val_acc, _ = evaluate(student, val_set, config.batch_size)
        log.epochs.append(
            EpochStats(
                epoch=epoch,
                lr=lr,
                task_loss=task_sum / n_train,
                distill_loss=distill_sum / n_train,
                train_acc=100.0 * correct / n_train,
                val_acc=val_acc,
            )
        )

    if teacher is not None and teacher.weights_hash() != teacher_hash:
        raise RuntimeError("teacher weights changed during training")
    return log


def ablation_no_matching(
    config: TrainConfig,
    train_set: Dataset,
    val_set: Dataset,
    student: nets.ToyNet,
    teacher: nets.ToyNet,
) -> RunLog:
    """Distillation with matchings pinned to contiguous blocks, never re-solved."""
    return train(config, train_set, val_set, student, teacher, _fixed_blocks=True)
