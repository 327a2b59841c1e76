import copy

import numpy as np
import pytest

from chanmatch.data import SynthSpec, generate, split_train_val
from chanmatch.matching import CostMatrix, Matching, matching_cost, solve_balanced
from chanmatch.nets import NetSpec, ToyNet
from chanmatch.reduction import ReducerKind
from chanmatch.trainer import (
    RunLog,
    TrainConfig,
    TrainState,
    ablation_no_matching,
    block_matching,
    evaluate,
    train,
    update_matchings,
)

SMALL_DATA = SynthSpec(n_classes=4, samples_per_class=8, image_size=8, noise_sigma=0.8, seed=0)
STUDENT = NetSpec(widths=(2, 4), strides=(1, 2), image_size=8, n_classes=4)
TEACHER = NetSpec(widths=(4, 8), strides=(1, 2), image_size=8, n_classes=4)


@pytest.fixture(scope="module")
def small_sets():
    return split_train_val(generate(SMALL_DATA), 0.25)


def small_config(**kw):
    base = dict(epochs=4, lr=0.05, gamma=0.2, batch_size=8, seed=3, match_subset_fraction=0.5)
    base.update(kw)
    return TrainConfig(**base)


def make_teacher(small_sets, seed=21):
    train_set, val_set = small_sets
    teacher = ToyNet(TEACHER, seed=seed)
    train(TrainConfig(epochs=3, lr=0.05, gamma=0.0, batch_size=8, seed=100), train_set, val_set, teacher)
    return teacher


# -- config ---------------------------------------------------------------------


def test_config_defaults_and_validation():
    cfg = TrainConfig()
    assert cfg.match_update_period == 2
    assert cfg.momentum == 0.9
    assert cfg.weight_decay == 5e-4
    for bad in (
        dict(epochs=0),
        dict(gamma=-0.1),
        dict(match_update_period=0),
        dict(match_subset_fraction=0.0),
        dict(match_subset_fraction=1.5),
        dict(lr=0.0),
    ):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_lr_schedule_step_decay():
    cfg = TrainConfig(epochs=40, lr=0.1)
    assert cfg.decay_epochs() == (20, 30)
    assert cfg.lr_at(0) == 0.1
    assert cfg.lr_at(19) == 0.1
    assert cfg.lr_at(20) == pytest.approx(0.01)
    assert cfg.lr_at(30) == pytest.approx(0.001)
    explicit = TrainConfig(epochs=10, lr=1.0, lr_decay_epochs=(4,), lr_decay_factor=0.5)
    assert explicit.lr_at(3) == 1.0
    assert explicit.lr_at(4) == 0.5


# -- matching updates -------------------------------------------------------------


def test_update_matchings_deterministic(small_sets):
    train_set, _ = small_sets
    teacher = make_teacher(small_sets)
    student = ToyNet(STUDENT, seed=5)
    images = train_set.images[:12]

    def fresh_state():
        return TrainState(
            student=student, teacher=teacher, optimizer=None, config=small_config()
        )

    r1 = update_matchings(fresh_state(), images)
    r2 = update_matchings(fresh_state(), images)
    assert r1.costs == r2.costs
    assert all(np.array_equal(a, b) for a, b in zip(r1.owners, r2.owners))


def test_update_matchings_never_worse_than_previous(small_sets):
    train_set, _ = small_sets
    teacher = make_teacher(small_sets)
    student = ToyNet(STUDENT, seed=6)
    state = TrainState(student=student, teacher=teacher, optimizer=None, config=small_config())
    first = update_matchings(state, train_set.images[:12])
    previous = state.matchings
    # nudge the student, then re-solve on the new features
    for p in state.student.params():
        p += 0.01
    from chanmatch.matching import accumulate_cost, channel_distance
    from chanmatch.trainer import _tap_chunks

    costs = [None] * student.n_taps
    t_chunks = _tap_chunks(teacher, train_set.images[:12], 8)
    s_chunks = _tap_chunks(student, train_set.images[:12], 8)
    for t_taps, s_taps in zip(t_chunks, s_chunks):
        for p in range(student.n_taps):
            d = channel_distance(s_taps[p], t_taps[p])
            costs[p] = d if costs[p] is None else accumulate_cost(costs[p], d)
    second = update_matchings(state, train_set.images[:12])
    for p in range(student.n_taps):
        assert second.costs[p] <= matching_cost(costs[p], previous[p]) + 1e-9


def test_update_matchings_identity_when_twins(small_sets):
    train_set, _ = small_sets
    twin_spec = NetSpec(widths=(4, 8), strides=(1, 2), image_size=8, n_classes=4)
    teacher = ToyNet(twin_spec, seed=33)
    student = copy.deepcopy(teacher)
    state = TrainState(
        student=student, teacher=teacher, optimizer=None, config=small_config(gamma=0.0)
    )
    rnd = update_matchings(state, train_set.images[:8])
    assert all(c == pytest.approx(0.0, abs=1e-18) for c in rnd.costs)
    for owner in rnd.owners:
        assert np.array_equal(owner, np.arange(len(owner)))


def test_update_matchings_local_swaps_cannot_improve(small_sets):
    train_set, _ = small_sets
    teacher = make_teacher(small_sets, seed=44)
    student = ToyNet(STUDENT, seed=7)
    state = TrainState(student=student, teacher=teacher, optimizer=None, config=small_config())
    update_matchings(state, train_set.images[:16])

    from chanmatch.matching import accumulate_cost, channel_distance
    from chanmatch.trainer import _tap_chunks

    costs = [None] * student.n_taps
    for t_taps, s_taps in zip(
        _tap_chunks(teacher, train_set.images[:16], 8), _tap_chunks(student, train_set.images[:16], 8)
    ):
        for p in range(student.n_taps):
            d = channel_distance(s_taps[p], t_taps[p])
            costs[p] = d if costs[p] is None else accumulate_cost(costs[p], d)
    for p, m in enumerate(state.matchings):
        base = matching_cost(costs[p], m)
        owner = m.owner
        for a in range(len(owner)):
            for b in range(a + 1, len(owner)):
                if owner[a] == owner[b]:
                    continue
                swapped = owner.copy()
                swapped[a], swapped[b] = swapped[b], swapped[a]
                other = Matching(owner=swapped, alpha=m.alpha, c_s=m.c_s)
                assert matching_cost(costs[p], other) >= base - 1e-9


# -- training loop ------------------------------------------------------------------


def test_gamma_zero_matches_plain_training(small_sets):
    train_set, val_set = small_sets
    teacher = make_teacher(small_sets)
    plain = ToyNet(STUDENT, seed=9)
    with_teacher = ToyNet(STUDENT, seed=9)
    cfg = small_config(gamma=0.0)
    log_plain = train(cfg, train_set, val_set, plain)
    log_teacher = train(cfg, train_set, val_set, with_teacher, teacher)
    for a, b in zip(plain.params(), with_teacher.params()):
        assert np.array_equal(a, b)
    assert log_plain.final_val_acc == log_teacher.final_val_acc
    assert log_teacher.rounds  # the matching machinery still ran


def test_gamma_positive_requires_teacher(small_sets):
    train_set, val_set = small_sets
    with pytest.raises(ValueError):
        train(small_config(gamma=0.5), train_set, val_set, ToyNet(STUDENT, seed=1))


def test_round_schedule_and_log_shapes(small_sets):
    train_set, val_set = small_sets
    teacher = make_teacher(small_sets)
    student = ToyNet(STUDENT, seed=11)
    cfg = small_config(epochs=5, match_update_period=2)
    log = train(cfg, train_set, val_set, student, teacher)
    assert [r.epoch for r in log.rounds] == [0, 2, 4]
    assert len(log.epochs) == 5
    assert len(log.matching_cost_totals()) == 3
    assert len(log.owner_churn()) == 2
    lines = log.epoch_csv().splitlines()
    assert lines[0] == "epoch,lr,task_loss,distill_loss,train_acc,val_acc"
    assert len(lines) == 6
    cost_lines = log.costs_csv().splitlines()
    assert cost_lines[0] == "round,epoch,tap,cost"
    assert len(cost_lines) == 1 + 3 * student.n_taps


def test_training_is_deterministic(small_sets):
    train_set, val_set = small_sets
    teacher = make_teacher(small_sets)
    logs = []
    finals = []
    for _ in range(2):
        student = ToyNet(STUDENT, seed=13)
        log = train(small_config(reducer=ReducerKind.RD), train_set, val_set, student, teacher)
        logs.append(log)
        finals.append([p.copy() for p in student.params()])
    assert logs[0].epoch_csv() == logs[1].epoch_csv()
    assert logs[0].costs_csv() == logs[1].costs_csv()
    for r1, r2 in zip(logs[0].rounds, logs[1].rounds):
        assert all(np.array_equal(a, b) for a, b in zip(r1.owners, r2.owners))
    for a, b in zip(*finals):
        assert np.array_equal(a, b)


def test_teacher_is_frozen(small_sets):
    train_set, val_set = small_sets
    teacher = make_teacher(small_sets)
    before = teacher.weights_hash()
    student = ToyNet(STUDENT, seed=15)
    train(small_config(), train_set, val_set, student, teacher)
    assert teacher.weights_hash() == before


@pytest.mark.parametrize("kind", [ReducerKind.SM, ReducerKind.RD, ReducerKind.MP, ReducerKind.AVGP])
def test_all_reducers_train(small_sets, kind):
    train_set, val_set = small_sets
    teacher = make_teacher(small_sets)
    student = ToyNet(STUDENT, seed=17)
    log = train(small_config(reducer=kind, epochs=2), train_set, val_set, student, teacher)
    assert len(log.epochs) == 2
    assert all(np.isfinite(e.distill_loss) for e in log.epochs)


# -- no-matching ablation ---------------------------------------------------------


def test_block_matching_layout():
    m = block_matching(2, 6)
    assert list(m.owner) == [0, 0, 0, 1, 1, 1]
    shaved = block_matching(2, 5)
    assert list(shaved.owner) == [0, 0, 1, 1, -1]


def test_block_cost_never_below_solved(small_sets):
    train_set, _ = small_sets
    teacher = make_teacher(small_sets, seed=55)
    student = ToyNet(STUDENT, seed=19)
    state = TrainState(student=student, teacher=teacher, optimizer=None, config=small_config())
    solved = update_matchings(state, train_set.images[:16])
    blocked = TrainState(
        student=student, teacher=teacher, optimizer=None, config=small_config(), fixed_blocks=True
    )
    block_round = update_matchings(blocked, train_set.images[:16])
    for solved_cost, block_cost in zip(solved.costs, block_round.costs):
        assert block_cost >= solved_cost - 1e-9


def test_ablation_keeps_blocks_fixed(small_sets):
    train_set, val_set = small_sets
    teacher = make_teacher(small_sets)
    student = ToyNet(STUDENT, seed=23)
    log = ablation_no_matching(small_config(epochs=4), train_set, val_set, student, teacher)
    for rnd in log.rounds:
        for owner, width in zip(rnd.owners, (2, 4)):
            assert np.array_equal(owner, block_matching(width, 2 * width).owner)
    assert log.owner_churn() == [0]


def test_ablation_equals_train_when_blocks_optimal(small_sets):
    # Degenerate case: the student starts as an exact copy of a same-width
    # teacher, so the optimal matching is the identity, which is exactly the
    # alpha=1 block layout. Solved and fixed-block runs must then coincide.
    train_set, val_set = small_sets
    twin = NetSpec(widths=(4, 8), strides=(1, 2), image_size=8, n_classes=4)
    teacher_twin = ToyNet(twin, seed=67)
    train(TrainConfig(epochs=2, lr=0.05, gamma=0.0, batch_size=8, seed=101), train_set, val_set, teacher_twin)
    cfg = small_config(epochs=3)
    a = copy.deepcopy(teacher_twin)
    b = copy.deepcopy(teacher_twin)
    log_solved = train(cfg, train_set, val_set, a, teacher_twin)
    log_blocked = ablation_no_matching(cfg, train_set, val_set, b, teacher_twin)
    assert all(np.array_equal(o, np.arange(len(o))) for o in log_solved.rounds[0].owners)
    assert log_solved.epoch_csv() == log_blocked.epoch_csv()
    for p, q in zip(a.params(), b.params()):
        assert np.array_equal(p, q)


def test_ablation_rejects_sparse_reducer(small_sets):
    train_set, val_set = small_sets
    teacher = make_teacher(small_sets)
    with pytest.raises(ValueError):
        ablation_no_matching(
            small_config(reducer=ReducerKind.SM), train_set, val_set, ToyNet(STUDENT, seed=1), teacher
        )


def test_evaluate_counts(small_sets):
    train_set, _ = small_sets
    net = ToyNet(STUDENT, seed=29)
    acc, loss = evaluate(net, train_set, batch_size=8)
    assert 0.0 <= acc <= 100.0
    assert loss > 0.0


@pytest.mark.parametrize("kind", [ReducerKind.AMP, ReducerKind.RD, ReducerKind.SM])
def test_training_with_non_divisible_widths(small_sets, kind):
    # teacher widths not divisible by student widths: shaved channels must
    # flow through matching, margins, reduction and the loss without issue
    train_set, val_set = small_sets
    teacher = ToyNet(NetSpec(widths=(5, 9), strides=(1, 2), image_size=8, n_classes=4), seed=71)
    train(TrainConfig(epochs=2, lr=0.05, gamma=0.0, batch_size=8, seed=102), train_set, val_set, teacher)
    student = ToyNet(STUDENT, seed=31)
    log = train(small_config(epochs=3, reducer=kind), train_set, val_set, student, teacher)
    assert len(log.epochs) == 3
    assert all(np.isfinite(e.distill_loss) for e in log.epochs)
    for rnd in log.rounds:
        for owner, c_s, c_t in zip(rnd.owners, (2, 4), (5, 9)):
            alpha = c_t // c_s if kind is not ReducerKind.SM else 1
            n_shaved = c_t - alpha * c_s
            assert int((owner == -1).sum()) == n_shaved
