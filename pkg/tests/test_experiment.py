import numpy as np
import pytest

from chanmatch.experiment import (
    ARMS,
    ArmResult,
    ConfigError,
    ExperimentConfig,
    ExperimentResult,
)
from chanmatch.reduction import ReducerKind
from chanmatch.trainer import RunLog


def test_arm_train_config_mapping():
    cfg = ExperimentConfig(gamma=0.25)
    base = cfg.arm_train_config("baseline", seed=3)
    assert base.gamma == 0.0
    assert base.seed == 3
    for arm, kind in [("sm", ReducerKind.SM), ("rd", ReducerKind.RD), ("amp", ReducerKind.AMP),
                      ("mp", ReducerKind.MP), ("avgp", ReducerKind.AVGP)]:
        arm_cfg = cfg.arm_train_config(arm, seed=3)
        assert arm_cfg.reducer is kind
        assert arm_cfg.gamma == 0.25
    nm = cfg.arm_train_config("no_matching", seed=3)
    assert nm.reducer is ReducerKind.AMP
    assert nm.gamma == 0.25


def test_arm_configs_share_seed_across_arms():
    cfg = ExperimentConfig()
    seeds = {cfg.arm_train_config(arm, seed=7).seed for arm in ARMS}
    assert seeds == {7}


def test_teacher_and_warmup_configs():
    cfg = ExperimentConfig(teacher_epochs=9, teacher_lr=0.02, teacher_weight_decay=0.05,
                           warmup_epochs=4)
    tc = cfg.teacher_train_config(0)
    assert (tc.epochs, tc.lr, tc.weight_decay, tc.gamma) == (9, 0.02, 0.05, 0.0)
    wc = cfg.warmup_train_config(0)
    assert (wc.epochs, wc.gamma) == (4, 0.0)
    assert wc.seed != tc.seed  # independent random streams


def test_summary_statistics_sample_std():
    cfg = ExperimentConfig(arms=("baseline",), seeds=3)
    result = ExperimentResult(config=cfg)
    for seed, acc in enumerate([90.0, 92.0, 94.0]):
        result.runs[("baseline", seed)] = ArmResult(
            arm="baseline", seed=seed, log=RunLog(), final_val_acc=acc, student_param_count=1
        )
    rows = result.summary_rows()
    assert rows[0][0] == "baseline"
    assert rows[0][1] == 3
    assert rows[0][2] == pytest.approx(92.0)
    assert rows[0][3] == pytest.approx(np.std([90, 92, 94], ddof=1))
    csv_lines = result.summary_csv().splitlines()
    assert csv_lines[0] == "arm,seeds,mean_val_acc,std_val_acc"


def test_config_hash_is_content_addressed():
    a = ExperimentConfig(seeds=2)
    b = ExperimentConfig(seeds=2)
    c = ExperimentConfig(seeds=3)
    assert a.sha256() == b.sha256()
    assert a.sha256() != c.sha256()


def test_net_specs_match_data_geometry():
    cfg = ExperimentConfig(image_size=8, n_classes=4, teacher_widths=(4, 8), student_widths=(2, 4))
    spec = cfg.net_spec(cfg.teacher_widths)
    assert spec.image_size == 8
    assert spec.n_classes == 4
    assert spec.widths == (4, 8)


def test_invalid_widths_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig(teacher_widths=(16, 32), student_widths=(4, 8, 16))
