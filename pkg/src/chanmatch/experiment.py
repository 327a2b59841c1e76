"""Experiment orchestration: arms, seeds, artifacts, and summaries.

An experiment trains one teacher per seed, then runs each requested arm
against that teacher with an identically initialized student, so arms are
paired within a seed. Artifacts per run: an epoch CSV, a matching-cost CSV,
one matching trace per round, a checkpoint, and optional PGM feature dumps;
plus a summary CSV and a replay manifest per experiment.
"""

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, pgm, reduction
from .data import Dataset, SynthSpec, generate, split_train_val
from .matching import SHAVED, Matching, SparseMatching, format_matching
from .nets import NetSpec, ToyNet
from .reduction import ReducerKind
from .trainer import RunLog, TrainConfig, ablation_no_matching, evaluate, train

ARMS = ("baseline", "sm", "rd", "amp", "mp", "avgp", "no_matching")

# Seed offsets keeping init / training / data streams distinct per replicate.
_TEACHER_INIT_BASE = 7_000_000
_TEACHER_TRAIN_BASE = 8_000_000
_STUDENT_INIT_BASE = 9_000_000
_WARMUP_TRAIN_BASE = 6_000_000


class ConfigError(ValueError):
    """Raised for unparseable or invalid experiment configs."""


@dataclass
class ExperimentConfig:
    # data
    n_classes: int = 8
    samples_per_class: int = 40
    image_size: int = 16
    noise_sigma: float = 1.5
    val_fraction: float = 0.2
    # architectures
    teacher_widths: tuple[int, ...] = (16, 32, 64)
    student_widths: tuple[int, ...] = (4, 8, 16)
    strides: tuple[int, ...] | None = None
    # teacher pre-training
    teacher_epochs: int = 40
    teacher_lr: float = 0.03
    teacher_weight_decay: float = 0.01
    # student training; all arms start from the same task-only warm start so
    # comparisons are paired and matching costs begin at full feature scale
    warmup_epochs: int = 12
    epochs: int = 40
    lr: float = 0.05
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    gamma: float = 0.3
    match_update_period: int = 2
    match_subset_fraction: float = 1.0
    batch_size: int = 32
    # experiment
    arms: tuple[str, ...] = ARMS
    seeds: int = 5
    out_dir: str = "results"
    dump_features: bool = True
    dump_tap: int = -1
    dump_sample: int = 0
    dump_channels: int = 4

    def __post_init__(self):
        self.arms = tuple(self.arms)
        self.teacher_widths = tuple(self.teacher_widths)
        self.student_widths = tuple(self.student_widths)
        if self.strides is not None:
            self.strides = tuple(self.strides)
        if not self.arms:
            raise ConfigError("arms must be non-empty")
        for arm in self.arms:
            if arm not in ARMS:
                raise ConfigError(f"unknown arm {arm!r}; choose from {ARMS}")
        if self.seeds < 1:
            raise ConfigError("seeds must be positive")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be non-negative")
        if len(self.teacher_widths) != len(self.student_widths):
            raise ConfigError("teacher and student must have the same number of stages")
        if any(t < s for t, s in zip(self.teacher_widths, self.student_widths)):
            raise ConfigError("teacher must be at least as wide as the student at every stage")

    # -- (de)serialization --------------------------------------------------

    _SECTIONS = {
        "data": ("n_classes", "samples_per_class", "image_size", "noise_sigma", "val_fraction"),
        "nets": ("teacher_widths", "student_widths", "strides"),
        "teacher": ("teacher_epochs", "teacher_lr", "teacher_weight_decay"),
        "train": (
            "warmup_epochs",
            "epochs",
            "lr",
            "lr_decay_factor",
            "momentum",
            "weight_decay",
            "gamma",
            "match_update_period",
            "match_subset_fraction",
            "batch_size",
        ),
        "experiment": (
            "arms",
            "seeds",
            "out_dir",
            "dump_features",
            "dump_tap",
            "dump_sample",
            "dump_channels",
        ),
    }

    def to_dict(self) -> dict:
        flat = asdict(self)
        out = {}
        for section, keys in self._SECTIONS.items():
            out[section] = {k: flat[k] for k in keys}
        for section in ("nets",):
            for k in ("teacher_widths", "student_widths", "strides"):
                if out[section][k] is not None:
                    out[section][k] = list(out[section][k])
        out["experiment"]["arms"] = list(self.arms)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        kwargs = {}
        known = {section: set(keys) for section, keys in cls._SECTIONS.items()}
        for section, payload in raw.items():
            if section not in known:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(payload, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            for key, value in payload.items():
                if key not in known[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def sha256(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()

    # -- derived pieces ------------------------------------------------------

    def synth_spec(self, seed: int) -> SynthSpec:
        return SynthSpec(
            n_classes=self.n_classes,
            samples_per_class=self.samples_per_class,
            image_size=self.image_size,
            noise_sigma=self.noise_sigma,
            seed=seed,
        )

    def net_spec(self, widths: tuple[int, ...]) -> NetSpec:
        return NetSpec(
            widths=widths,
            strides=self.strides,
            image_size=self.image_size,
            in_channels=1,
            n_classes=self.n_classes,
        )

    def teacher_train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.teacher_epochs,
            lr=self.teacher_lr,
            lr_decay_factor=self.lr_decay_factor,
            momentum=self.momentum,
            weight_decay=self.teacher_weight_decay,
            gamma=0.0,
            batch_size=self.batch_size,
            seed=_TEACHER_TRAIN_BASE + seed,
        )

    def warmup_train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.warmup_epochs,
            lr=self.lr,
            lr_decay_factor=self.lr_decay_factor,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            gamma=0.0,
            batch_size=self.batch_size,
            seed=_WARMUP_TRAIN_BASE + seed,
        )

    def arm_train_config(self, arm: str, seed: int) -> TrainConfig:
        reducer = ReducerKind.AMP if arm in ("baseline", "no_matching") else ReducerKind(arm)
        return TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            lr_decay_factor=self.lr_decay_factor,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            gamma=0.0 if arm == "baseline" else self.gamma,
            reducer=reducer,
            match_update_period=self.match_update_period,
            match_subset_fraction=self.match_subset_fraction,
            batch_size=self.batch_size,
            seed=seed,
        )


@dataclass
class ArmResult:
    arm: str
    seed: int
    log: RunLog
    final_val_acc: float
    student_param_count: int


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: dict = field(default_factory=dict)  # (arm, seed) -> ArmResult
    teacher_val_acc: dict = field(default_factory=dict)  # seed -> float

    def arm_accs(self, arm: str) -> list[float]:
        return [self.runs[(arm, s)].final_val_acc for s in range(self.config.seeds)]

    def summary_rows(self) -> list[tuple[str, int, float, float]]:
        rows = []
        for arm in self.config.arms:
            accs = np.array(self.arm_accs(arm))
            std = float(accs.std(ddof=1)) if len(accs) > 1 else 0.0
            rows.append((arm, len(accs), float(accs.mean()), std))
        return rows

    def summary_csv(self) -> str:
        lines = ["arm,seeds,mean_val_acc,std_val_acc"]
        for arm, n, mean, std in self.summary_rows():
            lines.append(f"{arm},{n},{mean!r},{std!r}")
        return "\n".join(lines) + "\n"


def _owner_to_matching(owner: np.ndarray) -> Matching:
    c_s = int(owner.max()) + 1
    alpha = int((owner != SHAVED).sum()) // c_s
    return Matching(owner=owner, alpha=alpha, c_s=c_s)


def _write_matching_traces(out_dir: Path, arm: str, seed: int, log: RunLog) -> None:
    for k, rnd in enumerate(log.rounds):
        blocks = []
        for p, owner in enumerate(rnd.owners):
            blocks.append(f"# tap={p} epoch={rnd.epoch} cost={rnd.costs[p]!r}")
            blocks.append(format_matching(_owner_to_matching(owner)).rstrip("\n"))
        text = "\n".join(blocks) + "\n"
        (out_dir / f"matching_{arm}_{seed}_round{k}.txt").write_text(text)


def _dump_run_features(
    out_dir: Path,
    cfg: ExperimentConfig,
    arm: str,
    seed: int,
    teacher: ToyNet,
    student: ToyNet,
    log: RunLog,
    val_set: Dataset,
) -> None:
    """Side-by-side PGMs: owned teacher channels, reduced channel, student channel."""
    tap = cfg.dump_tap % student.n_taps
    x = val_set.images[cfg.dump_sample : cfg.dump_sample + 1]
    _, t_taps = teacher.forward(x)
    _, s_taps = student.forward(x)
    h, w = student.tap_spatial[tap]
    owner = log.rounds[-1].owners[tap]
    m = _owner_to_matching(owner)
    reducer = ReducerKind.AMP if arm == "no_matching" else ReducerKind(arm)
    if reducer is ReducerKind.SM:
        pairs = np.array([np.flatnonzero(owner == i)[0] for i in range(m.c_s)])
        sparse = SparseMatching(pairs=pairs, c_t=m.c_t)
        reduced = reduction.reduce(t_taps[tap], reducer, sparse)
        groups = pairs[:, None]
    else:
        reduced = reduction.reduce(t_taps[tap], reducer, m, rng=np.random.default_rng(0))
        groups = m.groups()

    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    sidecar = {}

    def dump(name: str, values: np.ndarray) -> None:
        unit, vmin, vmax = pgm.normalize_unit(values.reshape(h, w))
        pgm.write_pgm(feat_dir / f"{name}.pgm", unit)
        sidecar[name] = {"min": vmin, "max": vmax}

    for i in range(min(cfg.dump_channels, m.c_s)):
        for rank, j in enumerate(groups[i]):
            dump(f"{arm}_{seed}_tap{tap}_s{i}_teacher{rank}", t_taps[tap][j])
        dump(f"{arm}_{seed}_tap{tap}_s{i}_reduced", reduced[i])
        dump(f"{arm}_{seed}_tap{tap}_s{i}_student", s_taps[tap][i])
    path = feat_dir / f"{arm}_{seed}_tap{tap}_sidecar.json"
    path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def run_experiment(config: ExperimentConfig, dry_run: bool = False) -> ExperimentResult | None:
    """Execute every (arm, seed) pair and write artifacts under out_dir."""
    if dry_run:
        return None
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = ExperimentResult(config=config)

    for seed in range(config.seeds):
        dataset = generate(config.synth_spec(seed))
        train_set, val_set = split_train_val(dataset, config.val_fraction)

        teacher = ToyNet(config.net_spec(config.teacher_widths), seed=_TEACHER_INIT_BASE + seed)
        train(config.teacher_train_config(seed), train_set, val_set, teacher)
        teacher_acc, _ = evaluate(teacher, val_set, config.batch_size)
        result.teacher_val_acc[seed] = teacher_acc
        teacher.save(out_dir / f"ckpt_teacher_{seed}")

        warm = ToyNet(config.net_spec(config.student_widths), seed=_STUDENT_INIT_BASE + seed)
        if config.warmup_epochs:
            train(config.warmup_train_config(seed), train_set, val_set, warm)

        for arm in config.arms:
            student = copy.deepcopy(warm)
            arm_cfg = config.arm_train_config(arm, seed)
            if arm == "baseline":
                log = train(arm_cfg, train_set, val_set, student)
            elif arm == "no_matching":
                log = ablation_no_matching(arm_cfg, train_set, val_set, student, teacher)
            else:
                log = train(arm_cfg, train_set, val_set, student, teacher)
            result.runs[(arm, seed)] = ArmResult(
                arm=arm,
                seed=seed,
                log=log,
                final_val_acc=log.final_val_acc,
                student_param_count=student.parameter_count(),
            )
            (out_dir / f"epochs_{arm}_{seed}.csv").write_text(log.epoch_csv())
            if log.rounds:
                (out_dir / f"costs_{arm}_{seed}.csv").write_text(log.costs_csv())
                _write_matching_traces(out_dir, arm, seed, log)
            student.save(out_dir / f"ckpt_{arm}_{seed}")
            if config.dump_features and seed == 0 and arm != "baseline":
                _dump_run_features(out_dir, config, arm, seed, teacher, student, log, val_set)

    (out_dir / "summary.csv").write_text(result.summary_csv())
    manifest = {
        "version": __version__,
        "config": config.to_dict(),
        "config_sha256": config.sha256(),
        "seeds": list(range(config.seeds)),
        "arms": list(config.arms),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return result


def dump_checkpoint_features(
    checkpoint_path, dataset: Dataset, sample_index: int, tap: int, out_dir
) -> list[Path]:
    """Per-channel PGMs of one checkpoint's tap features for one sample."""
    net = ToyNet.load(checkpoint_path)
    if not 0 <= sample_index < len(dataset):
        raise ValueError(f"sample index {sample_index} out of range")
    tap = tap % net.n_taps
    x = dataset.images[sample_index : sample_index + 1]
    _, taps = net.forward(x)
    h, w = net.tap_spatial[tap]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    sidecar = {}
    for c in range(taps[tap].shape[0]):
        unit, vmin, vmax = pgm.normalize_unit(taps[tap][c].reshape(h, w))
        path = out / f"sample{sample_index}_tap{tap}_ch{c}.pgm"
        pgm.write_pgm(path, unit)
        sidecar[path.name] = {"min": vmin, "max": vmax}
        written.append(path)
    sidecar_path = out / f"sample{sample_index}_tap{tap}_sidecar.json"
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    written.append(sidecar_path)
    return written
