"""Joint training of a target classifier and its confidence attacker.

Per batch, in order:

1. ``gan_steps_per_task_step`` generator updates on the combined attack and
   diversity loss, target frozen;
2. ``adversarial_steps_per_task_step`` target updates pushing its scores on
   generated samples towards uniform, generator frozen.  With probability
   ``replay_probability`` the samples come from a stored generator snapshot;
3. one target update on the real batch with the task loss.

Steps 1-2 are skipped together with probability ``skip_attack_probability``
and never run during the first ``epochs_target_alone`` epochs, so setting
that value to at least ``epochs`` gives plain standard training.
"""

import copy
import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import objectives as obj
from . import ops
from .checkpoint import capture, load_checkpoint, restore, save_checkpoint
from .errors import ConfigError, StateError, TrainingDivergedError
from .models import batch_stats_only, frozen
from .optim import Adam
from .tensor import Tensor, no_grad

LOG_COLUMNS = ("epoch", "l00_train", "l00_val", "l01", "l10", "l11", "l12", "l13",
               "err_train", "err_val", "seconds")


@dataclass
class TrainingSchedule:
    epochs: int = 30
    batch_size: int = 32
    epochs_target_alone: int = 0
    gan_steps_per_task_step: int = 1
    adversarial_steps_per_task_step: int = 1
    skip_attack_probability: float = 0.0
    replay_probability: float = 0.10
    seed: int = 0
    learning_rate: float = 1e-3
    gan_learning_rate: float = 1e-3

    def validate(self):
        counts = {
            "epochs": self.epochs,
            "epochs_target_alone": self.epochs_target_alone,
            "gan_steps_per_task_step": self.gan_steps_per_task_step,
            "adversarial_steps_per_task_step": self.adversarial_steps_per_task_step,
        }
        for name, value in counts.items():
            if int(value) != value or value < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {value}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        for name in ("skip_attack_probability", "replay_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        if self.learning_rate <= 0 or self.gan_learning_rate <= 0:
            raise ConfigError("learning rates must be positive")
        return self

    @property
    def standard(self):
        return self.epochs_target_alone >= self.epochs


class Streams:
    """Independent random streams derived from one seed.

    Separate streams keep the attack steps from perturbing the data order or
    dropout masks used by the task step.
    """

    def __init__(self, seed):
        shuffle, schedule, attack, dropout = np.random.SeedSequence(seed).spawn(4)
        self.shuffle = np.random.default_rng(shuffle)
        self.schedule = np.random.default_rng(schedule)
        self.attack = np.random.default_rng(attack)
        self.dropout = np.random.default_rng(dropout)


def batch_slices(n, batch_size):
    return [slice(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


@dataclass
class EpochRecord:
    epoch: int
    l00_train: float
    l00_val: float
    l01: float | None = None
    l10: float | None = None
    l11: float | None = None
    l12: float | None = None
    l13: float | None = None
    err_train: float = 0.0
    err_val: float = 0.0
    seconds: float = 0.0


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def to_csv(self, include_timing=False):
        """CSV text with a fixed column order; missing GAN losses are empty cells.

        Wall time is left empty unless ``include_timing`` so reruns are
        byte-identical.
        """
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for rec in self.records:
            row = []
            for col in LOG_COLUMNS:
                value = getattr(rec, col)
                if col == "seconds" and not include_timing:
                    value = None
                row.append("" if value is None else repr(value))
            writer.writerow(row)
        return buf.getvalue()

    def save(self, path, include_timing=False):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv(include_timing))
        return path

    @classmethod
    def from_csv(cls, text):
        reader = csv.DictReader(io.StringIO(text))
        records = []
        for row in reader:
            values = {}
            for col in LOG_COLUMNS:
                cell = row[col]
                if col == "epoch":
                    values[col] = int(cell)
                else:
                    values[col] = None if cell == "" else float(cell)
            values["seconds"] = values["seconds"] or 0.0
            records.append(EpochRecord(**values))
        return cls(records)


class GanSnapshotStore:
    """Generator checkpoints kept for experience replay, two per GAN epoch."""

    def __init__(self, entries=None):
        self.entries = list(entries or [])

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def add(self, ckpt):
        self.entries.append(ckpt)

    def sample(self, rng):
        if not self.entries:
            raise StateError("snapshot store is empty")
        return self.entries[int(rng.integers(len(self.entries)))]

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for i, ckpt in enumerate(self.entries):
            save_checkpoint(directory / f"{i:05d}_epoch{ckpt.epoch:04d}_{ckpt.tag}.ckpt", ckpt)
        return directory

    @classmethod
    def load(cls, directory):
        return cls(load_checkpoint(p) for p in sorted(Path(directory).glob("*.ckpt")))


def snapshot_epoch(store, generator, best_of_epoch, epoch):
    """Append the epoch's best generator state and its current state."""
    meta = {"sample_shape": list(generator_sample_shape(generator))}
    best = copy.deepcopy(best_of_epoch)
    best.meta.update(meta)
    store.add(best)
    store.add(capture(generator, epoch, "end-of-epoch", meta))


def select_best(log, checkpoints):
    """Checkpoint of the epoch with the lowest validation task loss (earliest on ties)."""
    if not log.records:
        raise StateError("no completed epoch to select from")
    losses = np.array(log.column("l00_val"))
    best_epoch = log.records[int(np.argmin(losses))].epoch
    for ckpt in checkpoints:
        if ckpt.epoch == best_epoch:
            return ckpt
    raise StateError(f"no checkpoint stored for epoch {best_epoch}")


def draw_seeds(rng, count, sample_shape):
    return rng.random((count,) + tuple(sample_shape))


def generate(generator, seeds):
    """Generator output with batch statistics and no running-stat update."""
    with no_grad(), batch_stats_only(generator):
        return generator(Tensor(seeds)).data


def export_attack_samples(store, generator, count, seed=0):
    """Samples drawn from uniformly chosen stored snapshots.

    ``generator`` only provides the architecture; it is copied, never
    modified.  Snapshots run in eval mode (running batch-norm statistics) so
    each output does not depend on which other seeds share its batch.
    """
    if not len(store):
        raise StateError("cannot export attacks from an empty snapshot store")
    rng = np.random.default_rng(seed)
    picks = rng.integers(len(store), size=count)
    sample_shape = getattr(generator, "sample_shape", None) or \
        store.entries[0].meta.get("sample_shape")
    if sample_shape is None:
        raise StateError("sample shape unknown: set generator.sample_shape")
    shape = (count,) + tuple(sample_shape)
    seeds = rng.random(shape)
    out = np.zeros(shape)
    scratch = copy.deepcopy(generator).eval()
    with no_grad():
        for index in np.unique(picks):
            rows = np.flatnonzero(picks == index)
            restore(scratch, store.entries[index])
            out[rows] = scratch(Tensor(seeds[rows])).data
    return out


def generator_sample_shape(generator):
    shape = getattr(generator, "sample_shape", None)
    if shape is None:
        raise StateError("generator has no recorded sample shape; set generator.sample_shape")
    return tuple(shape)


@dataclass
class TrainResult:
    best: object
    log: TrainLog
    store: GanSnapshotStore
    checkpoints: list

    def __iter__(self):
        return iter((self.best, self.log, self.store))


def _finite(value, epoch, batch, what):
    if not np.isfinite(value):
        raise TrainingDivergedError(epoch, batch, what)
    return value


def evaluate_task(model, dataset, batch_size=512):
    """Eval-mode mean task loss and error rate."""
    model.eval()
    total_loss = 0.0
    wrong = 0
    with no_grad():
        for sl in batch_slices(len(dataset), batch_size):
            logits = model(Tensor(dataset.samples[sl]))
            labels = dataset.labels[sl]
            total_loss += obj.loss_task(logits, labels).item() * len(labels)
            wrong += int(np.sum(np.argmax(logits.data, axis=1) != labels))
    return total_loss / len(dataset), wrong / len(dataset)


class Trainer:
    """Runs the schedule; ``hook(step, epoch, batch)`` observes every update."""

    def __init__(self, target, generator, schedule, diversity=None, hook=None):
        self.target = target
        self.generator = generator
        self.schedule = schedule.validate()
        self.diversity = diversity or obj.DiversityConfig()
        self.hook = hook
        self.streams = Streams(schedule.seed)
        self.target_opt = Adam(target.parameters(), lr=schedule.learning_rate)
        self.gan_opt = Adam(generator.parameters(), lr=schedule.gan_learning_rate) \
            if generator is not None else None
        self.store = GanSnapshotStore()
        self._replay_gen = copy.deepcopy(generator) if generator is not None else None

    def _notify(self, step, epoch, batch):
        if self.hook is not None:
            self.hook(step, epoch, batch)

    # --- the three steps -------------------------------------------------

    def gan_step(self, batch_size, n_classes, epoch, batch):
        sample_shape = self.generator.sample_shape
        seeds = draw_seeds(self.streams.attack, batch_size, sample_shape)
        self.generator.train()
        self.target.eval()
        with frozen(self.target):
            fake = self.generator(Tensor(seeds))
            logits = self.target(fake)
            n_set = self.diversity.resolve(n_classes, batch_size)
            l10 = obj.loss_attack(logits)
            if n_set >= 2 and batch_size >= 2:
                l11 = obj.loss_sample_diversity(seeds[:n_set], fake[:n_set], self.diversity)
                l12 = obj.loss_output_diversity(seeds[:n_set], ops.softmax(logits[:n_set]),
                                                self.diversity)
            else:
                l11 = l12 = Tensor(0.0)
            l13 = obj.loss_gan(l10, l11, l12)
        values = [_finite(t.item(), epoch, batch, name)
                  for t, name in ((l10, "L10"), (l11, "L11"), (l12, "L12"), (l13, "L13"))]
        state_before = self.generator.state_dict()
        self.gan_opt.zero_grad()
        l13.backward()
        self.gan_opt.step()
        self._notify("gan", epoch, batch)
        return values, state_before

    def adversarial_step(self, batch_size, epoch, batch):
        seeds = draw_seeds(self.streams.attack, batch_size, self.generator.sample_shape)
        source = self.generator
        if len(self.store) and self.streams.schedule.random() < self.schedule.replay_probability:
            restore(self._replay_gen, self.store.sample(self.streams.schedule))
            source = self._replay_gen
            self._notify("replay", epoch, batch)
        fake = generate(source, seeds)
        self.target.train()
        logits = self.target(Tensor(fake), rng=self.streams.dropout)
        loss = obj.loss_confidence(logits)
        value = _finite(loss.item(), epoch, batch, "L01")
        self.target_opt.zero_grad()
        loss.backward()
        self.target_opt.step()
        self._notify("adversarial", epoch, batch)
        return value

    def task_step(self, x, y, epoch, batch):
        self.target.train()
        logits = self.target(Tensor(x), rng=self.streams.dropout)
        loss = obj.loss_task(logits, y)
        value = _finite(loss.item(), epoch, batch, "L00")
        self.target_opt.zero_grad()
        loss.backward()
        self.target_opt.step()
        self._notify("task", epoch, batch)
        wrong = int(np.sum(np.argmax(logits.data, axis=1) != y))
        return value, wrong

    # --- driver ----------------------------------------------------------

    def fit(self, train_set, val_set):
        sched = self.schedule
        if len(train_set) == 0 or len(val_set) == 0:
            raise ConfigError("training and validation sets must be non-empty")
        if not train_set.labeled or not val_set.labeled:
            raise ConfigError("training and validation sets must be labeled")
        n_classes = self.target.cfg.n_classes
        attacks = self.generator is not None and not sched.standard
        if attacks:
            self.generator.sample_shape = train_set.sample_shape
            self._replay_gen.sample_shape = train_set.sample_shape

        log = TrainLog()
        checkpoints = []
        for epoch in range(sched.epochs):
            started = time.perf_counter()
            order = self.streams.shuffle.permutation(len(train_set))
            gan_vals, adv_vals, task_vals = [], [], []
            wrong = 0
            best_l13, best_state = np.inf, None
            attack_epoch = attacks and epoch >= sched.epochs_target_alone
            for b, sl in enumerate(batch_slices(len(order), sched.batch_size)):
                idx = order[sl]
                x, y = train_set.samples[idx], train_set.labels[idx]
                skip = attack_epoch and sched.skip_attack_probability > 0 and \
                    self.streams.schedule.random() < sched.skip_attack_probability
                if attack_epoch and not skip:
                    for _ in range(sched.gan_steps_per_task_step):
                        values, state = self.gan_step(len(idx), n_classes, epoch, b)
                        gan_vals.append(values)
                        if values[3] < best_l13:
                            best_l13, best_state = values[3], state
                    for _ in range(sched.adversarial_steps_per_task_step):
                        adv_vals.append(self.adversarial_step(len(idx), epoch, b))
                loss, n_wrong = self.task_step(x, y, epoch, b)
                task_vals.append(loss * len(idx))
                wrong += n_wrong

            if best_state is not None:
                best = capture(self.generator, epoch, "best-of-epoch", {"l13": best_l13})
                best.params = best_state
                snapshot_epoch(self.store, self.generator, best, epoch)

            l00_val, err_val = evaluate_task(self.target, val_set)
            _finite(l00_val, epoch, "validation", "validation L00")
            gan = np.mean(gan_vals, axis=0) if gan_vals else [None] * 4
            log.records.append(EpochRecord(
                epoch=epoch,
                l00_train=float(np.sum(task_vals) / len(train_set)),
                l00_val=float(l00_val),
                l01=float(np.mean(adv_vals)) if adv_vals else None,
                l10=None if gan[0] is None else float(gan[0]),
                l11=None if gan[1] is None else float(gan[1]),
                l12=None if gan[2] is None else float(gan[2]),
                l13=None if gan[3] is None else float(gan[3]),
                err_train=wrong / len(train_set),
                err_val=float(err_val),
                seconds=time.perf_counter() - started,
            ))
            checkpoints.append(capture(self.target, epoch, "target-epoch"))

        best = copy.deepcopy(select_best(log, checkpoints))
        best.tag = "target-best"
        return TrainResult(best, log, self.store, checkpoints)


def train(target, generator, train_set, val_set, schedule, diversity=None, hook=None):
    """Train ``target`` (and ``generator``); returns best checkpoint, log and store.

    ``target`` is left in its final-epoch state; restore ``result.best`` to
    deploy the selected model.
    """
    return Trainer(target, generator, schedule, diversity, hook).fit(train_set, val_set)
