"""Experiment orchestration: training loops, restarts, sweeps, evaluation.

A run is fully determined by its TrainConfig: parameter init, shuffling,
policy sampling, and Gumbel noise all flow from substreams of the config
seed, so identical configs produce identical RunRecords (wall time aside)
and byte-identical CSV reports.

The training loop follows a plateau rule: whenever test accuracy fails to
improve for `patience` consecutive epochs, the learning rate is multiplied
by `lr_decay`; the run stops at `max_epochs` or once the rate falls below
`lr_floor`.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import generate, metrics, trees
from .encoders import CheckpointMismatch, EncoderConfig, build_encoder
from .metrics import F1Report, RestartReport


class DatasetError(Exception):
    pass


class DivergenceError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train_path: str = ""
    test_path: str = ""
    lr: float = 1e-3
    l2: float = 0.0
    lr_decay: float = 0.9
    batch_size: int = 64
    max_epochs: int = 10
    patience: int = 1
    lr_floor: float = 1e-5
    seed: int = 0
    reward_decay: float = 0.9  # moving-baseline EMA for the RL-SPINN reward
    limit_train: int | None = None  # train on a prefix subset when set
    limit_test: int | None = None

    def __post_init__(self):
        if self.lr < 0 or self.l2 < 0:
            raise ValueError("lr and l2 must be >= 0")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs, patience must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    test_accuracy: float
    lr: float


@dataclass
class RunRecord:
    config_hash: str
    encoder_kind: str
    epochs: list[EpochStats]
    final_accuracy: float
    wall_time_s: float
    test_predictions: list[int]
    test_trees: list[trees.Tree] | None  # None for encoders without parses

    def stats_tuple(self):
        """Everything except wall time; equal for identically seeded runs."""
        return (
            self.config_hash,
            [(e.epoch, e.train_loss, e.test_accuracy, e.lr) for e in self.epochs],
            self.final_accuracy,
            self.test_predictions,
            self.test_trees,
        )


def config_hash(cfg: TrainConfig) -> str:
    blob = repr(sorted(asdict(cfg).items())).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def load_examples(path, limit: int | None = None) -> list[generate.Example]:
    try:
        examples = generate.read_split(path)
    except (OSError, ValueError) as err:
        raise DatasetError(str(err)) from err
    if not examples:
        raise DatasetError(f"{path}: no examples")
    if limit is not None:
        if limit > len(examples):
            raise DatasetError(f"{path}: asked for {limit} examples, file has {len(examples)}")
        examples = examples[:limit]
    return examples


def _length_batches(order, lengths, batch_size):
    """Group an index order into same-length batches, preserving order."""
    buckets: dict[int, list[int]] = {}
    for idx in order:
        buckets.setdefault(lengths[idx], []).append(idx)
    batches = []
    for length in sorted(buckets):
        bucket = buckets[length]
        for i in range(0, len(bucket), batch_size):
            batches.append(bucket[i:i + batch_size])
    return batches


def _fixed_batches(order, batch_size):
    return [list(order[i:i + batch_size]) for i in range(0, len(order), batch_size)]


class _Trainer:
    """One encoder + optimizer + loss assembly; shared by train/eval paths."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        seq = np.random.SeedSequence(cfg.seed)
        init_seed, train_seed = seq.spawn(2)
        self.encoder = build_encoder(cfg.encoder, np.random.Generator(np.random.PCG64(init_seed)))
        self.rng = np.random.Generator(np.random.PCG64(train_seed))
        self.opt = ad.Adam(self.encoder.params, lr=cfg.lr, l2=cfg.l2)
        self.baseline = 0.0

    def batch_loss(self, batch: list[generate.Example]) -> ad.Tensor:
        enc = self.encoder
        labels = [ex.label for ex in batch]
        if enc.kind == "lstm":
            ids = np.stack([_ids(ex) for ex in batch])
            logits = enc.classify(enc.encode_batch(ids), rng=self.rng, training=True)
            return ad.cross_entropy(logits, labels)

        roots = []
        extra = None
        if enc.kind == "treelstm":
            for ex in batch:
                roots.append(enc.root_h(enc.run_transitions(ex.tokens, ex.transitions)))
        elif enc.kind == "st-gumbel":
            for ex in batch:
                pack, _ = enc.run_layers(ex.tokens, rng=self.rng, training=True)
                roots.append(enc.root_h(pack))
        else:  # rl-spinn
            episodes = []
            for ex in batch:
                pack, _, log_probs = enc.run_episode(ex.tokens, rng=self.rng, training=True)
                roots.append(enc.root_h(pack))
                episodes.append(log_probs)
            extra = episodes

        logits = enc.classify(ad.concat(roots, axis=0), rng=self.rng, training=True)
        loss = ad.cross_entropy(logits, labels)
        if extra is not None:
            preds = np.argmax(logits.data, axis=1)
            surrogates = []
            for log_probs, pred, label in zip(extra, preds, labels):
                reward = 1.0 if pred == label else 0.0
                surrogates.append(ad.reinforce_loss(log_probs, reward, self.baseline))
                self.baseline = ad.moving_baseline(self.baseline, reward, self.cfg.reward_decay)
            policy_loss = ad.mean_all(ad.scale(ad.add_n(surrogates), 1.0 / len(surrogates)))
            loss = ad.add(loss, policy_loss)
        return loss

    def predictions(self, examples) -> tuple[list[int], list[trees.Tree] | None]:
        """Deterministic eval-mode pass over a split (no tape recorded)."""
        enc = self.encoder
        with ad.no_grad():
            if enc.kind == "lstm":
                lengths = [len(ex.tokens) for ex in examples]
                preds = [0] * len(examples)
                for batch in _length_batches(range(len(examples)), lengths, self.cfg.batch_size):
                    ids = np.stack([_ids(examples[i]) for i in batch])
                    logits = enc.classify(enc.encode_batch(ids))
                    for row, i in enumerate(batch):
                        preds[i] = int(np.argmax(logits.data[row]))
                return preds, None

            preds = []
            emitted = []
            for ex in examples:
                if enc.kind == "treelstm":
                    tree = trees.transitions_to_tree(ex.transitions, len(ex.tokens))
                    state, _ = enc.encode(ex.tokens, tree=tree)
                else:
                    state, tree = enc.encode(ex.tokens)
                logits = enc.classify(state)
                preds.append(int(np.argmax(logits.data[0])))
                emitted.append(tree)
            return preds, emitted


def _ids(ex: generate.Example) -> np.ndarray:
    from .encoders import token_ids

    return token_ids(ex.tokens)


def train(cfg: TrainConfig, log=None, checkpoint_path=None) -> RunRecord:
    """Run one training job to completion and report its trajectory.

    With `checkpoint_path`, the final parameters are saved to the named-tensor
    container there.
    """
    start = time.perf_counter()
    train_set = load_examples(cfg.train_path, cfg.limit_train)
    test_set = load_examples(cfg.test_path, cfg.limit_test)
    trainer = _Trainer(cfg)
    lengths = [len(ex.tokens) for ex in train_set]
    labels = [ex.label for ex in test_set]

    lr = cfg.lr
    best = -1.0
    stale = 0
    epochs: list[EpochStats] = []
    preds: list[int] = []
    emitted = None
    for epoch in range(1, cfg.max_epochs + 1):
        order = trainer.rng.permutation(len(train_set))
        if trainer.encoder.kind == "lstm":
            batches = _length_batches(order, lengths, cfg.batch_size)
        else:
            batches = _fixed_batches(order, cfg.batch_size)
        total_loss = 0.0
        total_examples = 0
        trainer.opt.lr = lr
        for batch_idx in batches:
            batch = [train_set[i] for i in batch_idx]
            loss = trainer.batch_loss(batch)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            ad.backward(loss)
            trainer.opt.step()
            total_loss += value * len(batch)
            total_examples += len(batch)

        preds, emitted = trainer.predictions(test_set)
        acc = metrics.accuracy(preds, labels)
        epochs.append(EpochStats(epoch, total_loss / total_examples, acc, lr))
        if log:
            log(f"epoch {epoch}: loss {total_loss / total_examples:.4f} "
                f"test_acc {acc:.2f} lr {lr:.2e}")
        if acc > best:
            best = acc
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                lr *= cfg.lr_decay
                stale = 0
        if lr < cfg.lr_floor:
            break

    if checkpoint_path is not None:
        trainer.encoder.save(checkpoint_path)
    return RunRecord(
        config_hash=config_hash(cfg),
        encoder_kind=cfg.encoder.encoder_kind,
        epochs=epochs,
        final_accuracy=epochs[-1].test_accuracy,
        wall_time_s=time.perf_counter() - start,
        test_predictions=preds,
        test_trees=emitted,
    )


def run_restarts(cfg: TrainConfig, k: int, log=None):
    """k independent trains with seeds seed+0..k-1.

    Failures are collected rather than aborting the remaining runs; the
    report aggregates the completed ones (at least two are required).
    Returns (RestartReport, records, failures).
    """
    if k < 2:
        raise ValueError("restart runs need k >= 2")
    records: list[RunRecord] = []
    failures: list[tuple[int, Exception]] = []
    for i in range(k):
        run_cfg = replace(cfg, seed=cfg.seed + i)
        try:
            records.append(train(run_cfg, log=log))
        except (DatasetError, DivergenceError) as err:
            failures.append((run_cfg.seed, err))
    if len(records) < 2:
        raise DivergenceError(f"only {len(records)} of {k} restart runs completed: {failures}")
    accs = [r.final_accuracy for r in records]
    tree_runs = [r.test_trees for r in records]
    report = metrics.restart_report(accs, tree_runs if all(t is not None for t in tree_runs) else None)
    return report, records, failures


def scale_sweep(cfg: TrainConfig, train_sizes, log=None):
    """One train per size on nested prefix subsets of the train file."""
    rows = []
    for size in train_sizes:
        record = train(replace(cfg, limit_train=int(size)), log=log)
        rows.append((int(size), record.final_accuracy))
    return rows


def sweep(cfg: TrainConfig, grid: dict, log=None):
    """Cartesian grid over config fields; returns (rows, best_row).

    Keys name TrainConfig fields, or EncoderConfig fields prefixed with
    nothing (model_dim, mlp_hidden, dropout, temperature, policy_hidden are
    routed to the encoder). Best is highest final test accuracy, ties broken
    by earlier grid order.
    """
    encoder_fields = {"model_dim", "mlp_hidden", "dropout", "temperature", "policy_hidden"}
    keys = sorted(grid)
    combos = [()]
    for key in keys:
        combos = [prev + (value,) for prev in combos for value in grid[key]]
    rows = []
    best = None
    for combo in combos:
        enc_kw = {}
        cfg_kw = {}
        for key, value in zip(keys, combo):
            (enc_kw if key in encoder_fields else cfg_kw)[key] = value
        run_cfg = replace(cfg, **cfg_kw)
        if enc_kw:
            run_cfg = replace(run_cfg, encoder=replace(cfg.encoder, **enc_kw))
        record = train(run_cfg, log=log)
        row = dict(zip(keys, combo))
        row["test_accuracy"] = record.final_accuracy
        rows.append(row)
        if best is None or record.final_accuracy > best["test_accuracy"]:
            best = row
    return rows, best


def evaluate_checkpoint(cfg: TrainConfig, checkpoint_path, dataset_path, limit=None):
    """Eval-mode pass of a saved model over a dataset file.

    Returns (accuracy, predictions, emitted trees or None, F1Report or None);
    the F1 report compares emitted trees against the file's reference parses.
    """
    examples = load_examples(dataset_path, limit)
    trainer = _Trainer(cfg)
    try:
        trainer.encoder.load(checkpoint_path)
    except (OSError, ValueError) as err:
        raise CheckpointMismatch(str(err)) from err
    preds, emitted = trainer.predictions(examples)
    acc = metrics.accuracy(preds, [ex.label for ex in examples])
    report = None
    if emitted is not None:
        gold = [trees.transitions_to_tree(ex.transitions, len(ex.tokens)) for ex in examples]
        report = metrics.f1_report(emitted, gold)
    return acc, preds, emitted, report


# ---------------------------------------------------------------------------
# byte-stable CSV reports (wall time deliberately excluded)
# ---------------------------------------------------------------------------

def write_run_csv(path, record: RunRecord) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "test_accuracy", "lr"])
        for e in record.epochs:
            w.writerow([e.epoch, f"{e.train_loss:.6f}", f"{e.test_accuracy:.4f}", f"{e.lr:.8g}"])


def write_restarts_csv(path, name: str, report: RestartReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["model", "runs", "mean", "stddev", "max", "self_f1"])
        sf1 = "-" if report.self_f1 is None else f"{report.self_f1:.4f}"
        w.writerow([
            name,
            len(report.accuracies),
            f"{report.mean:.4f}",
            f"{report.stddev:.4f}",
            f"{report.max:.4f}",
            sf1,
        ])


def write_scale_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["train_size", "test_accuracy"])
        for size, acc in rows:
            w.writerow([size, f"{acc:.4f}"])


def write_sweep_csv(path, rows, keys) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(list(keys) + ["test_accuracy"])
        for row in rows:
            w.writerow([row[k] for k in keys] + [f"{row['test_accuracy']:.4f}"])


def write_eval_csv(path, accuracy: float, report: F1Report | None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["accuracy", "f1_lb", "f1_rb", "f1_gt", "avg_depth"])
        if report is None:
            w.writerow([f"{accuracy:.4f}", "-", "-", "-", "-"])
        else:
            w.writerow([
                f"{accuracy:.4f}",
                f"{report.f1_lb:.4f}",
                f"{report.f1_rb:.4f}",
                f"{report.f1_gt:.4f}",
                f"{report.avg_depth:.4f}",
            ])


def write_trees(path, emitted) -> None:
    """One transition string per line, aligned with the evaluated split."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for tree in emitted:
            f.write(trees.tree_to_transitions(tree))
            f.write("\n")


def read_trees(path) -> list[trees.Tree]:
    """Read one tree per line, bracketed form or S/R transition string."""
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                if line.startswith("("):
                    out.append(trees.tree_from_string(line))
                elif set(line) <= {"S", "R"}:
                    n = line.count("S")
                    out.append(trees.transitions_to_tree(line, n))
                else:
                    out.append(int(line))  # single-leaf tree
            except (ValueError, trees.InvalidTransitionSeq) as err:
                raise DatasetError(f"{path}:{lineno}: bad tree: {err}") from err
    return out
