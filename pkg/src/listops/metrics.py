"""Parse-quality and task metrics: unlabeled bracket F1 and accuracy reports.

Span convention, applied uniformly to every number this package reports: the
span set of a tree is the inclusive span of every internal node, root span
included, leaf spans excluded. Corpus F1 is the macro average (per-example F1,
then mean), scaled to 0..100.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import trees as tr


class LengthMismatch(Exception):
    pass


def unlabeled_f1(pred: tr.Tree, gold: tr.Tree) -> float:
    """Unlabeled bracket F1 between two trees over the same tokens, in [0, 1].

    Both span sets have size n-1, so precision, recall, and F1 coincide here;
    the general harmonic mean is kept for safety.
    """
    n_pred = tr.n_leaves(pred)
    n_gold = tr.n_leaves(gold)
    if n_pred != n_gold:
        raise LengthMismatch(f"trees over {n_pred} vs {n_gold} tokens")
    if n_pred < 2:
        raise LengthMismatch("F1 needs at least 2 tokens")
    pred_spans = tr.spans(pred)
    gold_spans = tr.spans(gold)
    matched = len(pred_spans & gold_spans)
    if matched == 0:
        return 0.0
    precision = matched / len(pred_spans)
    recall = matched / len(gold_spans)
    if precision == recall:
        return precision
    return 2.0 * precision * recall / (precision + recall)


def corpus_f1(preds, refs) -> float:
    """Macro-averaged per-example F1, scaled to [0, 100]."""
    if len(preds) != len(refs):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(refs)} references")
    if not preds:
        raise LengthMismatch("empty corpus")
    return 100.0 * sum(unlabeled_f1(p, g) for p, g in zip(preds, refs)) / len(preds)


def self_f1(runs) -> float:
    """Mean pairwise corpus F1 over all unordered pairs of runs, in [0, 100].

    Every run must parse the same corpus in the same order.
    """
    runs = list(runs)
    if len(runs) < 2:
        raise ValueError("self F1 needs at least 2 runs")
    total = 0.0
    pairs = 0
    for i in range(len(runs)):
        for j in range(i + 1, len(runs)):
            total += corpus_f1(runs[i], runs[j])
            pairs += 1
    return total / pairs


def accuracy(preds, labels) -> float:
    """Fraction of exact label matches, scaled to [0, 100]."""
    if len(preds) != len(labels):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(labels)} labels")
    if not labels:
        raise LengthMismatch("empty corpus")
    correct = sum(1 for p, y in zip(preds, labels) if p == y)
    return 100.0 * correct / len(labels)


@dataclass
class F1Report:
    """Parse quality of one set of predicted trees against the three baselines."""

    f1_lb: float
    f1_rb: float
    f1_gt: float
    avg_depth: float


def f1_report(pred_trees, gold_trees) -> F1Report:
    """F1 of the predictions against left-branching, right-branching, and
    gold trees, plus the predictions' mean average token depth."""
    lb = [tr.left_branching(tr.n_leaves(t)) for t in pred_trees]
    rb = [tr.right_branching(tr.n_leaves(t)) for t in pred_trees]
    return F1Report(
        f1_lb=corpus_f1(pred_trees, lb),
        f1_rb=corpus_f1(pred_trees, rb),
        f1_gt=corpus_f1(pred_trees, gold_trees),
        avg_depth=sum(float(tr.avg_token_depth(t)) for t in pred_trees) / len(pred_trees),
    )


@dataclass
class RestartReport:
    """Accuracy spread and parse agreement across independent restarts.

    ``self_f1`` is None for encoders that do not emit trees.
    """

    accuracies: list[float] = field(default_factory=list)
    mean: float = 0.0
    stddev: float = 0.0
    max: float = 0.0
    self_f1: float | None = None


def restart_report(per_run_accuracies, per_run_trees=None) -> RestartReport:
    """Population mean/stddev/max of run accuracies plus pairwise self F1."""
    accs = [float(a) for a in per_run_accuracies]
    if len(accs) < 2:
        raise ValueError("a restart report needs at least 2 runs")
    mean = sum(accs) / len(accs)
    var = sum((a - mean) ** 2 for a in accs) / len(accs)
    sf1 = None
    if per_run_trees is not None:
        sf1 = self_f1(per_run_trees)
    return RestartReport(
        accuracies=accs,
        mean=mean,
        stddev=var ** 0.5,
        max=max(accs),
        self_f1=sf1,
    )
