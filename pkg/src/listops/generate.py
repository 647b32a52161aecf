"""Procedural sampling of ListOps corpora with labels and reference parses.

Sampling is fully deterministic given the config seed. Streams are addressed
positionally through ``numpy.random.SeedSequence`` spawn keys, so each (split,
shard) pair owns an independent substream: a shard's output never depends on
how many other shards exist or in what order they ran, and the assembled file
is byte-identical whether shards are generated serially or farmed out.

Dataset file format, one example per line, UTF-8 with LF endings::

    <label digit> TAB <tokens single-space separated> TAB <transitions S/R string>
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import core, trees
from .core import Leaf, ListNode, OPS, Token

N_LABELS = 10


class BalanceUnreachable(Exception):
    """Rejection sampling exhausted its attempt budget before filling quotas."""


@dataclass(frozen=True)
class GenConfig:
    max_depth: int = 6
    max_args: int = 5
    p_nest: float = 0.3
    n_train: int = 20000
    n_test: int = 2000
    seed: int = 0
    balance_labels: bool = True
    balance_ops: bool = True
    min_tokens: int | None = None
    max_tokens: int | None = None
    # attempts per requested example before giving up on quota balancing
    attempt_factor: int = 400

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.max_args < 2:
            raise ValueError("max_args must be >= 2")
        if not 0.0 <= self.p_nest < 1.0:
            raise ValueError("p_nest must be in [0, 1)")
        if self.n_train < 1 or self.n_test < 0:
            raise ValueError("need n_train >= 1 and n_test >= 0")


@dataclass(frozen=True)
class Example:
    tokens: tuple[Token, ...]
    label: int
    transitions: str
    depth: int
    avg_token_depth: float

    @property
    def text(self) -> str:
        return core.detokenize(self.tokens)

    def line(self) -> str:
        return f"{self.label}\t{self.text}\t{self.transitions}"


@dataclass
class Dataset:
    config: GenConfig
    train: list[Example]
    test: list[Example]


def _sample_list(cfg: GenConfig, rng, depth: int) -> ListNode:
    op = OPS[rng.integers(len(OPS))]
    k = int(rng.integers(1, cfg.max_args + 1))
    can_nest = depth < cfg.max_depth and cfg.p_nest > 0.0
    nested = [can_nest and rng.random() < cfg.p_nest for _ in range(k)]
    if all(nested):  # every list keeps at least one digit child
        nested[int(rng.integers(k))] = False
    children = []
    for nest in nested:
        if nest:
            children.append(_sample_list(cfg, rng, depth + 1))
        else:
            children.append(Leaf(int(rng.integers(N_LABELS))))
    return ListNode(op, tuple(children))


def sample_expression(cfg: GenConfig, rng) -> ListNode:
    """Draw one expression; the root is always a list, operators are uniform.

    ``balance_ops`` acts at dataset-assembly time (whole splits are resampled
    until operator frequencies even out), not per expression.
    """
    return _sample_list(cfg, rng, depth=1)


def make_example(ast) -> Example:
    """Attach label, reference transitions, and depth statistics to an AST.

    The label is the recursive evaluation; the streaming evaluator re-derives
    it from the tokens as a built-in cross-check.
    """
    tokens = core.ast_to_tokens(ast)
    label = core.eval_ast(ast)
    streamed = core.eval_stack(tokens)
    if streamed != label:
        raise AssertionError(
            f"evaluator mismatch on {core.detokenize(tokens)!r}: {label} vs {streamed}"
        )
    tree = trees.reference_parse(ast)
    return Example(
        tokens=tokens,
        label=label,
        transitions=trees.tree_to_transitions(tree),
        depth=core.ast_depth(ast),
        avg_token_depth=float(trees.avg_token_depth(tree)),
    )


def _split_quota(total: int, bins: int) -> list[int]:
    base, rem = divmod(total, bins)
    return [base + (1 if i < rem else 0) for i in range(bins)]


def _shard_rng(seed: int, split_index: int, shard: int, attempt: int):
    seq = np.random.SeedSequence(seed, spawn_key=(split_index, shard, attempt))
    return np.random.Generator(np.random.PCG64(seq))


def _generate_shard(
    cfg: GenConfig,
    n: int,
    split_index: int,
    shard: int,
    attempt: int,
    label_quota: list[int] | None,
    forbidden: frozenset[str],
) -> list[Example]:
    """Fill one shard's quotas by rejection sampling on its own substream."""
    rng = _shard_rng(cfg.seed, split_index, shard, attempt)
    remaining = list(label_quota) if label_quota is not None else None
    out: list[Example] = []
    seen: set[str] = set()
    budget = cfg.attempt_factor * n + 1000
    while len(out) < n:
        if budget <= 0:
            missing = (
                {d: r for d, r in enumerate(remaining) if r > 0} if remaining else n - len(out)
            )
            raise BalanceUnreachable(f"attempt budget exhausted; still missing {missing}")
        budget -= 1
        ast = sample_expression(cfg, rng)
        tokens = core.ast_to_tokens(ast)
        if cfg.min_tokens is not None and len(tokens) < cfg.min_tokens:
            continue
        if cfg.max_tokens is not None and len(tokens) > cfg.max_tokens:
            continue
        label = core.eval_ast(ast)
        if remaining is not None:
            if remaining[label] == 0:
                continue
        text = core.detokenize(tokens)
        if text in seen or text in forbidden:
            continue
        seen.add(text)
        if remaining is not None:
            remaining[label] -= 1
        out.append(make_example(ast))
    return out


def _generate_split(
    cfg: GenConfig,
    n: int,
    split_index: int,
    n_shards: int,
    attempt: int,
    forbidden: frozenset[str],
) -> list[Example]:
    if n == 0:
        return []
    global_quota = _split_quota(n, N_LABELS) if cfg.balance_labels else None
    shard_sizes = _split_quota(n, n_shards)
    shard_label_quotas: list[list[int]] | None = None
    if global_quota is not None:
        # split each label's global quota across shards so the assembled split
        # is exactly balanced (max - min <= 1 per label)
        per_label = [_split_quota(q, n_shards) for q in global_quota]
        shard_label_quotas = [[per_label[d][s] for d in range(N_LABELS)] for s in range(n_shards)]
        shard_sizes = [sum(shard_label_quotas[s]) for s in range(n_shards)]
    out: list[Example] = []
    for shard in range(n_shards):
        quota = shard_label_quotas[shard] if shard_label_quotas is not None else None
        out.extend(
            _generate_shard(cfg, shard_sizes[shard], split_index, shard, attempt, quota, forbidden)
        )
    # deterministic uniform shuffle so every prefix of the split is an
    # unbiased subsample (rejection fills rare-label quotas last otherwise)
    shuffle_rng = _shard_rng(cfg.seed, split_index, n_shards, attempt)
    order = shuffle_rng.permutation(len(out))
    return [out[i] for i in order]


def _check_op_balance(examples: list[Example], tolerance: float = 0.05) -> bool:
    counts = dict.fromkeys(OPS, 0)
    for ex in examples:
        for token in ex.tokens:
            if token.kind == core.OPEN_KIND:
                counts[token.op] += 1
    total = sum(counts.values())
    if total == 0:
        return True
    target = 1.0 / len(OPS)
    return all(abs(c / total - target) <= tolerance * target for c in counts.values())


_OP_BALANCE_ATTEMPTS = 80


def _balanced_split(
    cfg: GenConfig,
    n: int,
    split_index: int,
    n_shards: int,
    forbidden: frozenset[str],
) -> list[Example]:
    """Regenerate a split on follow-on substreams until op frequencies even out."""
    attempts = _OP_BALANCE_ATTEMPTS if cfg.balance_ops else 1
    for attempt in range(attempts):
        split = _generate_split(cfg, n, split_index, n_shards, attempt, forbidden)
        if not cfg.balance_ops or not split or _check_op_balance(split):
            return split
    raise BalanceUnreachable(
        f"operator frequencies still off after {attempts} split resamples (n={n})"
    )


def generate_dataset(cfg: GenConfig, n_shards: int = 1) -> Dataset:
    """Deterministic train/test corpus; splits never share a token sequence.

    With ``balance_labels``, each split's label counts differ by at most one.
    With ``balance_ops``, whole splits are resampled until every operator's
    token frequency is within 5% relative of uniform; statistically this
    needs one attempt beyond a few thousand examples, and
    :class:`BalanceUnreachable` is raised if the budget runs out.
    """
    train = _balanced_split(cfg, cfg.n_train, 0, n_shards, frozenset())
    train_texts = frozenset(ex.text for ex in train)
    test = _balanced_split(cfg, cfg.n_test, 1, n_shards, train_texts)
    return Dataset(config=cfg, train=train, test=test)


@dataclass
class CorpusStats:
    n_examples: int = 0
    label_counts: dict = field(default_factory=dict)
    op_counts: dict = field(default_factory=dict)
    depth_histogram: dict = field(default_factory=dict)
    mean_ast_depth: float = 0.0
    mean_tokens: float = 0.0
    mean_avg_token_depth: float = 0.0


def corpus_stats(examples) -> CorpusStats:
    """Single-pass summary; histogram buckets avg token depth at width 1.0."""
    stats = CorpusStats(
        label_counts={d: 0 for d in range(N_LABELS)},
        op_counts={op: 0 for op in OPS},
        depth_histogram={},
    )
    total_depth = 0
    total_tokens = 0
    total_avg = 0.0
    for ex in examples:
        stats.n_examples += 1
        stats.label_counts[ex.label] += 1
        for token in ex.tokens:
            if token.kind == core.OPEN_KIND:
                stats.op_counts[token.op] += 1
        bucket = int(ex.avg_token_depth)
        stats.depth_histogram[bucket] = stats.depth_histogram.get(bucket, 0) + 1
        total_depth += ex.depth
        total_tokens += len(ex.tokens)
        total_avg += ex.avg_token_depth
    if stats.n_examples:
        stats.mean_ast_depth = total_depth / stats.n_examples
        stats.mean_tokens = total_tokens / stats.n_examples
        stats.mean_avg_token_depth = total_avg / stats.n_examples
    return stats


def write_split(path, examples) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ex in examples:
            f.write(ex.line())
            f.write("\n")


def read_split(path) -> list[Example]:
    """Load a dataset file, rebuilding depth statistics from each line."""
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                label_str, text, transitions = line.split("\t")
                tokens = core.tokenize(text)
                tree = trees.transitions_to_tree(transitions, len(tokens))
            except (ValueError, core.ListOpsError, trees.InvalidTransitionSeq) as err:
                raise ValueError(f"{path}:{lineno}: bad example line: {err}") from err
            out.append(
                Example(
                    tokens=tokens,
                    label=int(label_str),
                    transitions=transitions,
                    depth=core.ast_depth(core.parse_prefix(tokens)),
                    avg_token_depth=float(trees.avg_token_depth(tree)),
                )
            )
    return out


# Named presets. "desk" is sized for CI-scale experiments (mean average token
# depth ~8.3, mean length ~27); "paper" is the full-scale configuration whose
# mean average token depth lands near 9.6.
PRESETS: dict[str, GenConfig] = {
    "desk": GenConfig(
        max_depth=6,
        max_args=5,
        p_nest=0.3,
        n_train=20000,
        n_test=2000,
        seed=17,
        min_tokens=8,
        max_tokens=100,
    ),
    "paper": GenConfig(
        max_depth=7,
        max_args=5,
        p_nest=0.34,
        n_train=90000,
        n_test=10000,
        seed=17,
        min_tokens=8,
        max_tokens=250,
    ),
}


def preset(name: str, **overrides) -> GenConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[name]
    return replace(cfg, **overrides) if overrides else cfg
