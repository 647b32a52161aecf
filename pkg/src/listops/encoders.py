"""The four sentence encoders plus the shared classification head.

All encoders share the same skeleton: learned embeddings over the 15-token
vocabulary, a composition core, and a 2-layer MLP into ten logits.

- `LSTMEncoder`: single-layer LSTM, final hidden state, batched over
  same-length groups.
- `TreeLSTMEncoder`: binary TreeLSTM executed along a provided parse's
  shift-reduce sequence.
- `RLSpinnEncoder`: the same stack machine, but a small learned policy picks
  shift vs reduce at each step (sampled in training, argmax in eval); the
  policy trains via REINFORCE on the episode's log-probs. Policy features are
  detached, so the surrogate loss reaches only policy parameters.
- `STGumbelEncoder`: layer-wise composition; every adjacent pair is a merge
  candidate, one is picked per layer through the straight-through
  Gumbel-softmax, hard forward / soft backward.

Latent encoders always emit structurally valid trees: only legal actions are
ever available, so no amount of bad scoring can produce a malformed parse.

Internally, node states travel packed as (rows, 2 * model_dim) = [h | c]
matrices straight through the fused cells in `autodiff`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import core, trees

ENCODER_KINDS = ("lstm", "treelstm", "rl-spinn", "st-gumbel")

SURFACE_TO_ID = {surface: i for i, surface in enumerate(core.VOCAB)}


class TreeTokenMismatch(Exception):
    pass


class CheckpointMismatch(Exception):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    encoder_kind: str = "treelstm"
    model_dim: int = 48
    mlp_hidden: int = 64
    dropout: float = 0.0
    temperature: float = 1.0  # ST-Gumbel selection temperature
    policy_hidden: int = 32  # RL-SPINN shift/reduce scorer
    vocab: tuple = field(default=core.VOCAB)

    def __post_init__(self):
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"encoder_kind must be one of {ENCODER_KINDS}")
        if self.model_dim < 1:
            raise ValueError("model_dim must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def token_ids(tokens) -> np.ndarray:
    try:
        return np.array([SURFACE_TO_ID[t.surface] for t in tokens], dtype=np.int64)
    except KeyError as err:
        raise core.UnknownToken(-1, str(err)) from err


class Encoder:
    """Shared parameters, classifier head, and checkpoint plumbing."""

    kind = "base"
    emits_trees = False

    def __init__(self, cfg: EncoderConfig, rng, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.params: dict[str, ad.Tensor] = {}
        d = cfg.model_dim
        self._add("embed.weight", (len(cfg.vocab), d), rng, 1.0 / np.sqrt(d))
        self._build(rng)
        self._add("mlp.w1", (d, cfg.mlp_hidden), rng, 1.0 / np.sqrt(d))
        self._add("mlp.b1", (cfg.mlp_hidden,), rng, 0.0)
        self._add("mlp.w2", (cfg.mlp_hidden, 10), rng, 1.0 / np.sqrt(cfg.mlp_hidden))
        self._add("mlp.b2", (10,), rng, 0.0)

    def _build(self, rng):
        raise NotImplementedError

    def _add(self, name: str, shape, rng, scale: float):
        if scale == 0.0:
            self.params[name] = ad.Tensor(np.zeros(shape, dtype=self.dtype), requires_grad=True)
        else:
            self.params[name] = ad.parameter(shape, rng, scale, dtype=self.dtype)

    def embed(self, tokens) -> ad.Tensor:
        """One model_dim row per token."""
        return ad.take_rows(self.params["embed.weight"], token_ids(tokens))

    def classify(self, state: ad.Tensor, rng=None, training: bool = False) -> ad.Tensor:
        """Two affine layers with a relu between: (B, model_dim) -> (B, 10)."""
        p = self.params
        hidden = ad.relu(ad.affine(state, p["mlp.w1"], p["mlp.b1"]))
        if training and self.cfg.dropout > 0.0:
            hidden = ad.dropout(hidden, self.cfg.dropout, rng, training)
        return ad.affine(hidden, p["mlp.w2"], p["mlp.b2"])

    def predict(self, tokens):
        """Eval-mode prediction: (digit, tree or None)."""
        with ad.no_grad():
            state, tree = self.encode(tokens)
            logits = self.classify(state)
        return int(np.argmax(logits.data[0])), tree

    def encode(self, tokens, rng=None, training: bool = False):
        """(root state (1, model_dim), emitted tree or None); eval by default."""
        raise NotImplementedError

    def state_dict(self) -> dict:
        return {name: t.data for name, t in self.params.items()}

    def load_state_dict(self, arrays: dict) -> None:
        if sorted(arrays) != sorted(self.params):
            missing = sorted(set(self.params) - set(arrays))
            extra = sorted(set(arrays) - set(self.params))
            raise CheckpointMismatch(f"missing {missing}, unexpected {extra}")
        for name, arr in arrays.items():
            if tuple(arr.shape) != tuple(self.params[name].data.shape):
                raise CheckpointMismatch(
                    f"{name}: shape {arr.shape} vs {self.params[name].data.shape}"
                )
            self.params[name].data = arr.astype(self.dtype)

    def save(self, path) -> None:
        ad.save_tensors(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(ad.load_tensors(path))


class _TreeCore(Encoder):
    """Leaf transform + binary TreeLSTM composition, shared by the tree models."""

    def _build(self, rng):
        d = self.cfg.model_dim
        self._add("leaf.w", (d, 3 * d), rng, 1.0 / np.sqrt(d))
        self._add("leaf.b", (3 * d,), rng, 0.0)
        self._add("compose.w", (2 * d, 5 * d), rng, 1.0 / np.sqrt(2 * d))
        self._add("compose.b", (5 * d,), rng, 0.0)

    def leaf_pack(self, tokens) -> ad.Tensor:
        """Embeddings through the leaf cell: packed (n, 2 * model_dim)."""
        return ad.treelstm_leaf(self.embed(tokens), self.params["leaf.w"], self.params["leaf.b"])

    def leaf_rows(self, tokens) -> list[ad.Tensor]:
        pack = self.leaf_pack(tokens)
        return [ad.slice_axis(pack, k, k + 1, axis=0) for k in range(len(tokens))]

    def compose(self, left: ad.Tensor, right: ad.Tensor) -> ad.Tensor:
        """TreeLSTM composition of two packed states; order-sensitive."""
        return ad.treelstm_cell(left, right, self.params["compose.w"], self.params["compose.b"])

    def root_h(self, pack: ad.Tensor) -> ad.Tensor:
        return ad.slice_axis(pack, 0, self.cfg.model_dim, axis=1)

    def run_transitions(self, tokens, transitions: str) -> ad.Tensor:
        """Drive the stack machine along a fixed shift-reduce sequence."""
        rows = self.leaf_rows(tokens)
        stack: list[ad.Tensor] = []
        cursor = 0
        for i, action in enumerate(transitions):
            if action == trees.SHIFT:
                if cursor >= len(rows):
                    raise trees.InvalidTransitionSeq(i, "shift past end of buffer")
                stack.append(rows[cursor])
                cursor += 1
            else:
                if len(stack) < 2:
                    raise trees.InvalidTransitionSeq(i, "reduce with fewer than 2 stack items")
                right = stack.pop()
                left = stack.pop()
                stack.append(self.compose(left, right))
        if cursor != len(rows) or len(stack) != 1:
            raise trees.InvalidTransitionSeq(len(transitions), "episode did not consume the input")
        return stack[0]


class TreeLSTMEncoder(_TreeCore):
    """Bottom-up TreeLSTM over a provided binary parse."""

    kind = "treelstm"
    emits_trees = True  # the provided (gold) trees

    def encode_tree(self, tokens, tree: trees.Tree) -> ad.Tensor:
        if not trees.is_valid_tree(tree, len(tokens)):
            raise TreeTokenMismatch(f"tree does not cover {len(tokens)} tokens")
        return self.root_h(self.run_transitions(tokens, trees.tree_to_transitions(tree)))

    def encode_transitions(self, tokens, transitions: str) -> ad.Tensor:
        return self.root_h(self.run_transitions(tokens, transitions))

    def encode(self, tokens, rng=None, training: bool = False, tree: trees.Tree | None = None):
        if tree is None:
            raise TreeTokenMismatch("treelstm needs a parse; pass tree=...")
        return self.encode_tree(tokens, tree), tree


class LSTMEncoder(Encoder):
    """Sequential baseline; returns the last hidden state."""

    kind = "lstm"
    emits_trees = False

    def _build(self, rng):
        d = self.cfg.model_dim
        self._add("lstm.w", (2 * d, 4 * d), rng, 1.0 / np.sqrt(2 * d))
        self._add("lstm.b", (4 * d,), rng, 0.0)
        # forget gate open at init
        self.params["lstm.b"].data[d:2 * d] = 1.0

    def encode_batch(self, ids: np.ndarray) -> ad.Tensor:
        """(B, T) token-id matrix of same-length sequences -> (B, model_dim)."""
        b = ids.shape[0]
        d = self.cfg.model_dim
        state = ad.Tensor(np.zeros((b, 2 * d), dtype=self.dtype))
        weight = self.params["embed.weight"]
        for step in range(ids.shape[1]):
            x = ad.take_rows(weight, ids[:, step])
            state = ad.lstm_cell(x, state, self.params["lstm.w"], self.params["lstm.b"])
        return ad.slice_axis(state, 0, d, axis=1)

    def encode(self, tokens, rng=None, training: bool = False):
        return self.encode_batch(token_ids(tokens)[None, :]), None


class RLSpinnEncoder(_TreeCore):
    """Shift-reduce encoder whose parser is a learned two-way policy.

    At each step the policy scores shift vs reduce from the top two stack
    states and the next buffer state (zeros where absent), with illegal
    actions masked out. Steps with a single legal action are taken directly:
    the masked distribution is degenerate there, its log-prob is exactly zero,
    and it carries no gradient. Features enter the policy detached so the
    REINFORCE loss updates only policy parameters.
    """

    kind = "rl-spinn"
    emits_trees = True

    def _build(self, rng):
        super()._build(rng)
        d = self.cfg.model_dim
        self._add("policy.w1", (3 * d, self.cfg.policy_hidden), rng, 1.0 / np.sqrt(3 * d))
        self._add("policy.b1", (self.cfg.policy_hidden,), rng, 0.0)
        self._add(
            "policy.w2", (self.cfg.policy_hidden, 2), rng, 1.0 / np.sqrt(self.cfg.policy_hidden)
        )
        self._add("policy.b2", (2,), rng, 0.0)

    def _policy_log_probs(self, stack, buffer_h):
        d = self.cfg.model_dim
        zero = np.zeros((1, d), dtype=self.dtype)
        top1 = stack[-1].data[:, :d] if len(stack) >= 1 else zero
        top2 = stack[-2].data[:, :d] if len(stack) >= 2 else zero
        buf = buffer_h if buffer_h is not None else zero
        features = ad.Tensor(np.concatenate([top1, top2, buf], axis=1))  # detached
        p = self.params
        hidden = ad.relu(ad.affine(features, p["policy.w1"], p["policy.b1"]))
        logits = ad.affine(hidden, p["policy.w2"], p["policy.b2"])
        return ad.log_softmax(logits, axis=1)  # columns: [shift, reduce]

    def run_episode(self, tokens, rng=None, training: bool = False,
                    force_transitions: str | None = None):
        """Returns (root pack, transition string, action log-prob tensors).

        Training mode samples actions; eval mode takes the argmax. With
        `force_transitions` the policy is bypassed entirely, which makes the
        encoder function-identical to the TreeLSTM on that parse.
        """
        rows = self.leaf_rows(tokens)
        n = len(rows)
        stack: list[ad.Tensor] = []
        cursor = 0
        actions = []
        log_probs = []
        for step in range(2 * n - 1):
            can_shift = cursor < n
            can_reduce = len(stack) >= 2
            if force_transitions is not None:
                shift = force_transitions[step] == trees.SHIFT
                if (shift and not can_shift) or (not shift and not can_reduce):
                    raise trees.InvalidTransitionSeq(step, "forced action is illegal")
            elif can_shift and can_reduce:
                buffer_h = rows[cursor].data[:, :self.cfg.model_dim]
                logp = self._policy_log_probs(stack, buffer_h)
                if training:
                    shift = bool(rng.random() < np.exp(logp.data[0, 0]))
                else:
                    shift = bool(logp.data[0, 0] >= logp.data[0, 1])
                chosen = ad.slice_axis(logp, 0, 1, axis=1) if shift else \
                    ad.slice_axis(logp, 1, 2, axis=1)
                log_probs.append(chosen)
            else:
                shift = can_shift  # single legal action: log-prob 0, no gradient
            if shift:
                stack.append(rows[cursor])
                cursor += 1
                actions.append(trees.SHIFT)
            else:
                right = stack.pop()
                left = stack.pop()
                stack.append(self.compose(left, right))
                actions.append(trees.REDUCE)
        return stack[0], "".join(actions), log_probs

    def encode(self, tokens, rng=None, training: bool = False):
        pack, actions, _ = self.run_episode(tokens, rng=rng, training=training)
        return self.root_h(pack), trees.transitions_to_tree(actions, len(tokens))


class STGumbelEncoder(_TreeCore):
    """Layer-wise merge encoder: n-1 rounds, one hard pair selection each.

    Every adjacent pair is composed as a candidate; a learned query scores the
    candidates and the straight-through Gumbel-softmax picks one. The one-hot
    choice matrix-multiplies the candidate block, so the forward pass is the
    discrete merge while candidate scores still receive soft gradients. Eval
    mode disables the Gumbel noise (pure argmax).
    """

    kind = "st-gumbel"
    emits_trees = True

    def _build(self, rng):
        super()._build(rng)
        d = self.cfg.model_dim
        self._add("query.w", (d, 1), rng, 1.0 / np.sqrt(d))

    def run_layers(self, tokens, rng=None, training: bool = False):
        rows = self.leaf_pack(tokens)  # (n, 2D)
        n = len(tokens)
        d = self.cfg.model_dim
        segments: list[trees.Tree] = list(range(n))
        noise_rng = rng if training else None
        for width in range(n, 1, -1):
            left = ad.slice_axis(rows, 0, width - 1, axis=0)
            right = ad.slice_axis(rows, 1, width, axis=0)
            cand = self.compose(left, right)  # (width-1, 2D)
            cand_h = ad.slice_axis(cand, 0, d, axis=1)
            scores = ad.reshape(ad.matmul(cand_h, self.params["query.w"]), (width - 1,))
            onehot = ad.gumbel_softmax_st(scores, self.cfg.temperature, noise_rng)
            parent = ad.matmul(ad.reshape(onehot, (1, width - 1)), cand)  # selected [h | c]
            i = int(np.argmax(onehot.data))
            parts = [parent] if i == 0 else [ad.slice_axis(rows, 0, i, axis=0), parent]
            if i + 2 < width:
                parts.append(ad.slice_axis(rows, i + 2, width, axis=0))
            rows = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
            segments[i:i + 2] = [(segments[i], segments[i + 1])]
        return rows, segments[0]

    def encode(self, tokens, rng=None, training: bool = False):
        pack, tree = self.run_layers(tokens, rng=rng, training=training)
        return self.root_h(pack), tree


_ENCODER_CLASSES = {
    "lstm": LSTMEncoder,
    "treelstm": TreeLSTMEncoder,
    "rl-spinn": RLSpinnEncoder,
    "st-gumbel": STGumbelEncoder,
}


def build_encoder(cfg: EncoderConfig, rng, dtype=np.float32) -> Encoder:
    return _ENCODER_CLASSES[cfg.encoder_kind](cfg, rng, dtype=dtype)
