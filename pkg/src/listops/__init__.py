"""ListOps: prefix-arithmetic diagnostic dataset and latent-tree-learning testbed.

Subpackages split along capability lines:

- :mod:`listops.core` — token language, expression trees, dual evaluators
- :mod:`listops.trees` — binary bracketings, reference parses, shift-reduce codes
- :mod:`listops.generate` — corpus sampling, balancing, file format, statistics
- :mod:`listops.metrics` — bracket F1, accuracy, restart reports
- :mod:`listops.autodiff` — dense-tensor reverse-mode AD, Adam, discrete estimators
- :mod:`listops.encoders` — LSTM / TreeLSTM / RL-SPINN / ST-Gumbel sentence encoders
- :mod:`listops.harness` — training loops, restarts, sweeps, evaluation reports
- :mod:`listops.cli` — the ``listops`` command-line surface
"""

from .core import (
    detokenize,
    eval_ast,
    eval_op,
    eval_stack,
    parse_prefix,
    tokenize,
)
from .generate import GenConfig, generate_dataset, preset, sample_expression
from .metrics import accuracy, corpus_f1, self_f1, unlabeled_f1
from .trees import (
    avg_token_depth,
    left_branching,
    random_tree,
    reference_parse,
    right_branching,
    spans,
    transitions_to_tree,
    tree_to_transitions,
)

__version__ = "0.1.0"
