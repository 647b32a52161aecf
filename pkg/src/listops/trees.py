"""Binary bracketings over token sequences and their shift-reduce encoding.

A tree is a plain nested structure: a leaf is the ``int`` index of its token,
an internal node is a 2-tuple ``(left, right)``. Leaves read left to right are
always exactly ``0..n-1``. Traversals are iterative throughout, so trees over
long sequences (reference parses are mostly left-branching and therefore deep)
never hit the interpreter recursion limit.

Transition sequences are strings over ``S`` (shift) and ``R`` (reduce):
post-order linearization of the tree, ``n`` shifts and ``n-1`` reduces.
"""

from __future__ import annotations

from fractions import Fraction

from .core import Ast, Leaf

Tree = int | tuple

SHIFT = "S"
REDUCE = "R"


class InvalidTransitionSeq(Exception):
    """A transition string that no valid tree linearizes to.

    ``index`` is the position of the first violating action (or the sequence
    length when the sequence ends in a bad state).
    """

    def __init__(self, index: int, reason: str):
        super().__init__(f"invalid transition sequence at index {index}: {reason}")
        self.index = index


def reference_parse(ast: Ast) -> Tree:
    """Ground-truth binary bracketing of an expression's token sequence.

    Each list folds left to right starting from its opening token; a nested
    list becomes a single unit once its own closing bracket attaches as the
    fold's final right child. Every constituent is therefore a partial list,
    a digit, or a closing bracket.
    """
    idx = 0

    def build(node) -> Tree:
        nonlocal idx
        if isinstance(node, Leaf):
            leaf = idx
            idx += 1
            return leaf
        acc: Tree = idx  # the opening operator token
        idx += 1
        for child in node.children:
            acc = (acc, build(child))
        close = idx
        idx += 1
        return (acc, close)

    return build(ast)


def tree_to_transitions(tree: Tree) -> str:
    """Post-order linearization: leaf -> S, internal -> children then R."""
    out = []
    stack = [(tree, False)]
    while stack:
        node, emit = stack.pop()
        if isinstance(node, int):
            out.append(SHIFT)
        elif emit:
            out.append(REDUCE)
        else:
            stack.append((node, True))
            stack.append((node[1], False))
            stack.append((node[0], False))
    return "".join(out)


def transitions_to_tree(actions: str, n: int) -> Tree:
    """Stack simulation; inverse of :func:`tree_to_transitions` for n tokens."""
    stack: list[Tree] = []
    shifted = 0
    for i, action in enumerate(actions):
        if action == SHIFT:
            if shifted == n:
                raise InvalidTransitionSeq(i, f"more than {n} shifts")
            stack.append(shifted)
            shifted += 1
        elif action == REDUCE:
            if len(stack) < 2:
                raise InvalidTransitionSeq(i, "reduce with fewer than 2 stack items")
            right = stack.pop()
            left = stack.pop()
            stack.append((left, right))
        else:
            raise InvalidTransitionSeq(i, f"unknown action {action!r}")
    if shifted != n:
        raise InvalidTransitionSeq(len(actions), f"{shifted} shifts for {n} tokens")
    if len(stack) != 1:
        raise InvalidTransitionSeq(len(actions), f"{len(stack)} items left on the stack")
    return stack[0]


def left_branching(n: int) -> Tree:
    """((0 1) 2) ... : every new token attaches to the right of the fold."""
    if n < 1:
        raise ValueError("n must be >= 1")
    acc: Tree = 0
    for k in range(1, n):
        acc = (acc, k)
    return acc


def right_branching(n: int) -> Tree:
    """0 (1 (2 ...)): mirror image of :func:`left_branching`."""
    if n < 1:
        raise ValueError("n must be >= 1")
    acc: Tree = n - 1
    for k in range(n - 2, -1, -1):
        acc = (k, acc)
    return acc


def random_tree(n: int, rng) -> Tree:
    """Sample a tree by drawing uniformly among legal shift/reduce actions.

    Uniform per step, not uniform over trees; ``rng`` is a numpy Generator.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    actions = []
    height = 0
    shifted = 0
    while not (shifted == n and height == 1):
        can_shift = shifted < n
        can_reduce = height >= 2
        if can_shift and can_reduce:
            shift = bool(rng.integers(2))
        else:
            shift = can_shift
        if shift:
            actions.append(SHIFT)
            shifted += 1
            height += 1
        else:
            actions.append(REDUCE)
            height -= 1
    return transitions_to_tree("".join(actions), n)


def n_leaves(tree: Tree) -> int:
    count = 0
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, int):
            count += 1
        else:
            stack.extend(node)
    return count


def leaves(tree: Tree) -> list[int]:
    """Leaf token indices in left-to-right order."""
    out = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, int):
            out.append(node)
        else:
            stack.append(node[1])
            stack.append(node[0])
    return out


def is_valid_tree(tree: Tree, n: int) -> bool:
    """Leaves read left to right must be exactly 0..n-1."""
    try:
        got = leaves(tree)
    except (TypeError, IndexError):
        return False
    return got == list(range(n))


def spans(tree: Tree) -> set[tuple[int, int]]:
    """Inclusive (start, end) span of every internal node, root included.

    Exactly n-1 spans for a tree over n >= 2 tokens; leaves are excluded.
    """
    out = set()
    vals: list[tuple[int, int]] = []
    stack = [(tree, False)]
    while stack:
        node, emit = stack.pop()
        if isinstance(node, int):
            vals.append((node, node))
        elif emit:
            right = vals.pop()
            left = vals.pop()
            span = (left[0], right[1])
            out.add(span)
            vals.append(span)
        else:
            stack.append((node, True))
            stack.append((node[1], False))
            stack.append((node[0], False))
    return out


def avg_token_depth(tree: Tree) -> Fraction:
    """Mean depth of the leaves; the root sits at depth 0."""
    total = 0
    count = 0
    stack = [(tree, 0)]
    while stack:
        node, depth = stack.pop()
        if isinstance(node, int):
            total += depth
            count += 1
        else:
            stack.append((node[0], depth + 1))
            stack.append((node[1], depth + 1))
    return Fraction(total, count)


def tree_to_string(tree: Tree) -> str:
    """Bracketed form with parentheses around each internal node: ((0 1) 2)."""
    parts = []
    stack: list = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, str):
            parts.append(node)
        elif isinstance(node, int):
            parts.append(str(node))
        else:
            parts.append("(")
            stack.extend([")", node[1], " ", node[0]])
    return "".join(parts)


def tree_from_string(text: str) -> Tree:
    """Inverse of :func:`tree_to_string`."""
    units = text.replace("(", " ( ").replace(")", " ) ").split()
    stack: list = []
    for unit in units:
        if unit == "(":
            stack.append(unit)
        elif unit == ")":
            if len(stack) < 3 or stack[-3] != "(":
                raise ValueError(f"malformed tree string: {text!r}")
            right = stack.pop()
            left = stack.pop()
            stack.pop()  # "("
            stack.append((left, right))
        else:
            stack.append(int(unit))
    if len(stack) != 1 or isinstance(stack[0], str):
        raise ValueError(f"malformed tree string: {text!r}")
    return stack[0]
