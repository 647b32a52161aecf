"""ListOps token language, n-ary expression trees, and two independent evaluators.

A ListOps expression is a nested prefix-notation list over single digits, e.g.
``[MAX 2 9 [MIN 4 7 ] 0 ]``. Each opening operator token starts a list, ``]``
closes it, and the whole expression reduces to one digit in 0..9.

Two evaluators are provided on purpose: :func:`eval_ast` is the recursive
oracle over the parsed tree, and :func:`eval_stack` is a single left-to-right
pass over tokens that keeps one small accumulator per open list. They must
agree on every well-formed input; the generator cross-checks every emitted
example against both.
"""

from __future__ import annotations

from dataclasses import dataclass

OPS = ("MAX", "MIN", "MED", "SM")

OPEN_KIND = "open"
DIGIT_KIND = "digit"
CLOSE_KIND = "close"


class ListOpsError(Exception):
    """Base class for malformed ListOps input."""


class UnknownToken(ListOpsError):
    def __init__(self, position: int, text: str):
        super().__init__(f"unknown token {text!r} at position {position}")
        self.position = position
        self.text = text


class UnbalancedBrackets(ListOpsError):
    pass


class EmptyList(ListOpsError):
    pass


class TrailingTokens(ListOpsError):
    pass


class EmptyValues(ListOpsError):
    pass


@dataclass(frozen=True, slots=True)
class Token:
    """One lexical unit: an opening operator, a digit, or the closing bracket."""

    kind: str
    op: str | None = None
    value: int | None = None

    @property
    def surface(self) -> str:
        if self.kind == OPEN_KIND:
            return "[" + self.op
        if self.kind == DIGIT_KIND:
            return str(self.value)
        return "]"

    def __repr__(self) -> str:
        return f"Token({self.surface!r})"


CLOSE = Token(CLOSE_KIND)
OPEN_TOKENS = {op: Token(OPEN_KIND, op=op) for op in OPS}
DIGIT_TOKENS = {d: Token(DIGIT_KIND, value=d) for d in range(10)}

# The full vocabulary is these 15 surface forms, nothing else.
SURFACE_TO_TOKEN = {t.surface: t for t in OPEN_TOKENS.values()}
SURFACE_TO_TOKEN.update({t.surface: t for t in DIGIT_TOKENS.values()})
SURFACE_TO_TOKEN["]"] = CLOSE

VOCAB = tuple(sorted(SURFACE_TO_TOKEN))


def open_token(op: str) -> Token:
    return OPEN_TOKENS[op]


def digit_token(value: int) -> Token:
    return DIGIT_TOKENS[value]


@dataclass(frozen=True, slots=True)
class Leaf:
    """A bare digit operand."""

    value: int

    def __post_init__(self):
        if not 0 <= self.value <= 9:
            raise ValueError(f"digit out of range: {self.value}")


@dataclass(frozen=True, slots=True)
class ListNode:
    """An operator applied to an ordered, nonempty list of digits and sub-lists."""

    op: str
    children: tuple

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown operator: {self.op}")
        if not self.children:
            raise ValueError("a list must have at least one child")


# An expression is either a Leaf (degenerate bare-digit case) or a ListNode.
Ast = Leaf | ListNode


def tokenize(text: str) -> tuple[Token, ...]:
    """Split a whitespace-separated surface string into tokens.

    Raises :class:`UnknownToken` (with the unit's position) on anything outside
    the 15-token vocabulary. Well-formedness is not checked here.
    """
    tokens = []
    for position, unit in enumerate(text.split()):
        token = SURFACE_TO_TOKEN.get(unit)
        if token is None:
            raise UnknownToken(position, unit)
        tokens.append(token)
    return tuple(tokens)


def detokenize(tokens) -> str:
    """Inverse of :func:`tokenize`: exact surface forms, single-space separated."""
    return " ".join(t.surface for t in tokens)


def ast_to_tokens(ast: Ast) -> tuple[Token, ...]:
    """Linearize an expression: open, children in order, close."""
    out = []
    stack = [ast]
    while stack:
        node = stack.pop()
        if node is CLOSE:
            out.append(CLOSE)
        elif isinstance(node, Leaf):
            out.append(DIGIT_TOKENS[node.value])
        else:
            out.append(OPEN_TOKENS[node.op])
            stack.append(CLOSE)
            stack.extend(reversed(node.children))
    return tuple(out)


def parse_prefix(tokens) -> Ast:
    """Parse a well-formed token sequence into its expression tree.

    A bare digit is accepted as a degenerate one-leaf expression. Raises
    :class:`UnbalancedBrackets`, :class:`EmptyList` (an operator immediately
    followed by ``]``), or :class:`TrailingTokens`.
    """
    tokens = tuple(tokens)
    if not tokens:
        raise UnbalancedBrackets("empty token sequence")

    def parse_node(i: int) -> tuple[Ast, int]:
        token = tokens[i]
        if token.kind == DIGIT_KIND:
            return Leaf(token.value), i + 1
        if token.kind == CLOSE_KIND:
            raise UnbalancedBrackets(f"unexpected ']' at position {i}")
        op, i = token.op, i + 1
        children = []
        while True:
            if i >= len(tokens):
                raise UnbalancedBrackets(f"unclosed '[{op}'")
            if tokens[i].kind == CLOSE_KIND:
                if not children:
                    raise EmptyList(f"'[{op}' closed with no children at position {i}")
                return ListNode(op, tuple(children)), i + 1
            child, i = parse_node(i)
            children.append(child)

    ast, end = parse_node(0)
    if end != len(tokens):
        raise TrailingTokens(f"trailing tokens from position {end}")
    return ast


def eval_op(op: str, values) -> int:
    """Apply one operator to a nonempty list of nonnegative integers.

    MAX/MIN return an element of the list. MED sorts ascending and takes the
    middle element, or the floor of the mean of the two middle elements when the
    length is even. SM is the sum reduced modulo 10.
    """
    values = list(values)
    if not values:
        raise EmptyValues(f"{op} applied to an empty list")
    if op == "MAX":
        return max(values)
    if op == "MIN":
        return min(values)
    if op == "SM":
        return sum(values) % 10
    if op == "MED":
        values.sort()
        n = len(values)
        if n % 2 == 1:
            return values[n // 2]
        return (values[n // 2 - 1] + values[n // 2]) // 2
    raise ValueError(f"unknown operator: {op}")


def eval_ast(ast: Ast) -> int:
    """Recursive bottom-up evaluation; the reference oracle."""
    if isinstance(ast, Leaf):
        return ast.value
    return eval_op(ast.op, [eval_ast(child) for child in ast.children])


def eval_stack(tokens) -> int:
    """Single left-to-right pass with one accumulator frame per open list.

    MAX/MIN keep a running extremum, SM a running sum; only MED buffers the
    finished list's values, so memory is bounded by one frame per nesting level
    plus the MED value buffers. Raises the same well-formedness errors as
    :func:`parse_prefix`, and returns the same value as evaluating the parse.
    """
    tokens = tuple(tokens)
    if not tokens:
        raise UnbalancedBrackets("empty token sequence")

    frames: list[list] = []  # each frame: [op, accumulator]
    result = None

    def fold(value: int, position: int):
        nonlocal result
        if not frames:
            if result is not None or position != len(tokens) - 1:
                raise TrailingTokens(f"trailing tokens from position {position}")
            result = value
            return
        frame = frames[-1]
        op, acc = frame
        if op == "MAX":
            frame[1] = value if acc is None else max(acc, value)
        elif op == "MIN":
            frame[1] = value if acc is None else min(acc, value)
        elif op == "SM":
            frame[1] = value if acc is None else (acc + value) % 10
        else:  # MED buffers the whole list
            acc.append(value)

    for position, token in enumerate(tokens):
        if result is not None:
            raise TrailingTokens(f"trailing tokens from position {position}")
        if token.kind == OPEN_KIND:
            frames.append([token.op, [] if token.op == "MED" else None])
        elif token.kind == DIGIT_KIND:
            fold(token.value, position)
        else:
            if not frames:
                raise UnbalancedBrackets(f"unexpected ']' at position {position}")
            op, acc = frames.pop()
            if acc is None or (op == "MED" and not acc):
                raise EmptyList(f"'[{op}' closed with no children at position {position}")
            fold(eval_op(op, acc) if op == "MED" else acc % 10 if op == "SM" else acc, position)

    if frames:
        raise UnbalancedBrackets(f"unclosed '[{frames[-1][0]}'")
    return result


def ast_depth(ast: Ast) -> int:
    """Maximum nesting depth: 0 for a bare digit, 1 for a flat list."""
    if isinstance(ast, Leaf):
        return 0
    return 1 + max(ast_depth(child) for child in ast.children)
