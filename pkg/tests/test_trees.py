from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from listops import core, trees
from listops.trees import (
    InvalidTransitionSeq,
    avg_token_depth,
    is_valid_tree,
    left_branching,
    leaves,
    n_leaves,
    random_tree,
    reference_parse,
    right_branching,
    spans,
    transitions_to_tree,
    tree_from_string,
    tree_to_string,
    tree_to_transitions,
)

from conftest import ast_nodes, list_nodes

EXAMPLE = "[MAX 2 9 [MIN 4 7 ] 0 ]"


def example_tree():
    return reference_parse(core.parse_prefix(core.tokenize(EXAMPLE)))


class TestReferenceParse:
    def test_worked_example_bracketing(self):
        # fold left within each list; the nested list closes before attaching
        assert tree_to_string(example_tree()) == "(((((0 1) 2) (((3 4) 5) 6)) 7) 8)"

    def test_two_element_list(self):
        ast = core.parse_prefix(core.tokenize("[SM 5 ]"))
        assert tree_to_string(reference_parse(ast)) == "((0 1) 2)"

    def test_bare_digit(self):
        assert reference_parse(core.Leaf(3)) == 0

    def test_worked_example_depths(self):
        # leaf depths of the reference tree, summed by hand: 38 over 9 tokens
        assert avg_token_depth(example_tree()) == Fraction(38, 9)

    @given(ast_nodes())
    @settings(max_examples=80)
    def test_leaves_cover_tokens_in_order(self, ast):
        tree = reference_parse(ast)
        n = len(core.ast_to_tokens(ast))
        assert is_valid_tree(tree, n)


class TestTransitions:
    def test_worked_example_sequence(self):
        assert tree_to_transitions(example_tree()) == "SSRSRSSRSRSRRSRSR"

    def test_left_branching_three(self):
        assert tree_to_transitions(left_branching(3)) == "SSRSR"

    def test_right_branching_three(self):
        assert tree_to_transitions(right_branching(3)) == "SSSRR"

    def test_two_tokens(self):
        assert transitions_to_tree("SSR", 2) == (0, 1)

    def test_single_token(self):
        assert transitions_to_tree("S", 1) == 0

    def test_underflow_reports_index(self):
        with pytest.raises(InvalidTransitionSeq) as err:
            transitions_to_tree("SRS", 2)
        assert err.value.index == 1

    def test_too_many_shifts(self):
        with pytest.raises(InvalidTransitionSeq):
            transitions_to_tree("SSSRR", 2)

    def test_unfinished_sequence(self):
        with pytest.raises(InvalidTransitionSeq):
            transitions_to_tree("SS", 2)

    def test_unknown_action(self):
        with pytest.raises(InvalidTransitionSeq):
            transitions_to_tree("SXR", 2)

    @given(st.integers(1, 60), st.integers(0, 2**32 - 1))
    @settings(max_examples=120)
    def test_round_trip_random_trees(self, n, seed):
        import numpy as np

        tree = random_tree(n, np.random.default_rng(seed))
        assert transitions_to_tree(tree_to_transitions(tree), n) == tree

    @given(list_nodes())
    @settings(max_examples=80)
    def test_round_trip_reference_parses(self, ast):
        tree = reference_parse(ast)
        n = len(core.ast_to_tokens(ast))
        actions = tree_to_transitions(tree)
        assert actions.count("S") == n
        assert actions.count("R") == n - 1
        assert transitions_to_tree(actions, n) == tree


class TestBaselineTrees:
    def test_left_branching_spans(self):
        assert spans(left_branching(4)) == {(0, 1), (0, 2), (0, 3)}

    def test_right_branching_spans(self):
        assert spans(right_branching(4)) == {(2, 3), (1, 3), (0, 3)}

    def test_span_count(self):
        for n in (2, 3, 7, 20):
            assert len(spans(left_branching(n))) == n - 1
            assert len(spans(right_branching(n))) == n - 1

    def test_lb_rb_share_only_root(self):
        for n in (3, 5, 10, 25):
            shared = spans(left_branching(n)) & spans(right_branching(n))
            assert shared == {(0, n - 1)}

    def test_n_one(self):
        assert left_branching(1) == 0
        assert right_branching(1) == 0

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            left_branching(0)

    def test_random_tree_valid(self, rng):
        for n in (1, 2, 3, 10, 100):
            tree = random_tree(n, rng)
            assert is_valid_tree(tree, n)

    def test_random_tree_deterministic(self):
        import numpy as np

        a = random_tree(20, np.random.default_rng(9))
        b = random_tree(20, np.random.default_rng(9))
        assert a == b


class TestDepthAndSpans:
    def test_balanced_four(self):
        assert avg_token_depth(((0, 1), (2, 3))) == 2

    def test_left_branching_small(self):
        assert avg_token_depth(left_branching(3)) == Fraction(5, 3)

    def test_left_branching_closed_form(self):
        # depths are n-1, n-1, n-2, ..., 1 so the mean is (n-1)(n+2)/(2n)
        for n in (2, 3, 10, 31):
            expected = Fraction((n - 1) * (n + 2), 2 * n)
            assert avg_token_depth(left_branching(n)) == expected

    def test_single_leaf(self):
        assert avg_token_depth(0) == 0
        assert spans(0) == set()

    def test_deep_tree_no_recursion_limit(self):
        tree = left_branching(5000)
        assert n_leaves(tree) == 5000
        assert len(spans(tree)) == 4999
        assert leaves(tree) == list(range(5000))
        # compare via transition strings: tuple == recurses in CPython itself
        actions = tree_to_transitions(tree)
        assert tree_to_transitions(tree_from_string(tree_to_string(tree))) == actions
        assert tree_to_transitions(transitions_to_tree(actions, 5000)) == actions


class TestSerialization:
    def test_round_trip(self, rng):
        for n in (1, 2, 5, 40):
            tree = random_tree(n, rng)
            assert tree_from_string(tree_to_string(tree)) == tree

    def test_malformed(self):
        for bad in ["(0 1", "0 1)", "(0 (1 2)", "()", "(0 1 2)", ""]:
            with pytest.raises(ValueError):
                tree_from_string(bad)

    def test_validity_checks(self):
        assert not is_valid_tree((1, 0), 2)  # out of order
        assert not is_valid_tree((0, 2), 2)  # skips an index
        assert not is_valid_tree((0, 1), 3)  # too few leaves
        assert is_valid_tree(((0, 1), 2), 3)
