import numpy as np
import pytest
from hypothesis import strategies as st

from listops.core import OPS, Leaf, ListNode


def ast_nodes(max_children: int = 4):
    """Hypothesis strategy over expression trees (root may be a bare digit)."""
    return st.recursive(
        st.builds(Leaf, st.integers(0, 9)),
        lambda children: st.builds(
            lambda op, kids: ListNode(op, tuple(kids)),
            st.sampled_from(OPS),
            st.lists(children, min_size=1, max_size=max_children),
        ),
        max_leaves=25,
    )


def list_nodes(max_children: int = 4):
    """Same, but the root is always a list."""
    return st.builds(
        lambda op, kids: ListNode(op, tuple(kids)),
        st.sampled_from(OPS),
        st.lists(ast_nodes(max_children), min_size=1, max_size=max_children),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
