"""Shared test utilities: canonical tree comparison and image corpora."""

from __future__ import annotations

import numpy as np

from shapetex.imaging import GrayImage
from shapetex.tree import ShapeTree


def canonical_nodes(tree: ShapeTree):
    """Tree content keyed by pixel set, independent of shape ids."""
    sets = {sid: frozenset(map(int, tree.pixels_of(sid))) for sid in tree.shapes}
    nodes = {}
    parents = {}
    for sid, s in tree.shapes.items():
        nodes[sets[sid]] = (s.polarity, s.level, s.area, s.perimeter)
        parents[sets[sid]] = sets[s.parent] if s.parent is not None else None
    owner = {}
    for p in range(tree.size):
        owner[p] = sets[int(tree.smallest_shape[p])]
    return nodes, parents, owner


def assert_trees_equal(t1: ShapeTree, t2: ShapeTree):
    n1, p1, o1 = canonical_nodes(t1)
    n2, p2, o2 = canonical_nodes(t2)
    assert set(n1) == set(n2), "shape pixel sets differ"
    for fs in n1:
        assert n1[fs] == n2[fs], f"shape payload differs for a set of {len(fs)} px"
        assert p1[fs] == p2[fs], "parent links differ"
    assert o1 == o2, "smallest-shape maps differ"


def random_image(rng: np.random.Generator, max_side: int = 16,
                 max_levels: int = 8) -> GrayImage:
    h = int(rng.integers(1, max_side + 1))
    w = int(rng.integers(1, max_side + 1))
    g = int(rng.integers(2, max_levels + 1))
    vals = rng.integers(0, g, size=(h, w))
    return GrayImage(vals, levels=g)


def check_partition(tree: ShapeTree):
    """Every pixel is proper to exactly one shape and pixel sets nest."""
    seen = np.zeros(tree.size, dtype=np.int64)
    for s in tree.shapes.values():
        seen[s.proper_pixels] += 1
    assert (seen == 1).all(), "proper pixels do not partition the domain"
    for sid, s in tree.shapes.items():
        px = set(map(int, tree.pixels_of(sid)))
        assert len(px) == s.area
        for c in s.children:
            child_px = set(map(int, tree.pixels_of(c)))
            assert child_px < px, "child not strictly inside parent"
        kids = [set(map(int, tree.pixels_of(c))) for c in s.children]
        for i in range(len(kids)):
            for j in range(i + 1, len(kids)):
                assert not (kids[i] & kids[j]), "sibling shapes overlap"
