"""Sampling co-occurring shapes along the tree.

A pattern is a small tuple of related shapes whose attribute vectors are
concatenated into one sample:

  single         the shape alone                                (5 dims)
  ancestor       shape plus its interval-th ancestor            (10 dims)
  grandancestor  shape, interval-th and reach-th ancestors      (15 dims)
  sibling        shape, interval-th ancestor, and the sibling
                 under that ancestor closest in area            (15 dims)

The ancestor interval is learned from training trees: per shape it is the
smallest ancestor distance at which the area has grown by more than the
shape's perimeter (one ring of pixels), clamped to the chain length; the
dataset value is the rounded mean. The reach used by grandancestor is a
multiple (>= 2) of the interval.

Samples are bucketed by (pattern kind, polarity of the anchor shape) and
each bucket is encoded against its own codebook downstream.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .attributes import ATTRIBUTE_DIM
from .errors import ParameterError
from .tree import ShapeTree

PATTERN_KINDS = ("single", "ancestor", "grandancestor", "sibling")
POLARITIES = ("+", "-")

_KIND_WIDTH = {"single": 1, "ancestor": 2, "grandancestor": 3, "sibling": 3}


def pattern_dim(kind: str) -> int:
    if kind not in _KIND_WIDTH:
        raise ParameterError(f"unknown pattern kind: {kind!r}")
    return _KIND_WIDTH[kind] * ATTRIBUTE_DIM


def bucket_order(kinds: Iterable[str] = PATTERN_KINDS) -> list[tuple[str, str]]:
    """Canonical bucket enumeration: kind order as given, '+' before '-'."""
    kinds = list(kinds)
    for k in kinds:
        pattern_dim(k)
    return [(k, pol) for k in kinds for pol in POLARITIES]


def interval_per_shape(tree: ShapeTree) -> dict[int, int]:
    """Smallest ancestor distance with area growth above the perimeter.

    Shapes whose whole chain stays below that growth get the chain length;
    the root, with no ancestors, gets 1."""
    out: dict[int, int] = {}
    for sid, s in tree.shapes.items():
        depth = 0
        found = None
        cur = s.parent
        while cur is not None:
            depth += 1
            if tree.shapes[cur].area - s.area > s.perimeter and found is None:
                found = depth
            cur = tree.shapes[cur].parent
        out[sid] = found if found is not None else max(1, depth)
    return out


def estimate_interval(trees: Iterable[ShapeTree]) -> int:
    """Dataset-level ancestor interval: rounded mean over every shape of
    every tree, never below 1. Call this on training trees only."""
    values: list[int] = []
    for tree in trees:
        values.extend(interval_per_shape(tree).values())
    if not values:
        return 1
    return max(1, int(math.floor(sum(values) / len(values) + 0.5)))


def _ancestor_at(tree: ShapeTree, sid: int, k: int) -> int | None:
    cur = sid
    for _ in range(k):
        parent = tree.shapes[cur].parent
        if parent is None:
            return None
        cur = parent
    return cur


def extract_patterns(
    tree: ShapeTree,
    attrs: dict[int, np.ndarray],
    interval: int,
    reach_multiplier: int = 2,
    kinds: Iterable[str] = PATTERN_KINDS,
) -> dict[tuple[str, str], np.ndarray]:
    """All pattern samples of a tree, bucketed by (kind, anchor polarity).

    Every requested bucket is present, possibly with zero rows; rows are
    ordered by anchor shape id so extraction is deterministic."""
    if interval < 1:
        raise ParameterError("ancestor interval must be >= 1")
    if reach_multiplier < 2:
        raise ParameterError("reach multiplier must be >= 2")
    kinds = list(kinds)
    reach = reach_multiplier * interval

    ids = sorted(tree.shapes)
    anc_near = {sid: _ancestor_at(tree, sid, interval) for sid in ids}
    anc_far = {sid: _ancestor_at(tree, sid, reach) for sid in ids}

    groups: dict[int, list[int]] = {}
    for sid in ids:
        a = anc_near[sid]
        if a is not None:
            groups.setdefault(a, []).append(sid)
    sibling: dict[int, int] = {}
    for members in groups.values():
        if len(members) < 2:
            continue
        for sid in members:
            area = tree.shapes[sid].area
            best = min(
                (m for m in members if m != sid),
                key=lambda m: (abs(tree.shapes[m].area - area), m),
            )
            sibling[sid] = best

    buckets: dict[tuple[str, str], np.ndarray] = {}
    for kind, pol in bucket_order(kinds):
        rows = []
        for sid in ids:
            if tree.shapes[sid].polarity != pol:
                continue
            if kind == "single":
                rows.append(attrs[sid])
            elif kind == "ancestor":
                a = anc_near[sid]
                if a is not None:
                    rows.append(np.concatenate([attrs[sid], attrs[a]]))
            elif kind == "grandancestor":
                far = anc_far[sid]
                if far is not None:
                    rows.append(np.concatenate(
                        [attrs[sid], attrs[anc_near[sid]], attrs[far]]))
            else:
                sib = sibling.get(sid)
                if sib is not None:
                    rows.append(np.concatenate(
                        [attrs[sid], attrs[anc_near[sid]], attrs[sib]]))
        if rows:
            buckets[(kind, pol)] = np.vstack(rows)
        else:
            buckets[(kind, pol)] = np.zeros((0, pattern_dim(kind)))
    return buckets


def bucket_summary(buckets: dict[tuple[str, str], np.ndarray]) -> str:
    lines = ["kind,polarity,samples,dim"]
    for (kind, pol), arr in buckets.items():
        lines.append(f"{kind},{pol},{arr.shape[0]},{arr.shape[1]}")
    return "\n".join(lines) + "\n"
