"""Tree of shapes: the inclusion hierarchy of hole-filled level-set components.

Bright shapes are hole-filled 8-connected components of upper level sets
(value >= lambda); dark shapes are hole-filled 4-connected components of
lower level sets (value <= lambda). Components that merge with the exterior
are not shapes: the plane outside the image is treated as a frame at the
border level (the lower median of the border pixel values), so a component
containing a border pixel is dropped exactly when the frame would belong to
its level set. The root is always the full domain at the border level.

Two constructions are provided. build_tree_bruteforce enumerates every
level set directly with set-based flood fills and is the correctness oracle
for small images. build_tree produces the identical tree (up to id
relabeling) through per-level connected-component labeling plus an
enclosure forest, and scales to full-size images.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

from .errors import ParameterError
from .imaging import GrayImage

_S8 = np.ones((3, 3), dtype=bool)
_S4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

BRIGHT = "+"
DARK = "-"

_ORACLE_PIXEL_LIMIT = 10_000


@dataclass
class Shape:
    """One node of the tree: a hole-filled level-set component."""

    id: int
    level: int
    polarity: str
    area: int
    perimeter: int
    min_pixel: int
    parent: int | None = None
    children: list[int] = field(default_factory=list)
    proper_pixels: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))


@dataclass
class ShapeTree:
    width: int
    height: int
    shapes: dict[int, Shape]
    root_id: int
    smallest_shape: np.ndarray  # flat (h*w,) shape id owning each pixel
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.width * self.height

    def pixels_of(self, shape_id: int) -> np.ndarray:
        """Full (hole-filled) pixel set of a shape as sorted flat indices."""
        parts = []
        stack = [shape_id]
        while stack:
            sid = stack.pop()
            node = self.shapes[sid]
            if node.proper_pixels.size:
                parts.append(node.proper_pixels)
            stack.extend(node.children)
        if not parts:
            return np.empty(0, np.int64)
        return np.sort(np.concatenate(parts))

    def ancestors(self, shape_id: int) -> list[int]:
        out = []
        cur = self.shapes[shape_id].parent
        while cur is not None:
            out.append(cur)
            cur = self.shapes[cur].parent
        return out

    def ids_by_area(self) -> list[int]:
        return sorted(self.shapes, key=lambda i: (self.shapes[i].area,
                                                  self.shapes[i].min_pixel))


def border_level(image: GrayImage) -> int:
    """Gray level of the virtual frame around the image: the lower median
    of the border pixel values (an order statistic, so any increasing
    contrast change maps it consistently)."""
    v = image.values
    if v.shape[0] <= 2 or v.shape[1] <= 2:
        border = v.ravel()
    else:
        border = np.concatenate(
            [v[0, :], v[-1, :], v[1:-1, 0], v[1:-1, -1]]
        )
    return int(np.sort(border)[(border.size - 1) // 2])


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------


def _bfs_components(members: set, neighbors) -> list[set]:
    comps = []
    left = set(members)
    while left:
        seed = left.pop()
        comp = {seed}
        queue = deque([seed])
        while queue:
            p = queue.popleft()
            for q in neighbors(p):
                if q in left:
                    left.discard(q)
                    comp.add(q)
                    queue.append(q)
        comps.append(comp)
    return comps


def _saturate(comp: set, w: int, h: int, complement_neighbors) -> set:
    """comp plus every bounded component of its complement. The flood runs
    inside the bounding box padded by one pixel; anything outside the box
    can reach the image border without touching comp."""
    ys = [p // w for p in comp]
    xs = [p % w for p in comp]
    y0, y1 = max(min(ys) - 1, 0), min(max(ys) + 1, h - 1)
    x0, x1 = max(min(xs) - 1, 0), min(max(xs) + 1, w - 1)

    seeds = set()
    for y in range(y0, y1 + 1):
        for x in range(x0, x1 + 1):
            if y in (y0, y1) or x in (x0, x1):
                p = y * w + x
                if p not in comp:
                    seeds.add(p)
    reached = set(seeds)
    queue = deque(seeds)
    while queue:
        p = queue.popleft()
        for q in complement_neighbors(p):
            qy, qx = q // w, q % w
            if not (y0 <= qy <= y1 and x0 <= qx <= x1):
                continue
            if q in comp or q in reached:
                continue
            reached.add(q)
            queue.append(q)
    sat = set(comp)
    for y in range(y0, y1 + 1):
        base = y * w
        for x in range(x0, x1 + 1):
            p = base + x
            if p not in comp and p not in reached:
                sat.add(p)
    return sat


def _neighbor_fns(w: int, h: int):
    def n4(p):
        y, x = divmod(p, w)
        if x > 0:
            yield p - 1
        if x < w - 1:
            yield p + 1
        if y > 0:
            yield p - w
        if y < h - 1:
            yield p + w

    def n8(p):
        y, x = divmod(p, w)
        for dy in (-1, 0, 1):
            ny = y + dy
            if not 0 <= ny < h:
                continue
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                nx = x + dx
                if 0 <= nx < w:
                    yield ny * w + nx

    return n4, n8


def build_tree_bruteforce(image: GrayImage) -> ShapeTree:
    """Reference construction by direct level-set enumeration.

    Restricted to small images; quadratic-ish, set-based, and deliberately
    independent of build_tree."""
    h, w = image.height, image.width
    n = h * w
    if n > _ORACLE_PIXEL_LIMIT:
        raise ParameterError(
            f"oracle construction is limited to {_ORACLE_PIXEL_LIMIT} pixels"
        )
    vals = image.values
    flat = vals.ravel()
    n4, n8 = _neighbor_fns(w, h)

    border = set()
    for x in range(w):
        border.add(x)
        border.add((h - 1) * w + x)
    for y in range(h):
        border.add(y * w)
        border.add(y * w + w - 1)
    lam_inf = sorted(flat[sorted(border)])[(len(border) - 1) // 2]

    found: dict[frozenset, list] = {}  # pixel set -> [polarity, level]
    for lam in np.unique(vals):
        lam = int(lam)
        for polarity in (BRIGHT, DARK):
            if polarity == BRIGHT:
                members = {int(p) for p in np.flatnonzero(flat >= lam)}
                set_nb, comp_nb = n8, n4
                merged = lam <= lam_inf
            else:
                members = {int(p) for p in np.flatnonzero(flat <= lam)}
                set_nb, comp_nb = n4, n8
                merged = lam >= lam_inf
            if not members:
                continue
            for comp in _bfs_components(members, set_nb):
                if merged and comp & border:
                    continue
                sat = frozenset(_saturate(comp, w, h, comp_nb))
                if len(sat) == n:
                    continue  # root handled separately
                rec = found.get(sat)
                if rec is None:
                    found[sat] = [polarity, lam]
                else:
                    assert rec[0] == polarity, "polarity clash on equal pixel sets"
                    rec[1] = max(rec[1], lam) if polarity == BRIGHT else min(rec[1], lam)

    entries = [(fs, pol, lev) for fs, (pol, lev) in found.items()]
    entries.append((frozenset(range(n)), BRIGHT, int(lam_inf)))
    entries.sort(key=lambda e: (len(e[0]), min(e[0])))

    shapes: dict[int, Shape] = {}
    chains: list[list] = [[] for _ in range(n)]
    for sid, (fs, pol, lev) in enumerate(entries):
        perim = 0
        for p in fs:
            y, x = divmod(p, w)
            perim += (x == 0 or p - 1 not in fs)
            perim += (x == w - 1 or p + 1 not in fs)
            perim += (y == 0 or p - w not in fs)
            perim += (y == h - 1 or p + w not in fs)
        shapes[sid] = Shape(id=sid, level=lev, polarity=pol, area=len(fs),
                            perimeter=perim, min_pixel=min(fs))
        for p in fs:
            chains[p].append(sid)
    # entries were sorted by area so each pixel chain is inner to outer
    smallest = np.empty(n, dtype=np.int64)
    for p in range(n):
        smallest[p] = chains[p][0]
    root_id = len(entries) - 1
    for sid, (fs, _, _) in enumerate(entries):
        if sid == root_id:
            continue
        chain = chains[min(fs)]
        shapes[sid].parent = chain[chain.index(sid) + 1]
        shapes[shapes[sid].parent].children.append(sid)
    proper_lists: list[list] = [[] for _ in entries]
    for p in range(n):
        proper_lists[smallest[p]].append(p)
    for sid in shapes:
        shapes[sid].proper_pixels = np.array(sorted(proper_lists[sid]),
                                             dtype=np.int64)
    return ShapeTree(
        width=w, height=h, shapes=shapes, root_id=root_id,
        smallest_shape=smallest,
        meta={"border_level": int(lam_inf), "levels": image.levels,
              "connectivity": "8+/4-", "builder": "bruteforce-v1"},
    )


# ---------------------------------------------------------------------------
# efficient builder
# ---------------------------------------------------------------------------

_INF = np.float64(np.inf)


def _first_occurrence(reg: np.ndarray, nreg: int) -> np.ndarray:
    # reversed scatter: the last write per index is the first occurrence
    first = np.empty(nreg, dtype=np.int64)
    first[reg[::-1]] = np.arange(reg.size - 1, -1, -1)
    return first


def _internal_adjacencies(lbl: np.ndarray, nreg: int) -> np.ndarray:
    h_same = lbl[:, :-1] == lbl[:, 1:]
    v_same = lbl[:-1, :] == lbl[1:, :]
    adj = np.bincount(lbl[:, :-1][h_same], minlength=nreg)
    adj += np.bincount(lbl[:-1, :][v_same], minlength=nreg)
    return adj


def _insert_claims(cand, claim1, claim2, area_of):
    """Fold per-pixel candidate shape ids into the running two smallest."""
    fresh = (cand >= 0) & (cand != claim1) & (cand != claim2)
    safe = np.clip(cand, 0, None)
    a_new = np.where(fresh, area_of[safe], _INF)
    a_1 = np.where(claim1 >= 0, area_of[np.clip(claim1, 0, None)], _INF)
    promote = a_new < a_1
    claim2 = np.where(promote, claim1, claim2)
    claim1 = np.where(promote, cand, claim1)
    a_2 = np.where(claim2 >= 0, area_of[np.clip(claim2, 0, None)], _INF)
    second = fresh & ~promote & (a_new < a_2)
    claim2 = np.where(second, cand, claim2)
    return claim1, claim2


def build_tree(image: GrayImage) -> ShapeTree:
    """Build the tree of shapes by scanning each distinct gray level.

    For every level the image splits into level-set components and
    complement components; the enclosure forest over those regions gives
    each component its saturation (area, anchor pixel, and perimeter) by
    subtree aggregation, without materializing pixel sets. Per-pixel claim
    maps keep the two smallest shapes of either polarity covering each
    pixel, which is enough to recover proper pixels and parent links."""
    h, w = image.height, image.width
    n = h * w
    vals = image.values
    lam_inf = border_level(image)
    distinct = np.unique(vals)

    border_idx = np.zeros((h, w), dtype=bool)
    border_idx[0, :] = border_idx[-1, :] = True
    border_idx[:, 0] = border_idx[:, -1] = True
    border_flat = np.flatnonzero(border_idx.ravel())

    levels: list[int] = []
    polarities: list[str] = []
    areas: list[int] = []
    perims: list[int] = []
    minpix: list[int] = []
    seen: dict[tuple, int] = {}
    area_of = np.empty(0, dtype=np.float64)

    claims = {
        BRIGHT: (np.full(n, -1, np.int64), np.full(n, -1, np.int64)),
        DARK: (np.full(n, -1, np.int64), np.full(n, -1, np.int64)),
    }

    for polarity in (BRIGHT, DARK):
        claim1, claim2 = claims[polarity]
        if polarity == BRIGHT:
            level_iter = distinct[::-1]
            s_set, s_dual = _S8, _S4
        else:
            level_iter = distinct
            s_set, s_dual = _S4, _S8
        for lam in level_iter:
            lam = int(lam)
            U = vals >= lam if polarity == BRIGHT else vals <= lam
            if U.all():
                continue  # whole domain: merged with the frame, root territory
            merge_side = lam <= lam_inf if polarity == BRIGHT else lam >= lam_inf

            lbl_u, n_u = ndi.label(U, structure=s_set)
            lbl_c, n_c = ndi.label(~U, structure=s_dual)
            nreg = n_u + n_c
            lbl = np.where(U, lbl_u - 1, n_u + lbl_c - 1)
            reg = lbl.ravel()

            sizes = np.bincount(reg, minlength=nreg)
            first = _first_occurrence(reg, nreg)
            touch = np.zeros(nreg, dtype=bool)
            touch[reg[border_flat]] = True

            fy, fx = first // w, first % w
            probe = np.where(fx > 0, first - 1, np.where(fy > 0, first - w, -1))
            parent = np.where(probe >= 0, reg[np.clip(probe, 0, None)], -1)
            parent[touch] = -1  # border regions sit at the top of the forest

            is_comp = np.arange(nreg) < n_u
            merged_u = is_comp & touch & merge_side

            ext_edges = 4 * sizes.astype(np.int64) \
                - 2 * _internal_adjacencies(lbl, nreg)

            order = np.argsort(first)
            sat_area = sizes.astype(np.int64).copy()
            sat_min = first.copy()
            g = ext_edges.copy()
            for r in order[::-1]:
                p = parent[r]
                if p >= 0:
                    sat_area[p] += sat_area[r]
                    if sat_min[r] < sat_min[p]:
                        sat_min[p] = sat_min[r]
                    g[p] -= g[r]

            emitted = np.full(nreg, -1, np.int64)
            inner = np.full(nreg, -1, np.int64)
            outer2 = np.full(nreg, -1, np.int64)
            new_any = False
            for r in order:
                p = parent[r]
                base_in = inner[p] if p >= 0 else -1
                base_out = outer2[p] if p >= 0 else -1
                if is_comp[r] and not merged_u[r]:
                    key = (int(sat_min[r]), int(sat_area[r]))
                    sid = seen.get(key)
                    if sid is None:
                        sid = len(levels)
                        seen[key] = sid
                        levels.append(lam)
                        polarities.append(polarity)
                        areas.append(int(sat_area[r]))
                        perims.append(int(g[r]))
                        minpix.append(int(sat_min[r]))
                        new_any = True
                    emitted[r] = sid
                    inner[r] = sid
                    outer2[r] = base_in
                else:
                    inner[r] = base_in
                    outer2[r] = base_out

            if new_any:
                area_of = np.asarray(areas, dtype=np.float64)
            if area_of.size:
                cand1 = inner[reg]
                cand2 = outer2[reg]
                claim1, claim2 = _insert_claims(cand1, claim1, claim2, area_of)
                claim1, claim2 = _insert_claims(cand2, claim1, claim2, area_of)
        claims[polarity] = (claim1, claim2)

    root_id = len(levels)
    levels.append(int(lam_inf))
    polarities.append(BRIGHT)
    areas.append(n)
    perims.append(2 * (w + h))
    minpix.append(0)

    b1, b2 = claims[BRIGHT]
    d1, d2 = claims[DARK]
    area_of = np.asarray(areas, dtype=np.float64)
    a_b = np.where(b1 >= 0, area_of[np.clip(b1, 0, None)], _INF)
    a_d = np.where(d1 >= 0, area_of[np.clip(d1, 0, None)], _INF)
    smallest = np.where(a_b <= a_d, b1, d1)
    smallest[smallest < 0] = root_id

    shapes: dict[int, Shape] = {}
    for sid in range(len(levels)):
        shapes[sid] = Shape(id=sid, level=levels[sid], polarity=polarities[sid],
                            area=areas[sid], perimeter=perims[sid],
                            min_pixel=minpix[sid])
    order_px = np.argsort(smallest, kind="stable")
    bounds = np.searchsorted(smallest[order_px], np.arange(len(levels) + 1))
    for sid in range(len(levels)):
        shapes[sid].proper_pixels = np.sort(order_px[bounds[sid]:bounds[sid + 1]])

    for sid, shape in shapes.items():
        if sid == root_id:
            continue
        assert shape.proper_pixels.size, "shape without proper pixels"
        q = int(shape.proper_pixels[0])
        if shape.polarity == BRIGHT:
            cands = (int(b2[q]), int(d1[q]))
        else:
            cands = (int(d2[q]), int(b1[q]))
        best, best_area = root_id, float(n)
        for c in cands:
            if c >= 0 and area_of[c] < best_area:
                best, best_area = c, float(area_of[c])
        assert best_area > shape.area, "parent not larger than child"
        shape.parent = best
        shapes[best].children.append(sid)

    return ShapeTree(
        width=w, height=h, shapes=shapes, root_id=root_id,
        smallest_shape=smallest,
        meta={"border_level": int(lam_inf), "levels": image.levels,
              "connectivity": "8+/4-", "builder": "levelscan-v1"},
    )


# ---------------------------------------------------------------------------
# derived operations
# ---------------------------------------------------------------------------


def reconstruct(tree: ShapeTree) -> GrayImage:
    """Paint every proper pixel with its shape's level. Inverts build_tree
    exactly."""
    out = np.zeros(tree.size, dtype=np.int64)
    for shape in tree.shapes.values():
        out[shape.proper_pixels] = shape.level
    g = tree.meta.get("levels", int(out.max()) + 1)
    return GrayImage(out.reshape(tree.height, tree.width), levels=g)


def prune_by_area(tree: ShapeTree, a_min: int, a_max: int | None = None) -> ShapeTree:
    """Drop shapes with area outside [a_min, a_max]; the root survives
    regardless. Orphaned children re-attach to the nearest surviving
    ancestor and donated pixels move the same way."""
    if a_min < 1:
        raise ParameterError("a_min must be >= 1")
    if a_max is not None and a_max < a_min:
        raise ParameterError("a_max must be >= a_min")
    hi = np.inf if a_max is None else a_max

    keep = {sid for sid, s in tree.shapes.items()
            if a_min <= s.area <= hi or sid == tree.root_id}
    target: dict[int, int] = {}

    def surviving_ancestor(sid: int) -> int:
        seenb = []
        cur = sid
        while cur not in keep:
            seenb.append(cur)
            cur = tree.shapes[cur].parent
        for s in seenb:
            target[s] = cur
        return cur

    donations: dict[int, list] = {sid: [] for sid in keep}
    for sid, s in tree.shapes.items():
        if sid in keep:
            continue
        owner = target.get(sid)
        if owner is None:
            owner = surviving_ancestor(sid)
        donations[owner].append(s.proper_pixels)

    shapes: dict[int, Shape] = {}
    for sid in keep:
        old = tree.shapes[sid]
        parts = [old.proper_pixels] + donations[sid]
        proper = np.sort(np.concatenate([p for p in parts if p.size])) \
            if any(p.size for p in parts) else np.empty(0, np.int64)
        shapes[sid] = Shape(id=sid, level=old.level, polarity=old.polarity,
                            area=old.area, perimeter=old.perimeter,
                            min_pixel=old.min_pixel, proper_pixels=proper)
    for sid in keep:
        if sid == tree.root_id:
            continue
        parent = tree.shapes[sid].parent
        while parent not in keep:
            parent = tree.shapes[parent].parent
        shapes[sid].parent = parent
        shapes[parent].children.append(sid)
    for s in shapes.values():
        s.children.sort()

    relabel = np.empty(max(tree.shapes) + 1, dtype=np.int64)
    for sid in tree.shapes:
        relabel[sid] = sid if sid in keep else surviving_ancestor(sid)
    smallest = relabel[tree.smallest_shape]

    meta = dict(tree.meta)
    meta["pruned"] = {"a_min": int(a_min),
                      "a_max": None if a_max is None else int(a_max)}
    return ShapeTree(width=tree.width, height=tree.height, shapes=shapes,
                     root_id=tree.root_id, smallest_shape=smallest, meta=meta)


def tree_to_text(tree: ShapeTree) -> str:
    """Indented one-shape-per-line dump for debugging and golden tests."""
    lines = []

    def visit(sid: int, depth: int):
        s = tree.shapes[sid]
        lines.append(
            "  " * depth
            + f"id={sid} pol={s.polarity} level={s.level} area={s.area}"
            + f" perim={s.perimeter}"
        )
        for c in sorted(s.children):
            visit(c, depth + 1)

    visit(tree.root_id, 0)
    return "\n".join(lines) + "\n"
