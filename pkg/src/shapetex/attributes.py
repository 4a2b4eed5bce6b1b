"""Per-shape geometric and photometric descriptors.

Every shape gets a five-dimensional attribute vector:

  elongation            ratio of inertia eigenvalues, (0, 1], 1 = isotropic
  ellipse_compactness   how ellipse-like the mass distribution is, (0, 1]
  compactness           isoperimetric ratio 4*pi*area / perimeter^2, (0, 1]
  contrast              (mean over proper pixels - mean over shape) / std
  scale_ratio           shape area against the mean area of its ancestors

Moment and value sums are kept in exact integer arithmetic so that the
vector is exactly invariant under 90-degree rotation and under affine
changes of the gray levels (the only floating point happens after the
integers have been combined).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ParameterError
from .imaging import GrayImage
from .tree import ShapeTree

ATTRIBUTE_NAMES = (
    "elongation",
    "ellipse_compactness",
    "compactness",
    "contrast",
    "scale_ratio",
)

ATTRIBUTE_DIM = len(ATTRIBUTE_NAMES)

_FOUR_PI = 4.0 * math.pi
# an exactly flat mass distribution has zero second moment; the floor keeps
# ratios finite for single pixels and perfect lines
_EIG_FLOOR_RATIO = 1e-3
_EIG_TINY = 1e-12


def _subtree_sums(tree: ShapeTree, image: GrayImage):
    """Integer sums per shape: own proper pixels and whole pixel set.

    Columns: count, sum x, sum y, sum x^2, sum y^2, sum xy, sum v, sum v^2.
    """
    if (tree.height, tree.width) != (image.height, image.width):
        raise ParameterError("tree and image dimensions disagree")
    flat = image.values.ravel().astype(np.int64)
    w = tree.width
    ids = tree.ids_by_area()
    pos = {sid: k for k, sid in enumerate(ids)}
    own = np.zeros((len(ids), 8), dtype=np.int64)
    for k, sid in enumerate(ids):
        px = tree.shapes[sid].proper_pixels
        if px.size:
            x = px % w
            y = px // w
            v = flat[px]
            own[k] = (px.size, x.sum(), y.sum(), (x * x).sum(),
                      (y * y).sum(), (x * y).sum(), v.sum(), (v * v).sum())
    total = own.copy()
    for k, sid in enumerate(ids):  # ascending area: children come first
        parent = tree.shapes[sid].parent
        if parent is not None:
            total[pos[parent]] += total[k]
    return ids, pos, own, total


def _inertia_eigenvalues(n: int, sx: int, sy: int, sxx: int, syy: int,
                         sxy: int) -> tuple[float, float]:
    """Eigenvalues of the area-normalized inertia matrix, largest first.

    Computed from integer sums: the matrix is [[A, B], [B, C]] / n^3 with
    A = n*sxx - sx^2 and so on, all exact."""
    a = n * sxx - sx * sx
    b = n * sxy - sx * sy
    c = n * syy - sy * sy
    n3 = float(n) ** 3
    t = (a + c) / (2.0 * n3)
    d = math.sqrt(((a - c) / 2.0) ** 2 + float(b) ** 2) / n3
    lam1, lam2 = t + d, t - d
    if lam1 <= 0.0:
        return _EIG_TINY, _EIG_TINY
    return lam1, max(lam2, _EIG_FLOOR_RATIO * lam1)


def _geometry(n, sx, sy, sxx, syy, sxy, perimeter):
    lam1, lam2 = _inertia_eigenvalues(n, sx, sy, sxx, syy, sxy)
    elongation = lam2 / lam1
    ellipse_c = min(1.0, 1.0 / (_FOUR_PI * math.sqrt(lam1 * lam2)))
    compact = min(1.0, _FOUR_PI * n / float(perimeter) ** 2)
    return elongation, ellipse_c, compact


def _contrast(n, sv, sv2, n_proper, sv_proper, level):
    """Signed deviation of the proper-pixel mean from the shape mean, in
    units of the shape's standard deviation. Exact integer numerators keep
    the value invariant under affine gray maps."""
    m2 = n * sv2 - sv * sv  # n^2 * variance, exact
    if m2 <= 0:
        return 0.0
    if n_proper:
        num = n * sv_proper - n_proper * sv
        return num / (n_proper * math.sqrt(float(m2)))
    return (n * level - sv) / math.sqrt(float(m2))


def _scale_ratio(tree: ShapeTree, sid: int, ancestor_count: int) -> float:
    if sid == tree.root_id:
        return 1.0
    total = 0
    cur = sid
    root_area = tree.shapes[tree.root_id].area
    for _ in range(ancestor_count):
        parent = tree.shapes[cur].parent
        if parent is None:
            total += root_area  # padding above the root
        else:
            total += tree.shapes[parent].area
            cur = parent
    return ancestor_count * tree.shapes[sid].area / total


def compute_attributes(tree: ShapeTree, image: GrayImage,
                       ancestor_count: int = 3) -> dict[int, np.ndarray]:
    """Attribute vectors for every shape of the tree, keyed by shape id."""
    if ancestor_count < 1:
        raise ParameterError("ancestor_count must be >= 1")
    ids, _, own, total = _subtree_sums(tree, image)
    out: dict[int, np.ndarray] = {}
    for k, sid in enumerate(ids):
        shape = tree.shapes[sid]
        n, sx, sy, sxx, syy, sxy, sv, sv2 = (int(v) for v in total[k])
        assert n == shape.area, "aggregated pixel count disagrees with area"
        n_p, sv_p = int(own[k, 0]), int(own[k, 6])
        elong, ell_c, comp = _geometry(n, sx, sy, sxx, syy, sxy,
                                       shape.perimeter)
        gamma = _contrast(n, sv, sv2, n_p, sv_p, shape.level)
        beta = _scale_ratio(tree, sid, ancestor_count)
        out[sid] = np.array([elong, ell_c, comp, gamma, beta])
    return out


def attributes_of(tree: ShapeTree, image: GrayImage, shape_id: int,
                  ancestor_count: int = 3) -> np.ndarray:
    """Single-shape attribute vector computed from explicit pixel sets.

    Slower than compute_attributes but does not rely on the bottom-up
    aggregation; the two must agree exactly."""
    shape = tree.shapes[shape_id]
    px = tree.pixels_of(shape_id)
    flat = image.values.ravel().astype(np.int64)
    w = tree.width
    x = px % w
    y = px // w
    v = flat[px]
    n = int(px.size)
    sx, sy = int(x.sum()), int(y.sum())
    sxx, syy, sxy = int((x * x).sum()), int((y * y).sum()), int((x * y).sum())
    sv, sv2 = int(v.sum()), int((v * v).sum())
    elong, ell_c, comp = _geometry(n, sx, sy, sxx, syy, sxy, shape.perimeter)
    prop = shape.proper_pixels
    gamma = _contrast(n, sv, sv2, int(prop.size),
                      int(flat[prop].sum()), shape.level)
    beta = _scale_ratio(tree, shape_id, ancestor_count)
    return np.array([elong, ell_c, comp, gamma, beta])


def shape_moments(tree: ShapeTree, shape_id: int):
    """(area, centroid (x, y), covariance matrix) of a shape's pixel mass."""
    px = tree.pixels_of(shape_id)
    w = tree.width
    x = px % w
    y = px // w
    n = int(px.size)
    cx, cy = float(x.mean()), float(y.mean())
    a = int((x * x).sum()) * n - int(x.sum()) ** 2
    b = int((x * y).sum()) * n - int(x.sum()) * int(y.sum())
    c = int((y * y).sum()) * n - int(y.sum()) ** 2
    cov = np.array([[a, b], [b, c]], dtype=float) / float(n) ** 2
    return n, (cx, cy), cov


def attributes_to_csv(tree: ShapeTree, attrs: dict[int, np.ndarray]) -> str:
    """Flat text dump, one shape per line, for inspection and goldens."""
    lines = ["id,parent,polarity,level,area,perimeter,"
             + ",".join(ATTRIBUTE_NAMES)]
    for sid in tree.ids_by_area():
        s = tree.shapes[sid]
        parent = "" if s.parent is None else str(s.parent)
        vals = ",".join(f"{v:.9g}" for v in attrs[sid])
        lines.append(f"{sid},{parent},{s.polarity},{s.level},{s.area},"
                     f"{s.perimeter},{vals}")
    return "\n".join(lines) + "\n"


def render_ellipses(tree: ShapeTree, image: GrayImage) -> GrayImage:
    """Debug view: repaint each shape as its moment-matched ellipse.

    Shapes are drawn in decreasing area order so small structures stay on
    top, mirroring the nesting of the tree."""
    h, w = tree.height, tree.width
    out = np.full((h, w), tree.shapes[tree.root_id].level, dtype=np.int64)
    order = tree.ids_by_area()[::-1]
    for sid in order:
        s = tree.shapes[sid]
        n, (cx, cy), cov = shape_moments(tree, sid)
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
        if det <= 1e-12:
            yy = int(round(cy))
            xx = int(round(cx))
            if 0 <= yy < h and 0 <= xx < w:
                out[yy, xx] = s.level
            continue
        inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[0, 1], cov[0, 0]]]) / det
        rx = 2.0 * math.sqrt(cov[0, 0]) + 1.0
        ry = 2.0 * math.sqrt(cov[1, 1]) + 1.0
        x0, x1 = max(0, int(cx - rx)), min(w - 1, int(cx + rx) + 1)
        y0, y1 = max(0, int(cy - ry)), min(h - 1, int(cy + ry) + 1)
        ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
        dx = xs - cx
        dy = ys - cy
        q = inv[0, 0] * dx * dx + 2 * inv[0, 1] * dx * dy + inv[1, 1] * dy * dy
        mask = q <= 4.0  # matches a uniformly filled ellipse of equal moments
        out[y0:y1 + 1, x0:x1 + 1][mask] = s.level
    return GrayImage(out, levels=image.levels)
