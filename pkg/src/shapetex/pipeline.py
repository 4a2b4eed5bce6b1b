"""End-to-end texture experiments: datasets, splits, models, evaluation.

The flow for one split is strict about hygiene: every data-dependent
quantity (pattern interval, codebooks, kernel width, PCA bases, the SVM)
is fit on training images only and then applied frozen to test images.

Image descriptors are expensive to compute, so extraction results can be
memoized in-process and optionally persisted to a cache directory keyed by
content hashes; payloads carry their own checksum and are recomputed when
it does not verify.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from concurrent.futures.process import BrokenProcessPool
from dataclasses import asdict, dataclass, field
from itertools import repeat
from pathlib import Path

import numpy as np

from .attributes import compute_attributes
from .coding import (
    CodebookSet,
    codebook_set_from_dict,
    codebook_set_to_dict,
    encode_descriptor,
    fit_codebooks,
    signed_power,
)
from .errors import CacheIntegrityError, DatasetError, ParameterError
from .imaging import GrayImage, load_image, rescale
from .learning import (
    accuracy,
    geodesic_distances,
    hik,
    median_sigma,
    rbf,
    recall_curve,
    svm_predict,
    svm_train,
)
from .patterns import (
    PATTERN_KINDS,
    bucket_order,
    estimate_interval,
    extract_patterns,
    pattern_dim,
)
from .tree import build_tree, prune_by_area

_SCALE_FACTORS = (0.5, 1.0 / np.sqrt(2.0), 1.0, np.sqrt(2.0))

PRESET_KINDS = {
    "uiuc": ("single", "ancestor", "grandancestor", "sibling"),
    "umd": ("single", "ancestor", "grandancestor"),
    "brodatz": ("single", "ancestor"),
    "scene": ("single", "ancestor"),
}

# Deeper contexts get larger codebooks: they describe a richer sample space.
PRESET_CODEBOOK_SIZES = {
    "single": 100,
    "ancestor": 200,
    "grandancestor": 300,
    "sibling": 300,
}


@dataclass
class ExperimentConfig:
    """Everything that determines an experiment, JSON-serializable."""
    kinds: tuple = PATTERN_KINDS
    method: str = "kmeans"          # kmeans | sparse | fisher
    codebook_size: int | dict = 100  # one size, or {kind: size}
    penalty: float = 0.05           # sparse coding only
    pca_components: int = 500       # fisher only
    min_area: int = 3
    max_area_fraction: float = 0.05  # of the image pixel count
    reach_multiplier: int = 2
    multi_scale: bool = False
    scale_factors: tuple = _SCALE_FACTORS
    kernel: str | None = None       # default: hik for histograms, rbf else
    power: float | None = None      # default: 1.0, or 0.3 for sparse
    svm_c: float = 10.0
    n_train_per_class: int = 10
    n_splits: int = 10
    seed: int = 0
    ancestor_count: int = 3         # attribute context depth
    retrieval_neighbors: int = 10
    workers: int = 1                # parallel extraction processes

    def resolved_kernel(self) -> str:
        if self.kernel is not None:
            return self.kernel
        return "rbf" if self.method == "fisher" else "hik"

    def resolved_power(self) -> float:
        if self.power is not None:
            return self.power
        return 0.3 if self.method == "sparse" else 1.0

    def validate(self) -> None:
        if self.method not in ("kmeans", "sparse", "fisher"):
            raise ParameterError(f"unknown method: {self.method!r}")
        if self.resolved_kernel() not in ("hik", "rbf"):
            raise ParameterError(f"unknown kernel: {self.kernel!r}")
        for kind in self.kinds:
            pattern_dim(kind)  # raises on unknown names
        if isinstance(self.codebook_size, dict):
            missing = [k for k in self.kinds if k not in self.codebook_size]
            if missing:
                raise ParameterError(
                    f"codebook_size gives no size for kinds: {missing}")
            sizes = self.codebook_size.values()
        else:
            sizes = (self.codebook_size,)
        if any(s < 1 for s in sizes):
            raise ParameterError("codebook_size must be >= 1")
        if not self.scale_factors:
            raise ParameterError("scale_factors must not be empty")
        if any(not 0.1 <= f <= 4.0 for f in self.scale_factors):
            raise ParameterError("scale factors must lie in [0.1, 4]")
        if not 0 < self.max_area_fraction <= 1:
            raise ParameterError("max_area_fraction must be in (0, 1]")
        if self.min_area < 1:
            raise ParameterError("min_area must be >= 1")
        if self.n_train_per_class < 1 or self.n_splits < 1:
            raise ParameterError("split parameters must be >= 1")
        if self.workers < 1:
            raise ParameterError("workers must be >= 1")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kinds"] = list(self.kinds)
        out["scale_factors"] = list(self.scale_factors)
        return out

    @classmethod
    def from_dict(cls, blob: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(blob) - known
        if extra:
            raise ParameterError(f"unknown config keys: {sorted(extra)}")
        blob = dict(blob)
        if "kinds" in blob:
            blob["kinds"] = tuple(blob["kinds"])
        if "scale_factors" in blob:
            blob["scale_factors"] = tuple(blob["scale_factors"])
        cfg = cls(**blob)
        cfg.validate()
        return cfg

    @classmethod
    def preset(cls, name: str, **overrides) -> "ExperimentConfig":
        if name not in PRESET_KINDS:
            raise ParameterError(f"unknown preset: {name!r}")
        kinds = PRESET_KINDS[name]
        if "codebook_size" not in overrides:
            overrides["codebook_size"] = {
                k: PRESET_CODEBOOK_SIZES[k] for k in kinds}
        return cls(kinds=kinds, **overrides)


def config_hash(config: ExperimentConfig) -> str:
    """Short stable fingerprint of a full configuration."""
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# extraction: image -> per-bucket pattern samples
# ---------------------------------------------------------------------------


def image_trees(image: GrayImage, config: ExperimentConfig):
    """Pruned working trees at the configured scales, with their images."""
    factors = config.scale_factors if config.multi_scale else (1.0,)
    out = []
    for factor in factors:
        if factor == 1.0:
            scaled = image
        else:
            try:
                scaled = rescale(image, factor)
            except ParameterError:
                continue  # image too small for this scale
        a_max = max(config.min_area,
                    int(config.max_area_fraction * scaled.width
                        * scaled.height))
        tree = prune_by_area(build_tree(scaled), config.min_area, a_max)
        out.append((scaled, tree))
    return out


def extract_image_patterns(image: GrayImage, config: ExperimentConfig,
                           interval: int) -> dict:
    """Per-bucket sample blocks for one image at a fixed pattern interval.

    Multi-scale extraction concatenates the per-scale rows bucket-wise."""
    pieces = []
    for scaled, tree in image_trees(image, config):
        attrs = compute_attributes(tree, scaled,
                                   ancestor_count=config.ancestor_count)
        pieces.append(extract_patterns(
            tree, attrs, interval,
            reach_multiplier=config.reach_multiplier, kinds=config.kinds))
    merged = {}
    for key in bucket_order(config.kinds):
        merged[key] = np.vstack([p[key] for p in pieces])
    return merged


def training_interval(images: list, config: ExperimentConfig) -> int:
    """Pattern interval estimated from unscaled training trees only."""
    trees = []
    for image in images:
        a_max = max(config.min_area,
                    int(config.max_area_fraction * image.width
                        * image.height))
        trees.append(prune_by_area(build_tree(image), config.min_area,
                                   a_max))
    return estimate_interval(trees)


# ---------------------------------------------------------------------------
# cache
# ---------------------------------------------------------------------------


class PatternCache:
    """Content-addressed store for extracted pattern buckets.

    Always memoizes in-process; persists to a directory when one is given
    (or via the SHAPETEX_CACHE environment variable). Stored payloads embed
    a checksum; a mismatch triggers recomputation, not failure."""

    def __init__(self, directory: str | os.PathLike | None = None):
        if directory is None:
            directory = os.environ.get("SHAPETEX_CACHE") or None
        self.directory = Path(directory) if directory else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
        self.memory: dict = {}
        self.stats = {"hits": 0, "misses": 0, "rejected": 0}

    @staticmethod
    def _image_digest(image: GrayImage) -> str:
        h = hashlib.sha256()
        h.update(f"{image.width}x{image.height}x{image.levels}".encode())
        h.update(np.ascontiguousarray(image.values).tobytes())
        return h.hexdigest()

    @staticmethod
    def _config_digest(config: ExperimentConfig, interval: int) -> str:
        payload = {k: v for k, v in config.to_dict().items()
                   if k in ("kinds", "min_area", "max_area_fraction",
                            "reach_multiplier", "multi_scale",
                            "scale_factors", "ancestor_count")}
        payload["interval"] = interval
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def key(self, image: GrayImage, config: ExperimentConfig,
            interval: int) -> str:
        return self._image_digest(image)[:32] \
            + self._config_digest(config, interval)[:32]

    @staticmethod
    def _payload_checksum(buckets: dict) -> str:
        h = hashlib.sha256()
        for (kind, pol), rows in sorted(buckets.items()):
            h.update(f"{kind}|{pol}|{rows.shape}".encode())
            h.update(np.ascontiguousarray(rows).tobytes())
        return h.hexdigest()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str):
        if key in self.memory:
            self.stats["hits"] += 1
            return self.memory[key]
        if self.directory is None:
            return None
        path = self._path(key)
        if not path.exists():
            return None
        try:
            with open(path) as fh:
                blob = json.load(fh)
            buckets = {
                (k.split("|")[0], k.split("|")[1]):
                    np.array(v["rows"], dtype=float).reshape(v["shape"])
                for k, v in blob["buckets"].items()
            }
            if blob["checksum"] != self._payload_checksum(buckets):
                raise CacheIntegrityError(path)
        except CacheIntegrityError:
            self.stats["rejected"] += 1
            import warnings
            warnings.warn(f"cache entry failed checksum, recomputing: "
                          f"{path.name}")
            return None
        except (json.JSONDecodeError, KeyError, ValueError):
            self.stats["rejected"] += 1
            return None
        self.stats["hits"] += 1
        self.memory[key] = buckets
        return buckets

    def put(self, key: str, buckets: dict) -> None:
        self.memory[key] = buckets
        if self.directory is None:
            return
        blob = {
            "format_version": 1,
            "checksum": self._payload_checksum(buckets),
            "buckets": {
                f"{kind}|{pol}": {"shape": list(rows.shape),
                                  "rows": rows.ravel().tolist()}
                for (kind, pol), rows in buckets.items()
            },
        }
        with open(self._path(key), "w") as fh:
            json.dump(blob, fh)

    def fetch_patterns(self, image: GrayImage, config: ExperimentConfig,
                       interval: int) -> dict:
        key = self.key(image, config, interval)
        hit = self.get(key)
        if hit is not None:
            return hit
        self.stats["misses"] += 1
        buckets = extract_image_patterns(image, config, interval)
        self.put(key, buckets)
        return buckets


def _extract_pool(images: list, config: ExperimentConfig, interval: int):
    workers = min(config.workers, len(images))
    try:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(extract_image_patterns, images,
                                 repeat(config), repeat(interval)))
    except (OSError, PermissionError, BrokenProcessPool):
        # some sandboxes forbid subprocesses; threads keep the API working
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(
                lambda img: extract_image_patterns(img, config, interval),
                images))


def extract_many(images: list, config: ExperimentConfig, interval: int,
                 cache: PatternCache) -> list:
    """Bucket blocks for many images, cache-aware, optionally parallel.

    Extraction is a pure function of (image, config, interval), so the
    parallel path returns bit-identical blocks to the serial one."""
    keys = [cache.key(img, config, interval) for img in images]
    out = [cache.get(k) for k in keys]
    missing = [i for i, got in enumerate(out) if got is None]
    cache.stats["misses"] += len(missing)
    if not missing:
        return out
    todo = [images[i] for i in missing]
    if config.workers > 1 and len(todo) > 1:
        computed = _extract_pool(todo, config, interval)
    else:
        computed = [extract_image_patterns(img, config, interval)
                    for img in todo]
    for i, buckets in zip(missing, computed):
        cache.put(keys[i], buckets)
        out[i] = buckets
    return out


# ---------------------------------------------------------------------------
# split model: fit on train, apply to test
# ---------------------------------------------------------------------------


@dataclass
class SplitModel:
    config: ExperimentConfig
    interval: int
    codebooks: CodebookSet
    sigma: float | None                  # rbf width, fit on train
    train_vectors: np.ndarray            # transformed, kernel-ready
    train_labels: list
    svm: object
    meta: dict = field(default_factory=dict)


def _transform(vectors: np.ndarray, config: ExperimentConfig) -> np.ndarray:
    return signed_power(vectors, config.resolved_power())


def _encode_all(per_image_buckets: list, codebooks: CodebookSet):
    return np.vstack([
        encode_descriptor(codebooks, buckets).vector[None, :]
        for buckets in per_image_buckets
    ])


def fit_split(train_images: list, train_labels: list,
              config: ExperimentConfig,
              cache: PatternCache | None = None) -> SplitModel:
    """Fit every data-dependent stage on the training images alone."""
    config.validate()
    if len(train_images) != len(train_labels):
        raise ParameterError("images and labels disagree in length")
    cache = cache or PatternCache()
    interval = training_interval(train_images, config)
    buckets = extract_many(train_images, config, interval, cache)
    codebooks = fit_codebooks(
        buckets, config.method, config.codebook_size, seed=config.seed,
        penalty=config.penalty, pca_components=config.pca_components)
    vectors = _transform(_encode_all(buckets, codebooks), config)
    sigma = None
    if config.resolved_kernel() == "rbf":
        sigma = median_sigma(vectors)
    gram = _gram(vectors, vectors, config, sigma)
    svm = svm_train(gram, train_labels, c=config.svm_c)
    return SplitModel(config=config, interval=interval, codebooks=codebooks,
                      sigma=sigma, train_vectors=vectors,
                      train_labels=list(train_labels), svm=svm,
                      meta={"dropped_buckets": codebooks.meta["dropped"],
                            "cache": dict(cache.stats)})


def _gram(x: np.ndarray, y: np.ndarray, config: ExperimentConfig,
          sigma: float | None) -> np.ndarray:
    if config.resolved_kernel() == "hik":
        return hik(x, y)
    return rbf(x, y, sigma=sigma if sigma else 1.0)


def encode_images(model: SplitModel, images: list,
                  cache: PatternCache | None = None) -> np.ndarray:
    cache = cache or PatternCache()
    buckets = extract_many(images, model.config, model.interval, cache)
    return _transform(_encode_all(buckets, model.codebooks), model.config)


def evaluate_split(model: SplitModel, test_images: list, test_labels: list,
                   cache: PatternCache | None = None) -> dict:
    vectors = encode_images(model, test_images, cache)
    cross = _gram(vectors, model.train_vectors, model.config, model.sigma)
    predictions = svm_predict(model.svm, cross)
    return {
        "accuracy": accuracy(predictions, test_labels),
        "predictions": predictions,
    }


# ---------------------------------------------------------------------------
# whole experiments
# ---------------------------------------------------------------------------


def stratified_splits(labels: list, n_train_per_class: int, n_splits: int,
                      seed: int):
    """Deterministic train/test index splits, n_train drawn per class."""
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    splits = []
    for split_index in range(n_splits):
        rng = np.random.default_rng(seed * 100_003 + split_index)
        train_idx = []
        for lab in classes:
            members = np.flatnonzero(labels == lab)
            if members.size <= n_train_per_class:
                raise DatasetError(
                    f"class {lab!r} has {members.size} images, cannot hold "
                    f"out {n_train_per_class} for training")
            picked = rng.permutation(members.size)[:n_train_per_class]
            train_idx.extend(members[picked].tolist())
        train_set = set(train_idx)
        test_idx = [i for i in range(labels.size) if i not in train_set]
        splits.append((sorted(train_idx), test_idx))
    return splits


@dataclass
class RunResult:
    per_split: list
    mean_accuracy: float
    std_accuracy: float
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"per_split": self.per_split,
                "mean_accuracy": self.mean_accuracy,
                "std_accuracy": self.std_accuracy,
                "meta": self.meta}


def run_classification(images: list, labels: list,
                       config: ExperimentConfig,
                       cache: PatternCache | None = None) -> RunResult:
    """Repeated stratified splits: fit on train, score on the rest."""
    config.validate()
    cache = cache or PatternCache()
    started = time.perf_counter()
    splits = stratified_splits(labels, config.n_train_per_class,
                               config.n_splits, config.seed)
    accuracies = []
    for train_idx, test_idx in splits:
        model = fit_split([images[i] for i in train_idx],
                          [labels[i] for i in train_idx], config, cache)
        score = evaluate_split(model, [images[i] for i in test_idx],
                               [labels[i] for i in test_idx], cache)
        accuracies.append(score["accuracy"])
    arr = np.asarray(accuracies)
    return RunResult(per_split=accuracies,
                     mean_accuracy=float(arr.mean()),
                     std_accuracy=float(arr.std()),  # population spread
                     meta={"config": config.to_dict(),
                           "config_hash": config_hash(config),
                           "n_images": len(images),
                           "elapsed_seconds": time.perf_counter() - started,
                           "cache": dict(cache.stats)})


def retrieval_distances(vectors: np.ndarray, config: ExperimentConfig,
                        geodesic: bool = True) -> np.ndarray:
    """Pairwise retrieval distances over kernel-ready descriptors.

    Hard-vote histograms renormalize to unit mass and measure 1 minus the
    histogram intersection; other methods use Euclidean distance on the
    kernel-ready vectors. The geodesic variant re-routes every pair
    through the neighborhood graph."""
    if config.method == "kmeans":
        sums = vectors.sum(axis=1, keepdims=True)
        sums[sums == 0] = 1.0
        unit = vectors / sums
        base = 1.0 - hik(unit)
        np.fill_diagonal(base, 0.0)
        base = np.maximum(base, 0.0)
    else:
        diff = np.sqrt(np.maximum(
            (vectors ** 2).sum(1)[:, None] + (vectors ** 2).sum(1)[None, :]
            - 2 * vectors @ vectors.T, 0.0))
        base = diff
        np.fill_diagonal(base, 0.0)
    if not geodesic:
        return base
    return geodesic_distances(base, n_neighbors=config.retrieval_neighbors)


def run_retrieval(images: list, labels: list, config: ExperimentConfig,
                  cache: PatternCache | None = None,
                  geodesic: bool = True) -> dict:
    """All-to-all retrieval: codebooks fit on the full collection."""
    config.validate()
    singles = sorted(lab for lab, n in Counter(labels).items() if n < 2)
    if singles:
        raise DatasetError(
            f"retrieval needs at least two images per class; these have "
            f"one: {singles}")
    cache = cache or PatternCache()
    interval = training_interval(images, config)
    buckets = extract_many(images, config, interval, cache)
    codebooks = fit_codebooks(
        buckets, config.method, config.codebook_size, seed=config.seed,
        penalty=config.penalty, pca_components=config.pca_components)
    vectors = _transform(_encode_all(buckets, codebooks), config)
    dist = retrieval_distances(vectors, config, geodesic=geodesic)
    curve = recall_curve(dist, labels)
    return {"recall": curve.tolist(), "distances": dist,
            "interval": interval, "config_hash": config_hash(config)}


# ---------------------------------------------------------------------------
# datasets on disk
# ---------------------------------------------------------------------------

_IMAGE_SUFFIXES = (".pgm", ".png")


def load_class_directory_dataset(root) -> tuple:
    """A directory per class, images directly inside. Returns
    (images, labels, paths) with deterministic ordering."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root is not a directory: {root}")
    images, labels, paths = [], [], []
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"no class directories under {root}")
    for cdir in class_dirs:
        files = sorted(p for p in cdir.iterdir()
                       if p.suffix.lower() in _IMAGE_SUFFIXES)
        if not files:
            raise DatasetError(f"class directory has no images: {cdir}")
        for path in files:
            images.append(load_image(path))
            labels.append(cdir.name)
            paths.append(str(path))
    return images, labels, paths
