"""Codebook learning and sample encoding.

Three interchangeable encodings turn a bucket of pattern samples into a
fixed-length block:

  kmeans   hard-assignment histogram over learned centers, L1-normalized
  sparse   accumulated absolute sparse coefficients over a learned
           dictionary (L1-penalized least squares), L1-normalized
  fisher   mean gradient statistics of a diagonal Gaussian mixture,
           PCA-reduced and L2-normalized

One block is produced per (pattern kind, polarity) bucket; assembled in
canonical bucket order they form the image descriptor. All solvers are
deterministic given their seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import InsufficientSamplesError, ParameterError

FORMAT_VERSION = 1

_CHUNK = 8192


def signed_power(x: np.ndarray, mu: float) -> np.ndarray:
    """sign(x) * |x|**mu, applied elementwise; identity when mu == 1."""
    if mu == 1.0:
        return np.asarray(x, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.abs(x) ** mu


def _as_samples(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise ParameterError("samples must be a 2-d array (n, dim)")
    return arr


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


@dataclass
class KMeansCodebook:
    centers: np.ndarray  # (k, d)
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.centers.shape[0]


def _nearest(x: np.ndarray, centers: np.ndarray):
    """Labels and squared distances to the closest center, chunked."""
    labels = np.empty(x.shape[0], dtype=np.int64)
    dists = np.empty(x.shape[0], dtype=float)
    c_sq = (centers * centers).sum(axis=1)
    for lo in range(0, x.shape[0], _CHUNK):
        part = x[lo:lo + _CHUNK]
        d2 = (part * part).sum(axis=1)[:, None] + c_sq[None, :] \
            - 2.0 * part @ centers.T
        labels[lo:lo + _CHUNK] = np.argmin(d2, axis=1)
        dists[lo:lo + _CHUNK] = np.maximum(
            d2[np.arange(part.shape[0]), labels[lo:lo + _CHUNK]], 0.0)
    return labels, dists


def _plus_plus_init(x: np.ndarray, k: int, rng: np.random.Generator):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans_fit(samples, k: int, seed: int = 0, max_iter: int = 300,
               tol: float = 1e-6) -> KMeansCodebook:
    """Lloyd iterations from a distance-weighted random init. Empty
    clusters are reseeded at the sample farthest from its center."""
    x = _as_samples(samples)
    n = x.shape[0]
    if k < 1:
        raise ParameterError("k must be >= 1")
    if n < k:
        raise InsufficientSamplesError(
            f"{n} samples cannot populate {k} clusters")
    rng = np.random.default_rng(seed)
    centers = _plus_plus_init(x, k, rng)
    history = []
    prev = np.inf
    for _ in range(max_iter):
        labels, d2 = _nearest(x, centers)
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            centers[j] = x[int(np.argmax(d2))]
            labels, d2 = _nearest(x, centers)
            counts = np.bincount(labels, minlength=k)
        inertia = float(d2.sum())
        history.append(inertia)
        new_centers = np.zeros_like(centers)
        np.add.at(new_centers, labels, x)
        new_centers /= counts[:, None]
        centers = new_centers
        if prev != np.inf and prev - inertia <= tol * max(prev, 1e-30):
            break
        prev = inertia
    return KMeansCodebook(centers=centers, seed=seed,
                          meta={"inertia": history[-1], "history": history})


def kmeans_assign(codebook: KMeansCodebook, samples) -> np.ndarray:
    x = _as_samples(samples)
    if x.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    labels, _ = _nearest(x, codebook.centers)
    return labels


def kmeans_histogram(codebook: KMeansCodebook, samples) -> np.ndarray:
    """Occurrence count per center; ties go to the smallest center index."""
    labels = kmeans_assign(codebook, samples)
    return np.bincount(labels, minlength=codebook.k).astype(float)


# ---------------------------------------------------------------------------
# sparse coding
# ---------------------------------------------------------------------------


@dataclass
class SparseDictionary:
    atoms: np.ndarray  # (k, d), unit L2 rows after fitting
    penalty: float
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.atoms.shape[0]


def _kkt_violation(a: np.ndarray, gram: np.ndarray, b: np.ndarray,
                   penalty: float, alive: np.ndarray) -> np.ndarray:
    grad = a @ gram - b
    viol = np.where(
        a > 0, np.abs(grad + penalty),
        np.where(a < 0, np.abs(grad - penalty),
                 np.maximum(np.abs(grad) - penalty, 0.0)))
    viol[:, ~alive] = 0.0
    return viol.max(axis=1) if viol.size else np.zeros(a.shape[0])


def _active_set_polish(gram, b_i, penalty, alive, a0, tol, max_steps=None):
    """Active-set solve seeded from a near solution.

    Alternates stationarity solves on the current support with ratio-test
    pivots: a sign-infeasible target retires the first coordinate to cross
    zero, an inconsistent (rank-deficient) support moves along a Gram
    null-space direction, which keeps the reconstruction fixed and strictly
    shrinks the L1 term until a coordinate leaves. Returns None if the
    point fails to verify within the step budget."""
    k = gram.shape[0]
    if max_steps is None:
        max_steps = 4 * k + 100
    a = np.where(alive, a0, 0.0).astype(float)
    on = a != 0
    signs = np.sign(a)
    for _ in range(max_steps):
        idx = np.flatnonzero(on)
        target = np.zeros(k)
        if idx.size:
            sub = gram[np.ix_(idx, idx)]
            rhs = b_i[idx] - penalty * signs[idx]
            sol, _, rank, _ = np.linalg.lstsq(sub, rhs, rcond=None)
            null_resid = rhs - sub @ sol
            if rank < idx.size and np.linalg.norm(null_resid) > tol * 0.01:
                # inconsistent support: slide along the Gram null direction
                # until the first active coordinate reaches zero
                nu = null_resid / np.linalg.norm(null_resid)
                cur = a[idx]
                crossing = np.where(cur * nu < 0, -cur / nu, np.inf)
                pick = int(np.argmin(crossing))
                if not np.isfinite(crossing[pick]):
                    return None
                a[idx] = cur + crossing[pick] * nu
                a[idx[pick]] = 0.0
                on[idx[pick]] = False
                nz = a != 0
                signs[nz] = np.sign(a[nz])
                continue
            target[idx] = sol
            wrong = target[idx] * signs[idx] < 0
            entering = wrong & (a[idx] == 0)
            if entering.any():
                # a freshly added coordinate solved against its assumed
                # sign: the sign guess was wrong, not the support
                signs[idx[entering]] *= -1
                continue
            if wrong.any():
                step = target[idx] - a[idx]
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = np.where(wrong, a[idx] / -step, np.inf)
                pick = int(np.argmin(t))
                a[idx] = a[idx] + min(t[pick], 1.0) * step
                a[idx[pick]] = 0.0
                on[idx[pick]] = False
                nz = a != 0
                signs[nz] = np.sign(a[nz])
                continue
        a = target
        g = gram @ a - b_i
        viol_on = np.abs(g[on] + penalty * signs[on]).max() \
            if idx.size else 0.0
        off = alive & ~on
        viol_off = np.maximum(np.abs(g[off]) - penalty, 0.0)
        worst_off = viol_off.max() if off.any() else 0.0
        if max(viol_on, worst_off) < tol:
            return a
        if viol_on >= tol:
            return None
        j = np.flatnonzero(off)[int(np.argmax(viol_off))]
        signs[j] = -np.sign(g[j])
        on[j] = True
        a[j] = 0.0
    return None


def lasso_encode_batch(atoms: np.ndarray, x, penalty: float,
                       tol: float = 1e-6, max_cycles: int = 10_000):
    """Cyclic coordinate descent on 0.5*||x - a^T D||^2 + penalty*||a||_1.

    Handles arbitrary (even zero) atom norms; iterates until the worst
    optimality-condition violation over all coefficients is below tol.
    Once the support stabilizes, an exact solve on the support replaces the
    slow descent tail (the candidate is kept only if it verifies)."""
    d_mat = np.asarray(atoms, dtype=float)
    xs = _as_samples(x)
    if penalty < 0:
        raise ParameterError("penalty must be >= 0")
    n, k = xs.shape[0], d_mat.shape[0]
    if xs.shape[1] != d_mat.shape[1]:
        raise ParameterError("sample and atom dimensions disagree")
    gram = d_mat @ d_mat.T
    diag = np.diag(gram).copy()
    alive = diag > 0
    b = xs @ d_mat.T
    a = np.zeros((n, k))
    if n == 0 or k == 0:
        return a
    check_every = 10
    for cycle in range(max_cycles):
        for j in range(k):
            if not alive[j]:
                continue
            rho = b[:, j] - a @ gram[:, j] + a[:, j] * diag[j]
            a[:, j] = np.sign(rho) * np.maximum(np.abs(rho) - penalty, 0.0) \
                / diag[j]
        if (cycle + 1) % check_every != 0 and cycle + 1 != max_cycles:
            continue
        viol = _kkt_violation(a, gram, b, penalty, alive)
        pending = np.flatnonzero(viol >= tol)
        if pending.size == 0:
            break
        for i in pending:
            cand = _active_set_polish(gram, b[i], penalty, alive, a[i], tol)
            if cand is not None:
                a[i] = cand
        if _kkt_violation(a, gram, b, penalty, alive).max() < tol:
            break
    return a


def lasso_encode(atoms: np.ndarray, x, penalty: float, **kw) -> np.ndarray:
    return lasso_encode_batch(atoms, np.asarray(x, dtype=float)[None, :],
                              penalty, **kw)[0]


def _lasso_objective(atoms, xs, a, penalty) -> float:
    resid = xs - a @ atoms
    return 0.5 * float((resid * resid).sum()) \
        + penalty * float(np.abs(a).sum())


def dict_learn(samples, k: int, penalty: float, seed: int = 0,
               max_rounds: int = 100, tol: float = 1e-5,
               sample_cap_factor: int = 100) -> SparseDictionary:
    """Alternating sparse coding and dictionary updates.

    Atoms are constrained to the unit ball during the updates (projection
    keeps the objective non-increasing); unused atoms are reseeded from the
    worst-reconstructed samples; the returned atoms are rescaled to exactly
    unit norm at the end."""
    x = _as_samples(samples)
    n, d = x.shape
    if k < 1:
        raise ParameterError("k must be >= 1")
    if n < k:
        raise InsufficientSamplesError(
            f"{n} samples cannot support {k} atoms")
    rng = np.random.default_rng(seed)
    cap = sample_cap_factor * k
    if n > cap:
        x = x[rng.permutation(n)[:cap]]
        n = cap

    picks = rng.permutation(n)[:k]
    atoms = x[picks].astype(float).copy()
    for j in range(k):
        norm = np.linalg.norm(atoms[j])
        if norm > 0:
            atoms[j] /= norm
        else:
            atoms[j] = 0.0
            atoms[j, j % d] = 1.0

    history = []
    reseeds = []
    prev = np.inf
    for rnd in range(max_rounds):
        a = lasso_encode_batch(atoms, x, penalty)
        for j in range(k):
            usage = a[:, j] @ a[:, j]
            if usage <= 0:
                continue
            # residual with atom j removed, folded into one matrix product
            r_j = a[:, j] @ x - (a[:, j] @ a) @ atoms + usage * atoms[j]
            new_atom = r_j / usage
            norm = np.linalg.norm(new_atom)
            if norm > 1.0:
                new_atom /= norm
            atoms[j] = new_atom
        obj = _lasso_objective(atoms, x, a, penalty)
        history.append(obj)

        used = (np.abs(a) > 0).any(axis=0)
        if not used.all():
            resid = x - a @ atoms
            errs = (resid * resid).sum(axis=1)
            order = np.argsort(errs)[::-1]
            for slot, j in enumerate(np.flatnonzero(~used)):
                src = x[order[slot % n]]
                norm = np.linalg.norm(src)
                atoms[j] = src / norm if norm > 0 else 0.0
                if norm == 0:
                    atoms[j, j % d] = 1.0
            reseeds.append(rnd)
            prev = np.inf  # objective may rise across a reseed
            continue
        if prev != np.inf and prev - obj <= tol * max(abs(prev), 1e-30):
            break
        prev = obj

    norms = np.linalg.norm(atoms, axis=1)
    for j in range(k):
        if norms[j] > 0:
            atoms[j] /= norms[j]
        else:
            atoms[j] = 0.0
            atoms[j, j % d] = 1.0
    return SparseDictionary(atoms=atoms, penalty=penalty, seed=seed,
                            meta={"objective": history, "reseeds": reseeds,
                                  "n_used": n})


def sc_histogram(dictionary: SparseDictionary, samples) -> np.ndarray:
    """Per-atom sum of absolute coefficients over all samples."""
    x = _as_samples(samples)
    if x.shape[0] == 0:
        return np.zeros(dictionary.k)
    a = lasso_encode_batch(dictionary.atoms, x, dictionary.penalty)
    return np.abs(a).sum(axis=0)


# ---------------------------------------------------------------------------
# Gaussian mixture and gradient encoding
# ---------------------------------------------------------------------------

_MIN_SAMPLES_PER_COMPONENT = 10


@dataclass
class DiagonalGMM:
    weights: np.ndarray    # (k,)
    means: np.ndarray      # (k, d)
    variances: np.ndarray  # (k, d)
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _log_gauss(x: np.ndarray, gmm_means, gmm_vars, weights) -> np.ndarray:
    """(n, k) joint log densities log(pi_k) + log N(x | mu_k, var_k)."""
    n, d = x.shape
    out = np.empty((n, gmm_means.shape[0]))
    const = -0.5 * d * np.log(2.0 * np.pi)
    for kk in range(gmm_means.shape[0]):
        z = (x - gmm_means[kk]) / np.sqrt(gmm_vars[kk])
        out[:, kk] = const - 0.5 * np.log(gmm_vars[kk]).sum() \
            - 0.5 * (z * z).sum(axis=1) + np.log(weights[kk])
    return out


def gmm_fit(samples, k: int, seed: int = 0, max_iter: int = 200,
            tol: float = 1e-7) -> DiagonalGMM:
    """Diagonal-covariance EM initialized from a k-means split."""
    x = _as_samples(samples)
    n, d = x.shape
    if k < 1:
        raise ParameterError("k must be >= 1")
    if n < _MIN_SAMPLES_PER_COMPONENT * k:
        raise InsufficientSamplesError(
            f"{n} samples are too few for {k} mixture components "
            f"(need {_MIN_SAMPLES_PER_COMPONENT} per component)")

    floor = 1e-4 * x.var(axis=0) + 1e-9
    km = kmeans_fit(x, k, seed=seed)
    labels = kmeans_assign(km, x)
    weights = np.bincount(labels, minlength=k).astype(float)
    weights = np.maximum(weights, 1.0)
    weights /= weights.sum()
    means = km.centers.copy()
    variances = np.empty((k, d))
    for kk in range(k):
        member = x[labels == kk]
        variances[kk] = member.var(axis=0) if member.shape[0] else 0.0
    variances = np.maximum(variances, floor)

    prev_ll = -np.inf
    history = []
    for _ in range(max_iter):
        joint = _log_gauss(x, means, variances, weights)
        norm = logsumexp(joint, axis=1)
        ll = float(norm.mean())
        history.append(ll)
        q = np.exp(joint - norm[:, None])
        nk = q.sum(axis=0)
        nk = np.maximum(nk, 1e-10)
        weights = nk / nk.sum()
        means = (q.T @ x) / nk[:, None]
        sq = (q.T @ (x * x)) / nk[:, None]
        variances = np.maximum(sq - means * means, floor)
        if ll - prev_ll <= tol * max(abs(prev_ll), 1e-30) and prev_ll != -np.inf:
            break
        prev_ll = ll
    return DiagonalGMM(weights=weights, means=means, variances=variances,
                       seed=seed, meta={"loglik": history})


def fisher_encode(gmm: DiagonalGMM, samples) -> np.ndarray:
    """Normalized mean- and variance-gradient statistics, concatenated.

    Layout: all mean parts first (component-major, dimension-minor), then
    all variance parts. An empty sample set encodes to zeros."""
    k, d = gmm.k, gmm.dim
    x = _as_samples(samples)
    n = x.shape[0]
    if n == 0:
        return np.zeros(2 * k * d)
    joint = _log_gauss(x, gmm.means, gmm.variances, gmm.weights)
    q = np.exp(joint - logsumexp(joint, axis=1)[:, None])  # (n, k)
    sigma = np.sqrt(gmm.variances)
    u = np.empty((k, d))
    v = np.empty((k, d))
    for kk in range(k):
        z = (x - gmm.means[kk]) / sigma[kk]
        qk = q[:, kk]
        u[kk] = (qk @ z) / (n * np.sqrt(gmm.weights[kk]))
        v[kk] = (qk @ (z * z - 1.0)) / (n * np.sqrt(2.0 * gmm.weights[kk]))
    return np.concatenate([u.ravel(), v.ravel()])


# ---------------------------------------------------------------------------
# principal components
# ---------------------------------------------------------------------------


@dataclass
class PCAModel:
    mean: np.ndarray        # (d,)
    components: np.ndarray  # (d', d)
    eigenvalues: np.ndarray  # (d',)
    discarded: float        # reconstruction error: sum of dropped eigenvalues
    meta: dict = field(default_factory=dict)


def pca_fit(samples, max_components: int = 500) -> PCAModel:
    """Population-covariance PCA with a deterministic sign convention:
    each component's largest-magnitude entry is made positive."""
    x = _as_samples(samples)
    n, d = x.shape
    if n < 1:
        raise InsufficientSamplesError("PCA needs at least one sample")
    keep = max(1, min(max_components, n - 1, d))
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.maximum(eigvals[::-1], 0.0)
    eigvecs = eigvecs[:, ::-1]
    comps = eigvecs[:, :keep].T.copy()
    for i in range(comps.shape[0]):
        pivot = int(np.argmax(np.abs(comps[i])))
        if comps[i, pivot] < 0:
            comps[i] = -comps[i]
    return PCAModel(mean=mean, components=comps,
                    eigenvalues=eigvals[:keep],
                    discarded=float(eigvals[keep:].sum()),
                    meta={"n_samples": n})


def pca_transform(model: PCAModel, samples) -> np.ndarray:
    x = _as_samples(samples)
    return (x - model.mean) @ model.components.T


# ---------------------------------------------------------------------------
# per-bucket codebooks and image descriptors
# ---------------------------------------------------------------------------

METHODS = ("kmeans", "sparse", "fisher")


@dataclass
class CodebookSet:
    method: str
    layout: list  # [(kind, polarity), ...] canonical order, dropped removed
    models: dict  # bucket -> method-specific model
    pca: dict     # bucket -> PCAModel (fisher only)
    meta: dict = field(default_factory=dict)

    def block_dim(self, bucket) -> int:
        if self.method == "kmeans":
            return self.models[bucket].k
        if self.method == "sparse":
            return self.models[bucket].k
        return self.pca[bucket].components.shape[0]

    @property
    def dim(self) -> int:
        return sum(self.block_dim(b) for b in self.layout)


@dataclass
class ImageDescriptor:
    vector: np.ndarray
    blocks: dict   # bucket -> (start, stop) into vector
    raw_counts: dict | None = None  # kmeans only: unnormalized histograms


def fit_codebooks(per_image_buckets: list, method: str, k,
                  seed: int = 0, penalty: float = 0.05,
                  pca_components: int = 500) -> CodebookSet:
    """Learn one codebook per bucket from training images.

    k is either one size for every bucket or a mapping from pattern kind
    to size. Buckets without enough training samples shrink (fewer centers
    or mixture components) or, when empty, are dropped from the layout;
    both events are recorded in the metadata."""
    if method not in METHODS:
        raise ParameterError(f"unknown coding method: {method!r}")
    sizes = dict(k) if isinstance(k, dict) else None
    if sizes is not None:
        bad = [v for v in sizes.values() if int(v) < 1]
        if bad:
            raise ParameterError("every codebook size must be >= 1")
    elif k < 1:
        raise ParameterError("k must be >= 1")
    if not per_image_buckets:
        raise InsufficientSamplesError("no training images given")
    keys = list(per_image_buckets[0].keys())
    pooled = {
        key: np.vstack([im[key] for im in per_image_buckets])
        for key in keys
    }

    layout, models, pca, dropped, k_eff = [], {}, {}, [], {}
    for key in keys:
        data = pooled[key]
        n = data.shape[0]
        if sizes is not None:
            if key[0] not in sizes:
                raise ParameterError(
                    f"no codebook size given for pattern kind {key[0]!r}")
            want = int(sizes[key[0]])
        else:
            want = k
        if method == "fisher":
            kk = min(want, n // _MIN_SAMPLES_PER_COMPONENT)
        else:
            kk = min(want, n)
        if kk < 1:
            dropped.append(key)
            continue
        if method == "kmeans":
            models[key] = kmeans_fit(data, kk, seed=seed)
        elif method == "sparse":
            models[key] = dict_learn(data, kk, penalty=penalty, seed=seed)
        else:
            models[key] = gmm_fit(data, kk, seed=seed)
        layout.append(key)
        k_eff[key] = kk

    if method == "fisher":
        for key in layout:
            train_vecs = np.vstack([
                fisher_encode(models[key], im[key])
                for im in per_image_buckets
            ])
            pca[key] = pca_fit(train_vecs, max_components=pca_components)

    return CodebookSet(
        method=method, layout=layout, models=models, pca=pca,
        meta={"k_requested": k, "k_effective": {f"{a}|{b}": v for (a, b), v
                                                in k_eff.items()},
              "dropped": [f"{a}|{b}" for a, b in dropped],
              "penalty": penalty, "seed": seed,
              "pca_components": pca_components},
    )


def encode_descriptor(cbs: CodebookSet, buckets: dict) -> ImageDescriptor:
    """One image's descriptor: per-bucket blocks in layout order.

    Histogram blocks are L1-normalized, gradient blocks PCA-projected and
    L2-normalized; all-zero blocks stay zero."""
    parts = []
    spans = {}
    raw = {} if cbs.method == "kmeans" else None
    offset = 0
    for key in cbs.layout:
        samples = buckets.get(key)
        if samples is None:
            samples = np.zeros((0, 1))
        if cbs.method == "kmeans":
            counts = kmeans_histogram(cbs.models[key], samples) \
                if samples.shape[0] else np.zeros(cbs.models[key].k)
            raw[key] = counts
            total = counts.sum()
            block = counts / total if total > 0 else counts
        elif cbs.method == "sparse":
            hist = sc_histogram(cbs.models[key], samples)
            total = hist.sum()
            block = hist / total if total > 0 else hist
        elif samples.shape[0] == 0:
            # an absent bucket must not project to a spurious direction
            block = np.zeros(cbs.pca[key].components.shape[0])
        else:
            fv = fisher_encode(cbs.models[key], samples)
            block = pca_transform(cbs.pca[key], fv[None, :])[0]
            norm = np.linalg.norm(block)
            if norm > 0:
                block = block / norm
        parts.append(block)
        spans[key] = (offset, offset + block.shape[0])
        offset += block.shape[0]
    vector = np.concatenate(parts) if parts else np.zeros(0)
    return ImageDescriptor(vector=vector, blocks=spans, raw_counts=raw)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _arr(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _bucket_key_str(key) -> str:
    return f"{key[0]}|{key[1]}"


def _bucket_key(text: str):
    kind, pol = text.split("|")
    return (kind, pol)


def _model_to_dict(method: str, model) -> dict:
    if method == "kmeans":
        return {"centers": _arr(model.centers), "seed": model.seed}
    if method == "sparse":
        return {"atoms": _arr(model.atoms), "penalty": model.penalty,
                "seed": model.seed}
    return {"weights": _arr(model.weights), "means": _arr(model.means),
            "variances": _arr(model.variances), "seed": model.seed}


def _model_from_dict(method: str, blob: dict):
    if method == "kmeans":
        return KMeansCodebook(centers=np.array(blob["centers"], dtype=float),
                              seed=blob["seed"])
    if method == "sparse":
        return SparseDictionary(atoms=np.array(blob["atoms"], dtype=float),
                                penalty=blob["penalty"], seed=blob["seed"])
    return DiagonalGMM(weights=np.array(blob["weights"], dtype=float),
                       means=np.array(blob["means"], dtype=float),
                       variances=np.array(blob["variances"], dtype=float),
                       seed=blob["seed"])


def codebook_set_to_dict(cbs: CodebookSet) -> dict:
    out = {
        "format_version": FORMAT_VERSION,
        "kind": "codebook-set",
        "method": cbs.method,
        "layout": [_bucket_key_str(b) for b in cbs.layout],
        "models": {_bucket_key_str(b): _model_to_dict(cbs.method, m)
                   for b, m in cbs.models.items()},
        "meta": cbs.meta,
    }
    if cbs.method == "fisher":
        out["pca"] = {
            _bucket_key_str(b): {
                "mean": _arr(p.mean), "components": _arr(p.components),
                "eigenvalues": _arr(p.eigenvalues), "discarded": p.discarded,
            }
            for b, p in cbs.pca.items()
        }
    return out


def codebook_set_from_dict(blob: dict) -> CodebookSet:
    if blob.get("kind") != "codebook-set":
        raise ParameterError("not a serialized codebook set")
    if blob.get("format_version") != FORMAT_VERSION:
        raise ParameterError(
            f"unsupported codebook format: {blob.get('format_version')}")
    method = blob["method"]
    models = {_bucket_key(k): _model_from_dict(method, m)
              for k, m in blob["models"].items()}
    pca = {}
    for k, p in blob.get("pca", {}).items():
        pca[_bucket_key(k)] = PCAModel(
            mean=np.array(p["mean"], dtype=float),
            components=np.array(p["components"], dtype=float),
            eigenvalues=np.array(p["eigenvalues"], dtype=float),
            discarded=p["discarded"])
    return CodebookSet(method=method,
                       layout=[_bucket_key(b) for b in blob["layout"]],
                       models=models, pca=pca, meta=blob.get("meta", {}))


def save_codebook_set(cbs: CodebookSet, path) -> None:
    with open(path, "w") as fh:
        json.dump(codebook_set_to_dict(cbs), fh)


def load_codebook_set(path) -> CodebookSet:
    with open(path) as fh:
        return codebook_set_from_dict(json.load(fh))
