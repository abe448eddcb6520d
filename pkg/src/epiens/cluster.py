"""Region pooling strategies for clustering-based training.

Four ways to partition regions into training pools: geography (shared
parent code), k-means on equal-length scaled curves, DTW k-means for
elastic alignment, and k-shape with the shape-based cross-correlation
distance. ``vanilla`` is the degenerate one-region-per-cluster strategy.

All algorithmic clusterings are seeded and deterministic; cluster ids
are dense in [0, k) and only meaningful up to relabeling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ClusterError(ValueError):
    pass


@dataclass
class ClusterAssignment:
    method: str
    labels: dict[str, int]
    k: int
    centroids: list | None = None

    def members(self, cluster_id: int):
        return [r for r, c in self.labels.items() if c == cluster_id]

    def partition(self):
        """Frozenset-of-frozensets view for label-free comparisons."""
        groups: dict[int, set] = {}
        for r, c in self.labels.items():
            groups.setdefault(c, set()).add(r)
        return frozenset(frozenset(g) for g in groups.values())


def vanilla_cluster(regions) -> ClusterAssignment:
    """One singleton cluster per region (no pooling)."""
    regions = list(regions)
    return ClusterAssignment("vanilla", {r: i for i, r in enumerate(regions)}, len(regions))


def geo_cluster(regions, parents: dict[str, str]) -> ClusterAssignment:
    """One cluster per distinct parent code, in sorted parent order."""
    regions = list(regions)
    for r in regions:
        if r not in parents or not parents[r]:
            raise ClusterError(f"region {r!r} has no parent code")
    codes = sorted({parents[r] for r in regions})
    ids = {p: i for i, p in enumerate(codes)}
    return ClusterAssignment("geo", {r: ids[parents[r]] for r in regions}, len(codes))


# ---------------------------------------------------------------------------
# k-means on equal-length curves
# ---------------------------------------------------------------------------

def _as_matrix(series_set):
    lengths = {len(s) for s in series_set}
    if len(lengths) != 1:
        raise ClusterError("kmeans requires equal-length series")
    return np.array([np.asarray(s, dtype=np.float64) for s in series_set])


def _kmeanspp_init(X, k, rng, dist_fn):
    """Standard k-means++ seeding over an arbitrary distance."""
    n = len(X)
    first = int(rng.integers(n))
    centroid_idx = [first]
    d2 = np.array([dist_fn(X[i], X[first]) ** 2 for i in range(n)])
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a centroid; pick any new index
            choices = [i for i in range(n) if i not in centroid_idx]
            nxt = choices[int(rng.integers(len(choices)))] if choices else int(rng.integers(n))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        centroid_idx.append(nxt)
        d2 = np.minimum(d2, np.array([dist_fn(X[i], X[nxt]) ** 2 for i in range(n)]))
    return centroid_idx


def kmeans(region_series: dict, k: int, max_iter: int = 100, seed: int = 0) -> ClusterAssignment:
    """Lloyd's algorithm with k-means++ seeding on equal-length curves.

    The within-cluster sum of squared distances never increases across
    iterations; empty clusters are reseeded from the point farthest from
    its assigned centroid.
    """
    regions = list(region_series)
    X = _as_matrix([region_series[r] for r in regions])
    n = len(regions)
    if k > n:
        raise ClusterError(f"k={k} exceeds the {n} series available")
    rng = np.random.default_rng(seed)
    euclid = lambda a, b: float(np.linalg.norm(a - b))
    centroids = X[_kmeanspp_init(X, k, rng, euclid)].copy()

    labels = np.full(n, -1, dtype=int)
    forced = {}
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        for i, c in forced.items():
            new_labels[i] = c
        forced = {}
        for c in range(k):
            if not np.any(new_labels == c):
                worst = int(np.argmax(d2[np.arange(n), new_labels]))
                new_labels[worst] = c
                forced[worst] = c
        if np.array_equal(new_labels, labels) and not forced:
            break
        labels = new_labels
        for c in range(k):
            centroids[c] = X[labels == c].mean(axis=0)
    return ClusterAssignment("kmeans", dict(zip(regions, labels.tolist())), k,
                             centroids=[c.copy() for c in centroids])


def kmeans_objective(region_series: dict, assignment: ClusterAssignment) -> float:
    """Within-cluster SSE with centroids recomputed as cluster means."""
    X = _as_matrix([region_series[r] for r in region_series])
    regions = list(region_series)
    total = 0.0
    for c in range(assignment.k):
        idx = [i for i, r in enumerate(regions) if assignment.labels[r] == c]
        if not idx:
            continue
        mu = X[idx].mean(axis=0)
        total += float(((X[idx] - mu) ** 2).sum())
    return total


# ---------------------------------------------------------------------------
# Shape-based distance and k-shape
# ---------------------------------------------------------------------------

def sbd(x, y) -> float:
    """Shape-based distance: 1 - max over shifts of normalized cross-correlation.

    The correlation is normalized by the full series norms, so the value
    lies in [0, 2]; 0 means a shift-aligned positive multiple.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ClusterError("shape-based distance undefined for zero-norm series")
    cc = np.correlate(x, y, mode="full")
    return float(1.0 - cc.max() / (nx * ny))


def _sbd_guarded(x, y) -> float:
    """sbd that treats a zero-norm side as uncorrelated (distance 1)."""
    if np.linalg.norm(x) == 0 or np.linalg.norm(y) == 0:
        return 1.0
    return sbd(x, y)


def _sbd_align(x, ref):
    """Shift x (zero-padded) to the lag best correlated with ref."""
    cc = np.correlate(x, ref, mode="full")
    shift = len(x) - 1 - int(cc.argmax())
    out = np.zeros_like(ref)
    if shift >= 0:
        out[shift:] = x[: len(ref) - shift]
    else:
        out[: len(ref) + shift] = x[-shift:]
    return out


def _znorm(x):
    sd = x.std()
    if sd == 0:
        return np.zeros_like(x)
    return (x - x.mean()) / sd


def _pad_to(x, L):
    out = np.zeros(L)
    out[: len(x)] = x
    return out


def shape_extract(members, reference):
    """k-shape centroid: dominant eigenvector of the aligned, centered
    correlation matrix, sign-fixed to maximize summed member correlation."""
    L = len(reference)
    if np.linalg.norm(reference) == 0:
        aligned = np.array(members)
    else:
        aligned = np.array([_sbd_align(m, reference) for m in members])
    S = aligned.T @ aligned
    Q = np.eye(L) - np.ones((L, L)) / L
    M = Q @ S @ Q
    vals, vecs = np.linalg.eigh(M)
    centroid = vecs[:, -1]
    if centroid.dot(aligned.sum(axis=0)) < 0:
        centroid = -centroid
    norm = np.linalg.norm(centroid)
    return centroid / norm if norm > 0 else centroid


def kshape(region_series: dict, k: int, max_iter: int = 100, seed: int = 0) -> ClusterAssignment:
    """k-shape clustering under SBD with eigenvector shape extraction.

    Series are z-normalized internally and zero-padded to the maximum
    length, so amplitude scaling and modest shifts do not separate
    members of one shape family.
    """
    regions = list(region_series)
    n = len(regions)
    if k > n:
        raise ClusterError(f"k={k} exceeds the {n} series available")
    L = max(len(region_series[r]) for r in regions)
    X = np.array([_pad_to(_znorm(np.asarray(region_series[r], dtype=np.float64)), L)
                  for r in regions])
    rng = np.random.default_rng(seed)
    centroid_idx = _kmeanspp_init(X, k, rng, _sbd_guarded)
    centroids = X[centroid_idx].copy()

    labels = np.full(n, -1, dtype=int)
    for _ in range(max_iter):
        dists = np.array([[_sbd_guarded(X[i], centroids[c]) for c in range(k)] for i in range(n)])
        new_labels = dists.argmin(axis=1)
        for c in range(k):
            if not np.any(new_labels == c):
                worst = int(np.argmax(dists[np.arange(n), new_labels]))
                new_labels[worst] = c
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = X[labels == c]
            new_c = shape_extract(members, centroids[c])
            old_cost = sum(_sbd_guarded(m, centroids[c]) for m in members)
            new_cost = sum(_sbd_guarded(m, new_c) for m in members)
            if new_cost <= old_cost or np.linalg.norm(centroids[c]) == 0:
                centroids[c] = new_c
    return ClusterAssignment("kshape", dict(zip(regions, labels.tolist())), k,
                             centroids=[c.copy() for c in centroids])


def kshape_objective(region_series: dict, labels: dict, k: int) -> float:
    """Sum of member SBDs to freshly extracted per-cluster shapes."""
    regions = list(region_series)
    L = max(len(region_series[r]) for r in regions)
    X = {r: _pad_to(_znorm(np.asarray(region_series[r], dtype=np.float64)), L) for r in regions}
    total = 0.0
    for c in range(k):
        members = [X[r] for r in regions if labels[r] == c]
        if not members:
            continue
        ref = shape_extract(np.array(members), members[0])
        total += sum(_sbd_guarded(m, ref) for m in members)
    return total


# ---------------------------------------------------------------------------
# DTW k-means (elastic stand-in for smooth-subspace time-series k-means)
# ---------------------------------------------------------------------------

def dtw(x, y) -> float:
    """Dynamic time warping distance with squared local costs."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = len(x), len(y)
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        cost = (x[i - 1] - y) ** 2
        for j in range(1, m + 1):
            D[i, j] = cost[j - 1] + min(D[i - 1, j], D[i, j - 1], D[i - 1, j - 1])
    return float(np.sqrt(D[n, m]))


def _dtw_path(x, y):
    n, m = len(x), len(y)
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i, j] = (x[i - 1] - y[j - 1]) ** 2 + min(D[i - 1, j], D[i, j - 1], D[i - 1, j - 1])
    path = []
    i, j = n, m
    while i > 0 and j > 0:
        path.append((i - 1, j - 1))
        step = np.argmin([D[i - 1, j - 1], D[i - 1, j], D[i, j - 1]])
        if step == 0:
            i, j = i - 1, j - 1
        elif step == 1:
            i -= 1
        else:
            j -= 1
    return path[::-1]


def _dba_update(members, centroid, iterations: int = 3):
    """Barycenter-style centroid refinement under DTW alignment."""
    c = centroid.copy()
    for _ in range(iterations):
        buckets = [[] for _ in range(len(c))]
        for m in members:
            for mi, ci in _dtw_path(m, c):
                buckets[ci].append(m[mi])
        new_c = np.array([np.mean(b) if b else c[i] for i, b in enumerate(buckets)])
        if np.allclose(new_c, c):
            break
        c = new_c
    return c


def tskmeans(region_series: dict, k: int, max_iter: int = 50, seed: int = 0) -> ClusterAssignment:
    """k-means under DTW with barycenter centroids; handles ragged lengths.

    Centroid updates are accepted only when they do not increase the
    cluster's summed squared DTW cost, so the objective is non-increasing.
    """
    regions = list(region_series)
    n = len(regions)
    if k > n:
        raise ClusterError(f"k={k} exceeds the {n} series available")
    X = [np.asarray(region_series[r], dtype=np.float64) for r in regions]
    rng = np.random.default_rng(seed)
    centroid_idx = _kmeanspp_init(X, k, rng, dtw)
    centroids = [X[i].copy() for i in centroid_idx]

    labels = np.full(n, -1, dtype=int)
    for it in range(max_iter):
        dists = np.array([[dtw(X[i], centroids[c]) for c in range(k)] for i in range(n)])
        new_labels = dists.argmin(axis=1)
        for c in range(k):
            if not np.any(new_labels == c):
                worst = int(np.argmax(dists[np.arange(n), new_labels]))
                new_labels[worst] = c
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = [X[i] for i in range(n) if labels[i] == c]
            candidate = _dba_update(members, centroids[c])
            old_cost = sum(dtw(m, centroids[c]) ** 2 for m in members)
            new_cost = sum(dtw(m, candidate) ** 2 for m in members)
            if new_cost <= old_cost:
                centroids[c] = candidate
    return ClusterAssignment("tskmeans", dict(zip(regions, labels.tolist())), k,
                             centroids=[c.copy() for c in centroids])


def tskmeans_objective(region_series: dict, assignment: ClusterAssignment) -> float:
    """Summed squared DTW of members to their assignment's centroids."""
    if assignment.centroids is None:
        raise ClusterError("assignment carries no centroids")
    total = 0.0
    for r, series in region_series.items():
        c = assignment.labels[r]
        total += dtw(np.asarray(series, dtype=np.float64), assignment.centroids[c]) ** 2
    return total


# ---------------------------------------------------------------------------
# Dispatch and export
# ---------------------------------------------------------------------------

METHODS = ("vanilla", "geo", "kmeans", "tskmeans", "kshape")


def cluster_regions(method: str, region_series: dict, parents=None, k: int = 50,
                    seed: int = 0) -> ClusterAssignment:
    """Run one clustering strategy on per-region curves.

    ``k`` is capped at the number of regions for the algorithmic methods.
    """
    regions = list(region_series)
    if method == "vanilla":
        return vanilla_cluster(regions)
    if method == "geo":
        return geo_cluster(regions, parents or {})
    k = min(k, len(regions))
    if method == "kmeans":
        return kmeans(region_series, k, seed=seed)
    if method == "kshape":
        return kshape(region_series, k, seed=seed)
    if method == "tskmeans":
        return tskmeans(region_series, k, seed=seed)
    raise ClusterError(f"unknown clustering method {method!r}; have {METHODS}")


def write_assignment_csv(assignments, path):
    """Export assignments as region,method,cluster_id rows."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region", "method", "cluster_id"])
        for a in assignments:
            for region in sorted(a.labels):
                writer.writerow([region, a.method, a.labels[region]])
