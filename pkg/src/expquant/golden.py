"""Reference dictionary generation and exponential-curve fitting.

The reference dictionary comes from bottom-up variance-minimizing (Ward)
agglomerative clustering of synthetic standard-normal samples, averaged over
several independent draws and folded to one symmetric half. A curve of the
form a**i + b is then fitted to the 8 magnitudes with weights doubling toward
index 0, so that index arithmetic can stand in for multiplication downstream.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

GOLDEN_RATIO = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class GoldenDictionary:
    magnitudes: list  # 8 non-negative reals, ascending; full table is +/-magnitudes
    seed: int = 0
    samples: int = 0
    repeats: int = 0
    clusters: int = 16

    def __post_init__(self):
        mags = [float(m) for m in self.magnitudes]
        if any(m < 0 for m in mags):
            raise ValueError("magnitudes must be non-negative")
        if any(b <= a for a, b in zip(mags, mags[1:])):
            raise ValueError("magnitudes must be strictly ascending")
        self.magnitudes = mags

    def centroids(self):
        """Full symmetric table: negated magnitudes reversed, then magnitudes."""
        return [-m for m in reversed(self.magnitudes)] + list(self.magnitudes)


@dataclass
class ExpFit:
    a: float
    b: float
    max_int: int = 7
    residual: float = 0.0

    def __post_init__(self):
        if self.a <= 1.0:
            raise ValueError(f"a must exceed 1 (got {self.a})")


def _ward_merge_tree(points, weights):
    """Full Ward merge list via the nearest-neighbor chain.

    Merge cost between clusters i, j is the within-cluster variance increase
    w_i*w_j/(w_i+w_j) * (c_i - c_j)**2, computable directly from cluster
    weight and mean. Returns the merge list [(cost, i, j, new_id)].
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.size
    size = 2 * n - 1
    w = np.full(size, np.nan)
    s = np.full(size, np.nan)
    c = np.full(size, np.nan)
    w[:n] = np.asarray(weights, dtype=np.float64)
    s[:n] = pts * w[:n]
    c[:n] = pts
    alive = np.zeros(size, dtype=bool)
    alive[:n] = True
    wa = w.copy()  # nan where dead, for vectorized nearest-neighbor scans
    ca = c.copy()
    merges = []
    chain = []
    next_id = n
    first_alive = 0
    num_alive = n
    while num_alive > 1:
        if not chain:
            while not alive[first_alive]:
                first_alive += 1
            chain.append(first_alive)
        while True:
            top = chain[-1]
            lim = next_id
            d = (wa[:lim] * w[top] / (wa[:lim] + w[top])) * (ca[:lim] - c[top]) ** 2
            d[top] = np.inf
            nn = int(np.nanargmin(d))
            if len(chain) > 1 and nn == chain[-2]:
                cost = float(d[nn])
                chain.pop()
                chain.pop()
                i, j = (top, nn) if top < nn else (nn, top)
                m = next_id
                next_id += 1
                w[m] = w[i] + w[j]
                s[m] = s[i] + s[j]
                c[m] = s[m] / w[m]
                alive[i] = alive[j] = False
                alive[m] = True
                wa[i] = wa[j] = np.nan
                ca[i] = ca[j] = np.nan
                wa[m] = w[m]
                ca[m] = c[m]
                merges.append((cost, i, j, m))
                num_alive -= 1
                break
            chain.append(nn)
    return merges


def _cut_tree(points, weights, merges, k):
    """Apply merges in ascending cost order until k clusters remain."""
    pts = np.asarray(points, dtype=np.float64)
    wts = np.asarray(weights, dtype=np.float64)
    n = pts.size
    order = sorted(range(len(merges)), key=lambda t: (merges[t][0], t))
    parent = list(range(2 * n - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for t in order[: n - k]:
        _, i, j, m = merges[t]
        parent[find(i)] = m
        parent[find(j)] = m
    sums = {}
    wsum = {}
    for leaf in range(n):
        r = find(leaf)
        sums[r] = sums.get(r, 0.0) + pts[leaf] * wts[leaf]
        wsum[r] = wsum.get(r, 0.0) + wts[leaf]
    return np.sort(np.array([sums[r] / wsum[r] for r in sums]))


def ward_cluster_weighted(points, weights, k):
    """k weighted-Ward cluster means, ascending. Exact greedy-merge semantics:
    costs are monotone under Ward's criterion, so replaying the chain's merge
    tree in cost order reproduces the always-merge-the-closest-pair sequence."""
    pts = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > pts.size:
        raise ValueError(f"k={k} exceeds point count {pts.size}")
    if k == pts.size:
        return np.sort(pts)
    merges = _ward_merge_tree(points, weights)
    return _cut_tree(points, weights, merges, k)


def agglomerative_cluster(values, k):
    """Bottom-up Ward clustering of raw values into k cluster means, ascending."""
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    return ward_cluster_weighted(vals, np.ones(vals.size), k)


def _equal_count_bins(sorted_vals, nbins):
    n = sorted_vals.size
    base, rem = divmod(n, nbins)
    counts = np.full(nbins, base, dtype=np.int64)
    counts[:rem] += 1
    edges = np.concatenate([[0], np.cumsum(counts)])
    sums = np.add.reduceat(sorted_vals, edges[:-1])
    return sums / counts, counts.astype(np.float64)


def _lloyd_step(values, centroids):
    cs = np.sort(centroids)
    mids = (cs[1:] + cs[:-1]) / 2.0
    assign = np.searchsorted(mids, values)
    sums = np.bincount(assign, weights=values, minlength=cs.size)
    cnt = np.bincount(assign, minlength=cs.size)
    out = cs.copy()
    nz = cnt > 0
    out[nz] = sums[nz] / cnt[nz]
    return np.sort(out)


DOWNSAMPLE_BINS = 4096


def generate_golden_dictionary(samples=50000, clusters=16, repeats=10, seed=0):
    """Cluster `repeats` independent N(0,1) draws, average the sorted centroid
    sets, then fold to half: magnitudes[i] = (|neg half|[i] + pos half[i]) / 2.

    Draws larger than DOWNSAMPLE_BINS are first reduced to equal-count bins
    (weighted clustering), then refined with one Lloyd assignment step over
    the full sample.
    """
    if samples < clusters:
        raise ValueError("need at least as many samples as clusters")
    if clusters % 2 != 0:
        raise ValueError("cluster count must be even (symmetric halves)")
    rng = np.random.default_rng(seed)
    all_cents = []
    for _ in range(repeats):
        vals = rng.standard_normal(samples)
        if samples > DOWNSAMPLE_BINS:
            sv = np.sort(vals)
            pts, wts = _equal_count_bins(sv, DOWNSAMPLE_BINS)
            cents = ward_cluster_weighted(pts, wts, clusters)
            cents = _lloyd_step(vals, cents)
        else:
            cents = agglomerative_cluster(vals, clusters)
        all_cents.append(np.sort(cents))
    avg = np.mean(np.stack(all_cents), axis=0)
    half = clusters // 2
    neg = avg[:half][::-1]
    pos = avg[half:]
    mags = (pos - neg) / 2.0
    return GoldenDictionary(
        magnitudes=list(mags), seed=seed, samples=samples, repeats=repeats,
        clusters=clusters,
    )


def fit_weights(count=8):
    """Least-squares weights: 1 on the outermost bin, doubling toward zero."""
    return 2.0 ** np.arange(count - 1, -1, -1)


def _weighted_fit_cost(a, mags, wts, ints):
    b = float(np.sum(wts * (mags - a ** ints)) / np.sum(wts))
    return float(np.sum(wts * (a ** ints + b - mags) ** 2)), b


def fit_exponential(gd, a_lo=1.0 + 1e-9, a_hi=2.0, iters=200):
    """Weighted least squares of a**i + b against the 8 magnitudes.

    b is closed-form given a (weighted mean residual); a comes from a
    golden-section search on (1, 2], which is deterministic and derivative
    free. The weighted residual at the optimum is kept for diagnostics.
    """
    mags = np.asarray(gd.magnitudes if isinstance(gd, GoldenDictionary) else gd,
                      dtype=np.float64)
    ints = np.arange(mags.size, dtype=np.float64)
    wts = fit_weights(mags.size)
    lo, hi = a_lo, a_hi
    x1 = hi - GOLDEN_RATIO * (hi - lo)
    x2 = lo + GOLDEN_RATIO * (hi - lo)
    f1, _ = _weighted_fit_cost(x1, mags, wts, ints)
    f2, _ = _weighted_fit_cost(x2, mags, wts, ints)
    for _ in range(iters):
        if f1 < f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN_RATIO * (hi - lo)
            f1, _ = _weighted_fit_cost(x1, mags, wts, ints)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN_RATIO * (hi - lo)
            f2, _ = _weighted_fit_cost(x2, mags, wts, ints)
    a = (lo + hi) / 2.0
    cost, b = _weighted_fit_cost(a, mags, wts, ints)
    return ExpFit(a=a, b=b, max_int=mags.size - 1, residual=cost)


def eval_magnitude(fit, i):
    """Curve value a**i + b for i in [0, 2*max_int]."""
    if not (0 <= i <= 2 * fit.max_int):
        raise ValueError(f"index {i} outside [0, {2 * fit.max_int}]")
    return fit.a ** i + fit.b


def save_golden(gd, fit, path):
    doc = {
        "magnitudes": gd.magnitudes,
        "a": fit.a,
        "b": fit.b,
        "residual": fit.residual,
        "seed": gd.seed,
        "samples": gd.samples,
        "repeats": gd.repeats,
        "clusters": gd.clusters,
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_golden(path):
    with open(path) as f:
        doc = json.load(f)
    gd = GoldenDictionary(
        magnitudes=doc["magnitudes"], seed=doc["seed"], samples=doc["samples"],
        repeats=doc["repeats"], clusters=doc.get("clusters", 16),
    )
    fit = ExpFit(a=doc["a"], b=doc["b"], residual=doc.get("residual", 0.0))
    return gd, fit
