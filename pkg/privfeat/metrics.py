"""Sample-quality metrics computed directly on feature vectors.

* FID between the Gaussian moment fits of two sets.
* PRD precision/recall from cluster histograms of the union (K=20).
* NDB: bins of a k-means fit on the real set (K=50) whose proportions differ
  significantly under a two-proportion z-test.
"""
import logging
import math
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pydantic
from scipy import linalg, stats
from scipy.spatial.distance import cdist

from .base import ArrayRecord, FeatureMatrix, FloatArray, IntArray, Real, SeededRng, ensure_rng, standard_model_config
from .enums import MetricName
from .exceptions import ContractViolation, DimensionMismatch

log = logging.getLogger(__name__)

KMEANS_MAX_ITER = 100
KMEANS_TOLERANCE = 1e-6
PRD_CLUSTERS = 20
PRD_ANGLES = 1001
NDB_CLUSTERS = 50
NDB_SIGNIFICANCE = 0.05

_ANGLE_MARGIN = 1e-10


def _as_data(m: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(m, FeatureMatrix):
        return m.data
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch("expected an n x d matrix, got shape {0}".format(m.shape))
    return m


def _same_dim(a: np.ndarray, b: np.ndarray):
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch("feature dimensions differ: {0} vs {1}".format(a.shape[1], b.shape[1]))


class KMeansResult(ArrayRecord):
    centroids: FloatArray
    assignments: IntArray
    inertia: float
    counts: IntArray
    iterations: int

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def empty_bins(self) -> np.ndarray:
        return np.flatnonzero(self.counts == 0)

    def assign(self, X) -> np.ndarray:
        """Nearest-centroid bin of every row of X."""
        X = _as_data(X)
        _same_dim(X, self.centroids)
        return np.argmin(cdist(X, self.centroids, "sqeuclidean"), axis=1)


def _kmeans_pp(X: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(gen.integers(n))]
    closest = cdist(X, X[chosen], "sqeuclidean")[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(gen.choice(n, p=closest / total))
        else:
            nxt = int(gen.integers(n))
        chosen.append(nxt)
        closest = np.minimum(closest, cdist(X, X[nxt:nxt + 1], "sqeuclidean")[:, 0])
    return X[chosen].copy()


def _assign(X, centroids):
    d2 = cdist(X, centroids, "sqeuclidean")
    assignments = np.argmin(d2, axis=1)
    return assignments, float(d2[np.arange(X.shape[0]), assignments].sum())


def kmeans(
    data: Union[FeatureMatrix, np.ndarray],
    k: int,
    seed: Union[int, SeededRng] = 0,
    max_iter: int = KMEANS_MAX_ITER,
    tolerance: float = KMEANS_TOLERANCE,
) -> KMeansResult:
    """Lloyd's algorithm from a seeded k-means++ start.

    Stops when the relative inertia decrease drops below `tolerance` or after
    `max_iter` updates. A bin that loses all its points keeps its centroid
    and shows up with count 0.
    """
    X = _as_data(data)
    n = X.shape[0]
    if k < 1:
        raise ContractViolation("k must be at least 1, got {0}".format(k))
    if n < k:
        raise ContractViolation("k-means needs at least k={0} points, got {1}".format(k, n))

    centroids = _kmeans_pp(X, k, ensure_rng(seed).generator)
    assignments, inertia = _assign(X, centroids)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        counts = np.bincount(assignments, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assignments, X)
        occupied = counts > 0
        centroids = centroids.copy()
        centroids[occupied] = sums[occupied] / counts[occupied, None]

        previous = inertia
        assignments, inertia = _assign(X, centroids)
        if previous == 0.0 or (previous - inertia) <= tolerance * previous:
            break

    return KMeansResult(
        centroids=centroids,
        assignments=assignments,
        inertia=inertia,
        counts=np.bincount(assignments, minlength=k),
        iterations=iterations,
    )


def _moments(X: np.ndarray):
    if X.shape[0] < 2:
        raise ContractViolation("need at least 2 rows to estimate a covariance")
    return X.mean(axis=0), np.atleast_2d(np.cov(X, rowvar=False))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = linalg.eigh((m + m.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid(a: Union[FeatureMatrix, np.ndarray], b: Union[FeatureMatrix, np.ndarray]) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), clamped at 0.

    The trace of the square root is taken as Tr((S_b^(1/2) S_a S_b^(1/2))^(1/2))
    from symmetric eigendecompositions.
    """
    A, B = _as_data(a), _as_data(b)
    _same_dim(A, B)
    d = A.shape[1]
    if A.shape[0] <= d or B.shape[0] <= d:
        log.warning(
            "FID with n={0}, m={1} rows in d={2}: covariance estimates are singular".format(A.shape[0], B.shape[0], d)
        )
    mu_a, cov_a = _moments(A)
    mu_b, cov_b = _moments(B)
    if np.array_equal(mu_a, mu_b) and np.array_equal(cov_a, cov_b):
        return 0.0

    root_b = _psd_sqrt(cov_b)
    middle = root_b @ cov_a @ root_b
    eig = linalg.eigvalsh((middle + middle.T) / 2.0)
    trace_root = float(np.sum(np.sqrt(np.clip(eig, 0.0, None))))
    diff = mu_a - mu_b
    value = float(diff @ diff) + float(np.trace(cov_a)) + float(np.trace(cov_b)) - 2.0 * trace_root
    return max(0.0, value)


def _f_beta(alpha: np.ndarray, beta: np.ndarray, b: float) -> np.ndarray:
    num = (1.0 + b * b) * alpha * beta
    den = b * b * alpha + beta
    out = np.zeros_like(alpha)
    live = den > 0
    out[live] = num[live] / den[live]
    return out


def prd_curve(p: np.ndarray, q: np.ndarray, angles: int = PRD_ANGLES) -> Tuple[np.ndarray, np.ndarray]:
    """(alpha, beta) points for histograms p (real) and q (fake)."""
    theta = np.linspace(_ANGLE_MARGIN, math.pi / 2 - _ANGLE_MARGIN, angles)
    slopes = np.tan(theta)
    alpha = np.minimum(slopes[:, None] * p[None, :], q[None, :]).sum(axis=1)
    beta = alpha / slopes
    return np.clip(alpha, 0.0, 1.0), np.clip(beta, 0.0, 1.0)


def _prd(real: np.ndarray, fake: np.ndarray, k: int, angles: int, seed):
    _same_dim(real, fake)
    if real.shape[0] == 0 or fake.shape[0] == 0:
        raise ContractViolation("PRD needs non-empty real and fake sets")
    union = np.vstack([real, fake])
    if np.all(union == union[0]):
        log.debug("PRD on identical points: precision = recall = 1")
        return 1.0, 1.0, None, None

    # cluster the union in a canonical row order so that swapping the
    # two sets yields the same partition
    order = np.lexsort(union.T[::-1])
    clusters = kmeans(union[order], k, seed)
    labels = np.empty(union.shape[0], dtype=np.int64)
    labels[order] = clusters.assignments

    n = real.shape[0]
    p = np.bincount(labels[:n], minlength=k) / n
    q = np.bincount(labels[n:], minlength=k) / fake.shape[0]
    alpha, beta = prd_curve(p, q, angles)
    recall = float(np.max(_f_beta(alpha, beta, 8.0)))
    precision = float(np.max(_f_beta(alpha, beta, 1.0 / 8.0)))
    return precision, recall, alpha, beta


def prd_precision_recall(
    real: Union[FeatureMatrix, np.ndarray],
    fake: Union[FeatureMatrix, np.ndarray],
    k: int = PRD_CLUSTERS,
    angles: int = PRD_ANGLES,
    seed: Union[int, SeededRng] = 0,
) -> Tuple[float, float]:
    """(precision, recall) as the maxima of F_1/8 and F_8 over the PRD curve."""
    precision, recall, _, _ = _prd(_as_data(real), _as_data(fake), k, angles, seed)
    return precision, recall


class NdbBin(pydantic.BaseModel):
    model_config = standard_model_config

    real_proportion: float
    fake_proportion: float
    z: Real
    significant: bool


def ndb_threshold(significance: float = NDB_SIGNIFICANCE) -> float:
    """Two-sided critical value of the standard normal."""
    if not 0.0 < significance < 1.0:
        raise ContractViolation("significance must lie in (0, 1), got {0!r}".format(significance))
    return float(stats.norm.ppf(1.0 - significance / 2.0))


def ndb_bins(real_counts: np.ndarray, fake_counts: np.ndarray, significance: float = NDB_SIGNIFICANCE) -> List[NdbBin]:
    """Pooled two-proportion z-test per bin."""
    n, m = int(real_counts.sum()), int(fake_counts.sum())
    threshold = ndb_threshold(significance)
    p = real_counts / n
    p_fake = fake_counts / m
    pooled = (real_counts + fake_counts) / (n + m)
    bins = []
    for j in range(real_counts.shape[0]):
        if pooled[j] <= 0.0 or pooled[j] >= 1.0:
            z = 0.0 if p[j] == p_fake[j] else math.inf
        else:
            se = math.sqrt(pooled[j] * (1.0 - pooled[j]) * (1.0 / n + 1.0 / m))
            z = float((p[j] - p_fake[j]) / se)
        bins.append(
            NdbBin(
                real_proportion=float(p[j]),
                fake_proportion=float(p_fake[j]),
                z=z,
                significant=bool(abs(z) > threshold),
            )
        )
    return bins


def ndb(
    real: Union[FeatureMatrix, np.ndarray],
    fake: Union[FeatureMatrix, np.ndarray],
    k: int = NDB_CLUSTERS,
    significance: float = NDB_SIGNIFICANCE,
    seed: Union[int, SeededRng] = 0,
) -> Tuple[int, List[NdbBin]]:
    """Number of statistically different bins, and the per-bin detail."""
    R, F = _as_data(real), _as_data(fake)
    _same_dim(R, F)
    if F.shape[0] == 0:
        raise ContractViolation("NDB needs a non-empty fake set")
    clusters = kmeans(R, k, seed)
    fake_counts = np.bincount(clusters.assign(F), minlength=k)
    bins = ndb_bins(clusters.counts, fake_counts, significance)
    return sum(b.significant for b in bins), bins


class MetricsConfig(pydantic.BaseModel):
    model_config = standard_model_config

    metrics: Tuple[MetricName, ...] = (MetricName.FID, MetricName.PRD, MetricName.NDB)
    prd_clusters: int = pydantic.Field(PRD_CLUSTERS, ge=1)
    prd_angles: int = pydantic.Field(PRD_ANGLES, ge=3)
    ndb_clusters: int = pydantic.Field(NDB_CLUSTERS, ge=1)
    ndb_significance: float = pydantic.Field(NDB_SIGNIFICANCE, gt=0.0, lt=1.0)


class MetricsReport(ArrayRecord):
    kind: Literal["metrics"] = "metrics"
    fid: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    ndb_count: Optional[int] = None
    ndb_fraction: Optional[float] = None
    ndb_clusters: Optional[int] = None
    per_bin: List[NdbBin] = []
    prd_alpha: Optional[FloatArray] = None
    prd_beta: Optional[FloatArray] = None

    @pydantic.model_validator(mode="after")
    def check_ranges(self) -> "MetricsReport":
        if self.fid is not None and self.fid < 0:
            raise ContractViolation("FID must be non-negative")
        for name in ("precision", "recall"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ContractViolation("{0} must lie in [0, 1], got {1!r}".format(name, v))
        if self.ndb_count is not None:
            if self.ndb_clusters is None or not 0 <= self.ndb_count <= self.ndb_clusters:
                raise ContractViolation("NDB count out of range")
            if self.ndb_fraction != self.ndb_count / self.ndb_clusters:
                raise ContractViolation("NDB fraction does not match the count")
        return self

    @property
    def prd_curve(self) -> Optional[np.ndarray]:
        if self.prd_alpha is None:
            return None
        return np.column_stack([self.prd_alpha, self.prd_beta])


def evaluate(
    real: Union[FeatureMatrix, np.ndarray],
    fake: Union[FeatureMatrix, np.ndarray],
    cfg: Optional[MetricsConfig] = None,
    seed: Union[int, SeededRng] = 0,
    metrics: Optional[Sequence[MetricName]] = None,
) -> MetricsReport:
    """Computes the selected metrics of `fake` against `real`."""
    cfg = cfg or MetricsConfig()
    selected = set(MetricName(m) for m in (metrics or cfg.metrics))
    rng = ensure_rng(seed)
    R, F = _as_data(real), _as_data(fake)
    _same_dim(R, F)

    fields = {}
    if MetricName.FID in selected:
        fields["fid"] = fid(R, F)
    if MetricName.PRD in selected:
        precision, recall, alpha, beta = _prd(R, F, cfg.prd_clusters, cfg.prd_angles, rng.split(1))
        fields.update(precision=precision, recall=recall, prd_alpha=alpha, prd_beta=beta)
    if MetricName.NDB in selected:
        count, bins = ndb(R, F, cfg.ndb_clusters, cfg.ndb_significance, rng.split(2))
        fields.update(
            ndb_count=count,
            ndb_fraction=count / cfg.ndb_clusters,
            ndb_clusters=cfg.ndb_clusters,
            per_bin=bins,
        )
    return MetricsReport(**fields)
