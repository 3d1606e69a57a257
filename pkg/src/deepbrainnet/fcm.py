"""Fuzzy c-means clustering with a linearly scheduled fuzzifier.

The fuzzifier moves from m_initial toward m_final over the iteration budget
(m(t) = m_i + t * (m_f - m_i) / T), so the softness of the memberships can be
annealed; with m_i == m_f this is classical fuzzy c-means. Each iteration
computes memberships from the previous centroids, updates the centroids as
membership-weighted means, and stops once the summed Euclidean centroid
displacement falls to the tolerance.

Memberships are inverse-power weights over squared Euclidean distances,
u_ij = (d_ij^2)^b / sum_k (d_ik^2)^b with b = -1/(m-1), which is algebraically
the classical fuzzy-c-means form 1 / sum_k (d_ij/d_ik)^(2/(m-1)). Distances
are divided by the row minimum before exponentiation, which leaves the ratios
unchanged but avoids overflow. A point coinciding with one or more centroids
is assigned crisp membership split equally among the coincident centroids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import GrayImage
from .rng import Prng

DEFAULT_TAU = 0.6
_INIT_RETRIES = 32


@dataclass(frozen=True)
class FcmConfig:
    c: int
    m_initial: float = 2.0
    m_final: float = 2.0
    epsilon: float = 1e-6
    max_iter: int = 100
    seed: int = 0
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.c < 1:
            raise ValueError(f"cluster count must be >= 1, got {self.c}")
        if self.m_initial <= 1 or self.m_final <= 1:
            raise ValueError("fuzzifiers must be > 1 so b = -1/(m-1) stays finite")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")


@dataclass
class FcmResult:
    memberships: np.ndarray  # (n, c), rows sum to 1
    centroids: np.ndarray  # (c, d)
    iterations_run: int
    final_shift: float
    converged: bool
    fuzzifier_trace: list[float] = field(default_factory=list)


def _as_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"points must be a 2-D n x d matrix, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("points must be finite")
    return x


def _distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def compute_memberships(points, centroids, m: float) -> np.ndarray:
    """Membership matrix for fixed centroids; every row sums to 1."""
    if m <= 1:
        raise ValueError("fuzzifier must be > 1")
    x = _as_points(points)
    v = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    dist = _distances(x, v)
    n, c = dist.shape
    b = -1.0 / (m - 1.0)

    u = np.empty((n, c))
    zero_mask = dist == 0.0
    has_zero = zero_mask.any(axis=1)
    if has_zero.any():
        rows = np.nonzero(has_zero)[0]
        u[rows] = 0.0
        counts = zero_mask[rows].sum(axis=1)
        u[rows] = zero_mask[rows] / counts[:, None]
    regular = ~has_zero
    if regular.any():
        d = dist[regular]
        # squared-distance powers: (d^2)^b == d^(2b); normalizing by the row
        # minimum keeps every base >= 1 so negative exponents cannot overflow
        weights = (d / d.min(axis=1, keepdims=True)) ** (2.0 * b)
        u[regular] = weights / weights.sum(axis=1, keepdims=True)
    u /= u.sum(axis=1, keepdims=True)  # absorb rounding
    return u


def update_centroids(points, memberships, m: float) -> np.ndarray:
    """Centroids as u^m-weighted means of the points."""
    x = _as_points(points)
    u = np.asarray(memberships, dtype=np.float64)
    um = u**m
    mass = um.sum(axis=0)
    for j, w in enumerate(mass):
        if w == 0.0:
            raise ValueError(f"cluster {j} has zero total membership mass")
    return (um.T @ x) / mass[:, None]


def pick_initial_centroids(points, c: int, seed: int) -> np.ndarray:
    """c pairwise-distinct points sampled without replacement, seeded.

    Index sets whose points collide (duplicate rows in the data) are redrawn
    up to a fixed retry budget before giving up.
    """
    x = _as_points(points)
    n = x.shape[0]
    if n < c:
        raise ValueError(f"need at least c={c} points, got {n}")
    rng = Prng(seed)
    for _ in range(_INIT_RETRIES):
        idx = rng.sample_indices(n, c)
        candidate = x[idx]
        if np.unique(candidate, axis=0).shape[0] == c:
            return candidate.copy()
    raise ValueError(
        f"could not draw {c} distinct initial centroids in {_INIT_RETRIES} attempts; "
        "data may have fewer than c distinct points"
    )


def fcm_cluster(
    points,
    config: FcmConfig,
    initial_centroids=None,
    on_iteration=None,
) -> FcmResult:
    """Run the scheduled-fuzzifier c-means loop.

    Per iteration t = 1..max_iter: set m(t), compute memberships against the
    previous centroids, update centroids, then stop if the summed Euclidean
    centroid displacement is <= epsilon. `on_iteration(t, m, memberships,
    centroids)` is invoked after each update, for tracing.
    """
    x = _as_points(points)
    if x.shape[0] < config.c:
        raise ValueError(f"need at least c={config.c} points, got {x.shape[0]}")
    if initial_centroids is None:
        centroids = pick_initial_centroids(x, config.c, config.seed)
    else:
        centroids = np.atleast_2d(np.asarray(initial_centroids, dtype=np.float64)).copy()
        if centroids.shape != (config.c, x.shape[1]):
            raise ValueError(
                f"initial centroids must be {config.c}x{x.shape[1]}, got {centroids.shape}"
            )

    trace: list[float] = []
    memberships = None
    shift = np.inf
    converged = False
    iterations = 0
    t_max = config.max_iter
    for t in range(1, t_max + 1):
        m = config.m_initial + t * (config.m_final - config.m_initial) / t_max
        trace.append(m)
        memberships = compute_memberships(x, centroids, m)
        new_centroids = update_centroids(x, memberships, m)
        shift = float(np.linalg.norm(new_centroids - centroids, axis=1).sum())
        centroids = new_centroids
        iterations = t
        if on_iteration is not None:
            on_iteration(t, m, memberships, centroids)
        if shift <= config.epsilon:
            converged = True
            break
    return FcmResult(memberships, centroids, iterations, shift, converged, trace)


def select_features(result: FcmResult, tau: float = DEFAULT_TAU) -> list[int]:
    """Indices whose strongest membership reaches tau, ascending.

    An empty selection is legal; the caller decides what to do with it.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    strongest = result.memberships.max(axis=1)
    return [int(i) for i in np.nonzero(strongest >= tau)[0]]


def fcm_segment(image: GrayImage, config: FcmConfig) -> tuple[GrayImage, FcmResult]:
    """Cluster pixel intensities and return the per-pixel label map.

    Labels are membership argmax with ties broken toward the lower cluster
    index. Also returns the clustering result for export.
    """
    if config.c > 256:
        raise ValueError("label maps are 8-bit; cluster count must be <= 256")
    intensities = image.data.ravel().astype(np.float64)[:, None]
    result = fcm_cluster(intensities, config)
    labels = np.argmax(result.memberships, axis=1).astype(np.uint8)
    label_map = GrayImage(image.width, image.height, labels.reshape(image.height, image.width))
    return label_map, result


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------


def save_matrix_csv(matrix: np.ndarray, path) -> None:
    """One row per line, comma separated, 17 significant digits."""
    arr = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in arr:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    return np.array(rows, dtype=np.float64)


def format_run_summary(result: FcmResult) -> str:
    """`iterations,final_shift,converged` line for run logs."""
    flag = "true" if result.converged else "false"
    return f"{result.iterations_run},{result.final_shift:.17g},{flag}"
