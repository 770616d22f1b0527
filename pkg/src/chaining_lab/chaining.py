"""Chaining bounds on finite point clouds in ``(R^n, ||.||_n)``.

Dudley's bound from greedy dyadic covers, the gamma_2 functional (greedy
admissible partitions, exact enumeration for tiny clouds), Monte Carlo
Gaussian suprema, finite surrogates of l1-hulls and the study of the extra
``log n`` factor Dudley's bound carries on them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import stats

from .emp_process import ProcessEstimate, _estimate, hoeffding_level
from .samples import column_norms, gaussian_design

MAX_S = 24


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points as rows of ``points`` (m, n); ``coef`` (m, p) records hull coordinates when known."""

    points: np.ndarray
    coef: np.ndarray | None = None
    gram_factor: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, ndmin=2)
        if pts.shape[0] < 1:
            raise ValueError("a cloud needs at least one point")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @cached_property
    def gram(self) -> np.ndarray:
        """``<v_a, v_b>_n``; computed through the hull coordinates when available."""
        if self.coef is not None and self.gram_factor is not None:
            return self.coef @ self.gram_factor @ self.coef.T
        return self.points @ self.points.T / self.n

    @cached_property
    def norms(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.gram), 0.0))

    @property
    def radius(self) -> float:
        """``R_n = max_v ||v||_n`` (the cloud radius)."""
        return float(self.norms.max())

    @cached_property
    def distances(self) -> np.ndarray:
        g = self.gram
        d = np.diag(g)
        d2 = np.maximum(d[:, None] + d[None, :] - 2.0 * g, 0.0)
        out = np.sqrt(d2)
        np.fill_diagonal(out, 0.0)
        out.flags.writeable = False
        return out

    @property
    def diameter(self) -> float:
        return float(self.distances.max())

    def scaled(self, c: float) -> "PointCloud":
        coef = None if self.coef is None else c * self.coef
        return PointCloud(c * self.points, coef, self.gram_factor)


# -- covers -----------------------------------------------------------------------------


def farthest_point_order(cloud: PointCloud) -> tuple[np.ndarray, np.ndarray]:
    """Farthest-point traversal from point 0.

    Returns the visiting order and ``radii[k]``, the covering radius achieved by
    the first ``k + 1`` centers. Ties go to the lowest index.
    """
    D = cloud.distances
    m = cloud.size
    order = np.empty(m, dtype=int)
    radii = np.empty(m)
    order[0] = 0
    nearest = D[0].copy()
    for k in range(1, m + 1):
        j = int(np.argmax(nearest))
        radii[k - 1] = nearest[j]
        if k == m:
            break
        order[k] = j
        np.minimum(nearest, D[j], out=nearest)
    return order, radii


def _cover_size(radii: np.ndarray, radius: float) -> int:
    return int(np.argmax(radii <= radius)) + 1


def greedy_cover(cloud: PointCloud, radius: float) -> np.ndarray:
    """Center indices from farthest-point greedy until every point is within ``radius``."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    order, radii = farthest_point_order(cloud)
    return order[: _cover_size(radii, radius)]


def minimal_cover_brute(cloud: PointCloud, radius: float) -> np.ndarray:
    """Smallest center set (drawn from the cloud) covering at ``radius``; exhaustive, at most 12 points."""
    if cloud.size > 12:
        raise ValueError("brute-force covers are limited to 12 points")
    within = cloud.distances <= radius
    for k in range(1, cloud.size + 1):
        for combo in itertools.combinations(range(cloud.size), k):
            if within[list(combo)].any(axis=0).all():
                return np.array(combo)
    return np.arange(cloud.size)


@dataclass(frozen=True, eq=False)
class CoverTree:
    """Nested greedy covers at radii ``2^{-s} R_n``, ``s = 0..S``."""

    levels: tuple
    radius: float

    @property
    def sizes(self) -> list[int]:
        return [len(c) for c in self.levels]

    def level_radius(self, s: int) -> float:
        return 2.0**-s * self.radius

    def check(self, cloud: PointCloud) -> bool:
        D = cloud.distances
        tol = 1e-12 * max(self.radius, 1e-300)
        for s, centers in enumerate(self.levels):
            if D[:, centers].min(axis=1).max() > self.level_radius(s) + tol:
                return False
        return all(a <= b for a, b in zip(self.sizes, self.sizes[1:]))


def cover_tree(cloud: PointCloud, S: int) -> CoverTree:
    order, radii = farthest_point_order(cloud)
    R = cloud.radius
    levels = tuple(order[: _cover_size(radii, 2.0**-s * R)] for s in range(S + 1))
    return CoverTree(levels, R)


# -- Dudley --------------------------------------------------------------------------------


def dudley_sum(R: float, n: int, sizes) -> float:
    """``sum_s 2^{-(s-1)} R sqrt(2 log(2 N_s)/n) + 2^{-S} R`` for ``N_0..N_S``."""
    sizes = np.asarray(sizes, dtype=float)
    s = np.arange(sizes.size)
    S = sizes.size - 1
    return float(np.sum(2.0 ** -(s - 1) * R * np.sqrt(2.0 * np.log(2.0 * sizes) / n)) + 2.0**-S * R)


def dudley_bound(cloud: PointCloud, S: int) -> float:
    if S < 0:
        raise ValueError("S must be nonnegative")
    R = cloud.radius
    if R == 0:
        return 0.0
    return dudley_sum(R, cloud.n, cover_tree(cloud, S).sizes)


def dudley_bound_opt(cloud: PointCloud, max_s: int = MAX_S) -> tuple[int, float]:
    """Best truncation level ``S`` in ``0..max_s`` and the bound there."""
    R = cloud.radius
    if R == 0:
        return 0, 0.0
    sizes = cover_tree(cloud, max_s).sizes
    vals = [dudley_sum(R, cloud.n, sizes[: S + 1]) for S in range(max_s + 1)]
    S = int(np.argmin(vals))
    return S, float(vals[S])


def dudley_entropy_bound(K_n: float, p: int, n: int, max_s: int = MAX_S) -> tuple[int, float]:
    """``min_S 2(S+1) K_n sqrt(2 log(4p)/n) + 2^{-S} K_n``: Dudley fed with the hull entropy bound."""
    a = np.sqrt(2.0 * np.log(4.0 * p) / n)
    vals = [2.0 * (S + 1) * K_n * a + 2.0**-S * K_n for S in range(max_s + 1)]
    S = int(np.argmin(vals))
    return S, float(vals[S])


# -- gamma_2 ------------------------------------------------------------------------------


def _budget(s: int) -> float:
    return 1.0 if s == 0 else 2.0 ** (2.0**s) if s < 7 else np.inf


@dataclass(frozen=True, eq=False)
class AdmissiblePartitionSequence:
    """Cell labels per level; level ``s`` has at most ``2^{2^s}`` cells (one at ``s = 0``)."""

    labels: tuple

    @property
    def sizes(self) -> list[int]:
        return [int(np.unique(lab).size) for lab in self.labels]

    def diameters(self, cloud: PointCloud) -> list[np.ndarray]:
        """Per level, the diameter of the cell containing each point."""
        D = cloud.distances
        out = []
        for lab in self.labels:
            diam = np.zeros(cloud.size)
            for c in np.unique(lab):
                idx = np.flatnonzero(lab == c)
                diam[idx] = D[np.ix_(idx, idx)].max()
            out.append(diam)
        return out

    def value(self, cloud: PointCloud) -> float:
        diams = self.diameters(cloud)
        total = sum(2.0 ** (s / 2.0) * d for s, d in enumerate(diams))
        return float(np.max(total))

    def is_admissible(self) -> bool:
        sizes = self.sizes
        if not sizes or sizes[0] != 1:
            return False
        if any(k > _budget(s) for s, k in enumerate(sizes)):
            return False
        for a, b in zip(self.labels, self.labels[1:]):
            # every finer cell sits inside a single coarser cell
            for c in np.unique(b):
                if np.unique(a[b == c]).size != 1:
                    return False
        return True


def _nested_cells(parent: np.ndarray, assign: np.ndarray) -> np.ndarray:
    pairs = parent.astype(np.int64) * (int(assign.max()) + 1) + assign
    _, lab = np.unique(pairs, return_inverse=True)
    return lab


def gamma2_greedy(cloud: PointCloud) -> tuple[float, AdmissiblePartitionSequence]:
    """Upper bound on ``gamma_2`` from farthest-point partitions.

    At level ``s`` the cloud is split by nearest center among the first ``k``
    farthest-point centers, intersected with the level ``s - 1`` cells; ``k`` is
    the largest value keeping the cell count within budget.
    """
    m = cloud.size
    D = cloud.distances
    order, _ = farthest_point_order(cloud)
    labels = [np.zeros(m, dtype=int)]
    s = 0
    while np.unique(labels[-1]).size < m:
        s += 1
        budget = _budget(s)
        parent = labels[-1]
        if budget >= m:
            labels.append(np.arange(m))
            break
        best = parent
        for k in range(min(int(budget), m), 0, -1):
            assign = np.argmin(D[:, order[:k]], axis=1)
            lab = _nested_cells(parent, assign)
            if lab.max() + 1 <= budget:
                best = lab
                break
        labels.append(best)
    seq = AdmissiblePartitionSequence(tuple(labels))
    return seq.value(cloud), seq


def _set_partitions(items):
    if len(items) == 1:
        yield [items]
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]


def gamma2_exhaustive(cloud: PointCloud) -> float:
    """Exact ``gamma_2`` over all admissible sequences; clouds of at most 5 points."""
    m = cloud.size
    if m > 5:
        raise ValueError("exhaustive gamma_2 is limited to 5 points")
    D = cloud.distances

    def diam(cell):
        return D[np.ix_(cell, cell)].max()

    def best(cells, s, acc):
        # acc[v]: accumulated sum for point v through level s - 1; cells: level s - 1 partition
        if all(len(c) == 1 for c in cells):
            return float(acc.max())
        budget = _budget(s)
        if budget >= m:
            return float(acc.max())
        out = np.inf
        for choice in itertools.product(*[list(_set_partitions(c)) for c in cells]):
            refined = [cell for part in choice for cell in part]
            if len(refined) > budget:
                continue
            nxt = acc.copy()
            for cell in refined:
                nxt[cell] += 2.0 ** (s / 2.0) * diam(cell)
            out = min(out, best(refined, s + 1, nxt))
        return out

    everything = list(range(m))
    acc = np.full(m, diam(everything))
    return best([everything], 1, acc)


# -- Gaussian suprema and l1-hull surrogates ----------------------------------------------


def gaussian_sup_mc(cloud: PointCloud, reps: int, seed: int = 0, chunk: int = 256) -> ProcessEstimate:
    """``E sup_v X_v`` with ``X_v = sum_i v_i xi_i / n``."""
    rng = np.random.default_rng(seed)
    sups = np.empty(reps)
    for start in range(0, reps, chunk):
        xi = rng.standard_normal((min(chunk, reps - start), cloud.n))
        sups[start : start + xi.shape[0]] = (xi @ cloud.points.T / cloud.n).max(axis=1)
    return _estimate(sups, seed, "gaussian", "finite-cloud")


def gaussian_sup_hull_mc(psi, reps: int, seed: int = 0, chunk: int = 256) -> ProcessEstimate:
    """``E sup_{||theta||_1 <= 1} X_{psi theta} = E max_j |xi' psi_j| / n`` (dual norm)."""
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    n = psi.shape[0]
    rng = np.random.default_rng(seed)
    sups = np.empty(reps)
    for start in range(0, reps, chunk):
        xi = rng.standard_normal((min(chunk, reps - start), n))
        sups[start : start + xi.shape[0]] = np.abs(xi @ psi / n).max(axis=1)
    return _estimate(sups, seed, "gaussian", "dual-norm-exact")


def l1_hull_cloud(psi, extra: int = 0, seed: int = 0, max_terms: int = 8) -> PointCloud:
    """Finite surrogate of ``{psi theta : ||theta||_1 <= 1}``.

    The origin comes first (so farthest-point covers are rooted at the hull's
    center and a single point covers at radius ``R_n``), then the ``2p`` signed
    vertices ``+-psi_j``, then ``extra`` sparse points ``sum_j theta_j psi_j``
    with ``||theta||_1 = 1`` on 2..``max_terms`` random coordinates
    (Maurey-type averages).
    """
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    n, p = psi.shape
    rng = np.random.default_rng(seed)
    coef = np.vstack([np.zeros((1, p)), np.eye(p), -np.eye(p), np.zeros((extra, p))])
    hi = max(2, min(p, max_terms))
    for row in range(2 * p + 1, 2 * p + 1 + extra):
        k = int(rng.integers(1 if p == 1 else 2, hi + 1)) if p > 1 else 1
        idx = rng.choice(p, size=k, replace=False)
        w = rng.dirichlet(np.ones(k)) * rng.choice([-1.0, 1.0], size=k)
        if p == 1:
            w = w * rng.uniform()
        coef[row, idx] = w
    return PointCloud(coef @ psi.T, coef, psi.T @ psi / n)


def hull_membership_error(cloud: PointCloud, psi) -> float:
    """Largest reconstruction error of ``coef @ psi'`` against the stored points (inf if ``||coef||_1 > 1``)."""
    if cloud.coef is None:
        return float("inf")
    if np.any(np.abs(cloud.coef).sum(axis=1) > 1.0 + 1e-12):
        return float("inf")
    return float(np.abs(cloud.coef @ np.asarray(psi).T - cloud.points).max())


def dual_norm_gamma2_bound(psi) -> float:
    """``sqrt(2 log(2p)/n) K_n``."""
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    n, p = psi.shape
    return hoeffding_level(p, n) * float(column_norms(psi).max(initial=0.0))


@dataclass(frozen=True)
class EntropyRow:
    p: int
    s: int
    cover_size: int
    log_2n: float
    bound: float
    ratio: float
    flagged: bool


def entropy_bound_check(p: int, s_range, clouds) -> tuple[list[EntropyRow], float]:
    """``log(2 N_s)`` from greedy covers at ``2^{-s} R_n`` against ``2^{2s} log(4p)``.

    A ratio above 4 (the slack a greedy cover can have, because it is at most a
    minimal cover at half the radius) is flagged.
    """
    rows = []
    for cloud in clouds:
        order, radii = farthest_point_order(cloud)
        R = cloud.radius
        for s in s_range:
            N = _cover_size(radii, 2.0**-s * R) if R > 0 else 1
            lhs = float(np.log(2.0 * N))
            bound = float(2.0 ** (2 * s) * np.log(4.0 * p))
            rows.append(EntropyRow(p, s, N, lhs, bound, lhs / bound, lhs / bound > 4.0))
    return rows, max(r.ratio for r in rows)


@dataclass(frozen=True)
class LogFactorRow:
    n: int
    p: int
    S: int
    dudley: float
    dualnorm: float
    mc_sup: float
    mc_se: float
    ratio: float
    ratio_mc: float
    dudley_entropy: float


@dataclass(frozen=True)
class LogFactorFit:
    a: float
    b: float
    r2: float


def logfactor_study(p: int = 64, n_grid=tuple(2**k for k in range(6, 15)), reps: int = 500, seed: int = 0,
                    extra: int = 384) -> tuple[list[LogFactorRow], LogFactorFit]:
    """Dudley vs. the dual-norm bound on l1-hull surrogates with ``||psi_j||_n = 1``.

    Fits ``dudley / dualnorm = a + b log n`` over the grid.
    """
    rows = []
    seeds = np.random.SeedSequence(seed).spawn(len(n_grid))
    for n, ss in zip(n_grid, seeds):
        rng = np.random.default_rng(ss)
        psi = gaussian_design(int(n), p, rng)
        cloud = l1_hull_cloud(psi, extra, int(rng.integers(2**32)))
        S, dud = dudley_bound_opt(cloud)
        dual = dual_norm_gamma2_bound(psi)
        mc = gaussian_sup_hull_mc(psi, reps, int(rng.integers(2**32)))
        _, ent = dudley_entropy_bound(1.0, p, int(n))
        rows.append(LogFactorRow(int(n), p, S, dud, dual, mc.mean, mc.se, dud / dual, dual / mc.mean, ent))
    x = np.log([r.n for r in rows])
    y = np.array([r.ratio for r in rows])
    if np.unique(x).size < 2:
        nan = float("nan")
        return rows, LogFactorFit(nan, nan, nan)
    fit = stats.linregress(x, y)
    return rows, LogFactorFit(float(fit.intercept), float(fit.slope), float(fit.rvalue**2))
