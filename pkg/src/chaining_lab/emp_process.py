"""Symmetrized empirical processes over l1-balls and the tail bounds built on them.

Two process types are supported. :class:`LinearProcess` covers centered
losses that are exactly linear in ``theta`` (and Gaussian comparison
processes), where the supremum over an l1-ball is the dual norm.
:class:`LossProcess` wraps an arbitrary loss model; its supremum is searched
over the signed vertices plus projected-gradient ascent restarts, and
reported as a lower estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._seeding import replicate, spawn_rngs
from .losses import LossModel, _simplex_project
from .samples import SampleSet, column_norms

MULTIPLIERS = ("rademacher", "gaussian")
REGIMES = ("linear", "glm", "extended-glm", "nonlinear")


@dataclass(frozen=True)
class ProcessEstimate:
    mean: float
    se: float
    reps: int
    seed: int
    kind: str = "rademacher"
    search: str = "dual-norm-exact"
    lower_estimate: bool = False

    def __post_init__(self):
        if self.reps < 2:
            raise ValueError("an estimate needs at least two replications")


def _estimate(values, seed, kind, search, lower=False) -> ProcessEstimate:
    values = np.asarray(values, dtype=float)
    se = float(values.std(ddof=1) / np.sqrt(values.size))
    return ProcessEstimate(float(values.mean()), se, int(values.size), seed, kind, search, lower)


@dataclass(frozen=True, eq=False)
class BallSpec:
    """``Theta_M(center)``: the l1-ball of radius ``radius`` intersected with the convex hull of ``Theta``.

    ``free`` optionally restricts the ball to a subset of coordinates; the
    others stay at the center.
    """

    center: np.ndarray
    radius: float
    restriction: str = "hull"
    free: np.ndarray | None = None

    def __post_init__(self):
        c = np.array(self.center, dtype=float, ndmin=1)
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        if self.restriction not in ("hull", "theta"):
            raise ValueError(f"unknown restriction {self.restriction!r}")
        object.__setattr__(self, "center", c)
        if self.free is not None:
            free = np.asarray(self.free, dtype=bool)
            if free.shape != c.shape:
                raise ValueError("free mask must match the center")
            object.__setattr__(self, "free", free)

    def scaled(self, radius: float) -> "BallSpec":
        return BallSpec(self.center, radius, self.restriction, self.free)


@dataclass(frozen=True)
class TailBound:
    kind: str
    inputs: dict = field(default_factory=dict)
    value: float = 0.0


# -- processes -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearProcess:
    """Increments ``rho_c(theta) - rho_c(theta') = sum_j (theta_j - theta'_j) psi_j(X_i, i)``.

    ``psi`` may be signed. With ``block_ids`` the multipliers are drawn
    independently per block (the Gaussian comparison process of the
    multivariate contraction theorem).
    """

    psi: np.ndarray
    block_ids: np.ndarray | None = None

    def __post_init__(self):
        psi = np.array(self.psi, dtype=float, ndmin=2)
        object.__setattr__(self, "psi", psi)
        if self.block_ids is not None:
            b = np.asarray(self.block_ids, dtype=int)
            if b.shape != (psi.shape[1],):
                raise ValueError("one block id per column")
            object.__setattr__(self, "block_ids", b)

    @property
    def n(self) -> int:
        return self.psi.shape[0]

    @property
    def blocks(self) -> int:
        return 1 if self.block_ids is None else int(self.block_ids.max()) + 1

    def coefficients(self, draws) -> np.ndarray:
        """``v = multipliers' psi / n`` for draws of shape (reps, n) or (reps, n, r)."""
        draws = np.asarray(draws, dtype=float)
        if draws.ndim == 3:
            return np.einsum("bij,ij->bj", draws[:, :, self.block_ids], self.psi) / self.n
        return draws @ self.psi / self.n

    def radius_n(self, M: float) -> float:
        """``R_n = sup ||rho_c(theta) - rho_c(center)||_n`` over the ball (attained at a vertex)."""
        return M * float(column_norms(self.psi).max(initial=0.0))


@dataclass(frozen=True, eq=False)
class LossProcess:
    """The symmetrized process of an uncentered loss model on a fixed sample."""

    model: LossModel
    sample: SampleSet

    def __post_init__(self):
        if self.model.centering != "none":
            raise ValueError("loss-process search supports centering 'none'; use LinearProcess for "
                             "linear centered losses")
        if self.sample.p != self.model.p:
            raise ValueError("sample and model dimensions differ")

    @property
    def n(self) -> int:
        return self.sample.n

    def increments(self, thetas, center) -> np.ndarray:
        m, s = self.model, self.sample
        return m.values(thetas, s.y, s.z) - m.values(center, s.y, s.z)


def make_process(model: LossModel, sample: SampleSet, generator=None):
    """Linear process for the expectation-centered quadratic loss, loss process otherwise."""
    if model.kind == "quadratic" and model.centering == "expectation":
        if generator is None or not hasattr(generator, "mean"):
            raise ValueError("expectation-centered quadratic loss needs a generator with a mean")
        return LinearProcess(-2.0 * (sample.y - generator.mean())[:, None] * sample.z)
    return LossProcess(model, sample)


# -- suprema ---------------------------------------------------------------------------


def dual_norm_sup(v, M: float) -> tuple[float, np.ndarray]:
    """``sup_{||d||_1 <= M} |d'v| = M ||v||_inf`` and a maximizing signed vertex."""
    if M < 0:
        raise ValueError("radius must be nonnegative")
    v = np.atleast_1d(np.asarray(v, dtype=float))
    j = int(np.argmax(np.abs(v)))
    vertex = np.zeros_like(v)
    vertex[j] = M * (1.0 if v[j] >= 0 else -1.0)
    return M * float(np.abs(v[j])), vertex


def project_l1_ball(v, M: float) -> np.ndarray:
    """Euclidean projection of each row onto ``{||x||_1 <= M}``."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    a = np.abs(v)
    out = v.copy()
    outside = a.sum(axis=1) > M
    if np.any(outside):
        w = M * _simplex_project(a[outside] / M)
        out[outside] = np.sign(v[outside]) * w
    return out


def uniform_l1_ball(rng: np.random.Generator, size: int, dim: int, M: float) -> np.ndarray:
    """Uniform points in the l1-ball of radius ``M`` in ``R^dim``."""
    u = rng.dirichlet(np.ones(dim + 1), size=size)[:, :dim]
    return M * u * rng.choice([-1.0, 1.0], size=(size, dim))


@dataclass(frozen=True)
class SearchResult:
    value: float
    theta: np.ndarray
    lower_estimate: bool


class _BallGeometry:
    def __init__(self, model: LossModel, ball: BallSpec):
        if ball.center.shape != (model.dim,):
            raise ValueError("ball center does not match the model dimension")
        if not model.contains(ball.center):
            raise ValueError("ball center lies outside the parameter box")
        self.model = model
        self.ball = ball
        self.free = np.ones(model.dim, dtype=bool) if ball.free is None else ball.free
        if model.kind == "extended-glm-mixture" and self.free[: model.r].any():
            raise ValueError("mixing weights cannot be free coordinates of a ball search")
        self.idx = np.flatnonzero(self.free)
        self.lo = model.lower[self.idx]
        self.hi = model.upper[self.idx]
        self.c = ball.center[self.idx]

    def full(self, d_free) -> np.ndarray:
        t = np.tile(self.ball.center, (d_free.shape[0], 1))
        t[:, self.idx] = self.c + d_free
        return t

    def project(self, d_free) -> np.ndarray:
        d = project_l1_ball(d_free, self.ball.radius)
        # clipping moves each coordinate toward the center, so the ball constraint survives
        return np.clip(self.c + d, self.lo, self.hi) - self.c


def _search_loss_process(proc: LossProcess, ball: BallSpec, draw, rng, restarts: int = 64,
                         steps: int = 60) -> SearchResult:
    geo = _BallGeometry(proc.model, ball)
    k = geo.idx.size
    M = ball.radius
    w = np.asarray(draw, dtype=float) / proc.n
    base = proc.model.values(ball.center, proc.sample.y, proc.sample.z)[0] @ w

    def objective(d_free):
        th = geo.full(d_free)
        return proc.model.values(th, proc.sample.y, proc.sample.z) @ w - base

    vert = np.vstack([M * np.eye(k), -M * np.eye(k)])
    vert = geo.project(vert)
    vals = objective(vert)
    best_i = int(np.argmax(np.abs(vals)))
    best_val, best_d = float(abs(vals[best_i])), vert[best_i]

    if restarts > 0:
        d = geo.project(uniform_l1_ball(rng, restarts, k, M))
        sign = np.where(np.arange(restarts) % 2 == 0, 1.0, -1.0)
        step = 0.5 * M
        for it in range(steps):
            th = geo.full(d)
            g = proc.model.weighted_grad(th, proc.sample.y, proc.sample.z, w)[:, geo.idx] * sign[:, None]
            gmax = np.abs(g).max(axis=1, keepdims=True)
            gmax[gmax == 0] = 1.0
            d = geo.project(d + step * g / gmax)
            vals = objective(d)
            i = int(np.argmax(np.abs(vals)))
            if abs(vals[i]) > best_val:
                best_val, best_d = float(abs(vals[i])), d[i].copy()
            step *= 0.93
    return SearchResult(best_val, geo.full(best_d[None, :])[0], True)


def symmetrized_sup_once(process, ball: BallSpec, draw, rng: np.random.Generator | None = None,
                         restarts: int = 64, steps: int = 60) -> SearchResult:
    """``sup_{theta in Theta_M} |P_n^eps (rho_c(theta) - rho_c(center))|`` for one multiplier draw.

    Exact through the dual norm for linear processes; vertex enumeration plus
    ascent restarts (a lower estimate) otherwise.
    """
    draw = np.asarray(draw, dtype=float)
    if draw.shape[0] != process.n:
        raise ValueError(f"multiplier draw has length {draw.shape[0]}, expected {process.n}")
    if isinstance(process, LinearProcess):
        v = process.coefficients(draw[None])[0]
        if ball.free is not None:
            v = np.where(ball.free, v, 0.0)
        val, vertex = dual_norm_sup(v, ball.radius)
        return SearchResult(val, ball.center + vertex if ball.center.shape == vertex.shape else vertex, False)
    rng = rng if rng is not None else np.random.default_rng(0)
    return _search_loss_process(process, ball, draw, rng, restarts, steps)


def _draws(rng, kind, shape):
    if kind == "rademacher":
        return rng.choice([-1.0, 1.0], size=shape)
    if kind == "gaussian":
        return rng.standard_normal(shape)
    raise ValueError(f"unknown multiplier kind {kind!r}")


def linear_sups(process: LinearProcess, M: float, draws, free=None) -> np.ndarray:
    """``M ||v||_inf`` for a batch of multiplier draws."""
    v = process.coefficients(draws)
    if free is not None:
        v = v[:, np.asarray(free, dtype=bool)]
    return M * np.abs(v).max(axis=1, initial=0.0)


def conditional_mean_En(process, ball: BallSpec, reps: int, seed: int = 0, kind: str = "rademacher",
                        restarts: int = 64, steps: int = 60) -> ProcessEstimate:
    """Monte Carlo estimate of ``E_n = E[sup |Y^eps| | X]``."""
    if kind not in MULTIPLIERS:
        raise ValueError(f"unknown multiplier kind {kind!r}")
    if isinstance(process, LinearProcess):
        rng = np.random.default_rng(seed)
        shape = (reps, process.n) if process.block_ids is None else (reps, process.n, process.blocks)
        sups = linear_sups(process, ball.radius, _draws(rng, kind, shape), ball.free)
        return _estimate(sups, seed, kind, "dual-norm-exact")

    def one(rng):
        draw = _draws(rng, kind, process.n)
        return symmetrized_sup_once(process, ball, draw, rng, restarts, steps).value

    sups = replicate(one, seed, reps)
    return _estimate(sups, seed, kind, "vertex+random-direction", lower=True)


# -- closed-form bounds -----------------------------------------------------------------


def hoeffding_level(p: int, n: int) -> float:
    return float(np.sqrt(2.0 * np.log(2.0 * p) / n))


def eigen_ratio(psi) -> float:
    """``Lambda_bar_n / Lambda_n`` for ``Sigma_n = psi' psi / n``."""
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    n, p = psi.shape
    if p > n:
        raise np.linalg.LinAlgError("Sigma_n is singular when p > n")
    ev = np.linalg.eigvalsh(psi.T @ psi / n)
    if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
        raise np.linalg.LinAlgError("Sigma_n is singular")
    return float(np.sqrt(ev[-1] / ev[0]))


def regime_bound(regime: str, p: int, n: int, K_n: float, M: float = 1.0, r: int = 1,
                 eigen_ratio: float | None = None, C: float = 1.0) -> float:
    """``M sqrt(2 log(2p)/n) K_n`` times the regime factor (up to the universal constant ``C``)."""
    base = M * hoeffding_level(p, n) * K_n
    if regime == "linear":
        return base
    if regime == "glm":
        return 2.0 * base
    if regime == "extended-glm":
        if r < 1:
            raise ValueError("extended-glm regime needs r >= 1")
        return C * 2.0 ** (r - 1) * base
    if regime == "nonlinear":
        if eigen_ratio is None or not np.isfinite(eigen_ratio):
            raise ValueError("nonlinear regime needs a finite eigenvalue ratio")
        return C * eigen_ratio * base
    raise ValueError(f"unknown regime {regime!r}")


def massart_threshold(E_n: float, R_n: float, n: int, t: float) -> float:
    if min(E_n, R_n, t) < 0 or n < 1:
        raise ValueError("inputs must be nonnegative and n >= 1")
    return E_n + R_n * np.sqrt(2.0 * t / n)


def bernstein_envelope_tail(L: float, tau: float, p: int, n: int, t: float) -> float:
    """Deviation level of ``max_j | ||psi_j||_n^2 - ||psi_j||^2 |`` at probability ``2 e^{-t}``."""
    if L < 0 or tau < 0 or t < 0:
        raise ValueError("L, tau and t must be nonnegative")
    a = t + np.log(p)
    return 2.0 * tau * L * np.sqrt(2.0 * a / n) + 2.0 * L * a / n


def subgaussian_tau(L: float, scales=1.0) -> float:
    """``tau`` for ``psi(X_i) = s_i |N(0, 1)|``: ``tau^2 = (2L^2/n) sum_i [(1 - 2 s_i^2/L^2)^{-1/2} - 1]``."""
    s2 = np.atleast_1d(np.asarray(scales, dtype=float)) ** 2
    if np.any(2.0 * s2 >= L**2):
        raise ValueError("L must exceed sqrt(2) times the largest scale")
    return float(np.sqrt(2.0 * L**2 * np.mean((1.0 - 2.0 * s2 / L**2) ** -0.5 - 1.0)))


def peeling_threshold(lam_star: float, K_star: float, p: int, n: int, t: float) -> float:
    """``lam* (1 + K* [sqrt((t + log p)/log p) + (t + log p)/n])``."""
    if lam_star < 0 or K_star < 0 or p < 2:
        raise ValueError("need lam*, K* >= 0 and p >= 2")
    a = t + np.log(p)
    return lam_star * (1.0 + K_star * (np.sqrt(a / np.log(p)) + a / n))


def fixed_m_threshold(lam_star: float, K_star: float, p: int, n: int, t: float, M: float) -> float:
    """``(lam* M / e)(1 + K* [sqrt(t/log p) + t/n])`` for a single radius."""
    if p < 2:
        raise ValueError("need p >= 2")
    return lam_star * M / np.e * (1.0 + K_star * (np.sqrt(t / np.log(p)) + t / n))


def peeling_constants(K_bar: float, p: int, n: int) -> tuple[float, float]:
    """``(lam*, K*)`` making the fixed-radius display dominate ``8 E_bar + 4 R_bar sqrt(2t/n)``.

    Uses ``E_bar = M K_bar sqrt(2 log(2p)/n)`` and ``R_bar = M K_bar`` (linear case).
    """
    lam_star = np.e * 8.0 * K_bar * hoeffding_level(p, n)
    K_star = 0.5 * np.sqrt(np.log(p) / np.log(2.0 * p))
    return float(lam_star), float(K_star)


def shell_radii(M_bar: float, p: int) -> np.ndarray:
    """``M_j = e^{-j} M_bar`` for ``j = 0..J`` with ``J = max(p, 64)``."""
    J = max(p, 64)
    return M_bar * np.exp(-np.arange(J + 1))


# -- Monte Carlo checks ------------------------------------------------------------------


def _binom_se(q: float, reps: int) -> float:
    q = min(max(q, 0.0), 1.0)
    return float(np.sqrt(q * (1.0 - q) / reps))


@dataclass(frozen=True)
class FrequencyReport:
    frequency: float
    nominal: float
    se: float
    reps: int
    verdict: bool
    extra: dict = field(default_factory=dict)


def _linear_increments(generator, sample) -> np.ndarray:
    if not hasattr(generator, "centered_increments"):
        raise ValueError("this check needs a generator with exactly linear centered increments")
    return generator.centered_increments(sample)


@dataclass(frozen=True)
class SymmetrizationReport:
    lhs_freq: float
    rhs_freq: float
    bound_freq: float
    se: float
    verdict: bool


def symmetrization_check(generator, M: float, t: float, reps: int, seed: int = 0) -> SymmetrizationReport:
    """Frequencies of ``sup|Y| > 4R sqrt(2t/n)`` and ``sup|Y^eps| > R sqrt(2t/n)`` over fresh samples."""
    if t < 4:
        raise ValueError("the symmetrization lemma needs t >= 4")
    R = generator.population_radius(M)
    n = generator.n
    level = R * np.sqrt(2.0 * t / n)

    def one(rng):
        sample = generator.draw(rng)
        psi = _linear_increments(generator, sample)
        eps = _draws(rng, "rademacher", n)
        sup_y = M * np.abs(psi.mean(axis=0)).max(initial=0.0)
        sup_e = M * np.abs(eps @ psi / n).max(initial=0.0)
        return sup_y > 4.0 * level, sup_e > level

    out = np.array(replicate(one, seed, reps), dtype=float)
    lhs, rhs = out.mean(axis=0)
    se = float(np.sqrt(lhs * (1 - lhs) / reps + 16.0 * rhs * (1 - rhs) / reps))
    return SymmetrizationReport(float(lhs), float(rhs), float(4 * rhs), se, bool(lhs <= 4 * rhs + 3 * se))


def massart_check(process: LinearProcess, M: float, t: float, reps: int, seed: int = 0,
                  mean_reps: int | None = None) -> FrequencyReport:
    """Conditional on the sample: frequency of ``sup|Y^eps| >= E_n + R_n sqrt(2t/n)``.

    ``E_n`` comes from an independent Monte Carlo run of ``mean_reps`` draws.
    """
    mean_reps = mean_reps or 20 * reps
    rng_mean, rng = spawn_rngs(seed, 2)
    E_n = float(linear_sups(process, M, _draws(rng_mean, "rademacher", (mean_reps, process.n))).mean())
    thr = massart_threshold(E_n, process.radius_n(M), process.n, t)
    sups = linear_sups(process, M, _draws(rng, "rademacher", (reps, process.n)))
    freq = float(np.mean(sups >= thr))
    q0 = float(np.exp(-t))
    se = _binom_se(q0, reps)
    return FrequencyReport(freq, q0, se, reps, freq <= q0 + 3 * se, {"E_n": E_n, "threshold": thr})


def bernstein_check(n: int, p: int, t: float, reps: int, L: float = 2.0, seed: int = 0) -> FrequencyReport:
    """Envelopes ``psi_j(X_i) = |Z_ij|`` with ``Z`` standard Gaussian: ``||psi_j||^2 = 1``."""
    tau = subgaussian_tau(L)
    level = bernstein_envelope_tail(L, tau, p, n, t)

    def one(rng):
        z = rng.standard_normal((n, p))
        return float(np.abs((z**2).mean(axis=0) - 1.0).max()) >= level

    freq = float(np.mean(replicate(one, seed, reps)))
    q0 = 2.0 * np.exp(-t)
    se = _binom_se(q0, reps)
    return FrequencyReport(freq, q0, se, reps, freq <= q0 + 3 * se, {"level": level, "tau": tau})


def peeling_check(generator, M_bar: float, t: float, reps: int, seed: int = 0,
                  K_bar: float | None = None) -> FrequencyReport:
    """Frequency of the uniform-ratio event over ``Theta_{M_bar}`` exceeding the peeled threshold.

    For exactly linear increments ``Y = d'v``, the ratio
    ``|Y| / (||d||_1 v e^{-(J-1)} M_bar)`` has supremum ``||v||_inf`` over the ball.
    """
    n, p = generator.n, generator.p
    if K_bar is None:
        K_bar = generator.population_radius(1.0)
    lam_star, K_star = peeling_constants(K_bar, p, n)
    thr = peeling_threshold(lam_star, K_star, p, n, t)
    radii = shell_radii(M_bar, p)
    floor = radii[-2]

    def one(rng):
        sample = generator.draw(rng)
        v = np.abs(_linear_increments(generator, sample).mean(axis=0)).max(initial=0.0)
        ratio = max(m * v / max(m, floor) for m in radii)
        return ratio >= thr

    freq = float(np.mean(replicate(one, seed, reps)))
    q0 = 6.0 * np.exp(-t)
    se = _binom_se(q0, reps)
    return FrequencyReport(freq, q0, se, reps, freq <= q0 + 3 * se,
                           {"threshold": thr, "lam_star": lam_star, "K_star": K_star})


@dataclass(frozen=True)
class RatioReport:
    ratio: float
    se: float
    numerator: ProcessEstimate
    denominator: ProcessEstimate
    bound: float
    verdict: bool
    defined: bool = True


def _paired_ratio(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    ma, mb = a.mean(), b.mean()
    n = a.size
    seb = b.std(ddof=1) / np.sqrt(n)
    if mb <= 3 * seb or mb == 0:
        return float("nan"), float("nan"), False
    R = ma / mb
    cov = np.cov(a, b, ddof=1)
    var = (cov[0, 0] - 2 * R * cov[0, 1] + R * R * cov[1, 1]) / (mb * mb * n)
    return float(R), float(np.sqrt(max(var, 0.0))), True


def contraction_check(contracted, linear: LinearProcess, ball: BallSpec, reps: int, seed: int = 0,
                      restarts: int = 64, steps: int = 60, factor: float = 2.0) -> RatioReport:
    """``E_n(contracted) / E_n(linear)`` with common Rademacher draws; verdict ``ratio <= 2 + 3 SE``."""
    if contracted.n != linear.n:
        raise ValueError("processes live on samples of different sizes")

    def one(rng):
        eps = _draws(rng, "rademacher", linear.n)
        a = symmetrized_sup_once(contracted, ball, eps, rng, restarts, steps).value
        b = float(linear_sups(linear, ball.radius, eps[None])[0])
        return a, b

    ab = np.array(replicate(one, seed, reps))
    lower = isinstance(contracted, LossProcess)
    num = _estimate(ab[:, 0], seed, "rademacher", "vertex+random-direction" if lower else "dual-norm-exact", lower)
    den = _estimate(ab[:, 1], seed, "rademacher", "dual-norm-exact")
    ratio, se, ok = _paired_ratio(ab[:, 0], ab[:, 1])
    verdict = bool(ok and ratio <= factor + 3 * se)
    return RatioReport(ratio, se, num, den, factor, verdict, ok)


def multivariate_contraction_check(process: LossProcess, comparison: LinearProcess, ball: BallSpec, reps: int,
                                   seed: int = 0, C: float = 1.0, restarts: int = 64,
                                   steps: int = 60) -> RatioReport:
    """``E[sup|Y^eps|] / E[sup X]`` with ``X`` the block-Gaussian comparison process.

    ``comparison`` carries the signed ``psi_{j,k}`` over the free coordinates
    of ``ball`` and their block ids.
    """
    r = comparison.blocks
    rngs = spawn_rngs(seed, 2)
    y_est = conditional_mean_En(process, ball, reps, int(rngs[0].integers(2**32)), "rademacher", restarts, steps)
    rng_x = rngs[1]
    x_sups = linear_sups(comparison, ball.radius, _draws(rng_x, "gaussian", (reps, comparison.n, r)))
    x_est = _estimate(x_sups, seed, "gaussian", "dual-norm-exact")
    ratio = y_est.mean / x_est.mean if x_est.mean > 0 else float("nan")
    se = abs(ratio) * float(np.hypot(y_est.se / y_est.mean if y_est.mean else 0.0, x_est.se / x_est.mean)) \
        if np.isfinite(ratio) else float("nan")
    bound = C * 2.0 ** (r - 1)
    return RatioReport(float(ratio), se, y_est, x_est, bound, bool(np.isfinite(ratio) and ratio <= bound + 3 * se),
                       bool(np.isfinite(ratio)))
