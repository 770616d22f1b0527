"""Oracle-inequality quantities: margin, convex conjugate, effective sparsity and the bounds built on them."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from ._seeding import replicate
from .emp_process import BallSpec, LinearProcess, hoeffding_level, project_l1_ball, symmetrized_sup_once, \
    uniform_l1_ball
from .losses import LossModel, _simplex_project, quadratic_model
from .samples import GaussianRegression, column_norms, gaussian_design
from .solver import SolverConfig, SolverError, solve

log = logging.getLogger(__name__)

MAX_SUPPORT = 12


# -- margin functions and their conjugates -------------------------------------------------


class ConjugateUnbounded(ArithmeticError):
    pass


@dataclass(frozen=True)
class QuadraticG:
    """``G(u) = c u^2``."""

    c: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be positive")

    def __call__(self, u):
        return self.c * np.asarray(u, dtype=float) ** 2

    def conjugate(self, v):
        return np.asarray(v, dtype=float) ** 2 / (4.0 * self.c)


@dataclass(frozen=True, eq=False)
class TabulatedG:
    """Piecewise-linear ``G`` through ``(u_k, g_k)`` with ``u_0 = 0``, ``g_0 = 0``; linear beyond the table."""

    u: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        g = np.asarray(self.g, dtype=float)
        if u.ndim != 1 or u.shape != g.shape or u.size < 3:
            raise ValueError("need at least three matching grid points")
        if u[0] != 0 or g[0] != 0 or np.any(np.diff(u) <= 0) or np.any(g < 0):
            raise ValueError("G must start at G(0)=0 on an increasing grid and be nonnegative")
        slopes = np.diff(g) / np.diff(u)
        if np.any(np.diff(slopes) <= 0):
            raise ValueError("tabulated G must be strictly convex on the grid")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "g", g)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        last = (self.g[-1] - self.g[-2]) / (self.u[-1] - self.u[-2])
        return np.where(u <= self.u[-1], np.interp(u, self.u, self.g), self.g[-1] + last * (u - self.u[-1]))

    def conjugate(self, v):
        v = np.asarray(v, dtype=float)
        last = (self.g[-1] - self.g[-2]) / (self.u[-1] - self.u[-2])
        if np.any(v > last):
            raise ConjugateUnbounded("conjugate is +inf beyond the last tabulated slope")
        return np.max(np.multiply.outer(v, self.u) - self.g, axis=-1)


@dataclass(frozen=True, eq=False)
class CallableG:
    fn: Callable

    def __call__(self, u):
        return np.asarray(self.fn(u), dtype=float)


def convex_conjugate(G, v, exact: bool = True) -> float:
    """``H(v) = sup_{u >= 0} {u v - G(u)}``.

    Uses the closed form of ``G`` when ``exact`` and one exists; otherwise a
    doubling bracket, a 65-point grid and bounded Brent refinement.
    """
    v = float(v)
    if v < 0:
        raise ValueError("the conjugate is defined for v >= 0")
    if exact and hasattr(G, "conjugate"):
        return float(G.conjugate(v))

    def h(u):
        return u * v - float(G(u))

    hi = 1.0
    while h(2.0 * hi) > h(hi):
        hi *= 2.0
        if hi > 2.0**80:
            raise ConjugateUnbounded("sup over u >= 0 is unbounded; G grows too slowly")
    grid = np.linspace(0.0, 2.0 * hi, 65)
    vals = np.array([h(u) for u in grid])
    k = int(np.argmax(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(lambda u: -h(u), bounds=(a, b), method="bounded",
                          options={"xatol": 1e-13 * max(1.0, b)})
    return float(max(vals[k], -res.fun, 0.0))


def conjugate_function(G, exact: bool = True) -> Callable[[float], float]:
    return lambda v: convex_conjugate(G, v, exact)


# -- norms and effective sparsity -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Norm:
    """``tau(theta) = ||A theta||_2``."""

    A: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "A", np.array(self.A, dtype=float, ndmin=2))

    @property
    def p(self) -> int:
        return self.A.shape[1]

    def __call__(self, theta) -> np.ndarray:
        return np.linalg.norm(np.asarray(theta, dtype=float) @ self.A.T, axis=-1)

    def scaled(self, c: float) -> "Norm":
        return Norm(c * self.A, self.name)

    @classmethod
    def l2(cls, p: int) -> "Norm":
        return cls(np.eye(p), "l2")

    @classmethod
    def diag(cls, d) -> "Norm":
        return cls(np.diag(np.asarray(d, dtype=float)), "diag")

    @classmethod
    def weighted(cls, W) -> "Norm":
        """``sqrt(theta' W theta)`` for a positive semidefinite ``W`` (through its symmetric root)."""
        W = np.asarray(W, dtype=float)
        ev, U = np.linalg.eigh(0.5 * (W + W.T))
        if ev.min() < -1e-10 * max(1.0, abs(ev.max())):
            raise ValueError("W must be positive semidefinite")
        return cls((U * np.sqrt(np.maximum(ev, 0.0))) @ U.T, "weighted")

    @classmethod
    def design(cls, Z) -> "Norm":
        """``||Z theta||_n``."""
        Z = np.asarray(Z, dtype=float)
        return cls(Z / np.sqrt(Z.shape[0]), "design")


@dataclass(frozen=True)
class EffectiveSparsity:
    delta: float
    gamma: float
    phi2: float
    theta: np.ndarray = field(repr=False, default=None)


def _min_pattern(B_S, B_C, L, iters, tol, warm=None):
    """min ``||B_S u + B_C w||^2`` over ``u`` in the simplex and ``||w||_1 <= L`` (FISTA)."""
    k, q = B_S.shape[1], B_C.shape[1]
    B = np.hstack([B_S, B_C])
    lip = 2.0 * np.linalg.norm(B, 2) ** 2
    if lip == 0:
        u = np.full(k, 1.0 / k)
        return 0.0, u, np.zeros(q)

    def proj(x):
        out = np.empty_like(x)
        out[:k] = _simplex_project(x[None, :k])[0]
        out[k:] = project_l1_ball(x[None, k:], L)[0] if L > 0 else 0.0
        return out

    x = proj(np.r_[np.full(k, 1.0 / k), np.zeros(q)] if warm is None else warm)
    y, t = x.copy(), 1.0
    fx = float(np.sum((B @ x) ** 2))
    for _ in range(iters):
        g = 2.0 * B.T @ (B @ y)
        xn = proj(y - g / lip)
        fn = float(np.sum((B @ xn) ** 2))
        if fn > fx:
            # restart momentum
            y, t = x.copy(), 1.0
            continue
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = xn + ((t - 1.0) / tn) * (xn - x)
        done = fx - fn <= tol * max(fx, 1e-300) and np.abs(xn - x).max() <= 1e-12
        x, fx, t = xn, fn, tn
        if done or fx <= 1e-30:
            break
    return fx, x[:k], x[k:]


def effective_sparsity(norm: Norm, L: float, S, iters: int = 5_000, tol: float = 1e-12) -> EffectiveSparsity:
    """``delta(L, S) = min tau(theta)`` over ``||theta_S||_1 = 1``, ``||theta_{S^c}||_1 <= L``.

    Each sign pattern on ``S`` (up to a global flip) gives a convex problem over
    a simplex times an l1-ball, solved by accelerated projected gradient.
    """
    S = np.unique(np.asarray(S, dtype=int))
    if S.size == 0:
        raise ValueError("S must be nonempty")
    if S.size > MAX_SUPPORT:
        raise ValueError(f"sign enumeration is limited to |S| <= {MAX_SUPPORT}")
    if L < 0:
        raise ValueError("L must be nonnegative")
    p = norm.p
    Sc = np.setdiff1d(np.arange(p), S)
    A_S, A_C = norm.A[:, S], norm.A[:, Sc]
    best = (np.inf, None)
    for tail in itertools.product([1.0, -1.0], repeat=S.size - 1):
        signs = np.array((1.0,) + tail)
        f, u, w = _min_pattern(A_S * signs, A_C, L, iters, tol)
        if f < best[0]:
            theta = np.zeros(p)
            theta[S] = signs * u
            theta[Sc] = w
            best = (f, theta)
    delta = float(np.sqrt(max(best[0], 0.0)))
    if delta <= 1e-12:
        return EffectiveSparsity(0.0, float("inf"), 0.0, best[1])
    return EffectiveSparsity(delta, 1.0 / delta, S.size * delta**2, best[1])


# -- excess risk and margin ---------------------------------------------------------------------


@dataclass(frozen=True)
class ExcessRisk:
    value: float
    se: float = 0.0
    flagged: bool = False


def excess_risk(model: LossModel, generator, theta, theta0, draws: int = 1_000_000, seed: int = 0) -> ExcessRisk:
    """``E(theta; theta0) = P(rho_theta - rho_theta0)`` averaged over the fixed design.

    Closed form ``||Z(theta - theta0)||_n^2`` for the quadratic loss when
    ``theta0`` is the generator's truth; otherwise Monte Carlo with about
    ``draws`` response evaluations.
    """
    theta = np.asarray(theta, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    if (model.kind == "quadratic" and isinstance(generator, GaussianRegression)
            and np.array_equal(theta0, generator.theta0)):
        d = generator.z @ (theta - theta0)
        return ExcessRisk(float(np.mean(d**2)))
    z = generator.z
    reps = max(2, int(np.ceil(draws / z.shape[0])))
    rng = np.random.default_rng(seed)
    ys = generator.draw_responses(rng, reps)
    diffs = np.empty(reps)
    for b in range(0, reps, 1024):
        blk = ys[b : b + 1024]
        pair = np.stack([theta, theta0])
        vals = np.stack([model.values(pair, yy, z).mean(axis=1) for yy in blk])
        diffs[b : b + blk.shape[0]] = vals[:, 0] - vals[:, 1]
    value = float(diffs.mean())
    se = float(diffs.std(ddof=1) / np.sqrt(reps))
    return ExcessRisk(value, se, bool(se > 0.01 * abs(value)))


class MarginFailure(ArithmeticError):
    def __init__(self, message, witness):
        super().__init__(message)
        self.witness = witness


@dataclass(frozen=True)
class MarginFit:
    c: float
    ratios: np.ndarray = field(repr=False)
    witness: np.ndarray = field(repr=False)


def margin_fit(excess: Callable, theta0, norm: Norm, radius: float, probes: int = 200, seed: int = 0) -> MarginFit:
    """Largest ``c`` with ``E(theta; theta0) >= c tau(theta - theta0)^2`` on probes in the l1-ball."""
    theta0 = np.asarray(theta0, dtype=float)
    rng = np.random.default_rng(seed)
    d = uniform_l1_ball(rng, probes, theta0.size, radius)
    ratios = np.empty(probes)
    for k, dk in enumerate(d):
        t2 = float(norm(dk)) ** 2
        e = excess(theta0 + dk)
        e = e.value if isinstance(e, ExcessRisk) else float(e)
        ratios[k] = e / t2 if t2 > 0 else np.inf
        if ratios[k] <= 0:
            raise MarginFailure(f"excess risk {e:.3g} is not positive at a probe", theta0 + dk)
    k = int(np.argmin(ratios))
    return MarginFit(float(ratios[k]), ratios, theta0 + d[k])


# -- bounds ----------------------------------------------------------------------------------


def _check_domain(lam, lam0, delta):
    if not (lam0 > 0 and lam >= lam0):
        raise ValueError("need lam >= lam0 > 0")
    if not 0 < delta < 1:
        raise ValueError("need 0 < delta < 1")


def cone_constants(lam: float, lam0: float, delta: float) -> tuple[float, float]:
    """``L = (lam + lam0)/(lam - lam0)`` and ``L_delta = 2 ((1 + delta)/delta) L``."""
    _check_domain(lam, lam0, delta)
    L = (lam + lam0) / (lam - lam0) if lam > lam0 else float("inf")
    return L, 2.0 * (1.0 + delta) / delta * L


@dataclass(frozen=True)
class Theorem1Bounds:
    rhs1: float
    rhs2: float
    L: float
    L_delta: float


def theorem1_bounds(lam, lam0, delta, gamma, H: Callable, excess_star: float = 0.0,
                    gamma_delta: float | None = None) -> Theorem1Bounds:
    """Right-hand sides of the two oracle bounds.

    ``rhs1 = delta H(2 lam Gamma(L, S0)/delta) v 2 lam^2``;
    ``rhs2 = 2 delta H(4(1+delta) lam Gamma(L_delta, S*)/delta^2) v 2 lam^2 + (1+delta) E(theta*)``.
    ``gamma_delta`` defaults to ``gamma``.
    """
    L, L_delta = cone_constants(lam, lam0, delta)
    gd = gamma if gamma_delta is None else gamma_delta
    rhs1 = max(delta * H(2.0 * lam * gamma / delta), 2.0 * lam**2)
    rhs2 = max(2.0 * delta * H(4.0 * (1.0 + delta) * lam * gd / delta**2), 2.0 * lam**2) + (1.0 + delta) * excess_star
    return Theorem1Bounds(float(rhs1), float(rhs2), L, L_delta)


def theorem2_M(lam, lam0, delta, gamma_L, gamma_Ldelta, H: Callable, excess_star: float = 0.0) -> tuple[float, float]:
    """``M0 = delta/(lam - lam0) {H(2 lam Gamma/delta) v 2 lam^2}`` and ``M*`` (``inf`` when ``lam = lam0``)."""
    _check_domain(lam, lam0, delta)
    gap = lam - lam0
    m0_num = delta * max(H(2.0 * lam * gamma_L / delta), 2.0 * lam**2)
    ms_num = max(2.0 * delta * H(4.0 * (1.0 + delta) * lam * gamma_Ldelta / delta**2), 2.0 * lam**2) \
        + (1.0 + delta) * excess_star
    if gap <= 0:
        return float("inf"), float("inf")
    return float(m0_num / gap), float(ms_num / gap)


# -- the event T and best sparse approximation ------------------------------------------------


def t_ratio_sup(process: LinearProcess, center, lam0: float, M: float, shells: int = 16) -> float:
    """``max`` over a geometric radius grid of ``sup_{Theta_m} |Y| / (m v lam0)``.

    ``Y`` is the unsymmetrized increment, i.e. the all-ones multiplier draw of
    the centered process.
    """
    ones = np.ones(process.n)
    radii = M * np.exp(-np.arange(shells)[::-1] * np.log(2.0))
    best = 0.0
    for m in radii:
        sup = symmetrized_sup_once(process, BallSpec(center, m), ones).value
        best = max(best, sup / max(m, lam0) if max(m, lam0) > 0 else np.inf)
    return best


@dataclass(frozen=True)
class EventTReport:
    frequency: float
    held: np.ndarray = field(repr=False)
    upper_estimate: bool = False


def event_T_frequency(generator, theta_star, lam0: float, M: float, reps: int, seed: int = 0,
                      shells: int = 16) -> EventTReport:
    """Fraction of fresh samples on which ``|Y(theta, theta*)| <= lam0 (||theta - theta*||_1 v lam0)`` over ``Theta_M``.

    Needs a generator with exactly linear centered increments.
    """
    theta_star = np.asarray(theta_star, dtype=float)

    def one(rng):
        sample = generator.draw(rng)
        proc = LinearProcess(generator.centered_increments(sample))
        return t_ratio_sup(proc, theta_star, lam0, M, shells) <= lam0

    held = np.array(replicate(one, seed, reps), dtype=bool)
    return EventTReport(float(held.mean()), held)


def sparse_approx_target(candidates, lam, lam0, delta, H: Callable, gamma_fn: Callable, excess_fn: Callable):
    """Candidate minimizing ``2 delta H(4(1+delta) lam Gamma(L_delta, S)/delta^2) v 2 lam^2 + (1+delta) E``.

    ``gamma_fn(L, S)`` returns the effective sparsity; candidates with infinite
    value are skipped. Ties go to the smaller l1 norm, then the earlier index.
    """
    candidates = [np.asarray(c, dtype=float) for c in candidates]
    if not candidates:
        raise ValueError("no candidates")
    _, L_delta = cone_constants(lam, lam0, delta)
    scored = []
    for k, th in enumerate(candidates):
        S = np.flatnonzero(th)
        if S.size > MAX_SUPPORT:
            raise ValueError(f"candidate {k} has support larger than {MAX_SUPPORT}")
        g = gamma_fn(L_delta, S)
        if not np.isfinite(g):
            log.warning("candidate %d skipped: infinite effective sparsity", k)
            continue
        val = max(2.0 * delta * H(4.0 * (1.0 + delta) * lam * g / delta**2), 2.0 * lam**2) \
            + (1.0 + delta) * float(excess_fn(th))
        scored.append((val, float(np.abs(th).sum()), k))
    if not scored:
        raise ValueError("every candidate has infinite effective sparsity")
    _, _, k = min(scored)
    return candidates[k], k


# -- end-to-end experiment --------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleConfig:
    n: int = 200
    p: int = 400
    s0: int = 3
    signal: float = 3.0
    sigma: float = 1.0
    reps: int = 200
    seed: int = 0
    delta: float = 0.5
    lam_multiple: float = 2.0
    shells: int = 16


@dataclass(frozen=True)
class OracleRow:
    rep: int
    lam0: float
    lam: float
    M0: float
    lhs: float
    rhs: float
    lhs_star: float
    rhs_star: float
    T: bool
    verdict: bool
    verdict_star: bool
    error: str = ""


@dataclass(frozen=True)
class OracleReport:
    config: OracleConfig
    L: float
    L_delta: float
    gamma: float
    gamma_delta: float
    phi2: float
    excess_star: float
    rows: tuple = field(repr=False)

    @property
    def T_frequency(self) -> float:
        return float(np.mean([r.T for r in self.rows]))

    @property
    def verdict_given_T(self) -> float:
        held = [r.verdict for r in self.rows if r.T and not r.error]
        return float(np.mean(held)) if held else float("nan")

    @property
    def verdict_star_given_T(self) -> float:
        held = [r.verdict_star for r in self.rows if r.T and not r.error]
        return float(np.mean(held)) if held else float("nan")

    def summary(self) -> dict:
        return {
            "L": self.L, "L_delta": self.L_delta, "gamma": self.gamma, "gamma_delta": self.gamma_delta,
            "phi2": self.phi2, "excess_star": self.excess_star,
            "lam0_mean": float(np.mean([r.lam0 for r in self.rows])),
            "lam_mean": float(np.mean([r.lam for r in self.rows])),
            "M0_mean": float(np.mean([r.M0 for r in self.rows])),
            "T_frequency": self.T_frequency, "verdict_given_T": self.verdict_given_T,
            "verdict_star_given_T": self.verdict_star_given_T,
            "failures": sum(1 for r in self.rows if r.error),
        }


def oracle_experiment(cfg: OracleConfig) -> OracleReport:
    """Sparse Gaussian regression with quadratic loss and design norm ``tau = ||Z .||_n``.

    The margin holds with ``G(u) = u^2`` exactly, so ``H(v) = v^2/4``. Per
    replication ``lam0 = sqrt(2 log(2p)/n) K_hat`` with ``K_hat = max_j ||2 e z_j||_n``
    and ``lam = lam_multiple * lam0``. The convex-case bound is checked on
    ``Theta_{2 M0}(theta0)``; with ``theta* = theta0`` the second form uses the
    ``(1 - 2 delta)`` prefactor.
    """
    master = np.random.SeedSequence(cfg.seed)
    design_seq, rep_seq = master.spawn(2)
    drng = np.random.default_rng(design_seq)
    z = gaussian_design(cfg.n, cfg.p, drng)
    theta0 = np.zeros(cfg.p)
    support = np.sort(drng.choice(cfg.p, size=cfg.s0, replace=False))
    theta0[support] = cfg.signal * drng.choice([-1.0, 1.0], size=cfg.s0)
    gen = GaussianRegression(z, theta0, cfg.sigma)
    model = quadratic_model(cfg.p)
    tau = Norm.design(z)
    G = QuadraticG(1.0)
    H = conjugate_function(G)
    delta = cfg.delta
    # L depends only on lam/lam0
    lam_ratio = cfg.lam_multiple
    L = (lam_ratio + 1.0) / (lam_ratio - 1.0)
    L_delta = 2.0 * (1.0 + delta) / delta * L
    es = effective_sparsity(tau, L, support)
    es_d = effective_sparsity(tau, L_delta, support)
    level = hoeffding_level(cfg.p, cfg.n)
    rep_seed = int(rep_seq.generate_state(1)[0])

    def one(rng):
        k = -1
        sample = gen.draw(rng)
        psi = gen.centered_increments(sample)
        K_hat = float(column_norms(psi).max())
        lam0 = level * K_hat
        lam = cfg.lam_multiple * lam0
        M0, Ms = theorem2_M(lam, lam0, delta, es.gamma, es_d.gamma, H, 0.0)
        T = t_ratio_sup(LinearProcess(psi), theta0, lam0, 2.0 * M0, cfg.shells) <= lam0
        try:
            sol = solve(model, sample, SolverConfig(lam))
        except SolverError as exc:
            nan = float("nan")
            return OracleRow(k, lam0, lam, M0, nan, nan, nan, nan, bool(T), False, False, str(exc))
        d = sol.theta - theta0
        E = float(np.mean((z @ d) ** 2))
        l1 = float(np.abs(d).sum())
        lhs = (1.0 - delta) * E + (lam - lam0) * l1
        lhs_star = (1.0 - 2.0 * delta) * E + (lam - lam0) * l1
        rhs, rhs_star = (lam - lam0) * M0, (lam - lam0) * Ms
        return OracleRow(k, lam0, lam, M0, lhs, rhs, lhs_star, rhs_star, bool(T), bool(lhs <= rhs),
                         bool(lhs_star <= rhs_star))

    rows = [replace(row, rep=k) for k, row in enumerate(replicate(one, rep_seed, cfg.reps))]
    return OracleReport(cfg, L, L_delta, es.gamma, es_d.gamma, es.phi2, 0.0, tuple(rows))
