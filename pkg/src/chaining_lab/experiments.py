"""Reusable simulation setups shared by the command line runner and the test suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .emp_process import (BallSpec, LinearProcess, LossProcess, ProcessEstimate, conditional_mean_En,
                          contraction_check, multivariate_contraction_check, regime_bound)
from .losses import MixtureParams, MixtureRegression, build_envelope, huber_model, mixture_comparison_blocks, \
    mixture_model
from .samples import GaussianRegression, SampleSet, column_norms, gaussian_design

REGIMES = ("linear", "glm", "extended-glm")


@dataclass(frozen=True, eq=False)
class Setup:
    """A symmetrized process on one sample, the ball it is searched over and its envelope constant."""

    process: object
    ball: BallSpec
    K_n: float
    sample: SampleSet
    comparison: LinearProcess | None = None


def linear_setup(n: int, p: int, M: float, rng: np.random.Generator, sigma: float = 1.0) -> Setup:
    """Expectation-centered quadratic loss under ``y = e``: increments ``-2 e_i d'z_i``."""
    z = gaussian_design(n, p, rng)
    gen = GaussianRegression(z, np.zeros(p), sigma)
    sample = gen.draw(rng)
    proc = LinearProcess(gen.centered_increments(sample))
    K_n = float(column_norms(proc.psi).max())
    return Setup(proc, BallSpec(np.zeros(p), M), K_n, sample)


def huber_setup(n: int, p: int, M: float, rng: np.random.Generator, delta: float = 1.0) -> Setup:
    """Huber regression with a sparse truth; the comparison process is ``delta * z``."""
    z = gaussian_design(n, p, rng)
    theta0 = np.zeros(p)
    theta0[: min(2, p)] = 0.5
    y = z @ theta0 + rng.standard_normal(n)
    sample = SampleSet(y, z)
    model = huber_model(p, delta)
    env = build_envelope(model, sample)
    return Setup(LossProcess(model, sample), BallSpec(np.zeros(p), M), env.K_n, sample,
                 LinearProcess(delta * z))


def mixture_setup(n: int, M: float, rng: np.random.Generator, blocks=(4, 4)) -> Setup:
    """Two-component Gaussian mixture regression; the ball moves the coefficients only.

    ``K_n`` is the largest column norm of the signed comparison matrix.
    """
    blocks = tuple(int(b) for b in blocks)
    p = sum(blocks)
    z = gaussian_design(n, p, rng)
    r = len(blocks)
    beta = tuple(rng.uniform(-0.5, 0.5, size=b) for b in blocks)
    params = MixtureParams(np.full(r, 1.0 / r), np.ones(r), beta)
    gen = MixtureRegression(z, params)
    sample = gen.draw(rng)
    model = mixture_model(blocks)
    theta_star = params.to_theta()
    psi, ids = mixture_comparison_blocks(model, sample, theta_star)
    free = np.zeros(model.dim, dtype=bool)
    free[2 * r :] = True
    comp = LinearProcess(psi, ids)
    return Setup(LossProcess(model, sample), BallSpec(theta_star, M, free=free), float(column_norms(psi).max()),
                 sample, comp)


def make_setup(regime: str, n: int, p: int, M: float, rng: np.random.Generator) -> Setup:
    if regime == "linear":
        return linear_setup(n, p, M, rng)
    if regime == "glm":
        return huber_setup(n, p, M, rng)
    if regime == "extended-glm":
        half = max(1, p // 2)
        return mixture_setup(n, M, rng, (half, max(1, p - half)))
    raise ValueError(f"unknown regime {regime!r}")


@dataclass(frozen=True)
class CellResult:
    regime: str
    p: int
    n: int
    M: float
    K_n: float
    estimate: ProcessEstimate
    bound: float

    @property
    def ratio(self) -> float:
        return self.estimate.mean / self.bound if self.bound > 0 else float("nan")

    @property
    def dominated(self) -> bool:
        return self.estimate.mean <= self.bound + 3.0 * self.estimate.se


def _bound_regime(regime: str) -> tuple[str, int]:
    return ("extended-glm", 2) if regime == "extended-glm" else (regime, 1)


def grid_cells(regime: str, p_grid, n_grid, M: float, reps: int, seed: int = 0, restarts: int = 64,
               steps: int = 60, samples: int = 1) -> list[CellResult]:
    """``E_n`` and its regime bound in every ``(p, n)`` cell; each cell gets its own child seed.

    With ``samples > 1`` the conditional means of that many independent samples
    (``reps`` multiplier draws each) are averaged, which estimates the
    unconditional mean; ``K_n`` and the bound are averaged the same way.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    p_grid, n_grid = [int(v) for v in p_grid], [int(v) for v in n_grid]
    if not p_grid or not n_grid:
        raise ValueError("grids must be nonempty")
    cells = [(p, n) for p in p_grid for n in n_grid]
    seqs = np.random.SeedSequence(seed).spawn(len(cells))
    out = []
    b_regime, r = _bound_regime(regime)
    for (p, n), ss in zip(cells, seqs):
        means, Ks, bounds = [], [], []
        for child in ss.spawn(samples):
            rng = np.random.default_rng(child)
            setup = make_setup(regime, n, p, M, rng)
            est = conditional_mean_En(setup.process, setup.ball, reps, int(rng.integers(2**32)), "rademacher",
                                      restarts, steps)
            p_eff = p if regime != "extended-glm" else int(setup.ball.free.sum())
            means.append(est.mean)
            Ks.append(setup.K_n)
            bounds.append(regime_bound(b_regime, p_eff, n, setup.K_n, M, r))
        if samples == 1:
            merged = est
        else:
            # spread across samples already contains the within-sample noise
            se = float(np.std(means, ddof=1) / np.sqrt(samples))
            merged = ProcessEstimate(float(np.mean(means)), se, samples * reps, est.seed, est.kind, est.search,
                                     est.lower_estimate)
        out.append(CellResult(regime, p, n, M, float(np.mean(Ks)), merged, float(np.mean(bounds))))
    return out


@dataclass(frozen=True)
class ScalingFit:
    """``log(E_n / M) = c + a log sqrt(log p) + b log(1/sqrt n)``."""

    c: float
    a: float
    b: float
    r2: float


def fit_exponents(cells: list[CellResult]) -> ScalingFit:
    y = np.log([cell.estimate.mean / cell.M for cell in cells])
    X = np.column_stack([np.ones(len(cells)),
                         np.log(np.sqrt(np.log([max(cell.p, 2) for cell in cells]))),
                         np.log(1.0 / np.sqrt([cell.n for cell in cells]))])
    single_n = len({cell.n for cell in cells}) == 1
    if np.linalg.matrix_rank(X) < 3:
        # a one-dimensional grid cannot separate both exponents
        X = X[:, [0, 1]] if single_n else X[:, [0, 2]]
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    if coef.size == 3:
        c, a, b = coef
    elif single_n:
        (c, a), b = coef, float("nan")
    else:
        (c, b), a = coef, float("nan")
    return ScalingFit(float(c), float(a), float(b), float(r2))


def scaling_study(regime: str, p_grid, n_grid, M: float = 1.0, reps: int = 500, seed: int = 0,
                  restarts: int = 64, steps: int = 60, samples: int = 1) -> tuple[list[CellResult], ScalingFit]:
    cells = grid_cells(regime, p_grid, n_grid, M, reps, seed, restarts, steps, samples)
    return cells, fit_exponents(cells)


def huber_contraction(n: int = 128, p: int = 16, M: float = 1.0, reps: int = 2000, seed: int = 0,
                      restarts: int = 64, steps: int = 60):
    ss_setup, ss_run = np.random.SeedSequence(seed).spawn(2)
    setup = huber_setup(n, p, M, np.random.default_rng(ss_setup))
    return contraction_check(setup.process, setup.comparison, setup.ball, reps,
                             int(ss_run.generate_state(1)[0]), restarts, steps)


def mixture_contraction(n_grid=(64, 256, 1024), M: float = 0.5, reps: int = 200, seed: int = 0,
                        restarts: int = 64, steps: int = 60) -> list:
    """Ratio of the mixture loss process to its block-Gaussian comparison at each ``n``."""
    out = []
    for n, ss in zip(n_grid, np.random.SeedSequence(seed).spawn(len(n_grid))):
        rng = np.random.default_rng(ss)
        setup = mixture_setup(int(n), M, rng)
        out.append(multivariate_contraction_check(setup.process, setup.comparison, setup.ball, reps,
                                                  int(rng.integers(2**32)), 1.0, restarts, steps))
    return out
