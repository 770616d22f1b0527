"""Proximal-gradient solver for ``min P_n rho_theta + lam ||theta||_1``.

Convex kinds use accelerated proximal gradient with backtracking and
function-value restart; nonconvex kinds use plain ISTA steps from several
starting points in the parameter box and keep the best local minimum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from ._seeding import spawn_rngs
from .losses import LossModel
from .samples import SampleSet

log = logging.getLogger(__name__)

STALL_WINDOW = 500
STALL_SLACK = 1e3


class SolverError(RuntimeError):
    pass


def soft_threshold(v, kappa):
    """``sign(v) * max(|v| - kappa, 0)``, elementwise."""
    if np.any(np.asarray(kappa) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(v) * np.maximum(np.abs(v) - kappa, 0.0)


@dataclass(frozen=True)
class SolverConfig:
    lam: float
    max_iter: int = 100_000
    tol: float | None = None
    step0: float = 1.0
    shrink: float = 0.5
    restarts: int = 16
    seed: int = 0
    penalty_mask: tuple | None = None
    init: tuple | None = None
    accelerate: bool = True

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lam must be nonnegative")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.step0 <= 0 or self.max_iter < 1:
            raise ValueError("step0 and max_iter must be positive")

    def tolerance(self, model: LossModel) -> float:
        if self.tol is not None:
            return self.tol
        return 1e-8 if model.convex else 1e-6


@dataclass(frozen=True, eq=False)
class Solution:
    theta: np.ndarray
    objective: float
    kkt: float
    iterations: int
    restart: int = 0
    projections: int = 0
    converged: bool = True

    def to_json(self) -> dict:
        return {
            "theta": [float(v) for v in self.theta],
            "objective": float(self.objective),
            "kkt": None if np.isnan(self.kkt) else float(self.kkt),
            "iterations": int(self.iterations),
        }


def _mask(model: LossModel, penalty_mask) -> np.ndarray:
    if penalty_mask is None:
        return np.ones(model.dim, dtype=bool)
    m = np.asarray(penalty_mask, dtype=bool)
    if m.shape != (model.dim,):
        raise ValueError(f"penalty mask must have {model.dim} entries")
    return m


def _penalty(theta, lam, mask) -> float:
    if lam == 0:
        return 0.0
    l1 = float(np.abs(theta[..., mask]).sum())
    if l1 == 0:
        return 0.0
    return lam * l1


def objective(model: LossModel, sample: SampleSet, lam: float, theta, penalty_mask=None) -> float:
    """``P_n rho_theta + lam * sum_j |theta_j|`` (over the penalized coordinates)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.dim,):
        raise ValueError(f"parameter has shape {theta.shape}, expected ({model.dim},)")
    if sample.p != model.p:
        raise ValueError(f"sample has {sample.p} covariates, model expects {model.p}")
    smooth = float(model.values(theta, sample.y, sample.z).mean())
    return smooth + _penalty(theta, lam, _mask(model, penalty_mask))


def kkt_residual(grad, theta, lam, mask) -> float:
    """Distance of the smooth gradient to minus the subdifferential of the penalty."""
    g = np.asarray(grad, dtype=float)
    r = np.abs(g).astype(float)
    pen = mask
    nz = pen & (theta != 0)
    r[nz] = np.abs(g[nz] + lam * np.sign(theta[nz]))
    z = pen & (theta == 0)
    r[z] = np.maximum(np.abs(g[z]) - lam, 0.0)
    return float(r.max(initial=0.0))


class _Problem:
    def __init__(self, model: LossModel, sample: SampleSet, lam: float, mask):
        self.model = model
        self.y, self.z = sample.y, sample.z
        self.n = sample.n
        self.lam = lam
        self.mask = mask
        self.w = np.full(self.n, 1.0 / self.n)
        self.r = model.r if model.kind == "extended-glm-mixture" else 0
        self.boxed = bool(np.isfinite(model.lower).any() or np.isfinite(model.upper).any())

    def f(self, theta) -> float:
        return float(self.model.values(theta, self.y, self.z).mean())

    def grad(self, theta) -> np.ndarray:
        return self.model.weighted_grad(theta, self.y, self.z, self.w)[0]

    def prox(self, v, t):
        """Exact prox of ``t*lam*||.||_1`` plus the feasible-set indicator.

        The problem is separable: a clipped soft threshold per box coordinate,
        and for the mixing weights the penalty is constant on the simplex so
        the prox is the simplex projection.
        """
        out = v.copy()
        kappa = t * self.lam
        m = self.mask.copy()
        m[: self.r] = False
        if kappa > 0:
            out[m] = soft_threshold(v[m], kappa)
        raw = out
        if self.boxed or self.r:
            out = self.model.project(out)[0]
        moved = bool(np.any(np.abs(out - raw) > 1e-15)) if self.r == 0 else bool(
            np.any(np.abs(out[self.r :] - raw[self.r :]) > 1e-15))
        return out, moved

    def F(self, theta) -> float:
        return self.f(theta) + _penalty(theta, self.lam, self.mask)


def _run(prob: _Problem, theta0: np.ndarray, cfg: SolverConfig, tol: float, accelerate: bool):
    x = prob.model.project(theta0)[0] if (prob.boxed or prob.r) else theta0.astype(float).copy()
    fx = prob.f(x)
    if not np.isfinite(fx):
        raise SolverError("non-finite objective at the starting point")
    Fx = fx + _penalty(x, prob.lam, prob.mask)
    yk, fy, gy = x.copy(), fx, prob.grad(x)
    t = cfg.step0
    tk = 1.0
    projections = 0
    converged = False
    check_kkt = prob.model.convex and not prob.boxed
    Fx_mark = Fx
    restarted = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        while True:
            cand, moved = prob.prox(yk - t * gy, t)
            fc = prob.f(cand)
            d = cand - yk
            if np.isfinite(fc) and fc <= fy + gy @ d + (d @ d) / (2.0 * t) + 1e-12 * max(1.0, abs(fy)):
                break
            t *= cfg.shrink
            if t < 1e-20:
                raise SolverError("step size collapsed; objective not finite or not smooth")
        projections += moved
        Fc = fc + _penalty(cand, prob.lam, prob.mask)
        step_norm = float(np.abs(d).max(initial=0.0)) / t
        if accelerate and Fc > Fx and not restarted:
            # function-value restart: fall back to a plain step from x
            tk = 1.0
            yk, fy, gy = x, fx, prob.grad(x)
            restarted = True
            continue
        restarted = False
        if accelerate:
            tk1 = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
            yk = cand + ((tk - 1.0) / tk1) * (cand - x)
            if prob.boxed or prob.r:
                yk = prob.model.project(yk)[0]
            tk = tk1
        else:
            yk = cand
        x, fx, Fx = cand, fc, Fc
        fy = prob.f(yk) if accelerate else fx
        gy = prob.grad(yk)
        if check_kkt:
            if step_norm <= 10 * tol or it % 25 == 0:
                gx = gy if not accelerate else prob.grad(x)
                kkt = kkt_residual(gx, x, prob.lam, prob.mask)
                if kkt <= tol:
                    converged = True
                    break
                if it % STALL_WINDOW == 0:
                    # rounding floor: the objective no longer moves and the residual is tiny
                    if Fx_mark - Fx <= 1e-15 * max(1.0, abs(Fx)) and kkt <= STALL_SLACK * tol:
                        converged = True
                        break
                    Fx_mark = Fx
        elif step_norm <= tol:
            converged = True
            break
    return x, Fx, it, projections, converged


def solve(model: LossModel, sample: SampleSet, config: SolverConfig) -> Solution:
    """Penalized M-estimate; multi-start over the box for nonconvex kinds."""
    if sample.p != model.p:
        raise ValueError(f"sample has {sample.p} covariates, model expects {model.p}")
    mask = _mask(model, config.penalty_mask)
    tol = config.tolerance(model)
    prob = _Problem(model, sample, config.lam, mask)

    start0 = np.asarray(config.init, dtype=float) if config.init is not None else None
    if start0 is None:
        start0 = np.zeros(model.dim) if model.convex else model.box_center()
    if start0.shape != (model.dim,):
        raise ValueError(f"init must have {model.dim} entries")

    if model.convex:
        starts = [start0]
    else:
        rngs = spawn_rngs(config.seed, config.restarts)
        starts = [start0] + [model.sample_uniform(g, 1)[0] for g in rngs[1:]]

    best = None
    accelerate = config.accelerate and model.convex
    for k, s in enumerate(starts):
        theta, F, iters, proj, conv = _run(prob, s, config, tol, accelerate)
        if best is None or F < best[1]:
            best = (theta, F, iters, k, proj, conv)
    theta, F, iters, k, proj, conv = best
    theta.flags.writeable = False
    kkt = kkt_residual(prob.grad(theta), theta, config.lam, mask) if model.convex else float("nan")
    if not conv:
        log.warning("solver stopped at max_iter=%d before reaching tol=%g", config.max_iter, tol)
    return Solution(theta, objective(model, sample, config.lam, theta, config.penalty_mask), kkt, iters, k, proj,
                    conv)


def lambda_path(model: LossModel, sample: SampleSet, lams, config: SolverConfig) -> list[Solution]:
    """Warm-started solutions along a descending grid of penalty levels."""
    lams = [float(v) for v in lams]
    if not lams:
        raise ValueError("empty lambda grid")
    if any(a < b for a, b in zip(lams, lams[1:])):
        raise ValueError("lambda grid must be sorted in descending order")
    out = []
    init = config.init
    for lam in lams:
        if np.isinf(lam):
            sol = _infinite_penalty(model, sample, config)
        else:
            sol = solve(model, sample, replace(config, lam=lam, init=init))
        out.append(sol)
        init = tuple(sol.theta)
    if model.convex:
        norms = [float(np.abs(s.theta).sum()) for s in out]
        if any(b < a - 1e-8 * max(1.0, a) for a, b in zip(norms, norms[1:])):
            log.warning("l1 norm of the path is not monotone in lambda: %s", norms)
    return out


def path_is_monotone(path: list[Solution], rtol: float = 1e-8) -> bool:
    norms = [float(np.abs(s.theta).sum()) for s in path]
    return all(b >= a - rtol * max(1.0, a) for a, b in zip(norms, norms[1:]))


def _infinite_penalty(model: LossModel, sample: SampleSet, config: SolverConfig) -> Solution:
    """``lam = inf`` forces every penalized coordinate to zero; the rest are optimized."""
    mask = _mask(model, config.penalty_mask)
    if mask.all():
        theta = model.project(np.zeros(model.dim))[0] if not model.convex else np.zeros(model.dim)
        if np.any(theta[mask] != 0):
            raise SolverError("zero is outside the parameter box; infinite penalty is infeasible")
        theta.flags.writeable = False
        f = float(model.values(theta, sample.y, sample.z).mean())
        return Solution(theta, f, 0.0 if model.convex else float("nan"), 0)
    lower = np.where(mask, 0.0, model.lower)
    upper = np.where(mask, 0.0, model.upper)
    fixed = replace(model, lower=lower, upper=upper)
    sol = solve(fixed, sample, replace(config, lam=0.0, init=None))
    return replace(sol, objective=objective(model, sample, 0.0, sol.theta))
