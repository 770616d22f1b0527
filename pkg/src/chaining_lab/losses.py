"""Loss families, centering constants and componentwise Lipschitz envelopes.

Four kinds are supported:

``quadratic``
    ``(y - theta'z)^2``.
``lipschitz-glm``
    ``ell(y, theta'z)`` with ``ell(y, .)`` Lipschitz: Huber residual loss or
    logistic loss.
``extended-glm-mixture``
    Negative log density of a Gaussian mixture regression with ``r``
    components; ``theta = (pi, sigma, beta_1, ..., beta_r)``.
``generic-nonlinear``
    User-supplied value and gradient callables.

Parameter vectors are flat arrays. For the mixture the layout is
``[pi_1..pi_r, sigma_1..sigma_r, beta]`` with ``beta`` split into blocks of
sizes ``p_1..p_r``; every other kind uses ``theta in R^p``.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit, logsumexp

from .samples import SampleSet

KINDS = ("quadratic", "lipschitz-glm", "extended-glm-mixture", "generic-nonlinear")
LINKS = ("huber", "logistic")
CENTERINGS = ("none", "expectation")

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class LossDomainError(ValueError):
    """Parameter outside the model's box, or observation of the wrong size."""


class EnvelopeError(ValueError):
    """The loss gradient is unbounded over the parameter box."""

    def __init__(self, message: str, coordinate: int | None = None):
        super().__init__(message)
        self.coordinate = coordinate


# -- elementwise loss pieces -------------------------------------------------


def huber(r, delta):
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r**2, delta * (a - 0.5 * delta))


def _mixture_terms(y, eta, pi, sigma):
    """Residuals, log component densities and log-sum-exp.

    ``y`` (..., n), ``eta`` (..., r, n), ``pi`` and ``sigma`` (..., r).
    """
    resid = y[..., None, :] - eta
    sig = sigma[..., :, None]
    logphi = -LOG_SQRT_2PI - np.log(sig) - resid**2 / (2.0 * sig**2)
    with np.errstate(divide="ignore"):
        logpi = np.log(pi)[..., :, None]
    logterms = logpi + logphi
    lse = logsumexp(logterms, axis=-2)
    return resid, logphi, logterms, lse


def _simplex_project(v):
    """Euclidean projection of each row of ``v`` onto the probability simplex."""
    v = np.atleast_2d(v)
    k = v.shape[1]
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    idx = np.arange(1, k + 1)
    cond = u - css / idx > 0
    rho = k - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(v.shape[0]), rho] / (rho + 1)
    return np.maximum(v - tau[:, None], 0.0)


# -- mixture parameters --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MixtureParams:
    pi: np.ndarray
    sigma: np.ndarray
    beta: tuple

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        beta = tuple(np.atleast_1d(np.asarray(b, dtype=float)) for b in self.beta)
        if not (pi.shape == sigma.shape == (len(beta),)):
            raise ValueError("pi, sigma and beta must describe the same number of components")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-10:
            raise ValueError("mixing weights must lie in the simplex")
        if np.any(sigma <= 0):
            raise ValueError("scales must be positive")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "beta", beta)

    @property
    def r(self) -> int:
        return self.pi.shape[0]

    @property
    def blocks(self) -> tuple[int, ...]:
        return tuple(b.shape[0] for b in self.beta)

    def to_theta(self) -> np.ndarray:
        return np.concatenate([self.pi, self.sigma, *self.beta])

    @classmethod
    def from_theta(cls, theta, blocks) -> "MixtureParams":
        theta = np.asarray(theta, dtype=float)
        r = len(blocks)
        cuts = np.cumsum((0,) + tuple(blocks)) + 2 * r
        beta = tuple(theta[a:b] for a, b in zip(cuts[:-1], cuts[1:]))
        return cls(theta[:r], theta[r : 2 * r], beta)


# -- the model -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LossModel:
    """An immutable loss family with its parameter box.

    ``lower``/``upper`` cover every coordinate of the flat parameter vector.
    For convex kinds they default to the whole space; the mixture and generic
    kinds must be given a bounded box.
    """

    kind: str
    p: int
    blocks: tuple = ()
    centering: str = "none"
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    link: str = "huber"
    huber_delta: float = 1.0
    value_fn: Callable | None = field(default=None, repr=False)
    grad_fn: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.centering not in CENTERINGS:
            raise ValueError(f"unknown centering mode {self.centering!r}")
        if self.p < 1:
            raise ValueError("dimension p must be positive")
        blocks = tuple(int(b) for b in self.blocks) or (self.p,)
        if any(b < 1 for b in blocks) or sum(blocks) != self.p:
            raise ValueError(f"block sizes {blocks} must be >= 1 and sum to p={self.p}")
        if self.kind != "extended-glm-mixture" and len(blocks) != 1:
            raise ValueError("only the mixture kind has more than one block")
        object.__setattr__(self, "blocks", blocks)
        if self.kind == "lipschitz-glm" and self.link not in LINKS:
            raise ValueError(f"unknown link {self.link!r}")
        if self.kind == "generic-nonlinear" and (self.value_fn is None or self.grad_fn is None):
            raise ValueError("generic-nonlinear needs value_fn and grad_fn")

        d = self.dim
        lo = np.full(d, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).copy()
        hi = np.full(d, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).copy()
        if lo.shape != (d,) or hi.shape != (d,):
            raise ValueError(f"parameter box must have {d} coordinates")
        if np.any(lo > hi):
            raise ValueError("empty parameter box")
        if self.kind == "extended-glm-mixture":
            r = self.r
            lo[:r], hi[:r] = 0.0, 1.0
            if np.any(lo[r : 2 * r] <= 0) or not np.all(np.isfinite(hi[r : 2 * r])):
                raise ValueError("mixture scales need bounds 0 < sigma_min <= sigma_max < inf")
        if self.kind in ("extended-glm-mixture", "generic-nonlinear"):
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError("nonconvex kinds need a bounded parameter box")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    # geometry ------------------------------------------------------------

    @property
    def r(self) -> int:
        return len(self.blocks)

    @property
    def dim(self) -> int:
        return self.p + 2 * self.r if self.kind == "extended-glm-mixture" else self.p

    @property
    def convex(self) -> bool:
        return self.kind in ("quadratic", "lipschitz-glm")

    @property
    def beta_offset(self) -> int:
        return 2 * self.r if self.kind == "extended-glm-mixture" else 0

    def block_slices(self) -> list[slice]:
        cuts = np.cumsum((0,) + self.blocks) + self.beta_offset
        return [slice(int(a), int(b)) for a, b in zip(cuts[:-1], cuts[1:])]

    def labels(self) -> list[str]:
        if self.kind != "extended-glm-mixture":
            return [f"theta_{j + 1}" for j in range(self.p)]
        out = [f"pi_{k + 1}" for k in range(self.r)] + [f"sigma_{k + 1}" for k in range(self.r)]
        for k, b in enumerate(self.blocks):
            out += [f"beta_{j + 1},{k + 1}" for j in range(b)]
        return out

    def contains(self, theta, atol: float = 1e-10) -> bool:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            return False
        if np.any(theta < self.lower - atol) or np.any(theta > self.upper + atol):
            return False
        if self.kind == "extended-glm-mixture":
            return abs(theta[: self.r].sum() - 1.0) <= atol
        return True

    def project(self, thetas) -> np.ndarray:
        """Map rows into the feasible set (box, and simplex for mixing weights)."""
        t = np.array(thetas, dtype=float, ndmin=2)
        t = np.clip(t, self.lower, self.upper)
        if self.kind == "extended-glm-mixture":
            t[:, : self.r] = _simplex_project(t[:, : self.r])
        return t

    def sample_uniform(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("uniform sampling needs a bounded parameter box")
        t = rng.uniform(self.lower, self.upper, size=(size, self.dim))
        if self.kind == "extended-glm-mixture":
            t[:, : self.r] = rng.dirichlet(np.ones(self.r), size=size)
        return t

    def box_center(self) -> np.ndarray:
        lo = np.where(np.isfinite(self.lower), self.lower, 0.0)
        hi = np.where(np.isfinite(self.upper), self.upper, 0.0)
        c = 0.5 * (lo + hi)
        if np.isfinite(self.lower).any() and not np.isfinite(self.upper).all():
            c = np.clip(c, self.lower, self.upper)
        if self.kind == "extended-glm-mixture":
            c[: self.r] = 1.0 / self.r
        return c

    # evaluation ------------------------------------------------------------

    def _mixture_eta(self, t, z):
        eta = np.empty(t.shape[:-1] + (self.r, z.shape[0]))
        for k, sl in enumerate(self.block_slices()):
            zs = z[:, sl.start - self.beta_offset : sl.stop - self.beta_offset]
            eta[..., k, :] = t[..., sl] @ zs.T
        return eta

    def _pointwise(self, t, y, z):
        """Loss for parameter rows ``t`` (B, d) against responses ``y`` broadcast to (B, n)."""
        if self.kind == "generic-nonlinear":
            y = np.broadcast_to(y, (t.shape[0], z.shape[0]))
            return np.stack([np.asarray(self.value_fn(th, yy, z), dtype=float) for th, yy in zip(t, y)])
        if self.kind == "extended-glm-mixture":
            eta = self._mixture_eta(t, z)
            _, _, _, lse = _mixture_terms(y, eta, t[:, : self.r], t[:, self.r : 2 * self.r])
            return -lse
        eta = t @ z.T
        if self.kind == "quadratic":
            return (y - eta) ** 2
        if self.link == "huber":
            return huber(y - eta, self.huber_delta)
        return np.logaddexp(0.0, eta) - y * eta

    def values(self, thetas, y, z) -> np.ndarray:
        """Loss of every parameter row at every observation, shape (B, n)."""
        t = np.array(thetas, dtype=float, ndmin=2)
        z = np.asarray(z, dtype=float)
        return self._pointwise(t, np.asarray(y, dtype=float)[None, :], z)

    def link_derivative(self, thetas, y, z) -> np.ndarray:
        """``d rho / d eta`` for the single-index kinds, shape (B, n)."""
        t = np.array(thetas, dtype=float, ndmin=2)
        eta = t @ np.asarray(z).T
        if self.kind == "quadratic":
            return -2.0 * (y - eta)
        if self.kind == "lipschitz-glm":
            if self.link == "huber":
                return -np.clip(y - eta, -self.huber_delta, self.huber_delta)
            return expit(eta) - y
        raise ValueError(f"{self.kind} has no single linear predictor")

    def obs_grads(self, thetas, y, z) -> np.ndarray:
        """Per-observation gradients, shape (B, n, d)."""
        t = np.array(thetas, dtype=float, ndmin=2)
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.kind in ("quadratic", "lipschitz-glm"):
            return self.link_derivative(t, y, z)[:, :, None] * z[None, :, :]
        if self.kind == "generic-nonlinear":
            return np.stack([np.asarray(self.grad_fn(th, y, z), dtype=float) for th in t])
        r = self.r
        pi, sig = t[:, :r], t[:, r : 2 * r]
        eta = self._mixture_eta(t, z)
        resid, logphi, logterms, lse = _mixture_terms(y[None, :], eta, pi, sig)
        post = np.exp(logterms - lse[:, None, :])
        s = sig[:, :, None]
        g = np.empty((t.shape[0], z.shape[0], self.dim))
        g[:, :, :r] = np.swapaxes(-np.exp(logphi - lse[:, None, :]), 1, 2)
        g[:, :, r : 2 * r] = np.swapaxes(post * (1.0 / s - resid**2 / s**3), 1, 2)
        for k, sl in enumerate(self.block_slices()):
            zs = z[:, sl.start - 2 * r : sl.stop - 2 * r]
            g[:, :, sl] = (-(post[:, k, :] * resid[:, k, :]) / sig[:, k, None] ** 2)[:, :, None] * zs[None]
        return g

    def weighted_grad(self, thetas, y, z, w) -> np.ndarray:
        """``sum_i w_i grad rho_theta(X_i)`` for every parameter row, shape (B, d)."""
        w = np.asarray(w, dtype=float)
        if self.kind in ("quadratic", "lipschitz-glm"):
            return (self.link_derivative(thetas, y, z) * w) @ np.asarray(z)
        if self.kind == "generic-nonlinear":
            return np.einsum("bnd,n->bd", self.obs_grads(thetas, y, z), w)
        # mixture without the (B, n, d) intermediate
        t = np.array(thetas, dtype=float, ndmin=2)
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        r = self.r
        sig = t[:, r : 2 * r]
        eta = self._mixture_eta(t, z)
        resid, logphi, logterms, lse = _mixture_terms(y[None, :], eta, t[:, :r], sig)
        post = np.exp(logterms - lse[:, None, :]) * w
        s = sig[:, :, None]
        g = np.empty((t.shape[0], self.dim))
        g[:, :r] = -(np.exp(logphi - lse[:, None, :]) * w).sum(axis=2)
        g[:, r : 2 * r] = (post * (1.0 / s - resid**2 / s**3)).sum(axis=2)
        for k, sl in enumerate(self.block_slices()):
            zs = z[:, sl.start - 2 * r : sl.stop - 2 * r]
            g[:, sl] = -((post[:, k, :] * resid[:, k, :]) / sig[:, k, None] ** 2) @ zs
        return g


# -- constructors ------------------------------------------------------------------


def quadratic_model(p: int, lower=None, upper=None, centering: str = "none") -> LossModel:
    return LossModel("quadratic", p, lower=lower, upper=upper, centering=centering)


def huber_model(p: int, delta: float = 1.0, lower=None, upper=None, centering: str = "none") -> LossModel:
    return LossModel("lipschitz-glm", p, link="huber", huber_delta=delta, lower=lower, upper=upper,
                     centering=centering)


def logistic_model(p: int, lower=None, upper=None, centering: str = "none") -> LossModel:
    return LossModel("lipschitz-glm", p, link="logistic", lower=lower, upper=upper, centering=centering)


def mixture_model(blocks, sigma_bounds=(0.5, 2.0), beta_bound=1.0, centering: str = "none") -> LossModel:
    """Gaussian mixture regression loss on the box ``sigma in [lo, hi]``, ``|beta| <= beta_bound``."""
    blocks = tuple(int(b) for b in blocks)
    r, p = len(blocks), sum(blocks)
    smin, smax = sigma_bounds
    b = np.broadcast_to(np.asarray(beta_bound, dtype=float), (p,))
    lower = np.concatenate([np.zeros(r), np.full(r, smin), -b])
    upper = np.concatenate([np.ones(r), np.full(r, smax), b])
    return LossModel("extended-glm-mixture", p, blocks=blocks, lower=lower, upper=upper, centering=centering)


def generic_model(p: int, value_fn, grad_fn, lower, upper, centering: str = "none") -> LossModel:
    return LossModel("generic-nonlinear", p, lower=lower, upper=upper, value_fn=value_fn, grad_fn=grad_fn,
                     centering=centering)


def sigmoid_least_squares(p: int, bound: float = 1.0) -> LossModel:
    """``(y - expit(theta'z))^2`` on the cube ``|theta_j| <= bound``; a genuinely nonlinear example."""

    def value(theta, y, z):
        return (y - expit(z @ theta)) ** 2

    def grad(theta, y, z):
        s = expit(z @ theta)
        return (-2.0 * (y - s) * s * (1.0 - s))[:, None] * z

    return generic_model(p, value, grad, np.full(p, -bound), np.full(p, bound))


# -- single-observation API ----------------------------------------------------------


def _check_observation(model: LossModel, theta, x):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.dim,):
        raise LossDomainError(f"parameter has shape {theta.shape}, expected ({model.dim},)")
    y, z = x
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (model.p,):
        raise LossDomainError(f"observation covariate has {z.shape[0]} entries, expected {model.p}")
    if not model.contains(theta):
        raise LossDomainError("parameter outside the model's parameter box")
    return theta, float(y), z


def eval_loss(model: LossModel, theta, x, i: int | None = None) -> float:
    """``rho_theta(X_i)`` for one observation ``x = (y_i, z_i)``."""
    theta, y, z = _check_observation(model, theta, x)
    return float(model.values(theta, np.array([y]), z[None, :])[0, 0])


class ExpectationCentering:
    """Monte Carlo centering constants ``c_{i,theta} = E rho_theta(X_i)``.

    Responses are drawn once from ``generator`` (``draws`` full response
    vectors, so memory is ``draws * n`` floats) and reused, which makes
    ``c`` a deterministic function of ``theta``.
    """

    def __init__(self, generator, draws: int = 100_000, seed: int = 0):
        self.generator = generator
        self.draws = int(draws)
        self.seed = seed
        self._cache = None

    def responses(self) -> np.ndarray:
        if self._cache is None:
            rng = np.random.default_rng(self.seed)
            self._cache = self.generator.draw_responses(rng, self.draws)
        return self._cache

    def response_mean(self) -> np.ndarray:
        return self.responses().mean(axis=0)

    def constants(self, model: LossModel, theta, z, chunk: int = 4096) -> np.ndarray:
        """``c_{i,theta}`` for all ``i``."""
        t = np.asarray(theta, dtype=float)[None, :]
        ys = self.responses()
        acc = np.zeros(ys.shape[1])
        for start in range(0, ys.shape[0], chunk):
            block = ys[start : start + chunk]
            if model.kind == "generic-nonlinear":
                acc += sum(model.values(t, yy, z)[0] for yy in block)
            else:
                acc += model._pointwise(t, block, np.asarray(z, dtype=float)).sum(axis=0)
        return acc / ys.shape[0]


def eval_centered(model: LossModel, theta, x, i: int, centering: ExpectationCentering | None = None,
                  z_all=None) -> float:
    """``rho_theta(X_i) - c_{i,theta}``.

    In expectation mode ``z_all`` is the full design the centering generator
    was built on; observation ``i`` indexes into it.
    """
    value = eval_loss(model, theta, x, i)
    if model.centering == "none":
        return value
    if centering is None or z_all is None:
        raise ValueError("expectation centering needs a centering object and the full design")
    return value - float(centering.constants(model, theta, z_all)[i])


def centered_values(model: LossModel, thetas, sample: SampleSet,
                    centering: ExpectationCentering | None = None) -> np.ndarray:
    vals = model.values(thetas, sample.y, sample.z)
    if model.centering == "none":
        return vals
    if centering is None:
        raise ValueError("expectation centering needs a centering object")
    return vals - np.stack([centering.constants(model, t, sample.z) for t in np.atleast_2d(thetas)])


# -- envelopes ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LipschitzEnvelope:
    """Nonnegative ``psi_j(X_i, i)``, shape (n, d), with ``K_n = max_j ||psi_j||_n``."""

    psi: np.ndarray
    labels: tuple = ()
    block_of: tuple = ()
    K_n: float = float("nan")

    def __post_init__(self):
        psi = np.array(self.psi, dtype=float, ndmin=2)
        if np.any(psi < 0) or not np.all(np.isfinite(psi)):
            raise ValueError("envelope entries must be finite and nonnegative")
        psi.flags.writeable = False
        object.__setattr__(self, "psi", psi)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"theta_{j + 1}" for j in range(psi.shape[1])))
        k = float(self.column_norms().max(initial=0.0))
        if np.isnan(self.K_n):
            object.__setattr__(self, "K_n", k)
        elif not np.isclose(self.K_n, k, rtol=1e-12, atol=1e-15):
            raise ValueError(f"stored K_n={self.K_n} disagrees with recomputed {k}")

    def column_norms(self) -> np.ndarray:
        return np.sqrt(np.mean(self.psi**2, axis=0))

    def K_n_of(self, columns) -> float:
        return float(self.column_norms()[np.asarray(columns)].max(initial=0.0))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"ψ_{j + 1}" for j in range(self.psi.shape[1])])
            for row in self.psi:
                w.writerow([repr(float(v)) for v in row])


def _mixture_envelope(model: LossModel, y, z):
    """Closed-form sup over the box of ``|d rho / d theta_j|``; ``y`` may carry leading axes."""
    r = model.r
    lo, hi = model.lower, model.upper
    smin, smax = lo[r : 2 * r], hi[r : 2 * r]
    y = np.asarray(y, dtype=float)
    absz = np.abs(z)
    bmax = np.maximum(np.abs(lo), np.abs(hi))
    # sup |y - beta_k' z_k| over the box, per component
    R = np.empty(y.shape[:-1] + (r, z.shape[0]))
    for k, sl in enumerate(model.block_slices()):
        cols = slice(sl.start - 2 * r, sl.stop - 2 * r)
        R[..., k, :] = np.abs(y) + absz[:, cols] @ bmax[sl]
    s2 = smin[:, None] ** 2
    out = np.empty(y.shape[:-1] + (z.shape[0], model.dim))
    # d/d sigma_k: |1/sigma - r^2/sigma^3| <= max(1/sigma_min, R^2/sigma_min^3)
    out[..., r : 2 * r] = np.swapaxes(np.maximum(1.0 / smin[:, None], R**2 / (smin[:, None] * s2)), -1, -2)
    for k, sl in enumerate(model.block_slices()):
        cols = slice(sl.start - 2 * r, sl.stop - 2 * r)
        out[..., sl] = (R[..., k, :] / s2[k])[..., None] * absz[:, cols]
    # d/d pi_k = -phi_k / sum_l pi_l phi_l; numerator <= phi_max, denominator >= min_l inf phi_l
    log_phi_max = -LOG_SQRT_2PI - np.log(smin.min())

    def log_phi(s, res):
        return -LOG_SQRT_2PI - np.log(s) - res**2 / (2.0 * s**2)

    log_inf = np.minimum(log_phi(smin[:, None], R), log_phi(smax[:, None], R)).min(axis=-2)
    log_ratio = log_phi_max - log_inf
    if np.any(log_ratio > 700.0):
        raise EnvelopeError("mixing-weight gradient unbounded over the box (density underflow)", coordinate=0)
    out[..., :r] = np.exp(log_ratio)[..., None]
    return out


def _closed_form_envelope(model: LossModel, y, z):
    """Analytic envelope for the given responses; ``y`` may carry leading axes."""
    y = np.asarray(y, dtype=float)
    absz = np.abs(z)
    if model.kind == "extended-glm-mixture":
        return _mixture_envelope(model, y, z)
    if model.kind == "lipschitz-glm":
        if model.link == "huber":
            lip = np.full(y.shape, model.huber_delta)
        else:
            lip = np.maximum(np.abs(y), np.abs(1.0 - y))
        return lip[..., None] * absz
    if model.kind == "quadratic":
        bmax = np.maximum(np.abs(model.lower), np.abs(model.upper))
        if not np.all(np.isfinite(bmax)):
            j = int(np.argmax(~np.isfinite(bmax)))
            raise EnvelopeError("uncentered quadratic loss needs a bounded box", coordinate=j)
        B = absz @ bmax
        return (2.0 * (np.abs(y) + B))[..., None] * absz
    raise EnvelopeError("no closed form for generic-nonlinear losses")


def _box_points(model: LossModel, grid_points: int, max_points: int, rng) -> np.ndarray:
    """Dense grid over the box when affordable, otherwise uniform samples plus corners."""
    r = model.r if model.kind == "extended-glm-mixture" else 0
    axes = [j for j in range(r, model.dim) if model.upper[j] > model.lower[j]]
    simplex_free = r >= 2
    n_axes = len(axes) + (1 if r == 2 else 0)
    if r <= 2 and grid_points**n_axes <= max_points:
        grids = [np.linspace(model.lower[j], model.upper[j], grid_points) for j in axes]
        if r == 2:
            grids.append(np.linspace(0.0, 1.0, grid_points))
        mesh = np.array(list(itertools.product(*grids))) if grids else np.zeros((1, 0))
        pts = np.tile(model.box_center(), (mesh.shape[0], 1))
        pts[:, axes] = mesh[:, : len(axes)]
        if r == 2:
            pts[:, 0] = mesh[:, -1]
            pts[:, 1] = 1.0 - mesh[:, -1]
        elif r == 1:
            pts[:, 0] = 1.0
        return pts
    pts = model.sample_uniform(rng, max_points)
    if not simplex_free and len(axes) <= 16:
        corners = np.array(list(itertools.product(*[(model.lower[j], model.upper[j]) for j in axes])))
        extra = np.tile(model.box_center(), (corners.shape[0], 1))
        extra[:, axes] = corners
        if r == 1:
            extra[:, 0] = 1.0
        pts = np.vstack([pts, extra])
    return pts


def build_envelope(model: LossModel, sample: SampleSet, centering: ExpectationCentering | None = None,
                   method: str = "auto", safety: float = 1.1, grid_points: int = 32,
                   max_points: int = 20_000, seed: int = 0) -> LipschitzEnvelope:
    """Componentwise Lipschitz envelope of the (centered) loss on the sample.

    ``method="auto"`` uses closed forms where they exist. ``method="grid"``
    takes the max of ``|grad|`` over box points (a grid of ``grid_points`` per
    axis when affordable) times ``safety``; it is the only route for
    generic-nonlinear losses.
    """
    y, z = sample.y, sample.z
    if z.shape[1] != model.p:
        raise LossDomainError(f"design has {z.shape[1]} columns, model expects {model.p}")
    labels = tuple(model.labels())
    block_of = tuple([-1] * model.beta_offset + sum(([k] * b for k, b in enumerate(model.blocks)), []))
    if method == "auto" and model.kind == "generic-nonlinear":
        method = "grid"

    if method == "grid":
        if model.centering == "expectation":
            raise ValueError("grid envelopes are only available without centering")
        rng = np.random.default_rng(seed)
        pts = _box_points(model, grid_points, max_points, rng)
        psi = np.zeros((sample.n, model.dim))
        for start in range(0, pts.shape[0], 256):
            g = np.abs(model.obs_grads(pts[start : start + 256], y, z))
            psi = np.maximum(psi, g.max(axis=0))
        if not np.all(np.isfinite(psi)):
            j = int(np.argmax(~np.isfinite(psi).all(axis=0)))
            raise EnvelopeError("gradient unbounded over the box", coordinate=j)
        return LipschitzEnvelope(safety * psi, labels, block_of)
    if method != "auto":
        raise ValueError(f"unknown envelope method {method!r}")

    if model.centering == "none":
        return LipschitzEnvelope(_closed_form_envelope(model, y, z), labels, block_of)
    if centering is None:
        raise ValueError("expectation centering needs a centering object")
    if model.kind == "quadratic":
        # centered quadratic loss is linear: -2 (y_i - E y_i) (theta - theta')' z_i
        psi = 2.0 * np.abs(y - centering.response_mean())[:, None] * np.abs(z)
        return LipschitzEnvelope(psi, labels, block_of)
    # |c_theta - c_theta'| <= E sup|grad| |dtheta|, estimated on a subsample of the stored draws
    ys = centering.responses()[:2000]
    psi = _closed_form_envelope(model, y, z) + _closed_form_envelope(model, ys, z).mean(axis=0)
    return LipschitzEnvelope(psi, labels, block_of)


@dataclass(frozen=True)
class Condition1Report:
    max_violation: float
    trials: int
    worst_pair: int
    worst_index: int

    tolerance: float = 1e-10

    @property
    def verified(self) -> bool:
        """No violation beyond rounding (tight envelopes hit equality up to a few ulps)."""
        return self.max_violation <= self.tolerance


def verify_condition1(model: LossModel, envelope: LipschitzEnvelope, sample: SampleSet, trials: int = 1000,
                      seed: int = 0, centering: ExpectationCentering | None = None) -> Condition1Report:
    """Largest ``|rho_c(theta) - rho_c(theta')| - sum_j |theta_j - theta'_j| psi_j`` over random pairs.

    Pairs are uniform in the parameter box; the first pair is ``theta = theta'``.
    """
    if envelope.psi.shape != (sample.n, model.dim):
        raise ValueError("envelope was not built for this model and sample")
    rng = np.random.default_rng(seed)
    a = model.sample_uniform(rng, trials)
    b = model.sample_uniform(rng, trials)
    b[0] = a[0]
    worst, wp, wi = -np.inf, 0, 0
    for start in range(0, trials, 512):
        sa, sb = a[start : start + 512], b[start : start + 512]
        diff = np.abs(centered_values(model, sa, sample, centering) - centered_values(model, sb, sample, centering))
        slack = diff - np.abs(sa - sb) @ envelope.psi.T
        k = int(np.argmax(slack))
        pi_, ii = divmod(k, sample.n)
        if slack.flat[k] > worst:
            worst, wp, wi = float(slack.flat[k]), start + pi_, ii
    return Condition1Report(worst, trials, wp, wi)


def mixture_comparison_blocks(model: LossModel, sample: SampleSet, theta_star) -> tuple[np.ndarray, np.ndarray]:
    """Signed ``psi_{j,k}`` dominating the mixture loss in its linear predictors.

    With ``pi`` and ``sigma`` held at ``theta_star``,
    ``|d rho / d eta_k| <= sup_box |y - eta_k| / sigma_k^2``, so
    ``|rho(beta) - rho(beta')| <= sum_k |sum_j (beta - beta')_{jk} psi_{j,k}|``.
    Returns the (n, p) matrix over beta coordinates and the block id per column.
    """
    if model.kind != "extended-glm-mixture":
        raise ValueError("comparison blocks are defined for the mixture kind")
    r = model.r
    theta_star = np.asarray(theta_star, dtype=float)
    sig = theta_star[r : 2 * r]
    bmax = np.maximum(np.abs(model.lower), np.abs(model.upper))
    z = sample.z
    psi = np.empty_like(z)
    block_ids = np.empty(model.p, dtype=int)
    for k, sl in enumerate(model.block_slices()):
        cols = slice(sl.start - 2 * r, sl.stop - 2 * r)
        R = np.abs(sample.y) + np.abs(z[:, cols]) @ bmax[sl]
        psi[:, cols] = (R / sig[k] ** 2)[:, None] * z[:, cols]
        block_ids[cols] = k
    return psi, block_ids


@dataclass(frozen=True, eq=False)
class MixtureRegression:
    """Fixed design; ``y_i = beta_k' z_{ik} + sigma_k e`` with ``k ~ pi``."""

    z: np.ndarray
    params: MixtureParams

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.shape[1] != sum(self.params.blocks):
            raise ValueError("design width does not match the coefficient blocks")
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    def _component_means(self) -> np.ndarray:
        cuts = np.cumsum((0,) + self.params.blocks)
        return np.stack([self.z[:, a:b] @ beta for a, b, beta in zip(cuts[:-1], cuts[1:], self.params.beta)])

    def draw_responses(self, rng: np.random.Generator, size: int) -> np.ndarray:
        means = self._component_means()
        k = rng.choice(self.params.r, size=(size, self.n), p=self.params.pi)
        cols = np.arange(self.n)
        return means[k, cols] + self.params.sigma[k] * rng.standard_normal((size, self.n))

    def draw(self, rng: np.random.Generator) -> SampleSet:
        return SampleSet(self.draw_responses(rng, 1)[0], self.z, generator=self)
