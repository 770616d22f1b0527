"""Observations and the simulated designs that generate them.

A :class:`SampleSet` holds a fixed sample ``(y_i, z_i)``, ``i = 1..n``.
Generators produce fresh samples for replication studies; the fixed-design
generators keep ``z`` and redraw only the responses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class SampleSet:
    y: np.ndarray
    z: np.ndarray
    generator: object | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if y.ndim != 1 or z.ndim != 2 or z.shape[0] != y.shape[0]:
            raise ValueError(f"incompatible shapes y{y.shape} z{z.shape}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    def observation(self, i: int) -> tuple[float, np.ndarray]:
        return float(self.y[i]), self.z[i]


def gaussian_design(n: int, p: int, rng: np.random.Generator, normalize: bool = True) -> np.ndarray:
    """Standard Gaussian design; columns rescaled to ``||z_j||_n = 1`` if asked."""
    z = rng.standard_normal((n, p))
    if normalize:
        z /= np.sqrt(np.mean(z**2, axis=0))
    return z


def column_norms(a: np.ndarray) -> np.ndarray:
    """``||a_j||_n`` for every column."""
    a = np.asarray(a, dtype=float)
    return np.sqrt(np.mean(a**2, axis=0))


@dataclass(frozen=True, eq=False)
class GaussianRegression:
    """Fixed design ``y = z theta0 + sigma e`` with standard Gaussian ``e``.

    With quadratic loss and expectation centering the centered loss is
    exactly linear in ``theta``:
    ``rho_c(theta) - rho_c(theta') = -2 e_i sigma (theta - theta')' z_i``.
    """

    z: np.ndarray
    theta0: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
        object.__setattr__(self, "theta0", np.asarray(self.theta0, dtype=float))
        if self.z.shape[1] != self.theta0.shape[0]:
            raise ValueError("theta0 length does not match design width")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    def mean(self) -> np.ndarray:
        return self.z @ self.theta0

    def draw(self, rng: np.random.Generator) -> SampleSet:
        y = self.mean() + self.sigma * rng.standard_normal(self.n)
        return SampleSet(y, self.z, generator=self)

    def draw_responses(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.mean()[None, :] + self.sigma * rng.standard_normal((size, self.n))

    def response_draws_at(self, i: int, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.mean()[i] + self.sigma * rng.standard_normal(size)

    def centered_increments(self, sample: SampleSet) -> np.ndarray:
        """Signed ``psi_j(X_i, i)`` of the centered quadratic loss, shape (n, p)."""
        noise = sample.y - self.mean()
        return -2.0 * noise[:, None] * self.z

    def population_radius(self, radius: float) -> float:
        """``sup ||rho_c(theta) - rho_c(theta*)||`` over an l1 ball (population norm)."""
        return 2.0 * self.sigma * radius * float(column_norms(self.z).max(initial=0.0))
