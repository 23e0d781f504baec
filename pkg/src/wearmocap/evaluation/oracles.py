"""Reference filters: the exact Kalman recursion and a bootstrap particle filter."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class LinearGaussianSystem:
    """``x' = A x + w``, ``y = H x + v`` with ``w ~ N(0, Q)``, ``v ~ N(0, R)``.

    Scalars are promoted to 1x1 matrices. ``R`` may be ``inf`` for an
    uninformative sensor.
    """

    A: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    m0: np.ndarray
    P0: np.ndarray

    @classmethod
    def scalar(cls, a=1.0, q=0.1, h=1.0, r=1.0, m0=0.0, p0=1.0) -> "LinearGaussianSystem":
        m = lambda v: np.atleast_2d(np.asarray(v, dtype=float))  # noqa: E731
        return cls(m(a), m(q), m(h), m(r), np.atleast_1d(np.asarray(m0, dtype=float)), m(p0))

    def validate(self) -> None:
        for name in ("Q", "P0"):
            mat = getattr(self, name)
            if not np.allclose(mat, mat.T) or np.min(np.linalg.eigvalsh(mat)) < 0:
                raise OracleError(f"{name} is not positive semi-definite")
        r = self.R
        if np.any(np.isnan(r)) or not np.allclose(np.nan_to_num(r, posinf=0), np.nan_to_num(r.T, posinf=0)):
            raise OracleError("R is not symmetric")
        finite = np.where(np.isfinite(r), r, 0.0)
        if np.any(np.diag(r) <= 0) or np.min(np.linalg.eigvalsh(finite)) < -1e-12:
            raise OracleError("R is not positive definite")

    def simulate(self, steps: int, rng: np.random.Generator):
        x = rng.multivariate_normal(self.m0, self.P0)
        xs, ys = [], []
        finite_r = np.where(np.isfinite(self.R), self.R, 0.0)
        for _ in range(steps):
            x = self.A @ x + rng.multivariate_normal(np.zeros(len(x)), self.Q)
            xs.append(x)
            ys.append(self.H @ x + rng.multivariate_normal(np.zeros(self.H.shape[0]), finite_r))
        return np.array(xs), np.array(ys)


def kalman_oracle(system: LinearGaussianSystem, observations) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means ``(K, n)`` and covariances ``(K, n, n)`` after each observation.

    Each step predicts then updates, matching the EnKF's predict/update cycle.
    """
    system.validate()
    m = system.m0.astype(float)
    p = system.P0.astype(float)
    means, covs = [], []
    for y in np.atleast_2d(np.asarray(observations, dtype=float).reshape(len(observations), -1)):
        m = system.A @ m
        p = system.A @ p @ system.A.T + system.Q
        if np.all(np.isinf(np.diag(system.R))):
            gain = np.zeros((len(m), len(y)))
        else:
            s = system.H @ p @ system.H.T + system.R
            gain = np.linalg.solve(s.T, (p @ system.H.T).T).T
        m = m + gain @ (y - system.H @ m)
        p = (np.eye(len(m)) - gain @ system.H) @ p
        means.append(m.copy())
        covs.append(p.copy())
    return np.array(means), np.array(covs)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions)


def particle_oracle(observations, initial: np.ndarray, propagate: Callable[[np.ndarray, np.random.Generator], np.ndarray],
                    log_likelihood: Callable[[np.ndarray, np.ndarray], np.ndarray],
                    estimate: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
                    rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Bootstrap particle filter with systematic resampling at every step.

    ``initial`` is ``(N, n)``. ``propagate`` samples the transition,
    ``log_likelihood(particles, y)`` scores each particle and ``estimate``
    reduces weighted particles to a state estimate (weighted mean by default).
    Returns one estimate per observation.
    """
    rng = rng if rng is not None else np.random.default_rng()
    particles = np.array(initial, dtype=float)
    estimate = estimate or (lambda p, w: w @ p)
    out = []
    for y in observations:
        particles = propagate(particles, rng)
        logw = log_likelihood(particles, np.asarray(y, dtype=float))
        logw = logw - np.max(logw)
        w = np.exp(logw)
        w /= w.sum()
        out.append(estimate(particles, w))
        particles = particles[systematic_resample(w, rng)]
    return np.array(out)


def gaussian_log_likelihood(predicted: np.ndarray, y: np.ndarray, std) -> np.ndarray:
    std = np.broadcast_to(np.asarray(std, dtype=float), y.shape)
    return -0.5 * np.sum(((predicted - y) / std) ** 2, axis=-1)
