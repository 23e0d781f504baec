"""Fixed-seed benchmark scenarios shared by the acceptance suite and the CLI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import enkf
from .oracles import LinearGaussianSystem, kalman_oracle, particle_oracle, gaussian_log_likelihood


@dataclass
class FilterComparison:
    enkf_mean: np.ndarray
    enkf_var: np.ndarray
    kf_mean: np.ndarray
    kf_var: np.ndarray

    @property
    def max_mean_rel_error(self) -> float:
        return float(np.max(np.abs(self.enkf_mean - self.kf_mean) / np.abs(self.kf_mean)))

    @property
    def max_var_rel_error(self) -> float:
        return float(np.max(np.abs(self.enkf_var - self.kf_var) / self.kf_var))


# the scalar system: random walk around 10 observed directly
SCALAR_SYSTEM = LinearGaussianSystem.scalar(a=1.0, q=0.05, h=1.0, r=0.5, m0=10.0, p0=1.0)


def enkf_vs_kalman(system: LinearGaussianSystem = SCALAR_SYSTEM, members: int = 10_000, steps: int = 100,
                   seed: int = 0) -> FilterComparison:
    rng = np.random.default_rng(seed)
    _, ys = system.simulate(steps, rng)
    kf_m, kf_p = kalman_oracle(system, ys)
    a = system.A
    init = rng.multivariate_normal(system.m0, system.P0, size=members)
    ens = enkf.Ensemble(init, quat_blocks=(), quat_std=np.zeros(0), vec_std=np.sqrt(np.diag(system.Q)))
    r_std = np.sqrt(np.diag(system.R))
    means, variances = [], []
    for y in ys:
        ens = enkf.predict(ens, lambda x: x @ a.T, rng)
        ens = enkf.update(ens, y, lambda x: x @ system.H.T, r_std, rng, obs_quat_blocks=())
        means.append(ens.members.mean(axis=0))
        variances.append(ens.members.var(axis=0, ddof=1))
    return FilterComparison(np.array(means)[:, 0], np.array(variances)[:, 0], kf_m[:, 0], kf_p[:, 0, 0])


def particle_vs_kalman(system: LinearGaussianSystem = SCALAR_SYSTEM, particles: int = 100_000, steps: int = 100,
                       seed: int = 0):
    rng = np.random.default_rng(seed)
    _, ys = system.simulate(steps, rng)
    kf_m, _ = kalman_oracle(system, ys)
    q_std = np.sqrt(np.diag(system.Q))
    r_std = np.sqrt(np.diag(system.R))
    init = rng.multivariate_normal(system.m0, system.P0, size=particles)
    est = particle_oracle(
        ys, init,
        propagate=lambda p, g: p @ system.A.T + g.normal(size=p.shape) * q_std,
        log_likelihood=lambda p, y: gaussian_log_likelihood(p @ system.H.T, y, r_std),
        rng=rng,
    )
    return est[:, 0], kf_m[:, 0]
