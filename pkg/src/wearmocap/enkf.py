"""Stochastic ensemble Kalman filter with perturbed observations.

States are flat real vectors. Some 4-wide blocks of the state (and of the
observation) can be flagged as unit quaternions: they receive axis-angle
process noise, are hemisphere-aligned before any averaging or differencing,
and are renormalised after every linear update.

The pocket-mode state is ``[q_la, q_ua, q_hi]`` (12 components) and its
observation ``[watch orientation, phone orientation, height delta]`` (9).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import geom

ProcessModel = Callable[[np.ndarray], np.ndarray]
ObservationModel = Callable[[np.ndarray], np.ndarray]

POCKET_STATE_QUATS = (0, 4, 8)
POCKET_OBS_QUATS = (0, 4)
REGULARIZATION = 1e-9


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class Ensemble:
    """``members`` is ``(N, n)``.

    ``quat_std`` holds one angular std (rad) per quaternion block,
    ``vec_std`` an additive std per state component (ignored inside
    quaternion blocks).
    """

    members: np.ndarray
    quat_blocks: tuple[int, ...] = POCKET_STATE_QUATS
    quat_std: np.ndarray = field(default_factory=lambda: np.full(3, 0.03))
    vec_std: Optional[np.ndarray] = None

    def __post_init__(self):
        m = np.asarray(self.members, dtype=float)
        if m.ndim != 2 or m.shape[0] < 2:
            raise ParameterError(f"ensemble needs shape (N>=2, n), got {m.shape}")
        if len(self.quat_std) != len(self.quat_blocks):
            raise ParameterError("one quaternion std per quaternion block")
        if np.any(np.asarray(self.quat_std) < 0) or (self.vec_std is not None and np.any(np.asarray(self.vec_std) < 0)):
            raise ParameterError("noise stds must be non-negative")
        object.__setattr__(self, "members", m)
        object.__setattr__(self, "quat_std", np.asarray(self.quat_std, dtype=float))
        if self.vec_std is not None:
            object.__setattr__(self, "vec_std", np.broadcast_to(np.asarray(self.vec_std, dtype=float), (m.shape[1],)))

    @property
    def size(self) -> int:
        return self.members.shape[0]

    @property
    def dim(self) -> int:
        return self.members.shape[1]

    def with_members(self, members: np.ndarray) -> "Ensemble":
        return replace(self, members=members)


def _euclidean_mask(dim: int, quat_blocks: Sequence[int]) -> np.ndarray:
    mask = np.ones(dim, dtype=bool)
    for s in quat_blocks:
        mask[s:s + 4] = False
    return mask


def renormalize(x: np.ndarray, quat_blocks: Sequence[int], reference: Optional[np.ndarray] = None) -> np.ndarray:
    out = np.array(x, dtype=float, copy=True)
    for s in quat_blocks:
        q = out[..., s:s + 4]
        n = np.linalg.norm(q, axis=-1, keepdims=True)
        q = q / np.where(n > 0, n, 1.0)
        q = np.where(n > 0, q, geom.IDENTITY)
        if reference is not None:
            q = geom.hemisphere_align(q, reference[..., s:s + 4])
        out[..., s:s + 4] = q
    return out


def align_blocks(x: np.ndarray, quat_blocks: Sequence[int], reference: np.ndarray) -> np.ndarray:
    out = np.array(x, dtype=float, copy=True)
    for s in quat_blocks:
        out[..., s:s + 4] = geom.hemisphere_align(out[..., s:s + 4], reference[..., s:s + 4])
    return out


def _aligned(members: np.ndarray, quat_blocks: Sequence[int]) -> np.ndarray:
    """Align every quaternion block to the first member, then to the resulting mean direction."""
    if not quat_blocks:
        return members
    x = align_blocks(members, quat_blocks, members[0])
    ref = x.mean(axis=0)
    return align_blocks(x, quat_blocks, ref)


def random_rotations(rng: np.random.Generator, std, count: int) -> np.ndarray:
    axis = rng.normal(size=(count, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    angle = rng.normal(0.0, 1.0, size=count) * std
    return geom.from_axis_angle(axis, angle)


def identity_model(x: np.ndarray) -> np.ndarray:
    return x


def predict(ens: Ensemble, process_model: ProcessModel = identity_model,
            rng: Optional[np.random.Generator] = None) -> Ensemble:
    """Advance every member and add process noise.

    Each quaternion block is multiplied by a random axis-angle rotation whose
    angle is ``Normal(0, std)``; Euclidean components get additive noise.
    """
    rng = rng if rng is not None else np.random.default_rng()
    x = np.asarray(process_model(ens.members.copy()), dtype=float)
    if x.shape != ens.members.shape:
        raise ParameterError(f"process model changed the ensemble shape to {x.shape}")
    n = ens.size
    for s, std in zip(ens.quat_blocks, ens.quat_std):
        if std > 0:
            x[:, s:s + 4] = geom.quat_mul(random_rotations(rng, std, n), x[:, s:s + 4])
    if ens.vec_std is not None:
        mask = _euclidean_mask(ens.dim, ens.quat_blocks)
        std = np.where(mask, ens.vec_std, 0.0)
        if np.any(std > 0):
            x = x + rng.normal(size=x.shape) * std
    return ens.with_members(renormalize(x, ens.quat_blocks, reference=ens.members))


def update(ens: Ensemble, obs: np.ndarray, obs_model: ObservationModel, obs_std,
           rng: Optional[np.random.Generator] = None, obs_quat_blocks: Sequence[int] = POCKET_OBS_QUATS,
           perturb: bool = True) -> Ensemble:
    """Perturbed-observation analysis step.

    ``K = Pxy (Pyy + R)^-1`` from ensemble covariances, then each member moves
    by ``K (obs + eps_i - h(x_i))`` with ``eps_i ~ Normal(0, R)``.
    """
    rng = rng if rng is not None else np.random.default_rng()
    obs = np.asarray(obs, dtype=float)
    r_std = np.broadcast_to(np.asarray(obs_std, dtype=float), obs.shape)
    prior = ens.members
    x = _aligned(prior, ens.quat_blocks)
    y = np.asarray(obs_model(x), dtype=float)
    if y.shape != (ens.size, obs.shape[0]):
        raise ParameterError(f"observation model returned {y.shape}, expected {(ens.size, obs.shape[0])}")
    # predicted quaternion observations live on the observed hemisphere
    y = align_blocks(y, obs_quat_blocks, obs)
    n = ens.size
    a = x - x.mean(axis=0)
    b = y - y.mean(axis=0)
    pxy = a.T @ b / (n - 1)
    s = b.T @ b / (n - 1) + np.diag(r_std ** 2)
    try:
        gain = np.linalg.solve(s.T, pxy.T).T
    except np.linalg.LinAlgError:
        gain = np.linalg.solve((s + REGULARIZATION * np.eye(len(s))).T, pxy.T).T
    innov = obs - y
    if perturb:
        innov = innov + rng.normal(size=y.shape) * r_std
    post = x + innov @ gain.T
    return ens.with_members(renormalize(post, ens.quat_blocks, reference=x))


def mean_state(ens: Ensemble) -> np.ndarray:
    x = _aligned(ens.members, ens.quat_blocks)
    return renormalize(x.mean(axis=0), ens.quat_blocks)


def covariance_diag(ens: Ensemble) -> np.ndarray:
    return _aligned(ens.members, ens.quat_blocks).var(axis=0, ddof=1)


def inflate(ens: Ensemble, factor: float) -> Ensemble:
    if factor < 1.0:
        raise ParameterError(f"inflation factor {factor} < 1")
    x = _aligned(ens.members, ens.quat_blocks)
    mean = x.mean(axis=0)
    return ens.with_members(renormalize(mean + factor * (x - mean), ens.quat_blocks, reference=x))


def angular_spread(ens: Ensemble) -> np.ndarray:
    """RMS geodesic distance of members from the mean, one value per quaternion block."""
    m = mean_state(ens)
    out = []
    for s in ens.quat_blocks:
        d = geom.quat_geodesic_angle(ens.members[:, s:s + 4], m[s:s + 4])
        out.append(float(np.sqrt(np.mean(np.square(d)))))
    return np.asarray(out)


def initial_ensemble(state: np.ndarray, size: int = 128, quat_std=0.03, rng: Optional[np.random.Generator] = None,
                     quat_blocks: tuple[int, ...] = POCKET_STATE_QUATS, vec_std=None) -> Ensemble:
    """``size`` copies of ``state`` scattered once by the process noise."""
    state = np.asarray(state, dtype=float)
    std = np.broadcast_to(np.asarray(quat_std, dtype=float), (len(quat_blocks),)).copy()
    ens = Ensemble(np.tile(state, (size, 1)), quat_blocks, std, vec_std)
    return predict(ens, identity_model, rng)
