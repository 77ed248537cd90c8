"""Per-target extended Kalman filter over the agent's internal target
model: linear double integrator with noise W(q_b) and no repulsion term."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .geom import Pose2, wrap_angle
from .sensing import Measurement, h

_SYM_TOL = 1e-9


@dataclass(frozen=True)
class Belief:
    """Gaussian belief: 4-d mean (position, velocity) and covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))

    @property
    def logdet(self) -> float:
        sign, val = np.linalg.slogdet(self.cov)
        if sign <= 0:
            raise ValueError("belief covariance is not positive definite")
        return float(val)


@dataclass(frozen=True)
class BeliefParams:
    q_b: float
    v_diag: Tuple[float, float] = (0.2, 0.01)
    sigma0_pos: float = 30.0
    sigma0_vel: float = 3.0

    def initial_cov(self) -> np.ndarray:
        return np.diag([self.sigma0_pos, self.sigma0_pos, self.sigma0_vel, self.sigma0_vel])

    @property
    def V(self) -> np.ndarray:
        return np.diag(self.v_diag)


def predict(b: Belief, a: np.ndarray, w: np.ndarray) -> Belief:
    """Time update: mean' = A mean, cov' = A cov A^T + W."""
    return Belief(a @ b.mean, a @ b.cov @ a.T + w)


def obs_jacobian(x: Pose2, mean_pos) -> np.ndarray:
    """Jacobian of the range-bearing model with respect to the target
    state, evaluated at the given position."""
    r, alpha = h(x, mean_pos)
    mean_pos = np.asarray(mean_pos, dtype=float)
    return (
        np.array(
            [
                [mean_pos[0] - x.x1, mean_pos[1] - x.x2, 0.0, 0.0],
                [-math.sin(x.theta + alpha), math.cos(x.theta + alpha), 0.0, 0.0],
            ]
        )
        / r
    )


def kalman_correct(
    mean: np.ndarray, cov: np.ndarray, innovation: np.ndarray, hmat: np.ndarray, v: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Joseph-form measurement update; works for any state dimension.

    Raises ValueError when the corrected covariance is not positive
    definite after symmetrization (numerical failure).
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    hmat = np.atleast_2d(np.asarray(hmat, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    s = hmat @ cov @ hmat.T + v
    gain = cov @ hmat.T @ np.linalg.inv(s)
    new_mean = mean + gain @ np.atleast_1d(innovation)
    ikh = np.eye(cov.shape[0]) - gain @ hmat
    new_cov = ikh @ cov @ ikh.T + gain @ v @ gain.T
    new_cov = 0.5 * (new_cov + new_cov.T)
    try:
        np.linalg.cholesky(new_cov)
    except np.linalg.LinAlgError:
        raise ValueError("corrected covariance lost positive definiteness")
    return new_mean, new_cov


def update(b: Belief, z: Measurement, x: Pose2, v: np.ndarray) -> Belief:
    """EKF measurement update with the bearing innovation wrapped."""
    r_pred, alpha_pred = h(x, b.mean[:2])
    innovation = np.array([z.r - r_pred, wrap_angle(z.alpha - alpha_pred)])
    hmat = obs_jacobian(x, b.mean[:2])
    mean, cov = kalman_correct(b.mean, b.cov, innovation, hmat, v)
    return Belief(mean, cov)
