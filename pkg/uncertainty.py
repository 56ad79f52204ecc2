"""Uncertainty - unscented transform over the noise-augmented UAV state.

The augmented state stacks the 5 agent states and the 3 control-noise
channels (d = 8). Beliefs are propagated one step at a time through
`dynamics.transition`; `propagate_with_sensitivity` additionally carries
forward-mode derivatives of the mean and covariance with respect to any set
of directions in control space, which is what the transcription uses for
exact gradients of the chance-constrained residuals.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import erfinv

import dynamics
from dynamics import ControlInput, DisturbanceModel, STATE_DIM, CONTROL_DIM
from errors import CovarianceError

logger = logging.getLogger(__name__)

AUG_DIM = STATE_DIM + CONTROL_DIM
JITTER_START = 1e-12
JITTER_RETRIES = 7


@dataclass(frozen=True)
class UtConfig:
    alpha: float = 1.0
    rho: float = 2.5
    beta: float = 2.0
    d: int = AUG_DIM

    def __post_init__(self):
        if self.d + self.lam <= 0.0:
            raise ValueError(f"d + lambda must be positive (alpha={self.alpha}, rho={self.rho})")

    @property
    def lam(self) -> float:
        return self.alpha ** 2 * (self.d + self.rho) - self.d

    def weights(self) -> Tuple[np.ndarray, np.ndarray]:
        """Mean and covariance weights of the 2d+1 sigma points."""
        d, lam = self.d, self.lam
        wm = np.full(2 * d + 1, 1.0 / (2.0 * (d + lam)))
        wc = wm.copy()
        wm[0] = lam / (d + lam)
        wc[0] = lam / (d + lam) + (1.0 - self.alpha ** 2 + self.beta)
        return wm, wc


@dataclass(frozen=True, eq=False)
class SigmaSet:
    points: np.ndarray
    mean_weights: np.ndarray
    cov_weights: np.ndarray
    sqrt_factor: np.ndarray


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def position_mean(self) -> np.ndarray:
        return self.mean[:3]

    @property
    def position_covariance(self) -> np.ndarray:
        return self.covariance[:3, :3]


def augment(belief: GaussianBelief, dist: DisturbanceModel) -> Tuple[np.ndarray, np.ndarray]:
    """Stack state and noise: mean concatenation, block-diagonal covariance."""
    mean = np.concatenate([belief.mean, dist.mean])
    cov = np.zeros((AUG_DIM, AUG_DIM))
    cov[:STATE_DIM, :STATE_DIM] = belief.covariance
    cov[STATE_DIM:, STATE_DIM:] = dist.covariance
    return mean, cov


def cholesky_with_jitter(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; diagonal jitter 1e-12 .. 1e-6 on failure."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(cov.shape[0])
    for attempt in range(JITTER_RETRIES):
        try:
            factor = np.linalg.cholesky(cov + jitter * eye)
            logger.debug("cholesky succeeded with jitter %.1e (attempt %d)", jitter, attempt + 1)
            return factor
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise CovarianceError("covariance not PSD")


def sigma_points(mean: np.ndarray, cov: np.ndarray, cfg: UtConfig) -> SigmaSet:
    """2d+1 points: the mean, then mean +/- columns of sqrt(d+lambda) L."""
    factor = cholesky_with_jitter(np.asarray(cov, dtype=float))
    spread = np.sqrt(cfg.d + cfg.lam) * factor.T
    points = np.vstack([mean, mean + spread, mean - spread])
    wm, wc = cfg.weights()
    return SigmaSet(points, wm, wc, factor)


def _moments(values: np.ndarray, wm: np.ndarray, wc: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = wm @ values
    resid = values - mean
    cov = (resid.T * wc) @ resid
    return mean, 0.5 * (cov + cov.T)


def propagate(belief: GaussianBelief, dist: DisturbanceModel, u: ControlInput, dt: float,
              cfg: UtConfig, transition: Optional[Callable] = None) -> GaussianBelief:
    """One unscented step of the belief under control u.

    `transition(states, controls, dt)` defaults to the UAV model; tests pass
    affine surrogates to check exactness.
    """
    transition = transition or dynamics.transition
    mean, cov = augment(belief, dist)
    sigma = sigma_points(mean, cov, cfg)
    states = sigma.points[:, :STATE_DIM]
    controls = u.as_array() + sigma.points[:, STATE_DIM:]
    moved = transition(states, controls, dt)
    new_mean, new_cov = _moments(moved, sigma.mean_weights, sigma.cov_weights)
    return GaussianBelief(new_mean, new_cov)


def propagate_with_sensitivity(belief: GaussianBelief, dmean: np.ndarray, dcov: np.ndarray,
                               dist: DisturbanceModel, u: np.ndarray, du: np.ndarray, dt: float,
                               cfg: UtConfig) -> Tuple[GaussianBelief, np.ndarray, np.ndarray]:
    """`propagate` plus forward derivatives along K directions.

    dmean (K,5), dcov (K,5,5) and du (K,3) are the derivatives of the input
    mean, covariance and control along each direction; returns the
    propagated belief with its (K,5) and (K,5,5) derivatives.
    """
    mean, cov = augment(belief, dist)
    sigma = sigma_points(mean, cov, cfg)
    factor = sigma.sqrt_factor
    kappa = np.sqrt(cfg.d + cfg.lam)
    k = dmean.shape[0]

    # d L = L Phi(L^-1 dP L^-T), Phi = lower triangle with halved diagonal
    dcov_aug = np.zeros((k, AUG_DIM, AUG_DIM))
    dcov_aug[:, :STATE_DIM, :STATE_DIM] = dcov
    inv = solve_triangular(factor, np.eye(AUG_DIM), lower=True)
    inner = np.einsum('ij,kjl,ml->kim', inv, dcov_aug, inv)
    phi = np.tril(inner)
    idx = np.arange(AUG_DIM)
    phi[:, idx, idx] *= 0.5
    dfactor = np.einsum('ij,kjl->kil', factor, phi)

    dmean_aug = np.zeros((k, AUG_DIM))
    dmean_aug[:, :STATE_DIM] = dmean
    dspread = kappa * np.transpose(dfactor, (0, 2, 1))
    dpoints = np.concatenate([dmean_aug[:, None, :],
                              dmean_aug[:, None, :] + dspread,
                              dmean_aug[:, None, :] - dspread], axis=1)

    states = sigma.points[:, :STATE_DIM]
    controls = u + sigma.points[:, STATE_DIM:]
    moved = dynamics.transition(states, controls, dt)
    jx, ju = dynamics.transition_jacobians(states, controls, dt)
    dmoved = (np.einsum('iab,kib->kia', jx, dpoints[:, :, :STATE_DIM])
              + np.einsum('iab,kib->kia', ju, dpoints[:, :, STATE_DIM:] + du[:, None, :]))

    wm, wc = sigma.mean_weights, sigma.cov_weights
    new_mean, new_cov = _moments(moved, wm, wc)
    new_dmean = np.einsum('i,kia->ka', wm, dmoved)
    resid = moved - new_mean
    dresid = dmoved - new_dmean[:, None, :]
    half = np.einsum('i,kia,ib->kab', wc, dresid, resid)
    new_dcov = half + np.transpose(half, (0, 2, 1))
    return GaussianBelief(new_mean, new_cov), new_dmean, new_dcov


def margin_scale(delta: float) -> float:
    """erfinv(1 - 2 delta): the standard-normal quantile factor over sqrt(2)."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {delta}")
    return float(erfinv(1.0 - 2.0 * delta))


def chance_margin(a: np.ndarray, p_pos: np.ndarray, delta: float) -> float:
    """zeta = sqrt(2 a^T P a) * erfinv(1 - 2 delta)."""
    a = np.asarray(a, dtype=float)
    variance = max(float(a @ np.asarray(p_pos, dtype=float) @ a), 0.0)
    return float(np.sqrt(2.0 * variance)) * margin_scale(delta)
