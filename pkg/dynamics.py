"""Dynamics - stochastic discrete-time UAV motion model and its Jacobians.

State order is (x, y, z, theta, phi); control order is (v, w_theta, w_phi).
`transition` evaluates the raw model on arrays of any leading shape and is
what the unscented transform propagates; `step` and `rollout` additionally
wrap phi and saturate theta so single trajectories stay in the declared
angle domain.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

STATE_DIM = 5
CONTROL_DIM = 3


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    z: float
    theta: float
    phi: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.theta, self.phi])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'AgentState':
        return cls(*(float(v) for v in values))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class ControlInput:
    v: float
    w_theta: float
    w_phi: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.w_theta, self.w_phi])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'ControlInput':
        return cls(*(float(v) for v in values))

    def within(self, bounds: 'ControlBounds', tol: float = 1e-12) -> bool:
        return (abs(self.v) <= bounds.v_max + tol and abs(self.w_theta) <= bounds.omega_max + tol
                and abs(self.w_phi) <= bounds.omega_max + tol)


@dataclass(frozen=True)
class ControlBounds:
    v_max: float
    omega_max: float

    def lower(self) -> np.ndarray:
        return -self.upper()

    def upper(self) -> np.ndarray:
        return np.array([self.v_max, self.omega_max, self.omega_max])


@dataclass(frozen=True, eq=False)
class DisturbanceModel:
    """Additive Gaussian noise on the three control channels."""
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (3, 3) or np.any(cov != np.diag(np.diag(cov))) or np.any(np.diag(cov) < 0.0):
            raise ValueError("disturbance covariance must be a 3x3 non-negative diagonal")
        object.__setattr__(self, 'mean', np.asarray(self.mean, dtype=float).reshape(3))
        object.__setattr__(self, 'covariance', cov)

    @classmethod
    def diagonal(cls, variances: Sequence[float], mean: Sequence[float] = (0.0, 0.0, 0.0)) -> 'DisturbanceModel':
        return cls(np.asarray(mean, dtype=float), np.diag(np.asarray(variances, dtype=float)))


@dataclass(frozen=True, eq=False)
class InitialBelief:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(STATE_DIM)
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (STATE_DIM, STATE_DIM):
            raise ValueError(f"initial covariance must be 5x5, got {cov.shape}")
        if np.max(np.abs(cov - cov.T)) > 1e-12:
            raise ValueError("initial covariance is not symmetric")
        if np.min(np.linalg.eigvalsh(cov)) < -1e-12:
            raise ValueError("initial covariance is not positive semi-definite")
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'covariance', cov)


def transition(states: np.ndarray, controls: np.ndarray, dt: float) -> np.ndarray:
    """Raw one-step motion model; `controls` already include the noise."""
    s = np.asarray(states, dtype=float)
    u = np.asarray(controls, dtype=float)
    theta, phi = s[..., 3], s[..., 4]
    speed = dt * u[..., 0]
    out = s.copy()
    out[..., 0] += speed * np.cos(phi) * np.sin(theta)
    out[..., 1] += speed * np.sin(phi) * np.cos(theta)
    out[..., 2] += speed * np.sin(theta)
    out[..., 3] += dt * u[..., 1]
    out[..., 4] += dt * u[..., 2]
    return out


def transition_jacobians(states: np.ndarray, controls: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """d transition / d state (..., 5, 5) and d transition / d control (..., 5, 3)."""
    s = np.asarray(states, dtype=float)
    u = np.asarray(controls, dtype=float)
    theta, phi = s[..., 3], s[..., 4]
    st, ct, sp, cp = np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)
    speed = dt * u[..., 0]
    lead = s.shape[:-1]

    jx = np.broadcast_to(np.eye(STATE_DIM), lead + (STATE_DIM, STATE_DIM)).copy()
    jx[..., 0, 3] = speed * cp * ct
    jx[..., 0, 4] = -speed * sp * st
    jx[..., 1, 3] = -speed * sp * st
    jx[..., 1, 4] = speed * cp * ct
    jx[..., 2, 3] = speed * ct

    ju = np.zeros(lead + (STATE_DIM, CONTROL_DIM))
    ju[..., 0, 0] = dt * cp * st
    ju[..., 1, 0] = dt * sp * ct
    ju[..., 2, 0] = dt * st
    ju[..., 3, 1] = dt
    ju[..., 4, 2] = dt
    return jx, ju


def wrap_angles(states: np.ndarray) -> np.ndarray:
    """phi wrapped to (-pi, pi], theta saturated to [-pi/2, pi/2]."""
    out = np.array(states, dtype=float, copy=True)
    phi = out[..., 4]
    wrapped = np.pi - np.mod(np.pi - phi, 2.0 * np.pi)
    out[..., 4] = wrapped
    out[..., 3] = np.clip(out[..., 3], -np.pi / 2.0, np.pi / 2.0)
    return out


def step(state: AgentState, u: ControlInput, noise: Sequence[float], dt: float) -> AgentState:
    """One step of the motion model with u + noise, angles wrapped afterwards."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    nxt = transition(state.as_array(), u.as_array() + np.asarray(noise, dtype=float), dt)
    return AgentState.from_array(wrap_angles(nxt))


def rollout(x0: AgentState, controls: Sequence[ControlInput], noises: Sequence[Sequence[float]],
            dt: float) -> List[AgentState]:
    """Sequential application of `step`; returns T+1 states including x0."""
    if len(controls) != len(noises):
        raise ValueError(f"{len(controls)} controls but {len(noises)} noise vectors")
    states = [x0]
    for u, nu in zip(controls, noises):
        states.append(step(states[-1], u, nu, dt))
    return states


def rollout_batch(x0: np.ndarray, controls: np.ndarray, noises: np.ndarray, dt: float) -> np.ndarray:
    """Vectorized `rollout` for S trajectories: x0 (S,5), controls (T,3), noises (S,T,3)."""
    x0 = np.asarray(x0, dtype=float)
    controls = np.asarray(controls, dtype=float).reshape(-1, CONTROL_DIM)
    noises = np.asarray(noises, dtype=float)
    if noises.shape[1] != controls.shape[0]:
        raise ValueError(f"{controls.shape[0]} controls but {noises.shape[1]} noise steps")
    out = np.empty((x0.shape[0], controls.shape[0] + 1, STATE_DIM))
    out[:, 0] = x0
    for t in range(controls.shape[0]):
        out[:, t + 1] = wrap_angles(transition(out[:, t], controls[t] + noises[:, t], dt))
    return out
