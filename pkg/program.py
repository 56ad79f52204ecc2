"""Program - direct transcription of the unscented coverage problem.

The decision vector is laid out block by block as
[u | w1 | w2 | w3 | g1 | g2 | s_fov | o], time-major inside every block.
Beliefs are not decision variables: they are recomputed from the controls
by the unscented transform (single shooting), together with their forward
sensitivities so that every residual has an exact gradient.

All residuals are returned in canonical form, equalities h(x) = 0 and
inequalities g(x) <= 0, grouped by name; each group corresponds to one
constraint of the coverage problem and belongs to one family (guidance,
camera, obstacle, environment).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dynamics import ControlBounds, ControlInput, DisturbanceModel, InitialBelief, STATE_DIM, CONTROL_DIM
from errors import ProgramError
from geometry import (CUBE_FACES, FOV_FACES, CameraConfig, ConvexPolytope, Facet, FovState, Waypoint,
                      point_in_polytope)
from uncertainty import (GaussianBelief, UtConfig, chance_margin, margin_scale, propagate,
                         propagate_with_sensitivity)

logger = logging.getLogger(__name__)

BLOCKS = ('u', 'w1', 'w2', 'w3', 'g1', 'g2', 's_fov', 'o')
ROOT_FLOOR = 1e-12


# ============================================================================
# Mission and decision vector
# ============================================================================

@dataclass(frozen=True, eq=False)
class MissionSpec:
    horizon: int
    dt: float
    facets: Tuple[Facet, ...]
    waypoints: Tuple[Waypoint, ...]
    fov_states: Tuple[FovState, ...]
    obstacles: Tuple[ConvexPolytope, ...]
    goal_centroid: np.ndarray
    delta_w: float
    delta_o: float
    env_lower: np.ndarray
    env_upper: np.ndarray
    control_bounds: ControlBounds
    initial_belief: InitialBelief
    disturbance: DisturbanceModel
    ut_config: UtConfig
    camera_config: CameraConfig
    cover_vertices: bool = False
    goal_size: np.ndarray = field(default_factory=lambda: np.ones(3))

    @property
    def N(self) -> int:
        return len(self.waypoints)

    @property
    def M(self) -> int:
        return len(self.fov_states)

    @property
    def targets_per_facet(self) -> int:
        return 3 if self.cover_vertices else 1

    @property
    def goal_region(self) -> ConvexPolytope:
        """Goal cuboid of size `goal_size` centred on the goal centroid."""
        half = 0.5 * np.asarray(self.goal_size, dtype=float)
        goal = np.asarray(self.goal_centroid, dtype=float)
        return ConvexPolytope.box(goal - half, goal + half, name='goal')

    def validate(self) -> 'MissionSpec':
        if len(self.facets) != len(self.waypoints):
            raise ProgramError(f"{len(self.facets)} facets but {len(self.waypoints)} waypoints")
        for name, delta in (('delta_w', self.delta_w), ('delta_o', self.delta_o)):
            if not 0.0 < delta < 1.0:
                raise ProgramError(f"{name} must lie in (0, 1), got {delta}")
        if self.horizon < self.N:
            raise ProgramError(f"horizon T={self.horizon} shorter than N={self.N} waypoints")
        if self.dt <= 0.0:
            raise ProgramError(f"dt must be positive, got {self.dt}")
        if np.any(np.asarray(self.env_upper) <= np.asarray(self.env_lower)):
            raise ProgramError("environment box is empty")
        if np.any(np.asarray(self.goal_size, dtype=float) <= 0.0):
            raise ProgramError(f"goal_size must be positive, got {np.asarray(self.goal_size).tolist()}")
        return self


@dataclass(eq=False)
class DecisionVector:
    u: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    s_fov: np.ndarray
    o: np.ndarray

    def blocks(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in BLOCKS}

    def controls(self) -> List[ControlInput]:
        return [ControlInput.from_array(row) for row in self.u]


class VariableLayout:
    """Block shapes and offsets of the flat decision vector."""

    def __init__(self, T: int, N: int, M: int, P: int, obstacle_faces: int):
        self.shapes = {
            'u': (T, CONTROL_DIM),
            'w1': (T, N, CUBE_FACES),
            'w2': (T, N),
            'w3': (T, N),
            'g1': (T, N, P, M, FOV_FACES),
            'g2': (T, N, P, M),
            's_fov': (T, M),
            'o': (T, obstacle_faces),
        }
        self.slices = {}
        offset = 0
        for name in BLOCKS:
            size = int(np.prod(self.shapes[name]))
            self.slices[name] = slice(offset, offset + size)
            offset += size
        self.size = offset

    def split(self, x: np.ndarray) -> Dict[str, np.ndarray]:
        return {name: x[self.slices[name]].reshape(self.shapes[name]) for name in BLOCKS}

    def unpack(self, x: np.ndarray) -> DecisionVector:
        return DecisionVector(**{k: v.copy() for k, v in self.split(np.asarray(x, dtype=float)).items()})

    def pack(self, dec: DecisionVector) -> np.ndarray:
        x = np.empty(self.size)
        for name in BLOCKS:
            block = np.asarray(getattr(dec, name), dtype=float)
            if block.shape != self.shapes[name]:
                raise ProgramError(f"block {name} has shape {block.shape}, expected {self.shapes[name]}")
            x[self.slices[name]] = block.reshape(-1)
        return x


def layout_for(spec: MissionSpec) -> VariableLayout:
    faces = sum(poly.face_count for poly in spec.obstacles)
    return VariableLayout(spec.horizon, spec.N, spec.M, spec.targets_per_facet, faces)


def variable_bounds(spec: MissionSpec, layout: VariableLayout) -> Tuple[np.ndarray, np.ndarray]:
    """Operational bounds: controls in U, selectors in [0,1], couplings in [-L,0]."""
    lower = np.zeros(layout.size)
    upper = np.ones(layout.size)
    u = layout.slices['u']
    lower[u] = np.tile(spec.control_bounds.lower(), spec.horizon)
    upper[u] = np.tile(spec.control_bounds.upper(), spec.horizon)
    lower[layout.slices['w2']] = -CUBE_FACES
    upper[layout.slices['w2']] = 0.0
    lower[layout.slices['g2']] = -FOV_FACES
    upper[layout.slices['g2']] = 0.0
    return lower, upper


# ============================================================================
# Beliefs
# ============================================================================

@dataclass(frozen=True, eq=False)
class BeliefTrajectory:
    """Means (T+1,5), covariances (T+1,5,5) and optional control sensitivities."""
    means: np.ndarray
    covs: np.ndarray
    dmeans: Optional[np.ndarray] = None
    dcovs: Optional[np.ndarray] = None

    def beliefs(self) -> List[GaussianBelief]:
        return [GaussianBelief(m, P) for m, P in zip(self.means, self.covs)]


def belief_trajectory(spec: MissionSpec, controls: Sequence[ControlInput]) -> List[GaussianBelief]:
    """belief[0] is the initial belief, belief[t+1] the UT step under controls[t]."""
    if len(controls) != spec.horizon:
        raise ProgramError(f"expected {spec.horizon} controls, got {len(controls)}")
    beliefs = [GaussianBelief(spec.initial_belief.mean.copy(), spec.initial_belief.covariance.copy())]
    for u in controls:
        beliefs.append(propagate(beliefs[-1], spec.disturbance, u, spec.dt, spec.ut_config))
    return beliefs


def belief_sensitivities(spec: MissionSpec, controls: np.ndarray) -> BeliefTrajectory:
    """Belief trajectory plus d(mean, cov)/d(flat controls) at every step."""
    T = spec.horizon
    K = CONTROL_DIM * T
    controls = np.asarray(controls, dtype=float).reshape(T, CONTROL_DIM)
    means = np.zeros((T + 1, STATE_DIM))
    covs = np.zeros((T + 1, STATE_DIM, STATE_DIM))
    dmeans = np.zeros((T + 1, K, STATE_DIM))
    dcovs = np.zeros((T + 1, K, STATE_DIM, STATE_DIM))
    belief = GaussianBelief(spec.initial_belief.mean.copy(), spec.initial_belief.covariance.copy())
    means[0], covs[0] = belief.mean, belief.covariance
    for t in range(T):
        active = CONTROL_DIM * (t + 1)
        du = np.zeros((active, CONTROL_DIM))
        du[CONTROL_DIM * t:active] = np.eye(CONTROL_DIM)
        belief, dm, dP = propagate_with_sensitivity(belief, dmeans[t, :active], dcovs[t, :active],
                                                    spec.disturbance, controls[t], du, spec.dt,
                                                    spec.ut_config)
        means[t + 1], covs[t + 1] = belief.mean, belief.covariance
        dmeans[t + 1, :active], dcovs[t + 1, :active] = dm, dP
    return BeliefTrajectory(means, covs, dmeans, dcovs)


# ============================================================================
# Residual groups
# ============================================================================

@dataclass(frozen=True)
class ResidualGroup:
    name: str
    family: str
    kind: str
    shape: Tuple[int, ...]
    touches: Tuple[str, ...]
    complementarity: bool = False

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True, eq=False)
class Residual:
    """One named residual group evaluated at a point."""
    name: str
    family: str
    kind: str
    values: np.ndarray


class _Constants:
    """Mission geometry flattened into arrays once per transcription."""

    def __init__(self, spec: MissionSpec):
        self.face_normals = np.array([wp.cube.normals for wp in spec.waypoints]).reshape(spec.N, CUBE_FACES, 3)
        self.face_offsets = np.array([wp.cube.offsets for wp in spec.waypoints]).reshape(spec.N, CUBE_FACES)
        P = spec.targets_per_facet
        self.targets = np.array([f.targets(spec.cover_vertices) for f in spec.facets]).reshape(spec.N, P, 3)
        self.fov_normals = np.array([s.normals for s in spec.fov_states]).reshape(spec.M, FOV_FACES, 3)
        self.fov_offsets = np.array([s.offsets for s in spec.fov_states]).reshape(spec.M, FOV_FACES)
        # body-frame FOV test of each target, before translating by the mean
        self.target_terms = (np.einsum('mla,nka->nkml', self.fov_normals, self.targets)
                             - self.fov_offsets[None, None])
        if spec.obstacles:
            self.obs_normals = np.vstack([p.normals for p in spec.obstacles])
            self.obs_offsets = np.concatenate([p.offsets for p in spec.obstacles])
        else:
            self.obs_normals = np.zeros((0, 3))
            self.obs_offsets = np.zeros(0)
        owner = np.concatenate([[i] * p.face_count for i, p in enumerate(spec.obstacles)]).astype(int) \
            if spec.obstacles else np.zeros(0, dtype=int)
        self.obs_owner = np.zeros((len(owner), len(spec.obstacles)))
        self.obs_owner[np.arange(len(owner)), owner] = 1.0
        self.scale_w = margin_scale(spec.delta_w)
        self.scale_o = margin_scale(spec.delta_o)
        self.goal = np.asarray(spec.goal_centroid, dtype=float)
        self.env_lower = np.asarray(spec.env_lower, dtype=float)
        self.env_upper = np.asarray(spec.env_upper, dtype=float)


def residual_groups(spec: MissionSpec) -> Tuple[List[ResidualGroup], List[ResidualGroup]]:
    T, N, M, P = spec.horizon, spec.N, spec.M, spec.targets_per_facet
    J = sum(p.face_count for p in spec.obstacles)
    X = len(spec.obstacles)
    equalities = [
        ResidualGroup('w2_coupling', 'guidance', 'eq', (T, N), ('w1', 'w2')),
        ResidualGroup('w3_sum', 'guidance', 'eq', (N,), ('w3',)),
        ResidualGroup('fov_sum', 'camera', 'eq', (T,), ('s_fov',)),
        ResidualGroup('fov_one_hot', 'camera', 'eq', (T,), ('s_fov',)),
        ResidualGroup('obstacle_face_sum', 'obstacle', 'eq', (T, X), ('o',)),
    ]
    inequalities = [
        ResidualGroup('waypoint_face', 'guidance', 'ineq', (T, N, CUBE_FACES), ('u', 'w1')),
        ResidualGroup('waypoint_complementarity', 'guidance', 'ineq', (T, N), ('w2', 'w3'), True),
        ResidualGroup('camera_face', 'camera', 'ineq', (T, N, P, M, FOV_FACES), ('u', 'g1')),
        ResidualGroup('camera_coupling', 'camera', 'ineq', (T, N, P, M), ('g1', 'g2')),
        ResidualGroup('camera_complementarity', 'camera', 'ineq', (T, N, P, M), ('g2', 'w3', 's_fov'), True),
        ResidualGroup('obstacle_face', 'obstacle', 'ineq', (T, J), ('u', 'o')),
        ResidualGroup('env_lower', 'environment', 'ineq', (T, 3), ('u',)),
        ResidualGroup('env_upper', 'environment', 'ineq', (T, 3), ('u',)),
        ResidualGroup('theta_lower', 'environment', 'ineq', (T,), ('u',)),
        ResidualGroup('theta_upper', 'environment', 'ineq', (T,), ('u',)),
    ]
    return equalities, inequalities


def _quadratic_forms(normals: np.ndarray, pcov: np.ndarray) -> np.ndarray:
    """a^T P_t a for every normal and step: normals (...,3), pcov (T,3,3) -> (T,...)."""
    return np.einsum('...a,tab,...b->t...', normals, pcov, normals)


def _guidance(c: _Constants, pm, pcov, blk) -> Dict[str, np.ndarray]:
    root = np.sqrt(np.maximum(2.0 * _quadratic_forms(c.face_normals, pcov), 0.0))
    slack = np.einsum('nla,ta->tnl', c.face_normals, pm) - c.face_offsets + c.scale_w * root
    w1, w2, w3 = blk['w1'], blk['w2'], blk['w3']
    return {
        'waypoint_face': w1 * slack,
        'w2_coupling': w2 - (w1.sum(axis=-1) - CUBE_FACES),
        'waypoint_complementarity': -w3 * w2,
        'w3_sum': w3.sum(axis=0) - 1.0,
        '_root': root,
        '_slack': slack,
    }


def _camera(c: _Constants, pm, blk) -> Dict[str, np.ndarray]:
    shift = np.einsum('mla,ta->tml', c.fov_normals, pm)
    excess = c.target_terms[None] - shift[:, None, None]
    g1, g2, w3, s = blk['g1'], blk['g2'], blk['w3'], blk['s_fov']
    return {
        'camera_face': g1 * excess,
        'camera_coupling': g2 - g1.sum(axis=-1) + FOV_FACES,
        'camera_complementarity': -g2 * w3[:, :, None, None] * s[:, None, None, :],
        'fov_sum': s.sum(axis=1) - 1.0,
        'fov_one_hot': (s ** 2).sum(axis=1) - 1.0,
        '_excess': excess,
    }


def _obstacles(c: _Constants, pm, pcov, blk) -> Dict[str, np.ndarray]:
    root = np.sqrt(np.maximum(2.0 * _quadratic_forms(c.obs_normals, pcov), 0.0))
    gap = c.scale_o * root - (pm @ c.obs_normals.T - c.obs_offsets)
    o = blk['o']
    return {
        'obstacle_face': o * gap,
        'obstacle_face_sum': o @ c.obs_owner - 1.0,
        '_root': root,
        '_gap': gap,
    }


def _environment(c: _Constants, means) -> Dict[str, np.ndarray]:
    pm, theta = means[1:, :3], means[1:, 3]
    return {
        'env_lower': c.env_lower - pm,
        'env_upper': pm - c.env_upper,
        'theta_lower': -np.pi / 2.0 - theta,
        'theta_upper': theta - np.pi / 2.0,
    }


def _beliefs_as_arrays(beliefs: Sequence[GaussianBelief]) -> Tuple[np.ndarray, np.ndarray]:
    return np.array([b.mean for b in beliefs]), np.array([b.covariance for b in beliefs])


def _named(groups: Sequence[ResidualGroup], values: Dict[str, np.ndarray], wanted: Sequence[str]) -> List[Residual]:
    by_name = {g.name: g for g in groups}
    return [Residual(name, by_name[name].family, by_name[name].kind, values[name].reshape(-1)) for name in wanted]


def guidance_residuals(spec: MissionSpec, beliefs: Sequence[GaussianBelief], dec: DecisionVector) -> List[Residual]:
    """Waypoint faces, w2 coupling, visit complementarity and the visit sum."""
    means, covs = _beliefs_as_arrays(beliefs)
    values = _guidance(_Constants(spec), means[1:, :3], covs[1:, :3, :3], dec.blocks())
    eq, ineq = residual_groups(spec)
    return _named(eq + ineq, values, ['waypoint_face', 'w2_coupling', 'waypoint_complementarity', 'w3_sum'])


def camera_residuals(spec: MissionSpec, beliefs: Sequence[GaussianBelief], dec: DecisionVector) -> List[Residual]:
    """FOV faces, g coupling, coverage complementarity, selector sum and one-hot."""
    means, _ = _beliefs_as_arrays(beliefs)
    values = _camera(_Constants(spec), means[1:, :3], dec.blocks())
    eq, ineq = residual_groups(spec)
    return _named(eq + ineq, values,
                  ['camera_face', 'camera_coupling', 'camera_complementarity', 'fov_sum', 'fov_one_hot'])


def obstacle_residuals(spec: MissionSpec, beliefs: Sequence[GaussianBelief], dec: DecisionVector) -> List[Residual]:
    """Obstacle face separation and one active face per obstacle."""
    means, covs = _beliefs_as_arrays(beliefs)
    values = _obstacles(_Constants(spec), means[1:, :3], covs[1:, :3, :3], dec.blocks())
    eq, ineq = residual_groups(spec)
    return _named(eq + ineq, values, ['obstacle_face', 'obstacle_face_sum'])


def objective(spec: MissionSpec, beliefs: Sequence[GaussianBelief], controls: Sequence[ControlInput]) -> float:
    """Control energy plus squared terminal distance to the goal centroid."""
    energy = sum(float(np.sum(u.as_array() ** 2)) for u in controls)
    terminal = beliefs[-1].mean[:3] - np.asarray(spec.goal_centroid, dtype=float)
    return energy + float(terminal @ terminal)


# ============================================================================
# Transcribed program
# ============================================================================

class Evaluation:
    """Objective and residuals at one point, with reverse-mode gradients."""

    def __init__(self, program: 'TranscribedProgram', x: np.ndarray):
        self.program = program
        self.x = np.asarray(x, dtype=float)
        c = program.constants
        self.blk = program.layout.split(self.x)
        self.traj = belief_sensitivities(program.spec, self.blk['u'])
        means, covs = self.traj.means, self.traj.covs
        pm, pcov = means[1:, :3], covs[1:, :3, :3]
        self.values: Dict[str, np.ndarray] = {}
        self.values.update(_guidance(c, pm, pcov, self.blk))
        self.values.update(_camera(c, pm, self.blk))
        self.values.update(_obstacles(c, pm, pcov, self.blk))
        self.values.update(_environment(c, means))
        self.terminal = means[-1, :3] - c.goal
        self.objective = float(np.sum(self.blk['u'] ** 2) + self.terminal @ self.terminal)
        self.eq = np.concatenate([self.values[g.name].reshape(-1) for g in program.eq_groups])
        self.ineq = np.concatenate([self.values[g.name].reshape(-1) for g in program.ineq_groups])

    def _weights(self, groups, flat) -> Dict[str, np.ndarray]:
        out, offset = {}, 0
        for g in groups:
            if flat is None:
                out[g.name] = np.zeros(g.shape)
            else:
                out[g.name] = np.asarray(flat[offset:offset + g.size]).reshape(g.shape)
            offset += g.size
        return out

    def gradient(self, objective_weight: float = 1.0, eq_weights: Optional[np.ndarray] = None,
                 ineq_weights: Optional[np.ndarray] = None) -> np.ndarray:
        """Gradient of w_f f + y_eq^T h + y_ineq^T g with respect to x."""
        prog, c, blk, v = self.program, self.program.constants, self.blk, self.values
        y = self._weights(prog.eq_groups, eq_weights)
        y.update(self._weights(prog.ineq_groups, ineq_weights))
        T = prog.spec.horizon
        g = {name: np.zeros(shape) for name, shape in prog.layout.shapes.items()}
        g_mean = np.zeros((T + 1, STATE_DIM))
        g_pm = g_mean[1:, :3]
        g_pcov = np.zeros((T, 3, 3))

        # objective
        g['u'] += 2.0 * objective_weight * blk['u']
        g_mean[T, :3] += 2.0 * objective_weight * self.terminal

        # guidance
        yf = y['waypoint_face']
        g['w1'] += yf * v['_slack']
        coef = yf * blk['w1']
        g_pm += np.einsum('tnl,nla->ta', coef, c.face_normals)
        dz = c.scale_w * coef / np.maximum(v['_root'], ROOT_FLOOR) * (v['_root'] > 0.0)
        g_pcov += np.einsum('tnl,nla,nlb->tab', dz, c.face_normals, c.face_normals)
        g['w2'] += y['w2_coupling']
        g['w1'] -= y['w2_coupling'][..., None]
        ycomp = y['waypoint_complementarity']
        g['w3'] -= ycomp * blk['w2']
        g['w2'] -= ycomp * blk['w3']
        g['w3'] += y['w3_sum'][None, :]

        # camera
        yc = y['camera_face']
        g['g1'] += yc * v['_excess']
        g_pm -= np.einsum('tnkml,mla->ta', yc * blk['g1'], c.fov_normals)
        g['g2'] += y['camera_coupling']
        g['g1'] -= y['camera_coupling'][..., None]
        ycc = y['camera_complementarity']
        w3, s, g2 = blk['w3'], blk['s_fov'], blk['g2']
        g['g2'] -= ycc * w3[:, :, None, None] * s[:, None, None, :]
        g['w3'] -= np.einsum('tnkm,tnkm,tm->tn', ycc, g2, s)
        g['s_fov'] -= np.einsum('tnkm,tnkm,tn->tm', ycc, g2, w3)
        g['s_fov'] += y['fov_sum'][:, None]
        g['s_fov'] += 2.0 * y['fov_one_hot'][:, None] * s

        # obstacles
        yo = y['obstacle_face']
        g['o'] += yo * v['_gap']
        coef = yo * blk['o']
        g_pm -= coef @ c.obs_normals
        dz = c.scale_o * coef / np.maximum(v['_root'], ROOT_FLOOR) * (v['_root'] > 0.0) \
            if coef.size else coef
        g_pcov += np.einsum('tj,ja,jb->tab', dz, c.obs_normals, c.obs_normals)
        g['o'] += y['obstacle_face_sum'] @ c.obs_owner.T

        # environment and theta range
        g_pm += y['env_upper'] - y['env_lower']
        g_mean[1:, 3] += y['theta_upper'] - y['theta_lower']

        g_cov = np.zeros((T + 1, STATE_DIM, STATE_DIM))
        g_cov[1:, :3, :3] = g_pcov
        chain = (np.einsum('tka,ta->k', self.traj.dmeans, g_mean)
                 + np.einsum('tkab,tab->k', self.traj.dcovs, g_cov))
        g['u'] += chain.reshape(T, CONTROL_DIM)
        return np.concatenate([g[name].reshape(-1) for name in BLOCKS])


class TranscribedProgram:
    """The assembled nonlinear program; immutable after construction."""

    def __init__(self, spec: MissionSpec):
        self.spec = spec
        self.layout = layout_for(spec)
        self.lower, self.upper = variable_bounds(spec, self.layout)
        self.eq_groups, self.ineq_groups = residual_groups(spec)
        self.constants = _Constants(spec)
        self.n_eq = sum(g.size for g in self.eq_groups)
        self.n_ineq = sum(g.size for g in self.ineq_groups)
        self.complementarity_mask = np.concatenate(
            [np.full(g.size, g.complementarity) for g in self.ineq_groups])

    @property
    def variable_count(self) -> int:
        return self.layout.size

    def evaluate(self, x: np.ndarray) -> Evaluation:
        return Evaluation(self, x)

    def objective(self, x: np.ndarray) -> float:
        return self.evaluate(x).objective

    def objective_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate(x).gradient()

    def residuals(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ev = self.evaluate(x)
        return ev.eq, ev.ineq

    def constraint_vjp(self, x: np.ndarray, eq_weights: np.ndarray, ineq_weights: np.ndarray) -> np.ndarray:
        return self.evaluate(x).gradient(0.0, eq_weights, ineq_weights)

    def row_names(self, kind: str) -> List[str]:
        groups = self.eq_groups if kind == 'eq' else self.ineq_groups
        return [g.name for g in groups for _ in range(g.size)]

    def group_violations(self, x: np.ndarray) -> Dict[str, float]:
        ev = self.evaluate(x)
        out = {g.name: float(np.max(np.abs(ev.values[g.name]), initial=0.0)) for g in self.eq_groups}
        out.update({g.name: float(np.max(ev.values[g.name], initial=0.0)) for g in self.ineq_groups})
        return {k: max(v, 0.0) for k, v in out.items()}

    def max_violation(self, x: np.ndarray) -> float:
        return max(self.group_violations(x).values(), default=0.0)

    def unpack(self, x: np.ndarray) -> DecisionVector:
        return self.layout.unpack(x)

    def pack(self, dec: DecisionVector) -> np.ndarray:
        return self.layout.pack(dec)

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)


def transcribe(spec: MissionSpec) -> TranscribedProgram:
    """Assemble the nonlinear program for a validated mission."""
    if spec.horizon < 1 or spec.N < 1:
        raise ProgramError(f"need T >= N >= 1, got T={spec.horizon}, N={spec.N}")
    if spec.M < 1:
        raise ProgramError("no FOV states")
    spec.validate()
    program = TranscribedProgram(spec)
    logger.info("transcribed program: %d variables, %d equalities, %d inequalities",
                program.variable_count, program.n_eq, program.n_ineq)
    return program


# ============================================================================
# Independent checks
# ============================================================================

def audit_violations(spec: MissionSpec, dec: DecisionVector) -> Dict[str, float]:
    """Per-group maximum violation recomputed with plain loops.

    Shares no code with `Evaluation`: beliefs come from `belief_trajectory`,
    margins from `chance_margin`, and every row is evaluated one at a time.
    """
    beliefs = belief_trajectory(spec, dec.controls())
    T, N, M = spec.horizon, spec.N, spec.M
    worst: Dict[str, float] = {}

    def record(name, value):
        worst[name] = max(worst.get(name, 0.0), float(value))

    for t in range(T):
        b = beliefs[t + 1]
        pos, pcov = b.mean[:3], b.covariance[:3, :3]
        for n, wp in enumerate(spec.waypoints):
            for l in range(CUBE_FACES):
                a, off = wp.cube.normals[l], wp.cube.offsets[l]
                zeta = chance_margin(a, pcov, spec.delta_w)
                record('waypoint_face', dec.w1[t, n, l] * (a @ pos - off + zeta))
            record('w2_coupling', abs(dec.w2[t, n] - (dec.w1[t, n].sum() - CUBE_FACES)))
            record('waypoint_complementarity', -dec.w3[t, n] * dec.w2[t, n])
            for k, target in enumerate(spec.facets[n].targets(spec.cover_vertices)):
                for m, state in enumerate(spec.fov_states):
                    fov = state.polytope(pos)
                    for l in range(FOV_FACES):
                        record('camera_face', dec.g1[t, n, k, m, l] * (fov.normals[l] @ target - fov.offsets[l]))
                    record('camera_coupling', dec.g2[t, n, k, m] - dec.g1[t, n, k, m].sum() + FOV_FACES)
                    record('camera_complementarity', -dec.g2[t, n, k, m] * dec.w3[t, n] * dec.s_fov[t, m])
        record('fov_sum', abs(dec.s_fov[t].sum() - 1.0))
        record('fov_one_hot', abs(np.sum(dec.s_fov[t] ** 2) - 1.0))
        j = 0
        for poly in spec.obstacles:
            total = 0.0
            for a, off in zip(poly.normals, poly.offsets):
                zeta = chance_margin(a, pcov, spec.delta_o)
                record('obstacle_face', dec.o[t, j] * (zeta - (a @ pos - off)))
                total += dec.o[t, j]
                j += 1
            record('obstacle_face_sum', abs(total - 1.0))
        for axis in range(3):
            record('env_lower', spec.env_lower[axis] - pos[axis])
            record('env_upper', pos[axis] - spec.env_upper[axis])
        record('theta_lower', -np.pi / 2.0 - b.mean[3])
        record('theta_upper', b.mean[3] - np.pi / 2.0)
    for n in range(N):
        record('w3_sum', abs(dec.w3[:, n].sum() - 1.0))
    for u in dec.controls():
        if not u.within(spec.control_bounds):
            record('control_bounds', np.max(np.abs(u.as_array()) - spec.control_bounds.upper()))
    return worst


def visit_steps(dec: DecisionVector) -> np.ndarray:
    """Belief index t*(n) = 1 + argmax_t w3[t, n]; ties go to the earlier step."""
    return 1 + np.argmax(dec.w3, axis=0)


def fov_schedule(dec: DecisionVector) -> np.ndarray:
    """FOV index m*(t) for beliefs 1..T; ties go to the smaller index."""
    return np.argmax(dec.s_fov, axis=1)


def certificate(spec: MissionSpec, beliefs: Sequence[GaussianBelief], dec: DecisionVector,
                tol: float = 1e-4) -> Tuple[np.ndarray, np.ndarray]:
    """Logical coverage check: (mean inside shrunk cube, facet inside FOV) per waypoint."""
    visits = visit_steps(dec)
    schedule = fov_schedule(dec)
    inside = np.zeros(spec.N, dtype=bool)
    covered = np.zeros(spec.N, dtype=bool)
    for n, wp in enumerate(spec.waypoints):
        b = beliefs[visits[n]]
        margins = [chance_margin(a, b.position_covariance, spec.delta_w) for a in wp.cube.normals]
        inside[n] = point_in_polytope(b.position_mean, wp.cube.shrunk(margins), tol)
        fov = spec.fov_states[schedule[visits[n] - 1]].polytope(b.position_mean)
        covered[n] = all(point_in_polytope(p, fov, tol) for p in spec.facets[n].targets(spec.cover_vertices))
    return inside, covered


def obstacle_face_schedule(spec: MissionSpec, dec: DecisionVector) -> np.ndarray:
    """Selected face per obstacle for beliefs 1..T, (T, obstacles); faces count from 0 within each obstacle."""
    out = np.zeros((spec.horizon, len(spec.obstacles)), dtype=int)
    column = 0
    for i, poly in enumerate(spec.obstacles):
        out[:, i] = np.argmax(dec.o[:, column:column + poly.face_count], axis=1)
        column += poly.face_count
    return out
