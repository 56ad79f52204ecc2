"""Plan file - hashed, self-verifying record of a solved coverage plan.

Layout: `# key = value` header lines, then CSV rows tagged `step` (one per
control, carrying the belief it leads to) and `waypoint`, and finally the
`# content_hash` line, a SHA-256 over everything above it.
"""

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from errors import PlanFileError
from geometry import CameraConfig, FovState, enumerate_fov_states, point_in_polytope
from program import MissionSpec
from solver import PlanResult

TRIU = np.triu_indices(3)


def _floats(values) -> str:
    return ",".join(repr(float(v)) for v in np.asarray(values).reshape(-1))


def _ints(values) -> str:
    return ",".join(str(int(v)) for v in np.asarray(values).reshape(-1))


def _unpack_triu(values) -> np.ndarray:
    out = np.zeros((3, 3))
    out[TRIU] = values
    return out + np.triu(out, 1).T


@dataclass(eq=False)
class PlanRecord:
    mission_hash: str
    seed: int
    status: str
    objective: float
    max_violation: float
    dt: float
    delta_w: float
    delta_o: float
    camera: CameraConfig
    goal: np.ndarray
    terminal_distance: float
    controls: np.ndarray
    means: np.ndarray
    position_covs: np.ndarray
    fov_schedule: np.ndarray
    obstacle_faces: np.ndarray
    visit_steps: np.ndarray
    facet_indices: np.ndarray
    covered: np.ndarray
    visits_ok: np.ndarray
    facet_vertices: np.ndarray
    goal_reached: bool = False
    mission_leaves: Dict[str, str] = field(default_factory=dict)
    overrides: Dict[str, str] = field(default_factory=dict)
    content_hash: str = field(default="")

    def __post_init__(self):
        if not self.content_hash:
            self.content_hash = self._compute_hash()

    @classmethod
    def from_plan(cls, spec: MissionSpec, plan: PlanResult, mission_hash: str, seed: int,
                  mission_leaves: Optional[Dict[str, str]] = None,
                  overrides: Optional[Dict[str, str]] = None) -> 'PlanRecord':
        report = plan.report
        terminal = float(np.linalg.norm(plan.means[-1, :3] - np.asarray(spec.goal_centroid, dtype=float)))
        return cls(
            mission_hash=mission_hash,
            seed=int(seed),
            status=report.status if report else 'unknown',
            objective=float(report.objective) if report else float('nan'),
            max_violation=float(max(plan.violations.values(), default=0.0)),
            dt=float(spec.dt),
            delta_w=float(spec.delta_w),
            delta_o=float(spec.delta_o),
            camera=spec.camera_config,
            goal=np.asarray(spec.goal_centroid, dtype=float),
            terminal_distance=terminal,
            controls=np.asarray(plan.controls, dtype=float),
            means=np.asarray(plan.means, dtype=float),
            position_covs=np.asarray(plan.covariances, dtype=float)[:, :3, :3],
            fov_schedule=np.asarray(plan.fov_schedule, dtype=int),
            obstacle_faces=np.asarray(plan.obstacle_faces, dtype=int).reshape(len(plan.controls), -1),
            visit_steps=np.asarray(plan.visit_steps, dtype=int),
            facet_indices=np.array([wp.facet_index for wp in spec.waypoints], dtype=int),
            covered=np.asarray(plan.covered, dtype=bool),
            visits_ok=np.asarray(plan.visits_ok, dtype=bool),
            facet_vertices=np.array([f.vertices for f in spec.facets]).reshape(spec.N, 3, 3),
            goal_reached=point_in_polytope(plan.means[-1, :3], spec.goal_region),
            mission_leaves=dict(mission_leaves or {}),
            overrides=dict(overrides or {}),
        )

    @property
    def horizon(self) -> int:
        return len(self.controls)

    def fov_states(self) -> List[FovState]:
        return enumerate_fov_states(self.camera)

    def to_plan_result(self) -> PlanResult:
        covs = np.zeros((self.horizon + 1, 5, 5))
        covs[:, :3, :3] = self.position_covs
        return PlanResult(
            controls=self.controls.copy(),
            means=self.means.copy(),
            covariances=covs,
            fov_schedule=self.fov_schedule.copy(),
            visit_steps=self.visit_steps.copy(),
            covered=self.covered.copy(),
            visits_ok=self.visits_ok.copy(),
            obstacle_faces=self.obstacle_faces.copy(),
            violations={},
        )

    def _body_lines(self) -> List[str]:
        cam = self.camera
        lines = [
            f"# mission_hash = {self.mission_hash}",
            *(f"# leaf.{name} = {digest}" for name, digest in sorted(self.mission_leaves.items())),
            *(f"# override.{key} = {value}" for key, value in sorted(self.overrides.items())),
            f"# seed = {self.seed}",
            f"# status = {self.status}",
            f"# objective = {float(self.objective)!r}",
            f"# max_violation = {float(self.max_violation)!r}",
            f"# dt = {float(self.dt)!r}",
            f"# delta_w = {float(self.delta_w)!r}",
            f"# delta_o = {float(self.delta_o)!r}",
            f"# h_fov = {float(cam.h_fov)!r}",
            f"# phi_h = {float(cam.phi_h)!r}",
            f"# phi_v = {float(cam.phi_v)!r}",
            f"# psi_y = {_floats(cam.psi_y_set)}",
            f"# psi_z = {_floats(cam.psi_z_set)}",
            f"# goal = {_floats(self.goal)}",
            f"# terminal_distance = {float(self.terminal_distance)!r}",
            f"# goal_reached = {int(self.goal_reached)}",
            f"# initial_mean = {_floats(self.means[0])}",
            f"# initial_position_cov = {_floats(self.position_covs[0][TRIU])}",
        ]
        for t in range(self.horizon):
            row = [f"step,{t}", _floats(self.controls[t]), _floats(self.means[t + 1]),
                   _floats(self.position_covs[t + 1][TRIU]), str(int(self.fov_schedule[t]))]
            if self.obstacle_faces.shape[1]:
                row.append(_ints(self.obstacle_faces[t]))
            lines.append(",".join(row))
        for n in range(len(self.visit_steps)):
            lines.append(",".join([f"waypoint,{n}", str(int(self.visit_steps[n])), str(int(self.facet_indices[n])),
                                   str(int(self.covered[n])), str(int(self.visits_ok[n])),
                                   _floats(self.facet_vertices[n])]))
        return lines

    def _compute_hash(self) -> str:
        return hashlib.sha256("\n".join(self._body_lines()).encode('utf-8')).hexdigest()

    def verify_integrity(self) -> bool:
        """True iff the stored content hash matches the record."""
        return self.content_hash == self._compute_hash()

    def to_text(self) -> str:
        return "\n".join(self._body_lines() + [f"# content_hash = {self.content_hash}"]) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def parse(cls, text: str, source: str = "<plan>") -> 'PlanRecord':
        header: Dict[str, str] = {}
        steps, waypoints = [], []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith('#'):
                key, sep, value = line[1:].partition('=')
                if not sep:
                    raise PlanFileError(f"{source}:{lineno}: malformed header line")
                header[key.strip()] = value.strip()
                continue
            cells = line.split(',')
            if cells[0] == 'step':
                steps.append(cells[1:])
            elif cells[0] == 'waypoint':
                waypoints.append(cells[1:])
            else:
                raise PlanFileError(f"{source}:{lineno}: unknown row tag '{cells[0]}'")
        try:
            return cls._from_parts(header, steps, waypoints)
        except (KeyError, ValueError, IndexError) as e:
            raise PlanFileError(f"{source}: malformed plan file ({e})") from e

    @classmethod
    def _from_parts(cls, header: Dict[str, str], steps: List[List[str]], waypoints: List[List[str]]) -> 'PlanRecord':
        def floats(key):
            return np.array([float(v) for v in header[key].split(',') if v])

        T = len(steps)
        for i, row in enumerate(steps):
            if int(row[0]) != i:
                raise ValueError(f"step rows out of order at {i}")
        controls = np.array([[float(v) for v in row[1:4]] for row in steps]).reshape(T, 3)
        means = np.vstack([floats('initial_mean')] + [[float(v) for v in row[4:9]] for row in steps])
        covs = np.array([_unpack_triu(floats('initial_position_cov'))]
                        + [_unpack_triu([float(v) for v in row[9:15]]) for row in steps])
        fov = np.array([int(row[15]) for row in steps], dtype=int)
        faces = np.array([[int(v) for v in row[16:]] for row in steps], dtype=int).reshape(T, -1)
        camera = CameraConfig(float(header['h_fov']), float(header['phi_h']), float(header['phi_v']),
                              tuple(floats('psi_y')), tuple(floats('psi_z')))
        N = len(waypoints)
        return cls(
            mission_hash=header['mission_hash'],
            seed=int(header['seed']),
            status=header['status'],
            objective=float(header['objective']),
            max_violation=float(header['max_violation']),
            dt=float(header['dt']),
            delta_w=float(header['delta_w']),
            delta_o=float(header['delta_o']),
            camera=camera,
            goal=floats('goal'),
            terminal_distance=float(header['terminal_distance']),
            controls=controls,
            means=means,
            position_covs=covs,
            fov_schedule=fov,
            obstacle_faces=faces,
            visit_steps=np.array([int(w[1]) for w in waypoints], dtype=int),
            facet_indices=np.array([int(w[2]) for w in waypoints], dtype=int),
            covered=np.array([w[3] == '1' for w in waypoints], dtype=bool),
            visits_ok=np.array([w[4] == '1' for w in waypoints], dtype=bool),
            facet_vertices=np.array([[float(v) for v in w[5:14]] for w in waypoints]).reshape(N, 3, 3),
            goal_reached=header.get('goal_reached', '0') == '1',
            mission_leaves={k[len('leaf.'):]: v for k, v in header.items() if k.startswith('leaf.')},
            overrides={k[len('override.'):]: v for k, v in header.items() if k.startswith('override.')},
            content_hash=header['content_hash'],
        )

    @classmethod
    def load(cls, path, verify: bool = True) -> 'PlanRecord':
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise PlanFileError(f"cannot read plan file {path}: {e}") from e
        record = cls.parse(text, str(path))
        if verify and not record.verify_integrity():
            raise PlanFileError(f"plan file {path} failed its integrity check")
        return record


def first_non_psd_step(record: PlanRecord, tol: float = 1e-9) -> Optional[int]:
    """First step whose position covariance is not PSD, or None."""
    for t, cov in enumerate(record.position_covs):
        if np.min(np.linalg.eigvalsh(cov)) < -tol:
            return t
    return None
